// SPDX-License-Identifier: Apache-2.0
#include "oft/skew.hpp"

#include <atomic>
#include <cmath>
#include <string>

namespace oft {

namespace fault {
namespace {
std::atomic<bool> g_sign_flip{false};
}
void set_skew_sign_flip(bool enabled) { g_sign_flip.store(enabled); }
bool skew_sign_flip() { return g_sign_flip.load(std::memory_order_relaxed); }
}  // namespace fault

CompactSkew::CompactSkew(std::size_t side, std::vector<double> values) : side_(side), values_(std::move(values)) {
    if (values_.size() != length_for(side))
        throw ShapeError("CompactSkew: side " + std::to_string(side) + " needs " +
                         std::to_string(length_for(side)) + " values, got " + std::to_string(values_.size()));
}

CompactSkew CompactSkew::zeros(std::size_t side) { return CompactSkew(side, std::vector<double>(length_for(side))); }

CompactSkew pack(const Matrix& q, double tolerance) {
    if (q.rows() != q.cols()) throw ShapeError("pack: matrix is not square");
    const std::size_t n = q.rows();
    double worst = 0.0;
    std::size_t wi = 0, wj = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v = std::abs(q(i, j) + q(j, i));
            if (v > worst || std::isnan(v)) {
                worst = v;
                wi = i;
                wj = j;
            }
        }
    if (!(worst <= tolerance)) throw SymmetryError(wi, wj, worst);

    std::vector<double> u;
    u.reserve(CompactSkew::length_for(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) u.push_back(q(i, j));
    return CompactSkew(n, std::move(u));
}

void unpack_into(const CompactSkew& s, double* dst, std::size_t ld) {
    const std::size_t n = s.side();
    const double lower_sign = fault::skew_sign_flip() ? 1.0 : -1.0;
    const double* u = s.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        dst[i * ld + i] = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = *u++;
            dst[i * ld + j] = v;
            dst[j * ld + i] = lower_sign * v;
        }
    }
}

Matrix unpack(const CompactSkew& s) {
    Matrix q(s.side(), s.side());
    unpack_into(s, q.data(), q.cols());
    return q;
}

Matrix apply_blocks(std::span<const CompactSkew> blocks, const Matrix& x) {
    std::size_t total = 0;
    for (const auto& b : blocks) total += b.side();
    if (total != x.rows())
        throw ShapeError("apply_blocks: block sides sum to " + std::to_string(total) + " but input has " +
                         std::to_string(x.rows()) + " rows");

    const std::size_t m = x.cols();
    const double lower_sign = fault::skew_sign_flip() ? 1.0 : -1.0;
    Matrix y(x.rows(), m);
    std::size_t offset = 0;
    for (const auto& block : blocks) {
        const std::size_t n = block.side();
        record_flops(4ull * block.size() * m);
        const double* u = block.values().data();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double v = *u++;
                const double* xi = x.data() + (offset + i) * m;
                const double* xj = x.data() + (offset + j) * m;
                double* yi = y.data() + (offset + i) * m;
                double* yj = y.data() + (offset + j) * m;
                for (std::size_t c = 0; c < m; ++c) {
                    yi[c] += v * xj[c];
                    yj[c] += lower_sign * v * xi[c];
                }
            }
        }
        offset += n;
    }
    return y;
}

}  // namespace oft

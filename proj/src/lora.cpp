// SPDX-License-Identifier: Apache-2.0
#include "oft/lora.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace oft {

namespace {

void check_lora_shapes(std::size_t d, std::size_t n, const LowRankAdapter& l, const Matrix& x, const char* op) {
    if (l.a.rows() != d || l.b.cols() != n || l.a.cols() != l.b.rows())
        throw ShapeError(std::string(op) + ": adapter " + std::to_string(l.a.rows()) + "x" +
                         std::to_string(l.a.cols()) + " / " + std::to_string(l.b.rows()) + "x" +
                         std::to_string(l.b.cols()) + " does not fit a " + std::to_string(d) + "x" +
                         std::to_string(n) + " weight");
    if (x.rows() != d)
        throw ShapeError(std::string(op) + ": input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(d));
}

double rms_diff(const Matrix& a, const Matrix& b) {
    if (a.size() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = a.data()[i] - b.data()[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(a.size()));
}

double requant_rms(const Matrix& w, std::size_t blocksize) { return rms_diff(dequantize(quantize(w, blocksize)), w); }

}  // namespace

LowRankAdapter LowRankAdapter::init(std::size_t d, std::size_t n, std::size_t rank, Rng& rng, double alpha) {
    if (rank == 0) throw ConfigError("LoRA rank must be >= 1");
    if (d == 0 || n == 0) throw ConfigError("LoRA dimensions must be >= 1");
    LowRankAdapter l;
    l.a = rng.gaussian(d, rank, 1.0 / std::sqrt(static_cast<double>(d)));
    l.b = Matrix(rank, n);
    l.scaling = (alpha > 0.0 ? alpha : static_cast<double>(rank)) / static_cast<double>(rank);
    return l;
}

Matrix lora_forward(const WeightSource& w, const LowRankAdapter& l, const Matrix& x, const StagingOptions& opts) {
    check_lora_shapes(w.rows(), w.cols(), l, x, "lora_forward");
    Matrix z = frozen_product_tn(w, x, opts);
    const Matrix t = matmul_tn(l.a, x);
    const Matrix delta = matmul_tn(l.b, t);
    for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] += l.scaling * delta.data()[i];
    return z;
}

Matrix lora_forward(const Matrix& w, const LowRankAdapter& l, const Matrix& x) {
    return lora_forward(DenseWeight(w), l, x);
}

Matrix lora_forward(const QuantizedMatrix& w, const LowRankAdapter& l, const Matrix& x) {
    return lora_forward(Nf4Weight(w), l, x);
}

double LoraGradients::norm() const {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    for (double v : b.values()) s += v * v;
    return std::sqrt(s);
}

LoraGradients lora_backward(const WeightSource& w, const LowRankAdapter& l, const Matrix& x, const Matrix& g_z) {
    check_lora_shapes(w.rows(), w.cols(), l, x, "lora_backward");
    if (g_z.rows() != w.cols() || g_z.cols() != x.cols())
        throw ShapeError("lora_backward: g_z is " + std::to_string(g_z.rows()) + "x" + std::to_string(g_z.cols()) +
                         ", expected " + std::to_string(w.cols()) + "x" + std::to_string(x.cols()));
    // t = A^T x;  z = W^T x + s B^T t.
    const Matrix t = matmul_tn(l.a, x);
    LoraGradients g;
    g.b = l.scaling * matmul_nt(t, g_z);
    const Matrix g_t = l.scaling * matmul(l.b, g_z);
    g.a = matmul_nt(x, g_t);
    g.input = frozen_product(w, g_z) + matmul(l.a, g_t);
    return g;
}

LoraGradients lora_backward(const Matrix& w, const LowRankAdapter& l, const Matrix& x, const Matrix& g_z) {
    return lora_backward(DenseWeight(w), l, x, g_z);
}

Matrix lora_merge(const Matrix& w, const LowRankAdapter& l) {
    check_lora_shapes(w.rows(), w.cols(), l, Matrix(w.rows(), 0), "lora_merge");
    return w + l.scaling * matmul(l.a, l.b);
}

MergeGapReport merge_gap_report(const Matrix& w, const BlockOrthogonalAdapter& oft, const LowRankAdapter& lora,
                                std::size_t blocksize) {
    if (oft.dim() != w.rows()) throw ShapeError("merge_gap_report: orthogonal adapter does not match weight rows");
    MergeGapReport r;
    const BlockRotations rot = build_rotations(oft);
    const Matrix oft_merged = merge(rot, w);
    const Matrix lora_merged = lora_merge(w, lora);

    r.lora_max_abs_delta = max_abs(lora_merged - w);
    r.oft_max_abs_delta = max_abs(oft_merged - w);
    for (std::size_t j = 0; j < w.cols(); ++j)
        r.oft_col_norm_drift = std::max(r.oft_col_norm_drift, std::abs(column_norm(oft_merged, j) - column_norm(w, j)));
    double orth_sq = 0.0;
    for (const Matrix& block : rot.rotation) {
        const double e = orthogonality_error(block);
        orth_sq += e * e;
    }
    r.oft_orthogonality_error = std::sqrt(orth_sq);

    r.base_requant_rms = requant_rms(w, blocksize);
    r.lora_requant_rms = requant_rms(lora_merged, blocksize);
    r.oft_requant_rms = requant_rms(oft_merged, blocksize);
    r.base_absmax = max_abs(w);
    r.lora_merged_absmax = max_abs(lora_merged);
    r.oft_merged_absmax = max_abs(oft_merged);
    return r;
}

namespace {
struct Field {
    const char* key;
    double MergeGapReport::*member;
};

constexpr Field kFields[] = {
    {"lora_max_abs_delta", &MergeGapReport::lora_max_abs_delta},
    {"oft_col_norm_drift", &MergeGapReport::oft_col_norm_drift},
    {"oft_max_abs_delta", &MergeGapReport::oft_max_abs_delta},
    {"oft_orthogonality_error", &MergeGapReport::oft_orthogonality_error},
    {"base_requant_rms", &MergeGapReport::base_requant_rms},
    {"lora_requant_rms", &MergeGapReport::lora_requant_rms},
    {"oft_requant_rms", &MergeGapReport::oft_requant_rms},
    {"base_absmax", &MergeGapReport::base_absmax},
    {"lora_merged_absmax", &MergeGapReport::lora_merged_absmax},
    {"oft_merged_absmax", &MergeGapReport::oft_merged_absmax},
};
}  // namespace

std::string MergeGapReport::to_kv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const Field& f : kFields) os << f.key << '=' << this->*f.member << '\n';
    return os.str();
}

std::string MergeGapReport::csv_header() {
    std::string h;
    for (const Field& f : kFields) {
        if (!h.empty()) h += ',';
        h += f.key;
    }
    return h;
}

std::string MergeGapReport::to_csv_row() const {
    std::ostringstream os;
    os << std::setprecision(17);
    bool first = true;
    for (const Field& f : kFields) {
        if (!first) os << ',';
        os << this->*f.member;
        first = false;
    }
    return os.str();
}

}  // namespace oft

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Test-only oracles and generators. Nothing here calls into the code paths
// it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "oft/numkit.hpp"

namespace oft::test {

// Entry-by-entry triple loop.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
            c(i, j) = s;
        }
    return c;
}

inline Matrix naive_transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline double rel_frobenius(const Matrix& a, const Matrix& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = a.data()[i] - ref.data()[i];
        num += e * e;
        den += ref.data()[i] * ref.data()[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline Matrix random_skew(std::size_t n, Rng& rng, double stddev = 1.0) {
    Matrix q(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = stddev * rng.normal();
            q(i, j) = v;
            q(j, i) = -v;
        }
    return q;
}

// Block-diagonal embedding of equally sized square blocks.
inline Matrix block_diag(const std::vector<Matrix>& blocks) {
    std::size_t d = 0;
    for (const auto& b : blocks) d += b.rows();
    Matrix out(d, d);
    std::size_t off = 0;
    for (const auto& b : blocks) {
        for (std::size_t i = 0; i < b.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) out(off + i, off + j) = b(i, j);
        off += b.rows();
    }
    return out;
}

// Determinant by partially pivoted elimination (independent of oft::solve).
inline double determinant(Matrix a) {
    const std::size_t n = a.rows();
    double det = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t i = c + 1; i < n; ++i)
            if (std::abs(a(i, c)) > std::abs(a(p, c))) p = i;
        if (a(p, c) == 0.0) return 0.0;
        if (p != c) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(p, j), a(c, j));
            det = -det;
        }
        det *= a(c, c);
        for (std::size_t i = c + 1; i < n; ++i) {
            const double f = a(i, c) / a(c, c);
            for (std::size_t j = c; j < n; ++j) a(i, j) -= f * a(c, j);
        }
    }
    return det;
}

// Central differences of a scalar function of `params`, one coordinate at a
// time; params are restored afterwards.
inline std::vector<double> central_differences(std::span<double> params, const std::function<double()>& loss,
                                               double step = 1e-5) {
    std::vector<double> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = loss();
        params[i] = saved - step;
        const double down = loss();
        params[i] = saved;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

// Per-coordinate relative error |a - f| / max(|a|, |f|, floor).
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-4) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double den = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / den);
    }
    return worst;
}

// Spectral norm by plain power iteration on a^T a from a fixed all-ones start
// perturbed by index, run for `iters` steps. Lower bound that converges to
// the true value.
inline double power_norm(const Matrix& a, int iters = 500) {
    std::vector<double> v(a.cols()), av(a.rows());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
    double best = 0.0;
    for (int it = 0; it < iters; ++it) {
        double nv = 0.0;
        for (double e : v) nv += e * e;
        nv = std::sqrt(nv);
        if (nv == 0.0) return best;
        for (double& e : v) e /= nv;
        double na = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * v[j];
            av[i] = s;
            na += s * s;
        }
        best = std::max(best, std::sqrt(na));
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j) * av[i];
            v[j] = s;
        }
    }
    return best;
}

inline double half_sq_norm(const Matrix& z) {
    double s = 0.0;
    for (double v : z.values()) s += v * v;
    return 0.5 * s;
}

}  // namespace oft::test

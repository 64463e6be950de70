// SPDX-License-Identifier: Apache-2.0
#include "oft/cayley.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace oft {

namespace {

constexpr std::size_t kGuardIterations = 64;

void require_square(const Matrix& m, const char* op) {
    if (m.rows() != m.cols())
        throw ShapeError(std::string(op) + ": expected a square matrix, got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
}

void add_identity(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += 1.0;
}

}  // namespace

void NeumannConfig::validate() const {
    if (terms < 1) throw ConfigError("NeumannConfig: terms must be >= 1, got " + std::to_string(terms));
    if (norm_guard && !(*norm_guard > 0.0 && *norm_guard <= 1.0))
        throw ConfigError("NeumannConfig: norm_guard must lie in (0, 1], got " + std::to_string(*norm_guard));
}

Matrix cayley_exact(const Matrix& q) {
    require_square(q, "cayley_exact");
    const std::size_t n = q.rows();
    Matrix plus = q;
    add_identity(plus);
    Matrix minus = Matrix::identity(n) - q;
    // (I + Q) and (I - Q)^{-1} commute, so R = (I - Q)^{-1} (I + Q).
    try {
        return solve(minus, plus);
    } catch (const SingularMatrixError& e) {
        throw SingularMatrixError(std::string("cayley_exact: I - Q is singular: ") + e.what());
    }
}

NeumannFactors cayley_neumann_factors(const Matrix& q, const NeumannConfig& cfg) {
    require_square(q, "cayley_neumann");
    cfg.validate();
    if (cfg.norm_guard) {
        const double est = spectral_norm_est(q, kGuardIterations);
        if (est > *cfg.norm_guard) throw DivergenceRiskError(est, *cfg.norm_guard);
    }

    // P = I + Q(I + Q(... (I + Q))), k - 1 products.
    Matrix series = q;
    add_identity(series);
    for (int i = 1; i < cfg.terms; ++i) {
        series = matmul(q, series);
        add_identity(series);
    }
    // R = (I + Q) P = P + Q P, one more product.
    Matrix rotation = matmul(q, series) + series;
    return {std::move(series), std::move(rotation)};
}

Matrix cayley_neumann(const Matrix& q, const NeumannConfig& cfg) {
    return cayley_neumann_factors(q, cfg).rotation;
}

double orthogonality_error(const Matrix& r) {
    require_square(r, "orthogonality_error");
    Matrix gram = matmul_tn(r, r);
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
    return frobenius_norm(gram);
}

double neumann_tail_bound(double norm, int terms) {
    if (norm >= 1.0) return std::numeric_limits<double>::infinity();
    return 2.0 * std::pow(norm, terms + 1) / (1.0 - norm);
}

}  // namespace oft

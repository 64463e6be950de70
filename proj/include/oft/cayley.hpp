// SPDX-License-Identifier: Apache-2.0
#pragma once

// Orthogonal parameterization of skew-symmetric generators: the exact Cayley
// transform R = (I + Q)(I - Q)^{-1} and its truncated Neumann approximation
// R_k = (I + Q)(I + Q + Q^2 + ... + Q^k).

#include <cstddef>
#include <optional>

#include "oft/numkit.hpp"

namespace oft {

struct NeumannConfig {
    // Number of Neumann terms beyond the identity; must be >= 1.
    int terms = 5;
    // When set, cayley_neumann refuses generators whose spectral norm
    // estimate exceeds this value. Must lie in (0, 1].
    std::optional<double> norm_guard;

    void validate() const;
};

Matrix cayley_exact(const Matrix& q);

// Horner-accumulated truncated series; k matrix products, no solve.
Matrix cayley_neumann(const Matrix& q, const NeumannConfig& cfg);

// Both factors of R_k: the series sum P = I + Q + ... + Q^k and R = (I + Q) P.
struct NeumannFactors {
    Matrix series;
    Matrix rotation;
};

NeumannFactors cayley_neumann_factors(const Matrix& q, const NeumannConfig& cfg);

// ||r^T r - I||_F.
double orthogonality_error(const Matrix& r);

// Upper bound on ||R_k - R_exact||_2 for ||Q||_2 = norm < 1.
double neumann_tail_bound(double norm, int terms);

}  // namespace oft

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oft/numkit.hpp"

namespace oft {

// Strict upper triangle of a skew-symmetric n x n matrix, stored row by row:
// entry (i, j), i < j, lives at index i*n - i*(i+1)/2 + (j - i - 1).
class CompactSkew {
public:
    CompactSkew() = default;
    // Throws ShapeError unless values.size() == n*(n-1)/2.
    CompactSkew(std::size_t side, std::vector<double> values);

    static CompactSkew zeros(std::size_t side);

    static constexpr std::size_t length_for(std::size_t side) { return side * (side - (side > 0)) / 2; }
    static constexpr std::size_t index_of(std::size_t side, std::size_t i, std::size_t j) {
        return i * side - i * (i + 1) / 2 + (j - i - 1);
    }

    std::size_t side() const { return side_; }
    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    double upper(std::size_t i, std::size_t j) const { return values_[index_of(side_, i, j)]; }

    bool operator==(const CompactSkew&) const = default;

private:
    std::size_t side_ = 0;
    std::vector<double> values_;
};

// Compacts a skew-symmetric matrix. Raises SymmetryError naming the worst
// entry when max |q + q^T| exceeds tolerance.
CompactSkew pack(const Matrix& q, double tolerance = 1e-12);

Matrix unpack(const CompactSkew& s);

// Writes the dense side x side block into dst (row stride ld).
void unpack_into(const CompactSkew& s, double* dst, std::size_t ld);

// Diag(Q_1, ..., Q_r) * x straight from the compact vectors; no dense block
// is formed. Block sides must sum to x.rows().
Matrix apply_blocks(std::span<const CompactSkew> blocks, const Matrix& x);

namespace fault {
// Mutation fixture for the verification harness: when enabled, unpack writes
// +u below the diagonal instead of -u.
void set_skew_sign_flip(bool enabled);
bool skew_sign_flip();
}  // namespace fault

}  // namespace oft

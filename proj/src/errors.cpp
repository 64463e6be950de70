// SPDX-License-Identifier: Apache-2.0
#include "oft/errors.hpp"

#include <sstream>

namespace oft {

namespace {
std::string symmetry_message(std::size_t row, std::size_t col, double violation) {
    std::ostringstream os;
    os << "matrix is not skew-symmetric: |q(" << row << "," << col << ") + q(" << col << "," << row
       << ")| = " << violation;
    return os.str();
}

std::string divergence_message(double norm, double guard) {
    std::ostringstream os;
    os << "Neumann series may diverge: spectral norm estimate " << norm << " exceeds guard " << guard;
    return os.str();
}
}  // namespace

SymmetryError::SymmetryError(std::size_t row, std::size_t col, double violation)
    : Error(symmetry_message(row, col, violation)), row_(row), col_(col), violation_(violation) {}

DivergenceRiskError::DivergenceRiskError(double norm_estimate, double guard)
    : Error(divergence_message(norm_estimate, guard)), norm_estimate_(norm_estimate), guard_(guard) {}

}  // namespace oft

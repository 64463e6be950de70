// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oft {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A pivot vanished to working precision during elimination.
class SingularMatrixError : public Error {
public:
    using Error::Error;
};

// Input claimed to be skew-symmetric is not.
class SymmetryError : public Error {
public:
    SymmetryError(std::size_t row, std::size_t col, double violation);

    std::size_t row() const { return row_; }
    std::size_t col() const { return col_; }
    double violation() const { return violation_; }

private:
    std::size_t row_;
    std::size_t col_;
    double violation_;
};

// The generator norm exceeds the configured Neumann convergence guard.
class DivergenceRiskError : public Error {
public:
    DivergenceRiskError(double norm_estimate, double guard);

    double norm_estimate() const { return norm_estimate_; }
    double guard() const { return guard_; }

private:
    double norm_estimate_;
    double guard_;
};

// Invalid configuration (divisibility, ranges, unknown names).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed data: non-finite values, bad containers, coincident columns.
class DataError : public Error {
public:
    using Error::Error;
};

// File system failures, always carrying the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace oft

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense numerical substrate: row-major matrices, products, solves, norms,
// a deterministic RNG and the flop / allocation meters used by the benchmarks.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <vector>

#include "oft/errors.hpp"

namespace oft {

// ---------------------------------------------------------------------------
// Metering
// ---------------------------------------------------------------------------

namespace detail {
void note_alloc(std::size_t bytes) noexcept;
void note_free(std::size_t bytes) noexcept;
}  // namespace detail

// Tracks bytes allocated through MeteredAllocator on the current thread while
// in scope. Scopes nest; every enclosing meter sees the same allocations.
// current_bytes() may go negative if memory from before the scope is freed.
class AllocMeter {
public:
    AllocMeter();
    ~AllocMeter();
    AllocMeter(const AllocMeter&) = delete;
    AllocMeter& operator=(const AllocMeter&) = delete;

    std::int64_t current_bytes() const;
    std::int64_t peak_bytes() const { return peak_; }

private:
    friend void detail::note_alloc(std::size_t) noexcept;

    AllocMeter* parent_;
    std::int64_t base_;
    std::int64_t peak_ = 0;
};

// Counts floating point operations recorded by the products below.
class FlopMeter {
public:
    FlopMeter();
    std::uint64_t flops() const;

private:
    std::uint64_t start_;
};

void record_flops(std::uint64_t flops) noexcept;

template <typename T>
struct MeteredAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = alignof(T) > 64 ? alignof(T) : 64;

    MeteredAllocator() noexcept = default;
    template <typename U>
    MeteredAllocator(const MeteredAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = n * sizeof(T);
        T* p = static_cast<T*>(::operator new(bytes, std::align_val_t(alignment)));
        detail::note_alloc(bytes);
        return p;
    }
    void deallocate(T* p, std::size_t n) noexcept {
        detail::note_free(n * sizeof(T));
        ::operator delete(p, std::align_val_t(alignment));
    }

    template <typename U>
    bool operator==(const MeteredAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, MeteredAllocator<T>>;

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

template <typename T>
class BasicMatrix {
public:
    using value_type = T;

    BasicMatrix() = default;
    BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static BasicMatrix identity(std::size_t n) {
        BasicMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    // Ragged initializer lists raise ShapeError.
    static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        BasicMatrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("from_rows: ragged rows");
            std::size_t j = 0;
            for (T v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return {data_.data(), data_.size()}; }
    std::span<const T> values() const { return {data_.data(), data_.size()}; }
    std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    bool operator==(const BasicMatrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Buffer<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

template <typename To, typename From>
BasicMatrix<To> convert(const BasicMatrix<From>& m) {
    BasicMatrix<To> out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = static_cast<To>(m.data()[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

namespace kernels {
// C[m x n] += A[m x k] * B[k x n]; leading dimensions are row strides.
// Records 2*m*n*k flops.
template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k,
                     const T* a, std::size_t lda,
                     const T* b, std::size_t ldb,
                     T* c, std::size_t ldc);

// C[m x n] += A^T B with A stored as [k x m]. Rows of A and B are consumed in
// order, so splitting k into consecutive chunks gives bit-identical results.
template <typename T>
void gemm_tn_accumulate(std::size_t m, std::size_t n, std::size_t k,
                        const T* a, std::size_t lda,
                        const T* b, std::size_t ldb,
                        T* c, std::size_t ldc);
}  // namespace kernels

// a * b. Records 2 * a.rows * a.cols * b.cols flops.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

// transpose(a) * b without forming the transpose.
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

// a * transpose(b) without forming the transpose.
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
// Euclidean norm of column j.
double column_norm(const Matrix& a, std::size_t j);
bool all_finite(const Matrix& a);

// Solves a * X = b by partially pivoted elimination.
// Throws SingularMatrixError when a pivot is below n * eps * max|a|.
Matrix solve(const Matrix& a, const Matrix& b);

// Power-iteration estimate of the spectral norm of a square matrix.
// The start vector is drawn from Rng(seed), so the result is deterministic.
double spectral_norm_est(const Matrix& a, std::size_t iters, std::uint64_t seed = 0x9e3779b97f4a7c15ULL);

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

// SplitMix64 stream with Box-Muller normals. Same seed, same sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Matrix gaussian(std::size_t rows, std::size_t cols, double stddev = 1.0);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace oft

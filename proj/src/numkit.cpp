// SPDX-License-Identifier: Apache-2.0
#include "oft/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace oft {

// ---------------------------------------------------------------------------
// Metering
// ---------------------------------------------------------------------------

namespace {
thread_local std::int64_t t_live_bytes = 0;
thread_local AllocMeter* t_top_meter = nullptr;
thread_local std::uint64_t t_flops = 0;
}  // namespace

namespace detail {

void note_alloc(std::size_t bytes) noexcept {
    t_live_bytes += static_cast<std::int64_t>(bytes);
    for (AllocMeter* m = t_top_meter; m; m = m->parent_)
        m->peak_ = std::max(m->peak_, t_live_bytes - m->base_);
}

void note_free(std::size_t bytes) noexcept {
    t_live_bytes -= static_cast<std::int64_t>(bytes);
}

}  // namespace detail

AllocMeter::AllocMeter() : parent_(t_top_meter), base_(t_live_bytes) { t_top_meter = this; }

AllocMeter::~AllocMeter() { t_top_meter = parent_; }

std::int64_t AllocMeter::current_bytes() const { return t_live_bytes - base_; }

FlopMeter::FlopMeter() : start_(t_flops) {}

std::uint64_t FlopMeter::flops() const { return t_flops - start_; }

void record_flops(std::uint64_t flops) noexcept { t_flops += flops; }

// ---------------------------------------------------------------------------
// GEMM
// ---------------------------------------------------------------------------

namespace kernels {
namespace {

template <typename T>
struct Vec {
    typedef T type __attribute__((vector_size(64)));
};

template <typename T>
void gemm_small(std::size_t m, std::size_t n, std::size_t k,
                const T* __restrict a, std::size_t lda,
                const T* __restrict b, std::size_t ldb,
                T* __restrict c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict ci = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * lda + p];
            const T* __restrict bp = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// Packed-panel kernel: B is packed into KC x NR panels, the micro-kernel keeps
// a 6 x (2 vectors) tile of C in registers.
template <typename T>
void gemm_blocked(std::size_t m, std::size_t n, std::size_t k,
                  const T* __restrict a, std::size_t lda,
                  const T* __restrict b, std::size_t ldb,
                  T* __restrict c, std::size_t ldc) {
    using vec = typename Vec<T>::type;
    constexpr std::size_t VL = sizeof(vec) / sizeof(T);
    constexpr std::size_t MR = 6;
    constexpr std::size_t NR = 2 * VL;
    constexpr std::size_t KC = 256;
    constexpr std::size_t NC = 1024;

    Buffer<vec> packed(KC * NC / VL);
    T* bp = reinterpret_cast<T*>(packed.data());

    for (std::size_t jc = 0; jc < n; jc += NC) {
        const std::size_t nc = std::min(NC, n - jc);
        const std::size_t panels = (nc + NR - 1) / NR;
        for (std::size_t pc = 0; pc < k; pc += KC) {
            const std::size_t kc = std::min(KC, k - pc);
            for (std::size_t p = 0; p < panels; ++p) {
                T* dst = bp + p * kc * NR;
                const std::size_t j0 = jc + p * NR;
                const std::size_t w = std::min(NR, nc - p * NR);
                for (std::size_t q = 0; q < kc; ++q) {
                    const T* src = b + (pc + q) * ldb + j0;
                    std::size_t j = 0;
                    for (; j < w; ++j) dst[q * NR + j] = src[j];
                    for (; j < NR; ++j) dst[q * NR + j] = T(0);
                }
            }
            for (std::size_t i0 = 0; i0 < m; i0 += MR) {
                const std::size_t h = std::min(MR, m - i0);
                // Short tiles re-read their last row and discard the extra results.
                const T* ar[MR];
                for (std::size_t r = 0; r < MR; ++r) ar[r] = a + (i0 + std::min(r, h - 1)) * lda + pc;
                for (std::size_t p = 0; p < panels; ++p) {
                    const vec* panel = reinterpret_cast<const vec*>(bp + p * kc * NR);
                    const std::size_t j0 = jc + p * NR;
                    const std::size_t w = std::min(NR, nc - p * NR);
                    vec c00{}, c01{}, c10{}, c11{}, c20{}, c21{};
                    vec c30{}, c31{}, c40{}, c41{}, c50{}, c51{};
                    for (std::size_t q = 0; q < kc; ++q) {
                        const vec b0 = panel[2 * q];
                        const vec b1 = panel[2 * q + 1];
                        T s;
                        s = ar[0][q]; c00 += s * b0; c01 += s * b1;
                        s = ar[1][q]; c10 += s * b0; c11 += s * b1;
                        s = ar[2][q]; c20 += s * b0; c21 += s * b1;
                        s = ar[3][q]; c30 += s * b0; c31 += s * b1;
                        s = ar[4][q]; c40 += s * b0; c41 += s * b1;
                        s = ar[5][q]; c50 += s * b0; c51 += s * b1;
                    }
                    const vec tile[MR][2] = {{c00, c01}, {c10, c11}, {c20, c21},
                                             {c30, c31}, {c40, c41}, {c50, c51}};
                    for (std::size_t r = 0; r < h; ++r) {
                        T* __restrict dst = c + (i0 + r) * ldc + j0;
                        const T* src = reinterpret_cast<const T*>(tile[r]);
                        for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k,
                     const T* a, std::size_t lda,
                     const T* b, std::size_t ldb,
                     T* c, std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0) return;
    record_flops(2ull * m * n * k);
    if (m < 12 || n * k <= 64 * 64)
        gemm_small(m, n, k, a, lda, b, ldb, c, ldc);
    else
        gemm_blocked(m, n, k, a, lda, b, ldb, c, ldc);
}

template <typename T>
void gemm_tn_accumulate(std::size_t m, std::size_t n, std::size_t k,
                        const T* a, std::size_t lda,
                        const T* b, std::size_t ldb,
                        T* c, std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0) return;
    record_flops(2ull * m * n * k);
    // c[i,:] += a[p,i] * b[p,:], streaming both operands row by row.
    for (std::size_t p = 0; p < k; ++p) {
        const T* __restrict ap = a + p * lda;
        const T* __restrict bp = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const T s = ap[i];
            T* __restrict ci = c + i * ldc;
            for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
        }
    }
}

template void gemm_tn_accumulate<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                                         const double*, std::size_t, double*, std::size_t);
template void gemm_tn_accumulate<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                                        const float*, std::size_t, float*, std::size_t);

template void gemm_accumulate<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                                      const double*, std::size_t, double*, std::size_t);
template void gemm_accumulate<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                                     const float*, std::size_t, float*, std::size_t);

}  // namespace kernels

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    BasicMatrix<T> c(a.rows(), b.cols());
    kernels::gemm_accumulate(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(), c.data(),
                             c.cols());
    return c;
}

template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: row counts differ (" + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()) + ")");
    BasicMatrix<T> c(a.cols(), b.cols());
    kernels::gemm_tn_accumulate(a.cols(), b.cols(), a.rows(), a.data(), a.cols(), b.data(), b.cols(), c.data(),
                                c.cols());
    return c;
}

template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: column counts differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
    const std::size_t m = a.rows(), n = b.rows(), inner = a.cols();
    BasicMatrix<T> c(m, n);
    record_flops(2ull * m * n * inner);
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict ai = a.data() + i * inner;
        for (std::size_t j = 0; j < n; ++j) {
            const T* __restrict bj = b.data() + j * inner;
            T s = T(0);
            for (std::size_t p = 0; p < inner; ++p) s += ai[p] * bj[p];
            c(i, j) = s;
        }
    }
    return c;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
    BasicMatrix<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

template Matrix matmul<double>(const Matrix&, const Matrix&);
template MatrixF matmul<float>(const MatrixF&, const MatrixF&);
template Matrix matmul_tn<double>(const Matrix&, const Matrix&);
template MatrixF matmul_tn<float>(const MatrixF&, const MatrixF&);
template Matrix matmul_nt<double>(const Matrix&, const Matrix&);
template MatrixF matmul_nt<float>(const MatrixF&, const MatrixF&);
template Matrix transpose<double>(const Matrix&);
template MatrixF transpose<float>(const MatrixF&);

namespace {
void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shapes differ (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
}
}  // namespace

Matrix operator+(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

Matrix operator*(double s, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.values()) v *= s;
    return c;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s = std::max(s, std::abs(v));
    return s;
}

double column_norm(const Matrix& a, std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

bool all_finite(const Matrix& a) {
    return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

Matrix solve(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ShapeError("solve: matrix is not square");
    if (b.rows() != n) throw ShapeError("solve: right-hand side has " + std::to_string(b.rows()) + " rows, expected " +
                                        std::to_string(n));
    Matrix lu = a;
    Matrix x = b;
    const std::size_t nrhs = b.cols();
    const double tiny = static_cast<double>(std::max<std::size_t>(n, 1)) * std::numeric_limits<double>::epsilon() *
                        std::max(max_abs(a), std::numeric_limits<double>::min());

    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t i = col + 1; i < n; ++i)
            if (std::abs(lu(i, col)) > std::abs(lu(pivot, col))) pivot = i;
        if (std::abs(lu(pivot, col)) <= tiny)
            throw SingularMatrixError("solve: pivot " + std::to_string(col) + " vanished to working precision");
        if (pivot != col) {
            std::swap_ranges(lu.row(col).begin(), lu.row(col).end(), lu.row(pivot).begin());
            std::swap_ranges(x.row(col).begin(), x.row(col).end(), x.row(pivot).begin());
        }
        const double inv = 1.0 / lu(col, col);
        for (std::size_t i = col + 1; i < n; ++i) {
            const double f = lu(i, col) * inv;
            if (f == 0.0) continue;
            for (std::size_t j = col; j < n; ++j) lu(i, j) -= f * lu(col, j);
            for (std::size_t j = 0; j < nrhs; ++j) x(i, j) -= f * x(col, j);
        }
    }
    for (std::size_t col = n; col-- > 0;) {
        for (std::size_t j = 0; j < nrhs; ++j) {
            double s = x(col, j);
            for (std::size_t p = col + 1; p < n; ++p) s -= lu(col, p) * x(p, j);
            x(col, j) = s / lu(col, col);
        }
    }
    return x;
}

double spectral_norm_est(const Matrix& a, std::size_t iters, std::uint64_t seed) {
    if (a.rows() != a.cols()) throw ShapeError("spectral_norm_est: matrix is not square");
    if (iters == 0) throw ConfigError("spectral_norm_est: iters must be >= 1");
    const std::size_t n = a.rows();
    if (n == 0 || max_abs(a) == 0.0) return 0.0;

    Rng rng(seed);
    std::vector<double> v(n), av(n), w(n);
    for (double& e : v) e = rng.normal();

    auto normalize = [](std::vector<double>& x) {
        double s = 0.0;
        for (double e : x) s += e * e;
        s = std::sqrt(s);
        if (s > 0.0)
            for (double& e : x) e /= s;
        return s;
    };
    normalize(v);

    double estimate = 0.0;
    // Power iteration on a^T a; ||a v|| with unit v is the Rayleigh estimate.
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += a(i, j) * v[j];
            av[i] = s;
        }
        double s = 0.0;
        for (double e : av) s += e * e;
        estimate = std::max(estimate, std::sqrt(s));
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) w[j] += a(i, j) * av[i];
        if (normalize(w) == 0.0) break;
        v.swap(w);
    }
    return estimate;
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

Matrix Rng::gaussian(std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = stddev * normal();
    return m;
}

}  // namespace oft

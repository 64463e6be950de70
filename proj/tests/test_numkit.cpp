// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <vector>

#include "oft/numkit.hpp"
#include "support.hpp"

using namespace oft;
using oft::test::max_abs_diff;
using oft::test::naive_matmul;

namespace {

// Coefficients c_0..c_n of det(lambda I - A) by Faddeev-LeVerrier, c_n = 1.
std::vector<double> characteristic_polynomial(const Matrix& a) {
    const std::size_t n = a.rows();
    std::vector<double> c(n + 1, 0.0);
    c[n] = 1.0;
    Matrix m(n, n);  // M_0 = 0
    for (std::size_t k = 1; k <= n; ++k) {
        Matrix next = naive_matmul(a, m);
        for (std::size_t i = 0; i < n; ++i) next(i, i) += c[n - k + 1];
        m = next;
        Matrix am = naive_matmul(a, m);
        double tr = 0.0;
        for (std::size_t i = 0; i < n; ++i) tr += am(i, i);
        c[n - k] = -tr / static_cast<double>(k);
    }
    return c;
}

double eval_poly(const std::vector<double>& c, double x) {
    double s = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) s = s * x + c[i];
    return s;
}

// Largest |root| of a polynomial with all-real roots inside [-bound, bound],
// located by a fine sign-change scan and refined by bisection.
double largest_abs_root(const std::vector<double>& c, double bound) {
    const int steps = 200000;
    double best = 0.0;
    double prev_x = -bound, prev_f = eval_poly(c, prev_x);
    for (int s = 1; s <= steps; ++s) {
        const double x = -bound + 2.0 * bound * s / steps;
        const double f = eval_poly(c, x);
        if ((prev_f <= 0.0 && f >= 0.0) || (prev_f >= 0.0 && f <= 0.0)) {
            double lo = prev_x, hi = x, flo = prev_f;
            for (int it = 0; it < 100; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = eval_poly(c, mid);
                if ((flo <= 0.0 && fm <= 0.0) || (flo >= 0.0 && fm >= 0.0)) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            best = std::max(best, std::abs(0.5 * (lo + hi)));
        }
        prev_x = x;
        prev_f = f;
    }
    return best;
}

}  // namespace

TEST_CASE("matmul: identity and hand-checkable products") {
    Rng rng(1);
    const Matrix m = rng.gaussian(3, 4);
    CHECK(matmul(Matrix::identity(3), m) == m);

    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix b = Matrix::from_rows({{1}, {1}});
    CHECK(matmul(a, b) == Matrix::from_rows({{3}, {7}}));
}

TEST_CASE("matmul: agrees with the triple-loop oracle") {
    Rng rng(2);
    const Matrix a = rng.gaussian(8, 8), b = rng.gaussian(8, 8);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) <= 1e-12);

    // Shapes that exercise the packed kernel, including ragged edges.
    for (auto [m, k, n] : {std::tuple{37, 53, 71}, std::tuple{100, 300, 70}, std::tuple{13, 257, 1100}}) {
        const Matrix x = rng.gaussian(m, k), y = rng.gaussian(k, n);
        const Matrix ref = naive_matmul(x, y);
        CHECK(max_abs_diff(matmul(x, y), ref) <= 1e-11 * std::sqrt(static_cast<double>(k)));
    }
}

TEST_CASE("matmul: transposed variants match explicit transposes") {
    Rng rng(3);
    const Matrix a = rng.gaussian(9, 5), b = rng.gaussian(9, 7), c = rng.gaussian(4, 5);
    CHECK(max_abs_diff(matmul_tn(a, b), naive_matmul(test::naive_transpose(a), b)) <= 1e-12);
    CHECK(max_abs_diff(matmul_nt(a, c), naive_matmul(a, test::naive_transpose(c))) <= 1e-12);
    CHECK(transpose(a) == test::naive_transpose(a));
}

TEST_CASE("matmul: shape errors and flop accounting") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
    CHECK_THROWS_AS(matmul_tn(Matrix(2, 3), Matrix(3, 3)), ShapeError);
    CHECK_THROWS_AS(matmul_nt(Matrix(2, 3), Matrix(3, 2)), ShapeError);

    FlopMeter meter;
    (void)matmul(Matrix(5, 7), Matrix(7, 11));
    CHECK(meter.flops() == 2u * 5 * 7 * 11);
}

TEST_CASE("matmul: float path matches double within single precision") {
    Rng rng(4);
    const Matrix a = rng.gaussian(64, 96), b = rng.gaussian(96, 80);
    const MatrixF af = convert<float>(a), bf = convert<float>(b);
    const Matrix cf = convert<double>(matmul(af, bf));
    CHECK(max_abs_diff(cf, naive_matmul(a, b)) <= 1e-4);
}

TEST_CASE("matmul: associativity on random triples") {
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
        const Matrix a = rng.gaussian(6, 9), b = rng.gaussian(9, 4), c = rng.gaussian(4, 7);
        const Matrix left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
        CHECK(test::rel_frobenius(left, right) <= 1e-9);
    }
}

TEST_CASE("solve: identity, diagonal and residual") {
    Rng rng(6);
    const Matrix m = rng.gaussian(4, 3);
    CHECK(max_abs_diff(solve(Matrix::identity(4), m), m) == 0.0);

    const Matrix x = solve(Matrix::from_rows({{2, 0}, {0, 4}}), Matrix::from_rows({{2}, {8}}));
    CHECK(x(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(x(1, 0) == doctest::Approx(2.0).epsilon(1e-15));

    Matrix a = rng.gaussian(6, 6);
    for (std::size_t i = 0; i < 6; ++i) a(i, i) += 6.0;
    const Matrix b = rng.gaussian(6, 2);
    const Matrix sol = solve(a, b);
    CHECK(frobenius_norm(naive_matmul(a, sol) - b) <= 1e-9 * frobenius_norm(b));
}

TEST_CASE("solve: round trip solve(A, A X) = X") {
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
        Matrix a = rng.gaussian(10, 10);
        for (std::size_t i = 0; i < 10; ++i) a(i, i) += 4.0;
        const Matrix x = rng.gaussian(10, 3);
        CHECK(test::rel_frobenius(solve(a, matmul(a, x)), x) <= 1e-8);
    }
}

TEST_CASE("solve: errors") {
    CHECK_THROWS_AS(solve(Matrix::from_rows({{1, 2}, {2, 4}}), Matrix(2, 1)), SingularMatrixError);
    CHECK_THROWS_AS(solve(Matrix(2, 3), Matrix(2, 1)), ShapeError);
    CHECK_THROWS_AS(solve(Matrix::identity(2), Matrix(3, 1)), ShapeError);
}

TEST_CASE("spectral_norm_est: zero, diagonal, symmetric oracle") {
    CHECK(spectral_norm_est(Matrix(5, 5), 10) == 0.0);
    CHECK(spectral_norm_est(Matrix::from_rows({{3, 0}, {0, 1}}), 50) == doctest::Approx(3.0).epsilon(1e-6 / 3));

    Rng rng(8);
    Matrix g = rng.gaussian(8, 8);
    Matrix s(8, 8);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) s(i, j) = 0.5 * (g(i, j) + g(j, i));
    const auto poly = characteristic_polynomial(s);
    const double bound = 1.0 + max_abs(s) * 8.0;
    const double oracle = largest_abs_root(poly, bound);
    CHECK(std::abs(spectral_norm_est(s, 500) - oracle) <= 1e-4);
}

TEST_CASE("spectral_norm_est: error is nonincreasing in iterations") {
    Rng rng(9);
    const Matrix a = rng.gaussian(12, 12);
    const double truth = spectral_norm_est(a, 5000);
    double prev_err = 1e300;
    for (std::size_t it = 1; it <= 40; ++it) {
        const double err = truth - spectral_norm_est(a, it);
        CHECK(err >= -1e-12);
        CHECK(err <= prev_err + 1e-12);
        prev_err = err;
    }
    CHECK_THROWS_AS(spectral_norm_est(a, 0), ConfigError);
    CHECK_THROWS_AS(spectral_norm_est(Matrix(2, 3), 3), ShapeError);
}

TEST_CASE("AllocMeter: scoped allocations return to baseline") {
    AllocMeter outer;
    const std::int64_t before = outer.current_bytes();
    const std::size_t bytes = 1000 * sizeof(double);
    {
        Matrix tmp(10, 100);
        CHECK(outer.current_bytes() == before + static_cast<std::int64_t>(bytes));
        AllocMeter inner;
        { Matrix more(5, 5); }
        CHECK(inner.peak_bytes() == 25 * 8);
        CHECK(inner.current_bytes() == 0);
    }
    CHECK(outer.current_bytes() == before);
    CHECK(outer.peak_bytes() >= before + static_cast<std::int64_t>(bytes));
    CHECK(outer.peak_bytes() >= outer.current_bytes());
}

TEST_CASE("Rng: deterministic streams and sane moments") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(Rng(42).next_u64() != Rng(43).next_u64());
    // Pinned first outputs of SplitMix64 seeded with 0.
    Rng z(0);
    CHECK(z.next_u64() == 0xe220a8397b1dcdafULL);
    CHECK(z.next_u64() == 0x6e789e6aa1b965f4ULL);

    Rng g(11);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = g.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.01);
}

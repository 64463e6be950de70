// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <limits>

#include "oft/cayley.hpp"
#include "support.hpp"

using namespace oft;

namespace {

Matrix skew_with_norm(std::size_t n, Rng& rng, double target) {
    const Matrix q = test::random_skew(n, rng);
    return (target / test::power_norm(q, 2000)) * q;
}

NeumannConfig terms(int k) {
    NeumannConfig cfg;
    cfg.terms = k;
    return cfg;
}

}  // namespace

TEST_CASE("cayley_exact: identity and the 2x2 closed form") {
    CHECK(cayley_exact(Matrix(4, 4)) == Matrix::identity(4));

    const double a = 0.1;
    const Matrix r = cayley_exact(Matrix::from_rows({{0, a}, {-a, 0}}));
    const double c = (1 - a * a) / (1 + a * a), s = 2 * a / (1 + a * a);
    CHECK(r(0, 0) == doctest::Approx(c).epsilon(1e-14));
    CHECK(r(0, 1) == doctest::Approx(s).epsilon(1e-14));
    CHECK(r(1, 0) == doctest::Approx(-s).epsilon(1e-14));
    CHECK(r(1, 1) == doctest::Approx(c).epsilon(1e-14));
    CHECK(c == doctest::Approx(0.980198).epsilon(1e-6));
    CHECK(s == doctest::Approx(0.198019).epsilon(1e-5));
}

TEST_CASE("cayley_exact: orthogonal rotation that preserves norms") {
    Rng rng(31);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n = 2 + t % 11;
        const Matrix r = cayley_exact(test::random_skew(n, rng, 0.2 + 0.3 * (t % 5)));
        CHECK(orthogonality_error(r) <= 1e-10);
        CHECK(test::determinant(r) == doctest::Approx(1.0).epsilon(1e-10));
        const Matrix x = rng.gaussian(n, 1);
        CHECK(frobenius_norm(test::naive_matmul(r, x)) == doctest::Approx(frobenius_norm(x)).epsilon(1e-10));
    }
}

TEST_CASE("cayley_neumann: zero generator gives the identity for every order") {
    for (int k = 1; k <= 8; ++k) CHECK(cayley_neumann(Matrix(5, 5), terms(k)) == Matrix::identity(5));
}

TEST_CASE("cayley_neumann: matches the explicit polynomial") {
    Rng rng(32);
    const Matrix q = skew_with_norm(6, rng, 0.4);
    for (int k = 1; k <= 6; ++k) {
        Matrix power = Matrix::identity(6), series = Matrix::identity(6);
        for (int i = 1; i <= k; ++i) {
            power = test::naive_matmul(power, q);
            series = series + power;
        }
        const Matrix ref = test::naive_matmul(Matrix::identity(6) + q, series);
        CHECK(test::max_abs_diff(cayley_neumann(q, terms(k)), ref) <= 1e-14);
        const NeumannFactors f = cayley_neumann_factors(q, terms(k));
        CHECK(test::max_abs_diff(f.series, series) <= 1e-14);
        CHECK(test::max_abs_diff(f.rotation, ref) <= 1e-14);
    }
}

TEST_CASE("cayley_neumann: long series converges to the exact transform") {
    Rng rng(33);
    const Matrix q = skew_with_norm(8, rng, 0.3);
    CHECK(test::max_abs_diff(cayley_neumann(q, terms(30)), cayley_exact(q)) <= 1e-12);
}

TEST_CASE("cayley_neumann: error decreases monotonically in k") {
    Rng rng(34);
    for (double norm : {0.2, 0.5, 0.9}) {
        const Matrix q = skew_with_norm(8, rng, norm);
        const Matrix exact = cayley_exact(q);
        double prev = std::numeric_limits<double>::infinity();
        for (int k = 1; k <= 10; ++k) {
            const double err = frobenius_norm(cayley_neumann(q, terms(k)) - exact);
            CHECK(err <= prev + 1e-12);
            prev = err;
        }
    }
}

TEST_CASE("cayley_neumann: geometric tail bound on 100 instances") {
    Rng rng(35);
    for (int t = 0; t < 100; ++t) {
        const double target = 0.05 + 0.85 * rng.uniform();
        const int k = 1 + t % 8;
        const Matrix q = skew_with_norm(2 + t % 9, rng, target);
        const double norm = test::power_norm(q, 2000);
        const double err = test::power_norm(cayley_neumann(q, terms(k)) - cayley_exact(q), 2000);
        CHECK(err <= 2.0 * std::pow(norm, k + 1) / (1.0 - norm));
        CHECK(err <= neumann_tail_bound(norm, k));
    }
    CHECK(neumann_tail_bound(0.5, 5) == doctest::Approx(0.0625));
    CHECK(std::isinf(neumann_tail_bound(1.0, 3)));
}

TEST_CASE("cayley_neumann: norm guard") {
    Rng rng(36);
    NeumannConfig cfg;
    cfg.norm_guard = 0.5;
    const Matrix ok = skew_with_norm(6, rng, 0.3);
    CHECK_NOTHROW((void)cayley_neumann(ok, cfg));
    const Matrix big = skew_with_norm(6, rng, 0.8);
    try {
        (void)cayley_neumann(big, cfg);
        FAIL("expected DivergenceRiskError");
    } catch (const DivergenceRiskError& e) {
        CHECK(e.norm_estimate() == doctest::Approx(0.8).epsilon(1e-3));
        CHECK(e.guard() == 0.5);
    }
    cfg.norm_guard.reset();
    CHECK_NOTHROW((void)cayley_neumann(big, cfg));
}

TEST_CASE("NeumannConfig validation") {
    CHECK_THROWS_AS(terms(0).validate(), ConfigError);
    NeumannConfig cfg;
    cfg.norm_guard = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.norm_guard = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.norm_guard = 1.0;
    CHECK_NOTHROW(cfg.validate());
    CHECK_THROWS_AS(cayley_neumann(Matrix(2, 2), terms(0)), ConfigError);
    CHECK_THROWS_AS(cayley_exact(Matrix(2, 3)), ShapeError);
}

TEST_CASE("orthogonality_error closed forms") {
    CHECK(orthogonality_error(Matrix::identity(7)) == 0.0);
    CHECK(orthogonality_error(2.0 * Matrix::identity(5)) == doctest::Approx(3.0 * std::sqrt(5.0)));
}

// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <vector>

#include "oft/trainer.hpp"

using namespace oft;

namespace {

// Plain scalar Adam, written out independently of the library version.
struct ScalarAdam {
    double m = 0.0, v = 0.0;
    int t = 0;
    double step(double p, double g, double lr) {
        ++t;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        return p - lr * mh / (std::sqrt(vh) + 1e-8);
    }
};

TrainConfig short_rotation(std::size_t steps) {
    TrainConfig c = TrainConfig::defaults_for(TaskKind::rotation_recovery);
    c.d = 16;
    c.n = 8;
    c.b = 4;
    c.steps = steps;
    c.eval_size = 64;
    return c;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0);
    const std::size_t sizes[] = {3};
    AdamState s = AdamState::for_sizes({0.1}, sizes);
    const ParamView views[] = {{p, g}};
    adam_step(s, views);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(s.step == 1);
}

TEST_CASE("adam: first step is the sign-scaled closed form") {
    std::vector<double> p{0.5, 0.5, 0.5}, g{2.0, -1e-3, 1e-9};
    const std::size_t sizes[] = {3};
    AdamState s = AdamState::for_sizes({0.01}, sizes);
    const ParamView views[] = {{p, g}};
    adam_step(s, views);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(p[i] == doctest::Approx(0.5 - 0.01 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: matches a scalar reference over 100 steps") {
    Rng rng(91);
    std::vector<double> p{0.3, -0.7}, q{1.5}, gp(2), gq(1);
    std::vector<ScalarAdam> ref(3);
    std::vector<double> rp{0.3, -0.7, 1.5};
    const std::size_t sizes[] = {2, 1};
    AdamState s = AdamState::for_sizes({3e-3}, sizes);
    for (int t = 0; t < 100; ++t) {
        gp = {rng.normal(), rng.normal()};
        gq = {rng.normal()};
        const ParamView views[] = {{p, gp}, {q, gq}};
        adam_step(s, views);
        rp[0] = ref[0].step(rp[0], gp[0], 3e-3);
        rp[1] = ref[1].step(rp[1], gp[1], 3e-3);
        rp[2] = ref[2].step(rp[2], gq[0], 3e-3);
    }
    CHECK(std::abs(p[0] - rp[0]) <= 1e-12);
    CHECK(std::abs(p[1] - rp[1]) <= 1e-12);
    CHECK(std::abs(q[0] - rp[2]) <= 1e-12);
}

TEST_CASE("adam: shape mismatch") {
    std::vector<double> p(3), g(2);
    const std::size_t sizes[] = {3};
    AdamState s = AdamState::for_sizes({}, sizes);
    const ParamView bad[] = {{p, g}};
    CHECK_THROWS_AS(adam_step(s, bad), ShapeError);
    const ParamView none[] = {{std::span<double>(), std::span<const double>()}};
    CHECK_THROWS_AS(adam_step(s, std::span<const ParamView>(none, 0)), ShapeError);
}

TEST_CASE("train config: text round trip, overrides and validation") {
    TrainConfig c = TrainConfig::defaults_for(TaskKind::toy_classify);
    c.adapter = AdapterKind::lora;
    c.base = BaseKind::nf4;
    c.lr = 0.0123;
    const TrainConfig back = parse_train_config(c.to_text());
    CHECK(back.to_text() == c.to_text());

    const TrainConfig o = parse_train_config("# comment\n\n d = 48 \nseed=99\n", c);
    CHECK(o.d == 48);
    CHECK(o.seed == 99);
    CHECK(o.adapter == AdapterKind::lora);

    CHECK_THROWS_AS(parse_train_config("bogus=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("d=abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("d\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("task=unknown\n"), ConfigError);

    TrainConfig bad = TrainConfig::defaults_for(TaskKind::rotation_recovery);
    bad.b = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig::defaults_for(TaskKind::rotation_recovery);
    bad.adapter = AdapterKind::lora;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig::defaults_for(TaskKind::rotation_recovery);
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(load_train_config("/nonexistent.cfg"), IoError);
}

TEST_CASE("bundled task configs load and equal the built-in defaults") {
    const std::string dir = std::string(OFT_DATA_DIR) + "/configs/";
    const TrainConfig rot = load_train_config(dir + "rotation-recovery.cfg");
    CHECK(rot.to_text() == TrainConfig::defaults_for(TaskKind::rotation_recovery).to_text());
    const TrainConfig toy = load_train_config(dir + "toy-classify.cfg");
    CHECK(toy.to_text() == TrainConfig::defaults_for(TaskKind::toy_classify).to_text());
}

TEST_CASE("rotation recovery: identity teacher stays at zero loss") {
    TrainConfig c = short_rotation(50);
    c.shift_norm = 0.0;
    const Trace t = task_rotation_recovery(c);
    CHECK(t.initial_loss == 0.0);
    for (const TraceRow& r : t.rows) CHECK(r.loss <= 1e-10);
    CHECK(t.final_loss <= 1e-10);
}

TEST_CASE("rotation recovery: deterministic traces and decreasing loss") {
    const TrainConfig c = short_rotation(200);
    const Trace a = task_rotation_recovery(c), b = task_rotation_recovery(c);
    std::ostringstream sa, sb;
    write_trace_csv(sa, a);
    write_trace_csv(sb, b);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("step,loss,acc,q_norm,orth_err,col_drift,grad_norm\n", 0) == 0);
    CHECK(a.rows.size() == 21);
    CHECK(a.rows.back().step == 200);
    CHECK(a.final_loss < 0.1 * a.initial_loss);
    const StabilityMetrics m = stability_probe(a);
    CHECK(m.drift_within_bound);
    CHECK(m.max_q_norm < 1.0);
    CHECK(m.divergence_events == 0);
}

TEST_CASE("untrained model has no drift") {
    const Trace t = task_rotation_recovery(short_rotation(0));
    REQUIRE(t.rows.size() == 1);
    const StabilityMetrics m = stability_probe(t);
    CHECK(m.max_q_norm == 0.0);
    CHECK(m.max_orth_err == 0.0);
    CHECK(m.max_col_drift == 0.0);
}

TEST_CASE("toy classification: initial loss equals the frozen model for both bases") {
    for (BaseKind base : {BaseKind::full, BaseKind::nf4})
        for (AdapterKind kind : {AdapterKind::oft, AdapterKind::lora}) {
            TrainConfig c = TrainConfig::defaults_for(TaskKind::toy_classify);
            c.steps = 0;
            c.base = base;
            c.adapter = kind;
            const Trace t = task_toy_classify(c);
            CHECK(t.final_acc == t.control_acc);
            CHECK(t.final_loss == t.initial_loss);
        }
}

TEST_CASE("gradcheck report meets the tolerances") {
    const GradcheckReport r = gradcheck();
    REQUIRE(r.oft_max_rel.size() == 5);
    for (double e : r.oft_max_rel) CHECK(e <= 1e-6);
    CHECK(r.lora_max_rel <= 1e-8);
    CHECK(r.init_factor_error <= 1e-12);
}

TEST_CASE("trace csv reads back what was written") {
    const Trace t = task_rotation_recovery(short_rotation(30));
    std::stringstream ss;
    write_trace_csv(ss, t);
    const std::vector<TraceRow> rows = read_trace_csv(ss);
    REQUIRE(rows.size() == t.rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].step == t.rows[i].step);
        CHECK(rows[i].loss == t.rows[i].loss);
        CHECK(std::isnan(rows[i].acc));
        CHECK(rows[i].grad_norm == t.rows[i].grad_norm);
    }
    std::stringstream bad("step,loss\n");
    CHECK_THROWS_AS(read_trace_csv(bad), DataError);
    std::stringstream short_row("step,loss,acc,q_norm,orth_err,col_drift,grad_norm\n1,2,3\n");
    CHECK_THROWS_AS(read_trace_csv(short_row), DataError);
    std::stringstream junk("step,loss,acc,q_norm,orth_err,col_drift,grad_norm\n1,2,3,4,5,6,x\n");
    CHECK_THROWS_AS(read_trace_csv(junk), DataError);
}

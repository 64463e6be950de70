// SPDX-License-Identifier: Apache-2.0
#include "oft/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "oft/adapter.hpp"
#include "oft/cayley.hpp"
#include "oft/errors.hpp"
#include "oft/lora.hpp"
#include "oft/params.hpp"
#include "oft/quant.hpp"
#include "oft/skew.hpp"
#include "oft/trainer.hpp"

namespace oft {

VerifySuite parse_verify_suite(const std::string& text) {
    for (VerifySuite s : {VerifySuite::all, VerifySuite::cayley, VerifySuite::skew, VerifySuite::layer,
                          VerifySuite::quant, VerifySuite::grad, VerifySuite::baseline})
        if (text == to_string(s)) return s;
    throw ConfigError("unknown verify suite '" + text + "'");
}

const char* to_string(VerifySuite suite) {
    switch (suite) {
        case VerifySuite::all: return "all";
        case VerifySuite::cayley: return "cayley";
        case VerifySuite::skew: return "skew";
        case VerifySuite::layer: return "layer";
        case VerifySuite::quant: return "quant";
        case VerifySuite::grad: return "grad";
        case VerifySuite::baseline: return "baseline";
    }
    return "?";
}

bool VerifyReport::ok() const {
    return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

std::vector<std::string> VerifyReport::failures() const {
    std::vector<std::string> out;
    for (const PropertyResult& r : results)
        if (!r.passed) out.push_back(r.name);
    return out;
}

namespace {

struct Outcome {
    bool passed;
    std::string detail;
};

std::string sci(double v) {
    std::ostringstream s;
    s << std::setprecision(3) << std::scientific << v;
    return s.str();
}

Outcome at_most(double value, double limit, const std::string& what) {
    return {value <= limit, what + "=" + sci(value) + " (limit " + sci(limit) + ")"};
}

Matrix random_skew(std::size_t n, Rng& rng, double stddev = 1.0) {
    Matrix q(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            q(i, j) = rng.normal(0.0, stddev);
            q(j, i) = -q(i, j);
        }
    return q;
}

Matrix skew_with_norm(std::size_t n, double norm, Rng& rng) {
    Matrix q = random_skew(n, rng);
    return (norm / spectral_norm_est(q, 500)) * q;
}

double rel_frobenius(const Matrix& a, const Matrix& b) {
    const double ref = frobenius_norm(b);
    return frobenius_norm(a - b) / (ref > 0.0 ? ref : 1.0);
}

BlockOrthogonalAdapter random_adapter(std::size_t d, std::size_t b, int k, Rng& rng, double scale) {
    NeumannConfig cfg;
    cfg.terms = k;
    BlockOrthogonalAdapter a(d, b, cfg);
    a.randomize(rng, scale / std::sqrt(static_cast<double>(b)));
    return a;
}

class Runner {
public:
    Runner(VerifyReport& report, VerifySuite selected) : report_(report), selected_(selected) {}

    void run(VerifySuite suite, const std::string& name, const std::function<Outcome()>& body) {
        if (selected_ != VerifySuite::all && selected_ != suite) return;
        PropertyResult r;
        r.suite = to_string(suite);
        r.name = name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const Outcome o = body();
            r.passed = o.passed;
            r.detail = o.detail;
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("threw: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report_.results.push_back(std::move(r));
    }

private:
    VerifyReport& report_;
    VerifySuite selected_;
};

void skew_suite(Runner& run, std::uint64_t seed) {
    run.run(VerifySuite::skew, "skew.antisymmetry", [&] {
        Rng rng(seed);
        double worst = 0.0;
        for (std::size_t side : {2u, 3u, 5u, 8u, 16u}) {
            std::vector<double> u(CompactSkew::length_for(side));
            for (double& v : u) v = rng.normal();
            const Matrix q = unpack(CompactSkew(side, u));
            for (std::size_t i = 0; i < side; ++i)
                for (std::size_t j = 0; j < side; ++j) worst = std::max(worst, std::abs(q(i, j) + q(j, i)));
        }
        return at_most(worst, 0.0, "max|Q+Q^T|");
    });
    run.run(VerifySuite::skew, "skew.pack_roundtrip", [&] {
        Rng rng(seed + 1);
        for (std::size_t side : {1u, 2u, 4u, 7u, 12u}) {
            const Matrix q = random_skew(side, rng);
            if (!(unpack(pack(q)) == q)) return Outcome{false, "side " + std::to_string(side) + " did not round trip"};
        }
        return Outcome{true, "5 sides"};
    });
    run.run(VerifySuite::skew, "skew.apply_blocks_matches_dense", [&] {
        Rng rng(seed + 2);
        std::vector<CompactSkew> blocks;
        for (std::size_t side : {3u, 5u, 8u}) blocks.push_back(pack(random_skew(side, rng)));
        Matrix dense(16, 16);
        std::size_t off = 0;
        for (const CompactSkew& blk : blocks) {
            unpack_into(blk, dense.data() + off * 16 + off, 16);
            off += blk.side();
        }
        const Matrix x = rng.gaussian(16, 4);
        return at_most(max_abs(apply_blocks(blocks, x) - matmul(dense, x)), 1e-13, "max abs diff");
    });
    run.run(VerifySuite::skew, "skew.rejects_non_skew", [&] {
        Matrix q(3, 3);
        q(0, 1) = 1.0;
        q(1, 0) = 1.0;
        try {
            pack(q);
        } catch (const SymmetryError& e) {
            return Outcome{e.row() + e.col() == 1, "violation at (" + std::to_string(e.row()) + "," +
                                                              std::to_string(e.col()) + ")"};
        }
        return Outcome{false, "no SymmetryError"};
    });
}

void cayley_suite(Runner& run, std::uint64_t seed) {
    run.run(VerifySuite::cayley, "cayley.exact_orthogonality", [&] {
        Rng rng(seed + 10);
        double worst = 0.0;
        for (int t = 0; t < 50; ++t)
            worst = std::max(worst, orthogonality_error(cayley_exact(random_skew(2 + t % 15, rng))));
        return at_most(worst, 1e-10, "max ||R^T R - I||_F");
    });
    run.run(VerifySuite::cayley, "cayley.neumann_tail_bound", [&] {
        Rng rng(seed + 11);
        double worst_ratio = 0.0;
        for (int t = 0; t < 100; ++t) {
            const double norm = 0.05 + 0.85 * rng.uniform();
            const int k = 1 + t % 8;
            const Matrix q = skew_with_norm(2 + t % 9, norm, rng);
            NeumannConfig cfg;
            cfg.terms = k;
            const double err = spectral_norm_est(cayley_neumann(q, cfg) - cayley_exact(q), 500);
            worst_ratio = std::max(worst_ratio, err / neumann_tail_bound(norm, k));
        }
        return at_most(worst_ratio, 1.0, "max error/bound");
    });
    run.run(VerifySuite::cayley, "cayley.neumann_converges", [&] {
        Rng rng(seed + 12);
        const Matrix q = skew_with_norm(8, 0.3, rng);
        NeumannConfig cfg;
        cfg.terms = 30;
        return at_most(max_abs(cayley_neumann(q, cfg) - cayley_exact(q)), 1e-12, "k=30 max abs error");
    });
    run.run(VerifySuite::cayley, "cayley.norm_guard", [&] {
        Rng rng(seed + 13);
        NeumannConfig cfg;
        cfg.norm_guard = 0.9;
        try {
            cayley_neumann(skew_with_norm(6, 1.2, rng), cfg);
        } catch (const DivergenceRiskError& e) {
            return Outcome{true, "refused norm " + sci(e.norm_estimate())};
        }
        return Outcome{false, "norm 1.2 was accepted"};
    });
}

void layer_suite(Runner& run, std::uint64_t seed) {
    run.run(VerifySuite::layer, "layer.forward_equivalence", [&] {
        Rng rng(seed + 20);
        double worst = 0.0;
        for (int t = 0; t < 60; ++t) {
            const std::size_t b = std::size_t{1} << (1 + t % 3), d = b * (1 + t % 5), n = 3 + t % 11;
            const BlockOrthogonalAdapter a = random_adapter(d, b, 1 + t % 5, rng, 0.2);
            const Matrix w = rng.gaussian(d, n), x = rng.gaussian(d, 1 + t % 4);
            worst = std::max(worst, rel_frobenius(forward_input_centric(a, w, x), forward_weight_centric(a, w, x)));
        }
        return at_most(worst, 1e-11, "max relative Frobenius error");
    });
    run.run(VerifySuite::layer, "layer.identity_at_init", [&] {
        Rng rng(seed + 21);
        const Matrix w = rng.gaussian(24, 10), x = rng.gaussian(24, 3);
        const Matrix z = forward_input_centric(BlockOrthogonalAdapter(24, 8), w, x);
        return Outcome{z == matmul_tn(w, x), "identity adapter forward vs frozen forward"};
    });
    run.run(VerifySuite::layer, "layer.flop_counts", [&] {
        Rng rng(seed + 22);
        const std::uint64_t d = 64, b = 8, n = 40, m = 5;
        const BlockRotations rot = build_rotations(random_adapter(d, b, 3, rng, 0.2));
        const Matrix w = rng.gaussian(d, n), x = rng.gaussian(d, m);
        FlopMeter in;
        forward_input_centric(rot, w, x);
        const std::uint64_t fin = in.flops();
        FlopMeter wc;
        forward_weight_centric(rot, w, x);
        const std::uint64_t fwc = wc.flops();
        const bool ok = fin == 2 * d * b * m + 2 * n * d * m && fwc == 2 * n * d * d + 2 * n * d * m;
        return Outcome{ok, "input " + std::to_string(fin) + ", weight " + std::to_string(fwc)};
    });
    run.run(VerifySuite::layer, "layer.memory_gap", [&] {
        Rng rng(seed + 23);
        const std::size_t d = 256, n = 256;
        const BlockRotations rot = build_rotations(random_adapter(d, 16, 5, rng, 0.2));
        const Matrix w = rng.gaussian(d, n), x = rng.gaussian(d, 8);
        std::int64_t pin, pwc;
        {
            AllocMeter meter;
            forward_input_centric(rot, w, x);
            pin = meter.peak_bytes();
        }
        {
            AllocMeter meter;
            forward_weight_centric(rot, w, x);
            pwc = meter.peak_bytes();
        }
        const double need = 0.9 * 8.0 * static_cast<double>(d * n);
        return Outcome{static_cast<double>(pwc - pin) >= need, "peak gap " + std::to_string(pwc - pin) + " bytes"};
    });
    run.run(VerifySuite::layer, "layer.merge_then_forward", [&] {
        Rng rng(seed + 24);
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            const std::size_t b = 2 + t % 3 * 2, d = b * (2 + t % 4), n = 4 + t;
            const BlockOrthogonalAdapter a = random_adapter(d, b, 5, rng, 0.3);
            const Matrix w = rng.gaussian(d, n), x = rng.gaussian(d, 3);
            worst = std::max(worst, rel_frobenius(matmul_tn(merge(a, w), x), forward_input_centric(a, w, x)));
        }
        return at_most(worst, 1e-11, "max relative error");
    });
    run.run(VerifySuite::layer, "layer.column_drift_bound", [&] {
        Rng rng(seed + 25);
        double worst = -1.0;
        for (int t = 0; t < 20; ++t) {
            const BlockOrthogonalAdapter a = random_adapter(32, 8, 1 + t % 5, rng, 0.5);
            const Matrix w = rng.gaussian(32, 12), merged = merge(a, w);
            const double orth = orthogonality_error(materialize_r(a));
            for (std::size_t j = 0; j < w.cols(); ++j) {
                const double c = column_norm(w, j);
                worst = std::max(worst, std::abs(column_norm(merged, j) - c) - orth * c);
            }
        }
        return at_most(worst, 1e-14, "max drift minus bound");
    });
}

void quant_suite(Runner& run, std::uint64_t seed) {
    run.run(VerifySuite::quant, "quant.level_points_exact", [&] {
        const auto& levels = nf4_codebook().levels;
        Matrix w(4, 64);
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = 2.0 * levels[i % 16];
        return at_most(max_abs(dequantize(quantize(w)) - w), 0.0, "max abs error");
    });
    run.run(VerifySuite::quant, "quant.code_idempotence", [&] {
        Rng rng(seed + 30);
        const QuantizedMatrix q = quantize(rng.gaussian(1000, 64));
        return Outcome{quantize(dequantize(q)).codes == q.codes, "1000 Gaussian blocks"};
    });
    run.run(VerifySuite::quant, "quant.container_roundtrip", [&] {
        Rng rng(seed + 31);
        const QuantizedMatrix q = quantize(rng.gaussian(37, 29));
        std::stringstream a;
        write_quantized(a, q);
        const std::string bytes = a.str();
        const QuantizedMatrix back = read_quantized(a);
        std::stringstream b;
        write_quantized(b, back);
        return Outcome{back == q && b.str() == bytes, std::to_string(bytes.size()) + " bytes"};
    });
    run.run(VerifySuite::quant, "quant.staging_equivalence", [&] {
        Rng rng(seed + 32);
        const QuantizedMatrix q = quantize(rng.gaussian(96, 50));
        const BlockRotations rot = build_rotations(random_adapter(96, 16, 5, rng, 0.2));
        const Matrix x = rng.gaussian(96, 4);
        const Matrix full = qoft_forward(Nf4Weight(q), rot, x, {Staging::full, 16});
        const Matrix streamed = qoft_forward(Nf4Weight(q), rot, x, {Staging::streamed, 7});
        const Matrix oracle = forward_input_centric(rot, dequantize(q), x);
        return Outcome{full == streamed && rel_frobenius(full, oracle) <= 1e-12, "streamed vs full vs dequantized"};
    });
    run.run(VerifySuite::quant, "quant.streamed_peak_lower", [&] {
        Rng rng(seed + 33);
        const QuantizedMatrix q = quantize(rng.gaussian(1024, 1024));
        const Matrix y = rng.gaussian(1024, 8);
        std::int64_t full, streamed;
        {
            AllocMeter meter;
            frozen_product_tn(Nf4Weight(q), y, {Staging::full, 16});
            full = meter.peak_bytes();
        }
        {
            AllocMeter meter;
            frozen_product_tn(Nf4Weight(q), y, {Staging::streamed, 16});
            streamed = meter.peak_bytes();
        }
        return Outcome{streamed < full, "streamed " + std::to_string(streamed) + " vs full " + std::to_string(full)};
    });
}

void grad_suite(Runner& run, std::uint64_t seed) {
    GradcheckConfig cfg;
    cfg.seed = seed;
    GradcheckReport report;
    bool have = false;
    auto ensure = [&] {
        if (!have) report = gradcheck(cfg);
        have = true;
    };
    run.run(VerifySuite::grad, "grad.oft_finite_differences", [&] {
        ensure();
        return at_most(report.oft_worst(), 1e-6, "max relative error over k=1..5");
    });
    run.run(VerifySuite::grad, "grad.lora_finite_differences", [&] {
        ensure();
        return at_most(report.lora_max_rel, 1e-8, "max relative error");
    });
    run.run(VerifySuite::grad, "grad.init_factor_two", [&] {
        ensure();
        return at_most(report.init_factor_error, 1e-12, "relative deviation from 2(G - G^T)");
    });
}

void baseline_suite(Runner& run, std::uint64_t seed, const std::string& data_dir) {
    run.run(VerifySuite::baseline, "baseline.lora_zero_init", [&] {
        Rng rng(seed + 40);
        const Matrix w = rng.gaussian(20, 9), x = rng.gaussian(20, 3);
        return Outcome{lora_forward(w, LowRankAdapter::init(20, 9, 4, rng), x) == matmul_tn(w, x), "B = 0"};
    });
    run.run(VerifySuite::baseline, "baseline.lora_merge_then_forward", [&] {
        Rng rng(seed + 41);
        LowRankAdapter l = LowRankAdapter::init(24, 14, 3, rng, 6.0);
        l.b = rng.gaussian(3, 14, 0.5);
        const Matrix w = rng.gaussian(24, 14), x = rng.gaussian(24, 5);
        return at_most(rel_frobenius(matmul_tn(lora_merge(w, l), x), lora_forward(w, l, x)), 1e-12,
                       "relative error");
    });
    run.run(VerifySuite::baseline, "baseline.merge_gap_report", [&] {
        Rng rng(seed + 42);
        const Matrix w = rng.gaussian(64, 32);
        const BlockOrthogonalAdapter a = random_adapter(64, 16, 5, rng, 0.3);
        LowRankAdapter l = LowRankAdapter::init(64, 32, 4, rng);
        l.b = rng.gaussian(4, 32, 0.2);
        const MergeGapReport r = merge_gap_report(w, a, l);
        double colmax = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) colmax = std::max(colmax, column_norm(w, j));
        const bool ok = r.lora_max_abs_delta > 0.0 && r.oft_col_norm_drift <= r.oft_orthogonality_error * colmax + 1e-14;
        return Outcome{ok, "oft drift " + sci(r.oft_col_norm_drift) + ", orth " + sci(r.oft_orthogonality_error)};
    });
    if (data_dir.empty()) return;
    run.run(VerifySuite::baseline, "baseline.parameter_counts", [&] {
        std::size_t total = 0, bad = 0;
        std::string first_bad;
        for (const ArchTable& arch : load_arch_tables(data_dir + "/arch"))
            for (const CountCheck& c : check_expected_counts(arch)) {
                ++total;
                if (!c.passed) {
                    ++bad;
                    if (first_bad.empty()) first_bad = c.arch + " " + to_string(c.method);
                }
            }
        if (total == 0) return Outcome{false, "no expectations found"};
        return Outcome{bad == 0, std::to_string(total - bad) + "/" + std::to_string(total) + " match" +
                                     (first_bad.empty() ? "" : ", first mismatch " + first_bad)};
    });
}

}  // namespace

VerifyReport run_verify(const VerifyOptions& opts) {
    VerifyReport report;
    Runner run(report, opts.suite);
    skew_suite(run, opts.seed);
    cayley_suite(run, opts.seed);
    layer_suite(run, opts.seed);
    quant_suite(run, opts.seed);
    grad_suite(run, opts.seed);
    baseline_suite(run, opts.seed, opts.data_dir);
    return report;
}

void print_summary(std::ostream& out, const VerifyReport& report) {
    std::size_t width = 8;
    for (const PropertyResult& r : report.results) width = std::max(width, r.name.size());
    out << std::left << std::setw(9) << "suite" << std::setw(static_cast<int>(width) + 2) << "property" << std::setw(8)
        << "status" << std::setw(10) << "seconds" << "detail\n";
    std::size_t failed = 0;
    for (const PropertyResult& r : report.results) {
        if (!r.passed) ++failed;
        std::ostringstream secs;
        secs << std::fixed << std::setprecision(3) << r.seconds;
        out << std::left << std::setw(9) << r.suite << std::setw(static_cast<int>(width) + 2) << r.name
            << std::setw(8) << (r.passed ? "PASS" : "FAIL") << std::setw(10) << secs.str() << r.detail << '\n';
    }
    out << report.results.size() - failed << "/" << report.results.size() << " properties passed";
    if (failed) {
        out << "; failing:";
        for (const std::string& name : report.failures()) out << ' ' << name;
    }
    out << '\n';
}

}  // namespace oft

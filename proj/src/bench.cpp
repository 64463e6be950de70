// SPDX-License-Identifier: Apache-2.0
#include "oft/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "oft/adapter.hpp"
#include "oft/errors.hpp"
#include "oft/io.hpp"
#include "oft/lora.hpp"
#include "oft/numkit.hpp"
#include "oft/quant.hpp"

namespace oft {

BenchMode parse_bench_mode(const std::string& text) {
    for (BenchMode m : all_bench_modes())
        if (text == to_string(m)) return m;
    if (text == "weight-centric") return BenchMode::weight_centric;
    if (text == "input-centric") return BenchMode::input_centric;
    throw ConfigError("unknown bench mode '" + text + "'");
}

const char* to_string(BenchMode mode) {
    switch (mode) {
        case BenchMode::weight_centric: return "weight_centric";
        case BenchMode::input_centric: return "input_centric";
        case BenchMode::qoft: return "qoft";
        case BenchMode::lora: return "lora";
        case BenchMode::qlora: return "qlora";
    }
    return "?";
}

std::vector<BenchMode> all_bench_modes() {
    return {BenchMode::weight_centric, BenchMode::input_centric, BenchMode::qoft, BenchMode::lora, BenchMode::qlora};
}

void ForwardBenchOptions::validate() const {
    if (dims.empty()) throw ConfigError("bench: no dimensions given");
    if (modes.empty()) throw ConfigError("bench: no modes given");
    if (m == 0) throw ConfigError("bench: m must be positive");
    if (b < 2) throw ConfigError("bench: block size must be at least 2");
    if (k < 1) throw ConfigError("bench: k must be at least 1");
    if (repeats == 0) throw ConfigError("bench: repeats must be positive");
    for (std::size_t d : dims)
        if (d == 0 || d % b != 0)
            throw ConfigError("bench: d=" + std::to_string(d) + " is not a positive multiple of b=" +
                              std::to_string(b));
}

std::size_t matched_lora_rank(std::size_t b) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(b - 1) / 4.0)));
}

namespace {

struct Measured {
    std::uint64_t wall_ns = 0;
    std::uint64_t flops = 0;
    std::int64_t peak = 0;
};

template <typename F>
Measured measure(F&& run, std::size_t repeats, std::size_t warmups) {
    for (std::size_t i = 0; i < warmups; ++i) run();
    Measured out;
    {
        AllocMeter alloc;
        FlopMeter flops;
        run();
        out.peak = alloc.peak_bytes();
        out.flops = flops.flops();
    }
    std::vector<std::uint64_t> times(repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        run();
        const auto t1 = std::chrono::steady_clock::now();
        times[r] = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + repeats / 2, times.end());
    out.wall_ns = std::max<std::uint64_t>(times[repeats / 2], 1);
    return out;
}

BlockOrthogonalAdapter bench_adapter(std::size_t d, std::size_t b, int k, Rng& rng) {
    NeumannConfig cfg;
    cfg.terms = k;
    BlockOrthogonalAdapter a(d, b, cfg);
    a.randomize(rng, 0.1 / std::sqrt(static_cast<double>(b)));
    return a;
}

BenchRecord make_record(BenchMode mode, std::string variant, std::size_t d, std::size_t b, int k, std::size_t m,
                        const Measured& r, std::size_t repeats) {
    BenchRecord rec;
    rec.mode = mode;
    rec.variant = std::move(variant);
    rec.d = d;
    rec.n = d;
    rec.b = b;
    rec.k = k;
    rec.m = m;
    rec.wall_ns = r.wall_ns;
    rec.flops_est = r.flops;
    rec.peak_bytes = r.peak;
    rec.repeats = repeats;
    return rec;
}

template <typename T>
Measured time_dense_path(BenchMode mode, const BlockRotations& rot, const Matrix& w, const Matrix& x,
                         std::size_t repeats, std::size_t warmups) {
    const BasicMatrix<T> wt = convert<T>(w), xt = convert<T>(x);
    if (mode == BenchMode::weight_centric)
        return measure([&] { return forward_weight_centric(rot, wt, xt); }, repeats, warmups);
    return measure([&] { return forward_input_centric(rot, wt, xt); }, repeats, warmups);
}

}  // namespace

std::vector<BenchRecord> run_forward_bench(const ForwardBenchOptions& opts) {
    opts.validate();
    Rng rng(opts.seed);
    const std::size_t rank = opts.lora_rank ? opts.lora_rank : matched_lora_rank(opts.b);
    const StagingOptions streamed{Staging::streamed, 16};
    std::vector<BenchRecord> out;
    for (std::size_t d : opts.dims) {
        const Matrix w = rng.gaussian(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
        const Matrix x = rng.gaussian(d, opts.m);
        const BlockOrthogonalAdapter adapter = bench_adapter(d, opts.b, opts.k, rng);
        const BlockRotations rot = build_rotations(adapter);
        const bool need_quant = std::find_if(opts.modes.begin(), opts.modes.end(), [](BenchMode m) {
                                    return m == BenchMode::qoft || m == BenchMode::qlora;
                                }) != opts.modes.end();
        const QuantizedMatrix q = need_quant ? quantize(w) : QuantizedMatrix{};
        LowRankAdapter lora = LowRankAdapter::init(d, d, rank, rng);
        lora.b = rng.gaussian(rank, d, 0.01);

        for (BenchMode mode : opts.modes) {
            Measured r;
            std::string variant = "f64";
            switch (mode) {
                case BenchMode::weight_centric:
                case BenchMode::input_centric:
                    if (opts.single_precision) {
                        r = time_dense_path<float>(mode, rot, w, x, opts.repeats, opts.warmups);
                        variant = "f32";
                    } else {
                        r = time_dense_path<double>(mode, rot, w, x, opts.repeats, opts.warmups);
                    }
                    break;
                case BenchMode::qoft:
                    r = measure([&] { return qoft_forward(Nf4Weight(q), rot, x, streamed); }, opts.repeats,
                                opts.warmups);
                    variant = "streamed";
                    break;
                case BenchMode::lora:
                    r = measure([&] { return lora_forward(DenseWeight(w), lora, x, streamed); }, opts.repeats,
                                opts.warmups);
                    break;
                case BenchMode::qlora:
                    r = measure([&] { return lora_forward(Nf4Weight(q), lora, x, streamed); }, opts.repeats,
                                opts.warmups);
                    variant = "streamed";
                    break;
            }
            out.push_back(make_record(mode, variant, d, opts.b, opts.k, opts.m, r, opts.repeats));
        }
        if (opts.include_cnp) {
            const Measured r = measure([&] { return build_rotations(adapter); }, opts.repeats, opts.warmups);
            out.push_back(make_record(BenchMode::input_centric, "cnp", d, opts.b, opts.k, opts.m, r, opts.repeats));
        }
    }
    return out;
}

std::vector<BenchRecord> run_quant_bench(std::span<const std::size_t> dims, std::size_t m, std::size_t b, int k,
                                         std::size_t repeats, std::uint64_t seed) {
    ForwardBenchOptions check;
    check.dims.assign(dims.begin(), dims.end());
    check.m = m;
    check.b = b;
    check.k = k;
    check.repeats = repeats;
    check.validate();

    Rng rng(seed);
    const std::size_t warmups = 2, rank = matched_lora_rank(b);
    const StagingOptions streamed{Staging::streamed, 16}, full{Staging::full, 16};
    std::vector<BenchRecord> out;
    for (std::size_t d : dims) {
        const Matrix w = rng.gaussian(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
        const Matrix x = rng.gaussian(d, m);
        const BlockRotations rot = build_rotations(bench_adapter(d, b, k, rng));
        const QuantizedMatrix q = quantize(w);
        LowRankAdapter lora = LowRankAdapter::init(d, d, rank, rng);
        lora.b = rng.gaussian(rank, d, 0.01);

        auto add = [&](BenchMode mode, const char* variant, const Measured& r) {
            out.push_back(make_record(mode, variant, d, b, k, m, r, repeats));
        };
        add(BenchMode::qoft, "streamed",
            measure([&] { return qoft_forward(Nf4Weight(q), rot, x, streamed); }, repeats, warmups));
        add(BenchMode::qoft, "full", measure([&] { return qoft_forward(Nf4Weight(q), rot, x, full); }, repeats, warmups));
        add(BenchMode::qoft, "passthrough",
            measure([&] { return qoft_forward(DenseWeight(w), rot, x, streamed); }, repeats, warmups));
        add(BenchMode::input_centric, "f64",
            measure([&] { return forward_input_centric(rot, w, x); }, repeats, warmups));
        add(BenchMode::lora, "f64",
            measure([&] { return lora_forward(DenseWeight(w), lora, x, streamed); }, repeats, warmups));
        add(BenchMode::qlora, "streamed",
            measure([&] { return lora_forward(Nf4Weight(q), lora, x, streamed); }, repeats, warmups));
    }
    return out;
}

double dequant_overhead(std::span<const BenchRecord> records, std::size_t d) {
    const BenchRecord* quant = nullptr;
    const BenchRecord* pass = nullptr;
    for (const BenchRecord& r : records) {
        if (r.mode != BenchMode::qoft || r.d != d) continue;
        if (r.variant == "streamed") quant = &r;
        if (r.variant == "passthrough") pass = &r;
    }
    if (!quant || !pass) throw ConfigError("dequant_overhead: missing qoft rows for d=" + std::to_string(d));
    return (static_cast<double>(quant->wall_ns) - static_cast<double>(pass->wall_ns)) /
           static_cast<double>(quant->wall_ns);
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ConfigError("loglog_slope: need at least two paired points");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DataError("loglog_slope: values must be positive");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = static_cast<double>(x.size());
    const double denom = n * sxx - sx * sx;
    if (denom <= 0.0) throw DataError("loglog_slope: x values are all equal");
    return (n * sxy - sx * sy) / denom;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string bench_csv_header() { return "mode,variant,d,n,b,k,m,wall_ns,flops_est,peak_bytes,repeats"; }

void write_bench_csv(std::ostream& out, std::span<const BenchRecord> records) {
    out << bench_csv_header() << '\n';
    for (const BenchRecord& r : records)
        out << to_string(r.mode) << ',' << r.variant << ',' << r.d << ',' << r.n << ',' << r.b << ',' << r.k << ','
            << r.m << ',' << r.wall_ns << ',' << r.flops_est << ',' << r.peak_bytes << ',' << r.repeats << '\n';
}

namespace {

template <typename T>
T field(const std::string& text, std::size_t line) {
    try {
        std::size_t used = 0;
        T v;
        if constexpr (std::is_signed_v<T>)
            v = static_cast<T>(std::stoll(text, &used));
        else
            v = static_cast<T>(std::stoull(text, &used));
        if (used != text.size() || (!std::is_signed_v<T> && text.starts_with('-'))) throw std::invalid_argument("");
        return v;
    } catch (const std::logic_error&) {
        throw DataError("bench csv line " + std::to_string(line) + ": bad number '" + text + "'");
    }
}

}  // namespace

std::vector<BenchRecord> read_bench_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != bench_csv_header()) throw DataError("bench csv: missing or unexpected header");
    std::vector<BenchRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        if (cols.size() != 11)
            throw DataError("bench csv line " + std::to_string(lineno) + ": expected 11 columns, got " +
                            std::to_string(cols.size()));
        BenchRecord r;
        try {
            r.mode = parse_bench_mode(cols[0]);
        } catch (const ConfigError& e) {
            throw DataError("bench csv line " + std::to_string(lineno) + ": " + e.what());
        }
        r.variant = cols[1];
        r.d = field<std::size_t>(cols[2], lineno);
        r.n = field<std::size_t>(cols[3], lineno);
        r.b = field<std::size_t>(cols[4], lineno);
        r.k = field<int>(cols[5], lineno);
        r.m = field<std::size_t>(cols[6], lineno);
        r.wall_ns = field<std::uint64_t>(cols[7], lineno);
        r.flops_est = field<std::uint64_t>(cols[8], lineno);
        r.peak_bytes = field<std::int64_t>(cols[9], lineno);
        r.repeats = field<std::size_t>(cols[10], lineno);
        out.push_back(std::move(r));
    }
    return out;
}

void emit_csv(std::span<const BenchRecord> records, const std::string& path) {
    if (records.empty()) throw ConfigError("emit_csv: no records to write to " + path);
    std::ofstream out = io::open_for_write(path);
    write_bench_csv(out, records);
    out.flush();
    if (!out) throw IoError("emit_csv: write failed for " + path);
}

}  // namespace oft

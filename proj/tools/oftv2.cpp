// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "oft/adapter.hpp"
#include "oft/bench.hpp"
#include "oft/errors.hpp"
#include "oft/io.hpp"
#include "oft/params.hpp"
#include "oft/quant.hpp"
#include "oft/skew.hpp"
#include "oft/trainer.hpp"
#include "oft/verify.hpp"

namespace {

using namespace oft;

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("OFTV2_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (*env != '\0' && *end == '\0') return v;
        throw ConfigError(std::string("OFTV2_SEED is not an unsigned integer: '") + env + "'");
    }
    return 7;
}

void print_config(const std::string& command, const std::vector<std::pair<std::string, std::string>>& entries) {
    std::cout << "# oftv2 " << command << '\n';
    for (const auto& [k, v] : entries) std::cout << "#   " << k << " = " << v << '\n';
}

template <typename T>
std::string join(const std::vector<T>& xs) {
    std::ostringstream s;
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyArgs {
    std::string suite = "all";
    std::string data_dir = OFT_DATA_DIR;
    std::string mutate = "none";
};

int cmd_verify(const VerifyArgs& a, std::uint64_t seed) {
    VerifyOptions opts;
    opts.suite = parse_verify_suite(a.suite);
    opts.seed = seed;
    opts.data_dir = a.data_dir;
    print_config("verify", {{"suite", a.suite}, {"seed", std::to_string(seed)}, {"data_dir", a.data_dir},
                            {"mutate", a.mutate}});
    if (a.mutate == "skew-sign-flip") fault::set_skew_sign_flip(true);
    const VerifyReport report = run_verify(opts);
    fault::set_skew_sign_flip(false);
    print_summary(std::cout, report);
    return report.ok() ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::vector<std::size_t> dims{256, 512, 1024};
    std::vector<std::string> modes{"weight_centric", "input_centric", "qoft", "lora", "qlora"};
    std::size_t m = 8;
    std::size_t b = 32;
    int k = 5;
    std::size_t repeats = 5;
    std::size_t warmups = 2;
    std::string precision = "f64";
    bool cnp = false;
    bool quant = false;
    std::string out = "bench.csv";
};

int cmd_bench(const BenchArgs& a, std::uint64_t seed) {
    if (a.precision != "f64" && a.precision != "f32") throw ConfigError("--precision must be f64 or f32");
    print_config("bench", {{"dims", join(a.dims)},
                           {"modes", a.quant ? "quant suite" : join(a.modes)},
                           {"m", std::to_string(a.m)},
                           {"b", std::to_string(a.b)},
                           {"k", std::to_string(a.k)},
                           {"repeats", std::to_string(a.repeats)},
                           {"warmups", std::to_string(a.warmups)},
                           {"precision", a.precision},
                           {"cnp", a.cnp ? "true" : "false"},
                           {"seed", std::to_string(seed)},
                           {"out", a.out}});
    std::vector<BenchRecord> records;
    if (a.quant) {
        records = run_quant_bench(a.dims, a.m, a.b, a.k, a.repeats, seed);
    } else {
        ForwardBenchOptions o;
        o.dims = a.dims;
        o.modes.clear();
        for (const std::string& m : a.modes) o.modes.push_back(parse_bench_mode(m));
        o.m = a.m;
        o.b = a.b;
        o.k = a.k;
        o.repeats = a.repeats;
        o.warmups = a.warmups;
        o.single_precision = a.precision == "f32";
        o.include_cnp = a.cnp;
        o.seed = seed;
        records = run_forward_bench(o);
    }
    emit_csv(records, a.out);
    std::cout << "wrote " << records.size() << " records to " << a.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string task = "rotation-recovery";
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::string> adapter;
    std::optional<std::string> base;
    std::optional<std::size_t> steps;
    std::optional<double> lr;
    std::string out = "trace.csv";
};

int cmd_train(const TrainArgs& a, std::uint64_t seed) {
    TrainConfig cfg = TrainConfig::defaults_for(parse_task_kind(a.task));
    cfg.seed = seed;
    if (!a.config.empty()) cfg = load_train_config(a.config, cfg);
    if (a.adapter) cfg.adapter = parse_adapter_kind(*a.adapter);
    if (a.base) cfg.base = parse_base_kind(*a.base);
    if (a.steps) cfg.steps = *a.steps;
    if (a.lr) cfg.lr = *a.lr;
    for (const std::string& s : a.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        apply_config_entry(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();

    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream text(cfg.to_text());
    for (std::string line; std::getline(text, line);) {
        const auto eq = line.find('=');
        entries.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    entries.emplace_back("out", a.out);
    print_config("train", entries);

    const Trace t = run_task(cfg);
    save_trace_csv(a.out, t);
    std::cout << std::setprecision(6) << "initial_loss " << t.initial_loss << '\n'
              << "final_loss " << t.final_loss << '\n'
              << "loss_ratio " << (t.initial_loss > 0.0 ? t.final_loss / t.initial_loss : 0.0) << '\n';
    if (cfg.task == TaskKind::toy_classify)
        std::cout << "control_acc " << t.control_acc << '\n' << "final_acc " << t.final_acc << '\n';
    else
        std::cout << "merged_rel_error " << t.merged_rel_error << '\n';
    std::cout << "divergence_events " << t.divergence_events << '\n'
              << "wrote " << t.rows.size() << " trace rows to " << a.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// quantize / merge
// ---------------------------------------------------------------------------

struct QuantizeArgs {
    std::string in;
    std::string random;
    std::size_t blocksize = kDefaultQuantBlock;
    std::string out = "weight.qnf4";
};

Matrix random_weight(const std::string& shape, std::uint64_t seed) {
    const auto x = shape.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(shape);
        std::size_t used = 0;
        const std::size_t rows = std::stoull(shape.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(shape);
        const std::string tail = shape.substr(x + 1);
        const std::size_t cols = std::stoull(tail, &used);
        if (used != tail.size() || rows == 0 || cols == 0) throw std::invalid_argument(shape);
        Rng rng(seed);
        return rng.gaussian(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
    } catch (const std::logic_error&) {
        throw ConfigError("--random expects ROWSxCOLS, got '" + shape + "'");
    }
}

int cmd_quantize(const QuantizeArgs& a, std::uint64_t seed) {
    if (a.in.empty() == a.random.empty()) throw ConfigError("quantize needs exactly one of --in or --random");
    print_config("quantize", {{"in", a.in.empty() ? "(random)" : a.in},
                              {"random", a.random.empty() ? "(none)" : a.random},
                              {"blocksize", std::to_string(a.blocksize)},
                              {"seed", std::to_string(seed)},
                              {"out", a.out}});
    const Matrix w = a.in.empty() ? random_weight(a.random, seed) : io::load_matrix(a.in);
    const QuantizedMatrix q = quantize(w, a.blocksize);
    save_quantized(a.out, q);
    const Matrix back = dequantize(q);
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) sq += (w.data()[i] - back.data()[i]) * (w.data()[i] - back.data()[i]);
    std::cout << std::setprecision(6) << "shape " << w.rows() << "x" << w.cols() << '\n'
              << "blocks " << q.block_count() << '\n'
              << "rms_error " << std::sqrt(sq / static_cast<double>(w.size())) << '\n'
              << "wrote " << a.out << '\n';
    return kExitOk;
}

struct MergeArgs {
    std::string base;
    std::string adapter = "id";
    std::string layer;
    std::string out = "merged.dmat";
};

int cmd_merge(const MergeArgs& a) {
    if (a.base.empty()) throw ConfigError("merge needs --base");
    print_config("merge", {{"base", a.base},
                           {"adapter", a.adapter},
                           {"layer", a.layer.empty() ? "(first)" : a.layer},
                           {"out", a.out}});
    const std::string magic = io::peek_magic(a.base);
    Matrix w;
    if (magic == "QNF4")
        w = dequantize(load_quantized(a.base));
    else if (magic == "DMAT")
        w = io::load_matrix(a.base);
    else
        throw DataError("merge: '" + a.base + "' is neither a QNF4 nor a DMAT container");

    Matrix merged;
    if (a.adapter == "id") {
        merged = merge(BlockOrthogonalAdapter(w.rows(), w.rows()), w);
    } else {
        const std::vector<NamedAdapter> layers = load_adapters(a.adapter);
        const NamedAdapter* pick = nullptr;
        for (const NamedAdapter& l : layers)
            if (a.layer.empty() || l.name == a.layer) {
                pick = &l;
                break;
            }
        if (!pick) throw ConfigError("merge: no layer '" + a.layer + "' in " + a.adapter);
        merged = merge(pick->adapter, w);
        std::cout << "layer " << pick->name << '\n';
    }
    io::save_matrix(a.out, merged);
    std::cout << "shape " << merged.rows() << "x" << merged.cols() << '\n' << "wrote " << a.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// params
// ---------------------------------------------------------------------------

struct ParamsArgs {
    std::string arch;
    std::string method = "oft";
    std::size_t size = 32;
    bool check = false;
    std::string data_dir = OFT_DATA_DIR;
};

std::string with_commas(std::uint64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

int cmd_params(const ParamsArgs& a) {
    print_config("params", {{"arch", a.arch.empty() ? "(all)" : a.arch},
                            {"method", a.method},
                            {"size", std::to_string(a.size)},
                            {"check", a.check ? "true" : "false"},
                            {"data_dir", a.data_dir}});
    const AdapterKind method = parse_adapter_kind(a.method);
    const std::vector<ArchTable> tables = load_arch_tables(a.data_dir + "/arch");
    bool found = false;
    bool ok = true;
    for (const ArchTable& t : tables) {
        if (!a.arch.empty() && t.name != a.arch) continue;
        found = true;
        if (a.check) {
            for (const CountCheck& c : check_expected_counts(t)) {
                std::cout << std::left << std::setw(12) << c.arch << std::setw(6) << to_string(c.method)
                          << std::setw(5) << c.size << std::setw(14) << with_commas(c.count) << std::setw(8)
                          << format_millions(c.count) << "expected " << c.expected << "  "
                          << (c.passed ? "PASS" : "FAIL") << '\n';
                ok = ok && c.passed;
            }
            continue;
        }
        const std::uint64_t count =
            method == AdapterKind::oft ? count_params(t.layers, a.size) : count_params_lora(t.layers, a.size);
        std::cout << t.name << ' ' << a.method << (method == AdapterKind::oft ? " b=" : " r=") << a.size << " -> "
                  << with_commas(count) << " (" << format_millions(count) << "M)\n";
    }
    if (!found) throw ConfigError("unknown architecture '" + a.arch + "'");
    return ok ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string in;
};

int report_bench(const std::vector<BenchRecord>& rs) {
    std::map<std::string, std::vector<const BenchRecord*>> groups;
    for (const BenchRecord& r : rs) groups[std::string(to_string(r.mode)) + "/" + r.variant].push_back(&r);
    std::cout << std::left << std::setw(24) << "series" << std::setw(8) << "points" << std::setw(14) << "time slope"
              << "flop slope\n";
    for (const auto& [name, g] : groups) {
        std::vector<double> d, t, f;
        for (const BenchRecord* r : g) {
            d.push_back(static_cast<double>(r->d));
            t.push_back(static_cast<double>(r->wall_ns));
            f.push_back(static_cast<double>(r->flops_est));
        }
        std::cout << std::setw(24) << name << std::setw(8) << g.size();
        const bool spread = std::adjacent_find(d.begin(), d.end(), std::not_equal_to<>()) != d.end();
        if (g.size() >= 2 && spread)
            std::cout << std::fixed << std::setprecision(3) << std::setw(14) << loglog_slope(d, t) << loglog_slope(d, f);
        else
            std::cout << std::setw(14) << "-" << "-";
        std::cout << '\n' << std::defaultfloat;
    }
    return kExitOk;
}

int report_trace(const std::vector<TraceRow>& rows) {
    if (rows.empty()) throw DataError("report: trace has no rows");
    double q = 0.0, o = 0.0, c = 0.0, g = 0.0;
    for (const TraceRow& r : rows) {
        q = std::max(q, r.q_norm);
        o = std::max(o, r.orth_err);
        c = std::max(c, r.col_drift);
        g = std::max(g, r.grad_norm);
    }
    std::cout << std::setprecision(6) << "rows " << rows.size() << '\n'
              << "first_step " << rows.front().step << " loss " << rows.front().loss << '\n'
              << "last_step " << rows.back().step << " loss " << rows.back().loss << '\n';
    if (!std::isnan(rows.back().acc)) std::cout << "last_acc " << rows.back().acc << '\n';
    std::cout << "max_q_norm " << q << '\n'
              << "max_orth_err " << o << '\n'
              << "max_col_drift " << c << '\n'
              << "max_grad_norm " << g << '\n';
    return kExitOk;
}

int cmd_report(const ReportArgs& a) {
    print_config("report", {{"in", a.in}});
    std::ifstream in = io::open_for_read(a.in);
    std::string header;
    std::getline(in, header);
    in.seekg(0);
    if (header == bench_csv_header()) return report_bench(read_bench_csv(in));
    return report_trace(read_trace_csv(in));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Orthogonal finetuning toolkit: verification, benchmarks, training and containers", "oftv2"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.set_version_flag("--version", "oftv2 1.0.0");

    std::optional<std::uint64_t> seed_flag;
    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed_flag, "RNG seed (default: $OFTV2_SEED, else 7)");
    };

    VerifyArgs va;
    auto* verify = app.add_subcommand("verify", "Run the property suites and print a summary table");
    verify->add_option("--suite", va.suite, "Suite to run")
        ->check(CLI::IsMember({"all", "cayley", "skew", "layer", "quant", "grad", "baseline"}));
    verify->add_option("--data-dir", va.data_dir, "Directory with the bundled data files");
    verify->add_option("--mutate", va.mutate, "Inject a known fault to exercise the harness")
        ->check(CLI::IsMember({"none", "skew-sign-flip"}));
    add_seed(verify);

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Time the forward paths and write a CSV of measurements");
    bench->add_option("--dims", ba.dims, "Comma-separated dimensions (n = d)")->delimiter(',');
    bench->add_option("--modes", ba.modes, "Comma-separated modes")
        ->delimiter(',')
        ->check(CLI::IsMember({"weight_centric", "input_centric", "qoft", "lora", "qlora"}));
    bench->add_option("--m", ba.m, "Batch columns");
    bench->add_option("--b", ba.b, "Block size");
    bench->add_option("--k", ba.k, "Neumann terms");
    bench->add_option("--repeats", ba.repeats, "Timed repeats (median reported)");
    bench->add_option("--warmups", ba.warmups, "Untimed warmup runs");
    bench->add_option("--precision", ba.precision, "Float width of the dense paths")
        ->check(CLI::IsMember({"f64", "f32"}));
    bench->add_flag("--cnp", ba.cnp, "Add a row per dimension timing the rotation construction");
    bench->add_flag("--quant", ba.quant, "Run the quantized-path comparison instead of --modes");
    bench->add_option("--out", ba.out, "Output CSV path");
    add_seed(bench);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train an adapter on a synthetic task and write its trace");
    train->add_option("--task", ta.task, "Task")
        ->check(CLI::IsMember({"rotation-recovery", "toy-classify"}));
    train->add_option("--config", ta.config, "key=value config file applied over the task defaults");
    train->add_option("--set", ta.sets, "Extra key=value override, repeatable")->default_str("");
    train->add_option("--adapter", ta.adapter, "Adapter kind (default: task config)")
        ->check(CLI::IsMember({"oft", "lora"}));
    train->add_option("--base", ta.base, "Frozen base precision (default: task config)")
        ->check(CLI::IsMember({"full", "nf4"}));
    train->add_option("--steps", ta.steps, "Optimizer steps (default: task config)");
    train->add_option("--lr", ta.lr, "Adam learning rate (default: task config)");
    train->add_option("--out", ta.out, "Trace CSV path");
    add_seed(train);

    QuantizeArgs qa;
    auto* quant = app.add_subcommand("quantize", "Encode a dense weight as a QNF4 container");
    quant->add_option("--in", qa.in, "DMAT input weight");
    quant->add_option("--random", qa.random, "Generate a Gaussian ROWSxCOLS weight instead of reading one");
    quant->add_option("--blocksize", qa.blocksize, "Elements per quantization block");
    quant->add_option("--out", qa.out, "QNF4 output path");
    add_seed(quant);

    MergeArgs ma;
    auto* mergec = app.add_subcommand("merge", "Fold an orthogonal adapter into a base weight");
    mergec->add_option("--base", ma.base, "QNF4 or DMAT base weight");
    mergec->add_option("--adapter", ma.adapter, "OFT2 adapter file, or 'id' for the identity");
    mergec->add_option("--layer", ma.layer, "Layer name inside the adapter file (default: first)");
    mergec->add_option("--out", ma.out, "DMAT output path");

    ParamsArgs pa;
    auto* params = app.add_subcommand("params", "Count trainable parameters for a bundled architecture");
    params->add_option("--arch", pa.arch, "Architecture name from the bundled tables (default: all)");
    params->add_option("--method", pa.method, "Adapter kind")->check(CLI::IsMember({"oft", "lora"}));
    params->add_option("--size", pa.size, "Block size (oft) or rank (lora)");
    params->add_flag("--check", pa.check, "Compare every bundled expectation at two-decimal millions");
    params->add_option("--data-dir", pa.data_dir, "Directory with the bundled data files");

    ReportArgs ra;
    auto* report = app.add_subcommand("report", "Summarize a bench or trace CSV");
    report->add_option("--in", ra.in, "Bench or trace CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::uint64_t seed = seed_flag ? *seed_flag : default_seed();
        if (verify->parsed()) return cmd_verify(va, seed);
        if (bench->parsed()) return cmd_bench(ba, seed);
        if (train->parsed()) return cmd_train(ta, seed);
        if (quant->parsed()) return cmd_quantize(qa, seed);
        if (mergec->parsed()) return cmd_merge(ma);
        if (params->parsed()) return cmd_params(pa);
        if (report->parsed()) return cmd_report(ra);
    } catch (const ConfigError& e) {
        std::cerr << "oftv2: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "oftv2: " << e.what() << '\n';
        return kExitIo;
    } catch (const DataError& e) {
        std::cerr << "oftv2: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "oftv2: " << e.what() << '\n';
        return kExitFailed;
    }
    return kExitUsage;
}

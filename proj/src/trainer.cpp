// SPDX-License-Identifier: Apache-2.0
#include "oft/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>

#include "oft/io.hpp"

namespace oft {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::for_sizes(const AdamConfig& config, std::span<const std::size_t> sizes) {
    AdamState s;
    s.config = config;
    for (std::size_t n : sizes) {
        s.first.emplace_back(n, 0.0);
        s.second.emplace_back(n, 0.0);
    }
    return s;
}

void adam_step(AdamState& state, std::span<const ParamView> params) {
    if (params.size() != state.first.size())
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " tensors but state holds " +
                         std::to_string(state.first.size()));
    for (std::size_t t = 0; t < params.size(); ++t)
        if (params[t].value.size() != state.first[t].size() || params[t].grad.size() != state.first[t].size())
            throw ShapeError("adam_step: tensor " + std::to_string(t) + " does not match its moments");

    const AdamConfig& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& m = state.first[p];
        auto& v = state.second[p];
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = params[p].grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double mh = m[i] / bias1, vh = v[i] / bias2;
            params[p].value[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TaskKind parse_task_kind(const std::string& text) {
    if (text == "rotation-recovery" || text == "rotation_recovery") return TaskKind::rotation_recovery;
    if (text == "toy-classify" || text == "toy_classify") return TaskKind::toy_classify;
    throw ConfigError("unknown task '" + text + "' (expected rotation-recovery or toy-classify)");
}

const char* to_string(TaskKind kind) {
    return kind == TaskKind::rotation_recovery ? "rotation-recovery" : "toy-classify";
}

BaseKind parse_base_kind(const std::string& text) {
    if (text == "full") return BaseKind::full;
    if (text == "nf4") return BaseKind::nf4;
    throw ConfigError("unknown base '" + text + "' (expected full or nf4)");
}

const char* to_string(BaseKind kind) { return kind == BaseKind::full ? "full" : "nf4"; }

TrainConfig TrainConfig::defaults_for(TaskKind task) {
    TrainConfig c;
    c.task = task;
    if (task == TaskKind::toy_classify) {
        c.d = 32;
        c.n = 64;
        c.b = 8;
        c.k = 5;
        c.lora_rank = 4;
        c.steps = 600;
        c.lr = 1e-2;
        c.batch = 64;
        c.log_every = 10;
        c.shift_norm = 1.5;
        c.separation = 5.0;
    }
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("train config: " + field + " " + why);
    };
    if (d == 0) fail("d", "must be >= 1");
    if (n == 0) fail("n", "must be >= 1");
    if (adapter == AdapterKind::oft) {
        if (b == 0 || d % b != 0)
            fail("b", "must divide d (" + std::to_string(b) + " vs " + std::to_string(d) + ")");
    }
    if (k < 1) fail("k", "must be >= 1");
    if (adapter == AdapterKind::lora && lora_rank == 0) fail("lora_rank", "must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be positive");
    if (batch == 0) fail("batch", "must be >= 1");
    if (log_every == 0) fail("log_every", "must be >= 1");
    if (!(shift_norm >= 0.0)) fail("shift_norm", "must be >= 0");
    if (task == TaskKind::rotation_recovery && adapter != AdapterKind::oft)
        fail("adapter", "must be oft for rotation-recovery");
    if (task == TaskKind::rotation_recovery && !(shift_norm < 1.0)) fail("shift_norm", "must be < 1 here");
    if (task == TaskKind::toy_classify) {
        if (classes < 2) fail("classes", "must be >= 2");
        if (eval_size == 0) fail("eval_size", "must be >= 1");
        if (b == 0 || d % b != 0) fail("b", "must divide d (the domain shift is block-diagonal)");
    }
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError("train config: bad value '" + value + "' for " + key);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void apply_config_entry(TrainConfig& c, const std::string& key, const std::string& value) {
    if (key == "task") c.task = parse_task_kind(value);
    else if (key == "adapter") c.adapter = parse_adapter_kind(value);
    else if (key == "base") c.base = parse_base_kind(value);
    else if (key == "d") c.d = parse_number<std::size_t>(key, value);
    else if (key == "n") c.n = parse_number<std::size_t>(key, value);
    else if (key == "b") c.b = parse_number<std::size_t>(key, value);
    else if (key == "k") c.k = parse_number<int>(key, value);
    else if (key == "lora_rank") c.lora_rank = parse_number<std::size_t>(key, value);
    else if (key == "lora_alpha") c.lora_alpha = parse_number<double>(key, value);
    else if (key == "steps") c.steps = parse_number<std::size_t>(key, value);
    else if (key == "lr") c.lr = parse_number<double>(key, value);
    else if (key == "batch") c.batch = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "log_every") c.log_every = parse_number<std::size_t>(key, value);
    else if (key == "shift_norm") c.shift_norm = parse_number<double>(key, value);
    else if (key == "classes") c.classes = parse_number<std::size_t>(key, value);
    else if (key == "eval_size") c.eval_size = parse_number<std::size_t>(key, value);
    else if (key == "separation") c.separation = parse_number<double>(key, value);
    else throw ConfigError("train config: unknown key '" + key + "'");
}

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "task=" << to_string(task) << '\n'
       << "adapter=" << to_string(adapter) << '\n'
       << "base=" << to_string(base) << '\n'
       << "d=" << d << '\n'
       << "n=" << n << '\n'
       << "b=" << b << '\n'
       << "k=" << k << '\n'
       << "lora_rank=" << lora_rank << '\n'
       << "lora_alpha=" << fmt(lora_alpha) << '\n'
       << "steps=" << steps << '\n'
       << "lr=" << fmt(lr) << '\n'
       << "batch=" << batch << '\n'
       << "seed=" << seed << '\n'
       << "log_every=" << log_every << '\n'
       << "shift_norm=" << fmt(shift_norm) << '\n'
       << "classes=" << classes << '\n'
       << "eval_size=" << eval_size << '\n'
       << "separation=" << fmt(separation) << '\n';
    return os.str();
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("train config line " + std::to_string(lineno) + ": expected key=value");
        apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
    std::ifstream in = io::open_for_read(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_train_config(buf.str(), base);
    } catch (const ConfigError& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Shared task plumbing
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kDataStream = 0x5bd1e9955bd1e995ULL;
constexpr std::uint64_t kInitStream = 0x27d4eb2f165667c5ULL;

struct FrozenBase {
    Matrix dense;  // full weight, or the dequantized NF4 weight
    QuantizedMatrix quantized;
    BaseKind kind = BaseKind::full;

    FrozenBase(const Matrix& w, BaseKind k) : kind(k) {
        if (k == BaseKind::nf4) {
            quantized = quantize(w);
            dense = dequantize(quantized);
        } else {
            dense = w;
        }
    }

    std::unique_ptr<WeightSource> source() const {
        if (kind == BaseKind::nf4) return std::make_unique<Nf4Weight>(quantized);
        return std::make_unique<DenseWeight>(dense);
    }
};

// Block-diagonal rotation with every block the exact Cayley transform of a
// random skew generator scaled to spectral norm `norm`.
BlockRotations random_rotation(std::size_t d, std::size_t b, double norm, Rng& rng) {
    BlockRotations rot;
    rot.block_size = b;
    for (std::size_t blk = 0; blk < d / b; ++blk) {
        Matrix q(b, b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = i + 1; j < b; ++j) {
                const double v = rng.normal();
                q(i, j) = v;
                q(j, i) = -v;
            }
        const double est = spectral_norm_est(q, 200);
        q = (est > 0.0 ? norm / est : 0.0) * q;
        rot.rotation.push_back(cayley_exact(q));
    }
    return rot;
}

struct OftDiagnostics {
    double q_norm = 0.0;
    double orth_err = 0.0;
    double col_drift = 0.0;
};

OftDiagnostics oft_diagnostics(const BlockOrthogonalAdapter& a, const BlockRotations& rot, const Matrix& w) {
    OftDiagnostics out;
    for (const CompactSkew& s : a.blocks()) out.q_norm = std::max(out.q_norm, spectral_norm_est(unpack(s), 32));
    double sq = 0.0;
    for (const Matrix& r : rot.rotation) {
        const double e = orthogonality_error(r);
        sq += e * e;
    }
    out.orth_err = std::sqrt(sq);
    const Matrix merged = merge(rot, w);
    for (std::size_t j = 0; j < w.cols(); ++j)
        out.col_drift = std::max(out.col_drift, std::abs(column_norm(merged, j) - column_norm(w, j)));
    return out;
}

double max_col_norm(const Matrix& w) {
    double m = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) m = std::max(m, column_norm(w, j));
    return m;
}

std::vector<std::size_t> block_sizes(const BlockOrthogonalAdapter& a) {
    std::vector<std::size_t> sizes;
    for (const CompactSkew& s : a.blocks()) sizes.push_back(s.size());
    return sizes;
}

std::vector<ParamView> block_views(BlockOrthogonalAdapter& a, const AdapterGradients& g) {
    std::vector<ParamView> views;
    for (std::size_t i = 0; i < a.block_count(); ++i) views.push_back({a.blocks()[i].values(), g.blocks[i]});
    return views;
}

bool diverged(double loss, double reference) {
    return !std::isfinite(loss) || (reference > 0.0 && loss > 1e6 * reference);
}

}  // namespace

// ---------------------------------------------------------------------------
// Rotation recovery
// ---------------------------------------------------------------------------

Trace task_rotation_recovery(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.task != TaskKind::rotation_recovery) throw ConfigError("task_rotation_recovery: wrong task in config");
    Rng rng(cfg.seed);
    Rng data(cfg.seed ^ kDataStream);

    const FrozenBase base(rng.gaussian(cfg.d, cfg.n, 1.0 / std::sqrt(static_cast<double>(cfg.d))), cfg.base);
    const auto src = base.source();
    const BlockRotations teacher = random_rotation(cfg.d, cfg.b, cfg.shift_norm, rng);

    NeumannConfig neumann;
    neumann.terms = cfg.k;
    BlockOrthogonalAdapter adapter(cfg.d, cfg.b, neumann);
    AdamState adam = AdamState::for_sizes({cfg.lr}, block_sizes(adapter));

    const Matrix eval_x = data.gaussian(cfg.d, cfg.eval_size);
    const Matrix eval_target = qoft_forward(*src, teacher, eval_x);
    auto eval_loss = [&](const BlockRotations& rot) {
        const Matrix diff = qoft_forward(*src, rot, eval_x) - eval_target;
        return 0.5 * frobenius_norm(diff) * frobenius_norm(diff) / static_cast<double>(cfg.eval_size);
    };

    Trace trace;
    trace.config = cfg;
    trace.base_max_col_norm = max_col_norm(base.dense);
    trace.initial_loss = eval_loss(build_rotations(adapter));
    const double inv_m = 1.0 / static_cast<double>(cfg.batch);

    for (std::size_t step = 0;; ++step) {
        const BlockRotations rot = build_rotations(adapter, true);
        const Matrix x = data.gaussian(cfg.d, cfg.batch);
        const Matrix diff = qoft_forward(*src, rot, x) - qoft_forward(*src, teacher, x);
        const double fn = frobenius_norm(diff);
        const double loss = 0.5 * fn * fn * inv_m;
        if (diverged(loss, trace.initial_loss)) ++trace.divergence_events;

        const Matrix g_y = frozen_product(*src, inv_m * diff);
        const AdapterGradients grads = backward_rotation(adapter, rot, x, g_y);

        if (step % cfg.log_every == 0 || step == cfg.steps) {
            const OftDiagnostics diag = oft_diagnostics(adapter, rot, base.dense);
            trace.rows.push_back({step, loss, std::numeric_limits<double>::quiet_NaN(), diag.q_norm, diag.orth_err,
                                  diag.col_drift, grads.norm()});
        }
        if (step == cfg.steps || !std::isfinite(loss)) break;
        adam_step(adam, block_views(adapter, grads));
    }

    const BlockRotations final_rot = build_rotations(adapter);
    trace.final_loss = eval_loss(final_rot);
    const Matrix gap = merge(final_rot, base.dense) - merge(teacher, base.dense);
    trace.merged_rel_error = frobenius_norm(gap) / frobenius_norm(base.dense);
    return trace;
}

// ---------------------------------------------------------------------------
// Toy classification
//
// Frozen network: logits = V^T [relu(W1^T x); 1], with V ridge-fit on the
// source domain. The target domain is the source pushed through a
// block-diagonal rotation; only the adapter on W1 is trained.
// ---------------------------------------------------------------------------

namespace {

struct Samples {
    Matrix x;  // d x count
    std::vector<std::size_t> labels;
};

Samples draw_samples(const Matrix& means, std::size_t count, const BlockRotations* shift, Rng& rng) {
    const std::size_t d = means.cols(), classes = means.rows();
    Samples s;
    s.x = Matrix(d, count);
    s.labels.resize(count);
    for (std::size_t c = 0; c < count; ++c) {
        const std::size_t label = static_cast<std::size_t>(rng.next_u64() % classes);
        s.labels[c] = label;
        for (std::size_t i = 0; i < d; ++i) s.x(i, c) = means(label, i) + rng.normal();
    }
    if (shift) s.x = rotate_input(*shift, s.x);
    return s;
}

Matrix relu(const Matrix& pre) {
    Matrix h = pre;
    for (double& v : h.values()) v = std::max(v, 0.0);
    return h;
}

// Appends a row of ones.
Matrix with_bias(const Matrix& h) {
    Matrix out(h.rows() + 1, h.cols());
    std::copy_n(h.data(), h.size(), out.data());
    for (std::size_t c = 0; c < h.cols(); ++c) out(h.rows(), c) = 1.0;
    return out;
}

Matrix fit_readout(const Matrix& features, const std::vector<std::size_t>& labels, std::size_t classes) {
    const Matrix h = with_bias(features);
    const std::size_t p = h.rows(), count = h.cols();
    Matrix gram = matmul_nt(h, h);
    const double ridge = 1e-3 * static_cast<double>(count);
    for (std::size_t i = 0; i < p; ++i) gram(i, i) += ridge;
    Matrix targets(count, classes);
    for (std::size_t c = 0; c < count; ++c) targets(c, labels[c]) = 1.0;
    return solve(gram, matmul(h, targets));  // p x classes
}

double accuracy(const Matrix& logits, const std::vector<std::size_t>& labels) {
    std::size_t hits = 0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.rows(); ++k)
            if (logits(k, c) > logits(best, c)) best = k;
        hits += best == labels[c];
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct Head {
    Matrix readout;  // (n + 1) x classes

    Matrix logits(const Matrix& pre) const { return matmul_tn(readout, with_bias(relu(pre))); }

    // Mean cross-entropy and its gradient with respect to the pre-activation.
    double loss_and_grad(const Matrix& pre, const std::vector<std::size_t>& labels, Matrix& g_pre) const {
        const Matrix z = logits(pre);
        const std::size_t classes = z.rows(), m = z.cols(), n = pre.rows();
        Matrix g_logits(classes, m);
        double loss = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double top = z(0, c);
            for (std::size_t k = 1; k < classes; ++k) top = std::max(top, z(k, c));
            double sum = 0.0;
            for (std::size_t k = 0; k < classes; ++k) sum += std::exp(z(k, c) - top);
            loss += std::log(sum) + top - z(labels[c], c);
            for (std::size_t k = 0; k < classes; ++k)
                g_logits(k, c) = (std::exp(z(k, c) - top) / sum - (k == labels[c] ? 1.0 : 0.0)) / static_cast<double>(m);
        }
        const Matrix g_h = matmul(readout, g_logits);  // (n + 1) x m, bias row dropped below
        g_pre = Matrix(n, m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < m; ++c) g_pre(i, c) = pre(i, c) > 0.0 ? g_h(i, c) : 0.0;
        return loss / static_cast<double>(m);
    }
};

}  // namespace

Trace task_toy_classify(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.task != TaskKind::toy_classify) throw ConfigError("task_toy_classify: wrong task in config");
    Rng rng(cfg.seed);
    Rng data(cfg.seed ^ kDataStream);
    Rng init(cfg.seed ^ kInitStream);

    Matrix means = rng.gaussian(cfg.classes, cfg.d);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        double norm = 0.0;
        for (std::size_t i = 0; i < cfg.d; ++i) norm += means(c, i) * means(c, i);
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < cfg.d; ++i) means(c, i) *= cfg.separation / norm;
    }
    const Matrix w1 = rng.gaussian(cfg.d, cfg.n, 1.0 / std::sqrt(static_cast<double>(cfg.d)));
    const BlockRotations shift = random_rotation(cfg.d, cfg.b, cfg.shift_norm, rng);

    // Readout is fit once on the full-precision source-domain network.
    const Samples source = draw_samples(means, 4 * cfg.eval_size, nullptr, data);
    const Head head{fit_readout(relu(matmul_tn(w1, source.x)), source.labels, cfg.classes)};

    const FrozenBase base(w1, cfg.base);
    const auto src = base.source();
    const Samples eval = draw_samples(means, cfg.eval_size, &shift, data);

    NeumannConfig neumann;
    neumann.terms = cfg.k;
    BlockOrthogonalAdapter oft_adapter(cfg.adapter == AdapterKind::oft ? cfg.d : cfg.b, cfg.b, neumann);
    LowRankAdapter lora;
    AdamState adam;
    if (cfg.adapter == AdapterKind::oft) {
        adam = AdamState::for_sizes({cfg.lr}, block_sizes(oft_adapter));
    } else {
        lora = LowRankAdapter::init(cfg.d, cfg.n, cfg.lora_rank, init, cfg.lora_alpha);
        const std::vector<std::size_t> sizes{lora.a.size(), lora.b.size()};
        adam = AdamState::for_sizes({cfg.lr}, sizes);
    }

    auto pre_activation = [&](const Matrix& x, const BlockRotations* rot) {
        if (cfg.adapter == AdapterKind::oft) return qoft_forward(*src, *rot, x);
        return lora_forward(*src, lora, x);
    };

    Trace trace;
    trace.config = cfg;
    trace.base_max_col_norm = max_col_norm(base.dense);
    trace.control_acc = accuracy(head.logits(frozen_product_tn(*src, eval.x)), eval.labels);
    {
        Matrix unused;
        const BlockRotations rot = build_rotations(oft_adapter);
        trace.initial_loss = head.loss_and_grad(pre_activation(eval.x, &rot), eval.labels, unused);
    }

    for (std::size_t step = 0;; ++step) {
        const Samples batch = draw_samples(means, cfg.batch, &shift, data);
        const BlockRotations rot = build_rotations(oft_adapter, cfg.adapter == AdapterKind::oft);
        const Matrix pre = pre_activation(batch.x, &rot);
        Matrix g_pre;
        const double loss = head.loss_and_grad(pre, batch.labels, g_pre);
        if (diverged(loss, trace.initial_loss)) ++trace.divergence_events;

        AdapterGradients oft_grads;
        LoraGradients lora_grads;
        double grad_norm = 0.0;
        if (cfg.adapter == AdapterKind::oft) {
            oft_grads = backward_rotation(oft_adapter, rot, batch.x, frozen_product(*src, g_pre));
            grad_norm = oft_grads.norm();
        } else {
            lora_grads = lora_backward(*src, lora, batch.x, g_pre);
            grad_norm = lora_grads.norm();
        }

        if (step % cfg.log_every == 0 || step == cfg.steps) {
            TraceRow row{step, loss, accuracy(head.logits(pre_activation(eval.x, &rot)), eval.labels), 0.0, 0.0, 0.0,
                         grad_norm};
            if (cfg.adapter == AdapterKind::oft) {
                const OftDiagnostics diag = oft_diagnostics(oft_adapter, rot, base.dense);
                row.q_norm = diag.q_norm;
                row.orth_err = diag.orth_err;
                row.col_drift = diag.col_drift;
            } else {
                const Matrix merged = lora_merge(base.dense, lora);
                for (std::size_t j = 0; j < cfg.n; ++j)
                    row.col_drift = std::max(row.col_drift, std::abs(column_norm(merged, j) - column_norm(base.dense, j)));
            }
            trace.rows.push_back(row);
        }
        if (step == cfg.steps || !std::isfinite(loss)) break;

        if (cfg.adapter == AdapterKind::oft) {
            adam_step(adam, block_views(oft_adapter, oft_grads));
        } else {
            const ParamView views[] = {{std::span<double>(lora.a.data(), lora.a.size()), lora_grads.a.values()},
                                       {std::span<double>(lora.b.data(), lora.b.size()), lora_grads.b.values()}};
            adam_step(adam, views);
        }
    }

    const BlockRotations final_rot = build_rotations(oft_adapter);
    const Matrix final_pre = pre_activation(eval.x, &final_rot);
    Matrix unused;
    trace.final_loss = head.loss_and_grad(final_pre, eval.labels, unused);
    trace.final_acc = accuracy(head.logits(final_pre), eval.labels);
    return trace;
}

Trace run_task(const TrainConfig& cfg) {
    return cfg.task == TaskKind::rotation_recovery ? task_rotation_recovery(cfg) : task_toy_classify(cfg);
}

// ---------------------------------------------------------------------------
// Trace output and diagnostics
// ---------------------------------------------------------------------------

void write_trace_csv(std::ostream& out, const Trace& trace) {
    out << "step,loss,acc,q_norm,orth_err,col_drift,grad_norm\n";
    out << std::setprecision(17);
    for (const TraceRow& r : trace.rows) {
        out << r.step << ',' << r.loss << ',';
        if (std::isnan(r.acc)) out << "nan";
        else out << r.acc;
        out << ',' << r.q_norm << ',' << r.orth_err << ',' << r.col_drift << ',' << r.grad_norm << '\n';
    }
}

void save_trace_csv(const std::string& path, const Trace& trace) {
    std::ofstream out = io::open_for_write(path);
    write_trace_csv(out, trace);
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "step,loss,acc,q_norm,orth_err,col_drift,grad_norm")
        throw DataError("trace csv: missing or unexpected header");
    std::vector<TraceRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            char* end = nullptr;
            const double x = std::strtod(cell.c_str(), &end);
            if (cell.empty() || *end != '\0')
                throw DataError("trace csv line " + std::to_string(lineno) + ": bad value '" + cell + "'");
            v.push_back(x);
        }
        if (v.size() != 7 || !(v[0] >= 0.0))
            throw DataError("trace csv line " + std::to_string(lineno) + ": expected 7 columns");
        rows.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6]});
    }
    return rows;
}

StabilityMetrics stability_probe(const Trace& trace) {
    StabilityMetrics m;
    m.divergence_events = trace.divergence_events;
    for (const TraceRow& r : trace.rows) {
        m.max_q_norm = std::max(m.max_q_norm, r.q_norm);
        m.max_orth_err = std::max(m.max_orth_err, r.orth_err);
        m.max_col_drift = std::max(m.max_col_drift, r.col_drift);
        m.max_grad_norm = std::max(m.max_grad_norm, r.grad_norm);
        if (trace.config.adapter == AdapterKind::oft &&
            r.col_drift > r.orth_err * trace.base_max_col_norm + 1e-12 * (1.0 + trace.base_max_col_norm))
            m.drift_within_bound = false;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

namespace {

double central_max_rel(std::span<double> params, std::span<const double> analytic,
                       const std::function<double()>& loss, double step, double floor) {
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = loss();
        params[i] = saved - step;
        const double down = loss();
        params[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double den = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / den);
    }
    return worst;
}

double half_sq(const Matrix& z) {
    const double f = frobenius_norm(z);
    return 0.5 * f * f;
}

}  // namespace

double GradcheckReport::oft_worst() const {
    double w = 0.0;
    for (double v : oft_max_rel) w = std::max(w, v);
    return w;
}

GradcheckReport gradcheck(const GradcheckConfig& cfg) {
    Rng rng(cfg.seed);
    GradcheckReport report;

    struct Shape {
        std::size_t d, b, n, m;
    };
    const Shape shapes[] = {{6, 3, 4, 2}, {8, 4, 8, 3}, {8, 2, 5, 1}, {12, 4, 20, 4}};
    for (int k = 1; k <= 5; ++k) {
        double worst = 0.0;
        for (const Shape& s : shapes) {
            NeumannConfig neumann;
            neumann.terms = k;
            BlockOrthogonalAdapter a(s.d, s.b, neumann);
            a.randomize(rng, 0.25);
            const Matrix w0 = rng.gaussian(s.d, s.n);
            Matrix x = rng.gaussian(s.d, s.m);
            auto loss = [&] { return half_sq(forward_input_centric(a, w0, x)); };
            const AdapterGradients g = backward(a, w0, x, forward_input_centric(a, w0, x));
            for (std::size_t blk = 0; blk < a.block_count(); ++blk)
                worst = std::max(worst, central_max_rel(a.blocks()[blk].values(), g.blocks[blk], loss,
                                                        cfg.oft_step, cfg.floor));
            worst = std::max(worst, central_max_rel(x.values(), g.input.values(), loss, cfg.oft_step, cfg.floor));
        }
        report.oft_max_rel.push_back(worst);
    }

    for (int t = 0; t < 4; ++t) {
        const std::size_t d = 4 + 2 * t, n = 3 + 3 * t, r = 1 + t % 3;
        const Matrix w = rng.gaussian(d, n);
        Matrix x = rng.gaussian(d, 1 + t);
        LowRankAdapter l = LowRankAdapter::init(d, n, r, rng, 2.0);
        l.b = rng.gaussian(r, n, 0.3);
        auto loss = [&] { return half_sq(lora_forward(w, l, x)); };
        const LoraGradients g = lora_backward(w, l, x, lora_forward(w, l, x));
        double worst = report.lora_max_rel;
        worst = std::max(worst, central_max_rel(l.a.values(), g.a.values(), loss, cfg.lora_step, cfg.floor));
        worst = std::max(worst, central_max_rel(l.b.values(), g.b.values(), loss, cfg.lora_step, cfg.floor));
        worst = std::max(worst, central_max_rel(x.values(), g.input.values(), loss, cfg.lora_step, cfg.floor));
        report.lora_max_rel = worst;
    }

    {
        const std::size_t d = 6, b = 3;
        const BlockOrthogonalAdapter a(d, b);
        const Matrix w0 = rng.gaussian(d, 4), x = rng.gaussian(d, 3), g_z = rng.gaussian(4, 3);
        const AdapterGradients g = backward(a, w0, x, g_z);
        const Matrix g_y = matmul(w0, g_z);
        double err = 0.0, scale = 0.0;
        for (std::size_t blk = 0; blk < d / b; ++blk) {
            std::size_t idx = 0;
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = i + 1; j < b; ++j) {
                    double gij = 0.0, gji = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) {
                        gij += x(blk * b + i, c) * g_y(blk * b + j, c);
                        gji += x(blk * b + j, c) * g_y(blk * b + i, c);
                    }
                    const double expected = 2.0 * (gij - gji);
                    err = std::max(err, std::abs(g.blocks[blk][idx++] - expected));
                    scale = std::max(scale, std::abs(expected));
                }
        }
        report.init_factor_error = scale > 0.0 ? err / scale : err;
    }
    return report;
}

}  // namespace oft

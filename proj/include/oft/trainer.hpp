// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale training harness: Adam, two synthetic tasks, finite-difference
// gradient checking and per-step stability diagnostics.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "oft/adapter.hpp"
#include "oft/lora.hpp"
#include "oft/numkit.hpp"
#include "oft/params.hpp"
#include "oft/quant.hpp"

namespace oft {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> first;
    std::vector<std::vector<double>> second;
    std::uint64_t step = 0;

    // Zero moments for tensors of the given sizes.
    static AdamState for_sizes(const AdamConfig& config, std::span<const std::size_t> sizes);
};

struct ParamView {
    std::span<double> value;
    std::span<const double> grad;
};

// Bias-corrected Adam update applied in place. Throws ShapeError when the
// views do not line up with the state's moments.
void adam_step(AdamState& state, std::span<const ParamView> params);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class TaskKind { rotation_recovery, toy_classify };
enum class BaseKind { full, nf4 };

TaskKind parse_task_kind(const std::string& text);
const char* to_string(TaskKind kind);
BaseKind parse_base_kind(const std::string& text);
const char* to_string(BaseKind kind);

struct TrainConfig {
    TaskKind task = TaskKind::rotation_recovery;
    AdapterKind adapter = AdapterKind::oft;
    BaseKind base = BaseKind::full;
    std::size_t d = 64;
    std::size_t n = 32;
    std::size_t b = 8;
    int k = 5;
    std::size_t lora_rank = 4;
    double lora_alpha = 0.0;  // <= 0 means alpha = rank
    std::size_t steps = 2000;
    double lr = 1e-2;
    std::size_t batch = 32;
    std::uint64_t seed = 7;
    std::size_t log_every = 10;
    // Spectral norm of each teacher / domain-shift generator block.
    double shift_norm = 0.3;
    std::size_t classes = 4;
    std::size_t eval_size = 1024;
    // Distance of the class means from the origin.
    double separation = 3.0;

    static TrainConfig defaults_for(TaskKind task);
    // Throws ConfigError naming the offending field.
    void validate() const;
    // "key=value" lines in a fixed order; parse(to_text()) round trips.
    std::string to_text() const;
};

// Applies "key=value" lines ('#' comments, blank lines allowed) on top of
// `base`. Unknown keys and malformed values raise ConfigError.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});
// Single "key=value" assignment, as accepted on the command line.
void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct TraceRow {
    std::size_t step = 0;
    double loss = 0.0;
    double acc = 0.0;        // NaN for regression tasks
    double q_norm = 0.0;     // max over blocks of the spectral norm estimate
    double orth_err = 0.0;   // root-sum-square of per-block orthogonality errors
    double col_drift = 0.0;  // max column-norm change of the merged weight
    double grad_norm = 0.0;
};

struct Trace {
    TrainConfig config;
    std::vector<TraceRow> rows;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    // Frozen model on the evaluation set (classification) and after training.
    double control_acc = 0.0;
    double final_acc = 0.0;
    // ||R W0 - R* W0||_F / ||W0||_F (rotation recovery only).
    double merged_rel_error = 0.0;
    // Largest column norm of the frozen base, for the drift bound.
    double base_max_col_norm = 0.0;
    std::size_t divergence_events = 0;
};

Trace task_rotation_recovery(const TrainConfig& cfg);
Trace task_toy_classify(const TrainConfig& cfg);
Trace run_task(const TrainConfig& cfg);

// Columns: step,loss,acc,q_norm,orth_err,col_drift,grad_norm
void write_trace_csv(std::ostream& out, const Trace& trace);
void save_trace_csv(const std::string& path, const Trace& trace);
// Rows only; throws DataError on a bad header or malformed line.
std::vector<TraceRow> read_trace_csv(std::istream& in);

struct StabilityMetrics {
    double max_q_norm = 0.0;
    double max_orth_err = 0.0;
    double max_col_drift = 0.0;
    double max_grad_norm = 0.0;
    // col_drift <= orth_err * base_max_col_norm at every logged step.
    bool drift_within_bound = true;
    std::size_t divergence_events = 0;
};

StabilityMetrics stability_probe(const Trace& trace);

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradcheckConfig {
    std::uint64_t seed = 1;
    double oft_step = 1e-5;
    // LoRA losses are quadratic per coordinate, so a wide step is exact up to rounding.
    double lora_step = 1e-3;
    double floor = 1e-4;
};

struct GradcheckReport {
    std::vector<double> oft_max_rel;  // index k - 1, k = 1..5
    double lora_max_rel = 0.0;
    // max |dL/du - 2 (G_ij - G_ji)| at Q = 0, relative to the largest entry.
    double init_factor_error = 0.0;

    double oft_worst() const;
};

GradcheckReport gradcheck(const GradcheckConfig& cfg = {});

}  // namespace oft

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Timing, flop and peak-allocation measurements for the forward paths.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace oft {

enum class BenchMode { weight_centric, input_centric, qoft, lora, qlora };

BenchMode parse_bench_mode(const std::string& text);
const char* to_string(BenchMode mode);
std::vector<BenchMode> all_bench_modes();

struct BenchRecord {
    BenchMode mode = BenchMode::input_centric;
    // f64 | f32 | cnp | streamed | full | passthrough
    std::string variant = "f64";
    std::size_t d = 0;
    std::size_t n = 0;
    std::size_t b = 0;
    int k = 0;
    std::size_t m = 0;
    std::uint64_t wall_ns = 0;
    std::uint64_t flops_est = 0;
    std::int64_t peak_bytes = 0;
    std::size_t repeats = 0;

    bool operator==(const BenchRecord&) const = default;
};

struct ForwardBenchOptions {
    std::vector<std::size_t> dims{256, 512, 1024};
    std::vector<BenchMode> modes = all_bench_modes();
    std::size_t m = 8;
    std::size_t b = 32;
    int k = 5;
    std::size_t repeats = 5;
    std::size_t warmups = 2;
    bool single_precision = false;
    // Adds one "cnp" row per dimension timing the rotation construction alone.
    bool include_cnp = false;
    // 0 picks the rank whose parameter count matches the orthogonal adapter.
    std::size_t lora_rank = 0;
    std::uint64_t seed = 7;

    void validate() const;
};

// Rank r with r (d + n) closest to the orthogonal adapter's d (b - 1) / 2 at n = d.
std::size_t matched_lora_rank(std::size_t b);

// One record per (d, mode) in input order, n = d. Inputs are built outside
// the timed region; wall_ns is the median over `repeats` after `warmups`.
std::vector<BenchRecord> run_forward_bench(const ForwardBenchOptions& opts);

// For every d: qoft with streamed, full and pass-through staging, the
// full-precision input-centric path, and lora vs qlora at the matched rank.
std::vector<BenchRecord> run_quant_bench(std::span<const std::size_t> dims, std::size_t m, std::size_t b, int k,
                                         std::size_t repeats, std::uint64_t seed = 7);

// (qoft streamed - qoft pass-through) / qoft streamed at dimension d.
double dequant_overhead(std::span<const BenchRecord> records, std::size_t d);

// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

std::string bench_csv_header();
void write_bench_csv(std::ostream& out, std::span<const BenchRecord> records);
std::vector<BenchRecord> read_bench_csv(std::istream& in);
// Throws ConfigError on an empty list and IoError naming the path.
void emit_csv(std::span<const BenchRecord> records, const std::string& path);

}  // namespace oft

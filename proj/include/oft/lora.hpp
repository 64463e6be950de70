// SPDX-License-Identifier: Apache-2.0
#pragma once

// Low-rank baseline: z = W^T x + scaling * B^T (A^T x) over a frozen (possibly
// quantized) base, plus the merge / requantization comparison against the
// orthogonal adapter.

#include <cstddef>
#include <string>
#include <vector>

#include "oft/adapter.hpp"
#include "oft/numkit.hpp"
#include "oft/quant.hpp"

namespace oft {

struct LowRankAdapter {
    Matrix a;  // d x rank
    Matrix b;  // rank x n
    double scaling = 1.0;

    std::size_t rank() const { return a.cols(); }
    std::size_t parameter_count() const { return a.size() + b.size(); }

    // A ~ N(0, 1/d), B = 0, scaling = alpha / rank. alpha <= 0 means alpha = rank.
    static LowRankAdapter init(std::size_t d, std::size_t n, std::size_t rank, Rng& rng, double alpha = 0.0);
};

// Never forms A B.
Matrix lora_forward(const WeightSource& w, const LowRankAdapter& l, const Matrix& x,
                    const StagingOptions& opts = {});
Matrix lora_forward(const Matrix& w, const LowRankAdapter& l, const Matrix& x);
Matrix lora_forward(const QuantizedMatrix& w, const LowRankAdapter& l, const Matrix& x);

struct LoraGradients {
    Matrix a;
    Matrix b;
    Matrix input;

    double norm() const;
};

// Gradients summed over the batch.
LoraGradients lora_backward(const WeightSource& w, const LowRankAdapter& l, const Matrix& x, const Matrix& g_z);
LoraGradients lora_backward(const Matrix& w, const LowRankAdapter& l, const Matrix& x, const Matrix& g_z);

// W + scaling * A B.
Matrix lora_merge(const Matrix& w, const LowRankAdapter& l);

struct MergeGapReport {
    double lora_max_abs_delta = 0.0;     // max |scaling (A B)_ij|
    double oft_col_norm_drift = 0.0;     // max_i | ||(R W)_i|| - ||W_i|| |
    double oft_max_abs_delta = 0.0;      // max |(R W - W)_ij|
    double oft_orthogonality_error = 0.0;
    double base_requant_rms = 0.0;       // RMS(dequant(quant(W)) - W)
    double lora_requant_rms = 0.0;       // same for W + scaling A B
    double oft_requant_rms = 0.0;        // same for R W
    double lora_merged_absmax = 0.0;
    double oft_merged_absmax = 0.0;
    double base_absmax = 0.0;

    // Flat "key=value" lines in a fixed order.
    std::string to_kv() const;
    static std::string csv_header();
    std::string to_csv_row() const;
};

MergeGapReport merge_gap_report(const Matrix& w, const BlockOrthogonalAdapter& oft, const LowRankAdapter& lora,
                                std::size_t blocksize = kDefaultQuantBlock);

}  // namespace oft

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Blockwise 4-bit NormalFloat quantization with double-quantized block scales,
// and the quantized-base orthogonal forward z = Dequant(W)^T R^T x.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "oft/adapter.hpp"
#include "oft/numkit.hpp"

namespace oft {

// Inverse of the standard normal CDF, 0 < p < 1.
double normal_quantile(double p);

struct Nf4Codebook {
    std::array<double, 16> levels{};

    std::uint8_t zero_index() const;
    // Nearest level to t; exact ties go to the lower index.
    std::uint8_t encode(double t) const;
};

// 16 levels from evenly spaced standard-normal quantiles: 7 negative, an exact
// zero, 8 positive, scaled so the extremes are -1 and +1.
Nf4Codebook build_codebook();
const Nf4Codebook& nf4_codebook();

inline constexpr std::size_t kDefaultQuantBlock = 64;
inline constexpr std::size_t kScaleGroup = 256;

// Entries are quantized over the row-major flattening in blocks of
// `blocksize`; each block keeps its absmax, and the absmax values are
// themselves stored as 8-bit affine codes per group of kScaleGroup blocks.
struct QuantizedMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t blocksize = kDefaultQuantBlock;
    std::vector<std::uint8_t> codes;     // two per byte, even index in the low nibble
    std::vector<std::uint8_t> absmax_q;  // one per block
    std::vector<float> group_scale;      // one per scale group
    std::vector<float> group_offset;

    std::size_t element_count() const { return rows * cols; }
    std::size_t block_count() const { return (element_count() + blocksize - 1) / blocksize; }
    std::uint8_t code(std::size_t flat_index) const {
        const std::uint8_t byte = codes[flat_index / 2];
        return (flat_index & 1) ? static_cast<std::uint8_t>(byte >> 4) : static_cast<std::uint8_t>(byte & 0x0f);
    }
    // Block scale after double-quantization round trip.
    double block_absmax(std::size_t block) const;

    bool operator==(const QuantizedMatrix&) const = default;
};

// Throws DataError on non-finite entries, ConfigError on blocksize 0.
QuantizedMatrix quantize(const Matrix& w, std::size_t blocksize = kDefaultQuantBlock);
Matrix dequantize(const QuantizedMatrix& q);
// Rows [row_begin, row_begin + row_count) into out (row_count x cols).
void dequantize_rows(const QuantizedMatrix& q, std::size_t row_begin, std::size_t row_count, double* out);

// ---------------------------------------------------------------------------
// Frozen weights
// ---------------------------------------------------------------------------

// Read-only d x n base weight that can be decoded a row range at a time. The
// adapters only see this interface, so any codec can sit behind it.
class WeightSource {
public:
    virtual ~WeightSource() = default;
    virtual std::size_t rows() const = 0;
    virtual std::size_t cols() const = 0;
    virtual void decode_rows(std::size_t row_begin, std::size_t row_count, double* out) const = 0;
    // Row-major storage when the weight is already decoded, else nullptr.
    virtual const double* contiguous() const { return nullptr; }
};

// Pass-through codec over a full-precision matrix.
class DenseWeight final : public WeightSource {
public:
    explicit DenseWeight(const Matrix& w) : w_(&w) {}
    std::size_t rows() const override { return w_->rows(); }
    std::size_t cols() const override { return w_->cols(); }
    void decode_rows(std::size_t row_begin, std::size_t row_count, double* out) const override;
    const double* contiguous() const override { return w_->data(); }

private:
    const Matrix* w_;
};

class Nf4Weight final : public WeightSource {
public:
    explicit Nf4Weight(const QuantizedMatrix& q) : q_(&q) {}
    std::size_t rows() const override { return q_->rows; }
    std::size_t cols() const override { return q_->cols; }
    void decode_rows(std::size_t row_begin, std::size_t row_count, double* out) const override;

private:
    const QuantizedMatrix* q_;
};

enum class Staging { full, streamed };

struct StagingOptions {
    Staging staging = Staging::streamed;
    // Rows decoded per step when streaming.
    std::size_t rows_per_stage = 16;
};

// W^T y, decoding W either all at once or a row block at a time.
Matrix frozen_product_tn(const WeightSource& w, const Matrix& y, const StagingOptions& opts = {});
// W g, same staging policy.
Matrix frozen_product(const WeightSource& w, const Matrix& g, const StagingOptions& opts = {});

// z = Dequant(W)^T (R^T x).
Matrix qoft_forward(const WeightSource& w, const BlockRotations& rot, const Matrix& x,
                    const StagingOptions& opts = {});
Matrix qoft_forward(const QuantizedMatrix& q, const BlockOrthogonalAdapter& adapter, const Matrix& x,
                    const StagingOptions& opts = {});

// ---------------------------------------------------------------------------
// "QNF4" container
//
//   bytes 0-3  magic "QNF4"
//   byte  4    version (1)
//   u64 rows, u64 cols, u64 blocksize, u32 scale group size
//   ceil(rows*cols/2) code bytes, block_count absmax bytes,
//   then per scale group: f32 scale, f32 offset
// All little-endian.
// ---------------------------------------------------------------------------

void write_quantized(std::ostream& out, const QuantizedMatrix& q);
QuantizedMatrix read_quantized(std::istream& in);
void save_quantized(const std::string& path, const QuantizedMatrix& q);
QuantizedMatrix load_quantized(const std::string& path);

}  // namespace oft

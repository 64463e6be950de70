// SPDX-License-Identifier: Apache-2.0
#include "oft/quant.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

#include "oft/io.hpp"

namespace oft {

// ---------------------------------------------------------------------------
// Codebook
// ---------------------------------------------------------------------------

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must lie in (0, 1)");
    // Acklam's rational approximation, then one Halley step against erfc.
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

Nf4Codebook build_codebook() {
    // Quantile range trimmed symmetrically so the outermost level is finite.
    const double offset = 0.5 * ((1.0 - 1.0 / 30.0) + (1.0 - 1.0 / 32.0));
    std::vector<double> v;
    for (int i = 0; i < 8; ++i) v.push_back(normal_quantile(offset + (0.5 - offset) * i / 8.0));
    v.push_back(0.0);
    for (int i = 0; i < 7; ++i) v.push_back(-normal_quantile(offset + (0.5 - offset) * i / 7.0));
    std::sort(v.begin(), v.end());
    const double top = std::max(std::abs(v.front()), std::abs(v.back()));
    Nf4Codebook cb;
    for (std::size_t i = 0; i < 16; ++i) cb.levels[i] = v[i] / top;
    cb.levels[0] = -1.0;
    cb.levels[15] = 1.0;
    return cb;
}

const Nf4Codebook& nf4_codebook() {
    static const Nf4Codebook cb = build_codebook();
    return cb;
}

std::uint8_t Nf4Codebook::zero_index() const {
    for (std::uint8_t i = 0; i < 16; ++i)
        if (levels[i] == 0.0) return i;
    return 0;
}

std::uint8_t Nf4Codebook::encode(double t) const {
    std::uint8_t best = 0;
    double best_dist = std::abs(t - levels[0]);
    for (std::uint8_t i = 1; i < 16; ++i) {
        const double dist = std::abs(t - levels[i]);
        if (dist < best_dist) {
            best = i;
            best_dist = dist;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Quantize / dequantize
// ---------------------------------------------------------------------------

double QuantizedMatrix::block_absmax(std::size_t block) const {
    const std::size_t g = block / kScaleGroup;
    return static_cast<double>(group_offset[g]) + static_cast<double>(absmax_q[block]) * static_cast<double>(group_scale[g]);
}

QuantizedMatrix quantize(const Matrix& w, std::size_t blocksize) {
    if (blocksize == 0) throw ConfigError("quantize: blocksize must be >= 1");
    if (!all_finite(w)) throw DataError("quantize: input contains non-finite values");
    const Nf4Codebook& cb = nf4_codebook();

    QuantizedMatrix q;
    q.rows = w.rows();
    q.cols = w.cols();
    q.blocksize = blocksize;
    const std::size_t count = q.element_count();
    const std::size_t blocks = q.block_count();
    const std::size_t groups = (blocks + kScaleGroup - 1) / kScaleGroup;
    q.codes.assign((count + 1) / 2, 0);
    q.absmax_q.assign(blocks, 0);
    q.group_scale.assign(groups, 0.0f);
    q.group_offset.assign(groups, 0.0f);

    std::vector<double> absmax(blocks, 0.0);
    const double* src = w.data();
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t begin = blk * blocksize, end = std::min(count, begin + blocksize);
        double m = 0.0;
        for (std::size_t i = begin; i < end; ++i) m = std::max(m, std::abs(src[i]));
        absmax[blk] = m;
        const std::uint8_t zero = cb.zero_index();
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint8_t c = m > 0.0 ? cb.encode(src[i] / m) : zero;
            q.codes[i / 2] |= static_cast<std::uint8_t>((i & 1) ? c << 4 : c);
        }
    }

    // Second level: 8-bit affine code per absmax, min/max per scale group.
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t begin = g * kScaleGroup, end = std::min(blocks, begin + kScaleGroup);
        const auto [lo, hi] = std::minmax_element(absmax.begin() + begin, absmax.begin() + end);
        const float offset = static_cast<float>(*lo);
        const float scale = static_cast<float>((*hi - *lo) / 255.0);
        q.group_offset[g] = offset;
        q.group_scale[g] = scale;
        for (std::size_t blk = begin; blk < end; ++blk) {
            double code = 0.0;
            if (scale > 0.0f) code = std::nearbyint((absmax[blk] - offset) / static_cast<double>(scale));
            q.absmax_q[blk] = static_cast<std::uint8_t>(std::clamp(code, 0.0, 255.0));
        }
    }
    return q;
}

void dequantize_rows(const QuantizedMatrix& q, std::size_t row_begin, std::size_t row_count, double* out) {
    if (row_begin + row_count > q.rows) throw ShapeError("dequantize_rows: row range out of bounds");
    const auto& levels = nf4_codebook().levels;
    const std::size_t begin = row_begin * q.cols, end = (row_begin + row_count) * q.cols;
    std::size_t i = begin;
    while (i < end) {
        const std::size_t blk = i / q.blocksize;
        const std::size_t stop = std::min(end, (blk + 1) * q.blocksize);
        const double scale = q.block_absmax(blk);
        for (; i < stop; ++i) *out++ = levels[q.code(i)] * scale;
    }
}

Matrix dequantize(const QuantizedMatrix& q) {
    Matrix w(q.rows, q.cols);
    dequantize_rows(q, 0, q.rows, w.data());
    return w;
}

// ---------------------------------------------------------------------------
// Frozen weights and the quantized-base forward
// ---------------------------------------------------------------------------

void DenseWeight::decode_rows(std::size_t row_begin, std::size_t row_count, double* out) const {
    if (row_begin + row_count > w_->rows()) throw ShapeError("decode_rows: row range out of bounds");
    std::copy_n(w_->data() + row_begin * w_->cols(), row_count * w_->cols(), out);
}

void Nf4Weight::decode_rows(std::size_t row_begin, std::size_t row_count, double* out) const {
    dequantize_rows(*q_, row_begin, row_count, out);
}

namespace {
std::size_t stage_rows(const WeightSource& w, const StagingOptions& opts) {
    if (opts.staging == Staging::full) return std::max<std::size_t>(w.rows(), 1);
    return std::max<std::size_t>(opts.rows_per_stage, 1);
}
}  // namespace

Matrix frozen_product_tn(const WeightSource& w, const Matrix& y, const StagingOptions& opts) {
    if (y.rows() != w.rows())
        throw ShapeError("frozen_product_tn: weight has " + std::to_string(w.rows()) + " rows but input has " +
                         std::to_string(y.rows()));
    const std::size_t n = w.cols(), m = y.cols();
    Matrix z(n, m);
    if (const double* dense = w.contiguous()) {
        kernels::gemm_tn_accumulate<double>(n, m, w.rows(), dense, n, y.data(), m, z.data(), m);
        return z;
    }
    const std::size_t step = stage_rows(w, opts);
    Buffer<double> stage(std::min(step, w.rows()) * n);
    for (std::size_t r0 = 0; r0 < w.rows(); r0 += step) {
        const std::size_t rows = std::min(step, w.rows() - r0);
        w.decode_rows(r0, rows, stage.data());
        kernels::gemm_tn_accumulate<double>(n, m, rows, stage.data(), n, y.data() + r0 * m, m, z.data(), m);
    }
    return z;
}

Matrix frozen_product(const WeightSource& w, const Matrix& g, const StagingOptions& opts) {
    if (g.rows() != w.cols())
        throw ShapeError("frozen_product: weight has " + std::to_string(w.cols()) + " columns but input has " +
                         std::to_string(g.rows()) + " rows");
    const std::size_t n = w.cols(), m = g.cols();
    Matrix out(w.rows(), m);
    if (const double* dense = w.contiguous()) {
        kernels::gemm_accumulate<double>(w.rows(), m, n, dense, n, g.data(), m, out.data(), m);
        return out;
    }
    const std::size_t step = stage_rows(w, opts);
    Buffer<double> stage(std::min(step, w.rows()) * n);
    for (std::size_t r0 = 0; r0 < w.rows(); r0 += step) {
        const std::size_t rows = std::min(step, w.rows() - r0);
        w.decode_rows(r0, rows, stage.data());
        kernels::gemm_accumulate<double>(rows, m, n, stage.data(), n, g.data(), m, out.data() + r0 * m, m);
    }
    return out;
}

Matrix qoft_forward(const WeightSource& w, const BlockRotations& rot, const Matrix& x, const StagingOptions& opts) {
    if (w.rows() != rot.dim())
        throw ShapeError("qoft_forward: adapter dim " + std::to_string(rot.dim()) + " but weight has " +
                         std::to_string(w.rows()) + " rows");
    return frozen_product_tn(w, rotate_input(rot, x), opts);
}

Matrix qoft_forward(const QuantizedMatrix& q, const BlockOrthogonalAdapter& adapter, const Matrix& x,
                    const StagingOptions& opts) {
    return qoft_forward(Nf4Weight(q), build_rotations(adapter), x, opts);
}

// ---------------------------------------------------------------------------
// QNF4 container
// ---------------------------------------------------------------------------

void write_quantized(std::ostream& out, const QuantizedMatrix& q) {
    io::write_magic(out, "QNF4");
    io::write_u8(out, 1);
    io::write_u64(out, q.rows);
    io::write_u64(out, q.cols);
    io::write_u64(out, q.blocksize);
    io::write_u32(out, static_cast<std::uint32_t>(kScaleGroup));
    out.write(reinterpret_cast<const char*>(q.codes.data()), static_cast<std::streamsize>(q.codes.size()));
    out.write(reinterpret_cast<const char*>(q.absmax_q.data()), static_cast<std::streamsize>(q.absmax_q.size()));
    for (std::size_t g = 0; g < q.group_scale.size(); ++g) {
        io::write_f32(out, q.group_scale[g]);
        io::write_f32(out, q.group_offset[g]);
    }
}

QuantizedMatrix read_quantized(std::istream& in) {
    io::expect_magic(in, "QNF4");
    const std::uint8_t version = io::read_u8(in);
    if (version != 1) throw DataError("QNF4: unsupported version " + std::to_string(version));
    QuantizedMatrix q;
    q.rows = io::read_u64(in);
    q.cols = io::read_u64(in);
    q.blocksize = io::read_u64(in);
    const std::uint32_t group = io::read_u32(in);
    if (group != kScaleGroup) throw DataError("QNF4: unsupported scale group size " + std::to_string(group));
    if (q.blocksize == 0) throw DataError("QNF4: zero blocksize");
    if (q.rows != 0 && q.cols > (std::uint64_t{1} << 34) / q.rows) throw DataError("QNF4: implausible shape");
    const std::size_t groups = (q.block_count() + kScaleGroup - 1) / kScaleGroup;
    q.codes.resize((q.element_count() + 1) / 2);
    q.absmax_q.resize(q.block_count());
    io::read_bytes(in, reinterpret_cast<char*>(q.codes.data()), q.codes.size());
    io::read_bytes(in, reinterpret_cast<char*>(q.absmax_q.data()), q.absmax_q.size());
    q.group_scale.resize(groups);
    q.group_offset.resize(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        q.group_scale[g] = io::read_f32(in);
        q.group_offset[g] = io::read_f32(in);
    }
    return q;
}

void save_quantized(const std::string& path, const QuantizedMatrix& q) {
    std::ofstream out = io::open_for_write(path);
    write_quantized(out, q);
    if (!out) throw IoError("write failed for '" + path + "'");
}

QuantizedMatrix load_quantized(const std::string& path) {
    std::ifstream in = io::open_for_read(path);
    try {
        return read_quantized(in);
    } catch (const DataError& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

}  // namespace oft

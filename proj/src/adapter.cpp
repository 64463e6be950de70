// SPDX-License-Identifier: Apache-2.0
#include "oft/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "oft/io.hpp"

namespace oft {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

std::string dims(const char* name, std::size_t r, std::size_t c) {
    return std::string(name) + " is " + std::to_string(r) + "x" + std::to_string(c);
}

template <typename T, typename M>
void check_forward_shapes(const BlockRotations& rot, const M& w0, const BasicMatrix<T>& x, const char* op) {
    const std::size_t d = rot.dim();
    require(w0.rows() == d, std::string(op) + ": adapter dim " + std::to_string(d) + " but " +
                                dims("w0", w0.rows(), w0.cols()));
    require(x.rows() == d, std::string(op) + ": adapter dim " + std::to_string(d) + " but " +
                               dims("x", x.rows(), x.cols()));
}

// Row slice [offset, offset + rows) of a matrix, copied.
Matrix rows_of(const Matrix& m, std::size_t offset, std::size_t rows) {
    Matrix out(rows, m.cols());
    std::copy_n(m.data() + offset * m.cols(), rows * m.cols(), out.data());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adapter
// ---------------------------------------------------------------------------

BlockOrthogonalAdapter::BlockOrthogonalAdapter(std::size_t dim, std::size_t block_size, NeumannConfig neumann)
    : dim_(dim), block_size_(block_size), neumann_(neumann) {
    if (block_size == 0) throw ConfigError("block size must be >= 1");
    if (dim == 0) throw ConfigError("adapter dimension must be >= 1");
    if (dim % block_size != 0)
        throw ConfigError("block size " + std::to_string(block_size) + " does not divide dimension " +
                          std::to_string(dim));
    neumann_.validate();
    blocks_.assign(dim / block_size, CompactSkew::zeros(block_size));
}

void BlockOrthogonalAdapter::set_neumann(const NeumannConfig& cfg) {
    cfg.validate();
    neumann_ = cfg;
}

std::size_t BlockOrthogonalAdapter::parameter_count() const {
    return block_count() * CompactSkew::length_for(block_size_);
}

bool BlockOrthogonalAdapter::is_identity() const {
    return std::all_of(blocks_.begin(), blocks_.end(), [](const CompactSkew& b) {
        return std::all_of(b.values().begin(), b.values().end(), [](double v) { return v == 0.0; });
    });
}

void BlockOrthogonalAdapter::randomize(Rng& rng, double stddev) {
    for (auto& b : blocks_)
        for (double& v : b.values()) v = stddev * rng.normal();
}

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

BlockRotations build_rotations(const BlockOrthogonalAdapter& adapter, bool backward_cache) {
    BlockRotations rot;
    rot.block_size = adapter.block_size();
    const std::size_t r = adapter.block_count();
    const int k = adapter.neumann().terms;
    rot.rotation.reserve(r);
    if (backward_cache) {
        rot.series.reserve(r);
        rot.powers.reserve(r);
    }
    for (const CompactSkew& block : adapter.blocks()) {
        Matrix q = unpack(block);
        NeumannFactors f = cayley_neumann_factors(q, adapter.neumann());
        rot.rotation.push_back(std::move(f.rotation));
        if (backward_cache) {
            rot.series.push_back(std::move(f.series));
            std::vector<Matrix> powers;
            powers.reserve(static_cast<std::size_t>(std::max(k - 1, 1)));
            powers.push_back(q);
            for (int s = 2; s < k; ++s) powers.push_back(matmul(q, powers.back()));
            rot.powers.push_back(std::move(powers));
        }
    }
    return rot;
}

template <typename T>
BasicMatrix<T> materialize_dense(const BlockRotations& rot) {
    const std::size_t d = rot.dim(), b = rot.block_size;
    BasicMatrix<T> dense(d, d);
    for (std::size_t blk = 0; blk < rot.rotation.size(); ++blk) {
        const Matrix& r = rot.rotation[blk];
        const std::size_t off = blk * b;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < b; ++j) dense(off + i, off + j) = static_cast<T>(r(i, j));
    }
    return dense;
}

Matrix materialize_r(const BlockOrthogonalAdapter& adapter) {
    return materialize_dense<double>(build_rotations(adapter));
}

template <typename T>
BasicMatrix<T> rotate_input(const BlockRotations& rot, const BasicMatrix<T>& x) {
    require(x.rows() == rot.dim(), "rotate_input: adapter dim " + std::to_string(rot.dim()) + " but " +
                                       dims("x", x.rows(), x.cols()));
    const std::size_t b = rot.block_size, m = x.cols();
    BasicMatrix<T> y(x.rows(), m);
    BasicMatrix<T> rt(b, b);
    for (std::size_t blk = 0; blk < rot.rotation.size(); ++blk) {
        const Matrix& r = rot.rotation[blk];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < b; ++j) rt(i, j) = static_cast<T>(r(j, i));
        const std::size_t off = blk * b * m;
        kernels::gemm_accumulate<T>(b, m, b, rt.data(), b, x.data() + off, m, y.data() + off, m);
    }
    return y;
}

template <typename T>
BasicMatrix<T> forward_input_centric(const BlockRotations& rot, const BasicMatrix<T>& w0, const BasicMatrix<T>& x) {
    check_forward_shapes(rot, w0, x, "forward_input_centric");
    BasicMatrix<T> y = rotate_input(rot, x);
    return matmul_tn(w0, y);
}

template <typename T>
BasicMatrix<T> forward_weight_centric(const BlockRotations& rot, const BasicMatrix<T>& w0, const BasicMatrix<T>& x) {
    check_forward_shapes(rot, w0, x, "forward_weight_centric");
    BasicMatrix<T> dense = materialize_dense<T>(rot);
    BasicMatrix<T> merged = matmul(dense, w0);
    return matmul_tn(merged, x);
}

template MatrixF materialize_dense<float>(const BlockRotations&);
template Matrix materialize_dense<double>(const BlockRotations&);
template MatrixF rotate_input<float>(const BlockRotations&, const MatrixF&);
template Matrix rotate_input<double>(const BlockRotations&, const Matrix&);
template MatrixF forward_input_centric<float>(const BlockRotations&, const MatrixF&, const MatrixF&);
template Matrix forward_input_centric<double>(const BlockRotations&, const Matrix&, const Matrix&);
template MatrixF forward_weight_centric<float>(const BlockRotations&, const MatrixF&, const MatrixF&);
template Matrix forward_weight_centric<double>(const BlockRotations&, const Matrix&, const Matrix&);

Matrix forward_input_centric(const BlockOrthogonalAdapter& adapter, const Matrix& w0, const Matrix& x) {
    return forward_input_centric(build_rotations(adapter), w0, x);
}

Matrix forward_weight_centric(const BlockOrthogonalAdapter& adapter, const Matrix& w0, const Matrix& x) {
    return forward_weight_centric(build_rotations(adapter), w0, x);
}

// ---------------------------------------------------------------------------
// Backward
//
// Per block, with y_s = R^T x_s and G = x_s g_y^T = dL/dR:
//   R = (I + Q) P,  P = I + Q + ... + Q^k
//   dL/dQ = G P^T + sum_{j + l <= k-1} (Q^T)^j H (Q^T)^l,  H = (I + Q)^T G
// The double sum is accumulated as T_0 = H, T_s = Q^T T_{s-1} + H (Q^s)^T.
// Finally dL/du_ij = M_ij - M_ji.
// ---------------------------------------------------------------------------

double AdapterGradients::norm() const {
    double s = 0.0;
    for (const auto& g : blocks)
        for (double v : g) s += v * v;
    return std::sqrt(s);
}

AdapterGradients backward_rotation(const BlockOrthogonalAdapter& adapter, const BlockRotations& rot,
                                   const Matrix& x, const Matrix& g_y) {
    if (!rot.has_backward_cache())
        throw ConfigError("backward_rotation: rotations were built without the backward cache");
    const std::size_t d = adapter.dim(), b = adapter.block_size();
    require(rot.dim() == d && rot.block_size == b, "backward_rotation: workspace does not match adapter");
    require(x.rows() == d, "backward_rotation: adapter dim " + std::to_string(d) + " but " +
                               dims("x", x.rows(), x.cols()));
    require(g_y.rows() == d && g_y.cols() == x.cols(),
            "backward_rotation: " + dims("g_y", g_y.rows(), g_y.cols()) + " but " + dims("x", x.rows(), x.cols()));

    const int k = adapter.neumann().terms;
    const std::size_t m = x.cols();
    AdapterGradients out;
    out.input = Matrix(d, m);
    out.blocks.reserve(adapter.block_count());

    for (std::size_t blk = 0; blk < adapter.block_count(); ++blk) {
        const std::size_t off = blk * b;
        const Matrix xs = rows_of(x, off, b);
        const Matrix gs = rows_of(g_y, off, b);
        const Matrix& r = rot.rotation[blk];
        const Matrix& p = rot.series[blk];
        const Matrix& q = rot.powers[blk][0];

        // g_x = R g_y.
        kernels::gemm_accumulate<double>(b, m, b, r.data(), b, gs.data(), m, out.input.data() + off * m, m);

        const Matrix g = matmul_nt(xs, gs);
        const Matrix h = g - matmul(q, g);
        Matrix grad_q = matmul_nt(g, p);
        Matrix term = h;
        grad_q = grad_q + term;
        for (int s = 1; s < k; ++s) {
            term = matmul_nt(h, rot.powers[blk][static_cast<std::size_t>(s - 1)]) - matmul(q, term);
            grad_q = grad_q + term;
        }

        std::vector<double> gu(CompactSkew::length_for(b));
        std::size_t idx = 0;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = i + 1; j < b; ++j) gu[idx++] = grad_q(i, j) - grad_q(j, i);
        out.blocks.push_back(std::move(gu));
    }
    return out;
}

AdapterGradients backward(const BlockOrthogonalAdapter& adapter, const BlockRotations& rot, const Matrix& w0,
                          const Matrix& x, const Matrix& g_z) {
    require(w0.rows() == adapter.dim(), "backward: adapter dim " + std::to_string(adapter.dim()) + " but " +
                                            dims("w0", w0.rows(), w0.cols()));
    require(g_z.rows() == w0.cols() && g_z.cols() == x.cols(),
            "backward: " + dims("g_z", g_z.rows(), g_z.cols()) + ", expected " +
                std::to_string(w0.cols()) + "x" + std::to_string(x.cols()));
    const Matrix g_y = matmul(w0, g_z);
    return backward_rotation(adapter, rot, x, g_y);
}

AdapterGradients backward(const BlockOrthogonalAdapter& adapter, const Matrix& w0, const Matrix& x,
                          const Matrix& g_z) {
    return backward(adapter, build_rotations(adapter, true), w0, x, g_z);
}

// ---------------------------------------------------------------------------
// Merge and diagnostics
// ---------------------------------------------------------------------------

Matrix merge(const BlockRotations& rot, const Matrix& w0) {
    require(w0.rows() == rot.dim(),
            "merge: adapter dim " + std::to_string(rot.dim()) + " but " + dims("w0", w0.rows(), w0.cols()));
    const std::size_t b = rot.block_size, n = w0.cols();
    Matrix merged(w0.rows(), n);
    for (std::size_t blk = 0; blk < rot.rotation.size(); ++blk) {
        const std::size_t off = blk * b * n;
        kernels::gemm_accumulate<double>(b, n, b, rot.rotation[blk].data(), b, w0.data() + off, n,
                                         merged.data() + off, n);
    }
    return merged;
}

Matrix merge(const BlockOrthogonalAdapter& adapter, const Matrix& w0) { return merge(build_rotations(adapter), w0); }

double hyperspherical_energy(const Matrix& w) {
    const std::size_t d = w.rows(), n = w.cols();
    Matrix unit(n, d);
    for (std::size_t j = 0; j < n; ++j) {
        const double norm = column_norm(w, j);
        if (!(norm > 0.0)) throw DataError("hyperspherical_energy: column " + std::to_string(j) + " is zero");
        for (std::size_t i = 0; i < d; ++i) unit(j, i) = w(i, j) / norm;
    }
    double energy = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t c = a + 1; c < n; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double diff = unit(a, i) - unit(c, i);
                s += diff * diff;
            }
            const double dist = std::sqrt(s);
            if (dist <= 1e-9)
                throw DataError("hyperspherical_energy: columns " + std::to_string(a) + " and " + std::to_string(c) +
                                " coincide after normalization");
            energy += 2.0 / dist;
        }
    return energy;
}

// ---------------------------------------------------------------------------
// OFT2 container
// ---------------------------------------------------------------------------

void write_adapters(std::ostream& out, std::span<const NamedAdapter> layers) {
    io::write_magic(out, "OFT2");
    io::write_u8(out, 1);
    io::write_u32(out, static_cast<std::uint32_t>(layers.size()));
    for (const NamedAdapter& layer : layers) {
        const BlockOrthogonalAdapter& a = layer.adapter;
        io::write_u32(out, static_cast<std::uint32_t>(layer.name.size()));
        out.write(layer.name.data(), static_cast<std::streamsize>(layer.name.size()));
        io::write_u64(out, a.dim());
        io::write_u64(out, a.block_size());
        io::write_u32(out, static_cast<std::uint32_t>(a.neumann().terms));
        io::write_u64(out, a.block_count());
        for (const CompactSkew& block : a.blocks())
            for (double v : block.values()) io::write_f32(out, static_cast<float>(v));
    }
}

std::vector<NamedAdapter> read_adapters(std::istream& in) {
    io::expect_magic(in, "OFT2");
    const std::uint8_t version = io::read_u8(in);
    if (version != 1) throw DataError("OFT2: unsupported version " + std::to_string(version));
    const std::uint32_t count = io::read_u32(in);
    std::vector<NamedAdapter> layers;
    for (std::uint32_t l = 0; l < count; ++l) {
        const std::uint32_t name_len = io::read_u32(in);
        if (name_len > (1u << 16)) throw DataError("OFT2: implausible layer name length");
        std::string name(name_len, '\0');
        io::read_bytes(in, name.data(), name_len);
        const std::uint64_t d = io::read_u64(in);
        const std::uint64_t b = io::read_u64(in);
        const std::uint32_t k = io::read_u32(in);
        const std::uint64_t block_count = io::read_u64(in);
        if (b == 0 || d == 0 || d % b != 0 || d / b != block_count || d > (1ull << 32))
            throw DataError("OFT2: inconsistent geometry for layer '" + name + "'");
        if (k < 1 || k > 1024) throw DataError("OFT2: invalid Neumann order for layer '" + name + "'");
        NeumannConfig cfg;
        cfg.terms = static_cast<int>(k);
        BlockOrthogonalAdapter adapter(d, b, cfg);
        for (CompactSkew& block : adapter.blocks())
            for (double& v : block.values()) v = static_cast<double>(io::read_f32(in));
        layers.push_back({std::move(name), std::move(adapter)});
    }
    return layers;
}

void save_adapters(const std::string& path, std::span<const NamedAdapter> layers) {
    std::ofstream out = io::open_for_write(path);
    write_adapters(out, layers);
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<NamedAdapter> load_adapters(const std::string& path) {
    std::ifstream in = io::open_for_read(path);
    try {
        return read_adapters(in);
    } catch (const DataError& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

}  // namespace oft

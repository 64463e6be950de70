// SPDX-License-Identifier: Apache-2.0
#pragma once

// Block-diagonal orthogonal adapter over a frozen weight W0 (d x n).
//
// The adapted layer computes z = W0^T R^T x with R = Diag(R_1, ..., R_r),
// each R_i the Cayley-Neumann rotation of a trainable skew block. The
// input-centric forward applies R^T to the activations block by block and
// never forms R or R W0; the weight-centric forward materializes both and is
// kept as the reference path.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "oft/cayley.hpp"
#include "oft/numkit.hpp"
#include "oft/skew.hpp"

namespace oft {

class BlockOrthogonalAdapter {
public:
    // Identity adapter (all-zero generators). Throws ConfigError unless
    // block_size >= 1 divides dim.
    BlockOrthogonalAdapter(std::size_t dim, std::size_t block_size, NeumannConfig neumann = {});

    std::size_t dim() const { return dim_; }
    std::size_t block_size() const { return block_size_; }
    std::size_t block_count() const { return blocks_.size(); }
    const NeumannConfig& neumann() const { return neumann_; }
    void set_neumann(const NeumannConfig& cfg);

    std::span<const CompactSkew> blocks() const { return blocks_; }
    std::span<CompactSkew> blocks() { return blocks_; }

    // d * (b - 1) / 2.
    std::size_t parameter_count() const;
    bool is_identity() const;

    // Fills every generator with N(0, stddev^2) entries.
    void randomize(Rng& rng, double stddev);

private:
    std::size_t dim_;
    std::size_t block_size_;
    NeumannConfig neumann_;
    std::vector<CompactSkew> blocks_;
};

// Per-step workspace: the rotation of every block and, for training, the
// factors the backward pass needs (series sum P and generator powers
// Q^1 .. Q^{k-1}). Rebuild whenever the generators change.
struct BlockRotations {
    std::size_t block_size = 0;
    std::vector<Matrix> rotation;
    std::vector<Matrix> series;
    std::vector<std::vector<Matrix>> powers;

    std::size_t dim() const { return block_size * rotation.size(); }
    bool has_backward_cache() const { return !series.empty(); }
};

BlockRotations build_rotations(const BlockOrthogonalAdapter& adapter, bool backward_cache = false);

// Dense d x d block-diagonal R. Tests, merging and the weight-centric path only.
Matrix materialize_r(const BlockOrthogonalAdapter& adapter);

template <typename T>
BasicMatrix<T> materialize_dense(const BlockRotations& rot);

// y = R^T x, one b x b product per block.
template <typename T>
BasicMatrix<T> rotate_input(const BlockRotations& rot, const BasicMatrix<T>& x);

// z = W0^T (R^T x).
template <typename T>
BasicMatrix<T> forward_input_centric(const BlockRotations& rot, const BasicMatrix<T>& w0, const BasicMatrix<T>& x);

// z = (R W0)^T x with R and R W0 formed explicitly.
template <typename T>
BasicMatrix<T> forward_weight_centric(const BlockRotations& rot, const BasicMatrix<T>& w0, const BasicMatrix<T>& x);

Matrix forward_input_centric(const BlockOrthogonalAdapter& adapter, const Matrix& w0, const Matrix& x);
Matrix forward_weight_centric(const BlockOrthogonalAdapter& adapter, const Matrix& w0, const Matrix& x);

struct AdapterGradients {
    // dL/du for each block's compact vector.
    std::vector<std::vector<double>> blocks;
    // dL/dx.
    Matrix input;

    double norm() const;
};

// Backward through y = R^T x given dL/dy. Requires a backward cache.
AdapterGradients backward_rotation(const BlockOrthogonalAdapter& adapter, const BlockRotations& rot,
                                   const Matrix& x, const Matrix& g_y);

// Backward through z = W0^T R^T x. Gradients are summed over the batch.
AdapterGradients backward(const BlockOrthogonalAdapter& adapter, const BlockRotations& rot, const Matrix& w0,
                          const Matrix& x, const Matrix& g_z);
AdapterGradients backward(const BlockOrthogonalAdapter& adapter, const Matrix& w0, const Matrix& x,
                          const Matrix& g_z);

// R W0, computed block by block.
Matrix merge(const BlockOrthogonalAdapter& adapter, const Matrix& w0);
Matrix merge(const BlockRotations& rot, const Matrix& w0);

// Sum over ordered pairs i != j of 1 / ||w_i/|w_i| - w_j/|w_j|||.
// Throws DataError on zero or coincident columns.
double hyperspherical_energy(const Matrix& w);

// ---------------------------------------------------------------------------
// "OFT2" container
//
//   bytes 0-3   magic "OFT2"
//   byte  4     version (1)
//   u32         layer count
//   per layer:  u32 name length, name bytes, u64 d, u64 b, u32 k,
//               u64 block_count, then block_count * b(b-1)/2 float32 values
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

struct NamedAdapter {
    std::string name;
    BlockOrthogonalAdapter adapter;
};

void write_adapters(std::ostream& out, std::span<const NamedAdapter> layers);
std::vector<NamedAdapter> read_adapters(std::istream& in);
void save_adapters(const std::string& path, std::span<const NamedAdapter> layers);
std::vector<NamedAdapter> load_adapters(const std::string& path);

}  // namespace oft

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trainable-parameter accounting for OFT and LoRA over a list of target
// linear layers, and the bundled architecture shape tables.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace oft {

struct LayerSpec {
    std::string name;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
};

// Sum of d_in * (b - 1) / 2. Throws ConfigError naming the first layer whose
// input dimension b does not divide.
std::uint64_t count_params(std::span<const LayerSpec> layers, std::size_t block_size);

// Sum of rank * (d_in + d_out).
std::uint64_t count_params_lora(std::span<const LayerSpec> layers, std::size_t rank);

enum class AdapterKind { oft, lora };

AdapterKind parse_adapter_kind(const std::string& text);
const char* to_string(AdapterKind kind);

// A published parameter count for one (method, size) pair, in millions at
// two decimals, e.g. "17.65".
struct ExpectedCount {
    AdapterKind method;
    std::size_t size;  // block size for OFT, rank for LoRA
    std::string millions;
};

// Architecture table file format (one directive per line, '#' comments):
//   arch <name>
//   group <name> <repeat>          subsequent layers repeat <repeat> times
//   layer <name> <d_in> <d_out>
//   expect <oft|lora> <size> <millions>
struct ArchTable {
    std::string name;
    std::vector<LayerSpec> layers;  // expanded, e.g. "decoder.3.q_proj"
    std::vector<ExpectedCount> expected;
};

ArchTable parse_arch_table(const std::string& text, const std::string& source = "<memory>");
ArchTable load_arch_table(const std::string& path);
// Every "*.arch" file in a directory, sorted by architecture name.
std::vector<ArchTable> load_arch_tables(const std::string& dir);

// Millions rounded half-up to two decimals: 17649664 -> "17.65".
std::string format_millions(std::uint64_t count);

struct CountCheck {
    std::string arch;
    AdapterKind method;
    std::size_t size;
    std::uint64_t count;
    std::string expected;
    bool passed;
};

std::vector<CountCheck> check_expected_counts(const ArchTable& arch);

}  // namespace oft

// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cstdint>
#include <string>
#include <vector>

#include "oft/errors.hpp"
#include "oft/params.hpp"

using namespace oft;

namespace {

const ArchTable& arch(const std::string& name) {
    static const std::vector<ArchTable> tables = load_arch_tables(std::string(OFT_DATA_DIR) + "/arch");
    for (const auto& t : tables)
        if (t.name == name) return t;
    throw ConfigError("missing arch " + name);
}

}  // namespace

TEST_CASE("count formulas on small layer lists") {
    const std::vector<LayerSpec> layers{{"a", 8, 3}, {"b", 4, 10}};
    CHECK(count_params(layers, 4) == 8 * 3 / 2 + 4 * 3 / 2);
    CHECK(count_params(layers, 1) == 0);
    CHECK(count_params_lora(layers, 2) == 2 * (8 + 3) + 2 * (4 + 10));
    CHECK(count_params(std::vector<LayerSpec>{}, 4) == 0);
    CHECK_THROWS_AS(count_params_lora(layers, 0), ConfigError);
    CHECK_THROWS_AS(count_params(layers, 0), ConfigError);
    try {
        (void)count_params(layers, 8);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }
}

TEST_CASE("format_millions rounds half up at two decimals") {
    CHECK(format_millions(17649664) == "17.65");
    CHECK(format_millions(39976960) == "39.98");
    CHECK(format_millions(2027520) == "2.03");
    CHECK(format_millions(4325376) == "4.33");
    CHECK(format_millions(0) == "0.00");
    CHECK(format_millions(5000) == "0.01");
    CHECK(format_millions(4999) == "0.00");
    CHECK(format_millions(1234567890) == "1234.57");
}

TEST_CASE("adapter kind parsing") {
    CHECK(parse_adapter_kind("oft") == AdapterKind::oft);
    CHECK(parse_adapter_kind("lora") == AdapterKind::lora);
    CHECK(std::string(to_string(AdapterKind::lora)) == "lora");
    CHECK_THROWS_AS(parse_adapter_kind("dora"), ConfigError);
}

TEST_CASE("arch table parsing") {
    const ArchTable t = parse_arch_table(
        "# comment\narch toy\ngroup blk 3\nlayer q 8 8\nlayer up 8 16\nexpect oft 4 0.00\nexpect lora 2 0.00\n");
    CHECK(t.name == "toy");
    REQUIRE(t.layers.size() == 6);
    CHECK(t.layers[0].name == "blk.0.q");
    CHECK(t.layers[5].name == "blk.2.up");
    CHECK(t.layers[5].d_out == 16);
    REQUIRE(t.expected.size() == 2);
    CHECK(t.expected[1].method == AdapterKind::lora);

    CHECK_THROWS_AS(parse_arch_table("layer q 8 8\n"), ConfigError);
    CHECK_THROWS_AS(parse_arch_table("arch x\nlayer q 8\n"), ConfigError);
    CHECK_THROWS_AS(parse_arch_table("arch x\nlayer q 0 8\n"), ConfigError);
    CHECK_THROWS_AS(parse_arch_table("arch x\nbogus 1\n"), ConfigError);
    CHECK_THROWS_AS(load_arch_table("/nonexistent.arch"), IoError);
    CHECK_THROWS_AS(load_arch_tables("/nonexistent-dir"), IoError);
}

TEST_CASE("Llama-2-7B counts") {
    const auto& t = arch("llama2-7b");
    CHECK(t.layers.size() == 32 * 7);
    // Per block: six projections reading 4096 features and one reading 11008.
    const std::uint64_t oft = 32ull * (6 * 4096 + 11008) * 31 / 2;
    const std::uint64_t lora = 32ull * 16 * (4 * 8192 + 3 * (4096 + 11008));
    CHECK(oft == 17649664);
    CHECK(lora == 39976960);
    CHECK(count_params(t.layers, 32) == oft);
    CHECK(count_params_lora(t.layers, 16) == lora);
    CHECK(format_millions(oft) == "17.65");
    CHECK(format_millions(lora) == "39.98");
}

TEST_CASE("Llama-2-13B counts") {
    const auto& t = arch("llama2-13b");
    const std::uint64_t oft = 40ull * (6 * 5120 + 13824) * 31 / 2;
    const std::uint64_t lora = 40ull * 16 * (4 * 10240 + 3 * (5120 + 13824));
    CHECK(count_params(t.layers, 32) == oft);
    CHECK(count_params_lora(t.layers, 16) == lora);
    CHECK(format_millions(oft) == "27.62");
    CHECK(format_millions(lora) == "62.59");
}

TEST_CASE("Qwen2.5-7B counts") {
    const auto& t = arch("qwen2.5-7b");
    const std::uint64_t oft = 28ull * (6 * 3584 + 18944) * 31 / 2;
    const std::uint64_t lora =
        28ull * 16 * ((3584 + 3584) * 2 + (3584 + 512) * 2 + (3584 + 18944) * 3);
    CHECK(count_params(t.layers, 32) == oft);
    CHECK(count_params_lora(t.layers, 16) == lora);
    CHECK(format_millions(oft) == "17.55");
    CHECK(format_millions(lora) == "40.37");
}

TEST_CASE("BART-large counts") {
    const auto& t = arch("bart-large");
    // Encoder: 4 attention + fc1 (1024 in) + fc2 (4096 in); decoder adds 4 cross-attention.
    const std::uint64_t oft = (12ull * (5 * 1024 + 4096) + 12ull * (9 * 1024 + 4096)) * 15 / 2;
    const std::uint64_t lora = 8ull * (12 * (4 * 2048 + 2 * 5120) + 12 * (8 * 2048 + 2 * 5120));
    CHECK(count_params(t.layers, 16) == oft);
    CHECK(count_params_lora(t.layers, 8) == lora);
    CHECK(format_millions(oft) == "2.03");
    CHECK(format_millions(lora) == "4.33");
}

TEST_CASE("every bundled expectation is reproduced") {
    const auto tables = load_arch_tables(std::string(OFT_DATA_DIR) + "/arch");
    CHECK(tables.size() == 4);
    std::size_t checks = 0;
    for (const auto& t : tables)
        for (const CountCheck& c : check_expected_counts(t)) {
            INFO(c.arch << " " << to_string(c.method) << " " << c.size);
            CHECK(c.passed);
            ++checks;
        }
    CHECK(checks == 8);
}

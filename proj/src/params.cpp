// SPDX-License-Identifier: Apache-2.0
#include "oft/params.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oft/errors.hpp"

namespace oft {

std::uint64_t count_params(std::span<const LayerSpec> layers, std::size_t block_size) {
    if (block_size == 0) throw ConfigError("block size must be >= 1");
    std::uint64_t total = 0;
    for (const LayerSpec& l : layers) {
        if (l.d_in % block_size != 0)
            throw ConfigError("layer '" + l.name + "': block size " + std::to_string(block_size) +
                              " does not divide input dimension " + std::to_string(l.d_in));
        total += static_cast<std::uint64_t>(l.d_in) * (block_size - 1) / 2;
    }
    return total;
}

std::uint64_t count_params_lora(std::span<const LayerSpec> layers, std::size_t rank) {
    if (rank == 0) throw ConfigError("LoRA rank must be >= 1");
    std::uint64_t total = 0;
    for (const LayerSpec& l : layers) total += static_cast<std::uint64_t>(rank) * (l.d_in + l.d_out);
    return total;
}

AdapterKind parse_adapter_kind(const std::string& text) {
    if (text == "oft") return AdapterKind::oft;
    if (text == "lora") return AdapterKind::lora;
    throw ConfigError("unknown adapter kind '" + text + "' (expected oft or lora)");
}

const char* to_string(AdapterKind kind) { return kind == AdapterKind::oft ? "oft" : "lora"; }

ArchTable parse_arch_table(const std::string& text, const std::string& source) {
    ArchTable table;
    std::istringstream lines(text);
    std::string line;
    std::size_t lineno = 0;
    std::string group;
    std::size_t repeat = 1;
    struct Pending {
        std::string group;
        std::size_t repeat;
        LayerSpec layer;
    };
    std::vector<Pending> pending;

    auto fail = [&](const std::string& why) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + why);
    };

    while (std::getline(lines, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream words(line);
        std::string directive;
        if (!(words >> directive)) continue;
        if (directive == "arch") {
            if (!(words >> table.name)) fail("arch needs a name");
        } else if (directive == "group") {
            if (!(words >> group >> repeat) || repeat == 0) fail("group needs a name and a positive repeat");
        } else if (directive == "layer") {
            LayerSpec l;
            if (!(words >> l.name >> l.d_in >> l.d_out) || l.d_in == 0 || l.d_out == 0)
                fail("layer needs a name and positive d_in, d_out");
            pending.push_back({group, repeat, l});
        } else if (directive == "expect") {
            std::string method;
            ExpectedCount e{};
            if (!(words >> method >> e.size >> e.millions)) fail("expect needs method, size and millions");
            e.method = parse_adapter_kind(method);
            table.expected.push_back(e);
        } else {
            fail("unknown directive '" + directive + "'");
        }
    }
    if (table.name.empty()) throw ConfigError(source + ": missing arch directive");

    // Expand group by group, preserving the order layers were listed in.
    std::size_t i = 0;
    while (i < pending.size()) {
        std::size_t j = i;
        while (j < pending.size() && pending[j].group == pending[i].group && pending[j].repeat == pending[i].repeat) ++j;
        for (std::size_t r = 0; r < pending[i].repeat; ++r)
            for (std::size_t p = i; p < j; ++p) {
                LayerSpec l = pending[p].layer;
                if (!pending[p].group.empty()) l.name = pending[p].group + "." + std::to_string(r) + "." + l.name;
                table.layers.push_back(std::move(l));
            }
        i = j;
    }
    return table;
}

ArchTable load_arch_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open architecture table '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_arch_table(buf.str(), path);
}

std::vector<ArchTable> load_arch_tables(const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("architecture directory '" + dir + "' not found");
    std::vector<ArchTable> tables;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".arch") tables.push_back(load_arch_table(entry.path().string()));
    std::sort(tables.begin(), tables.end(), [](const ArchTable& a, const ArchTable& b) { return a.name < b.name; });
    return tables;
}

std::string format_millions(std::uint64_t count) {
    // Integer arithmetic: hundredths of a million, rounded half-up.
    const std::uint64_t hundredths = (count + 5000) / 10000;
    std::string frac = std::to_string(hundredths % 100);
    if (frac.size() < 2) frac.insert(0, "0");
    return std::to_string(hundredths / 100) + "." + frac;
}

std::vector<CountCheck> check_expected_counts(const ArchTable& arch) {
    std::vector<CountCheck> out;
    for (const ExpectedCount& e : arch.expected) {
        const std::uint64_t n = e.method == AdapterKind::oft ? count_params(arch.layers, e.size)
                                                              : count_params_lora(arch.layers, e.size);
        out.push_back({arch.name, e.method, e.size, n, e.millions, format_millions(n) == e.millions});
    }
    return out;
}

}  // namespace oft

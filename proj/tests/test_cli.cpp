// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "oft/adapter.hpp"
#include "oft/bench.hpp"
#include "oft/io.hpp"
#include "oft/quant.hpp"
#include "support.hpp"

using namespace oft;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

Run oftv2(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + OFTV2_BIN + "' " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    std::array<char, 4096> buf{};
    while (const std::size_t got = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), got);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Golden files carry a license line that is not part of the expected output.
std::string golden_text(const std::string& path) {
    const std::string text = slurp(path);
    return text.substr(text.find('\n') + 1);
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t at = s.find(from); at != std::string::npos; at = s.find(from, at + to.size()))
        s.replace(at, from.size(), to);
    return s;
}

struct Scratch {
    fs::path dir;
    Scratch() {
        dir = fs::temp_directory_path() / ("oftv2_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("help output matches the golden files") {
    const std::string golden = std::string(OFT_TEST_DIR) + "/golden/help/";
    const Run top = oftv2("--help");
    CHECK(top.code == 0);
    CHECK(top.out == golden_text(golden + "oftv2.txt"));
    for (const char* cmd : {"verify", "bench", "train", "quantize", "merge", "params", "report"}) {
        CAPTURE(cmd);
        const Run r = oftv2(std::string(cmd) + " --help");
        CHECK(r.code == 0);
        CHECK(replace_all(r.out, OFT_DATA_DIR, "@DATA_DIR@") == golden_text(golden + cmd + ".txt"));
    }
}

TEST_CASE("usage errors exit with 2") {
    CHECK(oftv2("").code == 2);
    CHECK(oftv2("frobnicate").code == 2);
    CHECK(oftv2("verify --bogus").code == 2);
    CHECK(oftv2("verify --suite nope").code == 2);
    CHECK(oftv2("bench --modes dense").code == 2);
    CHECK(oftv2("params --arch nope").code == 2);
    CHECK(oftv2("train --set nokey").code == 2);
    CHECK(oftv2("train --set d=7 --steps 1").code == 2);
    CHECK(oftv2("quantize").code == 2);
    CHECK(oftv2("train --steps 1", "OFTV2_SEED=abc").code == 2);
}

TEST_CASE("verify: dispatch, success and the mutation fixture") {
    const Run all = oftv2("verify --suite all");
    CHECK(all.code == 0);
    CHECK(all.out.find("# oftv2 verify") == 0);
    CHECK(all.out.find("FAIL") == std::string::npos);

    const Run cayley = oftv2("verify --suite cayley");
    CHECK(cayley.code == 0);
    CHECK(cayley.out.find("cayley.neumann_tail_bound") != std::string::npos);
    CHECK(cayley.out.find("cayley.exact_orthogonality") != std::string::npos);
    CHECK(cayley.out.find("skew.") == std::string::npos);

    const Run broken = oftv2("verify --suite all --mutate skew-sign-flip");
    CHECK(broken.code == 1);
    CHECK(broken.out.find("failing: skew.antisymmetry") != std::string::npos);
}

TEST_CASE("params: printed counts and --check") {
    const Run oft = oftv2("params --arch llama2-7b --method oft --size 32");
    CHECK(oft.code == 0);
    CHECK(oft.out.find("17,649,664 (17.65M)") != std::string::npos);
    const Run lora = oftv2("params --arch llama2-7b --method lora --size 16");
    CHECK(lora.out.find("39,976,960 (39.98M)") != std::string::npos);
    const Run qwen = oftv2("params --arch qwen2.5-7b --method oft --size 32");
    CHECK(qwen.out.find("(17.55M)") != std::string::npos);
    const Run check = oftv2("params --check");
    CHECK(check.code == 0);
    CHECK(check.out.find("FAIL") == std::string::npos);
    CHECK(oftv2("params --arch llama2-7b --size 33").code == 2);
}

TEST_CASE("bench: three dimensions give three rows per mode") {
    Scratch s;
    const Run r = oftv2("bench --dims 256,512,1024 --repeats 1 --warmups 0 --out " + (s / "b.csv"));
    CHECK(r.code == 0);
    CHECK(r.out.find("#   dims = 256,512,1024") != std::string::npos);
    std::ifstream in(s / "b.csv");
    const auto records = read_bench_csv(in);
    CHECK(records.size() == 3 * all_bench_modes().size());

    const Run two = oftv2("bench --dims 256,512,1024 --modes weight_centric,input_centric --repeats 1 --warmups 0 "
                          "--out " + (s / "c.csv"));
    CHECK(two.code == 0);
    CHECK(count_lines(slurp(s / "c.csv")) == 1 + 3 * 2);

    const Run report = oftv2("report --in " + (s / "b.csv"));
    CHECK(report.code == 0);
    CHECK(report.out.find("weight_centric/f64") != std::string::npos);
    CHECK(oftv2("bench --dims 100 --out " + (s / "d.csv")).code == 2);
    CHECK(oftv2("bench --dims 64 --b 8 --repeats 1 --out /nonexistent-dir/x.csv").code == 3);
}

TEST_CASE("train: identical traces for identical flags, seed from the environment") {
    Scratch s;
    const Run a = oftv2("train --task rotation-recovery --seed 7 --steps 300 --out " + (s / "a.csv"));
    const Run b = oftv2("train --task rotation-recovery --seed 7 --steps 300 --out " + (s / "b.csv"));
    CHECK(a.code == 0);
    CHECK(b.code == 0);
    CHECK(a.out.find("# oftv2 train") == 0);
    CHECK(a.out.find("#   seed = 7") < a.out.find("initial_loss"));
    CHECK(slurp(s / "a.csv") == slurp(s / "b.csv"));

    const Run env = oftv2("train --steps 300 --out " + (s / "c.csv"), "OFTV2_SEED=7");
    CHECK(env.out.find("#   seed = 7") != std::string::npos);
    CHECK(slurp(s / "c.csv") == slurp(s / "a.csv"));
    const Run other = oftv2("train --steps 300 --out " + (s / "d.csv"), "OFTV2_SEED=8");
    CHECK(other.out.find("#   seed = 8") != std::string::npos);
    CHECK(slurp(s / "d.csv") != slurp(s / "a.csv"));

    const Run report = oftv2("report --in " + (s / "a.csv"));
    CHECK(report.code == 0);
    CHECK(report.out.find("last_step 300") != std::string::npos);
}

TEST_CASE("quantize, identity merge and dequantize compose to the codec round trip") {
    Scratch s;
    Rng rng(5);
    const Matrix w = rng.gaussian(96, 40);
    io::save_matrix(s / "w.dmat", w);
    CHECK(oftv2("quantize --in " + (s / "w.dmat") + " --out " + (s / "w.qnf4")).code == 0);
    CHECK(oftv2("merge --base " + (s / "w.qnf4") + " --adapter id --out " + (s / "m.dmat")).code == 0);
    const Matrix merged = io::load_matrix(s / "m.dmat");
    const Matrix codec = dequantize(quantize(w));
    CHECK(merged == codec);
    CHECK(dequantize(load_quantized(s / "w.qnf4")) == codec);

    CHECK(oftv2("quantize --random 64x32 --seed 3 --out " + (s / "r1.qnf4")).code == 0);
    CHECK(oftv2("quantize --random 64x32 --seed 3 --out " + (s / "r2.qnf4")).code == 0);
    CHECK(slurp(s / "r1.qnf4") == slurp(s / "r2.qnf4"));
}

TEST_CASE("merge with an adapter file matches the dense oracle") {
    Scratch s;
    Rng rng(6);
    const Matrix w = rng.gaussian(32, 12);
    io::save_matrix(s / "w.dmat", w);
    std::vector<NamedAdapter> layers;
    for (const char* name : {"first", "second"}) {
        BlockOrthogonalAdapter a(32, 8);
        a.randomize(rng, 0.05);
        layers.push_back({name, a});
    }
    save_adapters(s / "a.oft2", layers);
    const auto loaded = load_adapters(s / "a.oft2");
    CHECK(oftv2("merge --base " + (s / "w.dmat") + " --adapter " + (s / "a.oft2") + " --layer second --out " +
                (s / "m.dmat"))
              .code == 0);
    const Matrix oracle = test::naive_matmul(materialize_r(loaded[1].adapter), w);
    CHECK(test::max_abs_diff(io::load_matrix(s / "m.dmat"), oracle) <= 1e-12);
    CHECK(oftv2("merge --base " + (s / "w.dmat") + " --adapter " + (s / "a.oft2") + " --layer third").code == 2);
}

TEST_CASE("I/O failures exit with 3") {
    Scratch s;
    CHECK(oftv2("report --in " + (s / "missing.csv")).code == 3);
    std::ofstream(s / "junk.bin") << "not a container";
    CHECK(oftv2("merge --base " + (s / "junk.bin")).code == 3);
    CHECK(oftv2("quantize --in " + (s / "junk.bin")).code == 3);
}

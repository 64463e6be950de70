// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-contained property suites over every module, driven by `oftv2 verify`.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace oft {

enum class VerifySuite { all, cayley, skew, layer, quant, grad, baseline };

VerifySuite parse_verify_suite(const std::string& text);
const char* to_string(VerifySuite suite);

struct VerifyOptions {
    VerifySuite suite = VerifySuite::all;
    std::uint64_t seed = 7;
    // Directory holding the architecture tables; the baseline suite skips the
    // parameter-count property when empty.
    std::string data_dir;
};

struct PropertyResult {
    std::string suite;
    std::string name;  // e.g. "skew.antisymmetry"
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct VerifyReport {
    std::vector<PropertyResult> results;

    bool ok() const;
    std::vector<std::string> failures() const;
};

// A property that throws is recorded as failed with the exception message.
VerifyReport run_verify(const VerifyOptions& opts);

// Aligned table: suite, property, PASS/FAIL, seconds, detail; then a totals line.
void print_summary(std::ostream& out, const VerifyReport& report);

}  // namespace oft

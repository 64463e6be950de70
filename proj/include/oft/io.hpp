// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian binary primitives shared by the container formats, and the
// "DMAT" dense matrix container:
//
//   bytes 0-3  magic "DMAT"
//   byte  4    version (1)
//   u64 rows, u64 cols, rows*cols float64 values in row-major order

#include <array>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <string>
#include <string_view>

#include "oft/numkit.hpp"

namespace oft::io {

void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_magic(std::ostream& out, std::string_view magic);

// Readers throw DataError on truncated input.
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
void read_bytes(std::istream& in, char* dst, std::size_t n);
// Throws DataError if the next four bytes are not `magic`.
void expect_magic(std::istream& in, std::string_view magic);

// First four bytes of a file, or an empty string if shorter.
std::string peek_magic(const std::string& path);

// Opening helpers; both throw IoError naming the path.
std::ofstream open_for_write(const std::string& path);
std::ifstream open_for_read(const std::string& path);

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

}  // namespace oft::io

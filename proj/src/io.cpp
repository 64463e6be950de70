// SPDX-License-Identifier: Apache-2.0
#include "oft/io.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

namespace oft::io {

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
    unsigned char buf[sizeof(U)];
    read_bytes(in, reinterpret_cast<char*>(buf), sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }
void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
void write_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
void write_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 4); }

void read_bytes(std::istream& in, char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw DataError("unexpected end of container data");
}

std::uint8_t read_u8(std::istream& in) {
    char c;
    read_bytes(in, &c, 1);
    return static_cast<std::uint8_t>(c);
}
std::uint32_t read_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get_le<std::uint64_t>(in); }
float read_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

void expect_magic(std::istream& in, std::string_view magic) {
    char buf[4];
    read_bytes(in, buf, 4);
    if (std::memcmp(buf, magic.data(), 4) != 0)
        throw DataError("bad container magic: expected \"" + std::string(magic) + "\", found \"" +
                        std::string(buf, 4) + "\"");
}

std::string peek_magic(const std::string& path) {
    std::ifstream in = open_for_read(path);
    char buf[4];
    in.read(buf, 4);
    if (in.gcount() != 4) return {};
    return std::string(buf, 4);
}

std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

void write_matrix(std::ostream& out, const Matrix& m) {
    write_magic(out, "DMAT");
    write_u8(out, 1);
    write_u64(out, m.rows());
    write_u64(out, m.cols());
    for (double v : m.values()) write_f64(out, v);
}

Matrix read_matrix(std::istream& in) {
    expect_magic(in, "DMAT");
    const std::uint8_t version = read_u8(in);
    if (version != 1) throw DataError("DMAT: unsupported version " + std::to_string(version));
    const std::uint64_t rows = read_u64(in);
    const std::uint64_t cols = read_u64(in);
    if (rows != 0 && cols > std::numeric_limits<std::uint32_t>::max() / rows)
        throw DataError("DMAT: implausible shape");
    Matrix m(rows, cols);
    for (double& v : m.values()) v = read_f64(in);
    return m;
}

void save_matrix(const std::string& path, const Matrix& m) {
    std::ofstream out = open_for_write(path);
    write_matrix(out, m);
    if (!out) throw IoError("write failed for '" + path + "'");
}

Matrix load_matrix(const std::string& path) {
    std::ifstream in = open_for_read(path);
    try {
        return read_matrix(in);
    } catch (const DataError& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

}  // namespace oft::io

#include "goi/binary_io.hpp"

#include "goi/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace goi {

namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

} // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failure on '" + path.string() + "'");
    }
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failure on '" + path.string() + "'");
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw IoError("write failure on '" + path.string() + "'");
    }
}

void ByteWriter::magic(std::string_view four_cc) {
    bytes_.insert(bytes_.end(), four_cc.begin(), four_cc.end());
}

void ByteWriter::u32(std::uint32_t v) { append_raw(bytes_, v); }
void ByteWriter::u64(std::uint64_t v) { append_raw(bytes_, v); }
void ByteWriter::f32(float v) { append_raw(bytes_, v); }

void ByteWriter::f32s(std::span<const float> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
}

ByteReader::ByteReader(std::span<const std::uint8_t> bytes, std::string context)
    : bytes_(bytes), context_(std::move(context)) {}

void ByteReader::require(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
        throw FormatError(FormatError::Kind::Truncated,
                          context_ + ": expected " + std::to_string(n) + " more bytes for " + std::string(what) +
                              ", " + std::to_string(remaining()) + " available");
    }
}

void ByteReader::expect_magic(std::string_view four_cc) {
    require(four_cc.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, four_cc.data(), four_cc.size()) != 0) {
        std::string found(reinterpret_cast<const char*>(bytes_.data() + pos_), four_cc.size());
        throw FormatError(FormatError::Kind::WrongMagic,
                          context_ + ": expected magic '" + std::string(four_cc) + "', found '" + found + "'");
    }
    pos_ += four_cc.size();
}

std::uint32_t ByteReader::u32() {
    require(4, "u32");
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    require(8, "u64");
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
}

float ByteReader::f32() {
    require(4, "f32");
    float v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
}

void ByteReader::f32s(std::span<float> out) {
    require(out.size_bytes(), "f32 array");
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
}

void ByteReader::expect_end() const {
    if (remaining() != 0) {
        throw FormatError(FormatError::Kind::Malformed,
                          context_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }
}

} // namespace goi

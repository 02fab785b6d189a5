#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace goi {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Little-endian appender used by every container writer.
class ByteWriter {
public:
    void magic(std::string_view four_cc);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f32s(std::span<const float> values);

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Little-endian cursor over an in-memory file. Reads past the end raise
/// FormatError{Truncated}; `context` is included in messages.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string context);

    /// Throws FormatError{WrongMagic} when the first four bytes differ.
    void expect_magic(std::string_view four_cc);
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    void f32s(std::span<float> out);

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }
    const std::string& context() const noexcept { return context_; }

    /// Throws FormatError{Truncated} unless at least `n` bytes remain.
    void require(std::size_t n, std::string_view what) const;
    /// Throws FormatError{Malformed} if bytes are left over.
    void expect_end() const;

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string context_;
};

} // namespace goi

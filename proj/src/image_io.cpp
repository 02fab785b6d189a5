#include "goi/binary_io.hpp"
#include "goi/errors.hpp"
#include "goi/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace goi {

namespace {

constexpr char kFeatureMagic[] = "GOIF";
constexpr std::uint32_t kFeatureVersion = 1;

void append_text(std::vector<std::uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

// Parses the "P5 W H MAXVAL\n" header; returns the offset of the pixel data.
std::size_t parse_netpbm_header(std::span<const std::uint8_t> bytes, const std::string& context, const char* magic,
                                std::uint32_t& width, std::uint32_t& height, std::uint32_t& maxval) {
    if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
        throw FormatError(FormatError::Kind::WrongMagic, context + ": expected '" + std::string(magic) + "'");
    }
    std::size_t pos = 2;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&]() -> std::uint32_t {
        skip_space();
        if (pos >= bytes.size()) {
            throw FormatError(FormatError::Kind::Truncated, context + ": header ends early");
        }
        if (!std::isdigit(bytes[pos])) {
            throw FormatError(FormatError::Kind::Malformed, context + ": non-numeric header field");
        }
        std::uint64_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 0xffffffffu) {
                throw FormatError(FormatError::Kind::Malformed, context + ": header field too large");
            }
            ++pos;
        }
        return static_cast<std::uint32_t>(v);
    };
    width = number();
    height = number();
    maxval = number();
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw FormatError(FormatError::Kind::Truncated, context + ": header ends early");
    }
    ++pos;
    if (maxval == 0 || maxval > 255) {
        throw FormatError(FormatError::Kind::Malformed, context + ": only 8-bit images are supported");
    }
    return pos;
}

} // namespace

std::size_t Mask::count() const noexcept {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

std::uint8_t to_byte(float v) noexcept {
    if (!(v > 0.f)) {
        return 0;
    }
    if (v >= 1.f) {
        return 255;
    }
    return static_cast<std::uint8_t>(std::lround(v * 255.f));
}

std::vector<std::uint8_t> encode_feature_map(const FeatureMap& map) {
    ByteWriter w;
    w.magic(kFeatureMagic);
    w.u32(kFeatureVersion);
    w.u32(map.height);
    w.u32(map.width);
    w.u32(map.channels);
    w.f32s(map.data);
    return w.take();
}

FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    r.expect_magic(kFeatureMagic);
    const std::uint32_t version = r.u32();
    if (version != kFeatureVersion) {
        throw FormatError(FormatError::Kind::UnsupportedVersion, context + ": version " + std::to_string(version));
    }
    const std::uint32_t h = r.u32();
    const std::uint32_t w = r.u32();
    const std::uint32_t d = r.u32();
    const std::uint64_t n = std::uint64_t{h} * w * d;
    if (n > r.remaining() / sizeof(float)) {
        throw FormatError(FormatError::Kind::Truncated,
                          context + ": header announces " + std::to_string(n) + " values but only " +
                              std::to_string(r.remaining() / sizeof(float)) + " are present");
    }
    FeatureMap map(h, w, d);
    r.f32s(map.data);
    r.expect_end();
    return map;
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_feature_map(bytes, path.string());
}

void save_feature_map(const FeatureMap& map, const std::filesystem::path& path) {
    write_file_bytes(path, encode_feature_map(map));
}

std::vector<std::uint8_t> encode_pgm(const Mask& mask) {
    std::vector<std::uint8_t> out;
    append_text(out, "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n");
    for (std::uint8_t v : mask.data) {
        out.push_back(v ? 255 : 0);
    }
    return out;
}

std::vector<std::uint8_t> encode_pgm_gray(const FeatureMap& gray) {
    if (gray.channels != 1) {
        throw ValidationError("PGM output needs a single-channel map");
    }
    std::vector<std::uint8_t> out;
    append_text(out, "P5\n" + std::to_string(gray.width) + " " + std::to_string(gray.height) + "\n255\n");
    for (float v : gray.data) {
        out.push_back(to_byte(v));
    }
    return out;
}

Mask decode_pgm_mask(std::span<const std::uint8_t> bytes, const std::string& context) {
    std::uint32_t w = 0, h = 0, maxval = 0;
    const std::size_t pos = parse_netpbm_header(bytes, context, "P5", w, h, maxval);
    const std::size_t n = std::size_t{w} * h;
    if (bytes.size() - pos < n) {
        throw FormatError(FormatError::Kind::Truncated, context + ": pixel data is short");
    }
    Mask mask(h, w);
    for (std::size_t i = 0; i < n; ++i) {
        mask.data[i] = bytes[pos + i] != 0 ? 1 : 0;
    }
    return mask;
}

Mask load_mask(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_pgm_mask(bytes, path.string());
}

void save_mask(const Mask& mask, const std::filesystem::path& path) { write_file_bytes(path, encode_pgm(mask)); }

std::vector<std::uint8_t> encode_ppm(const FeatureMap& rgb) {
    if (rgb.channels != 3) {
        throw ValidationError("PPM output needs a 3-channel map");
    }
    std::vector<std::uint8_t> out;
    append_text(out, "P6\n" + std::to_string(rgb.width) + " " + std::to_string(rgb.height) + "\n255\n");
    for (float v : rgb.data) {
        out.push_back(to_byte(v));
    }
    return out;
}

void save_ppm(const FeatureMap& rgb, const std::filesystem::path& path) { write_file_bytes(path, encode_ppm(rgb)); }

} // namespace goi

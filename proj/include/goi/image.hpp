#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace goi {

/// Dense H x W x C float image, row-major (row, column, channel).
struct FeatureMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;
    std::vector<float> data;

    FeatureMap() = default;
    FeatureMap(std::uint32_t h, std::uint32_t w, std::uint32_t c) : height(h), width(w), channels(c), data(std::size_t{h} * w * c, 0.f) {}

    std::size_t pixel_count() const noexcept { return std::size_t{height} * width; }

    std::span<float> at(std::size_t row, std::size_t col) noexcept {
        return {data.data() + (row * width + col) * channels, channels};
    }
    std::span<const float> at(std::size_t row, std::size_t col) const noexcept {
        return {data.data() + (row * width + col) * channels, channels};
    }
    std::span<const float> pixel(std::size_t index) const noexcept {
        return {data.data() + index * channels, channels};
    }
    std::span<float> pixel(std::size_t index) noexcept { return {data.data() + index * channels, channels}; }
};

/// H x W binary mask; every value is 0 or 1.
struct Mask {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::uint32_t h, std::uint32_t w) : height(h), width(w), data(std::size_t{h} * w, 0) {}

    std::size_t pixel_count() const noexcept { return std::size_t{height} * width; }
    std::size_t count() const noexcept;

    bool operator==(const Mask&) const = default;
};

// GOIF feature maps.
std::vector<std::uint8_t> encode_feature_map(const FeatureMap& map);
FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes, const std::string& context = "GOIF");
FeatureMap load_feature_map(const std::filesystem::path& path);
void save_feature_map(const FeatureMap& map, const std::filesystem::path& path);

// Binary PGM (P5). Masks are written as 0/255 and read back as value != 0.
std::vector<std::uint8_t> encode_pgm(const Mask& mask);
std::vector<std::uint8_t> encode_pgm_gray(const FeatureMap& gray); // 1 channel in [0,1]
Mask decode_pgm_mask(std::span<const std::uint8_t> bytes, const std::string& context = "PGM");
Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

// Binary PPM (P6) from a 3-channel map in [0,1].
std::vector<std::uint8_t> encode_ppm(const FeatureMap& rgb);
void save_ppm(const FeatureMap& rgb, const std::filesystem::path& path);

/// Quantizes [0,1] to 0..255 with rounding and clamping.
std::uint8_t to_byte(float v) noexcept;

} // namespace goi

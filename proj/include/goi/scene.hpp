#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace goi {

using Vec3f = std::array<float, 3>;
using Vec3d = std::array<double, 3>;

/// One frozen 3D Gaussian plus its trainable low-dimensional semantic feature.
///
/// Scales are linear axis lengths and opacity is post-activation; both are
/// activated once at import time and never stored as logits.
struct Gaussian {
    Vec3f centroid{0.f, 0.f, 0.f};
    std::array<float, 4> rotation{1.f, 0.f, 0.f, 0.f}; // w, x, y, z
    Vec3f scale{1.f, 1.f, 1.f};
    float opacity = 1.f;
    Vec3f rgb{0.5f, 0.5f, 0.5f};
    std::vector<float> feature;
};

struct Scene {
    std::size_t feature_dim = 10;
    std::vector<Gaussian> gaussians;

    std::size_t size() const noexcept { return gaussians.size(); }
    bool empty() const noexcept { return gaussians.empty(); }

    /// Throws ValidationError naming the offending record.
    void validate() const;
};

/// Checks the per-Gaussian invariants; `index` only feeds the error message.
void validate_gaussian(const Gaussian& g, std::size_t feature_dim, std::size_t index);

/// Pinhole camera. Camera space is x right, y down, z forward; pixel (c, r)
/// is sampled at image coordinate (c, r).
struct Camera {
    std::uint32_t width = 1;
    std::uint32_t height = 1;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    std::array<double, 16> world_to_camera{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}; // row-major

    void validate() const;

    Vec3d to_camera(const Vec3f& world) const noexcept;
    double rotation(std::size_t row, std::size_t col) const noexcept { return world_to_camera[row * 4 + col]; }

    std::size_t pixel_count() const noexcept { return std::size_t{width} * height; }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    static Camera look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, std::uint32_t width,
                          std::uint32_t height, double fx, double fy, double cx, double cy);
};

// GOIS container -------------------------------------------------------------

inline constexpr std::size_t kSceneHeaderBytes = 24;
std::size_t scene_record_bytes(std::size_t feature_dim) noexcept;

std::vector<std::uint8_t> encode_scene(const Scene& scene);
Scene decode_scene(std::span<const std::uint8_t> bytes, const std::string& context = "GOIS");

Scene load_scene(const std::filesystem::path& path);
void save_scene(const Scene& scene, const std::filesystem::path& path);

// Camera JSON ----------------------------------------------------------------

nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);
Camera load_camera(const std::filesystem::path& path);
void save_camera(const Camera& cam, const std::filesystem::path& path);

// PLY import -----------------------------------------------------------------

/// Reads an ASCII or binary-little-endian PLY as written by 3DGS trainers and
/// applies the activations (sigmoid opacity, exp scale, SH DC to RGB).
/// Features are zero-initialized.
Scene import_ply(const std::filesystem::path& path, std::size_t feature_dim);
Scene import_ply_bytes(std::span<const std::uint8_t> bytes, std::size_t feature_dim,
                       const std::string& context = "PLY");

} // namespace goi

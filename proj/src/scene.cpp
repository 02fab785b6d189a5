#include "goi/scene.hpp"

#include "goi/binary_io.hpp"
#include "goi/errors.hpp"

#include <cmath>
#include <string>

#include <json.hpp>

namespace goi {

namespace {

constexpr char kSceneMagic[] = "GOIS";
constexpr std::uint32_t kSceneVersion = 1;

std::string record_prefix(std::size_t index) { return "record " + std::to_string(index) + ": "; }

bool finite3(const Vec3f& v) { return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]); }

} // namespace

void validate_gaussian(const Gaussian& g, std::size_t feature_dim, std::size_t index) {
    if (!finite3(g.centroid)) {
        throw ValidationError(record_prefix(index) + "non-finite centroid");
    }
    double qn = 0.0;
    for (float q : g.rotation) {
        qn += double{q} * q;
    }
    qn = std::sqrt(qn);
    if (!std::isfinite(qn) || std::abs(qn - 1.0) > 1e-6) {
        throw ValidationError(record_prefix(index) + "quaternion norm " + std::to_string(qn) + " is not 1");
    }
    for (float s : g.scale) {
        if (!(s > 0.f) || !std::isfinite(s)) {
            throw ValidationError(record_prefix(index) + "scale components must be positive");
        }
    }
    if (!(g.opacity >= 0.f && g.opacity <= 1.f)) {
        throw ValidationError(record_prefix(index) + "opacity outside [0,1]");
    }
    for (float c : g.rgb) {
        if (!(c >= 0.f && c <= 1.f)) {
            throw ValidationError(record_prefix(index) + "rgb outside [0,1]");
        }
    }
    if (g.feature.size() != feature_dim) {
        throw ValidationError(record_prefix(index) + "feature has " + std::to_string(g.feature.size()) +
                              " components, expected " + std::to_string(feature_dim));
    }
    for (float f : g.feature) {
        if (!std::isfinite(f)) {
            throw ValidationError(record_prefix(index) + "non-finite feature");
        }
    }
}

void Scene::validate() const {
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        validate_gaussian(gaussians[i], feature_dim, i);
    }
}

// Camera ---------------------------------------------------------------------

void Camera::validate() const {
    if (width < 1 || height < 1) {
        throw ValidationError("camera: width and height must be >= 1");
    }
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw ValidationError("camera: focal lengths must be positive");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy)) {
        throw ValidationError("camera: non-finite principal point");
    }
    for (double v : world_to_camera) {
        if (!std::isfinite(v)) {
            throw ValidationError("camera: non-finite world_to_camera entry");
        }
    }
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                dot += rotation(i, k) * rotation(j, k);
            }
            const double expected = (i == j) ? 1.0 : 0.0;
            if (std::abs(dot - expected) > 1e-5) {
                throw ValidationError("camera: rotation block of world_to_camera is not orthonormal");
            }
        }
    }
}

Vec3d Camera::to_camera(const Vec3f& p) const noexcept {
    const auto& m = world_to_camera;
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3], m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
}

Camera Camera::look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, std::uint32_t width,
                       std::uint32_t height, double fx, double fy, double cx, double cy) {
    auto sub = [](const Vec3d& a, const Vec3d& b) { return Vec3d{a[0] - b[0], a[1] - b[1], a[2] - b[2]}; };
    auto dot = [](const Vec3d& a, const Vec3d& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; };
    auto normalized = [&](const Vec3d& a) {
        const double n = std::sqrt(dot(a, a));
        if (!(n > 0.0)) {
            throw ValidationError("look_at: degenerate direction");
        }
        return Vec3d{a[0] / n, a[1] / n, a[2] / n};
    };
    auto cross = [](const Vec3d& a, const Vec3d& b) {
        return Vec3d{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
    };

    const Vec3d z = normalized(sub(target, eye));
    const double uz = dot(up, z);
    const Vec3d y = normalized(Vec3d{-(up[0] - uz * z[0]), -(up[1] - uz * z[1]), -(up[2] - uz * z[2])});
    const Vec3d x = cross(y, z);

    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    const Vec3d* rows[3] = {&x, &y, &z};
    for (std::size_t r = 0; r < 3; ++r) {
        const Vec3d& row = *rows[r];
        cam.world_to_camera[r * 4 + 0] = row[0];
        cam.world_to_camera[r * 4 + 1] = row[1];
        cam.world_to_camera[r * 4 + 2] = row[2];
        cam.world_to_camera[r * 4 + 3] = -dot(row, eye);
    }
    cam.world_to_camera[12] = 0.0;
    cam.world_to_camera[13] = 0.0;
    cam.world_to_camera[14] = 0.0;
    cam.world_to_camera[15] = 1.0;
    return cam;
}

nlohmann::json camera_to_json(const Camera& cam) {
    nlohmann::json j;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["world_to_camera"] = cam.world_to_camera;
    return j;
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera cam;
    try {
        cam.width = j.at("width").get<std::uint32_t>();
        cam.height = j.at("height").get<std::uint32_t>();
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        const auto& m = j.at("world_to_camera");
        if (!m.is_array() || m.size() != 16) {
            throw FormatError(FormatError::Kind::Malformed, "camera: world_to_camera must hold 16 numbers");
        }
        for (std::size_t i = 0; i < 16; ++i) {
            cam.world_to_camera[i] = m[i].get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("camera: ") + e.what());
    }
    cam.validate();
    return cam;
}

Camera load_camera(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(FormatError::Kind::Malformed, path.string() + ": " + e.what());
    }
    return camera_from_json(j);
}

void save_camera(const Camera& cam, const std::filesystem::path& path) {
    write_text_file(path, camera_to_json(cam).dump(2) + "\n");
}

// GOIS -----------------------------------------------------------------------

std::size_t scene_record_bytes(std::size_t feature_dim) noexcept { return (14 + feature_dim) * sizeof(float); }

std::vector<std::uint8_t> encode_scene(const Scene& scene) {
    ByteWriter w;
    w.magic(kSceneMagic);
    w.u32(kSceneVersion);
    w.u64(scene.gaussians.size());
    w.u32(static_cast<std::uint32_t>(scene.feature_dim));
    w.u32(0);
    for (const Gaussian& g : scene.gaussians) {
        w.f32s(g.centroid);
        w.f32s(g.rotation);
        w.f32s(g.scale);
        w.f32(g.opacity);
        w.f32s(g.rgb);
        w.f32s(g.feature);
    }
    return w.take();
}

Scene decode_scene(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    r.expect_magic(kSceneMagic);
    const std::uint32_t version = r.u32();
    if (version != kSceneVersion) {
        throw FormatError(FormatError::Kind::UnsupportedVersion, context + ": version " + std::to_string(version));
    }
    const std::uint64_t count = r.u64();
    const std::uint32_t feature_dim = r.u32();
    const std::uint32_t reserved = r.u32();
    if (reserved != 0) {
        throw FormatError(FormatError::Kind::Malformed, context + ": reserved header field is not zero");
    }
    const std::size_t record = scene_record_bytes(feature_dim);
    if (count > r.remaining() / record) {
        throw FormatError(FormatError::Kind::Truncated,
                          context + ": header announces " + std::to_string(count) + " records but only " +
                              std::to_string(r.remaining() / record) + " are present");
    }

    Scene scene;
    scene.feature_dim = feature_dim;
    scene.gaussians.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian& g = scene.gaussians[i];
        r.f32s(g.centroid);
        r.f32s(g.rotation);
        r.f32s(g.scale);
        g.opacity = r.f32();
        r.f32s(g.rgb);
        g.feature.resize(feature_dim);
        r.f32s(g.feature);
        validate_gaussian(g, feature_dim, i);
    }
    r.expect_end();
    return scene;
}

Scene load_scene(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_scene(bytes, path.string());
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
    scene.validate();
    write_file_bytes(path, encode_scene(scene));
}

} // namespace goi

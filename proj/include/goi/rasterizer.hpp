#pragma once

#include "goi/image.hpp"
#include "goi/scene.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace goi {

// Screen-space constants shared by the forward pass, the backward pass and any
// reference implementation that has to agree with them.
inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceDilation = 0.3; // px^2 added to the 2D covariance diagonal
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr std::uint32_t kTileSize = 16;

/// A Gaussian projected into a camera. cov2d = (a, b, c) for [[a, b], [b, c]].
struct Splat2D {
    std::array<double, 2> mean2d{};
    std::array<double, 3> cov2d{};
    std::array<double, 3> conic{}; // inverse of cov2d, same layout
    double depth = 0.0;
    double opacity = 0.0;
    std::size_t source_index = 0;
};

/// Returns std::nullopt when the Gaussian is behind the near plane or its 2D
/// covariance is degenerate.
std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam, std::size_t source_index = 0);

/// Opacity of `s` at image coordinate `pixel`, clamped to kMaxAlpha and
/// zeroed below kMinAlpha. std::nullopt if cov2d is not invertible.
std::optional<double> eval_alpha(const Splat2D& s, std::array<double, 2> pixel);

/// Same quantity from a precomputed conic; used by the tile loops.
double alpha_from_conic(const Splat2D& s, double px, double py) noexcept;

struct RenderOutput {
    FeatureMap rgb;         // H x W x 3
    FeatureMap ld_features; // H x W x D_low
    FeatureMap alpha;       // H x W x 1, 1 - final transmittance
};

/// Projected, depth-sorted and tile-binned view of a scene. Building it is the
/// expensive geometric part of a render; feature compositing and the backward
/// pass reuse it.
class RasterFrame {
public:
    RasterFrame(const Scene& scene, const Camera& cam);

    std::uint32_t width() const noexcept { return width_; }
    std::uint32_t height() const noexcept { return height_; }
    std::size_t scene_size() const noexcept { return scene_size_; }
    std::uint32_t tiles_x() const noexcept { return tiles_x_; }
    std::uint32_t tiles_y() const noexcept { return tiles_y_; }
    std::size_t tile_count() const noexcept { return std::size_t{tiles_x_} * tiles_y_; }

    /// Splats in compositing order: ascending depth, ties by source index.
    const std::vector<Splat2D>& splats() const noexcept { return splats_; }
    /// Indices into splats() overlapping `tile`, in compositing order.
    std::span<const std::uint32_t> tile_splats(std::size_t tile) const noexcept;

    /// Calls fn(splat_position, weight) for each splat that contributes to
    /// pixel (row, col), where weight = alpha_i * T_i. Returns the final
    /// transmittance.
    template <typename Fn>
    double composite_pixel(std::size_t tile, std::uint32_t row, std::uint32_t col, Fn&& fn) const;

private:
    std::uint32_t width_ = 0;
    std::uint32_t height_ = 0;
    std::size_t scene_size_ = 0;
    std::uint32_t tiles_x_ = 0;
    std::uint32_t tiles_y_ = 0;
    std::vector<Splat2D> splats_;
    std::vector<std::uint32_t> tile_offsets_; // tile_count + 1
    std::vector<std::uint32_t> tile_entries_;
};

template <typename Fn>
double RasterFrame::composite_pixel(std::size_t tile, std::uint32_t row, std::uint32_t col, Fn&& fn) const {
    const double px = col;
    const double py = row;
    double transmittance = 1.0;
    for (std::uint32_t k : tile_splats(tile)) {
        const Splat2D& s = splats_[k];
        const double alpha = alpha_from_conic(s, px, py);
        if (alpha <= 0.0) {
            continue;
        }
        fn(k, alpha * transmittance);
        transmittance *= 1.0 - alpha;
        if (transmittance < kMinTransmittance) {
            break;
        }
    }
    return transmittance;
}

/// Full forward pass: RGB, low-dimensional features and accumulated alpha.
RenderOutput render(const Scene& scene, const Camera& cam);

/// Composites arbitrary per-Gaussian vectors (scene order, `dim` values each)
/// with the weights of `frame`. Result is H*W*dim, accumulated in double.
std::vector<double> composite_features(const RasterFrame& frame, std::span<const double> per_gaussian,
                                       std::size_t dim);

/// Accumulated alpha (1 - final transmittance) per pixel.
std::vector<double> composite_alpha(const RasterFrame& frame);

/// Adjoint of composite_features: given dL/df_hat (H*W*dim), returns dL/df for
/// every Gaussian (scene order, dim each). Partial sums are reduced in
/// (tile, splat) order, so the result does not depend on the thread count.
std::vector<double> composite_features_backward(const RasterFrame& frame, std::span<const double> grad_pixels,
                                                std::size_t dim);

/// Gradient of a loss on rendered low-dimensional features with respect to each
/// Gaussian's feature. Geometry receives no gradient.
std::vector<std::vector<double>> render_backward(const Scene& scene, const Camera& cam, const FeatureMap& grad_ld);

} // namespace goi

#include "goi/rasterizer.hpp"

#include "goi/errors.hpp"
#include "goi/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace goi {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_from_quaternion(const std::array<float, 4>& q_in) {
    double w = q_in[0], x = q_in[1], y = q_in[2], z = q_in[3];
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    w /= n;
    x /= n;
    y /= n;
    z /= n;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

bool invert_cov2d(const std::array<double, 3>& cov, std::array<double, 3>& conic) {
    const double det = cov[0] * cov[2] - cov[1] * cov[1];
    if (!(det > 0.0) || !std::isfinite(det)) {
        return false;
    }
    const double inv = 1.0 / det;
    conic = {cov[2] * inv, -cov[1] * inv, cov[0] * inv};
    return true;
}

} // namespace

std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam, std::size_t source_index) {
    const Vec3d t = cam.to_camera(g.centroid);
    if (!(t[2] > kNearPlane)) {
        return std::nullopt;
    }

    // Sigma = R S S^T R^T
    const Mat3 r = rotation_from_quaternion(g.rotation);
    Mat3 m{};
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            m[i][j] = r[i][j] * g.scale[j];
        }
    }
    Mat3 sigma{};
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            sigma[i][j] = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
        }
    }

    // T = J W_rot, with J the perspective Jacobian at t.
    const double inv_z = 1.0 / t[2];
    const double inv_z2 = inv_z * inv_z;
    const double j00 = cam.fx * inv_z, j02 = -cam.fx * t[0] * inv_z2;
    const double j11 = cam.fy * inv_z, j12 = -cam.fy * t[1] * inv_z2;
    double tm[2][3];
    for (std::size_t c = 0; c < 3; ++c) {
        tm[0][c] = j00 * cam.rotation(0, c) + j02 * cam.rotation(2, c);
        tm[1][c] = j11 * cam.rotation(1, c) + j12 * cam.rotation(2, c);
    }
    double ts[2][3];
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            ts[i][j] = tm[i][0] * sigma[0][j] + tm[i][1] * sigma[1][j] + tm[i][2] * sigma[2][j];
        }
    }
    auto entry = [&](std::size_t i, std::size_t j) {
        return ts[i][0] * tm[j][0] + ts[i][1] * tm[j][1] + ts[i][2] * tm[j][2];
    };

    Splat2D s;
    s.cov2d = {entry(0, 0) + kCovarianceDilation, entry(0, 1), entry(1, 1) + kCovarianceDilation};
    if (!invert_cov2d(s.cov2d, s.conic)) {
        return std::nullopt;
    }
    s.mean2d = {cam.fx * t[0] * inv_z + cam.cx, cam.fy * t[1] * inv_z + cam.cy};
    s.depth = t[2];
    s.opacity = g.opacity;
    s.source_index = source_index;
    return s;
}

double alpha_from_conic(const Splat2D& s, double px, double py) noexcept {
    const double dx = px - s.mean2d[0];
    const double dy = py - s.mean2d[1];
    const double power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
    if (power > 0.0) {
        return 0.0;
    }
    const double alpha = std::min(kMaxAlpha, s.opacity * std::exp(power));
    return alpha < kMinAlpha ? 0.0 : alpha;
}

std::optional<double> eval_alpha(const Splat2D& s, std::array<double, 2> pixel) {
    Splat2D copy = s;
    if (!invert_cov2d(s.cov2d, copy.conic)) {
        return std::nullopt;
    }
    return alpha_from_conic(copy, pixel[0], pixel[1]);
}

// RasterFrame ----------------------------------------------------------------

RasterFrame::RasterFrame(const Scene& scene, const Camera& cam)
    : width_(cam.width), height_(cam.height), scene_size_(scene.size()) {
    cam.validate();
    tiles_x_ = (width_ + kTileSize - 1) / kTileSize;
    tiles_y_ = (height_ + kTileSize - 1) / kTileSize;

    splats_.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (auto s = project_gaussian(scene.gaussians[i], cam, i)) {
            if (s->opacity * 255.0 >= 1.0) {
                splats_.push_back(*s);
            }
        }
    }
    std::sort(splats_.begin(), splats_.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) {
            return a.depth < b.depth;
        }
        return a.source_index < b.source_index;
    });

    // Pixel rectangle outside which alpha is certainly below kMinAlpha:
    // opacity * exp(-q/2) >= 1/255  <=>  q <= 2 ln(255 * opacity), and the
    // ellipse d^T cov^-1 d <= q spans |dx| <= sqrt(q * cov_a).
    struct Range {
        std::uint32_t tx0, tx1, ty0, ty1;
        bool empty;
    };
    std::vector<Range> ranges(splats_.size());
    std::vector<std::uint32_t> counts(tile_count(), 0);
    for (std::size_t k = 0; k < splats_.size(); ++k) {
        const Splat2D& s = splats_[k];
        const double q = 2.0 * std::log(255.0 * s.opacity);
        const double ex = std::sqrt(std::max(0.0, q * s.cov2d[0])) + 1.0;
        const double ey = std::sqrt(std::max(0.0, q * s.cov2d[2])) + 1.0;
        const double x0 = std::floor(s.mean2d[0] - ex), x1 = std::ceil(s.mean2d[0] + ex);
        const double y0 = std::floor(s.mean2d[1] - ey), y1 = std::ceil(s.mean2d[1] + ey);
        Range r{0, 0, 0, 0, true};
        if (x1 >= 0.0 && y1 >= 0.0 && x0 <= width_ - 1.0 && y0 <= height_ - 1.0) {
            const auto px0 = static_cast<std::uint32_t>(std::max(0.0, x0));
            const auto px1 = static_cast<std::uint32_t>(std::min(width_ - 1.0, x1));
            const auto py0 = static_cast<std::uint32_t>(std::max(0.0, y0));
            const auto py1 = static_cast<std::uint32_t>(std::min(height_ - 1.0, y1));
            r = {px0 / kTileSize, px1 / kTileSize, py0 / kTileSize, py1 / kTileSize, false};
            for (std::uint32_t ty = r.ty0; ty <= r.ty1; ++ty) {
                for (std::uint32_t tx = r.tx0; tx <= r.tx1; ++tx) {
                    ++counts[std::size_t{ty} * tiles_x_ + tx];
                }
            }
        }
        ranges[k] = r;
    }

    tile_offsets_.assign(tile_count() + 1, 0);
    for (std::size_t t = 0; t < tile_count(); ++t) {
        tile_offsets_[t + 1] = tile_offsets_[t] + counts[t];
    }
    tile_entries_.resize(tile_offsets_.back());
    std::vector<std::uint32_t> cursor(tile_offsets_.begin(), tile_offsets_.end() - 1);
    for (std::size_t k = 0; k < splats_.size(); ++k) {
        const Range& r = ranges[k];
        if (r.empty) {
            continue;
        }
        for (std::uint32_t ty = r.ty0; ty <= r.ty1; ++ty) {
            for (std::uint32_t tx = r.tx0; tx <= r.tx1; ++tx) {
                tile_entries_[cursor[std::size_t{ty} * tiles_x_ + tx]++] = static_cast<std::uint32_t>(k);
            }
        }
    }
}

std::span<const std::uint32_t> RasterFrame::tile_splats(std::size_t tile) const noexcept {
    return {tile_entries_.data() + tile_offsets_[tile], tile_entries_.data() + tile_offsets_[tile + 1]};
}

namespace {

// Calls fn(row, col) for every pixel of `tile`.
template <typename Fn>
void for_each_tile_pixel(const RasterFrame& frame, std::size_t tile, Fn&& fn) {
    const std::uint32_t tx = static_cast<std::uint32_t>(tile % frame.tiles_x());
    const std::uint32_t ty = static_cast<std::uint32_t>(tile / frame.tiles_x());
    const std::uint32_t row_end = std::min(frame.height(), (ty + 1) * kTileSize);
    const std::uint32_t col_end = std::min(frame.width(), (tx + 1) * kTileSize);
    for (std::uint32_t row = ty * kTileSize; row < row_end; ++row) {
        for (std::uint32_t col = tx * kTileSize; col < col_end; ++col) {
            fn(row, col);
        }
    }
}

} // namespace

RenderOutput render(const Scene& scene, const Camera& cam) {
    const RasterFrame frame(scene, cam);
    const std::size_t dim = scene.feature_dim;
    RenderOutput out{FeatureMap(cam.height, cam.width, 3), FeatureMap(cam.height, cam.width, static_cast<std::uint32_t>(dim)),
                     FeatureMap(cam.height, cam.width, 1)};
    const auto& splats = frame.splats();

    parallel_for(frame.tile_count(), [&](std::size_t tile) {
        std::vector<double> feat(dim);
        for_each_tile_pixel(frame, tile, [&](std::uint32_t row, std::uint32_t col) {
            double rgb[3] = {0.0, 0.0, 0.0};
            std::fill(feat.begin(), feat.end(), 0.0);
            const double t_final = frame.composite_pixel(tile, row, col, [&](std::uint32_t k, double w) {
                const Gaussian& g = scene.gaussians[splats[k].source_index];
                for (std::size_t c = 0; c < 3; ++c) {
                    rgb[c] += w * g.rgb[c];
                }
                for (std::size_t c = 0; c < dim; ++c) {
                    feat[c] += w * g.feature[c];
                }
            });
            auto rgb_px = out.rgb.at(row, col);
            for (std::size_t c = 0; c < 3; ++c) {
                rgb_px[c] = static_cast<float>(rgb[c]);
            }
            auto feat_px = out.ld_features.at(row, col);
            for (std::size_t c = 0; c < dim; ++c) {
                feat_px[c] = static_cast<float>(feat[c]);
            }
            out.alpha.at(row, col)[0] = static_cast<float>(1.0 - t_final);
        });
    });
    return out;
}

std::vector<double> composite_features(const RasterFrame& frame, std::span<const double> per_gaussian,
                                       std::size_t dim) {
    if (per_gaussian.size() != frame.scene_size() * dim) {
        throw ValidationError("composite_features: expected " + std::to_string(frame.scene_size() * dim) +
                              " values, got " + std::to_string(per_gaussian.size()));
    }
    std::vector<double> out(std::size_t{frame.width()} * frame.height() * dim, 0.0);
    const auto& splats = frame.splats();
    parallel_for(frame.tile_count(), [&](std::size_t tile) {
        for_each_tile_pixel(frame, tile, [&](std::uint32_t row, std::uint32_t col) {
            double* px = out.data() + (std::size_t{row} * frame.width() + col) * dim;
            frame.composite_pixel(tile, row, col, [&](std::uint32_t k, double w) {
                const double* f = per_gaussian.data() + splats[k].source_index * dim;
                for (std::size_t c = 0; c < dim; ++c) {
                    px[c] += w * f[c];
                }
            });
        });
    });
    return out;
}

std::vector<double> composite_alpha(const RasterFrame& frame) {
    std::vector<double> out(std::size_t{frame.width()} * frame.height(), 0.0);
    parallel_for(frame.tile_count(), [&](std::size_t tile) {
        for_each_tile_pixel(frame, tile, [&](std::uint32_t row, std::uint32_t col) {
            const double t = frame.composite_pixel(tile, row, col, [](std::uint32_t, double) {});
            out[std::size_t{row} * frame.width() + col] = 1.0 - t;
        });
    });
    return out;
}

std::vector<double> composite_features_backward(const RasterFrame& frame, std::span<const double> grad_pixels,
                                                std::size_t dim) {
    if (grad_pixels.size() != std::size_t{frame.width()} * frame.height() * dim) {
        throw ValidationError("render_backward: gradient map has " + std::to_string(grad_pixels.size()) +
                              " values, expected " + std::to_string(std::size_t{frame.width()} * frame.height() * dim));
    }

    // One accumulator row per (tile, splat-in-tile) slot.
    std::vector<std::size_t> slot_offset(frame.tile_count() + 1, 0);
    for (std::size_t t = 0; t < frame.tile_count(); ++t) {
        slot_offset[t + 1] = slot_offset[t] + frame.tile_splats(t).size();
    }
    std::vector<double> partial(slot_offset.back() * dim, 0.0);

    parallel_for(frame.tile_count(), [&](std::size_t tile) {
        const auto list = frame.tile_splats(tile);
        if (list.empty()) {
            return;
        }
        // splat position -> slot within this tile
        const std::uint32_t first = *std::min_element(list.begin(), list.end());
        const std::uint32_t last = *std::max_element(list.begin(), list.end());
        std::vector<std::uint32_t> local(last - first + 1, 0);
        for (std::size_t i = 0; i < list.size(); ++i) {
            local[list[i] - first] = static_cast<std::uint32_t>(i);
        }
        double* acc = partial.data() + slot_offset[tile] * dim;
        for_each_tile_pixel(frame, tile, [&](std::uint32_t row, std::uint32_t col) {
            const double* g = grad_pixels.data() + (std::size_t{row} * frame.width() + col) * dim;
            frame.composite_pixel(tile, row, col, [&](std::uint32_t k, double w) {
                double* a = acc + std::size_t{local[k - first]} * dim;
                for (std::size_t c = 0; c < dim; ++c) {
                    a[c] += w * g[c];
                }
            });
        });
    });

    std::vector<double> grad(frame.scene_size() * dim, 0.0);
    const auto& splats = frame.splats();
    for (std::size_t t = 0; t < frame.tile_count(); ++t) {
        const auto list = frame.tile_splats(t);
        for (std::size_t i = 0; i < list.size(); ++i) {
            const double* a = partial.data() + (slot_offset[t] + i) * dim;
            double* out = grad.data() + splats[list[i]].source_index * dim;
            for (std::size_t c = 0; c < dim; ++c) {
                out[c] += a[c];
            }
        }
    }
    return grad;
}

std::vector<std::vector<double>> render_backward(const Scene& scene, const Camera& cam, const FeatureMap& grad_ld) {
    if (grad_ld.height != cam.height || grad_ld.width != cam.width || grad_ld.channels != scene.feature_dim) {
        throw ValidationError("render_backward: gradient map shape " + std::to_string(grad_ld.height) + "x" +
                              std::to_string(grad_ld.width) + "x" + std::to_string(grad_ld.channels) +
                              " does not match camera/scene");
    }
    const RasterFrame frame(scene, cam);
    const std::vector<double> grad_pixels(grad_ld.data.begin(), grad_ld.data.end());
    const std::size_t dim = scene.feature_dim;
    const std::vector<double> flat = composite_features_backward(frame, grad_pixels, dim);
    std::vector<std::vector<double>> out(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        out[i].assign(flat.begin() + i * dim, flat.begin() + (i + 1) * dim);
    }
    return out;
}

} // namespace goi

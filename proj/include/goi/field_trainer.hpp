#pragma once

#include "goi/image.hpp"
#include "goi/scene.hpp"
#include "goi/tfcc.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

namespace goi {

struct TrainConfig {
    std::size_t iterations = 1500;
    double lambda_ent = 0.3;
    double lambda_max = 1.0;
    double lambda_joint = 1.0;
    double lambda_e2e = 1.0;
    double tau_start = 1.0;
    double tau_end = 2.0;
    std::size_t tau_switch_iter = 1000;
    double lr_feature = 0.05;
    double lr_codebook = 0.01;
    double lr_decoder = 0.01;
    std::size_t pixels_per_iter = 4096;
    std::uint64_t seed = 0;

    void validate() const;
    LossWeights loss_weights() const noexcept { return {lambda_ent, lambda_max, lambda_joint, lambda_e2e}; }
};

nlohmann::json config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainView {
    Camera camera;
    FeatureMap gt; // may be coarser than the camera; looked up by nearest neighbour
};

struct Dataset {
    std::size_t feature_dim_high = 0;
    std::vector<TrainView> views;

    void validate() const;
};

/// Reads {"feature_dim_high":D,"views":[{"camera":...,"features":...}]}; paths
/// are relative to the manifest.
Dataset load_dataset(const std::filesystem::path& manifest);

inline constexpr std::size_t kCorpusMaxMaps = 50;
inline constexpr std::size_t kCorpusMaxPixels = 200000;

/// GT feature vectors for codebook initialization: at most `max_maps` views
/// (a seeded subset when there are more) and at most `max_pixels` pixels
/// (a seeded subsample), zero vectors dropped.
RowMatrixXf codebook_corpus(const Dataset& data, std::size_t max_maps, std::size_t max_pixels, std::uint64_t seed);

/// kmeans_init over codebook_corpus with the default limits.
Codebook init_codebook(const Dataset& data, std::size_t entries, std::size_t iters, std::uint64_t seed);

/// Row-major index of the GT pixel that render pixel (row, col) maps to.
std::size_t gt_pixel_index(const FeatureMap& gt, const Camera& cam, std::uint32_t row, std::uint32_t col) noexcept;

/// One row per loss-trace sample: iteration, total, ent, max, joint, e2e.
using LossRecord = std::array<double, 6>;

struct TrainedModel {
    Scene scene;
    Codebook codebook;
    Decoder decoder;
    TrainConfig config;
    std::vector<LossRecord> loss_trace;

    void validate() const;
};

double tau_schedule(std::size_t iter, const TrainConfig& cfg);

/// Alpha-gated pixel batch of a view: v_gt rows plus the pixel positions.
struct ViewSamples {
    std::vector<std::uint32_t> pixels; // row * width + col
    RowMatrixXf v_gt;                  // pixels.size() x D_high
};
ViewSamples valid_view_samples(const Scene& scene, const TrainView& view);

TrainedModel train_semantic_field(const Scene& scene, const Dataset& data, const Codebook& cb0, const TrainConfig& cfg);

void save_model(const TrainedModel& model, const std::filesystem::path& dir);
TrainedModel load_model(const std::filesystem::path& dir);

} // namespace goi

#pragma once

// Labeled synthetic scenes, noisy ground-truth feature maps, oracle masks and
// lookup-table embeddings for end-to-end experiments without real encoders.

#include "goi/image.hpp"
#include "goi/osh.hpp"
#include "goi/scene.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace goi {

enum class SynthShape { Blocks, Rings };

SynthShape parse_synth_shape(const std::string& name);

struct SynthSceneParams {
    SynthShape shape = SynthShape::Blocks;
    std::size_t n_clusters = 5;
    std::size_t gaussians_per_cluster = 200;
    std::size_t dim_high = 256;
    std::size_t feature_dim = 10;
    std::uint64_t seed = 0;
};

struct LabeledScene {
    SynthSceneParams params;
    Scene scene;
    std::vector<std::uint32_t> labels;       // per Gaussian
    std::vector<Eigen::VectorXd> embeddings; // per label, unit norm
    std::vector<std::string> names;          // per label
    std::vector<Vec3d> slots;                // cluster centers; slots past the last label are free
    double radius = 1.0;                     // blob radius
    Eigen::VectorXd background;              // unit embedding of empty pixels

    std::size_t label_count() const noexcept { return embeddings.size(); }
};

inline constexpr double kMaxEmbeddingCosine = 0.3;

/// Flat opaque blobs on a grid in the z = 0 plane with one spare slot, centers
/// 4.2 radii apart, and rejection-sampled label embeddings.
LabeledScene generate_scene(const SynthSceneParams& params);

/// Adds a cluster in the first free slot whose embedding has cosine
/// `distractor_cosine` with the target's.
LabeledScene generate_adversarial_pair(const LabeledScene& base, std::size_t target_label, double distractor_cosine,
                                       std::uint64_t seed);

/// Composited weight of every label at every pixel; index label_count() is
/// the background (final transmittance). Row-major H*W*(labels+1).
std::vector<double> label_weights(const LabeledScene& ls, const Camera& cam);

/// Per-pixel normalize(embedding[label] + noise) where label is the argmax of
/// label_weights; background pixels get the background embedding unchanged.
/// Noise is i.i.d. normal with per-component std noise_sigma / sqrt(D), so its
/// expected norm is about noise_sigma.
FeatureMap generate_gt_features(const LabeledScene& ls, const Camera& cam, double noise_sigma, std::uint64_t seed,
                                std::uint64_t view_id);

/// Pixels where the target label's composited weight exceeds 0.5.
Mask oracle_mask(const LabeledScene& ls, const Camera& cam, std::size_t target_label);

struct CameraRig {
    std::uint32_t size = 64;
    double distance = 12.0;
    double focal = 64.0;
    double max_polar_deg = 30.0;
};

/// Views on a spherical cap around +z looking at the origin, spread by a
/// golden-angle spiral; `phase` shifts the spiral so held-out views differ
/// from training views.
std::vector<Camera> cap_cameras(std::size_t count, const CameraRig& rig, double phase);

EmbeddingTable embedding_table(const LabeledScene& ls);

/// Named experiment presets for the synth command.
struct ExperimentPreset {
    std::string name;
    SynthSceneParams scene;
    std::size_t train_views = 20;
    std::size_t heldout_views = 3;
    double noise_sigma = 0.1;
    CameraRig rig;
    bool adversarial = false;
    std::size_t adversarial_target = 0;
    double distractor_cosine = 0.8;
};

/// Known names: blocks5, rings5, blocks5-adversarial, blocks3-small.
ExperimentPreset experiment_preset(const std::string& name);
std::vector<std::string> experiment_preset_names();

/// Writes scene.gois, labels.json, embeddings.json, manifest.json with train
/// cameras and GT maps, and testset.json with held-out cameras, GT masks and
/// pseudo-masks. experiment.json records the parameters and a codebook size
/// of one entry per label plus one for the background. Returns the generated
/// scene.
LabeledScene write_experiment(const ExperimentPreset& preset, std::uint64_t seed, const std::filesystem::path& dir);

void save_labels(const LabeledScene& ls, const std::filesystem::path& path);
std::vector<std::uint32_t> load_labels(const std::filesystem::path& path);

} // namespace goi

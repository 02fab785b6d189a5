#pragma once

#include "goi/field_trainer.hpp"
#include "goi/image.hpp"
#include "goi/osh.hpp"
#include "goi/scene.hpp"
#include "goi/tfcc.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

namespace goi {

struct DecodedGaussian {
    std::size_t index = 0;
    std::size_t entry = 0;
    Eigen::VectorXd value; // codebook row, not normalized
};

/// Hard decode of every Gaussian's stored feature, in scene order.
std::vector<DecodedGaussian> decode_gaussian_features(const Scene& scene, const Codebook& cb, const Decoder& dec);

/// Indices whose normalized decoded feature lies on the positive side of h.
std::vector<std::size_t> select_goi(const Scene& scene, const Codebook& cb, const Decoder& dec, const Hyperplane& h);

/// Per-pixel hard-decoded, normalized semantic features of one view plus the
/// alpha > 0.5 validity mask.
struct DecodedView {
    FeatureMap features; // H x W x D_high; zero where invalid
    Mask valid;
    std::vector<std::size_t> entry; // decoded codebook index per pixel
};
DecodedView decode_view(const TrainedModel& model, const Camera& cam);

struct QueryOptions {
    bool use_osh = true;
    OSHConfig osh; // osh.init_threshold is the fixed cosine threshold
    /// Skips initialization and refinement and uses this plane as is.
    std::optional<Hyperplane> plane;
};

struct QueryStats {
    std::size_t positive_pixels = 0;
    std::size_t selected_gaussians = 0;
    double osh_loss = 0.0; // final refinement loss; 0 without refinement
};

struct QueryResult {
    Mask mask;
    std::vector<std::size_t> goi_indices;
    Hyperplane hyperplane;
    QueryStats stats;
};

/// Renders and decodes the view, builds the plane from the embedding and the
/// threshold, refines it against `pseudo_mask` when use_osh is set, then
/// classifies pixels and Gaussians with the resulting plane.
QueryResult open_vocab_query(const TrainedModel& model, const Camera& cam,
                             const Eigen::Ref<const Eigen::VectorXd>& text_embedding, const Mask* pseudo_mask,
                             const QueryOptions& opts);

enum class ManipulationKind { Delete, Extract, Translate, Highlight };

struct Manipulation {
    ManipulationKind kind = ManipulationKind::Highlight;
    Vec3f delta{0.f, 0.f, 0.f};
    Vec3f color{1.f, 0.f, 0.f};
};

ManipulationKind parse_manipulation_kind(const std::string& name);

/// Returns a new scene; Gaussians not listed are untouched.
Scene manipulate(const Scene& scene, const std::vector<std::size_t>& indices, const Manipulation& action);

/// rgb blended 50% toward `color` on mask pixels.
FeatureMap overlay(const FeatureMap& rgb, const Mask& mask, const Vec3f& color);

nlohmann::json goi_to_json(const std::vector<std::size_t>& indices);
std::vector<std::size_t> goi_from_json(const nlohmann::json& j);
std::vector<std::size_t> load_goi(const std::filesystem::path& path);
void save_goi(const std::vector<std::size_t>& indices, const std::filesystem::path& path);

} // namespace goi

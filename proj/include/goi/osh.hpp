#pragma once

// Semantic-space hyperplane: a linear classifier over unit-normalized features,
// seeded from a text embedding and refined by weighted logistic regression
// against a pseudo-mask.

#include "goi/image.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace goi {

struct Hyperplane {
    Eigen::VectorXd weight;
    double bias = 0.0;

    void validate() const;
    /// weight . x + bias
    double score(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct OSHConfig {
    double pos_weight = 0.1;
    std::size_t steps = 500;
    double lr = 5.0;
    double init_threshold = 0.6;

    void validate() const;
};

Hyperplane init_hyperplane(const Eigen::Ref<const Eigen::VectorXd>& text_embedding, double threshold);

/// True iff weight . feature + bias > 0 (strict).
bool classify(const Hyperplane& h, const Eigen::Ref<const Eigen::VectorXd>& feature);

/// Returns x / |x|, or zero for a zero vector.
Eigen::VectorXd normalized(const Eigen::Ref<const Eigen::VectorXd>& x);

/// Positive iff the pixel is valid and classify() holds. `features` holds
/// already-normalized per-pixel vectors.
Mask classify_map(const Hyperplane& h, const FeatureMap& features, const Mask& valid);

struct OSHLoss {
    double value = 0.0;
    Eigen::VectorXd grad_weight;
    double grad_bias = 0.0;
};

/// Weighted BCE over the valid pixels:
///   -(1/P) sum [ w m log s(m_i) + (1 - m) log(1 - s(m_i)) ],  m_i = weight . x_i + bias.
/// `x` rows are the valid pixels' features and `labels` their pseudo-mask values.
OSHLoss osh_loss(const Hyperplane& h, const Eigen::Ref<const Eigen::MatrixXd>& x,
                 const std::vector<std::uint8_t>& labels, double pos_weight);

struct OSHResult {
    Hyperplane plane;
    double final_loss = 0.0;
    std::vector<double> loss_history; // loss before each accepted step, then the final loss
};

/// Full-batch gradient descent from h0. A step that raises the loss by more
/// than 1e-9 is retried with half the step size.
OSHResult finetune_osh(const Hyperplane& h0, const FeatureMap& features, const Mask& valid, const Mask& pseudo_mask,
                       const OSHConfig& cfg);

nlohmann::json hyperplane_to_json(const Hyperplane& h);
Hyperplane hyperplane_from_json(const nlohmann::json& j);
Hyperplane load_hyperplane(const std::filesystem::path& path);
void save_hyperplane(const Hyperplane& h, const std::filesystem::path& path);

/// Text -> embedding lookup table standing in for a text encoder.
struct EmbeddingTable {
    std::size_t dim = 0;
    std::vector<std::string> texts;
    std::vector<Eigen::VectorXd> embeddings;

    /// Throws ValidationError when `text` is absent.
    const Eigen::VectorXd& lookup(const std::string& text) const;
};

nlohmann::json embeddings_to_json(const EmbeddingTable& table);
EmbeddingTable embeddings_from_json(const nlohmann::json& j);
EmbeddingTable load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

} // namespace goi

#pragma once

// Trainable feature clustering codebook: an N x D_high entry table, a single
// affine decoder from D_low features to N entry logits, and the losses that
// train both together with the per-Gaussian features.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace goi {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kDefaultEntries = 300;
inline constexpr std::size_t kDefaultHighDim = 256;
inline constexpr double kSoftDecodeTemperature = 10.0;
inline constexpr double kMinEntryNorm = 1e-8;

struct Codebook {
    RowMatrixXf entries; // N x D_high

    std::size_t size() const noexcept { return static_cast<std::size_t>(entries.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(entries.cols()); }
    void validate() const;
};

/// e = weight * f + bias.
struct Decoder {
    RowMatrixXf weight; // N x D_low
    Eigen::VectorXf bias;

    std::size_t in_dim() const noexcept { return static_cast<std::size_t>(weight.cols()); }
    std::size_t out_dim() const noexcept { return static_cast<std::size_t>(weight.rows()); }
    void validate() const;

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
    static Decoder random_init(std::size_t out_dim, std::size_t in_dim, std::uint64_t seed);
};

/// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& values);

Eigen::VectorXd decode_logits(const Eigen::Ref<const Eigen::VectorXd>& feature, const Decoder& dec);

struct HardDecode {
    std::size_t index = 0;
    Eigen::VectorXd value;
};
HardDecode decode_hard(const Eigen::Ref<const Eigen::VectorXd>& logits, const Codebook& cb);

/// Softmax(temp * e)^T entries.
Eigen::VectorXd decode_soft(const Eigen::Ref<const Eigen::VectorXd>& logits, const Eigen::Ref<const Eigen::MatrixXd>& entries,
                            double temp);

/// argmax_i cos(v_gt, entries[i]), lowest index on ties. Throws on zero v_gt.
std::size_t assign_entry(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& entries);

struct EntryLoss {
    double value = 0.0;
    Eigen::MatrixXd grad_entries; // N x D_high
};

/// Self-entropy of Softmax(tau * cos(v_gt, entries[i])).
EntryLoss loss_ent(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& entries,
                   double tau);

/// 1 - cos(v_gt, entries[d]) with d = assign_entry(v_gt). Only row d has a
/// gradient; d itself is held fixed.
EntryLoss loss_max(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& entries);

struct VectorLoss {
    double value = 0.0;
    Eigen::VectorXd grad;
};

/// ||e - onehot(d)||^2, gradient w.r.t. e.
VectorLoss loss_joint(const Eigen::Ref<const Eigen::VectorXd>& logits, std::size_t d);

/// 1 - cos(v_gt, v), gradient w.r.t. v.
VectorLoss loss_e2e(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::VectorXd>& v);

struct LossWeights {
    double ent = 0.3;
    double max = 1.0;
    double joint = 1.0;
    double e2e = 1.0;
};

struct LossTerms {
    double total = 0.0;
    double ent = 0.0;
    double max = 0.0;
    double joint = 0.0;
    double e2e = 0.0;
};

struct TfccGradients {
    Eigen::MatrixXd entries;  // N x D_high
    Eigen::MatrixXd weight;   // N x D_low
    Eigen::VectorXd bias;     // N
    Eigen::MatrixXd features; // P x D_low, one row per batch pixel
};

struct BatchLoss {
    LossTerms terms; // unweighted batch means plus the weighted total
    TfccGradients grad;
};

/// Batch-mean combined loss over P pixels.
///   v_gt:     P x D_high ground-truth semantic features
///   features: P x D_low rendered low-dimensional features
/// L_e2e uses decode_soft at `temp_decode`; the assignment d is constant.
BatchLoss total_loss(const Eigen::Ref<const Eigen::MatrixXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& features,
                     const Eigen::Ref<const Eigen::MatrixXd>& entries, const Eigen::Ref<const Eigen::MatrixXd>& weight,
                     const Eigen::Ref<const Eigen::VectorXd>& bias, double tau, const LossWeights& weights,
                     double temp_decode = kSoftDecodeTemperature);

/// Spherical k-means over `samples` (n x D, rows non-zero). k-means++ seeding
/// on cosine distance, Lloyd iterations with cosine assignment and unit
/// renormalized centroids; empty clusters are reseeded with the sample whose
/// best similarity to the current centroids is lowest.
Codebook kmeans_init(const Eigen::Ref<const RowMatrixXf>& samples, std::size_t n_entries, std::size_t iters,
                     std::uint64_t seed);

/// Cluster index of every sample under the same assignment rule as kmeans_init.
std::vector<std::size_t> spherical_assign(const Eigen::Ref<const RowMatrixXf>& samples, const Codebook& cb);

// GOIC / GOID containers ------------------------------------------------------

std::vector<std::uint8_t> encode_codebook(const Codebook& cb);
Codebook decode_codebook(std::span<const std::uint8_t> bytes, const std::string& context = "GOIC");
Codebook load_codebook(const std::filesystem::path& path);
void save_codebook(const Codebook& cb, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_decoder(const Decoder& dec);
Decoder decode_decoder(std::span<const std::uint8_t> bytes, const std::string& context = "GOID");
Decoder load_decoder(const std::filesystem::path& path);
void save_decoder(const Decoder& dec, const std::filesystem::path& path);

} // namespace goi

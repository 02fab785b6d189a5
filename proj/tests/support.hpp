#pragma once

#include "goi/field_trainer.hpp"
#include "goi/image.hpp"
#include "goi/scene.hpp"
#include "goi/synth_oracle.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace goi::test {

/// Camera on the -z side of the origin looking along +z.
Camera front_camera(std::uint32_t size, double focal);

/// Random Gaussians around the origin; with front_camera(64, 64) most of them
/// land inside the image.
Scene random_scene(std::uint64_t seed, std::size_t count, std::size_t feature_dim);

/// Brute-force renderer: every Gaussian evaluated at every pixel, sorted by
/// depth per pixel, composited in long double. Projection is re-derived here
/// rather than shared with the library.
struct NaiveRender {
    std::vector<long double> rgb;      // H*W*3
    std::vector<long double> features; // H*W*D
    std::vector<long double> alpha;    // H*W
    /// Per pixel, (gaussian index, weight) pairs that contributed.
    std::vector<std::vector<std::pair<std::size_t, long double>>> weights;
};
NaiveRender naive_render(const Scene& scene, const Camera& cam);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path);

/// True when every regular file under `a` has a byte-identical twin under `b`
/// and vice versa.
bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b);

/// A preset experiment written to disk plus its loaded dataset and a
/// codebook sized from experiment.json.
struct Experiment {
    std::filesystem::path dir;
    LabeledScene labeled;
    Dataset data;
    Codebook codebook;
};
Experiment make_experiment(const std::string& preset, std::uint64_t seed, const std::filesystem::path& dir);

/// Fraction of Gaussians whose decoded entry is the most common entry among
/// Gaussians of the same label.
double dominant_entry_fraction(const TrainedModel& model, const std::vector<std::uint32_t>& labels);

/// A model that decodes each Gaussian to its label's embedding: one-hot
/// features, identity decoder, codebook rows = label embeddings then the
/// background.
TrainedModel labeled_model(const LabeledScene& ls);

} // namespace goi::test

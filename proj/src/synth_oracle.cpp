#include "goi/synth_oracle.hpp"

#include "goi/errors.hpp"
#include "goi/json_io.hpp"
#include "goi/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace goi {

namespace {

constexpr double kSlotSpacing = 4.2; // in blob radii
constexpr double kRingInner = 0.6;   // inner radius of a ring, in blob radii
constexpr double kGoldenAngle = 2.399963229728653;
constexpr std::size_t kMaxRejections = 10000;

const char* const kLabelNames[] = {"red apple", "blue book",   "green plant", "wooden chair", "white mug",
                                   "desk lamp", "black shoe", "glass vase",  "brass clock",  "paper kite"};

std::string label_name(std::size_t i) {
    if (i < std::size(kLabelNames)) {
        return kLabelNames[i];
    }
    return "object " + std::to_string(i);
}

Eigen::VectorXd random_unit(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    do {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            v(i) = normal(rng);
        }
    } while (!(v.norm() > 0.0));
    return v / v.norm();
}

Eigen::VectorXd sample_embedding(std::size_t dim, const std::vector<Eigen::VectorXd>& existing, std::mt19937_64& rng) {
    for (std::size_t attempt = 0; attempt < kMaxRejections; ++attempt) {
        Eigen::VectorXd v = random_unit(dim, rng);
        const bool ok = std::all_of(existing.begin(), existing.end(),
                                    [&](const Eigen::VectorXd& e) { return std::abs(e.dot(v)) <= kMaxEmbeddingCosine; });
        if (ok) {
            return v;
        }
    }
    throw NumericError("synth: could not sample a well-separated embedding");
}

Vec3f hue_color(double hue) {
    const double h = std::fmod(hue, 1.0) * 6.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
    }
    return {static_cast<float>(0.15 + 0.7 * r), static_cast<float>(0.15 + 0.7 * g), static_cast<float>(0.15 + 0.7 * b)};
}

std::vector<Gaussian> make_cluster(const Vec3d& center, double radius, std::size_t count, SynthShape shape,
                                   const Vec3f& color, std::size_t feature_dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double inner = shape == SynthShape::Rings ? kRingInner : 0.0;
    const double area = std::numbers::pi * radius * radius * (1.0 - inner * inner);
    const double spacing = std::sqrt(area / static_cast<double>(count));
    std::normal_distribution<double> jitter(0.0, 0.15 * spacing);
    const double spin = unit(rng) * 2.0 * std::numbers::pi;

    std::vector<Gaussian> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        // Area-uniform spiral over the disc or annulus.
        const double u = (static_cast<double>(k) + 0.5) / static_cast<double>(count);
        const double rad = radius * std::sqrt(inner * inner + (1.0 - inner * inner) * u);
        const double ang = spin + kGoldenAngle * static_cast<double>(k);
        Gaussian g;
        g.centroid = {static_cast<float>(center[0] + rad * std::cos(ang) + jitter(rng)),
                      static_cast<float>(center[1] + rad * std::sin(ang) + jitter(rng)), static_cast<float>(center[2])};
        const double yaw = unit(rng) * std::numbers::pi;
        g.rotation = {static_cast<float>(std::cos(0.5 * yaw)), 0.f, 0.f, static_cast<float>(std::sin(0.5 * yaw))};
        g.scale = {static_cast<float>(0.6 * spacing * (0.9 + 0.2 * unit(rng))),
                   static_cast<float>(0.6 * spacing * (0.9 + 0.2 * unit(rng))), static_cast<float>(0.05 * spacing)};
        g.opacity = static_cast<float>(0.75 + 0.15 * unit(rng));
        for (std::size_t c = 0; c < 3; ++c) {
            g.rgb[c] = std::clamp(color[c] + static_cast<float>(0.1 * (unit(rng) - 0.5)), 0.f, 1.f);
        }
        g.feature.assign(feature_dim, 0.f);
        out.push_back(std::move(g));
    }
    return out;
}

std::string two_digits(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02zu", i);
    return buf;
}

} // namespace

SynthShape parse_synth_shape(const std::string& name) {
    if (name == "blocks") {
        return SynthShape::Blocks;
    }
    if (name == "rings") {
        return SynthShape::Rings;
    }
    throw ValidationError("unknown synth shape '" + name + "'");
}

LabeledScene generate_scene(const SynthSceneParams& params) {
    if (params.n_clusters < 2) {
        throw ValidationError("synth: need at least 2 clusters");
    }
    if (params.gaussians_per_cluster < 1 || params.dim_high < 2) {
        throw ValidationError("synth: need at least one Gaussian per cluster and D_high >= 2");
    }
    std::mt19937_64 rng(params.seed);
    LabeledScene ls;
    ls.params = params;
    ls.radius = 1.0;
    ls.scene.feature_dim = params.feature_dim;

    const std::size_t slots = params.n_clusters + 1;
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(slots))));
    const std::size_t rows = (slots + cols - 1) / cols;
    const double step = kSlotSpacing * ls.radius;
    for (std::size_t s = 0; s < slots; ++s) {
        const double c = static_cast<double>(s % cols) - 0.5 * static_cast<double>(cols - 1);
        const double r = 0.5 * static_cast<double>(rows - 1) - static_cast<double>(s / cols);
        ls.slots.push_back({c * step, r * step, 0.0});
    }

    for (std::size_t l = 0; l < params.n_clusters; ++l) {
        ls.embeddings.push_back(sample_embedding(params.dim_high, ls.embeddings, rng));
        ls.names.push_back(label_name(l));
    }
    ls.background = sample_embedding(params.dim_high, ls.embeddings, rng);

    for (std::size_t l = 0; l < params.n_clusters; ++l) {
        const Vec3f color = hue_color(static_cast<double>(l) / static_cast<double>(params.n_clusters));
        for (auto& g : make_cluster(ls.slots[l], ls.radius, params.gaussians_per_cluster, params.shape, color,
                                    params.feature_dim, rng)) {
            ls.scene.gaussians.push_back(std::move(g));
            ls.labels.push_back(static_cast<std::uint32_t>(l));
        }
    }
    ls.scene.validate();
    return ls;
}

LabeledScene generate_adversarial_pair(const LabeledScene& base, std::size_t target_label, double distractor_cosine,
                                       std::uint64_t seed) {
    if (target_label >= base.label_count()) {
        throw ValidationError("synth: unknown target label " + std::to_string(target_label));
    }
    if (base.slots.size() <= base.label_count()) {
        throw ValidationError("synth: no free slot for a distractor");
    }
    if (!(std::abs(distractor_cosine) <= 1.0)) {
        throw ValidationError("synth: distractor cosine must lie in [-1, 1]");
    }
    std::mt19937_64 rng(seed);
    LabeledScene ls = base;
    const Eigen::VectorXd& t = base.embeddings[target_label];
    Eigen::VectorXd u;
    do {
        u = random_unit(static_cast<std::size_t>(t.size()), rng);
        u -= u.dot(t) * t;
    } while (!(u.norm() > 1e-6));
    u /= u.norm();
    const Eigen::VectorXd d = distractor_cosine * t + std::sqrt(1.0 - distractor_cosine * distractor_cosine) * u;

    const std::size_t label = base.label_count();
    ls.embeddings.push_back(d / d.norm());
    ls.names.push_back("decoy " + base.names[target_label]);
    const Vec3f color = hue_color(static_cast<double>(target_label) / static_cast<double>(base.label_count()) + 0.04);
    for (auto& g : make_cluster(ls.slots[label], ls.radius, base.params.gaussians_per_cluster, base.params.shape, color,
                                base.params.feature_dim, rng)) {
        ls.scene.gaussians.push_back(std::move(g));
        ls.labels.push_back(static_cast<std::uint32_t>(label));
    }
    ls.scene.validate();
    return ls;
}

std::vector<double> label_weights(const LabeledScene& ls, const Camera& cam) {
    const RasterFrame frame(ls.scene, cam);
    const std::size_t stride = ls.label_count() + 1;
    std::vector<double> out(cam.pixel_count() * stride, 0.0);
    const auto& splats = frame.splats();
    for (std::uint32_t row = 0; row < cam.height; ++row) {
        for (std::uint32_t col = 0; col < cam.width; ++col) {
            const std::size_t tile = std::size_t{row / kTileSize} * frame.tiles_x() + col / kTileSize;
            double* w = out.data() + (std::size_t{row} * cam.width + col) * stride;
            const double t = frame.composite_pixel(tile, row, col, [&](std::uint32_t k, double weight) {
                w[ls.labels[splats[k].source_index]] += weight;
            });
            w[stride - 1] = t;
        }
    }
    return out;
}

FeatureMap generate_gt_features(const LabeledScene& ls, const Camera& cam, double noise_sigma, std::uint64_t seed,
                                std::uint64_t view_id) {
    if (!(noise_sigma >= 0.0)) {
        throw ValidationError("synth: noise sigma must be non-negative");
    }
    const std::size_t labels = ls.label_count();
    const auto dim = static_cast<std::size_t>(ls.background.size());
    const std::vector<double> weights = label_weights(ls, cam);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(view_id), static_cast<std::uint32_t>(view_id >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, noise_sigma / std::sqrt(static_cast<double>(dim)));

    FeatureMap map(cam.height, cam.width, static_cast<std::uint32_t>(dim));
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < cam.pixel_count(); ++i) {
        const double* w = weights.data() + i * (labels + 1);
        const auto best = static_cast<std::size_t>(std::max_element(w, w + labels + 1) - w);
        auto px = map.pixel(i);
        if (best == labels) {
            v = ls.background;
        } else if (noise_sigma == 0.0) {
            v = ls.embeddings[best];
        } else {
            v = ls.embeddings[best];
            for (Eigen::Index c = 0; c < v.size(); ++c) {
                v(c) += normal(rng);
            }
            v /= v.norm();
        }
        for (std::size_t c = 0; c < dim; ++c) {
            px[c] = static_cast<float>(v(static_cast<Eigen::Index>(c)));
        }
    }
    return map;
}

Mask oracle_mask(const LabeledScene& ls, const Camera& cam, std::size_t target_label) {
    if (target_label >= ls.label_count()) {
        throw ValidationError("oracle_mask: unknown label " + std::to_string(target_label));
    }
    const std::size_t stride = ls.label_count() + 1;
    const std::vector<double> weights = label_weights(ls, cam);
    Mask mask(cam.height, cam.width);
    for (std::size_t i = 0; i < cam.pixel_count(); ++i) {
        mask.data[i] = weights[i * stride + target_label] > 0.5 ? 1 : 0;
    }
    return mask;
}

std::vector<Camera> cap_cameras(std::size_t count, const CameraRig& rig, double phase) {
    std::vector<Camera> out;
    const double max_polar = rig.max_polar_deg * std::numbers::pi / 180.0;
    const double c = 0.5 * (static_cast<double>(rig.size) - 1.0);
    for (std::size_t i = 0; i < count; ++i) {
        const double polar = max_polar * std::sqrt((static_cast<double>(i) + 0.5) / static_cast<double>(count));
        const double azimuth = phase + kGoldenAngle * static_cast<double>(i);
        const Vec3d eye{rig.distance * std::sin(polar) * std::cos(azimuth),
                        rig.distance * std::sin(polar) * std::sin(azimuth), rig.distance * std::cos(polar)};
        out.push_back(Camera::look_at(eye, {0.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, rig.size, rig.size, rig.focal, rig.focal,
                                      c, c));
    }
    return out;
}

EmbeddingTable embedding_table(const LabeledScene& ls) {
    EmbeddingTable table;
    table.dim = static_cast<std::size_t>(ls.background.size());
    table.texts = ls.names;
    table.embeddings = ls.embeddings;
    return table;
}

std::vector<std::string> experiment_preset_names() {
    return {"blocks5", "rings5", "blocks5-adversarial", "blocks3-small"};
}

ExperimentPreset experiment_preset(const std::string& name) {
    ExperimentPreset p;
    p.name = name;
    if (name == "blocks5") {
        return p;
    }
    if (name == "rings5") {
        p.scene.shape = SynthShape::Rings;
        return p;
    }
    if (name == "blocks5-adversarial") {
        p.adversarial = true;
        return p;
    }
    if (name == "blocks3-small") {
        p.scene.n_clusters = 3;
        p.scene.gaussians_per_cluster = 40;
        p.scene.dim_high = 32;
        p.scene.feature_dim = 6;
        p.train_views = 6;
        p.heldout_views = 2;
        p.rig.size = 32;
        p.rig.focal = 40.0;
        return p;
    }
    throw ValidationError("unknown preset '" + name + "'");
}

void save_labels(const LabeledScene& ls, const std::filesystem::path& path) {
    write_json_file(path, {{"labels", ls.labels}, {"names", ls.names}});
}

std::vector<std::uint32_t> load_labels(const std::filesystem::path& path) {
    const nlohmann::json j = read_json_file(path);
    try {
        return j.at("labels").get<std::vector<std::uint32_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, path.string() + ": " + e.what());
    }
}

LabeledScene write_experiment(const ExperimentPreset& preset, std::uint64_t seed, const std::filesystem::path& dir) {
    SynthSceneParams sp = preset.scene;
    sp.seed = seed;
    LabeledScene ls = generate_scene(sp);
    if (preset.adversarial) {
        ls = generate_adversarial_pair(ls, preset.adversarial_target, preset.distractor_cosine, seed + 1);
    }

    std::error_code ec;
    for (const char* sub : {"train", "test"}) {
        std::filesystem::create_directories(dir / sub, ec);
        if (ec) {
            throw IoError((dir / sub).string() + ": " + ec.message());
        }
    }
    save_scene(ls.scene, dir / "scene.gois");
    save_labels(ls, dir / "labels.json");
    save_embeddings(embedding_table(ls), dir / "embeddings.json");

    nlohmann::json views = nlohmann::json::array();
    const auto train = cap_cameras(preset.train_views, preset.rig, 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const std::string cam = "train/cam_" + two_digits(i) + ".json";
        const std::string feat = "train/feat_" + two_digits(i) + ".goif";
        save_camera(train[i], dir / cam);
        save_feature_map(generate_gt_features(ls, train[i], preset.noise_sigma, seed, i), dir / feat);
        views.push_back({{"camera", cam}, {"features", feat}});
    }
    write_json_file(dir / "manifest.json", {{"feature_dim_high", sp.dim_high}, {"views", views}});

    std::vector<std::size_t> targets;
    if (preset.adversarial) {
        targets.push_back(preset.adversarial_target);
    } else {
        for (std::size_t l = 0; l < ls.label_count(); ++l) {
            targets.push_back(l);
        }
    }
    nlohmann::json cases = nlohmann::json::array();
    const auto heldout = cap_cameras(preset.heldout_views, preset.rig, 1.0);
    for (std::size_t v = 0; v < heldout.size(); ++v) {
        const std::string cam = "test/cam_" + two_digits(v) + ".json";
        save_camera(heldout[v], dir / cam);
        for (std::size_t l : targets) {
            const std::string suffix = two_digits(v) + "_" + two_digits(l) + ".pgm";
            const Mask mask = oracle_mask(ls, heldout[v], l);
            save_mask(mask, dir / ("test/gt_" + suffix));
            save_mask(mask, dir / ("test/pseudo_" + suffix));
            cases.push_back({{"camera", cam},
                             {"gt_mask", "test/gt_" + suffix},
                             {"pseudo_mask", "test/pseudo_" + suffix},
                             {"text", ls.names[l]}});
        }
    }
    write_json_file(dir / "testset.json", {{"embeddings", "embeddings.json"}, {"cases", cases}});

    write_json_file(dir / "experiment.json", {{"preset", preset.name},
                                              {"seed", seed},
                                              {"clusters", ls.label_count()},
                                              {"codebook_entries", ls.label_count() + 1},
                                              {"gaussians", ls.scene.size()},
                                              {"dim_high", sp.dim_high},
                                              {"feature_dim", sp.feature_dim},
                                              {"train_views", preset.train_views},
                                              {"heldout_views", preset.heldout_views},
                                              {"image_size", preset.rig.size},
                                              {"noise_sigma", preset.noise_sigma}});
    return ls;
}

} // namespace goi

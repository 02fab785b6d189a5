#include "goi/field_trainer.hpp"

#include "goi/errors.hpp"
#include "goi/json_io.hpp"
#include "goi/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

namespace goi {

namespace {

constexpr std::size_t kTraceEvery = 10;
constexpr double kValidAlpha = 0.5;
constexpr std::uint64_t kDecoderSeedSalt = 0x9e3779b97f4a7c15ull;

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

void require_finite(const LossTerms& t, std::size_t iter) {
    if (!std::isfinite(t.total) || !std::isfinite(t.ent) || !std::isfinite(t.max) || !std::isfinite(t.joint) ||
        !std::isfinite(t.e2e)) {
        throw NumericError("training diverged at iteration " + std::to_string(iter));
    }
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

} // namespace

void TrainConfig::validate() const {
    if (iterations < 1) {
        throw ValidationError("config: iterations must be at least 1");
    }
    if (!(lr_feature > 0.0) || !(lr_codebook > 0.0) || !(lr_decoder > 0.0)) {
        throw ValidationError("config: learning rates must be positive");
    }
    if (tau_switch_iter > iterations) {
        throw ValidationError("config: tau_switch_iter exceeds iterations");
    }
    if (!(tau_start > 0.0) || !(tau_end > 0.0)) {
        throw ValidationError("config: tau must be positive");
    }
    for (double l : {lambda_ent, lambda_max, lambda_joint, lambda_e2e}) {
        if (!std::isfinite(l)) {
            throw ValidationError("config: loss weights must be finite");
        }
    }
    if (pixels_per_iter < 1) {
        throw ValidationError("config: pixels_per_iter must be at least 1");
    }
}

nlohmann::json config_to_json(const TrainConfig& cfg) {
    return {
        {"iterations", cfg.iterations},
        {"lambda_ent", cfg.lambda_ent},
        {"lambda_max", cfg.lambda_max},
        {"lambda_joint", cfg.lambda_joint},
        {"lambda_e2e", cfg.lambda_e2e},
        {"tau_start", cfg.tau_start},
        {"tau_end", cfg.tau_end},
        {"tau_switch_iter", cfg.tau_switch_iter},
        {"lr_feature", cfg.lr_feature},
        {"lr_codebook", cfg.lr_codebook},
        {"lr_decoder", cfg.lr_decoder},
        {"pixels_per_iter", cfg.pixels_per_iter},
        {"seed", cfg.seed},
    };
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base) {
    if (!j.is_object()) {
        throw FormatError(FormatError::Kind::Malformed, "config: expected a JSON object");
    }
    const nlohmann::json known = config_to_json(base);
    for (const auto& item : j.items()) {
        if (!known.contains(item.key())) {
            throw ValidationError("config: unknown key '" + item.key() + "'");
        }
    }
    try {
        read_field(j, "iterations", base.iterations);
        read_field(j, "lambda_ent", base.lambda_ent);
        read_field(j, "lambda_max", base.lambda_max);
        read_field(j, "lambda_joint", base.lambda_joint);
        read_field(j, "lambda_e2e", base.lambda_e2e);
        read_field(j, "tau_start", base.tau_start);
        read_field(j, "tau_end", base.tau_end);
        read_field(j, "tau_switch_iter", base.tau_switch_iter);
        read_field(j, "lr_feature", base.lr_feature);
        read_field(j, "lr_codebook", base.lr_codebook);
        read_field(j, "lr_decoder", base.lr_decoder);
        read_field(j, "pixels_per_iter", base.pixels_per_iter);
        read_field(j, "seed", base.seed);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("config: ") + e.what());
    }
    return base;
}

void Dataset::validate() const {
    if (views.empty()) {
        throw ValidationError("dataset: no views");
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& v = views[i];
        v.camera.validate();
        if (v.gt.channels != feature_dim_high) {
            throw ValidationError("dataset: view " + std::to_string(i) + " has " + std::to_string(v.gt.channels) +
                                  " feature channels, expected " + std::to_string(feature_dim_high));
        }
        if (v.gt.height == 0 || v.gt.width == 0 || v.gt.height > v.camera.height || v.gt.width > v.camera.width) {
            throw ValidationError("dataset: view " + std::to_string(i) + " feature map is " +
                                  std::to_string(v.gt.height) + "x" + std::to_string(v.gt.width) +
                                  ", camera is " + std::to_string(v.camera.height) + "x" +
                                  std::to_string(v.camera.width));
        }
    }
}

Dataset load_dataset(const std::filesystem::path& manifest) {
    const nlohmann::json j = read_json_file(manifest);
    const auto base = manifest.parent_path();
    Dataset data;
    try {
        data.feature_dim_high = j.at("feature_dim_high").get<std::size_t>();
        for (const auto& v : j.at("views")) {
            TrainView view;
            view.camera = load_camera(base / v.at("camera").get<std::string>());
            view.gt = load_feature_map(base / v.at("features").get<std::string>());
            data.views.push_back(std::move(view));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, manifest.string() + ": " + e.what());
    }
    data.validate();
    return data;
}

std::size_t gt_pixel_index(const FeatureMap& gt, const Camera& cam, std::uint32_t row, std::uint32_t col) noexcept {
    const auto gr = std::min<std::size_t>(gt.height - 1, (std::size_t{row} * gt.height) / cam.height);
    const auto gc = std::min<std::size_t>(gt.width - 1, (std::size_t{col} * gt.width) / cam.width);
    return gr * gt.width + gc;
}

RowMatrixXf codebook_corpus(const Dataset& data, std::size_t max_maps, std::size_t max_pixels, std::uint64_t seed) {
    data.validate();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> maps(data.views.size());
    std::iota(maps.begin(), maps.end(), std::size_t{0});
    if (maps.size() > max_maps) {
        std::shuffle(maps.begin(), maps.end(), rng);
        maps.resize(max_maps);
        std::sort(maps.begin(), maps.end());
    }
    std::vector<std::pair<std::size_t, std::size_t>> refs; // (view, pixel)
    for (std::size_t v : maps) {
        const FeatureMap& gt = data.views[v].gt;
        for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
            const auto px = gt.pixel(i);
            if (std::any_of(px.begin(), px.end(), [](float x) { return x != 0.f; })) {
                refs.emplace_back(v, i);
            }
        }
    }
    if (refs.size() > max_pixels) {
        for (std::size_t i = 0; i < max_pixels; ++i) {
            const std::size_t j = std::uniform_int_distribution<std::size_t>(i, refs.size() - 1)(rng);
            std::swap(refs[i], refs[j]);
        }
        refs.resize(max_pixels);
        std::sort(refs.begin(), refs.end());
    }
    RowMatrixXf out(static_cast<Eigen::Index>(refs.size()), static_cast<Eigen::Index>(data.feature_dim_high));
    for (std::size_t r = 0; r < refs.size(); ++r) {
        const auto px = data.views[refs[r].first].gt.pixel(refs[r].second);
        for (std::size_t c = 0; c < px.size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = px[c];
        }
    }
    return out;
}

Codebook init_codebook(const Dataset& data, std::size_t entries, std::size_t iters, std::uint64_t seed) {
    return kmeans_init(codebook_corpus(data, kCorpusMaxMaps, kCorpusMaxPixels, seed), entries, iters, seed);
}

void TrainedModel::validate() const {
    scene.validate();
    codebook.validate();
    decoder.validate();
    if (decoder.out_dim() != codebook.size()) {
        throw ValidationError("model: codebook has " + std::to_string(codebook.size()) + " entries but decoder has " +
                              std::to_string(decoder.out_dim()) + " outputs");
    }
    if (decoder.in_dim() != scene.feature_dim) {
        throw ValidationError("model: decoder expects " + std::to_string(decoder.in_dim()) +
                              "-d features but scene has " + std::to_string(scene.feature_dim));
    }
}

double tau_schedule(std::size_t iter, const TrainConfig& cfg) {
    return iter < cfg.tau_switch_iter ? cfg.tau_start : cfg.tau_end;
}

ViewSamples valid_view_samples(const Scene& scene, const TrainView& view) {
    const RasterFrame frame(scene, view.camera);
    const std::vector<double> alpha = composite_alpha(frame);
    ViewSamples out;
    for (std::uint32_t i = 0; i < alpha.size(); ++i) {
        if (alpha[i] > kValidAlpha) {
            out.pixels.push_back(i);
        }
    }
    const auto dim = static_cast<Eigen::Index>(view.gt.channels);
    out.v_gt.resize(static_cast<Eigen::Index>(out.pixels.size()), dim);
    for (std::size_t k = 0; k < out.pixels.size(); ++k) {
        const std::uint32_t row = out.pixels[k] / view.camera.width;
        const std::uint32_t col = out.pixels[k] % view.camera.width;
        const auto src = view.gt.pixel(gt_pixel_index(view.gt, view.camera, row, col));
        for (Eigen::Index c = 0; c < dim; ++c) {
            out.v_gt(static_cast<Eigen::Index>(k), c) = src[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

TrainedModel train_semantic_field(const Scene& scene, const Dataset& data, const Codebook& cb0, const TrainConfig& cfg) {
    scene.validate();
    data.validate();
    cb0.validate();
    if (cb0.dim() != data.feature_dim_high) {
        throw ValidationError("train: codebook dimension " + std::to_string(cb0.dim()) + " does not match dataset " +
                              std::to_string(data.feature_dim_high));
    }
    const std::size_t dim_low = scene.feature_dim;
    const std::size_t n = scene.size();

    TrainedModel model;
    model.scene = scene;
    model.codebook = cb0;
    model.decoder = Decoder::random_init(cb0.size(), dim_low, cfg.seed ^ kDecoderSeedSalt);
    model.config = cfg;
    if (cfg.iterations == 0) {
        return model;
    }
    cfg.validate();

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.views.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    // Geometry is frozen, so projection, binning and the alpha gate are per-view constants.
    std::vector<RasterFrame> frames;
    std::vector<ViewSamples> samples;
    frames.reserve(data.views.size());
    for (const auto& view : data.views) {
        frames.emplace_back(scene, view.camera);
        samples.push_back(valid_view_samples(scene, view));
    }
    std::vector<char> warned(data.views.size(), 0);

    std::vector<double> features(n * dim_low);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(scene.gaussians[i].feature.begin(), scene.gaussians[i].feature.end(),
                  features.begin() + static_cast<std::ptrdiff_t>(i * dim_low));
    }
    Eigen::MatrixXd entries = cb0.entries.cast<double>();
    Eigen::MatrixXd weight = model.decoder.weight.cast<double>();
    Eigen::VectorXd bias = model.decoder.bias.cast<double>();
    const LossWeights weights = cfg.loss_weights();

    std::vector<std::uint32_t> pick;
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        const std::size_t v = order[iter % order.size()];
        const ViewSamples& vs = samples[v];
        const RasterFrame& frame = frames[v];
        if (vs.pixels.empty()) {
            if (!warned[v]) {
                std::cerr << "warning: view " << v << " has no opaque pixels; skipped\n";
                warned[v] = 1;
            }
            continue;
        }

        pick.resize(vs.pixels.size());
        std::iota(pick.begin(), pick.end(), 0u);
        if (pick.size() > cfg.pixels_per_iter) {
            for (std::size_t i = 0; i < cfg.pixels_per_iter; ++i) {
                const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pick.size() - 1)(rng);
                std::swap(pick[i], pick[j]);
            }
            pick.resize(cfg.pixels_per_iter);
            std::sort(pick.begin(), pick.end());
        }
        const auto p = static_cast<Eigen::Index>(pick.size());

        const std::vector<double> rendered = composite_features(frame, features, dim_low);
        Eigen::MatrixXd f_hat(p, static_cast<Eigen::Index>(dim_low));
        Eigen::MatrixXd v_gt(p, vs.v_gt.cols());
        for (Eigen::Index k = 0; k < p; ++k) {
            const std::uint32_t s = pick[static_cast<std::size_t>(k)];
            const double* src = rendered.data() + std::size_t{vs.pixels[s]} * dim_low;
            for (std::size_t c = 0; c < dim_low; ++c) {
                f_hat(k, static_cast<Eigen::Index>(c)) = src[c];
            }
            v_gt.row(k) = vs.v_gt.row(s).cast<double>();
        }

        const BatchLoss loss = total_loss(v_gt, f_hat, entries, weight, bias, tau_schedule(iter, cfg), weights);
        require_finite(loss.terms, iter);
        if (iter % kTraceEvery == 0 || iter + 1 == cfg.iterations) {
            const LossTerms& t = loss.terms;
            model.loss_trace.push_back({static_cast<double>(iter), t.total, t.ent, t.max, t.joint, t.e2e});
        }

        std::vector<double> grad_pixels(std::size_t{frame.width()} * frame.height() * dim_low, 0.0);
        for (Eigen::Index k = 0; k < p; ++k) {
            double* dst = grad_pixels.data() + std::size_t{vs.pixels[pick[static_cast<std::size_t>(k)]]} * dim_low;
            for (std::size_t c = 0; c < dim_low; ++c) {
                dst[c] = loss.grad.features(k, static_cast<Eigen::Index>(c));
            }
        }
        const std::vector<double> grad_features = composite_features_backward(frame, grad_pixels, dim_low);

        for (std::size_t i = 0; i < features.size(); ++i) {
            features[i] -= cfg.lr_feature * grad_features[i];
        }
        entries -= cfg.lr_codebook * loss.grad.entries;
        weight -= cfg.lr_decoder * loss.grad.weight;
        bias -= cfg.lr_decoder * loss.grad.bias;

        for (Eigen::Index r = 0; r < entries.rows(); ++r) {
            if (!(entries.row(r).norm() >= kMinEntryNorm)) {
                entries.row(r) = random_unit(static_cast<std::size_t>(entries.cols()), rng).transpose();
            }
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto& f = model.scene.gaussians[i].feature;
        for (std::size_t c = 0; c < dim_low; ++c) {
            f[c] = static_cast<float>(features[i * dim_low + c]);
        }
    }
    model.codebook.entries = entries.cast<float>();
    model.decoder.weight = weight.cast<float>();
    model.decoder.bias = bias.cast<float>();
    model.validate();
    return model;
}

void save_model(const TrainedModel& model, const std::filesystem::path& dir) {
    model.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError(dir.string() + ": " + ec.message());
    }
    save_scene(model.scene, dir / "scene.gois");
    save_codebook(model.codebook, dir / "codebook.goic");
    save_decoder(model.decoder, dir / "decoder.goid");
    nlohmann::json meta;
    meta["config"] = config_to_json(model.config);
    meta["loss_trace"] = model.loss_trace;
    write_json_file(dir / "meta.json", meta);
}

TrainedModel load_model(const std::filesystem::path& dir) {
    TrainedModel model;
    model.scene = load_scene(dir / "scene.gois");
    model.codebook = load_codebook(dir / "codebook.goic");
    model.decoder = load_decoder(dir / "decoder.goid");
    const auto meta_path = dir / "meta.json";
    const nlohmann::json meta = read_json_file(meta_path);
    try {
        model.config = config_from_json(meta.at("config"));
        model.loss_trace = meta.at("loss_trace").get<std::vector<LossRecord>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, meta_path.string() + ": " + e.what());
    }
    model.validate();
    return model;
}

} // namespace goi

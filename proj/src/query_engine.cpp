#include "goi/query_engine.hpp"

#include "goi/errors.hpp"
#include "goi/json_io.hpp"
#include "goi/rasterizer.hpp"

#include <algorithm>

namespace goi {

namespace {

constexpr double kValidAlpha = 0.5;

std::vector<Eigen::VectorXd> unit_entries(const Codebook& cb) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(cb.size());
    for (Eigen::Index i = 0; i < cb.entries.rows(); ++i) {
        out.push_back(normalized(cb.entries.row(i).transpose().cast<double>()));
    }
    return out;
}

void check_model_dims(const Scene& scene, const Codebook& cb, const Decoder& dec) {
    if (dec.in_dim() != scene.feature_dim || dec.out_dim() != cb.size()) {
        throw ValidationError("model: decoder shape " + std::to_string(dec.out_dim()) + "x" +
                              std::to_string(dec.in_dim()) + " does not match codebook size " +
                              std::to_string(cb.size()) + " and feature dimension " +
                              std::to_string(scene.feature_dim));
    }
}

} // namespace

std::vector<DecodedGaussian> decode_gaussian_features(const Scene& scene, const Codebook& cb, const Decoder& dec) {
    check_model_dims(scene, cb, dec);
    std::vector<DecodedGaussian> out;
    out.reserve(scene.size());
    Eigen::VectorXd f(static_cast<Eigen::Index>(scene.feature_dim));
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& g = scene.gaussians[i];
        for (std::size_t c = 0; c < scene.feature_dim; ++c) {
            f(static_cast<Eigen::Index>(c)) = g.feature[c];
        }
        HardDecode hd = decode_hard(decode_logits(f, dec), cb);
        out.push_back({i, hd.index, std::move(hd.value)});
    }
    return out;
}

std::vector<std::size_t> select_goi(const Scene& scene, const Codebook& cb, const Decoder& dec, const Hyperplane& h) {
    h.validate();
    if (static_cast<std::size_t>(h.weight.size()) != cb.dim()) {
        throw ValidationError("select_goi: hyperplane dimension does not match codebook");
    }
    // Every Gaussian decodes to a codebook row, so classify each row once.
    const auto units = unit_entries(cb);
    std::vector<char> positive(cb.size());
    for (std::size_t k = 0; k < cb.size(); ++k) {
        positive[k] = classify(h, units[k]) ? 1 : 0;
    }
    std::vector<std::size_t> out;
    for (const auto& d : decode_gaussian_features(scene, cb, dec)) {
        if (positive[d.entry]) {
            out.push_back(d.index);
        }
    }
    return out;
}

DecodedView decode_view(const TrainedModel& model, const Camera& cam) {
    check_model_dims(model.scene, model.codebook, model.decoder);
    const RasterFrame frame(model.scene, cam);
    const std::size_t dim_low = model.scene.feature_dim;
    std::vector<double> per_gaussian(model.scene.size() * dim_low);
    for (std::size_t i = 0; i < model.scene.size(); ++i) {
        std::copy(model.scene.gaussians[i].feature.begin(), model.scene.gaussians[i].feature.end(),
                  per_gaussian.begin() + static_cast<std::ptrdiff_t>(i * dim_low));
    }
    const std::vector<double> rendered = composite_features(frame, per_gaussian, dim_low);
    const std::vector<double> alpha = composite_alpha(frame);
    const auto units = unit_entries(model.codebook);

    DecodedView out;
    out.features = FeatureMap(cam.height, cam.width, static_cast<std::uint32_t>(model.codebook.dim()));
    out.valid = Mask(cam.height, cam.width);
    out.entry.assign(cam.pixel_count(), 0);
    for (std::size_t i = 0; i < cam.pixel_count(); ++i) {
        if (!(alpha[i] > kValidAlpha)) {
            continue;
        }
        out.valid.data[i] = 1;
        const Eigen::Map<const Eigen::VectorXd> f(rendered.data() + i * dim_low, static_cast<Eigen::Index>(dim_low));
        const std::size_t k = argmax_lowest(decode_logits(f, model.decoder));
        out.entry[i] = k;
        auto px = out.features.pixel(i);
        for (std::size_t c = 0; c < px.size(); ++c) {
            px[c] = static_cast<float>(units[k](static_cast<Eigen::Index>(c)));
        }
    }
    return out;
}

QueryResult open_vocab_query(const TrainedModel& model, const Camera& cam,
                             const Eigen::Ref<const Eigen::VectorXd>& text_embedding, const Mask* pseudo_mask,
                             const QueryOptions& opts) {
    if (text_embedding.size() == 0) {
        throw ValidationError("query: empty text embedding");
    }
    if (static_cast<std::size_t>(text_embedding.size()) != model.codebook.dim()) {
        throw ValidationError("query: embedding has dimension " + std::to_string(text_embedding.size()) +
                              ", model uses " + std::to_string(model.codebook.dim()));
    }
    const bool refine = opts.use_osh && !opts.plane;
    if (refine && pseudo_mask == nullptr) {
        throw ValidationError("query: hyperplane refinement needs a pseudo-mask");
    }
    const DecodedView view = decode_view(model, cam);

    QueryResult result;
    if (opts.plane) {
        result.hyperplane = *opts.plane;
        result.hyperplane.validate();
    } else {
        result.hyperplane = init_hyperplane(text_embedding, opts.osh.init_threshold);
    }
    if (refine) {
        OSHResult r = finetune_osh(result.hyperplane, view.features, view.valid, *pseudo_mask, opts.osh);
        result.hyperplane = std::move(r.plane);
        result.stats.osh_loss = r.final_loss;
    }
    result.mask = classify_map(result.hyperplane, view.features, view.valid);
    result.goi_indices = select_goi(model.scene, model.codebook, model.decoder, result.hyperplane);
    result.stats.positive_pixels = result.mask.count();
    result.stats.selected_gaussians = result.goi_indices.size();
    return result;
}

ManipulationKind parse_manipulation_kind(const std::string& name) {
    if (name == "delete") {
        return ManipulationKind::Delete;
    }
    if (name == "extract") {
        return ManipulationKind::Extract;
    }
    if (name == "translate") {
        return ManipulationKind::Translate;
    }
    if (name == "highlight") {
        return ManipulationKind::Highlight;
    }
    throw ValidationError("unknown action '" + name + "'");
}

Scene manipulate(const Scene& scene, const std::vector<std::size_t>& indices, const Manipulation& action) {
    std::vector<char> selected(scene.size(), 0);
    for (std::size_t i : indices) {
        if (i >= scene.size()) {
            throw ValidationError("manipulate: index " + std::to_string(i) + " out of range for " +
                                  std::to_string(scene.size()) + " Gaussians");
        }
        selected[i] = 1;
    }
    Scene out;
    out.feature_dim = scene.feature_dim;
    switch (action.kind) {
    case ManipulationKind::Delete:
    case ManipulationKind::Extract: {
        const char keep = action.kind == ManipulationKind::Extract ? 1 : 0;
        for (std::size_t i = 0; i < scene.size(); ++i) {
            if (selected[i] == keep) {
                out.gaussians.push_back(scene.gaussians[i]);
            }
        }
        break;
    }
    case ManipulationKind::Translate:
        out.gaussians = scene.gaussians;
        for (std::size_t i = 0; i < scene.size(); ++i) {
            if (selected[i]) {
                for (std::size_t c = 0; c < 3; ++c) {
                    out.gaussians[i].centroid[c] += action.delta[c];
                }
            }
        }
        break;
    case ManipulationKind::Highlight:
        for (float c : action.color) {
            if (!(c >= 0.f && c <= 1.f)) {
                throw ValidationError("manipulate: highlight color must lie in [0,1]");
            }
        }
        out.gaussians = scene.gaussians;
        for (std::size_t i = 0; i < scene.size(); ++i) {
            if (selected[i]) {
                out.gaussians[i].rgb = action.color;
            }
        }
        break;
    }
    return out;
}

FeatureMap overlay(const FeatureMap& rgb, const Mask& mask, const Vec3f& color) {
    if (rgb.channels != 3 || rgb.height != mask.height || rgb.width != mask.width) {
        throw ValidationError("overlay: image and mask shapes differ");
    }
    FeatureMap out = rgb;
    for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
        if (mask.data[i]) {
            auto px = out.pixel(i);
            for (std::size_t c = 0; c < 3; ++c) {
                px[c] = 0.5f * px[c] + 0.5f * color[c];
            }
        }
    }
    return out;
}

nlohmann::json goi_to_json(const std::vector<std::size_t>& indices) { return {{"indices", indices}}; }

std::vector<std::size_t> goi_from_json(const nlohmann::json& j) {
    std::vector<std::size_t> out;
    try {
        out = j.at("indices").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("goi: ") + e.what());
    }
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i] <= out[i - 1]) {
            throw ValidationError("goi: indices must be strictly increasing");
        }
    }
    return out;
}

std::vector<std::size_t> load_goi(const std::filesystem::path& path) { return goi_from_json(read_json_file(path)); }

void save_goi(const std::vector<std::size_t>& indices, const std::filesystem::path& path) {
    write_json_file(path, goi_to_json(indices));
}

} // namespace goi

#include "goi/osh.hpp"

#include "goi/errors.hpp"
#include "goi/json_io.hpp"

#include <cmath>

namespace goi {

namespace {

constexpr double kMonotoneSlack = 1e-9;
constexpr int kMaxHalvings = 60;

// log(1 + e^x) without overflow.
double softplus(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) noexcept {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_shapes(const FeatureMap& features, const Mask& m, const char* what) {
    if (features.height != m.height || features.width != m.width) {
        throw ValidationError(std::string(what) + ": mask is " + std::to_string(m.height) + "x" +
                              std::to_string(m.width) + ", feature map is " + std::to_string(features.height) + "x" +
                              std::to_string(features.width));
    }
}

} // namespace

void Hyperplane::validate() const {
    if (weight.size() == 0 || !weight.allFinite() || !(weight.norm() > 0.0) || !std::isfinite(bias)) {
        throw ValidationError("hyperplane: weight must be finite and non-zero");
    }
}

double Hyperplane::score(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != weight.size()) {
        throw ValidationError("hyperplane: feature has dimension " + std::to_string(x.size()) + ", expected " +
                              std::to_string(weight.size()));
    }
    return weight.dot(x) + bias;
}

void OSHConfig::validate() const {
    if (!(pos_weight > 0.0) || steps < 1 || !(lr > 0.0) || !std::isfinite(init_threshold)) {
        throw ValidationError("osh config: need pos_weight > 0, steps >= 1, lr > 0");
    }
}

Hyperplane init_hyperplane(const Eigen::Ref<const Eigen::VectorXd>& text_embedding, double threshold) {
    const double n = text_embedding.norm();
    if (text_embedding.size() == 0 || !(n > 0.0) || !std::isfinite(n)) {
        throw ValidationError("init_hyperplane: text embedding must be finite and non-zero");
    }
    return {text_embedding / n, -threshold};
}

bool classify(const Hyperplane& h, const Eigen::Ref<const Eigen::VectorXd>& feature) { return h.score(feature) > 0.0; }

Eigen::VectorXd normalized(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const double n = x.norm();
    if (!(n > 0.0)) {
        return Eigen::VectorXd::Zero(x.size());
    }
    return x / n;
}

Mask classify_map(const Hyperplane& h, const FeatureMap& features, const Mask& valid) {
    check_shapes(features, valid, "classify_map");
    if (features.channels != static_cast<std::size_t>(h.weight.size())) {
        throw ValidationError("classify_map: feature map has " + std::to_string(features.channels) +
                              " channels, hyperplane has " + std::to_string(h.weight.size()));
    }
    Mask out(features.height, features.width);
    Eigen::VectorXd x(h.weight.size());
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        if (!valid.data[i]) {
            continue;
        }
        const auto px = features.pixel(i);
        for (Eigen::Index c = 0; c < x.size(); ++c) {
            x(c) = px[static_cast<std::size_t>(c)];
        }
        out.data[i] = classify(h, x) ? 1 : 0;
    }
    return out;
}

OSHLoss osh_loss(const Hyperplane& h, const Eigen::Ref<const Eigen::MatrixXd>& x,
                 const std::vector<std::uint8_t>& labels, double pos_weight) {
    const auto p = x.rows();
    if (p == 0) {
        throw ValidationError("osh_loss: no valid pixels");
    }
    if (static_cast<std::size_t>(p) != labels.size() || x.cols() != h.weight.size()) {
        throw ValidationError("osh_loss: shape mismatch");
    }
    const Eigen::VectorXd m = (x * h.weight).array() + h.bias;
    Eigen::VectorXd dm(p);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
        // -log s(m) = softplus(-m), -log(1 - s(m)) = softplus(m)
        if (labels[static_cast<std::size_t>(i)]) {
            sum += pos_weight * softplus(-m(i));
            dm(i) = -pos_weight * sigmoid(-m(i));
        } else {
            sum += softplus(m(i));
            dm(i) = sigmoid(m(i));
        }
    }
    const double inv_p = 1.0 / static_cast<double>(p);
    OSHLoss out;
    out.value = sum * inv_p;
    out.grad_weight = (x.transpose() * dm) * inv_p;
    out.grad_bias = dm.sum() * inv_p;
    return out;
}

OSHResult finetune_osh(const Hyperplane& h0, const FeatureMap& features, const Mask& valid, const Mask& pseudo_mask,
                       const OSHConfig& cfg) {
    cfg.validate();
    h0.validate();
    check_shapes(features, valid, "finetune_osh");
    check_shapes(features, pseudo_mask, "finetune_osh pseudo-mask");
    if (features.channels != static_cast<std::size_t>(h0.weight.size())) {
        throw ValidationError("finetune_osh: feature dimension does not match hyperplane");
    }
    const std::size_t p = valid.count();
    if (p == 0) {
        throw ValidationError("finetune_osh: no valid pixels");
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(p), h0.weight.size());
    std::vector<std::uint8_t> labels;
    labels.reserve(p);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < valid.pixel_count(); ++i) {
        if (!valid.data[i]) {
            continue;
        }
        const auto px = features.pixel(i);
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            x(row, c) = px[static_cast<std::size_t>(c)];
        }
        labels.push_back(pseudo_mask.data[i] ? 1 : 0);
        ++row;
    }

    OSHResult result;
    result.plane = h0;
    double lr = cfg.lr;
    OSHLoss cur = osh_loss(result.plane, x, labels, cfg.pos_weight);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        result.loss_history.push_back(cur.value);
        bool accepted = false;
        for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
            Hyperplane next = result.plane;
            next.weight -= lr * cur.grad_weight;
            next.bias -= lr * cur.grad_bias;
            OSHLoss trial = osh_loss(next, x, labels, cfg.pos_weight);
            if (std::isfinite(trial.value) && trial.value <= cur.value + kMonotoneSlack) {
                result.plane = std::move(next);
                cur = std::move(trial);
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if (!accepted) {
            break;
        }
    }
    result.final_loss = cur.value;
    result.loss_history.push_back(cur.value);
    result.plane.validate();
    return result;
}

nlohmann::json hyperplane_to_json(const Hyperplane& h) {
    return {{"weight", std::vector<double>(h.weight.data(), h.weight.data() + h.weight.size())}, {"bias", h.bias}};
}

Hyperplane hyperplane_from_json(const nlohmann::json& j) {
    Hyperplane h;
    try {
        const auto w = j.at("weight").get<std::vector<double>>();
        h.weight = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
        h.bias = j.at("bias").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("hyperplane: ") + e.what());
    }
    h.validate();
    return h;
}

Hyperplane load_hyperplane(const std::filesystem::path& path) { return hyperplane_from_json(read_json_file(path)); }

void save_hyperplane(const Hyperplane& h, const std::filesystem::path& path) {
    h.validate();
    write_json_file(path, hyperplane_to_json(h));
}

const Eigen::VectorXd& EmbeddingTable::lookup(const std::string& text) const {
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i] == text) {
            return embeddings[i];
        }
    }
    throw ValidationError("no embedding for text '" + text + "'");
}

nlohmann::json embeddings_to_json(const EmbeddingTable& table) {
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < table.texts.size(); ++i) {
        const auto& e = table.embeddings[i];
        entries.push_back({{"text", table.texts[i]},
                           {"embedding", std::vector<double>(e.data(), e.data() + e.size())}});
    }
    return {{"dim", table.dim}, {"entries", entries}};
}

EmbeddingTable embeddings_from_json(const nlohmann::json& j) {
    EmbeddingTable table;
    try {
        table.dim = j.at("dim").get<std::size_t>();
        for (const auto& e : j.at("entries")) {
            const auto v = e.at("embedding").get<std::vector<double>>();
            if (v.size() != table.dim) {
                throw ValidationError("embeddings: '" + e.at("text").get<std::string>() + "' has " +
                                      std::to_string(v.size()) + " values, expected " + std::to_string(table.dim));
            }
            table.texts.push_back(e.at("text").get<std::string>());
            table.embeddings.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("embeddings: ") + e.what());
    }
    return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) { return embeddings_from_json(read_json_file(path)); }

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
    write_json_file(path, embeddings_to_json(table));
}

} // namespace goi

#include "goi/eval_harness.hpp"

#include "goi/errors.hpp"
#include "goi/json_io.hpp"

#include <cmath>
#include <map>

namespace goi {

namespace {

struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts confusion(const Mask& pred, const Mask& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw ValidationError("metrics: prediction is " + std::to_string(pred.height) + "x" +
                              std::to_string(pred.width) + ", ground truth is " + std::to_string(gt.height) + "x" +
                              std::to_string(gt.width));
    }
    Counts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0;
        const bool g = gt.data[i] != 0;
        c.tp += p && g;
        c.fp += p && !g;
        c.fn += !p && g;
        c.tn += !p && !g;
    }
    return c;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

} // namespace

double iou(const Mask& pred, const Mask& gt) {
    const Counts c = confusion(pred, gt);
    const std::size_t uni = c.tp + c.fp + c.fn;
    return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

double pixel_accuracy(const Mask& pred, const Mask& gt) {
    const Counts c = confusion(pred, gt);
    const std::size_t total = c.tp + c.fp + c.fn + c.tn;
    return total == 0 ? 1.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
}

double precision(const Mask& pred, const Mask& gt) {
    const Counts c = confusion(pred, gt);
    if (c.tp + c.fp == 0) {
        return c.fn == 0 ? 1.0 : 0.0;
    }
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

std::vector<EvalCase> load_testset(const std::filesystem::path& manifest) {
    const nlohmann::json j = read_json_file(manifest);
    const auto base = manifest.parent_path();
    std::map<std::string, EmbeddingTable> tables;
    auto table = [&](const std::string& ref) -> const EmbeddingTable& {
        auto it = tables.find(ref);
        if (it == tables.end()) {
            it = tables.emplace(ref, load_embeddings(base / ref)).first;
        }
        return it->second;
    };

    if (!j.contains("cases") || !j.at("cases").is_array()) {
        throw FormatError(FormatError::Kind::Malformed, manifest.string() + ": missing \"cases\" array");
    }
    std::vector<EvalCase> out;
    std::size_t index = 0;
    for (const auto& cj : j.at("cases")) {
        try {
            EvalCase c;
            c.text = cj.at("text").get<std::string>();
            c.camera = load_camera(base / cj.at("camera").get<std::string>());
            c.gt_mask = load_mask(base / cj.at("gt_mask").get<std::string>());
            if (c.gt_mask.height != c.camera.height || c.gt_mask.width != c.camera.width) {
                throw ValidationError("gt_mask does not match camera size");
            }
            const std::string emb_ref =
                cj.contains("embeddings") ? cj.at("embeddings").get<std::string>() : j.at("embeddings").get<std::string>();
            c.embedding = table(emb_ref).lookup(c.text);
            if (cj.contains("pseudo_mask")) {
                c.pseudo_mask = load_mask(base / cj.at("pseudo_mask").get<std::string>());
            }
            if (cj.contains("pseudo_camera")) {
                c.pseudo_camera = load_camera(base / cj.at("pseudo_camera").get<std::string>());
            }
            const Camera& mask_cam = c.pseudo_camera ? *c.pseudo_camera : c.camera;
            if (c.pseudo_mask && (c.pseudo_mask->height != mask_cam.height || c.pseudo_mask->width != mask_cam.width)) {
                throw ValidationError("pseudo_mask does not match its camera size");
            }
            out.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(FormatError::Kind::Malformed,
                              manifest.string() + ": case " + std::to_string(index) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError(e.kind(), manifest.string() + ": case " + std::to_string(index) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(manifest.string() + ": case " + std::to_string(index) + ": " + e.what());
        } catch (const IoError& e) {
            throw IoError(manifest.string() + ": case " + std::to_string(index) + ": " + e.what());
        }
        ++index;
    }
    return out;
}

Mask predict_case(const TrainedModel& model, const EvalCase& c, const QueryOptions& opts) {
    const Mask* pseudo = c.pseudo_mask ? &*c.pseudo_mask : nullptr;
    if (opts.use_osh && !opts.plane && c.pseudo_camera) {
        const QueryResult fit = open_vocab_query(model, *c.pseudo_camera, c.embedding, pseudo, opts);
        QueryOptions reuse = opts;
        reuse.plane = fit.hyperplane;
        return open_vocab_query(model, c.camera, c.embedding, nullptr, reuse).mask;
    }
    return open_vocab_query(model, c.camera, c.embedding, pseudo, opts).mask;
}

Metrics evaluate(const TrainedModel& model, const std::vector<EvalCase>& cases, const QueryOptions& opts) {
    Metrics m;
    for (const auto& c : cases) {
        const Mask pred = predict_case(model, c, opts);
        m.cases.push_back({c.text, iou(pred, c.gt_mask), pixel_accuracy(pred, c.gt_mask), precision(pred, c.gt_mask)});
    }
    if (!m.cases.empty()) {
        for (const auto& c : m.cases) {
            m.miou += c.iou;
            m.mpa += c.pixel_accuracy;
            m.mp += c.precision;
        }
        const auto n = static_cast<double>(m.cases.size());
        m.miou /= n;
        m.mpa /= n;
        m.mp /= n;
    }
    return m;
}

nlohmann::json metrics_to_json(const Metrics& m) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : m.cases) {
        cases.push_back({{"text", c.text},
                         {"iou", round4(c.iou)},
                         {"pixel_accuracy", round4(c.pixel_accuracy)},
                         {"precision", round4(c.precision)}});
    }
    return {{"cases", cases}, {"mIoU", round4(m.miou)}, {"mPA", round4(m.mpa)}, {"mP", round4(m.mp)}};
}

} // namespace goi

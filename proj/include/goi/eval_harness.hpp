#pragma once

#include "goi/field_trainer.hpp"
#include "goi/image.hpp"
#include "goi/query_engine.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace goi {

/// |pred & gt| / |pred | gt|; 1 when both are empty.
double iou(const Mask& pred, const Mask& gt);
/// (TP + TN) / total.
double pixel_accuracy(const Mask& pred, const Mask& gt);
/// TP / (TP + FP); 1 when nothing is predicted and gt is empty, 0 when
/// nothing is predicted and gt is not.
double precision(const Mask& pred, const Mask& gt);

/// One resolved evaluation case. When `pseudo_camera` is set the plane is
/// refined on that view (with `pseudo_mask`) and then applied to `camera`.
struct EvalCase {
    std::string text;
    Camera camera;
    Mask gt_mask;
    Eigen::VectorXd embedding;
    std::optional<Mask> pseudo_mask;
    std::optional<Camera> pseudo_camera;
};

/// Reads {"embeddings": F, "cases": [{"camera", "gt_mask", "text",
/// "pseudo_mask"?, "pseudo_camera"?, "embeddings"?}]}; paths are relative to
/// the manifest. Errors name the failing case.
std::vector<EvalCase> load_testset(const std::filesystem::path& manifest);

struct CaseMetrics {
    std::string text;
    double iou = 0.0;
    double pixel_accuracy = 0.0;
    double precision = 0.0;
};

struct Metrics {
    std::vector<CaseMetrics> cases;
    double miou = 0.0;
    double mpa = 0.0;
    double mp = 0.0;
};

/// Predicted mask for one case under the evaluation protocol.
Mask predict_case(const TrainedModel& model, const EvalCase& c, const QueryOptions& opts);

Metrics evaluate(const TrainedModel& model, const std::vector<EvalCase>& cases, const QueryOptions& opts);

/// Per-case and aggregate values rounded to 4 decimals.
nlohmann::json metrics_to_json(const Metrics& m);

} // namespace goi

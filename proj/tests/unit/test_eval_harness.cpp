#include "goi/errors.hpp"
#include "goi/eval_harness.hpp"
#include "goi/json_io.hpp"
#include "goi/synth_oracle.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

namespace goi {
namespace {

Mask make_mask(std::uint32_t h, std::uint32_t w, std::initializer_list<int> bits) {
    Mask m(h, w);
    std::size_t i = 0;
    for (int b : bits) {
        m.data[i++] = static_cast<std::uint8_t>(b);
    }
    return m;
}

Mask random_mask(std::mt19937_64& rng, std::uint32_t h, std::uint32_t w, double p) {
    std::bernoulli_distribution bit(p);
    Mask m(h, w);
    for (auto& v : m.data) {
        v = bit(rng) ? 1 : 0;
    }
    return m;
}

Mask negate(const Mask& m) {
    Mask out = m;
    for (auto& v : out.data) {
        v = v ? 0 : 1;
    }
    return out;
}

// Metrics by explicit pixel counting, kept apart from the library.
struct HandMetrics {
    double iou, pa, p;
};
HandMetrics hand_metrics(const Mask& pred, const Mask& gt) {
    double inter = 0, uni = 0, agree = 0, predicted = 0, gt_count = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        inter += pred.data[i] && gt.data[i];
        uni += pred.data[i] || gt.data[i];
        agree += pred.data[i] == gt.data[i];
        predicted += pred.data[i];
        gt_count += gt.data[i];
    }
    const double iou_v = uni == 0 ? 1.0 : inter / uni;
    const double p_v = predicted == 0 ? (gt_count == 0 ? 1.0 : 0.0) : inter / predicted;
    return {iou_v, agree / static_cast<double>(pred.data.size()), p_v};
}

TEST(Metrics, IdenticalMasks) {
    const Mask m = make_mask(2, 2, {1, 0, 1, 1});
    EXPECT_EQ(iou(m, m), 1.0);
    EXPECT_EQ(pixel_accuracy(m, m), 1.0);
    EXPECT_EQ(precision(m, m), 1.0);
}

TEST(Metrics, DisjointMasks) {
    const Mask a = make_mask(2, 2, {1, 1, 0, 0});
    const Mask b = make_mask(2, 2, {0, 0, 1, 0});
    EXPECT_EQ(iou(a, b), 0.0);
    EXPECT_EQ(precision(a, b), 0.0);
    EXPECT_EQ(pixel_accuracy(a, b), 0.25);
}

TEST(Metrics, FullSquareAgainstColumn) {
    const Mask pred = make_mask(2, 2, {1, 1, 1, 1});
    const Mask gt = make_mask(2, 2, {1, 0, 1, 0});
    EXPECT_EQ(iou(pred, gt), 0.5);
    EXPECT_EQ(precision(pred, gt), 0.5);
    EXPECT_EQ(pixel_accuracy(pred, gt), 0.5);
}

TEST(Metrics, NegatedMaskHasZeroAccuracy) {
    const Mask gt = make_mask(2, 4, {1, 0, 1, 0, 0, 1, 1, 0});
    EXPECT_EQ(pixel_accuracy(negate(gt), gt), 0.0);
    EXPECT_EQ(iou(negate(gt), gt), 0.0);
}

TEST(Metrics, EmptyConventions) {
    const Mask empty(3, 3);
    const Mask some = make_mask(3, 3, {0, 1});
    EXPECT_EQ(iou(empty, empty), 1.0);
    EXPECT_EQ(precision(empty, empty), 1.0);
    EXPECT_EQ(pixel_accuracy(empty, empty), 1.0);
    EXPECT_EQ(iou(empty, some), 0.0);
    EXPECT_EQ(precision(empty, some), 0.0);
    EXPECT_EQ(precision(some, empty), 0.0);
}

TEST(Metrics, ShapeMismatchThrows) { EXPECT_THROW(iou(Mask(2, 2), Mask(2, 3)), ValidationError); }

TEST(Metrics, RandomMasksMatchCountingAndStayInRange) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const double p = (trial % 10) / 9.0;
        const Mask a = random_mask(rng, 7, 5, p);
        const Mask b = random_mask(rng, 7, 5, 1.0 - p * 0.5);
        const HandMetrics h = hand_metrics(a, b);
        EXPECT_EQ(iou(a, b), h.iou);
        EXPECT_EQ(pixel_accuracy(a, b), h.pa);
        EXPECT_EQ(precision(a, b), h.p);
        for (double v : {h.iou, h.pa, h.p}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        EXPECT_EQ(iou(a, b), iou(b, a));
        EXPECT_EQ(pixel_accuracy(a, b), pixel_accuracy(b, a));
    }
}

class Blocks5 : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new test::TempDir("eval");
        ls_ = new LabeledScene(write_experiment(experiment_preset("blocks5"), 0, dir_->path()));
        model_ = new TrainedModel(test::labeled_model(*ls_));
    }
    static void TearDownTestSuite() {
        delete model_;
        delete ls_;
        delete dir_;
    }
    static test::TempDir* dir_;
    static LabeledScene* ls_;
    static TrainedModel* model_;
};

test::TempDir* Blocks5::dir_ = nullptr;
LabeledScene* Blocks5::ls_ = nullptr;
TrainedModel* Blocks5::model_ = nullptr;

TEST_F(Blocks5, TestsetHasFifteenCases) {
    const auto cases = load_testset(dir_->path() / "testset.json");
    ASSERT_EQ(cases.size(), 15u);
    for (const auto& c : cases) {
        EXPECT_TRUE(c.pseudo_mask.has_value());
        EXPECT_FALSE(c.pseudo_camera.has_value());
        EXPECT_EQ(c.embedding.size(), 256);
        EXPECT_GT(c.gt_mask.count(), 0u);
    }
}

TEST_F(Blocks5, EvaluateMatchesHandLoop) {
    const auto cases = load_testset(dir_->path() / "testset.json");
    for (bool osh : {false, true}) {
        QueryOptions opts;
        opts.use_osh = osh;
        const Metrics m = evaluate(*model_, cases, opts);
        ASSERT_EQ(m.cases.size(), cases.size());
        double miou = 0, mpa = 0, mp = 0;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const Mask* pseudo = osh ? &*cases[i].pseudo_mask : nullptr;
            const Mask pred = open_vocab_query(*model_, cases[i].camera, cases[i].embedding, pseudo, opts).mask;
            const HandMetrics h = hand_metrics(pred, cases[i].gt_mask);
            EXPECT_NEAR(m.cases[i].iou, h.iou, 1e-12);
            EXPECT_NEAR(m.cases[i].pixel_accuracy, h.pa, 1e-12);
            EXPECT_NEAR(m.cases[i].precision, h.p, 1e-12);
            EXPECT_EQ(m.cases[i].text, cases[i].text);
            miou += h.iou;
            mpa += h.pa;
            mp += h.p;
        }
        EXPECT_NEAR(m.miou, miou / 15.0, 1e-12);
        EXPECT_NEAR(m.mpa, mpa / 15.0, 1e-12);
        EXPECT_NEAR(m.mp, mp / 15.0, 1e-12);
        EXPECT_GE(m.miou, 0.9);
    }
}

TEST_F(Blocks5, MeanOfPerfectAndDisjointIsHalf) {
    auto cases = load_testset(dir_->path() / "testset.json");
    QueryOptions opts;
    opts.use_osh = false;
    std::vector<EvalCase> two{cases[0], cases[1]};
    two[0].gt_mask = predict_case(*model_, two[0], opts);
    two[1].gt_mask = negate(predict_case(*model_, two[1], opts));
    const Metrics m = evaluate(*model_, two, opts);
    EXPECT_EQ(m.cases[0].iou, 1.0);
    EXPECT_EQ(m.cases[1].iou, 0.0);
    EXPECT_EQ(m.miou, 0.5);
}

TEST_F(Blocks5, PermutationInvariant) {
    auto cases = load_testset(dir_->path() / "testset.json");
    QueryOptions opts;
    opts.use_osh = false;
    // A noisy ground truth so per-case values differ.
    std::mt19937_64 rng(3);
    for (auto& c : cases) {
        for (auto& v : c.gt_mask.data) {
            if (std::bernoulli_distribution(0.05)(rng)) {
                v = v ? 0 : 1;
            }
        }
    }
    const Metrics a = evaluate(*model_, cases, opts);
    std::shuffle(cases.begin(), cases.end(), rng);
    const Metrics b = evaluate(*model_, cases, opts);
    EXPECT_NEAR(a.miou, b.miou, 1e-12);
    EXPECT_NEAR(a.mpa, b.mpa, 1e-12);
    EXPECT_NEAR(a.mp, b.mp, 1e-12);
    EXPECT_LT(a.miou, 1.0);
}

TEST_F(Blocks5, PseudoCameraRefinesOnOtherView) {
    auto cases = load_testset(dir_->path() / "testset.json");
    EvalCase c = cases[0];
    const EvalCase other = cases[5]; // same text, next held-out view
    ASSERT_EQ(other.text, c.text);
    c.pseudo_camera = other.camera;
    c.pseudo_mask = other.pseudo_mask;
    const QueryOptions opts;
    const QueryResult fit = open_vocab_query(*model_, other.camera, c.embedding, &*other.pseudo_mask, opts);
    QueryOptions reuse = opts;
    reuse.plane = fit.hyperplane;
    const Mask expected = open_vocab_query(*model_, c.camera, c.embedding, nullptr, reuse).mask;
    EXPECT_EQ(predict_case(*model_, c, opts), expected);
}

TEST_F(Blocks5, LoadErrorsNameTheCase) {
    nlohmann::json j = read_json_file(dir_->path() / "testset.json");
    j["cases"][2]["gt_mask"] = "test/missing.pgm";
    write_json_file(dir_->path() / "broken.json", j);
    try {
        load_testset(dir_->path() / "broken.json");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("case 2"), std::string::npos) << e.what();
    }
    j = read_json_file(dir_->path() / "testset.json");
    j["cases"][4]["text"] = "no such text";
    write_json_file(dir_->path() / "broken.json", j);
    try {
        load_testset(dir_->path() / "broken.json");
        FAIL() << "expected an error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("case 4"), std::string::npos) << e.what();
    }
}

TEST(MetricsJson, RoundsToFourDecimals) {
    Metrics m;
    m.cases.push_back({"a", 0.123456, 0.99995, 1.0 / 3.0});
    m.miou = 0.123456;
    m.mpa = 0.99995;
    m.mp = 2.0 / 3.0;
    const nlohmann::json j = metrics_to_json(m);
    EXPECT_DOUBLE_EQ(j.at("mIoU").get<double>(), 0.1235);
    EXPECT_DOUBLE_EQ(j.at("mPA").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(j.at("mP").get<double>(), 0.6667);
    EXPECT_DOUBLE_EQ(j.at("cases")[0].at("precision").get<double>(), 0.3333);
    EXPECT_EQ(j.at("cases")[0].at("text"), "a");
}

TEST(Evaluate, NoCasesGivesZeros) {
    const Metrics m = evaluate(TrainedModel{}, {}, QueryOptions{});
    EXPECT_TRUE(m.cases.empty());
    EXPECT_EQ(m.miou, 0.0);
}

} // namespace
} // namespace goi

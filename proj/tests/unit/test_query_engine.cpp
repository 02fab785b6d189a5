#include "goi/errors.hpp"
#include "goi/query_engine.hpp"
#include "goi/synth_oracle.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

namespace goi {
namespace {

using Eigen::VectorXd;
using test::labeled_model;

SynthSceneParams small_params(std::uint64_t seed) {
    SynthSceneParams p;
    p.n_clusters = 3;
    p.gaussians_per_cluster = 40;
    p.dim_high = 32;
    p.seed = seed;
    return p;
}

CameraRig small_rig() {
    CameraRig rig;
    rig.size = 32;
    rig.focal = 40.0;
    return rig;
}

TrainedModel random_model(std::uint64_t seed, std::size_t gaussians, std::size_t n, std::size_t d_low,
                          std::size_t d_high) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n01;
    TrainedModel m;
    m.scene = test::random_scene(seed, gaussians, d_low);
    m.codebook.entries = RowMatrixXf::NullaryExpr(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_high),
                                                  [&] { return n01(rng); });
    m.decoder = Decoder::random_init(n, d_low, seed + 1);
    return m;
}

TEST(DecodeGaussians, OneHotPicksMatchingEntry) {
    Scene scene;
    scene.feature_dim = 3;
    for (int k : {2, 0, 1}) {
        Gaussian g;
        g.feature.assign(3, 0.f);
        g.feature[static_cast<std::size_t>(k)] = 1.f;
        scene.gaussians.push_back(g);
    }
    Codebook cb;
    cb.entries = RowMatrixXf(3, 2);
    cb.entries << 1, 0, 0, 1, 0.6f, 0.8f;
    Decoder dec;
    dec.weight = RowMatrixXf::Identity(3, 3);
    dec.bias = Eigen::VectorXf::Zero(3);
    const auto out = decode_gaussian_features(scene, cb, dec);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].entry, 2u);
    EXPECT_EQ(out[1].entry, 0u);
    EXPECT_EQ(out[2].entry, 1u);
    EXPECT_NEAR(out[0].value(1), 0.8, 1e-7);
    EXPECT_EQ(out[1].index, 1u);
}

TEST(DecodeGaussians, EmptySceneAndShapeMismatch) {
    TrainedModel m = random_model(1, 0, 4, 3, 5);
    EXPECT_TRUE(decode_gaussian_features(m.scene, m.codebook, m.decoder).empty());
    m.scene.feature_dim = 2;
    EXPECT_THROW(decode_gaussian_features(m.scene, m.codebook, m.decoder), ValidationError);
}

TEST(DecodeGaussians, MatchesDirectArgmax) {
    const TrainedModel m = random_model(2, 300, 17, 6, 9);
    const auto out = decode_gaussian_features(m.scene, m.codebook, m.decoder);
    for (std::size_t i = 0; i < m.scene.size(); ++i) {
        std::size_t best = 0;
        long double best_v = -1e300L;
        for (Eigen::Index r = 0; r < m.decoder.weight.rows(); ++r) {
            long double v = m.decoder.bias(r);
            for (std::size_t c = 0; c < 6; ++c) {
                v += static_cast<long double>(m.decoder.weight(r, static_cast<Eigen::Index>(c))) *
                     m.scene.gaussians[i].feature[c];
            }
            if (v > best_v) {
                best_v = v;
                best = static_cast<std::size_t>(r);
            }
        }
        EXPECT_EQ(out[i].entry, best) << i;
        EXPECT_EQ(out[i].value, m.codebook.entries.row(static_cast<Eigen::Index>(best)).transpose().cast<double>());
    }
}

TEST(SelectGoi, BiasExtremes) {
    const TrainedModel m = random_model(3, 100, 8, 4, 6);
    Hyperplane h = init_hyperplane(VectorXd::Unit(6, 0), 2.0);
    EXPECT_TRUE(select_goi(m.scene, m.codebook, m.decoder, h).empty());
    h.bias = 2.0;
    const auto all = select_goi(m.scene, m.codebook, m.decoder, h);
    ASSERT_EQ(all.size(), 100u);
    for (std::size_t i = 0; i < all.size(); ++i) {
        EXPECT_EQ(all[i], i);
    }
}

TEST(SelectGoi, MatchesPerGaussianClassification) {
    const TrainedModel m = random_model(4, 200, 10, 5, 7);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 10; ++trial) {
        const Hyperplane h{VectorXd::NullaryExpr(7, [&] { return n01(rng); }), 0.3 * n01(rng)};
        std::vector<std::size_t> expected;
        for (const auto& d : decode_gaussian_features(m.scene, m.codebook, m.decoder)) {
            if (classify(h, normalized(d.value))) {
                expected.push_back(d.index);
            }
        }
        EXPECT_EQ(select_goi(m.scene, m.codebook, m.decoder, h), expected);
    }
}

TEST(SelectGoi, RecoversLabelsOfLabeledScene) {
    const LabeledScene ls = generate_scene(small_params(5));
    const TrainedModel m = labeled_model(ls);
    for (std::size_t l = 0; l < ls.label_count(); ++l) {
        const auto sel = select_goi(m.scene, m.codebook, m.decoder, init_hyperplane(ls.embeddings[l], 0.6));
        std::size_t tp = 0;
        for (std::size_t i : sel) {
            tp += ls.labels[i] == l;
        }
        const auto total = static_cast<std::size_t>(std::count(ls.labels.begin(), ls.labels.end(), l));
        ASSERT_FALSE(sel.empty());
        EXPECT_GE(static_cast<double>(tp) / static_cast<double>(sel.size()), 0.95);
        EXPECT_GE(static_cast<double>(tp) / static_cast<double>(total), 0.95);
    }
}

TEST(DecodeView, ValidPixelsCarryUnitEntries) {
    const LabeledScene ls = generate_scene(small_params(6));
    const TrainedModel m = labeled_model(ls);
    const Camera cam = cap_cameras(1, small_rig(), 1.0)[0];
    const DecodedView v = decode_view(m, cam);
    ASSERT_GT(v.valid.count(), 0u);
    for (std::size_t i = 0; i < v.valid.pixel_count(); ++i) {
        Eigen::VectorXd x(32);
        for (int c = 0; c < 32; ++c) {
            x(c) = v.features.pixel(i)[static_cast<std::size_t>(c)];
        }
        if (v.valid.data[i]) {
            EXPECT_NEAR(x.norm(), 1.0, 1e-6);
            const VectorXd e = normalized(m.codebook.entries.row(static_cast<Eigen::Index>(v.entry[i])).transpose().cast<double>());
            EXPECT_LT((x - e).norm(), 1e-6);
        } else {
            EXPECT_EQ(x.norm(), 0.0);
        }
    }
}

TEST(Query, FixedThresholdIsCosineTest) {
    const LabeledScene ls = generate_scene(small_params(7));
    const TrainedModel m = labeled_model(ls);
    const Camera cam = cap_cameras(1, small_rig(), 1.0)[0];
    const DecodedView v = decode_view(m, cam);
    QueryOptions opts;
    opts.use_osh = false;
    for (double thr : {0.2, 0.6, 0.95}) {
        opts.osh.init_threshold = thr;
        for (std::size_t l = 0; l < ls.label_count(); ++l) {
            const QueryResult r = open_vocab_query(m, cam, ls.embeddings[l] * 3.0, nullptr, opts);
            for (std::size_t i = 0; i < v.valid.pixel_count(); ++i) {
                bool expect = false;
                if (v.valid.data[i]) {
                    const VectorXd e =
                        normalized(m.codebook.entries.row(static_cast<Eigen::Index>(v.entry[i])).transpose().cast<double>());
                    expect = e.dot(ls.embeddings[l]) > thr;
                }
                ASSERT_EQ(r.mask.data[i], expect ? 1 : 0);
            }
            EXPECT_EQ(r.stats.positive_pixels, r.mask.count());
            EXPECT_EQ(r.stats.osh_loss, 0.0);
        }
    }
}

TEST(Query, MaskIsPureForLabeledModel) {
    const LabeledScene ls = generate_scene(small_params(8));
    const TrainedModel m = labeled_model(ls);
    const Camera cam = cap_cameras(1, small_rig(), 1.0)[0];
    const DecodedView v = decode_view(m, cam);
    QueryOptions opts;
    opts.use_osh = false;
    for (std::size_t l = 0; l < ls.label_count(); ++l) {
        const QueryResult r = open_vocab_query(m, cam, ls.embeddings[l], nullptr, opts);
        for (std::size_t i = 0; i < r.mask.pixel_count(); ++i) {
            EXPECT_EQ(r.mask.data[i], (v.valid.data[i] && v.entry[i] == l) ? 1 : 0);
        }
        for (std::size_t g : r.goi_indices) {
            EXPECT_EQ(ls.labels[g], l);
        }
        EXPECT_EQ(r.stats.selected_gaussians, r.goi_indices.size());
    }
}

TEST(Query, OshWithOracleMaskReproducesIt) {
    const LabeledScene ls = generate_scene(small_params(9));
    const TrainedModel m = labeled_model(ls);
    const Camera cam = cap_cameras(1, small_rig(), 1.0)[0];
    const Mask pseudo = oracle_mask(ls, cam, 1);
    const QueryResult r = open_vocab_query(m, cam, ls.embeddings[1], &pseudo, QueryOptions{});
    EXPECT_GT(r.stats.osh_loss, 0.0);
    const DecodedView v = decode_view(m, cam);
    Mask expected(cam.height, cam.width);
    for (std::size_t i = 0; i < expected.pixel_count(); ++i) {
        expected.data[i] = v.valid.data[i] && v.entry[i] == 1;
    }
    EXPECT_EQ(r.mask, expected);
}

TEST(Query, SuppliedPlaneIsUsedAsIs) {
    const LabeledScene ls = generate_scene(small_params(10));
    const TrainedModel m = labeled_model(ls);
    const Camera cam = cap_cameras(1, small_rig(), 1.0)[0];
    QueryOptions opts;
    opts.plane = init_hyperplane(ls.embeddings[0], -2.0);
    const QueryResult r = open_vocab_query(m, cam, ls.embeddings[2], nullptr, opts);
    EXPECT_EQ(r.hyperplane.bias, 2.0);
    EXPECT_EQ(r.mask, decode_view(m, cam).valid);
    EXPECT_EQ(r.goi_indices.size(), m.scene.size());
}

TEST(Query, RejectsBadInputs) {
    const LabeledScene ls = generate_scene(small_params(11));
    const TrainedModel m = labeled_model(ls);
    const Camera cam = cap_cameras(1, small_rig(), 1.0)[0];
    QueryOptions fixed;
    fixed.use_osh = false;
    EXPECT_THROW(open_vocab_query(m, cam, VectorXd(0), nullptr, fixed), ValidationError);
    EXPECT_THROW(open_vocab_query(m, cam, VectorXd::Ones(5), nullptr, fixed), ValidationError);
    EXPECT_THROW(open_vocab_query(m, cam, ls.embeddings[0], nullptr, QueryOptions{}), ValidationError);
}

TEST(Manipulate, DeleteExtractPartitionTheScene) {
    const Scene s = test::random_scene(12, 50, 3);
    const std::vector<std::size_t> idx{0, 7, 8, 49};
    const Scene del = manipulate(s, idx, {ManipulationKind::Delete});
    const Scene ext = manipulate(s, idx, {ManipulationKind::Extract});
    EXPECT_EQ(del.size(), 46u);
    EXPECT_EQ(ext.size(), 4u);
    EXPECT_EQ(ext.gaussians[2].centroid, s.gaussians[8].centroid);
    EXPECT_EQ(del.gaussians[0].centroid, s.gaussians[1].centroid);

    std::vector<std::size_t> all(s.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    EXPECT_EQ(manipulate(s, all, {ManipulationKind::Delete}).size(), 0u);
    EXPECT_EQ(encode_scene(manipulate(s, {}, {ManipulationKind::Delete})), encode_scene(s));

    // Extracting the complement equals deleting the selection.
    std::vector<std::size_t> complement;
    std::set<std::size_t> chosen(idx.begin(), idx.end());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!chosen.count(i)) {
            complement.push_back(i);
        }
    }
    EXPECT_EQ(encode_scene(manipulate(s, complement, {ManipulationKind::Extract})), encode_scene(del));
}

TEST(Manipulate, TranslateAndHighlight) {
    const Scene s = test::random_scene(13, 20, 4);
    EXPECT_EQ(encode_scene(manipulate(s, {1, 2}, {ManipulationKind::Translate})), encode_scene(s));
    Manipulation move{ManipulationKind::Translate, {1.f, -2.f, 0.5f}};
    const Scene t = manipulate(s, {3}, move);
    EXPECT_EQ(t.gaussians[3].centroid[0], s.gaussians[3].centroid[0] + 1.f);
    EXPECT_EQ(t.gaussians[3].centroid[1], s.gaussians[3].centroid[1] - 2.f);
    EXPECT_EQ(t.gaussians[4].centroid, s.gaussians[4].centroid);
    EXPECT_EQ(t.gaussians[3].feature, s.gaussians[3].feature);

    Manipulation hl{ManipulationKind::Highlight, {}, {0.f, 1.f, 0.f}};
    const Scene h = manipulate(s, {5}, hl);
    EXPECT_EQ(h.gaussians[5].rgb, (Vec3f{0.f, 1.f, 0.f}));
    EXPECT_EQ(h.gaussians[5].feature, s.gaussians[5].feature);
    EXPECT_EQ(h.gaussians[6].rgb, s.gaussians[6].rgb);
    hl.color = {2.f, 0.f, 0.f};
    EXPECT_THROW(manipulate(s, {5}, hl), ValidationError);
    EXPECT_THROW(manipulate(s, {20}, move), ValidationError);
}

TEST(Manipulate, ParseKind) {
    EXPECT_EQ(parse_manipulation_kind("extract"), ManipulationKind::Extract);
    EXPECT_EQ(parse_manipulation_kind("highlight"), ManipulationKind::Highlight);
    EXPECT_THROW(parse_manipulation_kind("paint"), ValidationError);
}

TEST(Overlay, BlendsMaskedPixels) {
    FeatureMap rgb(1, 2, 3);
    std::fill(rgb.data.begin(), rgb.data.end(), 0.2f);
    Mask m(1, 2);
    m.data[1] = 1;
    const FeatureMap out = overlay(rgb, m, {1.f, 0.f, 0.f});
    EXPECT_FLOAT_EQ(out.at(0, 0)[0], 0.2f);
    EXPECT_FLOAT_EQ(out.at(0, 1)[0], 0.6f);
    EXPECT_FLOAT_EQ(out.at(0, 1)[1], 0.1f);
    EXPECT_THROW(overlay(rgb, Mask(2, 2), {1.f, 0.f, 0.f}), ValidationError);
}

TEST(GoiJson, RoundTripAndOrdering) {
    test::TempDir dir("goi");
    save_goi({1, 4, 9}, dir / "g.json");
    EXPECT_EQ(load_goi(dir / "g.json"), (std::vector<std::size_t>{1, 4, 9}));
    EXPECT_THROW(goi_from_json(nlohmann::json{{"indices", {3, 3}}}), ValidationError);
    EXPECT_THROW(goi_from_json(nlohmann::json{{"idx", {1}}}), FormatError);
}

} // namespace
} // namespace goi

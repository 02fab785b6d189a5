#include "support.hpp"

#include "goi/json_io.hpp"
#include "goi/query_engine.hpp"
#include "goi/rasterizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

namespace goi::test {

Camera front_camera(std::uint32_t size, double focal) {
    const double c = 0.5 * (size - 1.0);
    return Camera::look_at({0.0, 0.0, -8.0}, {0.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, size, size, focal, focal, c, c);
}

Scene random_scene(std::uint64_t seed, std::size_t count, std::size_t feature_dim) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> pos(-3.0f, 3.0f);
    std::uniform_real_distribution<float> depth(-2.5f, 2.5f);
    std::uniform_real_distribution<float> scale(0.08f, 0.6f);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::normal_distribution<float> normal(0.0f, 1.0f);

    Scene scene;
    scene.feature_dim = feature_dim;
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian g;
        g.centroid = {pos(rng), pos(rng), depth(rng)};
        std::array<float, 4> q{normal(rng), normal(rng), normal(rng), normal(rng)};
        const float n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        for (float& v : q) {
            v /= n;
        }
        g.rotation = q;
        g.scale = {scale(rng), scale(rng), scale(rng)};
        g.opacity = 0.05f + 0.95f * unit(rng);
        g.rgb = {unit(rng), unit(rng), unit(rng)};
        g.feature.resize(feature_dim);
        for (float& f : g.feature) {
            f = normal(rng);
        }
        scene.gaussians.push_back(std::move(g));
    }
    return scene;
}

namespace {

using LD = long double;

struct NaiveSplat {
    LD mx = 0, my = 0;
    LD ia = 0, ib = 0, ic = 0; // inverse covariance
    LD depth = 0;
    LD opacity = 0;
    std::size_t index = 0;
};

bool naive_project(const Gaussian& g, const Camera& cam, std::size_t index, NaiveSplat& out) {
    LD w[3][3], t[3];
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            w[r][c] = cam.world_to_camera[r * 4 + c];
        }
        t[r] = cam.world_to_camera[r * 4 + 3];
    }
    LD p[3];
    for (int r = 0; r < 3; ++r) {
        p[r] = w[r][0] * g.centroid[0] + w[r][1] * g.centroid[1] + w[r][2] * g.centroid[2] + t[r];
    }
    if (!(p[2] > static_cast<LD>(kNearPlane))) {
        return false;
    }
    LD qw = g.rotation[0], qx = g.rotation[1], qy = g.rotation[2], qz = g.rotation[3];
    const LD qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    qw /= qn;
    qx /= qn;
    qy /= qn;
    qz /= qn;
    const LD rot[3][3] = {{1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)},
                          {2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)},
                          {2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)}};
    // Sigma in camera space: W R S^2 R^T W^T.
    LD a[3][3];
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            a[r][c] = 0;
            for (int k = 0; k < 3; ++k) {
                a[r][c] += w[r][k] * rot[k][c];
            }
            a[r][c] *= g.scale[c];
        }
    }
    LD sc[3][3];
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            sc[r][c] = a[r][0] * a[c][0] + a[r][1] * a[c][1] + a[r][2] * a[c][2];
        }
    }
    const LD j[2][3] = {{cam.fx / p[2], 0, -cam.fx * p[0] / (p[2] * p[2])},
                        {0, cam.fy / p[2], -cam.fy * p[1] / (p[2] * p[2])}};
    LD cov[2][2];
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) {
            cov[r][c] = 0;
            for (int k = 0; k < 3; ++k) {
                for (int l = 0; l < 3; ++l) {
                    cov[r][c] += j[r][k] * sc[k][l] * j[c][l];
                }
            }
        }
    }
    cov[0][0] += static_cast<LD>(kCovarianceDilation);
    cov[1][1] += static_cast<LD>(kCovarianceDilation);
    const LD det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if (!(det > 0)) {
        return false;
    }
    out.ia = cov[1][1] / det;
    out.ib = -cov[0][1] / det;
    out.ic = cov[0][0] / det;
    out.mx = cam.fx * p[0] / p[2] + cam.cx;
    out.my = cam.fy * p[1] / p[2] + cam.cy;
    out.depth = p[2];
    out.opacity = g.opacity;
    out.index = index;
    return true;
}

} // namespace

NaiveRender naive_render(const Scene& scene, const Camera& cam) {
    const std::size_t d = scene.feature_dim;
    const std::size_t npix = cam.pixel_count();
    NaiveRender out;
    out.rgb.assign(npix * 3, 0);
    out.features.assign(npix * d, 0);
    out.alpha.assign(npix, 0);
    out.weights.resize(npix);

    std::vector<NaiveSplat> splats;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        NaiveSplat s;
        if (naive_project(scene.gaussians[i], cam, i, s)) {
            splats.push_back(s);
        }
    }
    for (std::uint32_t row = 0; row < cam.height; ++row) {
        for (std::uint32_t col = 0; col < cam.width; ++col) {
            std::vector<std::pair<LD, const NaiveSplat*>> hits;
            for (const NaiveSplat& s : splats) {
                const LD dx = col - s.mx;
                const LD dy = row - s.my;
                const LD power = -0.5L * (s.ia * dx * dx + 2 * s.ib * dx * dy + s.ic * dy * dy);
                if (power > 0) {
                    continue;
                }
                LD alpha = std::min(static_cast<LD>(kMaxAlpha), s.opacity * std::exp(power));
                if (alpha < static_cast<LD>(kMinAlpha)) {
                    continue;
                }
                hits.emplace_back(alpha, &s);
            }
            std::stable_sort(hits.begin(), hits.end(), [](const auto& x, const auto& y) {
                if (x.second->depth != y.second->depth) {
                    return x.second->depth < y.second->depth;
                }
                return x.second->index < y.second->index;
            });
            const std::size_t pix = std::size_t{row} * cam.width + col;
            LD trans = 1;
            for (const auto& [alpha, s] : hits) {
                const LD wgt = alpha * trans;
                const Gaussian& g = scene.gaussians[s->index];
                for (int c = 0; c < 3; ++c) {
                    out.rgb[pix * 3 + c] += wgt * g.rgb[c];
                }
                for (std::size_t k = 0; k < d; ++k) {
                    out.features[pix * d + k] += wgt * g.feature[k];
                }
                out.weights[pix].emplace_back(s->index, wgt);
                trans *= 1 - alpha;
                if (trans < static_cast<LD>(kMinTransmittance)) {
                    break;
                }
            }
            out.alpha[pix] = 1 - trans;
        }
    }
    return out;
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("goi_test_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
    auto listing = [](const std::filesystem::path& root) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
            if (e.is_regular_file()) {
                files.push_back(std::filesystem::relative(e.path(), root));
            }
        }
        std::sort(files.begin(), files.end());
        return files;
    };
    const auto fa = listing(a);
    if (fa != listing(b)) {
        return false;
    }
    for (const auto& f : fa) {
        if (file_bytes(a / f) != file_bytes(b / f)) {
            return false;
        }
    }
    return true;
}

Experiment make_experiment(const std::string& preset, std::uint64_t seed, const std::filesystem::path& dir) {
    Experiment e;
    e.dir = dir;
    e.labeled = write_experiment(experiment_preset(preset), seed, dir);
    e.data = load_dataset(dir / "manifest.json");
    const auto entries = read_json_file(dir / "experiment.json").at("codebook_entries").get<std::size_t>();
    e.codebook = init_codebook(e.data, entries, 20, seed);
    return e;
}

double dominant_entry_fraction(const TrainedModel& model, const std::vector<std::uint32_t>& labels) {
    std::map<std::uint32_t, std::map<std::size_t, std::size_t>> hist;
    const auto decoded = decode_gaussian_features(model.scene, model.codebook, model.decoder);
    for (const auto& d : decoded) {
        ++hist[labels[d.index]][d.entry];
    }
    std::size_t dominant = 0;
    for (const auto& [label, counts] : hist) {
        std::size_t best = 0;
        for (const auto& [entry, c] : counts) {
            best = std::max(best, c);
        }
        dominant += best;
    }
    return decoded.empty() ? 0.0 : static_cast<double>(dominant) / static_cast<double>(decoded.size());
}

TrainedModel labeled_model(const LabeledScene& ls) {
    const std::size_t n = ls.label_count() + 1;
    TrainedModel m;
    m.scene = ls.scene;
    m.scene.feature_dim = n;
    for (std::size_t i = 0; i < m.scene.size(); ++i) {
        auto& f = m.scene.gaussians[i].feature;
        f.assign(n, 0.f);
        f[ls.labels[i]] = 5.f;
    }
    m.codebook.entries.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(ls.params.dim_high));
    for (std::size_t l = 0; l < ls.label_count(); ++l) {
        m.codebook.entries.row(static_cast<Eigen::Index>(l)) = ls.embeddings[l].transpose().cast<float>();
    }
    m.codebook.entries.row(static_cast<Eigen::Index>(n - 1)) = ls.background.transpose().cast<float>();
    m.decoder.weight = RowMatrixXf::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    m.decoder.bias = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(n));
    m.validate();
    return m;
}

} // namespace goi::test

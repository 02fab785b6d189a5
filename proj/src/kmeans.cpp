#include "goi/errors.hpp"
#include "goi/tfcc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace goi {

namespace {

constexpr Eigen::Index kChunkRows = 4096;

RowMatrixXf normalized_rows(const Eigen::Ref<const RowMatrixXf>& samples) {
    RowMatrixXf out = samples;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const float n = out.row(i).norm();
        if (!(n > 0.f) || !std::isfinite(n)) {
            throw ValidationError("kmeans: sample " + std::to_string(i) + " is zero or non-finite");
        }
        out.row(i) /= n;
    }
    return out;
}

// Best centroid and its cosine for every (unit) sample, computed in chunks.
void best_match(const RowMatrixXf& unit, const RowMatrixXf& centroids, std::vector<std::size_t>& index,
                std::vector<float>& similarity) {
    const Eigen::Index n = unit.rows();
    index.assign(static_cast<std::size_t>(n), 0);
    similarity.assign(static_cast<std::size_t>(n), -std::numeric_limits<float>::infinity());
    RowMatrixXf sims;
    for (Eigen::Index start = 0; start < n; start += kChunkRows) {
        const Eigen::Index rows = std::min(kChunkRows, n - start);
        sims.noalias() = unit.middleRows(start, rows) * centroids.transpose();
        for (Eigen::Index r = 0; r < rows; ++r) {
            Eigen::Index best = 0;
            float best_v = sims(r, 0);
            for (Eigen::Index c = 1; c < sims.cols(); ++c) {
                if (sims(r, c) > best_v) {
                    best_v = sims(r, c);
                    best = c;
                }
            }
            index[static_cast<std::size_t>(start + r)] = static_cast<std::size_t>(best);
            similarity[static_cast<std::size_t>(start + r)] = best_v;
        }
    }
}

} // namespace

Codebook kmeans_init(const Eigen::Ref<const RowMatrixXf>& samples, std::size_t n_entries, std::size_t iters,
                     std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(samples.rows());
    if (n_entries < 2) {
        throw ValidationError("kmeans: need at least 2 entries");
    }
    if (n < n_entries) {
        throw ValidationError("kmeans: " + std::to_string(n) + " samples for " + std::to_string(n_entries) +
                              " entries");
    }
    const RowMatrixXf unit = normalized_rows(samples);
    const Eigen::Index k = static_cast<Eigen::Index>(n_entries);
    std::mt19937_64 rng(seed);

    // k-means++ seeding with D^2 weights on cosine distance 1 - cos.
    RowMatrixXf centroids(k, unit.cols());
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (Eigen::Index c = 0; c < k; ++c) {
        centroids.row(c) = unit.row(static_cast<Eigen::Index>(pick));
        const Eigen::VectorXf sims = unit * centroids.row(c).transpose();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = std::max(0.0, 1.0 - static_cast<double>(sims(static_cast<Eigen::Index>(i))));
            dist[i] = std::min(dist[i], d * d);
            total += dist[i];
        }
        if (c + 1 == k) {
            break;
        }
        if (total > 0.0) {
            const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist[i];
                if (acc > target && dist[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            // Every sample coincides with a centroid; fall back to a uniform pick.
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        }
    }

    std::vector<std::size_t> assign;
    std::vector<float> sim;
    for (std::size_t it = 0; it < iters; ++it) {
        best_match(unit, centroids, assign, sim);
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, unit.cols());
        std::vector<std::size_t> counts(n_entries, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums.row(static_cast<Eigen::Index>(assign[i])) += unit.row(static_cast<Eigen::Index>(i)).cast<double>();
            ++counts[assign[i]];
        }
        std::vector<char> taken(n, 0);
        bool changed = false;
        for (Eigen::Index c = 0; c < k; ++c) {
            const double norm = sums.row(c).norm();
            if (counts[static_cast<std::size_t>(c)] == 0 || !(norm > kMinEntryNorm)) {
                // Reseed with the sample least similar to every current centroid.
                std::size_t worst = 0;
                float worst_v = std::numeric_limits<float>::infinity();
                for (std::size_t i = 0; i < n; ++i) {
                    if (!taken[i] && sim[i] < worst_v) {
                        worst_v = sim[i];
                        worst = i;
                    }
                }
                taken[worst] = 1;
                sim[worst] = 1.f;
                centroids.row(c) = unit.row(static_cast<Eigen::Index>(worst));
                changed = true;
                continue;
            }
            const RowMatrixXf next = (sums.row(c) / norm).cast<float>();
            if (!(next.array() == centroids.row(c).array()).all()) {
                changed = true;
            }
            centroids.row(c) = next;
        }
        if (!changed) {
            break;
        }
    }

    Codebook cb;
    cb.entries = std::move(centroids);
    return cb;
}

std::vector<std::size_t> spherical_assign(const Eigen::Ref<const RowMatrixXf>& samples, const Codebook& cb) {
    if (samples.cols() != cb.entries.cols()) {
        throw ValidationError("spherical_assign: sample dimension does not match codebook");
    }
    RowMatrixXf unit_entries = cb.entries;
    for (Eigen::Index i = 0; i < unit_entries.rows(); ++i) {
        unit_entries.row(i) /= unit_entries.row(i).norm();
    }
    std::vector<std::size_t> assign;
    std::vector<float> sim;
    best_match(normalized_rows(samples), unit_entries, assign, sim);
    return assign;
}

} // namespace goi

#include "alignedcut/eval.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/kernels.hpp"
#include "alignedcut/rng.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>

namespace alignedcut {

namespace {

RowMatrixXd kmeans_pp_init(const RowMatrixXd& points, std::size_t k, SplitMix64& rng) {
    const auto n = points.rows();
    RowMatrixXd centers(static_cast<Eigen::Index>(k), points.cols());
    centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = (points.row(i) - centers.row(static_cast<Eigen::Index>(c - 1))).squaredNorm();
            nearest[static_cast<std::size_t>(i)] = std::min(nearest[static_cast<std::size_t>(i)], d);
            total += nearest[static_cast<std::size_t>(i)];
        }
        Eigen::Index pick = n - 1;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                u -= nearest[static_cast<std::size_t>(i)];
                if (u < 0.0 && nearest[static_cast<std::size_t>(i)] > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centers.row(static_cast<Eigen::Index>(c)) = points.row(pick);
    }
    return centers;
}

}  // namespace

KMeansResult kmeans(const RowMatrixXd& points, std::size_t clusters, const KMeansOptions& options) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (clusters == 0 || clusters > n) throw ConfigError("k-means cluster count must be in [1, points]");
    if (options.restarts == 0) throw ConfigError("k-means needs at least one restart");
    const auto k = static_cast<Eigen::Index>(clusters);

    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < options.restarts; ++restart) {
        SplitMix64 rng(mix_seed(options.seed, restart));
        RowMatrixXd centers = kmeans_pp_init(points, clusters, rng);
        std::vector<double> dist;
        std::vector<std::uint32_t> labels = kernels::omp::nearest_center(points, centers, &dist);

        for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
            RowMatrixXd sums = RowMatrixXd::Zero(k, points.cols());
            std::vector<std::size_t> counts(clusters, 0);
            for (std::size_t i = 0; i < n; ++i) {
                sums.row(labels[i]) += points.row(static_cast<Eigen::Index>(i));
                ++counts[labels[i]];
            }
            for (Eigen::Index c = 0; c < k; ++c) {
                if (counts[static_cast<std::size_t>(c)] > 0) {
                    centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                    continue;
                }
                // Empty cluster: move it onto the point worst served by its center.
                const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
                centers.row(c) = points.row(static_cast<Eigen::Index>(far));
                dist[far] = 0.0;
            }
            std::vector<std::uint32_t> next = kernels::omp::nearest_center(points, centers, &dist);
            const bool stable = next == labels;
            labels = std::move(next);
            if (stable) break;
        }
        double inertia = 0.0;
        for (double d : dist) inertia += d;
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.labels = std::move(labels);
            best.centers = std::move(centers);
        }
    }
    return best;
}

std::vector<std::uint32_t> discretize(const RowMatrixXd& eigenvectors, std::size_t clusters, std::uint64_t seed) {
    if (clusters < 2) throw ConfigError("eval.n_clusters must be at least 2");
    if (!eigenvectors.allFinite()) throw DataError("eigenvectors contain non-finite values");
    const RowMatrixXd unit = kernels::omp::unit_rows(eigenvectors, nullptr);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(unit.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index c = 0; c < unit.cols(); ++c) {
            if (unit(a, c) != unit(b, c)) return unit(a, c) < unit(b, c);
        }
        return false;
    };
    std::sort(order.begin(), order.end(), less);
    std::size_t distinct = order.empty() ? 0 : 1;
    for (std::size_t i = 1; i < order.size() && distinct < clusters; ++i) {
        if (less(order[i - 1], order[i])) ++distinct;
    }
    if (distinct < clusters) {
        throw NumericError("only " + std::to_string(distinct) + " distinct embedding rows for " +
                           std::to_string(clusters) + " clusters");
    }
    KMeansOptions options;
    options.seed = seed;
    return kmeans(unit, clusters, options).labels;
}

std::vector<std::int64_t> hungarian_max(const RowMatrixXd& score) {
    const auto rows = static_cast<std::size_t>(score.rows());
    const auto cols = static_cast<std::size_t>(score.cols());
    const std::size_t n = std::max(rows, cols);
    std::vector<std::int64_t> result(rows, -1);
    if (n == 0) return result;
    const double top = score.size() ? score.maxCoeff() : 0.0;
    const auto cost = [&](std::size_t i, std::size_t j) {
        const double s = (i < rows && j < cols) ? score(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) : 0.0;
        return top - s;
    };

    // Shortest augmenting path with potentials, 1-based as in the classic formulation.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    for (std::size_t j = 1; j <= n; ++j) {
        const std::size_t i = p[j];
        if (i >= 1 && i <= rows && j <= cols) result[i - 1] = static_cast<std::int64_t>(j - 1);
    }
    return result;
}

SegmentationResult miou(std::span<const std::uint32_t> assignments, const LabelMasks& labels, Matching matching) {
    if (assignments.size() != labels.masks.size()) {
        throw ConfigError("assignments cover " + std::to_string(assignments.size()) + " pixels, labels " +
                          std::to_string(labels.masks.size()));
    }
    SegmentationResult result;
    result.assignments.assign(assignments.begin(), assignments.end());
    std::size_t clusters = 0;
    for (auto a : assignments) clusters = std::max<std::size_t>(clusters, std::size_t{a} + 1);
    std::size_t classes = labels.class_count;
    for (auto v : labels.masks) {
        if (v != labels.ignore_index) classes = std::max<std::size_t>(classes, std::size_t{v} + 1);
    }
    result.cluster_count = clusters;

    RowMatrixXd conf = RowMatrixXd::Zero(static_cast<Eigen::Index>(clusters), static_cast<Eigen::Index>(classes));
    std::size_t valid = 0;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const auto gt = labels.masks[i];
        if (gt == labels.ignore_index) continue;
        conf(assignments[i], gt) += 1.0;
        ++valid;
    }
    if (valid == 0) throw DataError("every pixel carries the ignore label");
    const VectorXd pred_count = conf.rowwise().sum();
    const Eigen::RowVectorXd gt_count = conf.colwise().sum();

    result.cluster_to_class.assign(clusters, -1);
    if (matching == Matching::majority) {
        for (std::size_t k = 0; k < clusters; ++k) {
            if (pred_count[static_cast<Eigen::Index>(k)] == 0.0) continue;
            Eigen::Index arg = 0;
            conf.row(static_cast<Eigen::Index>(k)).maxCoeff(&arg);  // first maximum = lowest class
            result.cluster_to_class[k] = arg;
        }
    } else {
        RowMatrixXd iou = RowMatrixXd::Zero(conf.rows(), conf.cols());
        for (Eigen::Index k = 0; k < conf.rows(); ++k) {
            for (Eigen::Index c = 0; c < conf.cols(); ++c) {
                const double uni = pred_count[k] + gt_count[c] - conf(k, c);
                iou(k, c) = uni > 0.0 ? conf(k, c) / uni : 0.0;
            }
        }
        result.cluster_to_class = hungarian_max(iou);
    }

    result.class_iou.assign(classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const double gt = gt_count[static_cast<Eigen::Index>(c)];
        if (gt == 0.0) continue;
        double inter = 0.0;
        double pred = 0.0;
        for (std::size_t k = 0; k < clusters; ++k) {
            if (result.cluster_to_class[k] != static_cast<std::int64_t>(c)) continue;
            inter += conf(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
            pred += pred_count[static_cast<Eigen::Index>(k)];
        }
        const double iou = inter / (pred + gt - inter);
        result.class_iou[c] = iou;
        sum += iou;
        ++present;
    }
    result.miou = sum / static_cast<double>(present);
    return result;
}

RowMatrixXd spatial_rows(const RowMatrixXd& entry_rows, std::size_t n_images, std::size_t patch_count) {
    const auto spatial = static_cast<Eigen::Index>(patch_count - 1);
    RowMatrixXd out(static_cast<Eigen::Index>(n_images) * spatial, entry_rows.cols());
    for (Eigen::Index img = 0; img < static_cast<Eigen::Index>(n_images); ++img) {
        out.middleRows(img * spatial, spatial) =
            entry_rows.middleRows(img * static_cast<Eigen::Index>(patch_count) + 1, spatial);
    }
    return out;
}

std::vector<SweepRow> layer_sweep(const FeatureSet& set, const AlignModel* model, const LabelMasks& labels,
                                  const SweepConfig& cfg) {
    if (labels.n_images != set.n_images || labels.height != set.manifest.patch_h ||
        labels.width != set.manifest.patch_w) {
        throw ConfigError("labels must cover every image at patch resolution (" + std::to_string(set.n_images) + "x" +
                          std::to_string(set.manifest.patch_h) + "x" + std::to_string(set.manifest.patch_w) + ")");
    }
    if (model) check_model_matches(*model, set);
    const auto entries = static_cast<std::ptrdiff_t>(set.entries.size());
    std::vector<SweepRow> rows(set.entries.size());
    std::vector<std::exception_ptr> errors(set.entries.size());

#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t e = 0; e < entries; ++e) {
        try {
            const auto& entry = set.entries[static_cast<std::size_t>(e)];
            RowMatrixXd features = entry.rows(set.row_count()).cast<double>();
            if (model) features = features * model->transforms[static_cast<std::size_t>(e)];
            const RowMatrixXd spatial = spatial_rows(features, set.n_images, set.patch_count);
            const NystromResult nr = nystrom_ncut(spatial, cfg.nystrom);
            const auto assign = discretize(nr.full_approx, cfg.clusters, cfg.nystrom.seed);
            const auto seg = miou(assign, labels, cfg.matching);
            rows[static_cast<std::size_t>(e)] = {entry.model, entry.layer, cfg.dataset, cfg.clusters, cfg.matching,
                                                 seg.miou};
        } catch (...) {
            errors[static_cast<std::size_t>(e)] = std::current_exception();
        }
    }
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
    return rows;
}

const char* to_string(Matching matching) { return matching == Matching::majority ? "majority" : "hungarian"; }

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(9);
    out << "layer,model,dataset,n_clusters,matching,mIoU\n";
    for (const auto& r : rows) {
        out << r.layer << ',' << r.model << ',' << r.dataset << ',' << r.clusters << ',' << to_string(r.matching) << ','
            << r.miou << '\n';
    }
}

}  // namespace alignedcut

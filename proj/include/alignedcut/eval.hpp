#pragma once

#include "alignedcut/align.hpp"
#include "alignedcut/feature_store.hpp"
#include "alignedcut/spectral.hpp"
#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace alignedcut {

struct KMeansOptions {
    std::size_t restarts = 10;
    std::size_t max_iterations = 300;
    std::uint64_t seed = 0;
};

struct KMeansResult {
    std::vector<std::uint32_t> labels;
    RowMatrixXd centers;
    double inertia = 0.0;
};

/// k-means++ seeded Lloyd iterations; keeps the lowest-inertia restart
/// (ties to the earlier restart).
KMeansResult kmeans(const RowMatrixXd& points, std::size_t clusters, const KMeansOptions& options = {});

/// k-means on row-normalized eigenvector rows. Throws NumericError when there
/// are fewer distinct rows than clusters.
std::vector<std::uint32_t> discretize(const RowMatrixXd& eigenvectors, std::size_t clusters, std::uint64_t seed);

enum class Matching { majority, hungarian };

struct SegmentationResult {
    std::vector<std::uint32_t> assignments;
    std::size_t cluster_count = 0;
    double miou = 0.0;
    std::vector<double> class_iou;      ///< indexed by class; NaN for classes absent from ground truth
    std::vector<std::int64_t> cluster_to_class;  ///< -1 for unmatched clusters
};

/// assignments are per pixel in the same order as labels.masks.
SegmentationResult miou(std::span<const std::uint32_t> assignments, const LabelMasks& labels, Matching matching);

/// Optimal assignment maximizing the total score; result[row] is the column or -1.
std::vector<std::int64_t> hungarian_max(const RowMatrixXd& score);

struct SweepConfig {
    NystromOptions nystrom;
    std::size_t clusters = 2;
    Matching matching = Matching::majority;
    std::string dataset = "synthetic";
};

struct SweepRow {
    std::string model;
    int layer = 0;
    std::string dataset;
    std::size_t clusters = 0;
    Matching matching = Matching::majority;
    double miou = 0.0;
};

/// Per entry: align (when a model is given), Nystrom ncut over the entry's
/// spatial patches, discretize, score. Labels must be at patch resolution.
std::vector<SweepRow> layer_sweep(const FeatureSet& set, const AlignModel* model, const LabelMasks& labels,
                                  const SweepConfig& cfg);

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

const char* to_string(Matching matching);

/// Rows [image * H * W + spatial patch] of an entry, skipping the class token.
RowMatrixXd spatial_rows(const RowMatrixXd& entry_rows, std::size_t n_images, std::size_t patch_count);

}  // namespace alignedcut

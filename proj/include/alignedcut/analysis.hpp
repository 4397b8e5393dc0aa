#pragma once

#include "alignedcut/feature_store.hpp"
#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace alignedcut {

/// Greedy farthest point sampling. The first index is drawn from the seed
/// unless `first` is given; ties go to the lowest index.
std::vector<std::size_t> farthest_point_sample(const RowMatrixXd& points, std::size_t k, std::uint64_t seed,
                                               std::optional<std::size_t> first = std::nullopt);

/// 10% of the bounding-box diagonal of the points.
double default_radius(const RowMatrixXd& points, double fraction = 0.1);

/// Concept centers in embedding space and the nodes inside each closed ball.
struct ConceptSet {
    RowMatrixXd centers;
    double radius = 0.0;
    std::vector<std::vector<std::size_t>> members;
};

ConceptSet build_concepts(const RowMatrixXd& points, std::span<const std::size_t> center_indices, double radius);

struct ConceptStats {
    RowMatrixXd mean;  ///< [k x channels]
    RowMatrixXd stddev;  ///< population standard deviation
    std::vector<bool> empty;
};

/// Per-concept channel mean and population std over member rows.
/// Empty concepts get zero rows and the empty flag.
ConceptStats concept_stats(const ConceptSet& concepts, const RowMatrixXd& activations);

/// Mean of a brain-space activation vector over each requested ROI.
/// Throws ConfigError for an unknown or empty ROI.
std::map<std::string, double> roi_mean_activation(std::span<const double> activation,
                                                  const std::map<std::string, std::vector<std::size_t>>& rois,
                                                  std::span<const std::string> names);

/// Cosine of every row against a reference row. Throws DataError if the
/// reference has zero norm.
VectorXd pixel_similarity_heatmap(const RowMatrixXd& aligned, std::size_t reference);

enum class PixelFilter { all, foreground, background };
enum class TransitionDenominator { landed, all_members };

/// Per-node figure-ground class. Nodes carrying the ignore label are `ignored`.
enum class NodeClass : std::uint8_t { background, foreground, ignored };

/// Spatial nodes of one entry, image-major then row-major patch; label 0 is background.
std::vector<NodeClass> node_classes(const LabelMasks& labels);

struct TransitionMatrix {
    RowMatrixXd probs;     ///< [k_A x k_B]
    RowMatrixXd counts;    ///< numerators
    VectorXd denominators;
    std::vector<bool> empty_rows;
    PixelFilter filter = PixelFilter::all;
};

/// Fraction of nodes in sphere a (layer A coords) that land in sphere b
/// (layer B coords). A node inside several target spheres counts for the one
/// with the nearest center. With the `landed` denominator rows sum to 1.
TransitionMatrix transition_matrix(const RowMatrixXd& coords_a, const RowMatrixXd& coords_b,
                                   const ConceptSet& concepts_a, const ConceptSet& concepts_b, PixelFilter filter,
                                   std::span<const NodeClass> classes,
                                   TransitionDenominator denominator = TransitionDenominator::landed);

void write_concepts_json(const ConceptSet& concepts, const ConceptStats& stats, std::span<const std::size_t> centers,
                         const std::filesystem::path& path);
/// concept, channel, mean, std, abs_mean rows for the magnitude/consistency plot.
void write_concept_stats_csv(const ConceptStats& stats, const std::filesystem::path& path);
/// <stem>_mean.acfs and <stem>_std.acfs, f32 [k x channels].
void write_concept_activations(const ConceptStats& stats, const std::filesystem::path& stem);
ConceptStats read_concept_activations(const std::filesystem::path& stem);
void write_transition_csv(const TransitionMatrix& matrix, const std::filesystem::path& path);
void write_transition_json(const TransitionMatrix& matrix, const std::filesystem::path& path);

const char* to_string(PixelFilter filter);

}  // namespace alignedcut

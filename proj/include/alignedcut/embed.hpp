#pragma once

#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace alignedcut {

struct TsneConfig {
    std::size_t out_dim = 3;
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double early_exaggeration = 12.0;
    std::size_t exaggeration_iterations = 250;
    double learning_rate = 200.0;
    std::uint64_t seed = 0;

    /// Throws ConfigError; needs perplexity < (points - 1) / 3.
    void validate(std::size_t points) const;
};

struct TsneResult {
    RowMatrixXd coords;
    double kl_initial = 0.0;  ///< KL at the initial layout (no exaggeration)
    double kl = 0.0;          ///< KL at the final layout
};

/// Exact O(n^2) t-SNE.
///
/// Each initial coordinate is drawn from N(0, 1e-4^2) using a generator seeded
/// by the seed and a hash of that point's input row, and all work runs in
/// lexicographic row order. Permuting the input permutes the output rows
/// bit for bit and leaves the KL divergence unchanged.
/// Throws NumericError naming the point when a point with exact duplicates
/// cannot reach the perplexity. Rows whose neighbors tie at a nonzero distance
/// keep the uniform distribution the search converges to.
TsneResult tsne(const RowMatrixXd& points, const TsneConfig& cfg);

/// Per-point Gaussian conditional probabilities matched to the perplexity;
/// exposed for tests. Row i sums to 1 with p_ii = 0.
RowMatrixXd tsne_conditional_probabilities(const RowMatrixXd& points, double perplexity);

/// Percentile clipping at [1%, 99%] then min-max to [0, 255] per channel.
/// A constant channel maps to 128. Returns [n x 3] bytes row-major.
std::vector<std::uint8_t> rgb_cube(const RowMatrixXd& coords);

/// Coordinates of every node from those of a sampled subset: affinity-weighted
/// average over the K nearest sampled nodes in eigenvector space. Sampled
/// nodes keep their own coordinates.
RowMatrixXd interpolate_coords(const RowMatrixXd& eigenvectors, std::span<const NodeId> sample,
                               const RowMatrixXd& sample_coords, std::size_t k = 10);

struct ColorMap {
    RowMatrixXd coords;
    std::vector<std::uint8_t> rgb;  ///< [points x 3]
};

/// <stem>_coords.acfs (f32), <stem>_rgb.acfs (u8) and <stem>.json.
void write_color_map(const ColorMap& map, const std::filesystem::path& stem);
ColorMap read_color_map(const std::filesystem::path& stem);

/// Binary PPM (P6); rgb is height x width x 3.
void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> rgb);

}  // namespace alignedcut

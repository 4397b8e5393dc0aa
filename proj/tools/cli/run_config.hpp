#pragma once

#include "alignedcut/analysis.hpp"
#include "alignedcut/embed.hpp"
#include "alignedcut/eval.hpp"
#include "alignedcut/spectral.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace alignedcut::cli {

struct Paths {
    std::filesystem::path features;
    std::filesystem::path brain;
    std::filesystem::path rois;
    std::filesystem::path labels;
    std::filesystem::path model;
    std::filesystem::path output = "alignedcut_out";
};

struct RunConfig {
    std::uint64_t seed = 0;
    Paths paths;

    std::size_t universal_dim = 768;
    TrainConfig train;

    NystromOptions spectral;
    std::string entries = "all";  ///< "all" or comma-separated model:layer list

    TsneConfig tsne;
    std::size_t embed_samples = 1000;
    std::size_t embed_knn = 10;

    std::size_t concepts = 6;
    double radius_fraction = 0.1;
    std::string layer_a;
    std::string layer_b;
    PixelFilter filter = PixelFilter::all;
    TransitionDenominator denominator = TransitionDenominator::landed;

    std::size_t clusters = 2;
    Matching matching = Matching::majority;
    std::string dataset = "synthetic";

    /// Every key with its final textual value, "section.key" -> value.
    std::map<std::string, std::string> values;

    /// FNV-1a 64 of the canonical key=value listing (output path excluded), as 16 hex digits.
    std::string hash() const;
};

/// Builds a config from defaults, an optional INI-style file and overrides
/// ("section.key" -> value, applied last). Throws ConfigError naming the key
/// on unknown keys or unparsable values.
RunConfig load_config(const std::filesystem::path& file, const std::map<std::string, std::string>& overrides);

/// All recognised keys with their default values.
const std::map<std::string, std::string>& default_values();

}  // namespace alignedcut::cli

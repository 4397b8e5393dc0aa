#pragma once

#include "alignedcut/align.hpp"
#include "alignedcut/feature_store.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace alignedcut {

struct SyntheticEntrySpec {
    std::string model;
    int layer = 0;
    std::size_t dim = 0;
    bool encodes_labels = false;  ///< patch features are a linear code of the label plus small noise
};

struct SyntheticOptions {
    std::size_t n_images = 8;
    std::size_t patch_h = 4;
    std::size_t patch_w = 4;
    std::vector<SyntheticEntrySpec> entries;
    std::size_t universal_dim = 4;
    std::size_t voxel_count = 6;
    double label_noise = 0.05;  ///< noise std on label-encoding entries
    std::uint64_t seed = 0;
};

/// Feature store, noiseless brain responses from a random ground-truth model,
/// figure-ground labels (one foreground rectangle per image) and two ROIs.
struct SyntheticDataset {
    FeatureSet features;
    BrainTarget brain;
    LabelMasks labels;
    AlignModel truth;
};

SyntheticDataset make_synthetic_dataset(const SyntheticOptions& options);

}  // namespace alignedcut

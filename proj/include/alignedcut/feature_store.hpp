#pragma once

#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace alignedcut {

/// Features of one (model, layer) pair, stacked over images:
/// tensor is [n_images x patch_count x dim], C-contiguous f32.
struct FeatureEntry {
    std::string model;
    int layer = 0;
    std::size_t dim = 0;
    std::vector<float> tensor;

    /// View of the tensor as an (n_images * patch_count) x dim matrix.
    Eigen::Map<const RowMatrixXf> rows(std::size_t row_count) const {
        return {tensor.data(), static_cast<Eigen::Index>(row_count), static_cast<Eigen::Index>(dim)};
    }
};

struct FeatureManifest {
    std::vector<std::string> image_ids;
    std::size_t patch_h = 0;
    std::size_t patch_w = 0;
};

/// Ordered collection of feature entries over a common image set.
///
/// Patch index 0 is the class token; spatial patches follow in row-major
/// patch_h x patch_w order, so patch_count == patch_h * patch_w + 1.
/// Entries are sorted by (model, layer).
struct FeatureSet {
    std::vector<FeatureEntry> entries;
    std::size_t n_images = 0;
    std::size_t patch_count = 0;
    FeatureManifest manifest;

    std::size_t row_count() const noexcept { return n_images * patch_count; }
    std::size_t spatial_patches() const noexcept { return manifest.patch_h * manifest.patch_w; }

    /// Finds the entry index for (model, layer); throws ConfigError if absent.
    std::size_t find_entry(const std::string& model, int layer) const;
};

/// Throws IntegrityError/DataError/ConfigError when an invariant is broken.
void validate_feature_set(const FeatureSet& set);

/// Sorts entries by (model, layer) in place.
void sort_entries(FeatureSet& set);

inline constexpr const char* kManifestFileName = "manifest.json";

FeatureSet read_feature_set(const std::filesystem::path& dir);
void write_feature_set(const FeatureSet& set, const std::filesystem::path& dir);

/// Voxel responses [n_images x voxel_count] plus named ROI voxel sets.
struct BrainTarget {
    RowMatrixXd responses;
    std::map<std::string, std::vector<std::size_t>> rois;

    std::size_t n_images() const noexcept { return static_cast<std::size_t>(responses.rows()); }
    std::size_t voxel_count() const noexcept { return static_cast<std::size_t>(responses.cols()); }

    /// Voxel indices of a named ROI, or every voxel for "all".
    std::vector<std::size_t> roi_voxels(const std::string& roi) const;
};

void validate_brain_target(const BrainTarget& target);

/// responses_path is an ACFS f32 container; roi_path (optional, may be empty)
/// is a JSON object mapping ROI names to voxel index arrays.
BrainTarget read_brain_target(const std::filesystem::path& responses_path,
                              const std::filesystem::path& roi_path = {});
void write_brain_target(const BrainTarget& target, const std::filesystem::path& responses_path,
                        const std::filesystem::path& roi_path = {});

inline constexpr std::uint16_t kDefaultIgnoreIndex = 65535;

/// Per-patch class labels [n_images x height x width].
struct LabelMasks {
    std::vector<std::uint16_t> masks;
    std::size_t n_images = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t class_count = 0;
    std::uint16_t ignore_index = kDefaultIgnoreIndex;

    std::uint16_t at(std::size_t image, std::size_t pixel) const { return masks[image * height * width + pixel]; }
};

void validate_label_masks(const LabelMasks& labels);

/// class_count == 0 infers it as (largest non-ignore label + 1).
LabelMasks read_label_masks(const std::filesystem::path& path, std::size_t class_count = 0,
                            std::uint16_t ignore_index = kDefaultIgnoreIndex);
void write_label_masks(const LabelMasks& labels, const std::filesystem::path& path);

/// Resolved coordinates of a flattened node.
struct NodeRef {
    std::size_t image = 0;
    std::size_t patch = 0;
    std::size_t entry = 0;  ///< index into FeatureSet::entries
};

/// Enumeration of (image, patch, entry) triples, image-major, then patch,
/// then position within the entry selection.
class NodeTable {
public:
    NodeTable(std::size_t n_images, std::size_t patch_count, std::vector<std::size_t> selection);

    std::uint64_t size() const noexcept { return n_images_ * patch_count_ * selection_.size(); }
    std::size_t n_images() const noexcept { return n_images_; }
    std::size_t patch_count() const noexcept { return patch_count_; }
    std::span<const std::size_t> selection() const noexcept { return selection_; }

    NodeRef resolve(NodeId id) const;
    NodeId id_of(std::size_t image, std::size_t patch, std::size_t selection_pos) const;

private:
    std::size_t n_images_;
    std::size_t patch_count_;
    std::vector<std::size_t> selection_;
};

/// Builds the node table for a selection of entry indices.
NodeTable flatten_nodes(const FeatureSet& set, std::vector<std::size_t> entry_selection);

/// Node count of the flattened universe without building anything; used for
/// configuration checks at scales that are never materialized.
std::uint64_t node_count(std::uint64_t n_images, std::uint64_t patch_count, std::uint64_t entries);

}  // namespace alignedcut

#include "alignedcut/synthetic.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/rng.hpp"

#include <algorithm>

namespace alignedcut {

namespace {

RowMatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double scale, SplitMix64& rng) {
    RowMatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

LabelMasks make_labels(const SyntheticOptions& o, SplitMix64& rng) {
    LabelMasks labels;
    labels.n_images = o.n_images;
    labels.height = o.patch_h;
    labels.width = o.patch_w;
    labels.class_count = 2;
    labels.masks.assign(o.n_images * o.patch_h * o.patch_w, 0);
    for (std::size_t img = 0; img < o.n_images; ++img) {
        // A rectangle covering between one cell and all but one row of the grid.
        const auto h = 1 + rng.below(std::max<std::size_t>(1, o.patch_h - 1));
        const auto w = 1 + rng.below(o.patch_w);
        const auto top = rng.below(o.patch_h - h + 1);
        const auto left = rng.below(o.patch_w - w + 1);
        for (std::size_t r = top; r < top + h; ++r) {
            for (std::size_t c = left; c < left + w; ++c) labels.masks[(img * o.patch_h + r) * o.patch_w + c] = 1;
        }
    }
    return labels;
}

}  // namespace

SyntheticDataset make_synthetic_dataset(const SyntheticOptions& o) {
    if (o.entries.empty() || o.n_images == 0 || o.patch_h == 0 || o.patch_w == 0 || o.voxel_count == 0 ||
        o.universal_dim == 0) {
        throw ConfigError("synthetic dataset needs entries, images, a patch grid, voxels and a universal dim");
    }
    SplitMix64 rng(mix_seed(o.seed, 0));
    SyntheticDataset ds;
    ds.labels = make_labels(o, rng);

    FeatureSet& set = ds.features;
    set.n_images = o.n_images;
    set.patch_count = o.patch_h * o.patch_w + 1;
    set.manifest.patch_h = o.patch_h;
    set.manifest.patch_w = o.patch_w;
    for (std::size_t i = 0; i < o.n_images; ++i) set.manifest.image_ids.push_back("img" + std::to_string(i));

    const auto spatial = static_cast<Eigen::Index>(o.patch_h * o.patch_w);
    for (const auto& spec : o.entries) {
        if (spec.dim == 0) throw ConfigError("synthetic entry dim must be positive");
        const auto d = static_cast<Eigen::Index>(spec.dim);
        // Class codes are orthogonal-ish random directions far apart relative to the noise.
        const RowMatrixXd codes = gaussian(2, d, 1.0, rng);
        FeatureEntry entry{spec.model, spec.layer, spec.dim, {}};
        entry.tensor.resize(set.row_count() * spec.dim);
        Eigen::Map<RowMatrixXf> rows(entry.tensor.data(), static_cast<Eigen::Index>(set.row_count()), d);
        for (std::size_t img = 0; img < o.n_images; ++img) {
            const auto base = static_cast<Eigen::Index>(img * set.patch_count);
            RowMatrixXd patches(spatial, d);
            for (Eigen::Index p = 0; p < spatial; ++p) {
                if (spec.encodes_labels) {
                    const auto label = ds.labels.masks[img * static_cast<std::size_t>(spatial) + static_cast<std::size_t>(p)];
                    patches.row(p) = codes.row(label) + gaussian(1, d, o.label_noise, rng);
                } else {
                    patches.row(p) = gaussian(1, d, 1.0, rng);
                }
            }
            rows.row(base) = (patches.colwise().mean() + gaussian(1, d, 0.1, rng)).cast<float>();
            rows.middleRows(base + 1, spatial) = patches.cast<float>();
        }
        set.entries.push_back(std::move(entry));
    }
    sort_entries(set);
    validate_feature_set(set);

    ds.truth = init_align_model(set, o.universal_dim, o.voxel_count, mix_seed(o.seed, 1));
    SplitMix64 bias_rng(mix_seed(o.seed, 2));
    for (Eigen::Index v = 0; v < ds.truth.encoder_bias.size(); ++v) ds.truth.encoder_bias[v] = 0.1 * bias_rng.normal();
    ds.brain.responses = predict_brain(ds.truth, set);
    const std::size_t half = std::max<std::size_t>(1, o.voxel_count / 2);
    for (std::size_t v = 0; v < o.voxel_count; ++v) (v < half ? ds.brain.rois["early"] : ds.brain.rois["late"]).push_back(v);
    if (ds.brain.rois["late"].empty()) ds.brain.rois.erase("late");
    return ds;
}

}  // namespace alignedcut

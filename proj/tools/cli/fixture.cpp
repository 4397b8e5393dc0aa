#include "fixture.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/feature_store.hpp"

#include <fstream>

namespace alignedcut::cli {

namespace fs = std::filesystem;

std::vector<SyntheticEntrySpec> fixture_entries() {
    return {{"clip", 1, 8, false}, {"clip", 2, 8, true}, {"clip", 3, 8, false}, {"mae", 2, 6, true}};
}

void write_fixture(const fs::path& out, SyntheticOptions options) {
    if (options.entries.empty()) options.entries = fixture_entries();
    const auto ds = make_synthetic_dataset(options);
    fs::create_directories(out);
    write_feature_set(ds.features, out / "features");
    write_brain_target(ds.brain, out / "brain.acfs", out / "rois.json");
    write_label_masks(ds.labels, out / "labels.acfs");

    std::ofstream cfg(out / "config.ini", std::ios::trunc);
    if (!cfg) throw Error("cannot write " + (out / "config.ini").string());
    cfg << "[run]\nseed = 0\n\n"
        << "[paths]\nfeatures = " << (out / "features").string() << "\nbrain = " << (out / "brain.acfs").string()
        << "\nrois = " << (out / "rois.json").string() << "\nlabels = " << (out / "labels.acfs").string()
        << "\noutput = " << (out / "run").string() << "\n\n"
        << "[align]\nuniversal_dim = 4\nlambda_eigen = 0.1\neigen_nodes = 12\neigen_top = 3\n"
           "minibatch_images = 4\nlearning_rate = 0.01\nsteps = 200\nlog_every = 10\n\n"
        << "[spectral]\nsample_count = 64\nknn = 8\neigen_count = 6\nentries = clip:1,clip:2,clip:3\n\n"
        << "[embed]\nperplexity = 10\niterations = 300\nsample_count = 120\n\n"
        << "[analysis]\nconcepts = 3\n\n"
        << "[eval]\nn_clusters = 2\n";
}

}  // namespace alignedcut::cli

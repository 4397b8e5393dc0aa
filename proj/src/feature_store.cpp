#include "alignedcut/feature_store.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/tensor_file.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

namespace alignedcut {

using nlohmann::json;

namespace {

bool safe_file_stem(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    }) && s.front() != '.';
}

std::string entry_file_name(const FeatureEntry& e) { return e.model + "_layer" + std::to_string(e.layer) + ".acfs"; }

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& ex) {
        throw FormatError("malformed JSON in " + path.string() + ": " + ex.what());
    }
}

template <typename T>
T field(const json& j, const char* key, const std::filesystem::path& where) {
    if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "' in " + where.string());
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError(std::string("field '") + key + "' has the wrong type in " + where.string());
    }
}

}  // namespace

std::size_t FeatureSet::find_entry(const std::string& model, int layer) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].model == model && entries[i].layer == layer) return i;
    }
    throw ConfigError("no feature entry for model '" + model + "' layer " + std::to_string(layer));
}

void sort_entries(FeatureSet& set) {
    std::stable_sort(set.entries.begin(), set.entries.end(), [](const FeatureEntry& a, const FeatureEntry& b) {
        return a.model != b.model ? a.model < b.model : a.layer < b.layer;
    });
}

void validate_feature_set(const FeatureSet& set) {
    if (set.entries.empty()) throw ConfigError("feature set has no entries");
    if (set.n_images == 0) throw IntegrityError("feature set has no images");
    if (set.patch_count != set.manifest.patch_h * set.manifest.patch_w + 1) {
        throw IntegrityError("patch count " + std::to_string(set.patch_count) + " != patch_h * patch_w + 1");
    }
    if (!set.manifest.image_ids.empty() && set.manifest.image_ids.size() != set.n_images) {
        throw IntegrityError("manifest lists " + std::to_string(set.manifest.image_ids.size()) + " image ids for " +
                             std::to_string(set.n_images) + " images");
    }
    std::set<std::pair<std::string, int>> seen;
    const FeatureEntry* previous = nullptr;
    for (const auto& e : set.entries) {
        const std::string name = e.model + " layer " + std::to_string(e.layer);
        if (!safe_file_stem(e.model)) throw ConfigError("model name '" + e.model + "' is not a valid file stem");
        if (e.layer < 0) throw IntegrityError(name + ": negative layer index");
        if (!seen.emplace(e.model, e.layer).second) throw IntegrityError(name + ": duplicate entry");
        if (e.dim == 0) throw IntegrityError(name + ": zero feature dimension");
        if (e.tensor.size() != set.n_images * set.patch_count * e.dim) {
            throw IntegrityError(name + ": tensor holds " + std::to_string(e.tensor.size()) + " values, expected " +
                                 std::to_string(set.n_images * set.patch_count * e.dim));
        }
        if (previous && (previous->model > e.model || (previous->model == e.model && previous->layer > e.layer))) {
            throw IntegrityError("entries are not sorted by (model, layer)");
        }
        previous = &e;
        const auto bad = std::find_if(e.tensor.begin(), e.tensor.end(), [](float v) { return !std::isfinite(v); });
        if (bad != e.tensor.end()) {
            throw DataError(name + ": non-finite value at flat index " + std::to_string(bad - e.tensor.begin()));
        }
    }
}

FeatureSet read_feature_set(const std::filesystem::path& dir) {
    const auto manifest_path = dir / kManifestFileName;
    const json doc = read_json(manifest_path);

    FeatureSet set;
    if (doc.contains("version") && doc.at("version") != 1) throw FormatError("unsupported manifest version");
    if (doc.contains("images")) set.manifest.image_ids = field<std::vector<std::string>>(doc, "images", manifest_path);
    if (!doc.contains("entries") || !doc.at("entries").is_array()) {
        throw FormatError("manifest has no entries array: " + manifest_path.string());
    }

    bool first = true;
    for (const auto& je : doc.at("entries")) {
        FeatureEntry e;
        e.model = field<std::string>(je, "model", manifest_path);
        e.layer = field<int>(je, "layer", manifest_path);
        e.dim = field<std::size_t>(je, "dim", manifest_path);
        const auto file = field<std::string>(je, "file", manifest_path);
        const auto n_images = field<std::size_t>(je, "n_images", manifest_path);
        const auto ph = field<std::size_t>(je, "patch_h", manifest_path);
        const auto pw = field<std::size_t>(je, "patch_w", manifest_path);
        const std::string name = e.model + " layer " + std::to_string(e.layer);

        if (first) {
            set.n_images = n_images;
            set.manifest.patch_h = ph;
            set.manifest.patch_w = pw;
            set.patch_count = ph * pw + 1;
            first = false;
        } else if (n_images != set.n_images || ph != set.manifest.patch_h || pw != set.manifest.patch_w) {
            throw IntegrityError(name + ": image count or patch grid differs from the first entry");
        }
        if (std::filesystem::path(file).has_parent_path()) throw FormatError(name + ": entry file must be a bare name");

        auto tensor = read_tensor<float>(dir / file);
        const std::vector<std::uint64_t> expected{n_images, ph * pw + 1, e.dim};
        if (tensor.shape != expected) {
            std::string got;
            for (auto x : tensor.shape) got += (got.empty() ? "" : "x") + std::to_string(x);
            throw IntegrityError(name + ": tensor extents " + got + " disagree with manifest (" +
                                 std::to_string(n_images) + "x" + std::to_string(ph * pw + 1) + "x" +
                                 std::to_string(e.dim) + ")");
        }
        e.tensor = std::move(tensor.data);
        set.entries.push_back(std::move(e));
    }
    sort_entries(set);
    validate_feature_set(set);
    return set;
}

void write_feature_set(const FeatureSet& set, const std::filesystem::path& dir) {
    validate_feature_set(set);
    std::filesystem::create_directories(dir);

    json doc;
    doc["version"] = 1;
    doc["images"] = set.manifest.image_ids;
    doc["entries"] = json::array();
    for (const auto& e : set.entries) {
        const auto file = entry_file_name(e);
        Tensor<float> t{{set.n_images, set.patch_count, e.dim}, e.tensor};
        write_tensor(dir / file, t);
        doc["entries"].push_back({{"model", e.model},
                                  {"layer", e.layer},
                                  {"dim", e.dim},
                                  {"file", file},
                                  {"n_images", set.n_images},
                                  {"patch_h", set.manifest.patch_h},
                                  {"patch_w", set.manifest.patch_w}});
    }
    std::ofstream out(dir / kManifestFileName, std::ios::trunc);
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> BrainTarget::roi_voxels(const std::string& roi) const {
    if (roi == "all") {
        std::vector<std::size_t> all(voxel_count());
        for (std::size_t v = 0; v < all.size(); ++v) all[v] = v;
        return all;
    }
    const auto it = rois.find(roi);
    if (it == rois.end()) throw ConfigError("unknown ROI '" + roi + "'");
    return it->second;
}

void validate_brain_target(const BrainTarget& target) {
    if (target.responses.size() == 0) throw IntegrityError("brain target is empty");
    if (!target.responses.allFinite()) throw DataError("brain target has non-finite responses");
    for (const auto& [name, voxels] : target.rois) {
        for (auto v : voxels) {
            if (v >= target.voxel_count()) {
                throw IntegrityError("ROI '" + name + "' references voxel " + std::to_string(v) + " of " +
                                     std::to_string(target.voxel_count()));
            }
        }
    }
}

BrainTarget read_brain_target(const std::filesystem::path& responses_path, const std::filesystem::path& roi_path) {
    const auto t = read_tensor<float>(responses_path);
    if (t.shape.size() != 2) throw IntegrityError("brain target must be rank 2: " + responses_path.string());
    BrainTarget target;
    target.responses = Eigen::Map<const RowMatrixXf>(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                                                     static_cast<Eigen::Index>(t.shape[1]))
                           .cast<double>();
    if (!roi_path.empty()) {
        const json doc = read_json(roi_path);
        if (!doc.is_object()) throw FormatError("ROI file must be a JSON object: " + roi_path.string());
        for (const auto& [name, voxels] : doc.items()) {
            try {
                target.rois[name] = voxels.get<std::vector<std::size_t>>();
            } catch (const json::exception&) {
                throw FormatError("ROI '" + name + "' is not an array of voxel indices");
            }
        }
    }
    validate_brain_target(target);
    return target;
}

void write_brain_target(const BrainTarget& target, const std::filesystem::path& responses_path,
                        const std::filesystem::path& roi_path) {
    validate_brain_target(target);
    Tensor<float> t;
    t.shape = {target.n_images(), target.voxel_count()};
    const RowMatrixXf f = target.responses.cast<float>();
    t.data.assign(f.data(), f.data() + f.size());
    write_tensor(responses_path, t);
    if (!roi_path.empty()) {
        json doc = json::object();
        for (const auto& [name, voxels] : target.rois) doc[name] = voxels;
        std::ofstream out(roi_path, std::ios::trunc);
        if (!out) throw Error("cannot write " + roi_path.string());
        out << doc.dump(2) << '\n';
    }
}

// ---------------------------------------------------------------------------

void validate_label_masks(const LabelMasks& labels) {
    if (labels.masks.size() != labels.n_images * labels.height * labels.width) {
        throw IntegrityError("label mask size does not match its extents");
    }
    for (std::size_t i = 0; i < labels.masks.size(); ++i) {
        const auto v = labels.masks[i];
        if (v != labels.ignore_index && v >= labels.class_count) {
            throw DataError("label " + std::to_string(v) + " at flat index " + std::to_string(i) +
                            " exceeds class count " + std::to_string(labels.class_count));
        }
    }
}

LabelMasks read_label_masks(const std::filesystem::path& path, std::size_t class_count, std::uint16_t ignore_index) {
    auto t = read_tensor<std::uint16_t>(path);
    if (t.shape.size() != 3) throw IntegrityError("label masks must be rank 3: " + path.string());
    LabelMasks labels;
    labels.n_images = t.shape[0];
    labels.height = t.shape[1];
    labels.width = t.shape[2];
    labels.ignore_index = ignore_index;
    labels.masks = std::move(t.data);
    if (class_count == 0) {
        for (auto v : labels.masks) {
            if (v != ignore_index) class_count = std::max<std::size_t>(class_count, std::size_t{v} + 1);
        }
    }
    labels.class_count = class_count;
    validate_label_masks(labels);
    return labels;
}

void write_label_masks(const LabelMasks& labels, const std::filesystem::path& path) {
    validate_label_masks(labels);
    write_tensor(path, Tensor<std::uint16_t>{{labels.n_images, labels.height, labels.width}, labels.masks});
}

// ---------------------------------------------------------------------------

NodeTable::NodeTable(std::size_t n_images, std::size_t patch_count, std::vector<std::size_t> selection)
    : n_images_(n_images), patch_count_(patch_count), selection_(std::move(selection)) {}

NodeRef NodeTable::resolve(NodeId id) const {
    if (id >= size()) throw ConfigError("node id " + std::to_string(id) + " out of range");
    const auto s = selection_.size();
    const auto pos = static_cast<std::size_t>(id % s);
    const auto rest = static_cast<std::size_t>(id / s);
    return {rest / patch_count_, rest % patch_count_, selection_[pos]};
}

NodeId NodeTable::id_of(std::size_t image, std::size_t patch, std::size_t selection_pos) const {
    return (static_cast<NodeId>(image) * patch_count_ + patch) * selection_.size() + selection_pos;
}

NodeTable flatten_nodes(const FeatureSet& set, std::vector<std::size_t> entry_selection) {
    if (entry_selection.empty()) throw ConfigError("entry selection is empty");
    for (auto e : entry_selection) {
        if (e >= set.entries.size()) {
            throw ConfigError("entry index " + std::to_string(e) + " out of range (" +
                              std::to_string(set.entries.size()) + " entries)");
        }
    }
    return NodeTable(set.n_images, set.patch_count, std::move(entry_selection));
}

std::uint64_t node_count(std::uint64_t n_images, std::uint64_t patch_count, std::uint64_t entries) {
    return n_images * patch_count * entries;
}

}  // namespace alignedcut

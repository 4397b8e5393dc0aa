#include "commands.hpp"

#include "run_config.hpp"

#include "alignedcut/align.hpp"
#include "alignedcut/analysis.hpp"
#include "alignedcut/embed.hpp"
#include "alignedcut/error.hpp"
#include "alignedcut/eval.hpp"
#include "alignedcut/feature_store.hpp"
#include "alignedcut/rng.hpp"
#include "alignedcut/spectral.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>

#ifndef ALIGNEDCUT_VERSION
#define ALIGNEDCUT_VERSION "0.0.0"
#endif

namespace alignedcut::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

fs::path require_path(const std::string& field, const fs::path& path) {
    if (path.empty()) throw ConfigError(field + ": not set");
    if (!fs::exists(path)) throw ConfigError(field + ": not found: " + path.string());
    return path;
}

FeatureSet load_features(const RunConfig& cfg) { return read_feature_set(require_path("paths.features", cfg.paths.features)); }

BrainTarget load_brain(const RunConfig& cfg) {
    const fs::path rois = cfg.paths.rois.empty() ? fs::path{} : require_path("paths.rois", cfg.paths.rois);
    return read_brain_target(require_path("paths.brain", cfg.paths.brain), rois);
}

std::optional<AlignModel> load_model(const RunConfig& cfg, const FeatureSet& set) {
    if (cfg.paths.model.empty()) return std::nullopt;
    AlignModel model = read_align_model(require_path("paths.model", cfg.paths.model));
    check_model_matches(model, set);
    return model;
}

LabelMasks load_labels(const RunConfig& cfg, const FeatureSet& set) {
    LabelMasks labels = read_label_masks(require_path("paths.labels", cfg.paths.labels));
    if (labels.n_images != set.n_images || labels.height != set.manifest.patch_h || labels.width != set.manifest.patch_w) {
        throw ConfigError("paths.labels: masks must be " + std::to_string(set.n_images) + "x" +
                          std::to_string(set.manifest.patch_h) + "x" + std::to_string(set.manifest.patch_w));
    }
    return labels;
}

std::size_t parse_entry(const FeatureSet& set, const std::string& field, const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ConfigError(field + ": expected model:layer, got '" + text + "'");
    int layer = 0;
    try {
        std::size_t used = 0;
        layer = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw std::invalid_argument(text);
    } catch (const std::logic_error&) {
        throw ConfigError(field + ": bad layer in '" + text + "'");
    }
    try {
        return set.find_entry(text.substr(0, colon), layer);
    } catch (const ConfigError& e) {
        throw ConfigError(field + ": " + e.what());
    }
}

std::vector<std::size_t> select_entries(const FeatureSet& set, const std::string& spec) {
    std::vector<std::size_t> out;
    if (spec == "all") {
        for (std::size_t i = 0; i < set.entries.size(); ++i) out.push_back(i);
        return out;
    }
    std::set<std::size_t> seen;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const auto comma = std::min(spec.find(',', start), spec.size());
        std::string item = spec.substr(start, comma - start);
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        const auto idx = parse_entry(set, "spectral.entries", item);
        if (!seen.insert(idx).second) throw ConfigError("spectral.entries: '" + item + "' listed twice");
        out.push_back(idx);
        start = comma + 1;
    }
    return out;
}

/// Row (img * P + patch) * S + s holds entry selection[s] at (img, patch).
RowMatrixXd node_features(const FeatureSet& set, const AlignModel* model, const NodeTable& table) {
    const auto sel = table.selection();
    std::size_t dim = model ? model->universal_dim : set.entries[sel[0]].dim;
    for (auto e : sel) {
        if (!model && set.entries[e].dim != dim) {
            throw ConfigError("spectral.entries: selected entries differ in dimension; set paths.model or select one dimension");
        }
    }
    const auto s_count = static_cast<Eigen::Index>(sel.size());
    RowMatrixXd out(static_cast<Eigen::Index>(table.size()), static_cast<Eigen::Index>(dim));
    for (Eigen::Index s = 0; s < s_count; ++s) {
        const auto e = sel[static_cast<std::size_t>(s)];
        RowMatrixXd rows = set.entries[e].rows(set.row_count()).cast<double>();
        if (model) rows = rows * model->transforms[e];
        for (Eigen::Index r = 0; r < rows.rows(); ++r) out.row(r * s_count + s) = rows.row(r);
    }
    return out;
}

void write_provenance(const RunConfig& cfg, const std::string& command) {
    ordered_json j;
    j["command"] = command;
    j["version"] = ALIGNEDCUT_VERSION;
    j["seed"] = cfg.seed;
    j["config_hash"] = cfg.hash();
    ordered_json values = ordered_json::object();
    for (const auto& [k, v] : cfg.values) {
        if (k != "paths.output") values[k] = v;
    }
    j["config"] = values;
    fs::create_directories(cfg.paths.output);
    std::ofstream(cfg.paths.output / ("provenance_" + command + ".json")) << j.dump(2) << '\n';
}

std::string safe_name(std::string s) {
    for (auto& ch : s) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-' && ch != '_') ch = '_';
    }
    return s;
}

int cmd_validate(const RunConfig& cfg, std::ostream& out) {
    const FeatureSet set = load_features(cfg);
    out << "features: " << set.entries.size() << " entries, " << set.n_images << " images, " << set.patch_count
        << " patches\n";
    const auto selection = select_entries(set, cfg.entries);
    const NodeTable table = flatten_nodes(set, selection);
    out << "nodes: " << table.size() << '\n';
    if (!cfg.paths.brain.empty()) {
        const BrainTarget brain = load_brain(cfg);
        if (brain.n_images() != set.n_images) throw ConfigError("paths.brain: image count differs from the feature store");
        out << "brain: " << brain.voxel_count() << " voxels, " << brain.rois.size() << " rois\n";
        cfg.train.validate();
    }
    if (!cfg.paths.labels.empty()) {
        const LabelMasks labels = load_labels(cfg, set);
        out << "labels: " << labels.class_count << " classes\n";
    }
    if (load_model(cfg, set)) out << "model: ok\n";
    validate_nystrom(table.size(), cfg.spectral);
    out << "ok\n";
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const FeatureSet set = load_features(cfg);
    const BrainTarget brain = load_brain(cfg);
    cfg.train.validate();
    AlignModel init = init_align_model(set, cfg.universal_dim, brain.voxel_count(), cfg.seed);
    const TrainResult result = train(std::move(init), set, brain, cfg.train);

    const double r2 = roi_r2(predict_brain(result.model, set), brain, "all");
    ordered_json extra;
    extra["training"] = {{"lambda_eigen", cfg.train.lambda_eigen}, {"eigen_nodes", cfg.train.eigen_nodes},
                         {"eigen_top", cfg.train.eigen_top},       {"minibatch_images", cfg.train.minibatch_images},
                         {"learning_rate", cfg.train.learning_rate}, {"momentum", cfg.train.momentum},
                         {"steps", cfg.train.steps},               {"seed", cfg.seed}};
    const LossRecord& last = result.history.back();
    extra["final_loss"] = {{"total", last.total}, {"brain", last.brain}, {"eigen", last.eigen}};
    extra["train_r2"] = r2;
    extra["degenerate_steps"] = result.degenerate_steps;

    fs::create_directories(cfg.paths.output);
    write_align_model(result.model, cfg.paths.output / "model", extra.dump());
    write_loss_history(result.history, cfg.paths.output / "loss_history.csv");
    write_provenance(cfg, "train");
    out << "trained " << cfg.train.steps << " steps, final loss " << last.total << ", train R2 " << r2 << '\n';
    return kExitOk;
}

int cmd_cluster(const RunConfig& cfg, std::ostream& out) {
    const FeatureSet set = load_features(cfg);
    const auto model = load_model(cfg, set);
    const NodeTable table = flatten_nodes(set, select_entries(set, cfg.entries));
    validate_nystrom(table.size(), cfg.spectral);
    const RowMatrixXd features = node_features(set, model ? &*model : nullptr, table);
    const NystromResult result = nystrom_ncut(features, cfg.spectral);
    fs::create_directories(cfg.paths.output);
    write_nystrom_result(result, cfg.paths.output / "cluster");
    write_provenance(cfg, "cluster");
    out << "clustered " << table.size() << " nodes from " << result.subsample_indices.size() << " samples\n";
    return kExitOk;
}

NystromResult load_cluster(const RunConfig& cfg, std::uint64_t nodes) {
    const fs::path stem = cfg.paths.output / "cluster";
    if (!fs::exists(fs::path(stem).concat(".json"))) {
        throw ConfigError("paths.output: no cluster result in " + cfg.paths.output.string() + "; run cluster first");
    }
    NystromResult result = read_nystrom_result(stem);
    if (static_cast<std::uint64_t>(result.full_approx.rows()) != nodes) {
        throw ConfigError("cluster result covers " + std::to_string(result.full_approx.rows()) + " nodes, config selects " +
                          std::to_string(nodes) + "; rerun cluster");
    }
    return result;
}

int cmd_color(const RunConfig& cfg, std::ostream& out) {
    const FeatureSet set = load_features(cfg);
    const NodeTable table = flatten_nodes(set, select_entries(set, cfg.entries));
    const NystromResult cluster = load_cluster(cfg, table.size());
    const auto total = static_cast<std::uint64_t>(table.size());
    const std::uint64_t samples = std::min<std::uint64_t>(cfg.embed_samples, total);
    const std::vector<NodeId> sample = subsample_nodes(total, samples, mix_seed(cfg.seed, 0xC0102ULL));
    RowMatrixXd points(static_cast<Eigen::Index>(sample.size()), cluster.full_approx.cols());
    for (std::size_t i = 0; i < sample.size(); ++i) {
        points.row(static_cast<Eigen::Index>(i)) = cluster.full_approx.row(static_cast<Eigen::Index>(sample[i]));
    }
    const TsneResult embedded = tsne(points, cfg.tsne);
    ColorMap map;
    map.coords = interpolate_coords(cluster.full_approx, sample, embedded.coords, std::min(cfg.embed_knn, sample.size()));
    map.rgb = rgb_cube(map.coords);
    write_color_map(map, cfg.paths.output / "color");

    const std::size_t h = set.manifest.patch_h;
    const std::size_t w = set.manifest.patch_w;
    std::size_t written = 0;
    for (std::size_t pos = 0; pos < table.selection().size(); ++pos) {
        const auto& entry = set.entries[table.selection()[pos]];
        const fs::path dir = cfg.paths.output / "images" / safe_name(entry.model + "_layer" + std::to_string(entry.layer));
        fs::create_directories(dir);
        for (std::size_t img = 0; img < set.n_images; ++img) {
            std::vector<std::uint8_t> rgb(h * w * 3);
            for (std::size_t p = 0; p < h * w; ++p) {
                const auto id = table.id_of(img, p + 1, pos);
                std::copy_n(map.rgb.begin() + static_cast<std::ptrdiff_t>(id * 3), 3, rgb.begin() + static_cast<std::ptrdiff_t>(p * 3));
            }
            write_ppm(dir / (safe_name(set.manifest.image_ids[img]) + ".ppm"), w, h, rgb);
            ++written;
        }
    }
    write_provenance(cfg, "color");
    out << "t-SNE on " << sample.size() << " nodes (KL " << embedded.kl << "), " << written << " images\n";
    return kExitOk;
}

RowMatrixXd rows_of(const RowMatrixXd& m, std::span<const std::size_t> ids) {
    RowMatrixXd out(static_cast<Eigen::Index>(ids.size()), m.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(ids[i]));
    return out;
}

int cmd_analyze(const RunConfig& cfg, std::ostream& out) {
    const FeatureSet set = load_features(cfg);
    const auto model = load_model(cfg, set);
    const NodeTable table = flatten_nodes(set, select_entries(set, cfg.entries));
    const ColorMap map = read_color_map(cfg.paths.output / "color");
    if (static_cast<std::uint64_t>(map.coords.rows()) != table.size()) {
        throw ConfigError("color map does not match the selected nodes; rerun color");
    }
    const RowMatrixXd features = node_features(set, model ? &*model : nullptr, table);

    const auto centers = farthest_point_sample(map.coords, cfg.concepts, cfg.seed);
    const ConceptSet concepts = build_concepts(map.coords, centers, default_radius(map.coords, cfg.radius_fraction));
    const ConceptStats stats = concept_stats(concepts, features);
    write_concepts_json(concepts, stats, centers, cfg.paths.output / "concepts.json");
    write_concept_stats_csv(stats, cfg.paths.output / "concept_stats.csv");
    write_concept_activations(stats, cfg.paths.output / "concept");

    if (model && !cfg.paths.brain.empty()) {
        const BrainTarget brain = load_brain(cfg);
        if (brain.voxel_count() != model->voxel_count()) throw ConfigError("paths.brain: voxel count differs from the model");
        const RowMatrixXd brain_space = features * model->encoder_weight;
        std::vector<std::string> names;
        for (const auto& [name, voxels] : brain.rois) names.push_back(name);
        names.emplace_back("all");
        auto rois = brain.rois;
        rois["all"] = brain.roi_voxels("all");
        ordered_json j = ordered_json::array();
        for (std::size_t k = 0; k < concepts.members.size(); ++k) {
            ordered_json row{{"concept", k}, {"empty", concepts.members[k].empty()}};
            if (!concepts.members[k].empty()) {
                const VectorXd mean = rows_of(brain_space, concepts.members[k]).colwise().mean().transpose();
                row["roi_mean"] = roi_mean_activation(std::span<const double>(mean.data(), static_cast<std::size_t>(mean.size())), rois, names);
            }
            j.push_back(row);
        }
        std::ofstream(cfg.paths.output / "roi_activation.json") << j.dump(2) << '\n';
    }

    const auto sel = table.selection();
    std::optional<std::size_t> pos_a;
    std::optional<std::size_t> pos_b;
    const auto position = [&](const std::string& field, const std::string& text) {
        const auto e = parse_entry(set, field, text);
        const auto it = std::find(sel.begin(), sel.end(), e);
        if (it == sel.end()) throw ConfigError(field + ": '" + text + "' is not in spectral.entries");
        return static_cast<std::size_t>(it - sel.begin());
    };
    if (!cfg.layer_a.empty() || !cfg.layer_b.empty()) {
        pos_a = position("analysis.layer_a", cfg.layer_a);
        pos_b = position("analysis.layer_b", cfg.layer_b);
    } else if (sel.size() >= 2) {
        pos_a = 0;
        pos_b = sel.size() - 1;
    }
    if (pos_a) {
        const std::size_t spatial = set.spatial_patches();
        std::vector<std::size_t> ids_a, ids_b;
        for (std::size_t img = 0; img < set.n_images; ++img) {
            for (std::size_t p = 1; p <= spatial; ++p) {
                ids_a.push_back(static_cast<std::size_t>(table.id_of(img, p, *pos_a)));
                ids_b.push_back(static_cast<std::size_t>(table.id_of(img, p, *pos_b)));
            }
        }
        const RowMatrixXd coords_a = rows_of(map.coords, ids_a);
        const RowMatrixXd coords_b = rows_of(map.coords, ids_b);
        const ConceptSet ca = build_concepts(coords_a, farthest_point_sample(coords_a, cfg.concepts, cfg.seed),
                                             default_radius(coords_a, cfg.radius_fraction));
        const ConceptSet cb = build_concepts(coords_b, farthest_point_sample(coords_b, cfg.concepts, cfg.seed),
                                             default_radius(coords_b, cfg.radius_fraction));
        std::vector<NodeClass> classes;
        if (!cfg.paths.labels.empty()) {
            classes = node_classes(load_labels(cfg, set));
        } else if (cfg.filter != PixelFilter::all) {
            throw ConfigError("analysis.filter: foreground/background filtering needs paths.labels");
        } else {
            classes.assign(ids_a.size(), NodeClass::foreground);
        }
        const TransitionMatrix t = transition_matrix(coords_a, coords_b, ca, cb, cfg.filter, classes, cfg.denominator);
        write_transition_csv(t, cfg.paths.output / "transition.csv");
        write_transition_json(t, cfg.paths.output / "transition.json");
    }
    write_provenance(cfg, "analyze");
    out << concepts.members.size() << " concepts, radius " << concepts.radius << '\n';
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    const FeatureSet set = load_features(cfg);
    const auto model = load_model(cfg, set);
    const LabelMasks labels = load_labels(cfg, set);
    SweepConfig sweep;
    sweep.nystrom = cfg.spectral;
    sweep.clusters = cfg.clusters;
    sweep.matching = cfg.matching;
    sweep.dataset = cfg.dataset;
    const auto rows = layer_sweep(set, model ? &*model : nullptr, labels, sweep);
    fs::create_directories(cfg.paths.output);
    write_sweep_csv(rows, cfg.paths.output / "sweep.csv");
    write_provenance(cfg, "eval");
    for (const auto& r : rows) out << r.model << " layer " << r.layer << " mIoU " << r.miou << '\n';
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"AlignedCut: channel alignment and spectral concept discovery"};
    app.require_subcommand(1);
    std::string config_file;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string output;
    std::vector<std::string> sets;
    app.add_option("--config", config_file, "INI-style config file");
    app.add_option("--seed", seed, "overrides run.seed");
    app.add_option("--threads", threads, "OpenMP threads (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);
    app.add_option("--output", output, "overrides paths.output");
    app.add_option("--set", sets, "section.key=value override, repeatable");
    app.fallthrough();

    std::string command;
    for (const char* name : {"validate", "train", "cluster", "color", "analyze", "eval"}) {
        app.add_subcommand(name)->callback([&command, name] { command = name; });
    }
    app.get_subcommand("validate")->description("check every configured input");
    app.get_subcommand("train")->description("learn the alignment transforms and brain encoder");
    app.get_subcommand("cluster")->description("Nystrom normalized cut over the selected nodes");
    app.get_subcommand("color")->description("spectral t-SNE coloring and per-image PPMs");
    app.get_subcommand("analyze")->description("concepts, statistics and transition matrix");
    app.get_subcommand("eval")->description("per-layer segmentation sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        std::map<std::string, std::string> overrides;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
            overrides[s.substr(0, eq)] = s.substr(eq + 1);
        }
        if (seed) overrides["run.seed"] = std::to_string(*seed);
        if (!output.empty()) overrides["paths.output"] = output;
        const RunConfig cfg = load_config(config_file, overrides);
        if (threads > 0) omp_set_num_threads(threads);

        if (command == "validate") return cmd_validate(cfg, out);
        if (command == "train") return cmd_train(cfg, out);
        if (command == "cluster") return cmd_cluster(cfg, out);
        if (command == "color") return cmd_color(cfg, out);
        if (command == "analyze") return cmd_analyze(cfg, out);
        return cmd_eval(cfg, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace alignedcut::cli

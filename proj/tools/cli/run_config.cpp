#include "run_config.hpp"

#include "alignedcut/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <functional>

namespace alignedcut::cli {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

struct Key {
    std::string default_value;
    Setter set;
};

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": cannot parse '" + text + "'");
    return value;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
    return parse_number<std::size_t>(key, text);
}

double parse_real(const std::string& key, const std::string& text) { return parse_number<double>(key, text); }

template <typename E>
E parse_choice(const std::string& key, const std::string& text, const std::map<std::string, E>& choices) {
    const auto it = choices.find(text);
    if (it == choices.end()) {
        std::string allowed;
        for (const auto& [name, value] : choices) allowed += (allowed.empty() ? "" : ", ") + name;
        throw ConfigError(key + ": '" + text + "' is not one of " + allowed);
    }
    return it->second;
}

const std::map<std::string, Key>& keys() {
    static const std::map<std::string, Key> table = {
        {"run.seed", {"0", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); }}},
        {"paths.features", {"", [](RunConfig& c, const std::string& v) { c.paths.features = v; }}},
        {"paths.brain", {"", [](RunConfig& c, const std::string& v) { c.paths.brain = v; }}},
        {"paths.rois", {"", [](RunConfig& c, const std::string& v) { c.paths.rois = v; }}},
        {"paths.labels", {"", [](RunConfig& c, const std::string& v) { c.paths.labels = v; }}},
        {"paths.model", {"", [](RunConfig& c, const std::string& v) { c.paths.model = v; }}},
        {"paths.output", {"alignedcut_out", [](RunConfig& c, const std::string& v) { c.paths.output = v; }}},

        {"align.universal_dim", {"768", [](RunConfig& c, const std::string& v) { c.universal_dim = parse_count("align.universal_dim", v); }}},
        {"align.lambda_eigen", {"0", [](RunConfig& c, const std::string& v) { c.train.lambda_eigen = parse_real("align.lambda_eigen", v); }}},
        {"align.eigen_nodes", {"100", [](RunConfig& c, const std::string& v) { c.train.eigen_nodes = parse_count("align.eigen_nodes", v); }}},
        {"align.eigen_top", {"6", [](RunConfig& c, const std::string& v) { c.train.eigen_top = parse_count("align.eigen_top", v); }}},
        {"align.minibatch_images", {"32", [](RunConfig& c, const std::string& v) { c.train.minibatch_images = parse_count("align.minibatch_images", v); }}},
        {"align.learning_rate", {"0.001", [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_real("align.learning_rate", v); }}},
        {"align.momentum", {"0.9", [](RunConfig& c, const std::string& v) { c.train.momentum = parse_real("align.momentum", v); }}},
        {"align.steps", {"10000", [](RunConfig& c, const std::string& v) { c.train.steps = parse_count("align.steps", v); }}},
        {"align.log_every", {"1", [](RunConfig& c, const std::string& v) { c.train.log_every = parse_count("align.log_every", v); }}},

        {"spectral.sample_count", {"50000", [](RunConfig& c, const std::string& v) { c.spectral.sample_count = parse_count("spectral.sample_count", v); }}},
        {"spectral.knn", {"100", [](RunConfig& c, const std::string& v) { c.spectral.knn = parse_count("spectral.knn", v); }}},
        {"spectral.eigen_count", {"20", [](RunConfig& c, const std::string& v) { c.spectral.eigen_count = parse_count("spectral.eigen_count", v); }}},
        {"spectral.block_rows", {"8192", [](RunConfig& c, const std::string& v) { c.spectral.block_rows = parse_count("spectral.block_rows", v); }}},
        {"spectral.mode", {"dense", [](RunConfig& c, const std::string& v) {
             c.spectral.mode = parse_choice<EigenMode>("spectral.mode", v, {{"dense", EigenMode::dense}, {"iterative", EigenMode::iterative}});
         }}},
        {"spectral.entries", {"all", [](RunConfig& c, const std::string& v) { c.entries = v; }}},

        {"embed.out_dim", {"3", [](RunConfig& c, const std::string& v) { c.tsne.out_dim = parse_count("embed.out_dim", v); }}},
        {"embed.perplexity", {"30", [](RunConfig& c, const std::string& v) { c.tsne.perplexity = parse_real("embed.perplexity", v); }}},
        {"embed.iterations", {"1000", [](RunConfig& c, const std::string& v) { c.tsne.iterations = parse_count("embed.iterations", v); }}},
        {"embed.early_exaggeration", {"12", [](RunConfig& c, const std::string& v) { c.tsne.early_exaggeration = parse_real("embed.early_exaggeration", v); }}},
        {"embed.exaggeration_iterations", {"250", [](RunConfig& c, const std::string& v) { c.tsne.exaggeration_iterations = parse_count("embed.exaggeration_iterations", v); }}},
        {"embed.learning_rate", {"200", [](RunConfig& c, const std::string& v) { c.tsne.learning_rate = parse_real("embed.learning_rate", v); }}},
        {"embed.sample_count", {"1000", [](RunConfig& c, const std::string& v) { c.embed_samples = parse_count("embed.sample_count", v); }}},
        {"embed.knn", {"10", [](RunConfig& c, const std::string& v) { c.embed_knn = parse_count("embed.knn", v); }}},

        {"analysis.concepts", {"6", [](RunConfig& c, const std::string& v) { c.concepts = parse_count("analysis.concepts", v); }}},
        {"analysis.radius_fraction", {"0.1", [](RunConfig& c, const std::string& v) { c.radius_fraction = parse_real("analysis.radius_fraction", v); }}},
        {"analysis.layer_a", {"", [](RunConfig& c, const std::string& v) { c.layer_a = v; }}},
        {"analysis.layer_b", {"", [](RunConfig& c, const std::string& v) { c.layer_b = v; }}},
        {"analysis.filter", {"all", [](RunConfig& c, const std::string& v) {
             c.filter = parse_choice<PixelFilter>("analysis.filter", v,
                                                  {{"all", PixelFilter::all}, {"foreground", PixelFilter::foreground}, {"background", PixelFilter::background}});
         }}},
        {"analysis.denominator", {"landed", [](RunConfig& c, const std::string& v) {
             c.denominator = parse_choice<TransitionDenominator>(
                 "analysis.denominator", v, {{"landed", TransitionDenominator::landed}, {"all_members", TransitionDenominator::all_members}});
         }}},

        {"eval.n_clusters", {"2", [](RunConfig& c, const std::string& v) { c.clusters = parse_count("eval.n_clusters", v); }}},
        {"eval.matching", {"majority", [](RunConfig& c, const std::string& v) {
             c.matching = parse_choice<Matching>("eval.matching", v, {{"majority", Matching::majority}, {"hungarian", Matching::hungarian}});
         }}},
        {"eval.dataset", {"synthetic", [](RunConfig& c, const std::string& v) { c.dataset = v; }}},
    };
    return table;
}

std::string unquote(std::string v) {
    const auto first = v.find_first_not_of(" \t");
    const auto last = v.find_last_not_of(" \t");
    v = first == std::string::npos ? std::string{} : v.substr(first, last - first + 1);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
    return v;
}

}  // namespace

const std::map<std::string, std::string>& default_values() {
    static const std::map<std::string, std::string> defaults = [] {
        std::map<std::string, std::string> out;
        for (const auto& [name, key] : keys()) out[name] = key.default_value;
        return out;
    }();
    return defaults;
}

std::string RunConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : values) {
        if (k == "paths.output") continue;
        for (const char ch : k + "=" + v + "\n") {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig load_config(const std::filesystem::path& file, const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> values = default_values();
    const auto assign = [&](const std::string& name, const std::string& value, const std::string& origin) {
        if (!keys().contains(name)) throw ConfigError("unknown config key '" + name + "' in " + origin);
        values[name] = unquote(value);
    };

    if (!file.empty()) {
        if (!std::filesystem::exists(file)) throw ConfigError("--config: file not found: " + file.string());
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::ini_parser::read_ini(file.string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError("cannot parse " + file.string() + ": " + e.message() + " (line " +
                              std::to_string(e.line()) + ")");
        }
        for (const auto& [section, body] : tree) {
            if (body.empty()) throw ConfigError("config key '" + section + "' must live in a [section]");
            for (const auto& [key, leaf] : body) assign(section + "." + key, leaf.data(), file.string());
        }
    }
    for (const auto& [name, value] : overrides) assign(name, value, "command-line overrides");

    RunConfig cfg;
    for (const auto& [name, value] : values) keys().at(name).set(cfg, value);
    cfg.values = std::move(values);
    cfg.train.seed = cfg.seed;
    cfg.spectral.seed = cfg.seed;
    cfg.tsne.seed = cfg.seed;
    if (cfg.radius_fraction <= 0.0) throw ConfigError("analysis.radius_fraction must be positive");
    if (cfg.concepts == 0) throw ConfigError("analysis.concepts must be positive");
    if (cfg.universal_dim == 0) throw ConfigError("align.universal_dim must be positive");
    if (cfg.clusters < 2) throw ConfigError("eval.n_clusters must be at least 2");
    if (cfg.embed_knn == 0) throw ConfigError("embed.knn must be positive");
    return cfg;
}

}  // namespace alignedcut::cli

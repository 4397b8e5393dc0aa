#include "alignedcut/analysis.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/kernels.hpp"
#include "alignedcut/rng.hpp"
#include "alignedcut/tensor_file.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace alignedcut {

std::vector<std::size_t> farthest_point_sample(const RowMatrixXd& points, std::size_t k, std::uint64_t seed,
                                               std::optional<std::size_t> first) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (k > n) throw ConfigError("cannot sample " + std::to_string(k) + " centers from " + std::to_string(n) + " points");
    if (k == 0) return {};
    std::size_t start = first.value_or(0);
    if (!first) {
        SplitMix64 rng(seed);
        start = static_cast<std::size_t>(rng.below(n));
    }
    if (start >= n) throw ConfigError("first FPS index out of range");

    std::vector<std::size_t> chosen{start};
    std::vector<double> nearest(n);
    const auto update = [&](std::size_t c) {
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(c))).squaredNorm();
            nearest[i] = chosen.size() == 1 ? d : std::min(nearest[i], d);
        }
    };
    update(start);
    std::vector<bool> taken(n, false);
    taken[start] = true;
    while (chosen.size() < k) {
        std::size_t arg = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i] && (arg == n || nearest[i] > nearest[arg])) arg = i;
        }
        chosen.push_back(arg);
        taken[arg] = true;
        update(arg);
    }
    return chosen;
}

double default_radius(const RowMatrixXd& points, double fraction) {
    if (points.rows() == 0) return 0.0;
    const VectorXd extent = points.colwise().maxCoeff() - points.colwise().minCoeff();
    return fraction * extent.norm();
}

ConceptSet build_concepts(const RowMatrixXd& points, std::span<const std::size_t> center_indices, double radius) {
    if (!(radius >= 0.0)) throw ConfigError("concept radius must be nonnegative");
    ConceptSet set;
    set.radius = radius;
    set.centers.resize(static_cast<Eigen::Index>(center_indices.size()), points.cols());
    set.members.resize(center_indices.size());
    const double r2 = radius * radius;
    for (std::size_t c = 0; c < center_indices.size(); ++c) {
        if (center_indices[c] >= static_cast<std::size_t>(points.rows())) throw ConfigError("center index out of range");
        const auto center = points.row(static_cast<Eigen::Index>(center_indices[c]));
        set.centers.row(static_cast<Eigen::Index>(c)) = center;
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            if ((points.row(i) - center).squaredNorm() <= r2) set.members[c].push_back(static_cast<std::size_t>(i));
        }
    }
    return set;
}

ConceptStats concept_stats(const ConceptSet& concepts, const RowMatrixXd& activations) {
    const auto k = static_cast<Eigen::Index>(concepts.members.size());
    ConceptStats stats;
    stats.mean = RowMatrixXd::Zero(k, activations.cols());
    stats.stddev = RowMatrixXd::Zero(k, activations.cols());
    stats.empty.assign(concepts.members.size(), false);
    for (Eigen::Index c = 0; c < k; ++c) {
        const auto& members = concepts.members[static_cast<std::size_t>(c)];
        if (members.empty()) {
            stats.empty[static_cast<std::size_t>(c)] = true;
            continue;
        }
        for (auto i : members) {
            if (i >= static_cast<std::size_t>(activations.rows())) throw ConfigError("concept member id out of range");
            stats.mean.row(c) += activations.row(static_cast<Eigen::Index>(i));
        }
        stats.mean.row(c) /= static_cast<double>(members.size());
        for (auto i : members) {
            stats.stddev.row(c) += (activations.row(static_cast<Eigen::Index>(i)) - stats.mean.row(c)).array().square().matrix();
        }
        stats.stddev.row(c) = (stats.stddev.row(c) / static_cast<double>(members.size())).array().sqrt().matrix();
    }
    return stats;
}

std::map<std::string, double> roi_mean_activation(std::span<const double> activation,
                                                  const std::map<std::string, std::vector<std::size_t>>& rois,
                                                  std::span<const std::string> names) {
    std::map<std::string, double> out;
    for (const auto& name : names) {
        std::vector<std::size_t> voxels;
        if (name == "all") {
            voxels.resize(activation.size());
            for (std::size_t v = 0; v < voxels.size(); ++v) voxels[v] = v;
        } else {
            const auto it = rois.find(name);
            if (it == rois.end()) throw ConfigError("unknown ROI '" + name + "'");
            voxels = it->second;
        }
        if (voxels.empty()) throw ConfigError("ROI '" + name + "' is empty");
        double sum = 0.0;
        for (auto v : voxels) {
            if (v >= activation.size()) throw ConfigError("ROI '" + name + "' exceeds the activation length");
            sum += activation[v];
        }
        out[name] = sum / static_cast<double>(voxels.size());
    }
    return out;
}

VectorXd pixel_similarity_heatmap(const RowMatrixXd& aligned, std::size_t reference) {
    if (reference >= static_cast<std::size_t>(aligned.rows())) throw ConfigError("reference node out of range");
    const auto ref = static_cast<Eigen::Index>(reference);
    if (aligned.row(ref).squaredNorm() == 0.0) throw DataError("reference node has a zero feature vector");
    const RowMatrixXd r = aligned.row(ref);
    VectorXd out = kernels::omp::cosine_rows(aligned, r, nullptr).col(0);
    out[ref] = 1.0;
    return out;
}

std::vector<NodeClass> node_classes(const LabelMasks& labels) {
    std::vector<NodeClass> out(labels.masks.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto v = labels.masks[i];
        out[i] = v == labels.ignore_index ? NodeClass::ignored : (v == 0 ? NodeClass::background : NodeClass::foreground);
    }
    return out;
}

namespace {

bool passes(PixelFilter filter, NodeClass c) {
    switch (filter) {
        case PixelFilter::all: return true;
        case PixelFilter::foreground: return c == NodeClass::foreground;
        case PixelFilter::background: return c == NodeClass::background;
    }
    return false;
}

}  // namespace

TransitionMatrix transition_matrix(const RowMatrixXd& coords_a, const RowMatrixXd& coords_b,
                                   const ConceptSet& concepts_a, const ConceptSet& concepts_b, PixelFilter filter,
                                   std::span<const NodeClass> classes, TransitionDenominator denominator) {
    if (coords_a.rows() != coords_b.rows() || static_cast<std::size_t>(coords_a.rows()) != classes.size()) {
        throw ConfigError("transition layers do not share one node universe");
    }
    if (concepts_b.centers.cols() != coords_b.cols()) throw ConfigError("target concepts live in another space");
    const auto ka = static_cast<Eigen::Index>(concepts_a.members.size());
    const auto kb = concepts_b.centers.rows();
    TransitionMatrix t;
    t.filter = filter;
    t.counts = RowMatrixXd::Zero(ka, kb);
    t.probs = RowMatrixXd::Zero(ka, kb);
    t.denominators = VectorXd::Zero(ka);
    t.empty_rows.assign(static_cast<std::size_t>(ka), false);
    const double r2 = concepts_b.radius * concepts_b.radius;

    for (Eigen::Index a = 0; a < ka; ++a) {
        double landed = 0.0;
        double members = 0.0;
        for (auto node : concepts_a.members[static_cast<std::size_t>(a)]) {
            if (node >= classes.size()) throw ConfigError("concept member id out of range");
            if (!passes(filter, classes[node])) continue;
            members += 1.0;
            Eigen::Index best = -1;
            double best_d = 0.0;
            for (Eigen::Index b = 0; b < kb; ++b) {
                const double d = (coords_b.row(static_cast<Eigen::Index>(node)) - concepts_b.centers.row(b)).squaredNorm();
                if (d <= r2 && (best < 0 || d < best_d)) {
                    best = b;
                    best_d = d;
                }
            }
            if (best >= 0) {
                t.counts(a, best) += 1.0;
                landed += 1.0;
            }
        }
        const double denom = denominator == TransitionDenominator::landed ? landed : members;
        t.denominators[a] = denom;
        if (denom == 0.0) {
            t.empty_rows[static_cast<std::size_t>(a)] = true;
        } else {
            t.probs.row(a) = t.counts.row(a) / denom;
        }
    }
    return t;
}

void write_concepts_json(const ConceptSet& concepts, const ConceptStats& stats, std::span<const std::size_t> centers,
                         const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["radius"] = concepts.radius;
    doc["concepts"] = nlohmann::json::array();
    for (std::size_t c = 0; c < concepts.members.size(); ++c) {
        const auto row = concepts.centers.row(static_cast<Eigen::Index>(c));
        nlohmann::json jc;
        jc["center_node"] = c < centers.size() ? nlohmann::json(centers[c]) : nlohmann::json(nullptr);
        jc["center"] = std::vector<double>(row.data(), row.data() + row.size());
        jc["member_count"] = concepts.members[c].size();
        jc["members"] = concepts.members[c];
        jc["empty"] = static_cast<bool>(stats.empty.at(c));
        doc["concepts"].push_back(std::move(jc));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

void write_concept_stats_csv(const ConceptStats& stats, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(9);
    out << "concept,channel,mean,std,abs_mean\n";
    for (Eigen::Index c = 0; c < stats.mean.rows(); ++c) {
        for (Eigen::Index ch = 0; ch < stats.mean.cols(); ++ch) {
            out << c << ',' << ch << ',' << stats.mean(c, ch) << ',' << stats.stddev(c, ch) << ','
                << std::abs(stats.mean(c, ch)) << '\n';
        }
    }
}

const char* to_string(PixelFilter filter) {
    switch (filter) {
        case PixelFilter::all: return "all";
        case PixelFilter::foreground: return "foreground";
        case PixelFilter::background: return "background";
    }
    return "all";
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    auto p = stem;
    p += suffix;
    return p;
}

void write_matrix_f32(const RowMatrixXd& m, const std::filesystem::path& path) {
    Tensor<float> t;
    t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    const RowMatrixXf f = m.cast<float>();
    t.data.assign(f.data(), f.data() + f.size());
    write_tensor(path, t);
}

RowMatrixXd read_matrix_f32(const std::filesystem::path& path) {
    const auto t = read_tensor<float>(path);
    if (t.shape.size() != 2) throw IntegrityError(path.string() + " must be rank 2");
    return Eigen::Map<const RowMatrixXf>(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                                         static_cast<Eigen::Index>(t.shape[1]))
        .cast<double>();
}

}  // namespace

void write_concept_activations(const ConceptStats& stats, const std::filesystem::path& stem) {
    write_matrix_f32(stats.mean, with_suffix(stem, "_mean.acfs"));
    write_matrix_f32(stats.stddev, with_suffix(stem, "_std.acfs"));
}

ConceptStats read_concept_activations(const std::filesystem::path& stem) {
    ConceptStats stats;
    stats.mean = read_matrix_f32(with_suffix(stem, "_mean.acfs"));
    stats.stddev = read_matrix_f32(with_suffix(stem, "_std.acfs"));
    if (stats.mean.rows() != stats.stddev.rows() || stats.mean.cols() != stats.stddev.cols()) {
        throw IntegrityError("concept mean and std containers disagree in shape");
    }
    stats.empty.assign(static_cast<std::size_t>(stats.mean.rows()), false);
    return stats;
}

void write_transition_json(const TransitionMatrix& matrix, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["filter"] = to_string(matrix.filter);
    doc["source_count"] = matrix.probs.rows();
    doc["target_count"] = matrix.probs.cols();
    doc["probs"] = nlohmann::json::array();
    doc["counts"] = nlohmann::json::array();
    for (Eigen::Index a = 0; a < matrix.probs.rows(); ++a) {
        const RowMatrixXd p = matrix.probs.row(a);
        const RowMatrixXd c = matrix.counts.row(a);
        doc["probs"].push_back(std::vector<double>(p.data(), p.data() + p.size()));
        doc["counts"].push_back(std::vector<double>(c.data(), c.data() + c.size()));
    }
    doc["denominators"] = std::vector<double>(matrix.denominators.data(),
                                              matrix.denominators.data() + matrix.denominators.size());
    std::vector<bool> empty(matrix.empty_rows.begin(), matrix.empty_rows.end());
    doc["empty_rows"] = empty;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

void write_transition_csv(const TransitionMatrix& matrix, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(9);
    const char* filter = to_string(matrix.filter);
    out << "filter,source,target,probability,count,denominator,empty_row\n";
    for (Eigen::Index a = 0; a < matrix.probs.rows(); ++a) {
        for (Eigen::Index b = 0; b < matrix.probs.cols(); ++b) {
            out << filter << ',' << a << ',' << b << ',' << matrix.probs(a, b) << ',' << matrix.counts(a, b) << ','
                << matrix.denominators[a] << ',' << (matrix.empty_rows[static_cast<std::size_t>(a)] ? 1 : 0) << '\n';
        }
    }
}

}  // namespace alignedcut

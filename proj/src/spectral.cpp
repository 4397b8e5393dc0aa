#include "alignedcut/spectral.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/kernels.hpp"
#include "alignedcut/rng.hpp"
#include "alignedcut/tensor_file.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

namespace alignedcut {

AffinityMatrix build_affinity(const RowMatrixXd& features) {
    if (features.rows() < 2) throw ConfigError("affinity needs at least two nodes");
    if (!features.allFinite()) throw DataError("affinity features contain non-finite values");
    AffinityMatrix a;
    a.values = kernels::omp::affinity(features);
    a.degree = a.values.rowwise().sum();
    return a;
}

RowMatrixXd normalized_affinity(const AffinityMatrix& a) {
    const VectorXd inv_sqrt = a.degree.array().rsqrt();
    RowMatrixXd n = inv_sqrt.asDiagonal() * a.values * inv_sqrt.asDiagonal();
    // Exact symmetry; the two diagonal scalings can differ in the last bit.
    return 0.5 * (n + n.transpose());
}

EigenBasis ncut_eigs(const AffinityMatrix& a, std::size_t c, EigenMode mode, const LanczosOptions& options) {
    return eigh_top_c(normalized_affinity(a), c, mode, options);
}

namespace {

// Floyd's algorithm: exactly `count` draws, O(count) memory.
std::vector<NodeId> floyd_sample(std::uint64_t total, std::uint64_t count, SplitMix64& rng) {
    std::unordered_set<NodeId> chosen;
    chosen.reserve(static_cast<std::size_t>(count) * 2);
    std::vector<NodeId> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t j = total - count; j < total; ++j) {
        const NodeId t = rng.below(j + 1);
        const NodeId pick = chosen.contains(t) ? j : t;
        chosen.insert(pick);
        out.push_back(pick);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<NodeId> subsample_nodes(std::uint64_t total, std::uint64_t count, std::uint64_t seed) {
    if (count == 0) throw ConfigError("subsample size must be positive");
    if (count > total) {
        throw ConfigError("subsample size " + std::to_string(count) + " exceeds node count " + std::to_string(total));
    }
    if (count == total) {
        std::vector<NodeId> all(static_cast<std::size_t>(total));
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    SplitMix64 rng(seed);
    return floyd_sample(total, count, rng);
}

std::vector<NodeId> subsample_nodes_stratified(std::span<const std::uint32_t> groups, std::uint64_t count,
                                               std::uint64_t seed) {
    const std::uint64_t total = groups.size();
    if (count == 0) throw ConfigError("subsample size must be positive");
    if (count > total) {
        throw ConfigError("subsample size " + std::to_string(count) + " exceeds node count " + std::to_string(total));
    }
    std::map<std::uint32_t, std::vector<NodeId>> members;
    for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);

    // Proportional allocation, remainders handed out largest first (ties to the lower group).
    struct Share {
        std::uint32_t group;
        std::uint64_t base;
        double remainder;
    };
    std::vector<Share> shares;
    std::uint64_t assigned = 0;
    for (const auto& [g, ids] : members) {
        const double exact = static_cast<double>(count) * static_cast<double>(ids.size()) / static_cast<double>(total);
        const auto base = static_cast<std::uint64_t>(std::floor(exact));
        shares.push_back({g, base, exact - static_cast<double>(base)});
        assigned += base;
    }
    std::vector<std::size_t> order(shares.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return shares[a].remainder > shares[b].remainder; });
    for (std::size_t i = 0; assigned < count; i = (i + 1) % order.size()) {
        auto& s = shares[order[i]];
        if (s.base < members[s.group].size()) {
            ++s.base;
            ++assigned;
        }
    }

    std::vector<NodeId> out;
    for (const auto& s : shares) {
        if (s.base == 0) continue;
        const auto& ids = members[s.group];
        SplitMix64 rng(mix_seed(seed, s.group));
        for (NodeId local : floyd_sample(ids.size(), s.base, rng)) out.push_back(ids[local]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

RowMatrixXd propagate_eigenvectors(const RowMatrixXd& full_features, const RowMatrixXd& sub_features,
                                   const EigenBasis& sub_basis, std::size_t k, std::size_t block_rows) {
    const auto m = static_cast<std::size_t>(sub_features.rows());
    if (sub_basis.vectors.rows() != sub_features.rows()) {
        throw ConfigError("subsample eigenbasis has " + std::to_string(sub_basis.vectors.rows()) + " rows, expected " +
                          std::to_string(m));
    }
    if (full_features.cols() != sub_features.cols()) throw ConfigError("feature widths differ");
    if (k == 0 || k > m) throw ConfigError("KNN size " + std::to_string(k) + " must be in [1, " + std::to_string(m) + "]");
    if (!full_features.allFinite()) throw DataError("propagation features contain non-finite values");
    return kernels::omp::knn_propagate(full_features, sub_features, sub_basis.vectors, k, block_rows);
}

void validate_nystrom(std::uint64_t total, const NystromOptions& o) {
    if (o.sample_count < 2) throw ConfigError("spectral.sample_count must be at least 2");
    if (o.sample_count > total) {
        throw ConfigError("spectral.sample_count = " + std::to_string(o.sample_count) + " exceeds the node count " +
                          std::to_string(total));
    }
    if (o.knn == 0 || o.knn > o.sample_count) throw ConfigError("spectral.knn must be in [1, sample_count]");
    if (o.eigen_count == 0 || o.eigen_count > o.sample_count) throw ConfigError("spectral.eigen_count must be in [1, sample_count]");
    if (o.block_rows == 0) throw ConfigError("spectral.block_rows must be positive");
    if (o.strategy == SubsampleStrategy::stratified && o.strata.size() != total) {
        throw ConfigError("stratified subsampling needs one stratum per node");
    }
}

NystromResult nystrom_ncut(const RowMatrixXd& full_features, const NystromOptions& options) {
    const auto total = static_cast<std::uint64_t>(full_features.rows());
    validate_nystrom(total, options);

    NystromResult result;
    result.knn_k = options.knn;
    result.seed = options.seed;
    result.subsample_indices = options.strategy == SubsampleStrategy::uniform
                                   ? subsample_nodes(total, options.sample_count, options.seed)
                                   : subsample_nodes_stratified(options.strata, options.sample_count, options.seed);

    RowMatrixXd sub(static_cast<Eigen::Index>(options.sample_count), full_features.cols());
    for (std::size_t i = 0; i < result.subsample_indices.size(); ++i) {
        sub.row(static_cast<Eigen::Index>(i)) = full_features.row(static_cast<Eigen::Index>(result.subsample_indices[i]));
    }
    LanczosOptions lanczos;
    lanczos.seed = options.seed;
    result.sub_basis = ncut_eigs(build_affinity(sub), options.eigen_count, options.mode, lanczos);
    result.full_approx = propagate_eigenvectors(full_features, sub, result.sub_basis, options.knn, options.block_rows);
    return result;
}

void write_nystrom_result(const NystromResult& result, const std::filesystem::path& stem) {
    Tensor<float> t;
    t.shape = {static_cast<std::uint64_t>(result.full_approx.rows()),
               static_cast<std::uint64_t>(result.full_approx.cols())};
    const RowMatrixXf f = result.full_approx.cast<float>();
    t.data.assign(f.data(), f.data() + f.size());
    auto tensor_path = stem;
    tensor_path += ".acfs";
    write_tensor(tensor_path, t);

    nlohmann::json doc;
    doc["M"] = result.full_approx.rows();
    doc["m"] = result.subsample_indices.size();
    doc["K"] = result.knn_k;
    doc["C"] = result.full_approx.cols();
    doc["seed"] = result.seed;
    doc["subsample_indices"] = result.subsample_indices;
    doc["eigenvalues"] = std::vector<double>(result.sub_basis.values.data(),
                                             result.sub_basis.values.data() + result.sub_basis.values.size());
    auto json_path = stem;
    json_path += ".json";
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw Error("cannot write " + json_path.string());
    out << doc.dump(2) << '\n';
}

NystromResult read_nystrom_result(const std::filesystem::path& stem) {
    auto tensor_path = stem;
    tensor_path += ".acfs";
    auto json_path = stem;
    json_path += ".json";
    const auto t = read_tensor<float>(tensor_path);
    if (t.shape.size() != 2) throw IntegrityError("eigenvector container must be rank 2");

    std::ifstream in(json_path);
    if (!in) throw Error("cannot open " + json_path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("malformed Nystrom sidecar: ") + ex.what());
    }
    NystromResult r;
    try {
        r.knn_k = doc.at("K").get<std::size_t>();
        r.seed = doc.at("seed").get<std::uint64_t>();
        r.subsample_indices = doc.at("subsample_indices").get<std::vector<NodeId>>();
        const auto values = doc.at("eigenvalues").get<std::vector<double>>();
        r.sub_basis.values = Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
        if (doc.at("M").get<std::uint64_t>() != t.shape[0] || doc.at("C").get<std::uint64_t>() != t.shape[1]) {
            throw IntegrityError("Nystrom sidecar shape disagrees with the eigenvector container");
        }
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("Nystrom sidecar: ") + ex.what());
    }
    r.full_approx = Eigen::Map<const RowMatrixXf>(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                                                  static_cast<Eigen::Index>(t.shape[1]))
                        .cast<double>();
    return r;
}

}  // namespace alignedcut

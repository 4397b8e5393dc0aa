#include "alignedcut/embed.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/kernels.hpp"
#include "alignedcut/rng.hpp"
#include "alignedcut/tensor_file.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

namespace alignedcut {

void TsneConfig::validate(std::size_t points) const {
    if (out_dim != 2 && out_dim != 3) throw ConfigError("embed.out_dim must be 2 or 3");
    if (points < 4) throw ConfigError("t-SNE needs at least 4 points");
    if (!(perplexity > 0.0)) throw ConfigError("embed.perplexity must be positive");
    if (!(perplexity < (static_cast<double>(points) - 1.0) / 3.0)) {
        throw ConfigError("embed.perplexity " + std::to_string(perplexity) + " too large for " +
                          std::to_string(points) + " points (needs < (n - 1) / 3)");
    }
    if (iterations == 0) throw ConfigError("embed.iterations must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("embed.learning_rate must be positive");
    if (!(early_exaggeration >= 1.0)) throw ConfigError("embed.early_exaggeration must be >= 1");
}

namespace {

// `names[i]` is the caller-facing index of row i in error messages.
RowMatrixXd conditional_probabilities(const RowMatrixXd& points, double perplexity,
                                      std::span<const Eigen::Index> names) {
    const auto n = points.rows();
    RowMatrixXd dist = kernels::omp::squared_distances(points);
    const double max_d = dist.maxCoeff();
    if (max_d > 0.0) dist /= max_d;

    constexpr double kTolerance = 1e-5;
    constexpr int kMaxSteps = 50;
    constexpr double kFailure = 1e-2;
    const double target = std::log(perplexity);
    RowMatrixXd p = RowMatrixXd::Zero(n, n);

    for (Eigen::Index i = 0; i < n; ++i) {
        double d_min = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) d_min = std::min(d_min, dist(i, j));
        }
        double beta = 1.0;
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        double diff = 0.0;
        for (int step = 0; step < kMaxSteps; ++step) {
            double sum = 0.0;
            double weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                const double shifted = dist(i, j) - d_min;
                const double v = std::exp(-beta * shifted);
                p(i, j) = v;
                sum += v;
                weighted += shifted * v;
            }
            const double entropy = std::log(sum) + beta * weighted / sum;
            diff = entropy - target;
            if (std::abs(diff) < kTolerance) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = std::isinf(lo) ? beta * 0.5 : 0.5 * (beta + lo);
            }
        }
        // Ties at a nonzero distance fix the row regardless of bandwidth; only exact duplicates are an error.
        if (std::abs(diff) > kFailure && d_min == 0.0) {
            throw NumericError("t-SNE bandwidth search failed for point " + std::to_string(names[static_cast<std::size_t>(i)]) +
                               ": perplexity unreachable (entropy off by " + std::to_string(diff) + " nats)");
        }
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

std::vector<Eigen::Index> identity_order(Eigen::Index n) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    return order;
}

}  // namespace

RowMatrixXd tsne_conditional_probabilities(const RowMatrixXd& points, double perplexity) {
    return conditional_probabilities(points, perplexity, identity_order(points.rows()));
}

namespace {

std::uint64_t hash_row(const RowMatrixXd& points, Eigen::Index row) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (Eigen::Index c = 0; c < points.cols(); ++c) {
        const auto bits = std::bit_cast<std::uint64_t>(points(row, c) == 0.0 ? 0.0 : points(row, c));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xFFU;
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

// Runs on rows already in canonical order.
TsneResult tsne_canonical(const RowMatrixXd& points, const TsneConfig& cfg, std::span<const Eigen::Index> names) {
    const auto n = points.rows();

    const RowMatrixXd cond = conditional_probabilities(points, cfg.perplexity, names);
    RowMatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
    p = p.cwiseMax(1e-12);
    p.diagonal().setZero();
    p /= p.sum();

    const auto dim = static_cast<Eigen::Index>(cfg.out_dim);
    RowMatrixXd y(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        SplitMix64 rng(mix_seed(cfg.seed, hash_row(points, i)));
        for (Eigen::Index d = 0; d < dim; ++d) y(i, d) = 1e-4 * rng.normal();
    }

    TsneResult result;
    result.kl_initial = kernels::omp::tsne_gradient(p, y, 1.0).kl;

    RowMatrixXd velocity = RowMatrixXd::Zero(n, dim);
    RowMatrixXd gains = RowMatrixXd::Ones(n, dim);
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        const bool early = iter < cfg.exaggeration_iterations;
        const double exaggeration = early ? cfg.early_exaggeration : 1.0;
        const double momentum = early ? 0.5 : 0.8;
        const auto step = kernels::omp::tsne_gradient(p, y, exaggeration);
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double g = step.gradient.data()[i];
            double& gain = gains.data()[i];
            double& v = velocity.data()[i];
            gain = (g > 0.0) != (v > 0.0) ? gain + 0.2 : gain * 0.8;
            gain = std::max(gain, 0.01);
            v = momentum * v - cfg.learning_rate * gain * g;
            y.data()[i] += v;
        }
        y.rowwise() -= y.colwise().mean();
    }
    result.kl = kernels::omp::tsne_gradient(p, y, 1.0).kl;
    if (!std::isfinite(result.kl)) throw NumericError("t-SNE diverged (non-finite KL)");
    result.coords = std::move(y);
    return result;
}

}  // namespace

TsneResult tsne(const RowMatrixXd& points, const TsneConfig& cfg) {
    const auto n = points.rows();
    cfg.validate(static_cast<std::size_t>(n));
    if (!points.allFinite()) throw DataError("t-SNE input contains non-finite values");

    // Lexicographic row order fixes every summation order, so a permuted input
    // yields bit-identical coordinates permuted the same way.
    std::vector<Eigen::Index> order = identity_order(n);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index c = 0; c < points.cols(); ++c) {
            if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
        }
        return false;
    });
    RowMatrixXd sorted(n, points.cols());
    for (Eigen::Index i = 0; i < n; ++i) sorted.row(i) = points.row(order[static_cast<std::size_t>(i)]);

    TsneResult result = tsne_canonical(sorted, cfg, order);
    RowMatrixXd coords(n, result.coords.cols());
    for (Eigen::Index i = 0; i < n; ++i) coords.row(order[static_cast<std::size_t>(i)]) = result.coords.row(i);
    result.coords = std::move(coords);
    return result;
}

namespace {

double percentile(const std::vector<double>& sorted_values, double q) {
    const double pos = q * static_cast<double>(sorted_values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted_values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

}  // namespace

std::vector<std::uint8_t> rgb_cube(const RowMatrixXd& coords) {
    if (coords.cols() != 3) throw ConfigError("RGB cube coloring needs 3 columns");
    if (!coords.allFinite()) throw DataError("RGB cube input contains non-finite values");
    const auto n = coords.rows();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(n) * 3, 128);
    if (n == 0) return rgb;
    for (Eigen::Index c = 0; c < 3; ++c) {
        std::vector<double> values(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) values[static_cast<std::size_t>(i)] = coords(i, c);
        std::sort(values.begin(), values.end());
        double lo = percentile(values, 0.01);
        double hi = percentile(values, 0.99);
        if (!(hi > lo)) {
            lo = values.front();
            hi = values.back();
        }
        if (!(hi > lo)) continue;  // constant channel stays at 128
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t = std::clamp((coords(i, c) - lo) / (hi - lo), 0.0, 1.0);
            rgb[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)] =
                static_cast<std::uint8_t>(std::lround(255.0 * t));
        }
    }
    return rgb;
}

RowMatrixXd interpolate_coords(const RowMatrixXd& eigenvectors, std::span<const NodeId> sample,
                               const RowMatrixXd& sample_coords, std::size_t k) {
    if (sample.empty() || static_cast<Eigen::Index>(sample.size()) != sample_coords.rows()) {
        throw ConfigError("sample ids and sample coordinates disagree");
    }
    RowMatrixXd sub(static_cast<Eigen::Index>(sample.size()), eigenvectors.cols());
    for (std::size_t i = 0; i < sample.size(); ++i) {
        sub.row(static_cast<Eigen::Index>(i)) = eigenvectors.row(static_cast<Eigen::Index>(sample[i]));
    }
    RowMatrixXd out =
        kernels::omp::knn_propagate(eigenvectors, sub, sample_coords, std::min<std::size_t>(k, sample.size()));
    for (std::size_t i = 0; i < sample.size(); ++i) {
        out.row(static_cast<Eigen::Index>(sample[i])) = sample_coords.row(static_cast<Eigen::Index>(i));
    }
    return out;
}

void write_color_map(const ColorMap& map, const std::filesystem::path& stem) {
    const auto n = static_cast<std::uint64_t>(map.coords.rows());
    if (map.rgb.size() != n * 3) throw ConfigError("color map rgb size does not match its coordinates");
    const RowMatrixXf f = map.coords.cast<float>();
    auto coords_path = stem;
    coords_path += "_coords.acfs";
    write_tensor(coords_path, Tensor<float>{{n, static_cast<std::uint64_t>(map.coords.cols())},
                                            std::vector<float>(f.data(), f.data() + f.size())});
    auto rgb_path = stem;
    rgb_path += "_rgb.acfs";
    write_tensor(rgb_path, Tensor<std::uint8_t>{{n, 3}, map.rgb});
    auto json_path = stem;
    json_path += ".json";
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw Error("cannot write " + json_path.string());
    out << nlohmann::json{{"points", n}, {"out_dim", map.coords.cols()}}.dump(2) << '\n';
}

ColorMap read_color_map(const std::filesystem::path& stem) {
    auto coords_path = stem;
    coords_path += "_coords.acfs";
    auto rgb_path = stem;
    rgb_path += "_rgb.acfs";
    const auto coords = read_tensor<float>(coords_path);
    auto rgb = read_tensor<std::uint8_t>(rgb_path);
    if (coords.shape.size() != 2 || rgb.shape.size() != 2 || rgb.shape[0] != coords.shape[0] || rgb.shape[1] != 3) {
        throw IntegrityError("color map containers have inconsistent shapes");
    }
    ColorMap map;
    map.coords = Eigen::Map<const RowMatrixXf>(coords.data.data(), static_cast<Eigen::Index>(coords.shape[0]),
                                               static_cast<Eigen::Index>(coords.shape[1]))
                     .cast<double>();
    map.rgb = std::move(rgb.data);
    return map;
}

void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> rgb) {
    if (rgb.size() != width * height * 3) throw ConfigError("PPM pixel buffer has the wrong size");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "P6\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace alignedcut

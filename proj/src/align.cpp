#include "alignedcut/align.hpp"

#include "alignedcut/error.hpp"
#include "alignedcut/kernels.hpp"
#include "alignedcut/numerics.hpp"
#include "alignedcut/rng.hpp"
#include "alignedcut/spectral.hpp"
#include "alignedcut/tensor_file.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace alignedcut {

std::size_t AlignModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& w : transforms) n += static_cast<std::size_t>(w.size());
    return n + static_cast<std::size_t>(encoder_weight.size() + encoder_bias.size());
}

AlignModel AlignModel::zeros_like() const {
    AlignModel z;
    z.keys = keys;
    z.universal_dim = universal_dim;
    for (const auto& w : transforms) z.transforms.push_back(RowMatrixXd::Zero(w.rows(), w.cols()));
    z.encoder_weight = RowMatrixXd::Zero(encoder_weight.rows(), encoder_weight.cols());
    z.encoder_bias = VectorXd::Zero(encoder_bias.size());
    return z;
}

AlignModel init_align_model(const FeatureSet& set, std::size_t universal_dim, std::size_t voxel_count,
                            std::uint64_t seed) {
    if (universal_dim == 0) throw ConfigError("align.universal_dim must be positive");
    if (voxel_count == 0) throw ConfigError("voxel count must be positive");
    SplitMix64 rng(seed);
    AlignModel model;
    model.universal_dim = universal_dim;
    const auto dp = static_cast<Eigen::Index>(universal_dim);
    for (const auto& e : set.entries) {
        model.keys.push_back({e.model, e.layer});
        RowMatrixXd w(static_cast<Eigen::Index>(e.dim), dp);
        const double sd = 1.0 / std::sqrt(static_cast<double>(e.dim));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = sd * rng.normal();
        model.transforms.push_back(std::move(w));
    }
    model.encoder_weight.resize(dp, static_cast<Eigen::Index>(voxel_count));
    const double sd = 1.0 / std::sqrt(static_cast<double>(universal_dim));
    for (Eigen::Index i = 0; i < model.encoder_weight.size(); ++i) model.encoder_weight.data()[i] = sd * rng.normal();
    model.encoder_bias = VectorXd::Zero(static_cast<Eigen::Index>(voxel_count));
    return model;
}

void check_model_matches(const AlignModel& model, const FeatureSet& set) {
    if (model.keys.size() != set.entries.size() || model.transforms.size() != set.entries.size()) {
        throw ConfigError("model has " + std::to_string(model.transforms.size()) + " transforms for " +
                          std::to_string(set.entries.size()) + " feature entries");
    }
    const auto dp = static_cast<Eigen::Index>(model.universal_dim);
    if (dp == 0) throw ConfigError("model universal dimension is zero");
    for (std::size_t i = 0; i < set.entries.size(); ++i) {
        const auto& e = set.entries[i];
        const auto& w = model.transforms[i];
        if (model.keys[i] != EntryKey{e.model, e.layer}) {
            throw ConfigError("model transform " + std::to_string(i) + " is for " + model.keys[i].model + " layer " +
                              std::to_string(model.keys[i].layer) + ", feature entry is " + e.model + " layer " +
                              std::to_string(e.layer));
        }
        if (w.rows() != static_cast<Eigen::Index>(e.dim) || w.cols() != dp) {
            throw ConfigError("transform for " + e.model + " layer " + std::to_string(e.layer) + " has shape " +
                              std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ", expected " +
                              std::to_string(e.dim) + "x" + std::to_string(dp));
        }
        if (!w.allFinite()) throw DataError("transform parameters are not finite");
    }
    if (model.encoder_weight.rows() != dp || model.encoder_weight.cols() != model.encoder_bias.size()) {
        throw ConfigError("encoder weight/bias shapes are inconsistent");
    }
    if (!model.encoder_weight.allFinite() || !model.encoder_bias.allFinite()) {
        throw DataError("encoder parameters are not finite");
    }
}

std::vector<double> flatten_parameters(const AlignModel& model) {
    std::vector<double> p;
    p.reserve(model.parameter_count());
    for (const auto& w : model.transforms) p.insert(p.end(), w.data(), w.data() + w.size());
    p.insert(p.end(), model.encoder_weight.data(), model.encoder_weight.data() + model.encoder_weight.size());
    p.insert(p.end(), model.encoder_bias.data(), model.encoder_bias.data() + model.encoder_bias.size());
    return p;
}

void unflatten_parameters(AlignModel& model, std::span<const double> params) {
    if (params.size() != model.parameter_count()) throw ConfigError("parameter vector has the wrong length");
    auto it = params.begin();
    const auto take = [&it](double* dst, Eigen::Index n) {
        std::copy(it, it + n, dst);
        it += n;
    };
    for (auto& w : model.transforms) take(w.data(), w.size());
    take(model.encoder_weight.data(), model.encoder_weight.size());
    take(model.encoder_bias.data(), model.encoder_bias.size());
}

namespace {

RowMatrixXd entry_rows(const FeatureSet& set, std::size_t entry) {
    return set.entries[entry].rows(set.row_count()).cast<double>();
}

// Mean over the patch axis: [n_images x D].
RowMatrixXd pool_patches(const FeatureSet& set, std::size_t entry) {
    const auto& e = set.entries[entry];
    const auto v = e.rows(set.row_count());
    RowMatrixXd pooled = RowMatrixXd::Zero(static_cast<Eigen::Index>(set.n_images), static_cast<Eigen::Index>(e.dim));
    const auto p = static_cast<Eigen::Index>(set.patch_count);
    for (Eigen::Index img = 0; img < pooled.rows(); ++img) {
        for (Eigen::Index patch = 0; patch < p; ++patch) pooled.row(img) += v.row(img * p + patch).cast<double>();
    }
    return pooled / static_cast<double>(set.patch_count);
}

}  // namespace

std::vector<RowMatrixXd> align_features(const AlignModel& model, const FeatureSet& set) {
    check_model_matches(model, set);
    std::vector<RowMatrixXd> out;
    out.reserve(set.entries.size());
    for (std::size_t i = 0; i < set.entries.size(); ++i) out.push_back(entry_rows(set, i) * model.transforms[i]);
    return out;
}

RowMatrixXd predict_brain(const AlignModel& model, const FeatureSet& set) {
    check_model_matches(model, set);
    RowMatrixXd z = RowMatrixXd::Zero(static_cast<Eigen::Index>(set.n_images),
                                      static_cast<Eigen::Index>(model.universal_dim));
    for (std::size_t i = 0; i < set.entries.size(); ++i) z += pool_patches(set, i) * model.transforms[i];
    z /= static_cast<double>(set.entries.size());
    RowMatrixXd pred = z * model.encoder_weight;
    pred.rowwise() += model.encoder_bias.transpose();
    return pred;
}

std::vector<RowMatrixXd> brain_space_channels(const AlignModel& model, const FeatureSet& set) {
    std::vector<RowMatrixXd> aligned = align_features(model, set);
    for (auto& a : aligned) a = a * model.encoder_weight;
    return aligned;
}

double gram_discrepancy(const RowMatrixXd& before, const RowMatrixXd& after) {
    return (before * before.transpose() - after * after.transpose()).squaredNorm();
}

EigenConstraintResult eigen_constraint_loss(const RowMatrixXd& features_before, const RowMatrixXd& features_after,
                                            std::size_t c) {
    const auto m = features_after.rows();
    if (features_before.rows() != m) throw ConfigError("before/after node counts differ");
    if (static_cast<std::size_t>(m) < c) throw ConfigError("eigen-constraint needs at least c nodes");

    const RowMatrixXd xb = ncut_eigs(build_affinity(features_before), c).vectors;

    const AffinityMatrix a = build_affinity(features_after);
    const EigenBasis full = eigh_full(normalized_affinity(a));
    const auto cc = static_cast<Eigen::Index>(c);
    const RowMatrixXd xa = full.vectors.leftCols(cc);

    const RowMatrixXd residual = xb * xb.transpose() - xa * xa.transpose();
    EigenConstraintResult out;
    out.loss = residual.squaredNorm();

    // dL/dX_a for L = ||P_b - X_a X_a^T||^2.
    const RowMatrixXd grad_x = -4.0 * residual * xa;
    const EighGradient eg = eigh_backward_full(full, c, grad_x);
    out.degenerate = eg.degenerate;
    const RowMatrixXd& gn = eg.grad_s;

    // N = S A S with S = diag(d^-1/2), d_i = sum_j A_ij.
    const VectorXd s = a.degree.array().rsqrt();
    RowMatrixXd ga = s.asDiagonal() * gn * s.asDiagonal();
    const VectorXd gs = 2.0 * (gn.cwiseProduct(a.values) * s);
    const VectorXd gd = gs.cwiseProduct((-0.5 * a.degree.array().pow(-1.5)).matrix());
    ga.colwise() += gd;

    // A = exp(cos - 1); the diagonal is constant.
    RowMatrixXd gc = ga.cwiseProduct(a.values);
    gc.diagonal().setZero();
    const RowMatrixXd h = gc + gc.transpose();

    bool zero = false;
    const RowMatrixXd u = kernels::omp::unit_rows(features_after, &zero);
    const RowMatrixXd gu = h * u;
    out.grad_after = RowMatrixXd::Zero(m, features_after.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
        const double norm = features_after.row(i).norm();
        if (norm == 0.0) continue;
        const double along = gu.row(i).dot(u.row(i));
        out.grad_after.row(i) = (gu.row(i) - along * u.row(i)) / norm;
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(lambda_eigen >= 0.0) || !std::isfinite(lambda_eigen)) throw ConfigError("align.lambda_eigen must be >= 0");
    if (minibatch_images == 0) throw ConfigError("align.minibatch_images must be positive");
    if (eigen_top == 0) throw ConfigError("align.eigen_top must be positive");
    if (eigen_top > eigen_nodes) throw ConfigError("align.eigen_top must not exceed align.eigen_nodes");
    if (!(learning_rate > 0.0)) throw ConfigError("align.learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("align.momentum must be in [0, 1)");
    if (log_every == 0) throw ConfigError("align.log_every must be positive");
}

AlignObjective::AlignObjective(const FeatureSet& set, const BrainTarget& target, double lambda_eigen,
                               std::size_t eigen_top)
    : set_(&set), target_(&target), lambda_(lambda_eigen), eigen_top_(eigen_top) {
    if (target.n_images() != set.n_images) {
        throw ConfigError("brain target has " + std::to_string(target.n_images()) + " images, features have " +
                          std::to_string(set.n_images));
    }
    for (std::size_t i = 0; i < set.entries.size(); ++i) pooled_.push_back(pool_patches(set, i));
}

ObjectiveValue AlignObjective::evaluate(const AlignModel& model, std::span<const std::size_t> images,
                                        std::span<const EigenSample> eigen_samples, bool want_gradient) const {
    const auto b = static_cast<Eigen::Index>(images.size());
    if (b == 0) throw ConfigError("empty minibatch");
    const auto n_entries = static_cast<double>(set_->entries.size());
    const auto voxels = static_cast<Eigen::Index>(model.voxel_count());
    if (voxels != static_cast<Eigen::Index>(target_->voxel_count())) throw ConfigError("model/target voxel counts differ");

    std::vector<RowMatrixXd> pooled(pooled_.size());
    RowMatrixXd z = RowMatrixXd::Zero(b, static_cast<Eigen::Index>(model.universal_dim));
    RowMatrixXd y(b, voxels);
    for (std::size_t e = 0; e < pooled_.size(); ++e) {
        pooled[e].resize(b, pooled_[e].cols());
        for (Eigen::Index r = 0; r < b; ++r) pooled[e].row(r) = pooled_[e].row(static_cast<Eigen::Index>(images[r]));
        z += pooled[e] * model.transforms[e];
    }
    z /= n_entries;
    for (Eigen::Index r = 0; r < b; ++r) y.row(r) = target_->responses.row(static_cast<Eigen::Index>(images[r]));

    RowMatrixXd pred = z * model.encoder_weight;
    pred.rowwise() += model.encoder_bias.transpose();
    const RowMatrixXd residual = pred - y;
    const double scale = 1.0 / static_cast<double>(b * voxels);

    ObjectiveValue out;
    out.brain = residual.squaredNorm() * scale;
    if (want_gradient) {
        out.gradient = model.zeros_like();
        const RowMatrixXd g_pred = 2.0 * scale * residual;
        out.gradient.encoder_weight = z.transpose() * g_pred;
        out.gradient.encoder_bias = g_pred.colwise().sum().transpose();
        const RowMatrixXd g_z = g_pred * model.encoder_weight.transpose();
        for (std::size_t e = 0; e < pooled.size(); ++e) {
            out.gradient.transforms[e] = pooled[e].transpose() * g_z / n_entries;
        }
    }

    if (lambda_ > 0.0 && !eigen_samples.empty()) {
        const double weight = 1.0 / static_cast<double>(eigen_samples.size());
        for (const auto& sample : eigen_samples) {
            const auto& entry = set_->entries.at(sample.entry);
            const auto v = entry.rows(set_->row_count());
            RowMatrixXd before(static_cast<Eigen::Index>(sample.rows.size()), static_cast<Eigen::Index>(entry.dim));
            for (std::size_t r = 0; r < sample.rows.size(); ++r) {
                before.row(static_cast<Eigen::Index>(r)) = v.row(static_cast<Eigen::Index>(sample.rows[r])).cast<double>();
            }
            const RowMatrixXd after = before * model.transforms[sample.entry];
            const auto ec = eigen_constraint_loss(before, after, eigen_top_);
            out.eigen += weight * ec.loss;
            out.degenerate = out.degenerate || ec.degenerate;
            if (want_gradient) {
                out.gradient.transforms[sample.entry] += (lambda_ * weight) * (before.transpose() * ec.grad_after);
            }
        }
    }
    out.total = out.brain + lambda_ * out.eigen;
    return out;
}

EigenSample sample_eigen_nodes(const FeatureSet& set, std::size_t entry, std::span<const std::size_t> images,
                               std::size_t count, std::uint64_t seed) {
    const std::uint64_t pool = static_cast<std::uint64_t>(images.size()) * set.patch_count;
    if (count > pool) {
        throw ConfigError("eigen-constraint wants " + std::to_string(count) + " nodes but the minibatch has " +
                          std::to_string(pool));
    }
    EigenSample sample;
    sample.entry = entry;
    for (NodeId id : subsample_nodes(pool, count, seed)) {
        const auto img = images[static_cast<std::size_t>(id / set.patch_count)];
        sample.rows.push_back(img * set.patch_count + static_cast<std::size_t>(id % set.patch_count));
    }
    return sample;
}

TrainResult train(AlignModel model, const FeatureSet& set, const BrainTarget& target, const TrainConfig& cfg) {
    cfg.validate();
    check_model_matches(model, set);
    const std::size_t batch = std::min(cfg.minibatch_images, set.n_images);
    if (cfg.lambda_eigen > 0.0 && batch * set.patch_count < cfg.eigen_nodes) {
        throw ConfigError("minibatch has fewer nodes than align.eigen_nodes");
    }
    const AlignObjective objective(set, target, cfg.lambda_eigen, cfg.eigen_top);

    TrainResult result;
    std::vector<double> params = flatten_parameters(model);
    std::vector<double> velocity(params.size(), 0.0);
    std::vector<std::size_t> order(set.n_images);
    std::size_t cursor = set.n_images;  // forces a shuffle on the first step
    std::size_t epoch = 0;

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cursor + batch > set.n_images) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            SplitMix64 rng(mix_seed(cfg.seed, epoch++));
            shuffle(std::span<std::size_t>(order), rng);
            cursor = 0;
        }
        const std::span<const std::size_t> images(order.data() + cursor, batch);
        cursor += batch;

        std::vector<EigenSample> samples;
        if (cfg.lambda_eigen > 0.0) {
            const std::size_t entry = step % set.entries.size();
            samples.push_back(sample_eigen_nodes(set, entry, images, cfg.eigen_nodes,
                                                 mix_seed(cfg.seed ^ 0xE16E7ULL, step)));
        }
        const ObjectiveValue value = objective.evaluate(model, images, samples);
        if (!std::isfinite(value.total)) {
            throw NumericError("training loss became non-finite at step " + std::to_string(step));
        }
        result.degenerate_steps = result.degenerate_steps || value.degenerate;
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            result.history.push_back({step, value.total, value.brain, value.eigen});
        }

        const std::vector<double> grad = flatten_parameters(value.gradient);
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * grad[i];
            params[i] += velocity[i];
        }
        unflatten_parameters(model, params);
    }
    result.model = std::move(model);
    return result;
}

double heldout_eigen_loss(const AlignModel& model, const FeatureSet& set, const TrainConfig& cfg, std::size_t batches,
                          std::uint64_t seed) {
    check_model_matches(model, set);
    const std::size_t batch = std::min(cfg.minibatch_images, set.n_images);
    std::vector<std::size_t> order(set.n_images);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        SplitMix64 rng(mix_seed(seed, b));
        shuffle(std::span<std::size_t>(order), rng);
        const std::span<const std::size_t> images(order.data(), batch);
        for (std::size_t e = 0; e < set.entries.size(); ++e) {
            const auto sample = sample_eigen_nodes(set, e, images, cfg.eigen_nodes, mix_seed(seed, b * 1000 + e + 1));
            const auto v = set.entries[e].rows(set.row_count());
            RowMatrixXd before(static_cast<Eigen::Index>(sample.rows.size()), v.cols());
            for (std::size_t r = 0; r < sample.rows.size(); ++r) {
                before.row(static_cast<Eigen::Index>(r)) = v.row(static_cast<Eigen::Index>(sample.rows[r])).cast<double>();
            }
            total += eigen_constraint_loss(before, before * model.transforms[e], cfg.eigen_top).loss;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

double roi_r2(const RowMatrixXd& predictions, const BrainTarget& target, const std::string& roi) {
    if (predictions.rows() != target.responses.rows() || predictions.cols() != target.responses.cols()) {
        throw ConfigError("prediction shape does not match the brain target");
    }
    const auto voxels = target.roi_voxels(roi);
    if (voxels.empty()) throw ConfigError("ROI '" + roi + "' is empty");
    double sum = 0.0;
    std::size_t used = 0;
    for (auto v : voxels) {
        const auto col = static_cast<Eigen::Index>(v);
        const VectorXd y = target.responses.col(col);
        const double mean = y.mean();
        const double ss_tot = (y.array() - mean).square().sum();
        if (ss_tot <= 1e-24 * std::max(1.0, y.squaredNorm())) continue;
        const double ss_res = (y - predictions.col(col)).squaredNorm();
        sum += 1.0 - ss_res / ss_tot;
        ++used;
    }
    if (used == 0) throw DataError("every voxel of ROI '" + roi + "' has zero variance");
    return sum / static_cast<double>(used);
}

void write_loss_history(const std::vector<LossRecord>& history, const std::filesystem::path& csv) {
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw Error("cannot write " + csv.string());
    out.precision(17);
    out << "step,total,brain,eigen\n";
    for (const auto& r : history) out << r.step << ',' << r.total << ',' << r.brain << ',' << r.eigen << '\n';
}

namespace {

void write_matrix(const std::filesystem::path& path, const RowMatrixXd& m) {
    const RowMatrixXf f = m.cast<float>();
    write_tensor(path, Tensor<float>{{static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                                     std::vector<float>(f.data(), f.data() + f.size())});
}

RowMatrixXd read_matrix(const std::filesystem::path& path) {
    const auto t = read_tensor<float>(path);
    if (t.shape.size() != 2) throw IntegrityError("parameter container must be rank 2: " + path.string());
    return Eigen::Map<const RowMatrixXf>(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                                         static_cast<Eigen::Index>(t.shape[1]))
        .cast<double>();
}

}  // namespace

void write_align_model(const AlignModel& model, const std::filesystem::path& dir, const std::string& extra_json) {
    std::filesystem::create_directories(dir);
    nlohmann::json doc;
    doc["universal_dim"] = model.universal_dim;
    doc["voxel_count"] = model.voxel_count();
    doc["entries"] = nlohmann::json::array();
    for (std::size_t i = 0; i < model.transforms.size(); ++i) {
        const auto file = "W_" + model.keys[i].model + "_layer" + std::to_string(model.keys[i].layer) + ".acfs";
        write_matrix(dir / file, model.transforms[i]);
        doc["entries"].push_back({{"model", model.keys[i].model},
                                  {"layer", model.keys[i].layer},
                                  {"dim", model.transforms[i].rows()},
                                  {"file", file}});
    }
    write_matrix(dir / "encoder_weight.acfs", model.encoder_weight);
    write_matrix(dir / "encoder_bias.acfs", model.encoder_bias.transpose());
    doc["encoder_weight"] = "encoder_weight.acfs";
    doc["encoder_bias"] = "encoder_bias.acfs";
    try {
        doc["training"] = nlohmann::json::parse(extra_json);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("model metadata is not valid JSON: ") + ex.what());
    }
    std::ofstream out(dir / "model.json", std::ios::trunc);
    if (!out) throw Error("cannot write model manifest in " + dir.string());
    out << doc.dump(2) << '\n';
}

AlignModel read_align_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw Error("cannot open " + (dir / "model.json").string());
    AlignModel model;
    try {
        const auto doc = nlohmann::json::parse(in);
        model.universal_dim = doc.at("universal_dim").get<std::size_t>();
        for (const auto& e : doc.at("entries")) {
            model.keys.push_back({e.at("model").get<std::string>(), e.at("layer").get<int>()});
            model.transforms.push_back(read_matrix(dir / e.at("file").get<std::string>()));
        }
        model.encoder_weight = read_matrix(dir / doc.at("encoder_weight").get<std::string>());
        model.encoder_bias = read_matrix(dir / doc.at("encoder_bias").get<std::string>()).row(0).transpose();
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("malformed model manifest: ") + ex.what());
    }
    return model;
}

}  // namespace alignedcut

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/rng.hpp"
#include "noisylab/selection.hpp"
#include "noisylab/trainer.hpp"

namespace noisylab {

/// Relative weight of a selected example given its class's mean-loss range:
/// exp(-kappa (loss - min) / (max - min)). 1 at the class minimum, exp(-kappa)
/// at the maximum; 1 everywhere when the class losses are all equal.
inline double example_weight(double mean_loss, double class_min, double class_max, double kappa) {
    if (!(kappa >= 0.0)) throw ParameterError("example_weight: kappa must be nonnegative");
    if (!std::isfinite(mean_loss) || !std::isfinite(class_min) || !std::isfinite(class_max))
        throw DomainError("example_weight: losses must be finite");
    if (mean_loss < class_min || mean_loss > class_max)
        throw DomainError("example_weight: mean loss outside the class range");
    if (class_max == class_min) return 1.0;
    const double t = (mean_loss - class_min) / (class_max - class_min);
    return std::exp(-kappa * t);
}

/// Selected example ids with resampling weights and the per-class mean-loss
/// extremes the weights were derived from.
struct WeightedSelection {
    struct Entry {
        std::size_t id;
        double weight;
    };
    std::vector<Entry> entries;
    std::vector<double> class_min_loss; // NaN for classes with no selection
    std::vector<double> class_max_loss;
};

inline WeightedSelection make_weighted_selection(const SelectionResult& selection,
                                                 const LossLedger& ledger, double kappa) {
    WeightedSelection out;
    const std::size_t classes = selection.per_class_ids.size();
    out.class_min_loss.assign(classes, std::numeric_limits<double>::quiet_NaN());
    out.class_max_loss.assign(classes, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t cls = 0; cls < classes; ++cls) {
        const auto& ids = selection.per_class_ids[cls];
        if (ids.empty()) continue;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t id : ids) {
            const double loss = ledger.mean_loss(id);
            lo = std::min(lo, loss);
            hi = std::max(hi, loss);
        }
        out.class_min_loss[cls] = lo;
        out.class_max_loss[cls] = hi;
        for (std::size_t id : ids)
            out.entries.push_back({id, example_weight(ledger.mean_loss(id), lo, hi, kappa)});
    }
    return out;
}

/// Draw batch_size ids i.i.d. with probability proportional to weight.
inline std::vector<std::size_t> weighted_resample(const WeightedSelection& selection,
                                                  std::size_t batch_size, Rng& rng) {
    if (selection.entries.empty()) throw ParameterError("weighted_resample: empty selection");
    std::vector<double> weights(selection.entries.size());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = selection.entries[i].weight;
    std::vector<std::size_t> batch(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b)
        batch[b] = selection.entries[rng.categorical(weights)].id;
    return batch;
}

inline std::vector<std::size_t> weighted_resample(const WeightedSelection& selection,
                                                  std::size_t batch_size, std::uint64_t seed) {
    Rng rng(rng::derive(seed, "resample"));
    return weighted_resample(selection, batch_size, rng);
}

/// Feature-space augmentation: add seeded spherical Gaussian noise. A zero
/// noise_std returns the input unchanged and consumes no randomness.
inline Eigen::VectorXd augment(const Eigen::VectorXd& x, double noise_std, Rng& rng) {
    if (noise_std < 0.0) throw ParameterError("augment: noise_std must be nonnegative");
    if (noise_std == 0.0) return x;
    Eigen::VectorXd out = x;
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += noise_std * rng.normal();
    return out;
}

inline Eigen::VectorXd augment(const Eigen::VectorXd& x, double noise_std, std::uint64_t seed) {
    Rng rng(rng::derive(seed, "augment"));
    return augment(x, noise_std, rng);
}

/// Temperature sharpening: q_i^(1/temp), renormalized. Computed in log space
/// so tiny probabilities stay well-behaved at small temperatures.
inline Eigen::VectorXd sharpen(const Eigen::VectorXd& q, double temp) {
    if (!(temp > 0.0)) throw ParameterError("sharpen: temperature must be positive");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        if (q[i] < 0.0) throw ParameterError("sharpen: probabilities must be nonnegative");
        sum += q[i];
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ParameterError("sharpen: input must be a probability vector");

    const double inv_temp = 1.0 / temp;
    double max_log = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd logs(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        logs[i] = q[i] > 0.0 ? inv_temp * std::log(q[i]) : -std::numeric_limits<double>::infinity();
        max_log = std::max(max_log, logs[i]);
    }
    Eigen::VectorXd out(q.size());
    double norm = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        out[i] = std::exp(logs[i] - max_log);
        norm += out[i];
    }
    return out / norm;
}

/// Parameters of the feature-space MixMatch stage. The sharpening
/// temperature is its own field to stay clear of the transition matrix T.
struct MixMatchParams {
    std::size_t augment_count = 2;   // K
    double sharpen_temp = 0.5;
    double alpha = 0.75;             // Beta(alpha, alpha) for MixUp; 0 disables mixing
    double lambda_u = 25.0;          // unlabeled loss weight (maximum of the ramp)
    double augment_noise_std = 0.1;

    void validate() const {
        if (augment_count < 1) throw ParameterError("MixMatchParams: need at least 1 augmentation");
        if (!(sharpen_temp > 0.0)) throw ParameterError("MixMatchParams: sharpen_temp must be positive");
        if (alpha < 0.0) throw ParameterError("MixMatchParams: alpha must be nonnegative");
        if (lambda_u < 0.0) throw ParameterError("MixMatchParams: lambda_u must be nonnegative");
        if (augment_noise_std < 0.0)
            throw ParameterError("MixMatchParams: augment_noise_std must be nonnegative");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["augment_count"] = augment_count;
        j["sharpen_temp"] = sharpen_temp;
        j["alpha"] = alpha;
        j["lambda_u"] = lambda_u;
        j["augment_noise_std"] = augment_noise_std;
        return j;
    }

    static MixMatchParams from_json(const nlohmann::json& j) {
        MixMatchParams p;
        if (j.contains("augment_count")) p.augment_count = j.at("augment_count").get<std::size_t>();
        if (j.contains("sharpen_temp")) p.sharpen_temp = j.at("sharpen_temp").get<double>();
        if (j.contains("alpha")) p.alpha = j.at("alpha").get<double>();
        if (j.contains("lambda_u")) p.lambda_u = j.at("lambda_u").get<double>();
        if (j.contains("augment_noise_std"))
            p.augment_noise_std = j.at("augment_noise_std").get<double>();
        p.validate();
        return p;
    }
};

/// Guessed label for an unlabeled point: model outputs averaged over K
/// augmentations, then sharpened.
inline Eigen::VectorXd guess_label(const Model& model, const Eigen::VectorXd& u,
                                   const MixMatchParams& params, Rng& rng) {
    params.validate();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.config().classes));
    for (std::size_t k = 0; k < params.augment_count; ++k)
        mean += model.predict_proba(augment(u, params.augment_noise_std, rng));
    mean /= static_cast<double>(params.augment_count);
    return sharpen(mean, params.sharpen_temp);
}

inline Eigen::VectorXd guess_label(const Model& model, const Eigen::VectorXd& u,
                                   const MixMatchParams& params, std::uint64_t seed) {
    Rng rng(rng::derive(seed, "guess"));
    return guess_label(model, u, params, rng);
}

/// A feature vector paired with a soft target.
struct MixExample {
    Eigen::VectorXd x;
    Eigen::VectorXd target;
};

/// Convex combination biased toward the first argument: with
/// lambda' = max(lambda, 1 - lambda), returns lambda' a + (1 - lambda') b.
inline MixExample mixup_combine(const MixExample& a, const MixExample& b, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("mixup_combine: lambda must lie in [0, 1]");
    if (a.x.size() != b.x.size() || a.target.size() != b.target.size())
        throw ParameterError("mixup_combine: dimension mismatch");
    const double lp = std::max(lambda, 1.0 - lambda);
    if (lp == 1.0) return a;
    return {lp * a.x + (1.0 - lp) * b.x, lp * a.target + (1.0 - lp) * b.target};
}

/// MixUp with lambda ~ Beta(alpha, alpha). alpha = 0 is the degenerate limit
/// that always keeps the first argument.
inline MixExample mixup_pair(const MixExample& a, const MixExample& b, double alpha, Rng& rng) {
    if (alpha < 0.0) throw ParameterError("mixup_pair: alpha must be nonnegative");
    if (alpha == 0.0) return mixup_combine(a, b, 1.0);
    return mixup_combine(a, b, rng.beta(alpha, alpha));
}

inline MixExample mixup_pair(const MixExample& a, const MixExample& b, double alpha,
                             std::uint64_t seed) {
    Rng rng(rng::derive(seed, "mix"));
    return mixup_pair(a, b, alpha, rng);
}

/// A batch of examples with soft targets, one row each.
struct SslBatch {
    Eigen::MatrixXd x;
    Eigen::MatrixXd targets;

    std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};

struct SslLossParts {
    double total = 0.0;
    double supervised = 0.0;
    double unsupervised = 0.0;
};

namespace detail {

inline SslLossParts ssl_loss_impl(const Model& model, const SslBatch& labeled,
                                  const SslBatch& unlabeled, double lambda_u, std::size_t classes,
                                  Eigen::VectorXd* grad) {
    if (labeled.size() == 0) throw ParameterError("ssl_loss: labeled batch must be nonempty");
    if (unlabeled.size() == 0 && lambda_u > 0.0)
        throw ParameterError("ssl_loss: unlabeled batch may be empty only when lambda_u is 0");
    if (classes != model.config().classes) throw ParameterError("ssl_loss: class count mismatch");

    SslLossParts parts;
    const auto fwd_l = model.forward(labeled.x);
    const double inv_l = 1.0 / static_cast<double>(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        parts.supervised += soft_ce_loss(fwd_l.probs.row(row).transpose(),
                                         labeled.targets.row(row).transpose());
    }
    parts.supervised *= inv_l;

    if (grad) *grad = model.backward(labeled.x, fwd_l, (fwd_l.probs - labeled.targets) * inv_l);

    if (unlabeled.size() > 0) {
        const auto fwd_u = model.forward(unlabeled.x);
        const double scale = 1.0 / (static_cast<double>(classes) * static_cast<double>(unlabeled.size()));
        parts.unsupervised = (fwd_u.probs - unlabeled.targets).squaredNorm() * scale;
        if (grad && lambda_u > 0.0) {
            // d/dlogits of lambda_u * mse through the softmax:
            // g = 2 lambda_u (p - q) scale, dz = p .* (g - (g . p))
            Eigen::MatrixXd g = 2.0 * lambda_u * scale * (fwd_u.probs - unlabeled.targets);
            Eigen::VectorXd dots = (g.array() * fwd_u.probs.array()).rowwise().sum();
            Eigen::MatrixXd dlogits = fwd_u.probs.array() * (g.colwise() - dots).array();
            *grad += model.backward(unlabeled.x, fwd_u, dlogits);
        }
    }
    parts.total = parts.supervised + lambda_u * parts.unsupervised;
    return parts;
}

} // namespace detail

/// Combined semi-supervised loss: soft-target cross-entropy on the labeled
/// batch plus lambda_u times the per-class-scaled mean squared error on the
/// unlabeled batch.
inline SslLossParts ssl_loss(const Model& model, const SslBatch& labeled, const SslBatch& unlabeled,
                             double lambda_u, std::size_t classes) {
    return detail::ssl_loss_impl(model, labeled, unlabeled, lambda_u, classes, nullptr);
}

/// Weighted MixMatch refinement. Per step: a labeled batch is drawn from the
/// selection by weighted resampling and an unlabeled batch uniformly from the
/// unselected pool; labels are guessed and sharpened, MixUp runs across the
/// concatenated batch, and SGD follows the combined loss. The unlabeled
/// weight ramps linearly from 0 over the first 25% of steps. Each random
/// consumer draws from its own stream derived from cfg.seed.
inline Model train_rsl_wm(const WeightedSelection& selected,
                          const std::vector<std::size_t>& unlabeled_ids, const NoisyDataset& data,
                          Model model, const MixMatchParams& params, const SGDConfig& cfg,
                          const EpochObserver& observer = {}) {
    params.validate();
    cfg.validate();
    if (selected.entries.empty()) throw ParameterError("train_rsl_wm: empty selection");
    for (const auto& entry : selected.entries)
        if (entry.id >= data.size()) throw LookupError("train_rsl_wm: selected id out of range");
    for (std::size_t id : unlabeled_ids)
        if (id >= data.size()) throw LookupError("train_rsl_wm: unlabeled id out of range");

    const std::size_t classes = model.config().classes;
    const std::size_t dim = data.dim();
    if (dim != model.config().input_dim) throw ParameterError("train_rsl_wm: feature dimension mismatch");

    Rng resampler(rng::derive(cfg.seed, "resample"));
    Rng unlabeled_sampler(rng::derive(cfg.seed, "unlabeled"));
    Rng augmenter(rng::derive(cfg.seed, "augment"));
    Rng mixer(rng::derive(cfg.seed, "mix"));
    Rng pairer(rng::derive(cfg.seed, "pair"));

    const bool use_unlabeled = params.lambda_u > 0.0 && !unlabeled_ids.empty();
    const std::size_t batch = cfg.batch_size;
    const std::size_t steps_per_epoch =
        (selected.entries.size() + batch - 1) / batch;
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;
    const std::size_t ramp_steps = std::max<std::size_t>(1, total_steps / 4);

    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.param_count()));
    double lr = cfg.learning_rate;

    for (std::size_t step = 0; step < total_steps; ++step) {
        if (step % steps_per_epoch == 0) {
            const std::size_t epoch = step / steps_per_epoch + 1;
            for (const auto& [se, mult] : cfg.lr_schedule)
                if (se == epoch) lr *= mult;
        }
        const double lambda_t =
            params.lambda_u * std::min(1.0, static_cast<double>(step) / static_cast<double>(ramp_steps));

        const auto labeled_ids = weighted_resample(selected, batch, resampler);
        SslBatch labeled;
        labeled.x.resize(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(dim));
        labeled.targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch),
                                                static_cast<Eigen::Index>(classes));
        for (std::size_t b = 0; b < batch; ++b) {
            labeled.x.row(static_cast<Eigen::Index>(b)) =
                augment(data.features.row(static_cast<Eigen::Index>(labeled_ids[b])).transpose(),
                        params.augment_noise_std, augmenter)
                    .transpose();
            labeled.targets(static_cast<Eigen::Index>(b),
                            static_cast<Eigen::Index>(data.y_obs[labeled_ids[b]])) = 1.0;
        }

        SslBatch unlabeled;
        if (use_unlabeled) {
            const std::size_t ucount = batch * params.augment_count;
            unlabeled.x.resize(static_cast<Eigen::Index>(ucount), static_cast<Eigen::Index>(dim));
            unlabeled.targets.resize(static_cast<Eigen::Index>(ucount),
                                     static_cast<Eigen::Index>(classes));
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t id = unlabeled_ids[unlabeled_sampler.uniform_index(unlabeled_ids.size())];
                for (std::size_t k = 0; k < params.augment_count; ++k)
                    unlabeled.x.row(static_cast<Eigen::Index>(b * params.augment_count + k)) =
                        augment(data.features.row(static_cast<Eigen::Index>(id)).transpose(),
                                params.augment_noise_std, augmenter)
                            .transpose();
            }
            const Eigen::MatrixXd probs = model.predict_proba(unlabeled.x);
            for (std::size_t b = 0; b < batch; ++b) {
                Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes));
                for (std::size_t k = 0; k < params.augment_count; ++k)
                    mean += probs.row(static_cast<Eigen::Index>(b * params.augment_count + k)).transpose();
                mean /= static_cast<double>(params.augment_count);
                const Eigen::VectorXd q = sharpen(mean, params.sharpen_temp);
                for (std::size_t k = 0; k < params.augment_count; ++k)
                    unlabeled.targets.row(static_cast<Eigen::Index>(b * params.augment_count + k)) =
                        q.transpose();
            }
        }

        // MixUp across the concatenated batch, against a shuffled snapshot.
        const std::size_t pool = batch + unlabeled.size();
        std::vector<std::size_t> perm(pool);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        pairer.shuffle(perm);
        if (params.alpha > 0.0) {
            const Eigen::MatrixXd snap_lx = labeled.x;
            const Eigen::MatrixXd snap_lt = labeled.targets;
            const Eigen::MatrixXd snap_ux = unlabeled.x;
            const Eigen::MatrixXd snap_ut = unlabeled.targets;
            const auto partner_x = [&](std::size_t p) {
                return p < batch ? snap_lx.row(static_cast<Eigen::Index>(p))
                                 : snap_ux.row(static_cast<Eigen::Index>(p - batch));
            };
            const auto partner_t = [&](std::size_t p) {
                return p < batch ? snap_lt.row(static_cast<Eigen::Index>(p))
                                 : snap_ut.row(static_cast<Eigen::Index>(p - batch));
            };
            for (std::size_t i = 0; i < pool; ++i) {
                const double lambda = mixer.beta(params.alpha, params.alpha);
                const double lp = std::max(lambda, 1.0 - lambda);
                if (lp == 1.0) continue;
                auto& x = i < batch ? labeled.x : unlabeled.x;
                auto& t = i < batch ? labeled.targets : unlabeled.targets;
                const auto row = static_cast<Eigen::Index>(i < batch ? i : i - batch);
                x.row(row) = lp * (i < batch ? snap_lx.row(row) : snap_ux.row(row)) +
                             (1.0 - lp) * partner_x(perm[i]);
                t.row(row) = lp * (i < batch ? snap_lt.row(row) : snap_ut.row(row)) +
                             (1.0 - lp) * partner_t(perm[i]);
            }
        }

        Eigen::VectorXd grad;
        const SslLossParts parts = detail::ssl_loss_impl(model, labeled, unlabeled, lambda_t,
                                                         classes, &grad);
        if (!std::isfinite(parts.total))
            throw DivergedError("train_rsl_wm: non-finite loss at step " + std::to_string(step),
                                step / steps_per_epoch + 1);
        grad += cfg.weight_decay * model.params();
        velocity = cfg.momentum * velocity + grad;
        model.params() -= lr * velocity;
        if (observer && (step + 1) % steps_per_epoch == 0)
            observer(step / steps_per_epoch + 1, model);
    }
    return model;
}

} // namespace noisylab

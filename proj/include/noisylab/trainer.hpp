#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/io.hpp"
#include "noisylab/rng.hpp"
#include "noisylab/synthetic_data.hpp"

namespace noisylab {

/// Predicted probabilities below this floor are clipped before taking logs.
inline constexpr double kProbFloor = 1e-12;

/// Cross-entropy of a predicted distribution against a hard label.
inline double ce_loss(const Eigen::VectorXd& probs, std::size_t label) {
    if (label >= static_cast<std::size_t>(probs.size()))
        throw ParameterError("ce_loss: label out of range");
    return -std::log(std::max(probs[static_cast<Eigen::Index>(label)], kProbFloor));
}

/// Cross-entropy against a soft target distribution.
inline double soft_ce_loss(const Eigen::VectorXd& probs, const Eigen::VectorXd& target) {
    if (probs.size() != target.size()) throw ParameterError("soft_ce_loss: size mismatch");
    double loss = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (target[i] != 0.0) loss -= target[i] * std::log(std::max(probs[i], kProbFloor));
    return loss;
}

enum class Architecture { linear_softmax, mlp_one_hidden };

inline std::string to_string(Architecture arch) {
    return arch == Architecture::linear_softmax ? "linear-softmax" : "mlp";
}

inline Architecture architecture_from_string(const std::string& s) {
    if (s == "linear-softmax" || s == "linear") return Architecture::linear_softmax;
    if (s == "mlp" || s == "mlp-one-hidden") return Architecture::mlp_one_hidden;
    throw ParameterError("unknown architecture: " + s);
}

struct ModelConfig {
    Architecture arch = Architecture::linear_softmax;
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::size_t hidden_width = 0; // MLP only

    void validate() const {
        if (input_dim < 1) throw ParameterError("ModelConfig: input_dim must be positive");
        if (classes < 2) throw ParameterError("ModelConfig: need at least 2 classes");
        if (arch == Architecture::mlp_one_hidden && hidden_width < 1)
            throw ParameterError("ModelConfig: MLP needs a positive hidden width");
    }
};

/// Softmax classifier with an optional one-hidden-layer relu feature
/// extractor. Parameters live in one flat vector so optimizers and the
/// finite-difference check can treat the model as a plain function of theta.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count_of(cfg_)));
        Rng rng(rng::derive(seed, "init"));
        if (cfg_.arch == Architecture::linear_softmax) {
            init_layer(rng, 0, cfg_.classes * cfg_.input_dim + cfg_.classes, cfg_.input_dim);
        } else {
            const std::size_t l1 = cfg_.hidden_width * cfg_.input_dim + cfg_.hidden_width;
            init_layer(rng, 0, l1, cfg_.input_dim);
            init_layer(rng, l1, param_count() - l1, cfg_.hidden_width);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t param_count() const { return static_cast<std::size_t>(params_.size()); }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    struct Forward {
        Eigen::MatrixXd hidden; // post-relu activations; empty for linear
        Eigen::MatrixXd probs;  // one row per example
    };

    /// Batch forward pass; X has one example per row.
    Forward forward(const Eigen::MatrixXd& X) const {
        if (static_cast<std::size_t>(X.cols()) != cfg_.input_dim)
            throw ParameterError("Model::forward: feature dimension mismatch");
        Forward f;
        Eigen::MatrixXd logits;
        if (cfg_.arch == Architecture::linear_softmax) {
            logits = (X * weight(0).transpose()).rowwise() + bias(0).transpose();
        } else {
            f.hidden = ((X * weight(0).transpose()).rowwise() + bias(0).transpose()).cwiseMax(0.0);
            logits = (f.hidden * weight(1).transpose()).rowwise() + bias(1).transpose();
        }
        f.probs = softmax_rows(logits);
        return f;
    }

    /// Parameter gradient for a loss whose logit gradient is `dlogits`
    /// (same shape as the forward probabilities).
    Eigen::VectorXd backward(const Eigen::MatrixXd& X, const Forward& f,
                             const Eigen::MatrixXd& dlogits) const {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
        if (cfg_.arch == Architecture::linear_softmax) {
            weight_grad(grad, 0) = dlogits.transpose() * X;
            bias_grad(grad, 0) = dlogits.colwise().sum().transpose();
        } else {
            weight_grad(grad, 1) = dlogits.transpose() * f.hidden;
            bias_grad(grad, 1) = dlogits.colwise().sum().transpose();
            Eigen::MatrixXd dhidden = dlogits * weight(1);
            dhidden.array() *= (f.hidden.array() > 0.0).cast<double>();
            weight_grad(grad, 0) = dhidden.transpose() * X;
            bias_grad(grad, 0) = dhidden.colwise().sum().transpose();
        }
        return grad;
    }

    Eigen::VectorXd predict_proba(const Eigen::VectorXd& x) const {
        return forward(x.transpose()).probs.row(0).transpose();
    }

    Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& X) const { return forward(X).probs; }

    std::size_t predict(const Eigen::VectorXd& x) const {
        Eigen::Index argmax = 0;
        predict_proba(x).maxCoeff(&argmax);
        return static_cast<std::size_t>(argmax);
    }

    nlohmann::ordered_json checkpoint() const {
        nlohmann::ordered_json j;
        j["architecture"] = to_string(cfg_.arch);
        j["input_dim"] = cfg_.input_dim;
        j["classes"] = cfg_.classes;
        j["hidden_width"] = cfg_.hidden_width;
        j["params"] = std::vector<double>(params_.begin(), params_.end());
        return j;
    }

    static Model from_checkpoint(const nlohmann::json& j) {
        ModelConfig cfg;
        cfg.arch = architecture_from_string(j.at("architecture").get<std::string>());
        cfg.input_dim = j.at("input_dim").get<std::size_t>();
        cfg.classes = j.at("classes").get<std::size_t>();
        cfg.hidden_width = j.at("hidden_width").get<std::size_t>();
        Model model(cfg, 0);
        const auto params = j.at("params").get<std::vector<double>>();
        if (params.size() != model.param_count())
            throw ParameterError("Model::from_checkpoint: parameter count mismatch");
        model.params_ = Eigen::Map<const Eigen::VectorXd>(params.data(),
                                                          static_cast<Eigen::Index>(params.size()));
        return model;
    }

private:
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using WeightView = Eigen::Map<const RowMajor>;
    using WeightGradView = Eigen::Map<RowMajor>;

    static std::size_t param_count_of(const ModelConfig& cfg) {
        if (cfg.arch == Architecture::linear_softmax)
            return cfg.classes * cfg.input_dim + cfg.classes;
        return cfg.hidden_width * cfg.input_dim + cfg.hidden_width +
               cfg.classes * cfg.hidden_width + cfg.classes;
    }

    void init_layer(Rng& rng, std::size_t offset, std::size_t count, std::size_t fan_in) {
        const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < count; ++i)
            params_[static_cast<Eigen::Index>(offset + i)] = rng.uniform(-limit, limit);
    }

    std::size_t layer_offset(int layer) const {
        if (cfg_.arch == Architecture::linear_softmax) return 0;
        return layer == 0 ? 0 : cfg_.hidden_width * cfg_.input_dim + cfg_.hidden_width;
    }

    std::size_t layer_rows(int layer) const {
        if (cfg_.arch == Architecture::linear_softmax) return cfg_.classes;
        return layer == 0 ? cfg_.hidden_width : cfg_.classes;
    }

    std::size_t layer_cols(int layer) const {
        if (cfg_.arch == Architecture::linear_softmax) return cfg_.input_dim;
        return layer == 0 ? cfg_.input_dim : cfg_.hidden_width;
    }

    WeightView weight(int layer) const {
        return WeightView(params_.data() + layer_offset(layer),
                          static_cast<Eigen::Index>(layer_rows(layer)),
                          static_cast<Eigen::Index>(layer_cols(layer)));
    }

    Eigen::Map<const Eigen::VectorXd> bias(int layer) const {
        const std::size_t off = layer_offset(layer) + layer_rows(layer) * layer_cols(layer);
        return Eigen::Map<const Eigen::VectorXd>(params_.data() + off,
                                                 static_cast<Eigen::Index>(layer_rows(layer)));
    }

    WeightGradView weight_grad(Eigen::VectorXd& grad, int layer) const {
        return WeightGradView(grad.data() + layer_offset(layer),
                              static_cast<Eigen::Index>(layer_rows(layer)),
                              static_cast<Eigen::Index>(layer_cols(layer)));
    }

    Eigen::Map<Eigen::VectorXd> bias_grad(Eigen::VectorXd& grad, int layer) const {
        const std::size_t off = layer_offset(layer) + layer_rows(layer) * layer_cols(layer);
        return Eigen::Map<Eigen::VectorXd>(grad.data() + off,
                                           static_cast<Eigen::Index>(layer_rows(layer)));
    }

    static Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
        Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
        Eigen::MatrixXd expd = shifted.array().exp();
        return expd.array().colwise() / expd.rowwise().sum().array();
    }

    ModelConfig cfg_;
    Eigen::VectorXd params_;
};

inline double accuracy(const Model& model, const Eigen::MatrixXd& X,
                       const std::vector<std::size_t>& labels) {
    if (labels.empty()) throw ParameterError("accuracy: empty evaluation set");
    const Eigen::MatrixXd probs = model.predict_proba(X);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Eigen::Index argmax = 0;
        probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&argmax);
        hits += static_cast<std::size_t>(argmax) == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Mean CE over a batch of hard-labeled examples.
inline double batch_mean_ce(const Model& model, const Eigen::MatrixXd& X,
                            const std::vector<std::size_t>& y) {
    if (y.empty()) throw ParameterError("batch_mean_ce: empty batch");
    const auto fwd = model.forward(X);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        total += ce_loss(fwd.probs.row(static_cast<Eigen::Index>(i)).transpose(), y[i]);
    return total / static_cast<double>(y.size());
}

/// Mean CE and its parameter gradient.
inline double batch_mean_ce_with_grad(const Model& model, const Eigen::MatrixXd& X,
                                      const std::vector<std::size_t>& y, Eigen::VectorXd& grad) {
    if (y.empty()) throw ParameterError("batch_mean_ce_with_grad: empty batch");
    const auto fwd = model.forward(X);
    const double inv_n = 1.0 / static_cast<double>(y.size());
    Eigen::MatrixXd dlogits = fwd.probs * inv_n;
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        total += ce_loss(fwd.probs.row(row).transpose(), y[i]);
        dlogits(row, static_cast<Eigen::Index>(y[i])) -= inv_n;
    }
    grad = model.backward(X, fwd, dlogits);
    return total * inv_n;
}

struct SGDConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 1;
    std::vector<std::pair<std::size_t, double>> lr_schedule; // (1-based epoch, multiplier)
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw ParameterError("SGDConfig: learning_rate must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ParameterError("SGDConfig: momentum must lie in [0, 1)");
        if (weight_decay < 0.0) throw ParameterError("SGDConfig: weight_decay must be nonnegative");
        if (batch_size < 1) throw ParameterError("SGDConfig: batch_size must be positive");
        if (epochs < 1) throw ParameterError("SGDConfig: epochs must be positive");
        std::size_t prev = 0;
        for (const auto& [epoch, mult] : lr_schedule) {
            if (epoch <= prev || epoch > epochs)
                throw ParameterError("SGDConfig: schedule epochs must be strictly increasing and <= E");
            if (!(mult > 0.0)) throw ParameterError("SGDConfig: schedule multipliers must be positive");
            prev = epoch;
        }
    }

    /// Warm-up defaults: lr 0.1, x0.1 at 60% and 80% of the epoch budget,
    /// momentum 0.9, weight decay 1e-4.
    static SGDConfig warmup_default(std::size_t epochs, std::uint64_t seed) {
        SGDConfig cfg;
        cfg.epochs = epochs;
        cfg.seed = seed;
        const std::size_t e1 = epochs * 6 / 10;
        const std::size_t e2 = epochs * 8 / 10;
        if (e1 > 1 && e2 > e1) cfg.lr_schedule = {{e1, 0.1}, {e2, 0.1}};
        return cfg;
    }
};

/// Per-example, per-epoch cross-entropy record of a training run.
class LossLedger {
public:
    LossLedger(std::size_t examples, std::size_t epochs)
        : losses_(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(examples),
                                            static_cast<Eigen::Index>(epochs), -1.0)) {}

    std::size_t size() const { return static_cast<std::size_t>(losses_.rows()); }
    std::size_t epochs_recorded() const { return static_cast<std::size_t>(losses_.cols()); }

    void record(std::size_t example, std::size_t epoch, double loss) {
        check(example, epoch);
        losses_(static_cast<Eigen::Index>(example), static_cast<Eigen::Index>(epoch)) = loss;
    }

    double loss(std::size_t example, std::size_t epoch) const {
        check(example, epoch);
        return losses_(static_cast<Eigen::Index>(example), static_cast<Eigen::Index>(epoch));
    }

    /// Arithmetic mean of the example's recorded losses.
    double mean_loss(std::size_t example) const {
        check(example, 0);
        return losses_.row(static_cast<Eigen::Index>(example)).mean();
    }

    Eigen::VectorXd mean_losses() const { return losses_.rowwise().mean(); }

    /// Prefix means ell_bar_t = (1/t) sum_{s<=t} ell_s, one per epoch.
    std::vector<double> cumulative_means(std::size_t example) const {
        check(example, 0);
        std::vector<double> means(epochs_recorded());
        double acc = 0.0;
        for (std::size_t t = 0; t < means.size(); ++t) {
            acc += losses_(static_cast<Eigen::Index>(example), static_cast<Eigen::Index>(t));
            means[t] = acc / static_cast<double>(t + 1);
        }
        return means;
    }

    const Eigen::MatrixXd& losses() const { return losses_; }

    /// CSV with one row per example id and one column per epoch.
    std::string to_csv() const {
        std::ostringstream out;
        out << "id";
        for (std::size_t t = 0; t < epochs_recorded(); ++t) out << ",epoch_" << (t + 1);
        out << '\n';
        for (std::size_t i = 0; i < size(); ++i) {
            out << i;
            for (std::size_t t = 0; t < epochs_recorded(); ++t)
                out << ',' << io::num(losses_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
            out << '\n';
        }
        return out.str();
    }

private:
    void check(std::size_t example, std::size_t epoch) const {
        if (example >= size()) throw LookupError("LossLedger: unknown example id " + std::to_string(example));
        if (epoch >= epochs_recorded())
            throw LookupError("LossLedger: epoch " + std::to_string(epoch) + " out of range");
    }

    Eigen::MatrixXd losses_;
};

inline double mean_loss(const LossLedger& ledger, std::size_t example) {
    return ledger.mean_loss(example);
}

using EpochObserver = std::function<void(std::size_t epoch, const Model&)>;

struct WarmupResult {
    Model model;
    LossLedger ledger;
};

/// Mini-batch SGD on the observed labels for cfg.epochs epochs. After each
/// epoch's update the loss of every example is evaluated under the frozen
/// end-of-epoch parameters and recorded in the ledger.
inline WarmupResult train_warmup(const NoisyDataset& data, Model model, const SGDConfig& cfg,
                                 const EpochObserver& observer = {}) {
    cfg.validate();
    if (data.size() == 0) throw ParameterError("train_warmup: empty dataset");
    if (data.dim() != model.config().input_dim)
        throw ParameterError("train_warmup: feature dimension mismatch");
    for (std::size_t y : data.y_obs)
        if (y >= model.config().classes)
            throw ParameterError("train_warmup: observed label out of range");

    const std::size_t n = data.size();
    LossLedger ledger(n, cfg.epochs);
    Rng shuffler(rng::derive(cfg.seed, "shuffle"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.param_count()));
    Eigen::VectorXd grad;
    double lr = cfg.learning_rate;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (const auto& [se, mult] : cfg.lr_schedule)
            if (se == epoch) lr *= mult;
        shuffler.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n - start);
            Eigen::MatrixXd X(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(data.dim()));
            std::vector<std::size_t> y(count);
            for (std::size_t b = 0; b < count; ++b) {
                X.row(static_cast<Eigen::Index>(b)) =
                    data.features.row(static_cast<Eigen::Index>(order[start + b]));
                y[b] = data.y_obs[order[start + b]];
            }
            const double loss = batch_mean_ce_with_grad(model, X, y, grad);
            if (!std::isfinite(loss))
                throw DivergedError("train_warmup: non-finite loss at epoch " + std::to_string(epoch),
                                    epoch);
            grad += cfg.weight_decay * model.params();
            velocity = cfg.momentum * velocity + grad;
            model.params() -= lr * velocity;
        }

        const Eigen::MatrixXd probs = model.predict_proba(data.features);
        for (std::size_t i = 0; i < n; ++i) {
            const double loss = ce_loss(probs.row(static_cast<Eigen::Index>(i)).transpose(),
                                        data.y_obs[i]);
            if (!std::isfinite(loss))
                throw DivergedError("train_warmup: non-finite example loss at epoch " +
                                        std::to_string(epoch),
                                    epoch);
            ledger.record(i, epoch - 1, loss);
        }
        if (observer) observer(epoch, model);
    }
    return WarmupResult{std::move(model), std::move(ledger)};
}

/// Central-difference gradient of the batch mean CE.
inline Eigen::VectorXd finite_diff_gradient(const Model& model, const Eigen::MatrixXd& X,
                                            const std::vector<std::size_t>& y, double step = 1e-5) {
    Model probe = model;
    Eigen::VectorXd grad(static_cast<Eigen::Index>(model.param_count()));
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
        const double saved = probe.params()[k];
        probe.params()[k] = saved + step;
        const double up = batch_mean_ce(probe, X, y);
        probe.params()[k] = saved - step;
        const double down = batch_mean_ce(probe, X, y);
        probe.params()[k] = saved;
        grad[k] = (up - down) / (2.0 * step);
    }
    return grad;
}

/// Largest per-coordinate relative disagreement between two gradients,
/// measured as |a - b| / max(1, |a|, |b|).
inline double max_relative_gradient_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw ParameterError("max_relative_gradient_error: size mismatch");
    double worst = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
        const double denom = std::max({1.0, std::abs(a[k]), std::abs(b[k])});
        worst = std::max(worst, std::abs(a[k] - b[k]) / denom);
    }
    return worst;
}

/// Compare the analytic batch-CE gradient against central differences on
/// every coordinate. Guards the hand-written backprop; batches are capped at
/// 8 examples to keep the sweep cheap.
inline bool finite_diff_gradient_check(const Model& model, const Eigen::MatrixXd& X,
                                       const std::vector<std::size_t>& y, double tolerance,
                                       double step = 1e-5) {
    if (y.size() > 8) throw ParameterError("finite_diff_gradient_check: batch must have <= 8 examples");
    Eigen::VectorXd analytic;
    batch_mean_ce_with_grad(model, X, y, analytic);
    const Eigen::VectorXd numeric = finite_diff_gradient(model, X, y, step);
    return max_relative_gradient_error(analytic, numeric) <= tolerance;
}

/// Restrict a dataset to the given example ids (re-indexed from 0).
inline NoisyDataset subset_dataset(const NoisyDataset& data, const std::vector<std::size_t>& ids) {
    NoisyDataset out;
    out.features.resize(static_cast<Eigen::Index>(ids.size()),
                        static_cast<Eigen::Index>(data.dim()));
    out.y_true.reserve(ids.size());
    out.y_obs.reserve(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] >= data.size()) throw LookupError("subset_dataset: id out of range");
        out.features.row(static_cast<Eigen::Index>(k)) =
            data.features.row(static_cast<Eigen::Index>(ids[k]));
        out.y_true.push_back(data.y_true[ids[k]]);
        out.y_obs.push_back(data.y_obs[ids[k]]);
    }
    return out;
}

} // namespace noisylab

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/noise_model.hpp"
#include "noisylab/selection.hpp"
#include "noisylab/trainer.hpp"

namespace noisylab {

/// Scale values into [0, 1] by dividing by the maximum. All-zero input stays
/// all zero.
inline Eigen::VectorXd normalize_losses(const Eigen::VectorXd& values) {
    if (values.size() == 0) return values;
    const double max = values.maxCoeff();
    if (max < 0.0) throw ParameterError("normalize_losses: values must be nonnegative");
    if (max == 0.0) return Eigen::VectorXd::Zero(values.size());
    return values / max;
}

struct KDEResult {
    Eigen::VectorXd grid;
    Eigen::VectorXd density;
    double bandwidth = 0.0;
    std::size_t count = 0;

    /// Trapezoid integral of the density over the grid.
    double integral() const {
        double total = 0.0;
        for (Eigen::Index i = 1; i < grid.size(); ++i)
            total += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
        return total;
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "grid,density\n";
        for (Eigen::Index i = 0; i < grid.size(); ++i)
            out << io::num(grid[i]) << ',' << io::num(density[i]) << '\n';
        return out.str();
    }
};

/// Gaussian kernel density estimate evaluated on the given grid.
inline KDEResult kde(const Eigen::VectorXd& samples, double h, const Eigen::VectorXd& grid) {
    if (samples.size() < 1) throw ParameterError("kde: need at least one sample");
    if (!(h > 0.0)) throw ParameterError("kde: bandwidth must be positive");
    KDEResult result;
    result.grid = grid;
    result.bandwidth = h;
    result.count = static_cast<std::size_t>(samples.size());
    result.density.resize(grid.size());
    const double norm = 1.0 / (static_cast<double>(samples.size()) * std::sqrt(2.0 * M_PI * h * h));
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < samples.size(); ++i) {
            const double z = (grid[g] - samples[i]) / h;
            acc += std::exp(-0.5 * z * z);
        }
        result.density[g] = norm * acc;
    }
    return result;
}

/// Uniform grid spanning the sample range extended by 5 bandwidths on each
/// side, wide enough for the density to integrate to 1 within 1e-3.
inline Eigen::VectorXd kde_grid(const Eigen::VectorXd& samples, double h, std::size_t points) {
    if (samples.size() < 1) throw ParameterError("kde_grid: need at least one sample");
    if (!(h > 0.0)) throw ParameterError("kde_grid: bandwidth must be positive");
    if (points < 2) throw ParameterError("kde_grid: need at least two grid points");
    const double lo = samples.minCoeff() - 5.0 * h;
    const double hi = samples.maxCoeff() + 5.0 * h;
    return Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(points), lo, hi);
}

/// Silverman's rule of thumb: 1.06 sigma N^(-1/5), with a small fallback when
/// the samples are constant.
inline double silverman_bandwidth(const Eigen::VectorXd& samples) {
    if (samples.size() < 1) throw ParameterError("silverman_bandwidth: need at least one sample");
    const double n = static_cast<double>(samples.size());
    const double mean = samples.mean();
    double var = 0.0;
    for (Eigen::Index i = 0; i < samples.size(); ++i) var += (samples[i] - mean) * (samples[i] - mean);
    var = samples.size() > 1 ? var / (n - 1.0) : 0.0;
    const double sigma = std::sqrt(var);
    const double h = 1.06 * sigma * std::pow(n, -0.2);
    return h > 0.0 ? h : 1e-3;
}

/// Mean losses partitioned by whether the observed label is correct.
inline std::pair<std::vector<double>, std::vector<double>> loss_split_by_correctness(
    const LossLedger& ledger, const NoisyDataset& data) {
    if (ledger.size() != data.size())
        throw ParameterError("loss_split_by_correctness: ledger does not cover the dataset");
    std::vector<double> correct;
    std::vector<double> incorrect;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (data.y_obs[i] == data.y_true[i] ? correct : incorrect).push_back(ledger.mean_loss(i));
    }
    return {std::move(correct), std::move(incorrect)};
}

/// Per observed class, the average mean loss of its correct and incorrect
/// examples. A side with no examples reports no value.
struct ClassLossMeans {
    std::vector<std::optional<double>> correct;
    std::vector<std::optional<double>> incorrect;
};

inline ClassLossMeans per_class_loss_means(const LossLedger& ledger, const NoisyDataset& data,
                                           std::size_t classes) {
    if (ledger.size() != data.size())
        throw ParameterError("per_class_loss_means: ledger does not cover the dataset");
    std::vector<double> sum_correct(classes, 0.0), sum_incorrect(classes, 0.0);
    std::vector<std::size_t> n_correct(classes, 0), n_incorrect(classes, 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t cls = data.y_obs[i];
        if (cls >= classes) throw ParameterError("per_class_loss_means: observed label out of range");
        if (data.y_obs[i] == data.y_true[i]) {
            sum_correct[cls] += ledger.mean_loss(i);
            ++n_correct[cls];
        } else {
            sum_incorrect[cls] += ledger.mean_loss(i);
            ++n_incorrect[cls];
        }
    }
    ClassLossMeans out;
    out.correct.resize(classes);
    out.incorrect.resize(classes);
    for (std::size_t cls = 0; cls < classes; ++cls) {
        if (n_correct[cls] > 0) out.correct[cls] = sum_correct[cls] / static_cast<double>(n_correct[cls]);
        if (n_incorrect[cls] > 0)
            out.incorrect[cls] = sum_incorrect[cls] / static_cast<double>(n_incorrect[cls]);
    }
    return out;
}

inline ClassLossMeans per_class_loss_means(const LossLedger& ledger, const NoisyDataset& data) {
    std::size_t classes = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        classes = std::max({classes, data.y_obs[i] + 1, data.y_true[i] + 1});
    return per_class_loss_means(ledger, data, classes);
}

/// Test/validation accuracy per epoch. `best` is the test accuracy at the
/// epoch with maximal validation accuracy (the highest test accuracy among
/// tied epochs); `last` is the final epoch's test accuracy.
struct AccuracyTrace {
    std::vector<double> test_accuracy;
    std::vector<double> validation_accuracy;
    double best = 0.0;
    double last = 0.0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["test_accuracy"] = test_accuracy;
        j["validation_accuracy"] = validation_accuracy;
        j["best"] = best;
        j["last"] = last;
        return j;
    }
};

/// Accumulates per-epoch accuracies from a stream of models.
class AccuracyTraceBuilder {
public:
    AccuracyTraceBuilder(Eigen::MatrixXd test_x, std::vector<std::size_t> test_y,
                         Eigen::MatrixXd val_x, std::vector<std::size_t> val_y)
        : test_x_(std::move(test_x)), test_y_(std::move(test_y)), val_x_(std::move(val_x)),
          val_y_(std::move(val_y)) {
        if (test_y_.empty() || val_y_.empty())
            throw ParameterError("accuracy_trace: evaluation sets must be nonempty");
    }

    void observe(const Model& model) {
        observe_values(accuracy(model, test_x_, test_y_), accuracy(model, val_x_, val_y_));
    }

    void observe_values(double test_acc, double val_acc) {
        test_.push_back(test_acc);
        val_.push_back(val_acc);
    }

    AccuracyTrace finalize() const {
        if (test_.empty()) throw ParameterError("accuracy_trace: no epochs observed");
        AccuracyTrace trace;
        trace.test_accuracy = test_;
        trace.validation_accuracy = val_;
        trace.last = test_.back();
        const double max_val = *std::max_element(val_.begin(), val_.end());
        double best = -1.0;
        for (std::size_t t = 0; t < val_.size(); ++t)
            if (val_[t] == max_val) best = std::max(best, test_[t]);
        trace.best = best;
        return trace;
    }

private:
    Eigen::MatrixXd test_x_;
    std::vector<std::size_t> test_y_;
    Eigen::MatrixXd val_x_;
    std::vector<std::size_t> val_y_;
    std::vector<double> test_;
    std::vector<double> val_;
};

struct DistanceSweepConfig {
    std::size_t train_size = 0;
    ModelConfig model;
    SGDConfig sgd;
    double selection_ratio = 0.5; // per-class fixed selection ratio
    std::uint64_t data_seed = 0;
    std::uint64_t noise_seed = 0;
};

struct DistanceSweepRow {
    double fraction = 0.0;
    double loss_gap = 0.0;  // mean incorrect minus mean correct mean-loss
    double precision = 0.0; // fixed-ratio per-class selection precision
};

/// Train on growing prefixes of one noisy sample and report how the
/// correct/incorrect loss gap and the fixed-ratio selection precision change
/// with training-set size.
inline std::vector<DistanceSweepRow> model_distance_sweep(const TaskSpec& task,
                                                          const TransitionMatrix& T,
                                                          const std::vector<double>& fractions,
                                                          const DistanceSweepConfig& cfg) {
    if (cfg.train_size < 1) throw ParameterError("model_distance_sweep: train_size must be positive");
    if (!(cfg.selection_ratio > 0.0 && cfg.selection_ratio <= 1.0))
        throw ParameterError("model_distance_sweep: selection_ratio must lie in (0, 1]");
    for (double f : fractions)
        if (!(f > 0.0 && f <= 1.0))
            throw ParameterError("model_distance_sweep: fractions must lie in (0, 1]");

    const CleanDataset clean = sample_dataset(task, cfg.train_size, cfg.data_seed);
    const NoisyDataset full = corrupt_labels(clean, T, cfg.noise_seed);

    std::vector<DistanceSweepRow> rows;
    for (double fraction : fractions) {
        const auto count = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(cfg.train_size))));
        std::vector<std::size_t> prefix(count);
        std::iota(prefix.begin(), prefix.end(), std::size_t{0});
        const NoisyDataset part = subset_dataset(full, prefix);

        auto trained = train_warmup(part, Model(cfg.model, cfg.sgd.seed), cfg.sgd);
        const auto [correct, incorrect] = loss_split_by_correctness(trained.ledger, part);
        const auto mean_of = [](const std::vector<double>& v) {
            if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
            double acc = 0.0;
            for (double x : v) acc += x;
            return acc / static_cast<double>(v.size());
        };

        const std::size_t classes = T.class_count();
        const auto groups = detail::ids_by_observed_class(part, classes);
        std::vector<std::size_t> budgets(classes);
        for (std::size_t cls = 0; cls < classes; ++cls)
            budgets[cls] = static_cast<std::size_t>(
                std::floor(cfg.selection_ratio * static_cast<double>(groups[cls].size())));
        const SelectionResult fixed =
            detail::select_per_class(groups, trained.ledger.mean_losses(), budgets);

        rows.push_back({fraction, mean_of(incorrect) - mean_of(correct),
                        selection_precision(fixed, part)});
    }
    return rows;
}

} // namespace noisylab

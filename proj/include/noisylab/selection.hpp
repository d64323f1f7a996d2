#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/trainer.hpp"

namespace noisylab {

/// Per-class selection proportion: max{1-(1+beta)eta, (1-beta)(1-eta)},
/// clamped to [0, 1]. Slightly below the clean fraction 1-eta on both the
/// low-noise and high-noise branches.
inline double prop(double eta_i, double beta) {
    if (!(eta_i >= 0.0 && eta_i <= 1.0)) throw ParameterError("prop: eta must lie in [0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("prop: beta must lie in [0, 1]");
    const double value = std::max(1.0 - (1.0 + beta) * eta_i, (1.0 - beta) * (1.0 - eta_i));
    return std::min(1.0, std::max(0.0, value));
}

/// Trade-off knob between class-distribution fidelity (gamma0 = 1) and full
/// data utilization (gamma1). Either a literal value >= 1 or one of the
/// symbolic choices resolved against the computed gamma1.
struct GammaChoice {
    enum class Kind { value, gamma0, midpoint, gamma1 };
    Kind kind = Kind::midpoint;
    double value = 1.0;

    static GammaChoice g0() { return {Kind::gamma0, 1.0}; }
    static GammaChoice mid() { return {Kind::midpoint, 1.0}; }
    static GammaChoice g1() { return {Kind::gamma1, 1.0}; }
    static GammaChoice of(double v) {
        if (!(v >= 1.0)) throw ParameterError("gamma must be >= 1");
        return {Kind::value, v};
    }

    static GammaChoice parse(const std::string& s) {
        if (s == "g0" || s == "gamma0") return g0();
        if (s == "mid" || s == "midpoint") return mid();
        if (s == "g1" || s == "gamma1") return g1();
        try {
            return of(std::stod(s));
        } catch (const std::invalid_argument&) {
            throw ParameterError("cannot parse gamma choice: " + s);
        }
    }

    std::string str() const {
        switch (kind) {
            case Kind::gamma0: return "g0";
            case Kind::midpoint: return "mid";
            case Kind::gamma1: return "g1";
            case Kind::value: return io::num(value);
        }
        return "";
    }
};

struct SelectionConfig {
    double beta = 0.2;
    GammaChoice gamma = GammaChoice::mid();
    Eigen::VectorXd prior; // true class distribution
    Eigen::VectorXd eta;   // per-observed-class noise rates

    void validate() const {
        if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("SelectionConfig: beta must lie in [0, 1]");
        if (gamma.kind == GammaChoice::Kind::value && !(gamma.value >= 1.0))
            throw ParameterError("SelectionConfig: gamma must be >= 1");
        if (prior.size() < 2) throw ParameterError("SelectionConfig: prior must cover all classes");
        if (eta.size() != prior.size()) throw ParameterError("SelectionConfig: eta size mismatch");
        double sum = 0.0;
        for (Eigen::Index i = 0; i < prior.size(); ++i) {
            if (prior[i] < 0.0) throw ParameterError("SelectionConfig: prior entries must be nonnegative");
            sum += prior[i];
            if (!(eta[i] >= 0.0 && eta[i] <= 1.0))
                throw ParameterError("SelectionConfig: eta entries must lie in [0, 1]");
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ParameterError("SelectionConfig: prior must sum to 1");
    }
};

struct BudgetBreakdown {
    double m = 0.0;
    double gamma0 = 1.0;
    double gamma1 = 1.0;
    double gamma_used = 1.0;
    std::vector<double> proportions;
    std::vector<std::size_t> num;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["m"] = m;
        j["gamma0"] = gamma0;
        j["gamma1"] = gamma1;
        j["gamma_used"] = gamma_used;
        j["prop"] = proportions;
        j["num"] = num;
        return j;
    }
};

/// Per-class selection budgets num(i) = floor(min(gamma p_i m, prop(i) n_i))
/// with m = min_i prop(i) n_i / p_i and gamma1 = max_i prop(i) n_i / (p_i m).
inline BudgetBreakdown compute_budgets(const std::vector<std::size_t>& counts,
                                       const SelectionConfig& cfg) {
    cfg.validate();
    const std::size_t c = static_cast<std::size_t>(cfg.prior.size());
    if (counts.size() != c) throw ParameterError("compute_budgets: counts size mismatch");

    BudgetBreakdown out;
    out.proportions.resize(c);
    out.num.resize(c);

    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c; ++i) {
        if (counts[i] < 1)
            throw ParameterError("compute_budgets: class " + std::to_string(i) + " has no examples");
        if (!(cfg.prior[static_cast<Eigen::Index>(i)] > 0.0))
            throw ParameterError("compute_budgets: class " + std::to_string(i) +
                                 " has zero prior mass but nonzero count");
        out.proportions[i] = prop(cfg.eta[static_cast<Eigen::Index>(i)], cfg.beta);
        m = std::min(m, out.proportions[i] * static_cast<double>(counts[i]) /
                            cfg.prior[static_cast<Eigen::Index>(i)]);
    }
    out.m = m;
    out.gamma0 = 1.0;
    out.gamma1 = 1.0;
    if (m > 0.0)
        for (std::size_t i = 0; i < c; ++i)
            out.gamma1 = std::max(out.gamma1, out.proportions[i] * static_cast<double>(counts[i]) /
                                                  (cfg.prior[static_cast<Eigen::Index>(i)] * m));

    switch (cfg.gamma.kind) {
        case GammaChoice::Kind::gamma0: out.gamma_used = out.gamma0; break;
        case GammaChoice::Kind::midpoint: out.gamma_used = 0.5 * (out.gamma0 + out.gamma1); break;
        case GammaChoice::Kind::gamma1: out.gamma_used = out.gamma1; break;
        case GammaChoice::Kind::value: out.gamma_used = cfg.gamma.value; break;
    }

    for (std::size_t i = 0; i < c; ++i) {
        const double cap = out.proportions[i] * static_cast<double>(counts[i]);
        const double share = out.gamma_used * cfg.prior[static_cast<Eigen::Index>(i)] * m;
        // The 1e-9 nudge counters round-off in products of decimal fractions;
        // budget formulas routinely land exactly on integers.
        const double budget = std::floor(std::min(cap, share) + 1e-9);
        out.num[i] = static_cast<std::size_t>(std::max(0.0, budget));
        if (out.num[i] > counts[i])
            throw Error("compute_budgets: internal error, budget exceeds class count");
    }
    return out;
}

/// Chosen ids per observed class. Within each class every selected mean loss
/// is <= every unselected one (ties resolved by ascending id).
struct SelectionResult {
    std::vector<std::vector<std::size_t>> per_class_ids;
    std::vector<std::size_t> num;
    std::vector<double> thresholds; // max selected key per class; NaN when empty

    std::size_t total_selected() const {
        std::size_t total = 0;
        for (const auto& ids : per_class_ids) total += ids.size();
        return total;
    }

    std::vector<std::size_t> all_ids() const {
        std::vector<std::size_t> ids;
        for (const auto& class_ids : per_class_ids)
            ids.insert(ids.end(), class_ids.begin(), class_ids.end());
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        for (std::size_t i = 0; i < per_class_ids.size(); ++i)
            j[std::to_string(i)] = per_class_ids[i];
        return j;
    }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> ids_by_observed_class(const NoisyDataset& data,
                                                                   std::size_t classes) {
    std::vector<std::vector<std::size_t>> groups(classes);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.y_obs[i] >= classes)
            throw ParameterError("selection: observed label out of range");
        groups[data.y_obs[i]].push_back(i);
    }
    return groups;
}

inline SelectionResult select_per_class(const std::vector<std::vector<std::size_t>>& groups,
                                        const Eigen::VectorXd& keys,
                                        const std::vector<std::size_t>& budgets) {
    SelectionResult result;
    result.per_class_ids.resize(groups.size());
    result.num = budgets;
    result.thresholds.assign(groups.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t cls = 0; cls < groups.size(); ++cls) {
        std::vector<std::size_t> ranked = groups[cls];
        std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
            const double ka = keys[static_cast<Eigen::Index>(a)];
            const double kb = keys[static_cast<Eigen::Index>(b)];
            if (ka != kb) return ka < kb;
            return a < b;
        });
        const std::size_t take = std::min(budgets[cls], ranked.size());
        if (take != budgets[cls])
            throw Error("selection: internal error, budget exceeds class population");
        result.per_class_ids[cls].assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take));
        if (take > 0)
            result.thresholds[cls] = keys[static_cast<Eigen::Index>(result.per_class_ids[cls].back())];
    }
    return result;
}

} // namespace detail

/// Reformalized small-loss selection: rank each observed class by mean loss
/// over the warm-up epochs and keep the num(i) smallest.
inline SelectionResult select_rsl(const LossLedger& ledger, const NoisyDataset& data,
                                  const SelectionConfig& cfg) {
    cfg.validate();
    if (ledger.size() != data.size())
        throw ParameterError("select_rsl: ledger does not cover the dataset");
    const std::size_t c = static_cast<std::size_t>(cfg.prior.size());
    const auto groups = detail::ids_by_observed_class(data, c);
    std::vector<std::size_t> counts(c);
    for (std::size_t i = 0; i < c; ++i) counts[i] = groups[i].size();
    const auto budgets = compute_budgets(counts, cfg);
    return detail::select_per_class(groups, ledger.mean_losses(), budgets.num);
}

/// Baseline: one global mean-loss ranking, ignoring class structure.
inline SelectionResult select_global_mean(const LossLedger& ledger, const NoisyDataset& data,
                                          std::size_t total) {
    if (ledger.size() != data.size())
        throw ParameterError("select_global_mean: ledger does not cover the dataset");
    if (total > data.size())
        throw ParameterError("select_global_mean: cannot select more than the dataset size");
    const Eigen::VectorXd keys = ledger.mean_losses();
    std::vector<std::size_t> ranked(data.size());
    std::iota(ranked.begin(), ranked.end(), std::size_t{0});
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        const double ka = keys[static_cast<Eigen::Index>(a)];
        const double kb = keys[static_cast<Eigen::Index>(b)];
        if (ka != kb) return ka < kb;
        return a < b;
    });

    std::size_t classes = 0;
    for (std::size_t y : data.y_obs) classes = std::max(classes, y + 1);
    SelectionResult result;
    result.per_class_ids.resize(classes);
    result.thresholds.assign(classes, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < total; ++k)
        result.per_class_ids[data.y_obs[ranked[k]]].push_back(ranked[k]);
    result.num.resize(classes);
    for (std::size_t cls = 0; cls < classes; ++cls) {
        result.num[cls] = result.per_class_ids[cls].size();
        for (std::size_t id : result.per_class_ids[cls]) {
            const double key = keys[static_cast<Eigen::Index>(id)];
            if (std::isnan(result.thresholds[cls]) || key > result.thresholds[cls])
                result.thresholds[cls] = key;
        }
    }
    return result;
}

/// Ablation baseline: class-by-class ranking by one epoch's loss (0-based
/// epoch index) instead of the mean.
inline SelectionResult select_single_epoch(const LossLedger& ledger, const NoisyDataset& data,
                                           const SelectionConfig& cfg, std::size_t epoch) {
    cfg.validate();
    if (ledger.size() != data.size())
        throw ParameterError("select_single_epoch: ledger does not cover the dataset");
    if (epoch >= ledger.epochs_recorded())
        throw LookupError("select_single_epoch: epoch " + std::to_string(epoch) + " out of range");
    const std::size_t c = static_cast<std::size_t>(cfg.prior.size());
    const auto groups = detail::ids_by_observed_class(data, c);
    std::vector<std::size_t> counts(c);
    for (std::size_t i = 0; i < c; ++i) counts[i] = groups[i].size();
    const auto budgets = compute_budgets(counts, cfg);
    return detail::select_per_class(groups, ledger.losses().col(static_cast<Eigen::Index>(epoch)),
                                    budgets.num);
}

/// Fraction of selected examples whose observed label is the true label.
/// NaN for an empty selection.
inline double selection_precision(const SelectionResult& result, const NoisyDataset& data) {
    std::size_t selected = 0;
    std::size_t correct = 0;
    for (const auto& ids : result.per_class_ids) {
        for (std::size_t id : ids) {
            if (id >= data.size()) throw LookupError("selection_precision: id out of range");
            ++selected;
            correct += data.y_obs[id] == data.y_true[id];
        }
    }
    if (selected == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(correct) / static_cast<double>(selected);
}

} // namespace noisylab

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/noise_model.hpp"
#include "noisylab/synthetic_data.hpp"

namespace noisylab {

/// Outcome of a mechanical theorem check. `counterexamples` is empty exactly
/// when the checked condition holds and the claim verified cleanly.
struct TheoremReport {
    struct Counterexample {
        std::string description;
        std::vector<double> values;
    };

    bool condition_holds = false;
    std::vector<Counterexample> counterexamples;
    std::vector<double> gap_bounds;

    bool ok() const { return counterexamples.empty(); }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["condition_holds"] = condition_holds;
        auto arr = nlohmann::ordered_json::array();
        for (const auto& ce : counterexamples) {
            nlohmann::ordered_json e;
            e["case"] = ce.description;
            e["values"] = ce.values;
            arr.push_back(e);
        }
        j["counterexamples"] = arr;
        j["gap_bounds"] = gap_bounds;
        return j;
    }
};

/// Softmax output of the expected-CE minimizer on the noisy distribution at
/// any point with the given true class: row true_class of T.
inline Eigen::VectorXd oracle_softmax(const TransitionMatrix& T, std::size_t true_class) {
    if (true_class >= T.class_count()) throw ParameterError("oracle_softmax: class out of range");
    return T.row(true_class);
}

inline constexpr double kInfiniteLoss = std::numeric_limits<double>::infinity();

/// Cross-entropy loss of the oracle model on an example with the given true
/// and observed class: -log T(true, observed). A zero transition entry yields
/// the infinite-loss sentinel, which orders above every finite loss.
inline double oracle_ce_loss(const TransitionMatrix& T, std::size_t true_class,
                             std::size_t observed) {
    if (true_class >= T.class_count() || observed >= T.class_count())
        throw ParameterError("oracle_ce_loss: class out of range");
    const double p = T(true_class, observed);
    if (p <= 0.0) return kInfiniteLoss;
    return -std::log(p);
}

/// Expected 0-1 loss on the noisy distribution of a classifier given as its
/// class assignment over the finite space: sum of mass * (1 - T(true, f)).
inline double expected_01_loss(std::span<const std::size_t> classifier,
                               const FiniteInstanceSpace& space, const TransitionMatrix& T) {
    if (classifier.size() != space.size())
        throw ParameterError("expected_01_loss: classifier must cover every point");
    double risk = 0.0;
    for (std::size_t p = 0; p < space.size(); ++p) {
        if (classifier[p] >= T.class_count())
            throw ParameterError("expected_01_loss: class out of range");
        risk += space.masses[p] * (1.0 - T(space.true_classes[p], classifier[p]));
    }
    return risk;
}

namespace detail {

inline std::string classifier_string(const std::vector<std::size_t>& f) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (i > 0) out << ',';
        out << f[i];
    }
    out << ']';
    return out.str();
}

} // namespace detail

/// Brute-force check that the target concept minimizes expected 0-1 loss on
/// the noisy distribution: enumerates all c^points classifiers. Guarded at
/// c^points <= 1e6. When T is row-diagonally dominant, any classifier that
/// beats the target concept, or ties it while differing on positive mass, is
/// a counterexample. When T is not dominant the report lists the offending
/// rows plus any classifier strictly beating the target concept.
inline TheoremReport verify_lemma1(const FiniteInstanceSpace& space, const TransitionMatrix& T) {
    space.validate();
    if (space.classes != T.class_count())
        throw ParameterError("verify_lemma1: class count mismatch");
    const std::size_t c = T.class_count();
    const std::size_t points = space.size();

    double combos = 1.0;
    for (std::size_t p = 0; p < points; ++p) combos *= static_cast<double>(c);
    if (combos > 1e6)
        throw SizeError("verify_lemma1: " + io::num(combos) + " classifiers exceed the 1e6 guard");
    const auto total = static_cast<std::uint64_t>(combos);

    TheoremReport report;
    report.condition_holds = is_row_diag_dominant(T);
    if (!report.condition_holds) {
        for (std::size_t i = 0; i < c; ++i) {
            double max_off = -1.0;
            for (std::size_t j = 0; j < c; ++j)
                if (j != i && T(i, j) > max_off) max_off = T(i, j);
            if (!(T(i, i) > max_off))
                report.counterexamples.push_back(
                    {"row " + std::to_string(i) + " not row-diagonally dominant",
                     {T(i, i), max_off}});
        }
    }

    const double target_risk = expected_01_loss(space.true_classes, space, T);
    constexpr double eps = 1e-12;
    constexpr std::size_t max_listed = 16;

    std::vector<std::size_t> f(points);
    for (std::uint64_t idx = 0; idx < total; ++idx) {
        std::uint64_t rest = idx;
        bool differs_on_mass = false;
        for (std::size_t p = 0; p < points; ++p) {
            f[p] = static_cast<std::size_t>(rest % c);
            rest /= c;
            if (f[p] != space.true_classes[p] && space.masses[p] > 0.0) differs_on_mass = true;
        }
        if (!differs_on_mass) continue;
        const double risk = expected_01_loss(f, space, T);
        const bool beats = risk < target_risk - eps;
        const bool ties = std::abs(risk - target_risk) <= eps;
        if (report.condition_holds) {
            if ((beats || ties) && report.counterexamples.size() < max_listed)
                report.counterexamples.push_back(
                    {"classifier " + detail::classifier_string(f) +
                         (beats ? " beats the target concept" : " ties the target concept"),
                     {risk, target_risk}});
        } else if (beats && report.counterexamples.size() < max_listed) {
            report.counterexamples.push_back(
                {"classifier " + detail::classifier_string(f) + " beats the target concept",
                 {risk, target_risk}});
        }
    }
    return report;
}

/// Check that the classifier induced by the oracle model predicts the true
/// class for every class if and only if T is row-diagonally dominant. The
/// induced prediction for true class i is the argmax of row i.
inline TheoremReport verify_lemma2(const TransitionMatrix& T) {
    const std::size_t c = T.class_count();
    TheoremReport report;
    report.condition_holds = is_row_diag_dominant(T);
    for (std::size_t i = 0; i < c; ++i) {
        double best = -1.0;
        for (std::size_t j = 0; j < c; ++j) best = std::max(best, T(i, j));
        std::vector<std::size_t> argmaxes;
        for (std::size_t j = 0; j < c; ++j)
            if (T(i, j) == best) argmaxes.push_back(j);
        if (argmaxes.size() != 1 || argmaxes[0] != i) {
            report.counterexamples.push_back(
                {"induced classifier misclassifies class " + std::to_string(i) +
                     (argmaxes.size() > 1 ? " (row argmax tied)" : " to class " + std::to_string(argmaxes[0])),
                 {T(i, i), best}});
        }
    }
    return report;
}

/// Largest model perturbation that provably keeps clean examples below
/// mislabeled ones with the same observed label: (T_oo - T_wo) / 2.
inline double theorem2_epsilon_bound(const TransitionMatrix& T, std::size_t observed,
                                     std::size_t wrong_true) {
    if (observed >= T.class_count() || wrong_true >= T.class_count())
        throw ParameterError("theorem2_epsilon_bound: class out of range");
    if (wrong_true == observed)
        throw ParameterError("theorem2_epsilon_bound: wrong_true must differ from observed");
    return 0.5 * (T(observed, observed) - T(wrong_true, observed));
}

/// Guaranteed loss gap between a clean and a mislabeled example when the
/// model is epsilon-close to the oracle: log((T_oo - eps) / (T_wo + eps)).
inline double theorem2_gap_lower_bound(const TransitionMatrix& T, std::size_t observed,
                                       std::size_t wrong_true, double epsilon) {
    const double bound = theorem2_epsilon_bound(T, observed, wrong_true);
    if (!(epsilon >= 0.0) || !(epsilon < bound))
        throw DomainError("theorem2_gap_lower_bound: epsilon must lie in [0, bound)");
    return std::log((T(observed, observed) - epsilon) / (T(wrong_true, observed) + epsilon));
}

/// Worst-case epsilon-perturbation of the oracle outputs: subtract epsilon
/// from the clean example's observed-label coordinate and add it to the
/// mislabeled one's, clamped to (0, 1]. Verifies that the loss ordering holds
/// exactly when epsilon is strictly below the bound, and that the realized
/// gap meets the guaranteed lower bound.
inline TheoremReport verify_theorem2_adversarial(const TransitionMatrix& T, std::size_t observed,
                                                 std::size_t wrong_true, double epsilon) {
    if (!(epsilon >= 0.0))
        throw ParameterError("verify_theorem2_adversarial: epsilon must be nonnegative");
    const double bound = theorem2_epsilon_bound(T, observed, wrong_true);
    constexpr double floor = 1e-12;
    const auto clamp = [&](double v) { return std::min(1.0, std::max(floor, v)); };
    const double p_correct = clamp(T(observed, observed) - epsilon);
    const double p_incorrect = clamp(T(wrong_true, observed) + epsilon);
    const double loss_correct = -std::log(p_correct);
    const double loss_incorrect = -std::log(p_incorrect);
    const bool ordering_holds = loss_correct < loss_incorrect;

    TheoremReport report;
    report.condition_holds = epsilon < bound;
    if (report.condition_holds) {
        const double gap_bound = theorem2_gap_lower_bound(T, observed, wrong_true, epsilon);
        const double realized = loss_incorrect - loss_correct;
        report.gap_bounds = {gap_bound, realized};
        if (!ordering_holds)
            report.counterexamples.push_back(
                {"ordering violated below the bound", {epsilon, bound, loss_correct, loss_incorrect}});
        if (realized < gap_bound - 1e-12)
            report.counterexamples.push_back(
                {"realized gap below the guaranteed bound", {realized, gap_bound}});
    } else {
        report.counterexamples.push_back(
            {"epsilon at or above the bound; worst case orders the mislabeled example "
             "at or below the clean one",
             {epsilon, bound, loss_correct, loss_incorrect}});
        if (ordering_holds)
            report.counterexamples.push_back(
                {"unexpected: worst case preserved the ordering above the bound",
                 {epsilon, bound, loss_correct, loss_incorrect}});
    }
    return report;
}

/// Oracle CE loss ordering over every (clean, mislabeled) class pair sharing
/// an observed label. Under both-sided diagonal dominance the clean loss must
/// be strictly smaller in every pair.
inline TheoremReport verify_theorem1(const TransitionMatrix& T) {
    const std::size_t c = T.class_count();
    TheoremReport report;
    report.condition_holds = is_diag_dominant(T);
    for (std::size_t observed = 0; observed < c; ++observed) {
        const double loss_correct = oracle_ce_loss(T, observed, observed);
        for (std::size_t wrong = 0; wrong < c; ++wrong) {
            if (wrong == observed) continue;
            const double loss_incorrect = oracle_ce_loss(T, wrong, observed);
            if (loss_correct < loss_incorrect) continue;
            report.counterexamples.push_back(
                {"ordering violated for observed " + std::to_string(observed) + ", true " +
                     std::to_string(wrong),
                 {loss_correct, loss_incorrect}});
        }
    }
    // Without dominance the theorem claims nothing, but the failed condition
    // itself goes on record even if every pair happened to order correctly.
    if (!report.condition_holds && report.counterexamples.empty())
        report.counterexamples.push_back(
            {"diagonal dominance fails; ordering held anyway for this matrix", {}});
    return report;
}

/// Adversarial epsilon sweep over every class pair with a positive bound:
/// ordering must survive at 0.9x the bound and flip in the worst case at
/// 1.1x the bound.
inline TheoremReport verify_theorem2(const TransitionMatrix& T) {
    const std::size_t c = T.class_count();
    TheoremReport report;
    report.condition_holds = is_diag_dominant(T);
    if (!report.condition_holds) {
        report.counterexamples.push_back({"diagonal dominance fails; no guarantee to check", {}});
        return report;
    }
    for (std::size_t observed = 0; observed < c; ++observed) {
        for (std::size_t wrong = 0; wrong < c; ++wrong) {
            if (wrong == observed) continue;
            const double bound = theorem2_epsilon_bound(T, observed, wrong);
            if (!(bound > 0.0)) continue;
            const auto inside = verify_theorem2_adversarial(T, observed, wrong, 0.9 * bound);
            for (const auto& ce : inside.counterexamples) report.counterexamples.push_back(ce);
            if (!inside.gap_bounds.empty()) report.gap_bounds.push_back(inside.gap_bounds.front());
            const auto outside = verify_theorem2_adversarial(T, observed, wrong, 1.1 * bound);
            for (const auto& ce : outside.counterexamples)
                if (ce.description.rfind("unexpected", 0) == 0)
                    report.counterexamples.push_back(ce);
        }
    }
    return report;
}

} // namespace noisylab

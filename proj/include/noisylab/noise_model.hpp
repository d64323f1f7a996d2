#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/io.hpp"
#include "noisylab/rng.hpp"
#include "noisylab/synthetic_data.hpp"

namespace noisylab {

/// Row-stochastic class-conditional noise matrix: entry (i, j) is the
/// probability that a true class-i label is observed as class j.
///
/// Construction validates entries in [0, 1] and normalizes rows whose sums
/// are within 1e-9 of 1; anything further off is rejected. After
/// construction every row sums to 1 within 1e-12.
class TransitionMatrix {
public:
    static TransitionMatrix from_matrix(Eigen::MatrixXd entries) {
        if (entries.rows() != entries.cols() || entries.rows() < 2)
            throw ParameterError("TransitionMatrix: need a square matrix with c >= 2");
        for (Eigen::Index i = 0; i < entries.rows(); ++i) {
            double sum = 0.0;
            for (Eigen::Index j = 0; j < entries.cols(); ++j) {
                const double v = entries(i, j);
                if (!(v >= 0.0 && v <= 1.0))
                    throw ParameterError("TransitionMatrix: entries must lie in [0, 1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw ParameterError("TransitionMatrix: row " + std::to_string(i) +
                                     " sums to " + io::num(sum) + ", not 1");
            entries.row(i) /= sum;
        }
        return TransitionMatrix(std::move(entries));
    }

    static TransitionMatrix identity(std::size_t classes) {
        return from_matrix(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(classes),
                                                     static_cast<Eigen::Index>(classes)));
    }

    std::size_t class_count() const { return static_cast<std::size_t>(entries_.rows()); }

    double operator()(std::size_t i, std::size_t j) const {
        return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

    Eigen::VectorXd row(std::size_t i) const {
        return entries_.row(static_cast<Eigen::Index>(i)).transpose();
    }

    const Eigen::MatrixXd& entries() const { return entries_; }

    /// Row-major CSV, one row per line, no header.
    std::string to_csv() const {
        std::ostringstream out;
        for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
            for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
                if (j > 0) out << ',';
                out << io::num(entries_(i, j));
            }
            out << '\n';
        }
        return out.str();
    }

private:
    explicit TransitionMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {}
    Eigen::MatrixXd entries_;
};

enum class NoiseKind { uniform, pairwise, structured };

inline std::string to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::uniform: return "uniform";
        case NoiseKind::pairwise: return "pairwise";
        case NoiseKind::structured: return "structured";
    }
    throw ParameterError("unknown noise kind");
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "uniform") return NoiseKind::uniform;
    if (s == "pairwise") return NoiseKind::pairwise;
    if (s == "structured") return NoiseKind::structured;
    throw ParameterError("unknown noise kind: " + s);
}

/// Declarative description of a noise channel.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::uniform;
    double r = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> structured_map;

    void validate() const {
        if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("NoiseSpec: r must lie in [0, 1]");
        if (kind != NoiseKind::structured && !structured_map.empty())
            throw ParameterError("NoiseSpec: flip map only valid for structured noise");
        std::set<std::size_t> sources;
        for (const auto& [s, t] : structured_map) {
            if (s == t) throw ParameterError("NoiseSpec: flip target must differ from source");
            if (!sources.insert(s).second)
                throw ParameterError("NoiseSpec: duplicate flip source " + std::to_string(s));
        }
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["kind"] = to_string(kind);
        j["r"] = r;
        auto map = nlohmann::ordered_json::array();
        for (const auto& [s, t] : structured_map) map.push_back({s, t});
        j["map"] = map;
        return j;
    }

    static NoiseSpec from_json(const nlohmann::json& j) {
        NoiseSpec spec;
        spec.kind = noise_kind_from_string(j.at("kind").get<std::string>());
        spec.r = j.at("r").get<double>();
        if (j.contains("map")) {
            for (const auto& pair : j.at("map")) {
                if (!pair.is_array() || pair.size() != 2)
                    throw ParameterError("NoiseSpec: map entries must be [source, target] pairs");
                spec.structured_map.emplace_back(pair[0].get<std::size_t>(),
                                                 pair[1].get<std::size_t>());
            }
        }
        spec.validate();
        return spec;
    }
};

/// Each label flips to a class drawn uniformly over all c classes (self
/// included) with probability r: diagonal 1-r+r/c, off-diagonal r/c.
inline TransitionMatrix build_uniform(std::size_t classes, double r) {
    if (classes < 2) throw ParameterError("build_uniform: need at least 2 classes");
    if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("build_uniform: r must lie in [0, 1]");
    const auto c = static_cast<Eigen::Index>(classes);
    const double off = r / static_cast<double>(classes);
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(c, c, off);
    m.diagonal().setConstant(1.0 - r + off);
    return TransitionMatrix::from_matrix(std::move(m));
}

/// Each label flips circularly to the next class with probability r.
inline TransitionMatrix build_pairwise(std::size_t classes, double r) {
    if (classes < 2) throw ParameterError("build_pairwise: need at least 2 classes");
    if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("build_pairwise: r must lie in [0, 1]");
    const auto c = static_cast<Eigen::Index>(classes);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(c, c);
    for (Eigen::Index i = 0; i < c; ++i) {
        m(i, i) = 1.0 - r;
        m(i, (i + 1) % c) = r;
    }
    return TransitionMatrix::from_matrix(std::move(m));
}

/// Each (source, target) pair flips source -> target with probability r;
/// classes that are not a source keep their labels.
inline TransitionMatrix build_structured(std::size_t classes, double r,
                                         const std::vector<std::pair<std::size_t, std::size_t>>& map) {
    if (classes < 2) throw ParameterError("build_structured: need at least 2 classes");
    if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("build_structured: r must lie in [0, 1]");
    NoiseSpec spec{NoiseKind::structured, r, map};
    spec.validate();
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(classes),
                                                  static_cast<Eigen::Index>(classes));
    for (const auto& [s, t] : map) {
        if (s >= classes || t >= classes)
            throw ParameterError("build_structured: flip class out of range");
        m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = 1.0 - r;
        m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = r;
    }
    return TransitionMatrix::from_matrix(std::move(m));
}

inline TransitionMatrix build_from_spec(std::size_t classes, const NoiseSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case NoiseKind::uniform: return build_uniform(classes, spec.r);
        case NoiseKind::pairwise: return build_pairwise(classes, spec.r);
        case NoiseKind::structured: return build_structured(classes, spec.r, spec.structured_map);
    }
    throw ParameterError("build_from_spec: unknown noise kind");
}

/// True iff every diagonal entry strictly exceeds all other entries in its row.
inline bool is_row_diag_dominant(const TransitionMatrix& T) {
    const std::size_t c = T.class_count();
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j)
            if (j != i && !(T(i, i) > T(i, j))) return false;
    return true;
}

/// True iff every diagonal entry strictly exceeds all off-diagonal entries
/// in both its row and its column.
inline bool is_diag_dominant(const TransitionMatrix& T) {
    const std::size_t c = T.class_count();
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j)
            if (j != i && (!(T(i, i) > T(i, j)) || !(T(i, i) > T(j, i)))) return false;
    return true;
}

/// Draw each observed label independently from row y_true of T.
inline NoisyDataset corrupt_labels(const CleanDataset& clean, const TransitionMatrix& T,
                                   std::uint64_t seed) {
    const std::size_t c = T.class_count();
    for (std::size_t y : clean.y_true)
        if (y >= c)
            throw ParameterError("corrupt_labels: label " + std::to_string(y) +
                                 " outside the matrix's " + std::to_string(c) + " classes");
    Rng rng(rng::derive(seed, "corrupt"));
    NoisyDataset noisy;
    noisy.features = clean.features;
    noisy.y_true = clean.y_true;
    noisy.y_obs.resize(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const std::size_t y = clean.y_true[i];
        const double u = rng.uniform01();
        double acc = 0.0;
        std::size_t drawn = c - 1;
        for (std::size_t j = 0; j < c; ++j) {
            acc += T(y, j);
            if (u < acc) {
                drawn = j;
                break;
            }
        }
        noisy.y_obs[i] = drawn;
    }
    return noisy;
}

/// Posterior probability that an example observed as class i is mislabeled,
/// under a known class prior: eta_i = 1 - T_ii p_i / sum_j T_ji p_j.
inline Eigen::VectorXd observed_class_noise_rates(const TransitionMatrix& T,
                                                  const Eigen::VectorXd& prior) {
    const std::size_t c = T.class_count();
    if (static_cast<std::size_t>(prior.size()) != c)
        throw ParameterError("observed_class_noise_rates: prior size mismatch");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < prior.size(); ++i) {
        if (prior[i] < 0.0)
            throw ParameterError("observed_class_noise_rates: prior entries must be nonnegative");
        sum += prior[i];
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ParameterError("observed_class_noise_rates: prior must sum to 1");

    Eigen::VectorXd eta(static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < c; ++i) {
        double observed_mass = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            observed_mass += T(j, i) * prior[static_cast<Eigen::Index>(j)];
        if (observed_mass <= 0.0)
            throw DomainError("observed_class_noise_rates: class " + std::to_string(i) +
                              " has zero observed mass, rate undefined");
        eta[static_cast<Eigen::Index>(i)] =
            1.0 - T(i, i) * prior[static_cast<Eigen::Index>(i)] / observed_mass;
    }
    return eta;
}

} // namespace noisylab

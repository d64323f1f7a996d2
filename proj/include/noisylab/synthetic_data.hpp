#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "noisylab/errors.hpp"
#include "noisylab/io.hpp"
#include "noisylab/rng.hpp"

namespace noisylab {

/// A Gaussian-mixture classification task with a known target concept:
/// the label of any point is the index of its nearest centroid.
struct TaskSpec {
    std::size_t classes = 0;
    std::size_t dim = 0;
    Eigen::MatrixXd centroids;    // classes x dim, one row per class
    double covariance_scale = 1.0;
    Eigen::VectorXd prior;        // classes entries, sums to 1

    void validate() const {
        if (classes < 2) throw ParameterError("TaskSpec: need at least 2 classes");
        if (dim < 1) throw ParameterError("TaskSpec: need at least 1 feature dimension");
        if (static_cast<std::size_t>(centroids.rows()) != classes ||
            static_cast<std::size_t>(centroids.cols()) != dim)
            throw ParameterError("TaskSpec: centroid matrix shape mismatch");
        if (covariance_scale < 0.0)
            throw ParameterError("TaskSpec: covariance_scale must be nonnegative");
        if (static_cast<std::size_t>(prior.size()) != classes)
            throw ParameterError("TaskSpec: prior size mismatch");
        double sum = 0.0;
        for (Eigen::Index i = 0; i < prior.size(); ++i) {
            if (prior[i] < 0.0) throw ParameterError("TaskSpec: prior entries must be nonnegative");
            sum += prior[i];
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw ParameterError("TaskSpec: prior must sum to 1 within 1e-12");
        for (std::size_t a = 0; a < classes; ++a)
            for (std::size_t b = a + 1; b < classes; ++b)
                if ((centroids.row(a) - centroids.row(b)).norm() == 0.0)
                    throw ParameterError("TaskSpec: centroids must be pairwise distinct");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["classes"] = classes;
        j["dim"] = dim;
        std::vector<std::vector<double>> rows(classes);
        for (std::size_t i = 0; i < classes; ++i) {
            rows[i].assign(centroids.row(i).begin(), centroids.row(i).end());
        }
        j["centroids"] = rows;
        j["covariance_scale"] = covariance_scale;
        j["prior"] = std::vector<double>(prior.begin(), prior.end());
        return j;
    }

    static TaskSpec from_json(const nlohmann::json& j) {
        TaskSpec task;
        task.classes = j.at("classes").get<std::size_t>();
        task.dim = j.at("dim").get<std::size_t>();
        const auto rows = j.at("centroids").get<std::vector<std::vector<double>>>();
        task.centroids.resize(static_cast<Eigen::Index>(rows.size()),
                              rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != task.dim) throw ParameterError("TaskSpec: ragged centroid rows");
            for (std::size_t k = 0; k < rows[i].size(); ++k)
                task.centroids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
        task.covariance_scale = j.at("covariance_scale").get<double>();
        const auto prior = j.at("prior").get<std::vector<double>>();
        task.prior = Eigen::Map<const Eigen::VectorXd>(prior.data(), static_cast<Eigen::Index>(prior.size()));
        task.validate();
        return task;
    }
};

/// Examples with known true labels. Example ids are the row indices.
struct CleanDataset {
    Eigen::MatrixXd features;           // n x dim
    std::vector<std::size_t> y_true;

    std::size_t size() const { return y_true.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

/// A clean dataset whose labels were passed through a noise channel.
/// y_true is retained for evaluation only; training consumes y_obs.
struct NoisyDataset {
    Eigen::MatrixXd features;
    std::vector<std::size_t> y_true;
    std::vector<std::size_t> y_obs;

    std::size_t size() const { return y_obs.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

/// Discretized instance space for brute-force risk computations. Points are
/// identified by index and carry a true class and a probability mass.
struct FiniteInstanceSpace {
    std::size_t classes = 0;
    std::vector<std::size_t> true_classes;
    std::vector<double> masses;

    std::size_t size() const { return true_classes.size(); }

    void validate() const {
        if (classes < 2) throw ParameterError("FiniteInstanceSpace: need at least 2 classes");
        if (true_classes.size() != masses.size())
            throw ParameterError("FiniteInstanceSpace: size mismatch");
        double sum = 0.0;
        for (std::size_t i = 0; i < masses.size(); ++i) {
            if (masses[i] < 0.0) throw ParameterError("FiniteInstanceSpace: masses must be nonnegative");
            if (true_classes[i] >= classes)
                throw ParameterError("FiniteInstanceSpace: class out of range");
            sum += masses[i];
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ParameterError("FiniteInstanceSpace: masses must sum to 1");
    }
};

/// Class of the nearest centroid (Euclidean); ties go to the smallest index.
inline std::size_t target_concept(const TaskSpec& task, const Eigen::VectorXd& x) {
    if (static_cast<std::size_t>(x.size()) != task.dim)
        throw ParameterError("target_concept: feature dimension mismatch");
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < task.classes; ++k) {
        const double d = (task.centroids.row(static_cast<Eigen::Index>(k)).transpose() - x).squaredNorm();
        if (d < best_dist) {
            best_dist = d;
            best = k;
        }
    }
    return best;
}

namespace detail {

// c centroids with pairwise distance exactly `edge`: vertices of a regular
// simplex expressed in the Helmert basis of the sum-zero hyperplane.
inline Eigen::MatrixXd simplex_centroids(std::size_t c, std::size_t d, double edge) {
    const auto ci = static_cast<Eigen::Index>(c);
    Eigen::MatrixXd centered = Eigen::MatrixXd::Identity(ci, ci);
    centered.array() -= 1.0 / static_cast<double>(c);
    Eigen::MatrixXd basis(ci, ci - 1);
    for (Eigen::Index k = 0; k < ci - 1; ++k) {
        const double scale = 1.0 / std::sqrt(static_cast<double>((k + 1) * (k + 2)));
        for (Eigen::Index row = 0; row < ci; ++row) {
            if (row <= k) basis(row, k) = scale;
            else if (row == k + 1) basis(row, k) = -static_cast<double>(k + 1) * scale;
            else basis(row, k) = 0.0;
        }
    }
    Eigen::MatrixXd coords = centered * basis * (edge / std::sqrt(2.0));
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ci, static_cast<Eigen::Index>(d));
    out.leftCols(ci - 1) = coords;
    return out;
}

inline Eigen::MatrixXd random_rotation(std::size_t d, Rng& rng) {
    const auto di = static_cast<Eigen::Index>(d);
    Eigen::MatrixXd g(di, di);
    for (Eigen::Index i = 0; i < di; ++i)
        for (Eigen::Index j = 0; j < di; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // Fix the sign convention so Q is a deterministic function of g.
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < di; ++i)
        if (r(i, i) < 0.0) q.col(i) = -q.col(i);
    return q;
}

} // namespace detail

/// Place c class centroids with all pairwise distances >= separation, then
/// apply a seeded random rotation. For dim >= classes-1 the centroids form a
/// regular simplex with edge exactly `separation`; in lower dimensions they
/// are spread along a random line with spacing `separation`.
inline TaskSpec make_gaussian_task(std::size_t classes,
                                   std::size_t dim,
                                   double separation,
                                   double covariance_scale,
                                   const Eigen::VectorXd& prior,
                                   std::uint64_t seed) {
    if (classes < 2) throw ParameterError("make_gaussian_task: need at least 2 classes");
    if (dim < 1) throw ParameterError("make_gaussian_task: need at least 1 dimension");
    if (!(separation > 0.0)) throw ParameterError("make_gaussian_task: separation must be positive");
    if (covariance_scale < 0.0)
        throw ParameterError("make_gaussian_task: covariance_scale must be nonnegative");

    Rng rng(rng::derive(seed, "centroids"));
    TaskSpec task;
    task.classes = classes;
    task.dim = dim;
    task.covariance_scale = covariance_scale;
    task.prior = prior;

    if (dim >= classes - 1) {
        task.centroids = detail::simplex_centroids(classes, dim, separation) *
                         detail::random_rotation(dim, rng).transpose();
    } else {
        Eigen::VectorXd direction(static_cast<Eigen::Index>(dim));
        double norm = 0.0;
        do {
            for (Eigen::Index i = 0; i < direction.size(); ++i) direction[i] = rng.normal();
            norm = direction.norm();
        } while (norm == 0.0);
        direction /= norm;
        task.centroids.resize(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
        const double offset = (static_cast<double>(classes) - 1.0) / 2.0;
        for (std::size_t k = 0; k < classes; ++k)
            task.centroids.row(static_cast<Eigen::Index>(k)) =
                direction.transpose() * ((static_cast<double>(k) - offset) * separation);
    }
    task.validate();
    return task;
}

inline TaskSpec make_gaussian_task(std::size_t classes,
                                   std::size_t dim,
                                   double separation,
                                   double covariance_scale,
                                   std::uint64_t seed) {
    return make_gaussian_task(classes, dim, separation, covariance_scale,
                              Eigen::VectorXd::Constant(static_cast<Eigen::Index>(classes),
                                                        1.0 / static_cast<double>(classes)),
                              seed);
}

/// Draw n examples: class from the prior, features from a spherical Gaussian
/// around the class centroid. Points whose nearest centroid is not the drawn
/// class are resampled, so y_true always equals target_concept(task, x).
inline CleanDataset sample_dataset(const TaskSpec& task, std::size_t n, std::uint64_t seed) {
    task.validate();
    if (n < 1) throw ParameterError("sample_dataset: n must be at least 1");
    Rng rng(rng::derive(seed, "dataset"));
    std::vector<double> prior(task.prior.begin(), task.prior.end());

    CleanDataset data;
    data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(task.dim));
    data.y_true.resize(n);
    constexpr std::size_t max_attempts = 10000;
    Eigen::VectorXd x(static_cast<Eigen::Index>(task.dim));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = rng.categorical(prior);
        std::size_t attempt = 0;
        while (true) {
            for (Eigen::Index j = 0; j < x.size(); ++j)
                x[j] = task.centroids(static_cast<Eigen::Index>(k), j) +
                       task.covariance_scale * rng.normal();
            if (target_concept(task, x) == k) break;
            if (++attempt >= max_attempts)
                throw ParameterError("sample_dataset: could not realize an example of class " +
                                     std::to_string(k));
        }
        data.features.row(static_cast<Eigen::Index>(i)) = x.transpose();
        data.y_true[i] = k;
    }
    return data;
}

/// CSV with header id,x_0..x_{d-1},y_true,y_obs.
inline std::string dataset_to_csv(const NoisyDataset& data) {
    std::ostringstream out;
    out << "id";
    for (std::size_t j = 0; j < data.dim(); ++j) out << ",x_" << j;
    out << ",y_true,y_obs\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << i;
        for (std::size_t j = 0; j < data.dim(); ++j)
            out << ',' << io::num(data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        out << ',' << data.y_true[i] << ',' << data.y_obs[i] << '\n';
    }
    return out.str();
}

inline std::string dataset_to_csv(const CleanDataset& data) {
    NoisyDataset noisy{data.features, data.y_true, data.y_true};
    return dataset_to_csv(noisy);
}

inline NoisyDataset dataset_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw ParameterError("dataset_from_csv: empty input");
    std::size_t columns = 1;
    for (char ch : line) columns += (ch == ',');
    if (columns < 4) throw ParameterError("dataset_from_csv: malformed header");
    const std::size_t dim = columns - 3;

    std::vector<std::vector<double>> rows;
    NoisyDataset data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string field;
        std::vector<std::string> parts;
        while (std::getline(fields, field, ',')) parts.push_back(field);
        if (parts.size() != columns) throw ParameterError("dataset_from_csv: ragged row");
        std::vector<double> x(dim);
        for (std::size_t j = 0; j < dim; ++j) x[j] = std::stod(parts[1 + j]);
        rows.push_back(std::move(x));
        data.y_true.push_back(std::stoul(parts[1 + dim]));
        data.y_obs.push_back(std::stoul(parts[2 + dim]));
    }
    data.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j)
            data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return data;
}

} // namespace noisylab

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "noisylab/analysis.hpp"
#include "noisylab/errors.hpp"
#include "noisylab/io.hpp"
#include "noisylab/noise_model.hpp"
#include "noisylab/oracle.hpp"
#include "noisylab/selection.hpp"
#include "noisylab/synthetic_data.hpp"
#include "noisylab/trainer.hpp"
#include "noisylab/weighted_ssl.hpp"

namespace noisylab {

struct TaskConfig {
    std::size_t classes = 4;
    std::size_t dim = 8;
    double separation = 6.0;
    double covariance_scale = 1.0;
    std::vector<double> prior;  // empty = uniform
    std::size_t train_size = 4000;
    std::size_t test_size = 2000;
    std::size_t val_size = 1000;
    double train_fraction = 1.0; // prefix of the noisy training set actually used

    Eigen::VectorXd prior_vector() const {
        if (prior.empty())
            return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(classes),
                                             1.0 / static_cast<double>(classes));
        return Eigen::Map<const Eigen::VectorXd>(prior.data(), static_cast<Eigen::Index>(prior.size()));
    }

    void validate() const {
        if (classes < 2) throw ParameterError("task: need at least 2 classes");
        if (dim < 1) throw ParameterError("task: need at least 1 dimension");
        if (!(separation > 0.0)) throw ParameterError("task: separation must be positive");
        if (covariance_scale < 0.0) throw ParameterError("task: covariance_scale must be nonnegative");
        if (!prior.empty() && prior.size() != classes)
            throw ParameterError("task: prior size mismatch");
        if (train_size < 1 || test_size < 1 || val_size < 1)
            throw ParameterError("task: dataset sizes must be positive");
        if (!(train_fraction > 0.0 && train_fraction <= 1.0))
            throw ParameterError("task: train_fraction must lie in (0, 1]");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["classes"] = classes;
        j["dim"] = dim;
        j["separation"] = separation;
        j["covariance_scale"] = covariance_scale;
        const Eigen::VectorXd p = prior_vector();
        j["prior"] = std::vector<double>(p.begin(), p.end());
        j["train_size"] = train_size;
        j["test_size"] = test_size;
        j["val_size"] = val_size;
        j["train_fraction"] = train_fraction;
        return j;
    }

    static TaskConfig from_json(const nlohmann::json& j) {
        TaskConfig t;
        if (j.contains("classes")) t.classes = j.at("classes").get<std::size_t>();
        if (j.contains("dim")) t.dim = j.at("dim").get<std::size_t>();
        if (j.contains("separation")) t.separation = j.at("separation").get<double>();
        if (j.contains("covariance_scale")) t.covariance_scale = j.at("covariance_scale").get<double>();
        if (j.contains("prior")) t.prior = j.at("prior").get<std::vector<double>>();
        if (j.contains("train_size")) t.train_size = j.at("train_size").get<std::size_t>();
        if (j.contains("test_size")) t.test_size = j.at("test_size").get<std::size_t>();
        if (j.contains("val_size")) t.val_size = j.at("val_size").get<std::size_t>();
        if (j.contains("train_fraction")) t.train_fraction = j.at("train_fraction").get<double>();
        t.validate();
        return t;
    }
};

/// Independent seeds so one source of randomness can be held fixed while
/// another varies.
struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t noise = 2;
    std::uint64_t train = 3;
    std::uint64_t ssl = 4;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["data"] = data;
        j["noise"] = noise;
        j["train"] = train;
        j["ssl"] = ssl;
        return j;
    }

    static Seeds from_json(const nlohmann::json& j) {
        Seeds s;
        if (j.contains("data")) s.data = j.at("data").get<std::uint64_t>();
        if (j.contains("noise")) s.noise = j.at("noise").get<std::uint64_t>();
        if (j.contains("train")) s.train = j.at("train").get<std::uint64_t>();
        if (j.contains("ssl")) s.ssl = j.at("ssl").get<std::uint64_t>();
        return s;
    }
};

enum class Pipeline { gen, warmup_only, rsl, rsl_wm, verify_theory, sweep, analyze };

inline std::string to_string(Pipeline p) {
    switch (p) {
        case Pipeline::gen: return "gen";
        case Pipeline::warmup_only: return "warmup-only";
        case Pipeline::rsl: return "rsl";
        case Pipeline::rsl_wm: return "rsl-wm";
        case Pipeline::verify_theory: return "verify-theory";
        case Pipeline::sweep: return "sweep";
        case Pipeline::analyze: return "analyze";
    }
    throw ParameterError("unknown pipeline");
}

inline Pipeline pipeline_from_string(const std::string& s) {
    if (s == "gen") return Pipeline::gen;
    if (s == "warmup-only" || s == "train") return Pipeline::warmup_only;
    if (s == "rsl" || s == "select") return Pipeline::rsl;
    if (s == "rsl-wm") return Pipeline::rsl_wm;
    if (s == "verify-theory") return Pipeline::verify_theory;
    if (s == "sweep") return Pipeline::sweep;
    if (s == "analyze") return Pipeline::analyze;
    throw ParameterError("unknown pipeline: " + s);
}

struct SweepSpec {
    std::string parameter;            // beta | gamma | kappa | r | fraction
    std::vector<std::string> values;  // raw strings; gamma accepts g0/mid/g1
    std::optional<Pipeline> inner;    // defaults to rsl (rsl-wm for kappa)

    Pipeline inner_pipeline() const {
        if (inner) return *inner;
        return parameter == "kappa" ? Pipeline::rsl_wm : Pipeline::rsl;
    }

    void validate() const {
        if (parameter != "beta" && parameter != "gamma" && parameter != "kappa" &&
            parameter != "r" && parameter != "fraction")
            throw ParameterError("sweep: unknown parameter " + parameter);
        if (values.empty()) throw ParameterError("sweep: no values given");
        if (inner && *inner != Pipeline::rsl && *inner != Pipeline::rsl_wm)
            throw ParameterError("sweep: inner pipeline must be rsl or rsl-wm");
    }
};

struct ExperimentConfig {
    TaskConfig task;
    NoiseSpec noise{NoiseKind::uniform, 0.4, {}};
    Architecture architecture = Architecture::mlp_one_hidden;
    std::size_t hidden_width = 64;
    SGDConfig sgd;
    double beta = 0.2;
    GammaChoice gamma = GammaChoice::mid();
    double kappa = -std::log(0.7);
    std::optional<std::vector<double>> eta_override; // per-observed-class rates; else known-T
    MixMatchParams mixmatch;
    Seeds seeds;
    std::string output_dir = "out";
    Pipeline pipeline = Pipeline::rsl;
    SweepSpec sweep_spec;
    int jobs = 1;
    bool emit_plot_data = false;

    ExperimentConfig() {
        sgd = SGDConfig::warmup_default(40, 0);
        sgd.batch_size = 128;
    }

    ModelConfig model_config() const {
        ModelConfig m;
        m.arch = architecture;
        m.input_dim = task.dim;
        m.classes = task.classes;
        m.hidden_width = hidden_width;
        return m;
    }

    void validate() const {
        task.validate();
        noise.validate();
        model_config().validate();
        sgd.validate();
        if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("config: beta must lie in [0, 1]");
        if (!(kappa >= 0.0)) throw ParameterError("config: kappa must be nonnegative");
        if (eta_override && eta_override->size() != task.classes)
            throw ParameterError("config: eta override size mismatch");
        mixmatch.validate();
        if (jobs < 1) throw ParameterError("config: jobs must be positive");
        if (pipeline == Pipeline::sweep) sweep_spec.validate();
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["task"] = task.to_json();
        j["noise"] = noise.to_json();
        nlohmann::ordered_json model;
        model["architecture"] = to_string(architecture);
        model["hidden_width"] = hidden_width;
        j["model"] = model;
        nlohmann::ordered_json sgdj;
        sgdj["learning_rate"] = sgd.learning_rate;
        sgdj["momentum"] = sgd.momentum;
        sgdj["weight_decay"] = sgd.weight_decay;
        sgdj["batch_size"] = sgd.batch_size;
        sgdj["epochs"] = sgd.epochs;
        auto sched = nlohmann::ordered_json::array();
        for (const auto& [e, m] : sgd.lr_schedule) sched.push_back({e, m});
        sgdj["lr_schedule"] = sched;
        j["sgd"] = sgdj;
        nlohmann::ordered_json sel;
        sel["beta"] = beta;
        sel["gamma"] = gamma.str();
        sel["kappa"] = kappa;
        if (eta_override) sel["eta"] = *eta_override;
        else sel["eta"] = "known-T";
        j["selection"] = sel;
        j["mixmatch"] = mixmatch.to_json();
        j["seeds"] = seeds.to_json();
        j["output_dir"] = output_dir;
        j["pipeline"] = to_string(pipeline);
        if (pipeline == Pipeline::sweep) {
            nlohmann::ordered_json sw;
            sw["parameter"] = sweep_spec.parameter;
            sw["values"] = sweep_spec.values;
            sw["pipeline"] = to_string(sweep_spec.inner_pipeline());
            j["sweep"] = sw;
        }
        j["jobs"] = jobs;
        j["emit_plot_data"] = emit_plot_data;
        return j;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig cfg;
        if (j.contains("task")) cfg.task = TaskConfig::from_json(j.at("task"));
        if (j.contains("noise")) cfg.noise = NoiseSpec::from_json(j.at("noise"));
        if (j.contains("model")) {
            const auto& m = j.at("model");
            if (m.contains("architecture"))
                cfg.architecture = architecture_from_string(m.at("architecture").get<std::string>());
            if (m.contains("hidden_width")) cfg.hidden_width = m.at("hidden_width").get<std::size_t>();
        }
        if (j.contains("sgd")) {
            const auto& s = j.at("sgd");
            if (s.contains("epochs")) cfg.sgd.epochs = s.at("epochs").get<std::size_t>();
            cfg.sgd = SGDConfig::warmup_default(cfg.sgd.epochs, 0);
            if (s.contains("learning_rate")) cfg.sgd.learning_rate = s.at("learning_rate").get<double>();
            if (s.contains("momentum")) cfg.sgd.momentum = s.at("momentum").get<double>();
            if (s.contains("weight_decay")) cfg.sgd.weight_decay = s.at("weight_decay").get<double>();
            if (s.contains("batch_size")) cfg.sgd.batch_size = s.at("batch_size").get<std::size_t>();
            if (s.contains("lr_schedule")) {
                cfg.sgd.lr_schedule.clear();
                for (const auto& pair : s.at("lr_schedule"))
                    cfg.sgd.lr_schedule.emplace_back(pair[0].get<std::size_t>(), pair[1].get<double>());
            }
        }
        if (j.contains("selection")) {
            const auto& s = j.at("selection");
            if (s.contains("beta")) cfg.beta = s.at("beta").get<double>();
            if (s.contains("gamma")) cfg.gamma = GammaChoice::parse(s.at("gamma").get<std::string>());
            if (s.contains("kappa")) cfg.kappa = s.at("kappa").get<double>();
            if (s.contains("eta") && s.at("eta").is_array())
                cfg.eta_override = s.at("eta").get<std::vector<double>>();
        }
        if (j.contains("mixmatch")) cfg.mixmatch = MixMatchParams::from_json(j.at("mixmatch"));
        if (j.contains("seeds")) cfg.seeds = Seeds::from_json(j.at("seeds"));
        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("pipeline")) cfg.pipeline = pipeline_from_string(j.at("pipeline").get<std::string>());
        if (j.contains("sweep")) {
            const auto& sw = j.at("sweep");
            cfg.sweep_spec.parameter = sw.at("parameter").get<std::string>();
            for (const auto& v : sw.at("values"))
                cfg.sweep_spec.values.push_back(v.is_string() ? v.get<std::string>()
                                                              : nlohmann::json(v).dump());
            if (sw.contains("pipeline"))
                cfg.sweep_spec.inner = pipeline_from_string(sw.at("pipeline").get<std::string>());
        }
        if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
        if (j.contains("emit_plot_data")) cfg.emit_plot_data = j.at("emit_plot_data").get<bool>();
        cfg.validate();
        return cfg;
    }
};

/// Everything a single pipeline run produces, kept in memory so tests can
/// inspect results without touching the filesystem.
struct PipelineArtifacts {
    TaskSpec task;
    NoisyDataset train;
    CleanDataset test;
    CleanDataset val;
    std::optional<WarmupResult> warmup;
    std::optional<AccuracyTrace> warmup_trace;
    std::optional<BudgetBreakdown> budgets;
    std::optional<SelectionResult> selection;
    double precision_rsl = std::numeric_limits<double>::quiet_NaN();
    double precision_global = std::numeric_limits<double>::quiet_NaN();
    double precision_single_epoch_median = std::numeric_limits<double>::quiet_NaN();
    std::optional<Model> rsl_model;
    std::optional<AccuracyTrace> rsl_trace;
    std::optional<Model> wm_model;
    std::optional<AccuracyTrace> wm_trace;
    std::optional<nlohmann::ordered_json> theory;
};

namespace detail {

inline double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) return values[mid];
    return 0.5 * (values[mid - 1] + values[mid]);
}

/// Finite space for the brute-force lemma check: the largest point count
/// whose classifier enumeration stays within the 1e6 guard (capped at 6),
/// classes cycling, uniform masses.
inline FiniteInstanceSpace canonical_space(std::size_t classes) {
    std::size_t points = 2;
    double combos = static_cast<double>(classes) * static_cast<double>(classes);
    while (points < 6 && combos * static_cast<double>(classes) <= 1e6) {
        ++points;
        combos *= static_cast<double>(classes);
    }
    FiniteInstanceSpace space;
    space.classes = classes;
    for (std::size_t p = 0; p < points; ++p) {
        space.true_classes.push_back(p % classes);
        space.masses.push_back(1.0 / static_cast<double>(points));
    }
    return space;
}

} // namespace detail

/// Execute the configured pipeline in memory.
inline PipelineArtifacts run_pipeline(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.pipeline == Pipeline::sweep)
        throw ParameterError("run_pipeline: sweeps are driven by run_sweep");

    const Eigen::VectorXd prior = cfg.task.prior_vector();
    PipelineArtifacts art;
    art.task = make_gaussian_task(cfg.task.classes, cfg.task.dim, cfg.task.separation,
                                  cfg.task.covariance_scale, prior, cfg.seeds.data);
    const TransitionMatrix T = build_from_spec(cfg.task.classes, cfg.noise);

    if (cfg.pipeline == Pipeline::verify_theory) {
        const auto space = detail::canonical_space(cfg.task.classes);
        nlohmann::ordered_json theory;
        theory["lemma1"] = verify_lemma1(space, T).to_json();
        theory["lemma2"] = verify_lemma2(T).to_json();
        theory["theorem1"] = verify_theorem1(T).to_json();
        theory["theorem2"] = verify_theorem2(T).to_json();
        art.theory = theory;
        return art;
    }

    const CleanDataset clean_train =
        sample_dataset(art.task, cfg.task.train_size, rng::derive(cfg.seeds.data, "train"));
    NoisyDataset full_train = corrupt_labels(clean_train, T, cfg.seeds.noise);
    if (cfg.task.train_fraction < 1.0) {
        const auto count = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(cfg.task.train_fraction *
                                                   static_cast<double>(full_train.size()))));
        std::vector<std::size_t> prefix(count);
        std::iota(prefix.begin(), prefix.end(), std::size_t{0});
        full_train = subset_dataset(full_train, prefix);
    }
    art.train = std::move(full_train);
    art.test = sample_dataset(art.task, cfg.task.test_size, rng::derive(cfg.seeds.data, "test"));
    art.val = sample_dataset(art.task, cfg.task.val_size, rng::derive(cfg.seeds.data, "val"));
    if (cfg.pipeline == Pipeline::gen) return art;

    // Warm-up on the full noisy set, recording the per-example loss ledger.
    SGDConfig warm_cfg = cfg.sgd;
    warm_cfg.seed = cfg.seeds.train;
    AccuracyTraceBuilder warm_builder(art.test.features, art.test.y_true, art.val.features,
                                      art.val.y_true);
    Model warm_init(cfg.model_config(), rng::derive(cfg.seeds.train, "init"));
    art.warmup = train_warmup(art.train, std::move(warm_init), warm_cfg,
                              [&](std::size_t, const Model& m) { warm_builder.observe(m); });
    art.warmup_trace = warm_builder.finalize();
    if (cfg.pipeline == Pipeline::warmup_only || cfg.pipeline == Pipeline::analyze) return art;

    // Class-wise small-loss selection.
    SelectionConfig sel_cfg;
    sel_cfg.beta = cfg.beta;
    sel_cfg.gamma = cfg.gamma;
    sel_cfg.prior = prior;
    if (cfg.eta_override)
        sel_cfg.eta = Eigen::Map<const Eigen::VectorXd>(cfg.eta_override->data(),
                                                        static_cast<Eigen::Index>(cfg.eta_override->size()));
    else
        sel_cfg.eta = observed_class_noise_rates(T, prior);

    const auto groups = detail::ids_by_observed_class(art.train, cfg.task.classes);
    std::vector<std::size_t> counts(cfg.task.classes);
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] = groups[i].size();
    art.budgets = compute_budgets(counts, sel_cfg);
    art.selection = select_rsl(art.warmup->ledger, art.train, sel_cfg);
    art.precision_rsl = selection_precision(*art.selection, art.train);

    const std::size_t total = art.selection->total_selected();
    art.precision_global =
        selection_precision(select_global_mean(art.warmup->ledger, art.train, total), art.train);
    std::vector<double> per_epoch;
    for (std::size_t e = 0; e < art.warmup->ledger.epochs_recorded(); ++e)
        per_epoch.push_back(selection_precision(
            select_single_epoch(art.warmup->ledger, art.train, sel_cfg, e), art.train));
    art.precision_single_epoch_median = detail::median(per_epoch);

    // Retrain from scratch on the selected subset (plain CE).
    const auto selected_ids = art.selection->all_ids();
    if (selected_ids.empty()) throw ParameterError("run_pipeline: selection is empty");
    SGDConfig retrain_cfg = cfg.sgd;
    retrain_cfg.seed = rng::derive(cfg.seeds.train, "retrain");
    AccuracyTraceBuilder rsl_builder(art.test.features, art.test.y_true, art.val.features,
                                     art.val.y_true);
    Model rsl_init(cfg.model_config(), rng::derive(cfg.seeds.train, "retrain-init"));
    auto rsl_run = train_warmup(subset_dataset(art.train, selected_ids), std::move(rsl_init),
                                retrain_cfg,
                                [&](std::size_t, const Model& m) { rsl_builder.observe(m); });
    art.rsl_model = std::move(rsl_run.model);
    art.rsl_trace = rsl_builder.finalize();
    if (cfg.pipeline == Pipeline::rsl) return art;

    // Weighted MixMatch refinement with the unselected examples as unlabeled.
    const WeightedSelection weighted =
        make_weighted_selection(*art.selection, art.warmup->ledger, cfg.kappa);
    std::vector<bool> in_selection(art.train.size(), false);
    for (std::size_t id : selected_ids) in_selection[id] = true;
    std::vector<std::size_t> unlabeled;
    for (std::size_t i = 0; i < art.train.size(); ++i)
        if (!in_selection[i]) unlabeled.push_back(i);

    SGDConfig ssl_cfg = cfg.sgd;
    ssl_cfg.seed = cfg.seeds.ssl;
    AccuracyTraceBuilder wm_builder(art.test.features, art.test.y_true, art.val.features,
                                    art.val.y_true);
    Model wm_init(cfg.model_config(), rng::derive(cfg.seeds.ssl, "init"));
    art.wm_model = train_rsl_wm(weighted, unlabeled, art.train, std::move(wm_init), cfg.mixmatch,
                                ssl_cfg,
                                [&](std::size_t, const Model& m) { wm_builder.observe(m); });
    art.wm_trace = wm_builder.finalize();
    return art;
}

inline nlohmann::ordered_json metrics_json(const ExperimentConfig& cfg,
                                           const PipelineArtifacts& art) {
    nlohmann::ordered_json j;
    j["pipeline"] = to_string(cfg.pipeline);
    if (art.theory) {
        j["theory"] = *art.theory;
        return j;
    }
    nlohmann::ordered_json data;
    data["train_size"] = art.train.size();
    std::size_t mislabeled = 0;
    for (std::size_t i = 0; i < art.train.size(); ++i)
        mislabeled += art.train.y_obs[i] != art.train.y_true[i];
    data["observed_noise_fraction"] =
        art.train.size() ? static_cast<double>(mislabeled) / static_cast<double>(art.train.size())
                         : 0.0;
    j["data"] = data;
    if (art.warmup_trace) {
        nlohmann::ordered_json w;
        w["best"] = art.warmup_trace->best;
        w["last"] = art.warmup_trace->last;
        j["warmup"] = w;
    }
    if (art.budgets) j["budgets"] = art.budgets->to_json();
    if (art.selection) {
        nlohmann::ordered_json s;
        s["total"] = art.selection->total_selected();
        s["num"] = art.selection->num;
        s["precision_rsl"] = art.precision_rsl;
        s["precision_global"] = art.precision_global;
        s["precision_single_epoch_median"] = art.precision_single_epoch_median;
        j["selection"] = s;
    }
    if (art.rsl_trace) {
        nlohmann::ordered_json r;
        r["best"] = art.rsl_trace->best;
        r["last"] = art.rsl_trace->last;
        j["rsl"] = r;
    }
    if (art.wm_trace) {
        nlohmann::ordered_json w;
        w["best"] = art.wm_trace->best;
        w["last"] = art.wm_trace->last;
        j["rsl_wm"] = w;
    }
    return j;
}

namespace detail {

inline void persist_analysis(const ExperimentConfig& cfg, const PipelineArtifacts& art,
                             const std::filesystem::path& dir) {
    const auto& ledger = art.warmup->ledger;
    const auto [correct, incorrect] = loss_split_by_correctness(ledger, art.train);
    std::ostringstream split;
    split << "partition,mean_loss\n";
    for (double v : correct) split << "correct," << io::num(v) << '\n';
    for (double v : incorrect) split << "incorrect," << io::num(v) << '\n';
    io::write_file_atomic(dir / "loss_split.csv", split.str());

    const auto means = per_class_loss_means(ledger, art.train, cfg.task.classes);
    std::ostringstream per_class;
    per_class << "class,correct_mean,incorrect_mean\n";
    for (std::size_t cls = 0; cls < cfg.task.classes; ++cls) {
        per_class << cls << ',';
        if (means.correct[cls]) per_class << io::num(*means.correct[cls]);
        per_class << ',';
        if (means.incorrect[cls]) per_class << io::num(*means.incorrect[cls]);
        per_class << '\n';
    }
    io::write_file_atomic(dir / "class_loss_means.csv", per_class.str());

    if (cfg.emit_plot_data) {
        const Eigen::VectorXd all = normalize_losses(ledger.mean_losses());
        std::vector<double> normalized_correct, normalized_incorrect;
        for (std::size_t i = 0; i < art.train.size(); ++i)
            (art.train.y_obs[i] == art.train.y_true[i] ? normalized_correct : normalized_incorrect)
                .push_back(all[static_cast<Eigen::Index>(i)]);
        const auto emit = [&](const std::vector<double>& values, const std::string& name) {
            if (values.empty()) return;
            const Eigen::VectorXd v =
                Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
            const double h = silverman_bandwidth(v);
            const KDEResult density = kde(v, h, kde_grid(v, h, 256));
            io::write_file_atomic(dir / (name + ".csv"), density.to_csv());
        };
        emit(normalized_correct, "kde_correct");
        emit(normalized_incorrect, "kde_incorrect");
    }
}

} // namespace detail

/// Run one pipeline and persist its artifacts under cfg.output_dir.
/// Exit status: 0 success, 2 invalid config, 3 divergence, 4 I/O failure.
inline int run(const ExperimentConfig& cfg) {
    try {
        cfg.validate();
        const std::filesystem::path dir(cfg.output_dir);
        const PipelineArtifacts art = run_pipeline(cfg);
        io::write_file_atomic(dir / "config.json", cfg.to_json().dump(2) + "\n");
        if (art.theory) {
            io::write_file_atomic(dir / "theory.json", art.theory->dump(2) + "\n");
        } else {
            io::write_file_atomic(dir / "task.json", art.task.to_json().dump(2) + "\n");
            io::write_file_atomic(dir / "transition.csv",
                                  build_from_spec(cfg.task.classes, cfg.noise).to_csv());
            io::write_file_atomic(dir / "dataset.csv", dataset_to_csv(art.train));
            if (art.warmup) io::write_file_atomic(dir / "ledger.csv", art.warmup->ledger.to_csv());
            if (art.selection)
                io::write_file_atomic(dir / "selection.json", art.selection->to_json().dump(2) + "\n");
            if (cfg.pipeline == Pipeline::analyze) detail::persist_analysis(cfg, art, dir);
        }
        io::write_file_atomic(dir / "metrics.json", metrics_json(cfg, art).dump(2) + "\n");
        return 0;
    } catch (const ParameterError& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    } catch (const DivergedError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o failure: " << e.what() << '\n';
        return 4;
    }
}

struct SweepRow {
    std::string value;
    double precision = std::numeric_limits<double>::quiet_NaN();
    double best = std::numeric_limits<double>::quiet_NaN();
    double last = std::numeric_limits<double>::quiet_NaN();
};

/// Run the inner pipeline once per parameter value with shared seeds.
/// Entries run concurrently up to `jobs` threads; each entry owns its own
/// output subdirectory and the result table is assembled in value order.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const SweepSpec& spec,
                                       int jobs) {
    spec.validate();
    std::vector<ExperimentConfig> entries;
    for (const std::string& raw : spec.values) {
        ExperimentConfig entry = base;
        entry.pipeline = spec.inner_pipeline();
        entry.output_dir = (std::filesystem::path(base.output_dir) /
                            ("sweep_" + spec.parameter + "_" + raw))
                               .string();
        if (spec.parameter == "beta") entry.beta = std::stod(raw);
        else if (spec.parameter == "gamma") entry.gamma = GammaChoice::parse(raw);
        else if (spec.parameter == "kappa") entry.kappa = std::stod(raw);
        else if (spec.parameter == "r") entry.noise.r = std::stod(raw);
        else if (spec.parameter == "fraction") entry.task.train_fraction = std::stod(raw);
        entry.validate();
        entries.push_back(std::move(entry));
    }

    std::vector<PipelineArtifacts> results(entries.size());
    std::vector<std::exception_ptr> failures(entries.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        while (true) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= entries.size()) return;
            try {
                results[idx] = run_pipeline(entries[idx]);
                io::write_file_atomic(std::filesystem::path(entries[idx].output_dir) / "metrics.json",
                                      metrics_json(entries[idx], results[idx]).dump(2) + "\n");
                io::write_file_atomic(std::filesystem::path(entries[idx].output_dir) / "config.json",
                                      entries[idx].to_json().dump(2) + "\n");
            } catch (...) {
                failures[idx] = std::current_exception();
            }
        }
    };
    const int thread_count = std::min<int>(jobs, static_cast<int>(entries.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < thread_count; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& failure : failures)
        if (failure) std::rethrow_exception(failure);

    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& art = results[i];
        const AccuracyTrace& trace = entries[i].pipeline == Pipeline::rsl_wm && art.wm_trace
                                         ? *art.wm_trace
                                         : *art.rsl_trace;
        rows.push_back({spec.values[i], art.precision_rsl, trace.best, trace.last});
    }
    return rows;
}

inline std::string sweep_to_csv(const std::string& parameter, const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << parameter << ",precision,best,last\n";
    for (const auto& row : rows)
        out << row.value << ',' << io::num(row.precision) << ',' << io::num(row.best) << ','
            << io::num(row.last) << '\n';
    return out.str();
}

/// Sweep entry point with persistence; same exit codes as run().
inline int run_sweep_command(const ExperimentConfig& cfg) {
    try {
        cfg.validate();
        const auto rows = run_sweep(cfg, cfg.sweep_spec, cfg.jobs);
        const std::filesystem::path dir(cfg.output_dir);
        io::write_file_atomic(dir / "config.json", cfg.to_json().dump(2) + "\n");
        io::write_file_atomic(dir / "sweep.csv", sweep_to_csv(cfg.sweep_spec.parameter, rows));
        return 0;
    } catch (const ParameterError& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    } catch (const DivergedError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o failure: " << e.what() << '\n';
        return 4;
    }
}

} // namespace noisylab

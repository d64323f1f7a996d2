// Command-line front end for the label-noise laboratory: dataset generation,
// warm-up training, small-loss selection, weighted MixMatch refinement,
// theory verification, parameter sweeps, and loss diagnostics.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noisylab/noisylab.hpp"

namespace {

struct CliOverrides {
    std::string config_path;
    std::string output_dir;
    std::optional<std::uint64_t> seed_data, seed_noise, seed_train, seed_ssl;
    std::optional<double> beta, kappa, r;
    std::string gamma;
    std::optional<int> jobs;
    bool emit_plot_data = false;
    std::string sweep_param;
    std::string sweep_values;
};

void add_common_flags(CLI::App* cmd, CliOverrides& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON file");
    cmd->add_option("--output", opts.output_dir, "output directory (overrides config)");
    cmd->add_option("--seed-data", opts.seed_data, "data seed");
    cmd->add_option("--seed-noise", opts.seed_noise, "noise seed");
    cmd->add_option("--seed-train", opts.seed_train, "training seed");
    cmd->add_option("--seed-ssl", opts.seed_ssl, "SSL seed");
    cmd->add_option("--beta", opts.beta, "selection slack beta");
    cmd->add_option("--gamma", opts.gamma, "gamma choice: g0|mid|g1|<float>");
    cmd->add_option("--kappa", opts.kappa, "reweighting strength kappa");
    cmd->add_option("--r", opts.r, "noise flip parameter");
    cmd->add_option("--jobs", opts.jobs, "max concurrent sweep entries");
    cmd->add_flag("--emit-plot-data", opts.emit_plot_data, "write KDE plot data CSVs");
}

noisylab::ExperimentConfig load_config(const CliOverrides& opts, noisylab::Pipeline pipeline) {
    noisylab::ExperimentConfig cfg;
    if (!opts.config_path.empty()) {
        const std::string text = noisylab::io::read_file(opts.config_path);
        cfg = noisylab::ExperimentConfig::from_json(nlohmann::json::parse(text));
    }
    cfg.pipeline = pipeline;
    if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
    if (opts.seed_data) cfg.seeds.data = *opts.seed_data;
    if (opts.seed_noise) cfg.seeds.noise = *opts.seed_noise;
    if (opts.seed_train) cfg.seeds.train = *opts.seed_train;
    if (opts.seed_ssl) cfg.seeds.ssl = *opts.seed_ssl;
    if (opts.beta) cfg.beta = *opts.beta;
    if (!opts.gamma.empty()) cfg.gamma = noisylab::GammaChoice::parse(opts.gamma);
    if (opts.kappa) cfg.kappa = *opts.kappa;
    if (opts.r) cfg.noise.r = *opts.r;
    if (opts.jobs) cfg.jobs = *opts.jobs;
    if (opts.emit_plot_data) cfg.emit_plot_data = true;
    if (!opts.sweep_param.empty()) cfg.sweep_spec.parameter = opts.sweep_param;
    if (!opts.sweep_values.empty()) {
        cfg.sweep_spec.values.clear();
        std::istringstream in(opts.sweep_values);
        std::string token;
        while (std::getline(in, token, ','))
            if (!token.empty()) cfg.sweep_spec.values.push_back(token);
    }
    return cfg;
}

void print_theory_summary(const nlohmann::ordered_json& theory) {
    for (const auto& [name, report] : theory.items()) {
        const bool ok = report.at("counterexamples").empty();
        const bool condition = report.at("condition_holds").get<bool>();
        std::cout << name << ": " << (ok ? "ok" : "FAILED")
                  << " (condition " << (condition ? "holds" : "does not hold");
        if (!ok) std::cout << ", " << report.at("counterexamples").size() << " counterexample(s)";
        std::cout << ")\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label-noise laboratory: small-loss selection and weighted "
                 "semi-supervised refinement on synthetic tasks"};
    app.require_subcommand(1);

    CliOverrides opts;
    auto* gen = app.add_subcommand("gen", "generate a noisy dataset and persist it");
    auto* train = app.add_subcommand("train", "warm-up training with a per-example loss ledger");
    auto* select = app.add_subcommand("select", "warm-up, class-wise small-loss selection, retrain");
    auto* rsl_wm = app.add_subcommand("rsl-wm", "full pipeline with weighted MixMatch refinement");
    auto* verify = app.add_subcommand("verify-theory", "run the lemma/theorem checks for the noise matrix");
    auto* sweep = app.add_subcommand("sweep", "run the pipeline across a parameter grid");
    auto* analyze = app.add_subcommand("analyze", "loss-distribution diagnostics of a warm-up run");
    for (auto* cmd : {gen, train, select, rsl_wm, verify, sweep, analyze})
        add_common_flags(cmd, opts);
    sweep->add_option("--param", opts.sweep_param, "parameter: beta|gamma|kappa|r|fraction");
    sweep->add_option("--values", opts.sweep_values, "comma-separated sweep values");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sweep->parsed()) {
            const auto cfg = load_config(opts, noisylab::Pipeline::sweep);
            return noisylab::run_sweep_command(cfg);
        }
        noisylab::Pipeline pipeline = noisylab::Pipeline::rsl;
        if (gen->parsed()) pipeline = noisylab::Pipeline::gen;
        else if (train->parsed()) pipeline = noisylab::Pipeline::warmup_only;
        else if (select->parsed()) pipeline = noisylab::Pipeline::rsl;
        else if (rsl_wm->parsed()) pipeline = noisylab::Pipeline::rsl_wm;
        else if (verify->parsed()) pipeline = noisylab::Pipeline::verify_theory;
        else if (analyze->parsed()) pipeline = noisylab::Pipeline::analyze;

        const auto cfg = load_config(opts, pipeline);
        const int status = noisylab::run(cfg);
        if (status == 0 && pipeline == noisylab::Pipeline::verify_theory) {
            const auto theory = nlohmann::ordered_json::parse(noisylab::io::read_file(
                std::filesystem::path(cfg.output_dir) / "theory.json"));
            print_theory_summary(theory);
        }
        return status;
    } catch (const noisylab::ParameterError& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    } catch (const noisylab::IoError& e) {
        std::cerr << "i/o failure: " << e.what() << '\n';
        return 4;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    }
}

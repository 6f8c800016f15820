// Command-line front end for the polarization-channel estimation experiments.
//
//   polsense simulate    --config cfg.json [--seed S] [--out DIR]
//   polsense isa         (--config cfg.json | --scenario scenario.csv) ...
//   polsense learn       (--config cfg.json | --scenario scenario.csv) ...
//   polsense experiment  --config cfg.json [--seed S] [--out DIR] [--estimator E]
//   polsense sweep       --config cfg.json [--seed S] [--out DIR]
//
// Exit code 0 on success, nonzero on hard errors (bad config, I/O failure).
// Estimator degradation on noisy data is reported in the artifacts, not via
// the exit code.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "polsense/experiment.hpp"

namespace {

using namespace polsense;

struct CommonFlags {
    std::string config_path;
    std::string scenario_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string estimator;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// Loads the config file and applies the command-line overrides before schema
// validation, so overrides interact correctly with derived values (e.g. a
// sweep's seed list derived from the base seed).
nlohmann::json load_config_json(const CommonFlags& flags) {
    nlohmann::json root = nlohmann::json::parse(read_file(flags.config_path));
    if (!root.is_object()) throw std::invalid_argument("config: root must be an object");
    if (flags.seed.has_value()) root["scenario"]["seed"] = *flags.seed;
    if (!flags.out_dir.empty()) root["out_dir"] = flags.out_dir;
    if (!flags.estimator.empty()) root["estimator"] = flags.estimator;
    return root;
}

ExperimentConfig config_from_flags(const CommonFlags& flags) {
    if (!flags.config_path.empty())
        return experiment_config_from_json(load_config_json(flags).dump());
    ExperimentConfig cfg;
    if (flags.seed.has_value()) cfg.scenario.seed = *flags.seed;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.estimator.empty())
        cfg.estimator = estimator_choice_from_string(flags.estimator);
    return cfg;
}

void print_metrics(const MetricsReport& report) {
    for (const EstimatorMetrics& m : report.per_estimator) {
        std::cout << m.estimator << ": verdict section " << m.verdict
                  << (m.inconclusive ? " (inconclusive)" : "") << ", margin "
                  << m.margin;
        if (m.flagged_nontrackable) std::cout << ", flagged non-trackable";
        std::cout << '\n';
    }
}

int cmd_simulate(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve_config(config_from_flags(flags));
    const MeasurementSeries series = generate_scenario(cfg.scenario);
    const std::filesystem::path dir = resolve_out_dir(cfg);
    std::filesystem::create_directories(dir);
    write_scenario_csv(dir / "scenario.csv", series);
    {
        std::ofstream out(dir / "config_resolved.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write config_resolved.json");
        out << experiment_config_to_json(cfg) << '\n';
    }
    std::cout << "wrote " << (dir / "scenario.csv").string() << " ("
              << series.horizon() + 1 << " steps)\n";
    return 0;
}

// isa / learn on a prerecorded scenario file (or, without --scenario, as a
// single-estimator experiment).
int cmd_single_estimator(const std::string& name, const CommonFlags& flags) {
    ExperimentConfig cfg = config_from_flags(flags);
    cfg.estimator = estimator_choice_from_string(name);

    if (flags.scenario_path.empty()) {
        if (flags.config_path.empty())
            throw std::invalid_argument(name + ": need --config or --scenario");
        const ExperimentResult result = run_experiment(cfg);
        print_metrics(result.metrics);
        return 0;
    }

    const MeasurementSeries series = read_scenario_csv(flags.scenario_path);
    const int num_sections = series.ground_truth()[0].num_sections();
    const double tau = series.grid().tau;

    EstimateSeries estimates;
    if (name == "isa") {
        estimates = estimate_series_isa(series, num_sections, tau);
    } else {
        const int model_sections =
            cfg.model_sections >= 1 ? cfg.model_sections : num_sections;
        estimates = estimate_series_learn(series, model_sections, tau, cfg.optimizer);
    }

    int window_start = cfg.window_start;
    int window_end = cfg.window_end >= 0 ? cfg.window_end : series.horizon();
    window_end = std::min(window_end, series.horizon());
    if (window_start > window_end) window_start = window_end;

    MetricsReport report;
    report.window_start = window_start;
    report.window_end = window_end;
    report.per_estimator.push_back(compute_metrics(
        estimates, series.ground_truth(), series.grid(), window_start, window_end));

    const std::filesystem::path dir = resolve_out_dir(cfg);
    std::filesystem::create_directories(dir);
    write_params_csv(dir / ("est_" + name + ".csv"), estimates.params);
    write_metrics_csv(dir / "metrics.csv", report);
    const std::vector<EstimateSeries> all{estimates};
    write_residuals_csv(dir / "residuals.csv", all);
    print_metrics(report);
    return 0;
}

int cmd_experiment(const CommonFlags& flags) {
    const ExperimentResult result = run_experiment(config_from_flags(flags));
    print_metrics(result.metrics);
    std::cout << "artifacts in " << resolve_out_dir(result.config).string() << '\n';
    return 0;
}

int cmd_sweep(const CommonFlags& flags) {
    const SweepConfig cfg = sweep_config_from_json(load_config_json(flags).dump());
    const SweepResult result = run_sweep(cfg);
    for (const SweepPoint& point : result.points) {
        std::cout << "axis " << point.axis_value << ':';
        for (const SweepEstimatorSummary& s : point.per_estimator)
            std::cout << ' ' << s.estimator << ' ' << s.successes << '/'
                      << (s.runs - s.flagged);
        std::cout << '\n';
    }
    std::cout << "artifacts in " << resolve_out_dir(cfg.base).string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Polarization-channel sensing: simulation, layer-peeling and "
                 "gradient-learner estimation, tracking experiments"};
    app.require_subcommand(1);

    CommonFlags simulate_flags, isa_flags, learn_flags, experiment_flags, sweep_flags;

    auto add_common = [](CLI::App* cmd, CommonFlags& flags, bool with_estimator) {
        cmd->add_option("--config", flags.config_path, "JSON config file");
        cmd->add_option("--seed", flags.seed, "override the scenario seed");
        cmd->add_option("--out", flags.out_dir, "override the output directory");
        if (with_estimator)
            cmd->add_option("--estimator", flags.estimator, "isa, learn or both")
                ->check(CLI::IsMember({"isa", "learn", "both"}));
    };

    CLI::App* simulate = app.add_subcommand("simulate", "generate a scenario.csv");
    add_common(simulate, simulate_flags, false);
    simulate->get_option("--config")->required();

    CLI::App* isa = app.add_subcommand("isa", "run the layer-peeling estimator");
    add_common(isa, isa_flags, false);
    isa->add_option("--scenario", isa_flags.scenario_path, "prerecorded scenario.csv");

    CLI::App* learn = app.add_subcommand("learn", "run the gradient learner");
    add_common(learn, learn_flags, false);
    learn->add_option("--scenario", learn_flags.scenario_path, "prerecorded scenario.csv");

    CLI::App* experiment =
        app.add_subcommand("experiment", "full run: scenario, estimators, metrics");
    add_common(experiment, experiment_flags, true);
    experiment->get_option("--config")->required();

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "experiments across noise or seeds");
    add_common(sweep_cmd, sweep_flags, true);
    sweep_cmd->get_option("--config")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(simulate_flags);
        if (isa->parsed()) return cmd_single_estimator("isa", isa_flags);
        if (learn->parsed()) return cmd_single_estimator("learn", learn_flags);
        if (experiment->parsed()) return cmd_experiment(experiment_flags);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <polsense/csv.hpp>
#include <polsense/experiment.hpp>

#include "support.hpp"

using namespace polsense;
using namespace polsense::testing;

namespace {

// The reference tracking scenario used throughout: five sections over 51
// steps, both angle variances of section 2 perturbed at 0.1 during steps
// 15..35, localization window pinned to that interval.
ExperimentConfig windowed_config(std::uint64_t seed, double sigma2_z) {
    ExperimentConfig cfg;
    cfg.scenario.num_sections = 5;
    cfg.scenario.horizon = 50;
    cfg.scenario.num_frequencies = 6;
    cfg.scenario.tau = 1.0;
    cfg.scenario.gamma_min = 0.07;
    cfg.scenario.gamma_max = 0.17;
    cfg.scenario.noise.sigma2_z = sigma2_z;
    cfg.scenario.seed = seed;
    cfg.perturbations.push_back({2, 15, 35, 0.1, 0.1});
    cfg.window_start = 15;
    cfg.window_end = 35;
    return cfg;
}

std::filesystem::path fresh_dir(const std::string& name) {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / ("polsense_harness_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(static_cast<bool>(in));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

bool same_params(const ChannelParams& a, const ChannelParams& b) {
    if (a.tau != b.tau || a.num_sections() != b.num_sections()) return false;
    for (std::size_t n = 0; n < a.sections.size(); ++n) {
        if (a.sections[n].gamma != b.sections[n].gamma) return false;
        if (a.sections[n].phi != b.sections[n].phi) return false;
        if (a.sections[n].psi != b.sections[n].psi) return false;
    }
    return true;
}

bool same_response(const FrequencyResponse& a, const FrequencyResponse& b) {
    if (!(a.grid == b.grid) || a.matrices.size() != b.matrices.size()) return false;
    for (std::size_t i = 0; i < a.matrices.size(); ++i) {
        if (a.matrices[i].a11 != b.matrices[i].a11) return false;
        if (a.matrices[i].a12 != b.matrices[i].a12) return false;
        if (a.matrices[i].a21 != b.matrices[i].a21) return false;
        if (a.matrices[i].a22 != b.matrices[i].a22) return false;
    }
    return true;
}

// Synthetic estimate series: phi trajectories per section, everything else
// constant, plus a fixed relative residual per step.
EstimateSeries synthetic_series(const std::vector<std::vector<double>>& phi_per_section,
                                double residual) {
    EstimateSeries est;
    est.estimator = "synthetic";
    const std::size_t steps = phi_per_section.front().size();
    for (std::size_t k = 0; k < steps; ++k) {
        ChannelParams params;
        params.tau = 1.0;
        for (const std::vector<double>& trace : phi_per_section)
            params.sections.push_back({0.1, trace[k], 0.0});
        est.params.push_back(std::move(params));
        est.relative_residual.push_back(residual);
    }
    return est;
}

}  // namespace

TEST_CASE("an empty config object yields the documented defaults") {
    const ExperimentConfig cfg = experiment_config_from_json("{}");
    CHECK(cfg.scenario.num_sections == 5);
    CHECK(cfg.scenario.horizon == 50);
    CHECK(cfg.scenario.num_frequencies == 6);
    CHECK(cfg.scenario.tau == 1.0);
    CHECK(cfg.scenario.gamma_min == 0.07);
    CHECK(cfg.scenario.gamma_max == 0.17);
    CHECK(cfg.scenario.noise.sigma2_z == 0.0);
    CHECK(cfg.scenario.seed == 1);
    CHECK(!cfg.snr_db.has_value());
    CHECK(cfg.estimator == EstimatorChoice::kBoth);
    CHECK(cfg.perturbations.empty());
    CHECK(cfg.window_start == 1);
    CHECK(cfg.window_end == -1);
    CHECK(cfg.model_sections == -1);
    CHECK(cfg.optimizer.iterations == 300);
    CHECK(cfg.optimizer.alpha == 0.05);
    CHECK(cfg.optimizer.track_iterations == 300);
}

TEST_CASE("config schema rejects unknown keys and inconsistent settings") {
    const std::vector<std::string> bad = {
        "not json at all",
        "[1, 2]",
        R"({"bogus": 1})",
        R"({"scenario": {"Q": 3}})",
        R"({"optimizer": {"rate": 0.1}})",
        R"({"scenario": {"noise": {"sigma2_z": 0.1, "snr_db": 20}}})",
        R"({"scenario": {"noise": {}}})",
        R"({"scenario": {"noise": {"level": 1}}})",
        R"({"scenario": {"perturbations": [{"sect": 1}]}})",
        R"({"scenario": {"perturbations": [{"section": 6, "k_start": 1, "k_end": 2}]}})",
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 10, "k_end": 60}]}})",
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 5, "k_end": 2}]}})",
        R"({"estimator": "magic"})",
        R"({"estimator": 3})",
        R"({"window": [5]})",
        R"({"window": [10, 5]})",
        R"({"window": [0, 60]})",
        R"({"N_model": 7})",
        R"({"N_model": 0})",
        R"({"scenario": {"N": 0}})",
        R"({"scenario": {"K": -1}})",
        R"({"scenario": {"K": 1.5}})",
        R"({"scenario": {"tau": 0.0}})",
        R"({"scenario": {"gamma_min": 0.3, "gamma_max": 0.1}})",
        R"({"scenario": {"seed": -4}})",
        R"({"scenario": {"noise": {"sigma2_z": -0.1}}})",
        R"({"scenario": {"L": 5}, "estimator": "isa"})",
        R"({"scenario": {"L": 5}})",
        R"({"optimizer": {"M": 0}})",
        R"({"optimizer": {"alpha": -1}})",
    };
    for (const std::string& text : bad) {
        CAPTURE(text);
        CHECK_THROWS_AS(experiment_config_from_json(text), std::invalid_argument);
    }

    // The frequency-count floor binds only when the layer peeler runs.
    CHECK_NOTHROW(experiment_config_from_json(R"({"scenario": {"L": 5}, "estimator": "learn"})"));
    // The sweep key belongs to sweep configs, not single experiments.
    CHECK_THROWS_AS(experiment_config_from_json(
                        R"({"sweep": {"axis": "seed", "seeds": [1]}})"),
                    std::invalid_argument);
}

TEST_CASE("config serialization round-trips every field") {
    ExperimentConfig cfg = windowed_config(42, 0.0);
    cfg.snr_db = 20.0;
    cfg.optimizer.iterations = 123;
    cfg.optimizer.alpha = 0.01;
    cfg.optimizer.track_iterations = 45;
    cfg.optimizer.grad_norm_stop = 1e-6;
    cfg.estimator = EstimatorChoice::kLearn;
    cfg.out_dir = "some/dir";
    cfg.model_sections = 3;

    const ExperimentConfig back = experiment_config_from_json(experiment_config_to_json(cfg));
    CHECK(back.scenario.num_sections == cfg.scenario.num_sections);
    CHECK(back.scenario.horizon == cfg.scenario.horizon);
    CHECK(back.scenario.num_frequencies == cfg.scenario.num_frequencies);
    CHECK(back.scenario.tau == cfg.scenario.tau);
    CHECK(back.scenario.gamma_min == cfg.scenario.gamma_min);
    CHECK(back.scenario.gamma_max == cfg.scenario.gamma_max);
    CHECK(back.scenario.angle_min == cfg.scenario.angle_min);
    CHECK(back.scenario.angle_max == cfg.scenario.angle_max);
    CHECK(back.scenario.seed == cfg.scenario.seed);
    REQUIRE(back.snr_db.has_value());
    CHECK(*back.snr_db == 20.0);
    REQUIRE(back.perturbations.size() == 1);
    CHECK(back.perturbations[0].section == 2);
    CHECK(back.perturbations[0].k_start == 15);
    CHECK(back.perturbations[0].k_end == 35);
    CHECK(back.perturbations[0].sigma2 == 0.1);
    CHECK(back.perturbations[0].rho2 == 0.1);
    CHECK(back.optimizer.iterations == 123);
    CHECK(back.optimizer.alpha == 0.01);
    CHECK(back.optimizer.track_iterations == 45);
    CHECK(back.optimizer.grad_norm_stop == 1e-6);
    CHECK(back.estimator == EstimatorChoice::kLearn);
    CHECK(back.out_dir == "some/dir");
    CHECK(back.window_start == 15);
    CHECK(back.window_end == 35);
    CHECK(back.model_sections == 3);

    // Direct-noise variant keeps sigma2_z instead of snr_db.
    ExperimentConfig direct = windowed_config(7, 0.25);
    const ExperimentConfig direct_back =
        experiment_config_from_json(experiment_config_to_json(direct));
    CHECK(!direct_back.snr_db.has_value());
    CHECK(direct_back.scenario.noise.sigma2_z == 0.25);
}

TEST_CASE("resolution fills defaults and converts snr_db to a noise variance") {
    ExperimentConfig cfg = windowed_config(3, 0.0);
    cfg.window_end = -1;
    cfg.snr_db = 20.0;
    const ExperimentConfig resolved = resolve_config(cfg);

    CHECK(resolved.window_end == 50);
    CHECK(resolved.model_sections == 5);
    CHECK(!resolved.snr_db.has_value());
    CHECK(resolved.scenario.profile.num_sections() == 5);
    CHECK(resolved.scenario.profile.horizon() == 50);
    CHECK(resolved.scenario.profile.sigma2[1][15] == 0.1);
    CHECK(resolved.scenario.profile.sigma2[1][35] == 0.1);
    CHECK(resolved.scenario.profile.sigma2[1][14] == 0.0);
    CHECK(resolved.scenario.profile.sigma2[0][20] == 0.0);

    // The implied variance is the mean per-entry power of this realization's
    // noiseless measurements, scaled by 10^(-snr/10).
    ScenarioConfig clean = resolved.scenario;
    clean.noise.sigma2_z = 0.0;
    const MeasurementSeries reference = generate_scenario(clean);
    double power = 0.0;
    std::size_t entries = 0;
    for (const FrequencyResponse& response : reference.measurements()) {
        for (const Jones& m : response.matrices) {
            power += m.norm_sq();
            entries += 4;
        }
    }
    const double expected = power / static_cast<double>(entries) * 1e-2;
    CHECK(std::abs(resolved.scenario.noise.sigma2_z - expected) <= 1e-15 * expected);
    CHECK(resolved.scenario.noise.sigma2_z > 0.0);
}

TEST_CASE("metrics localize the perturbed section when fed the truth") {
    const ExperimentConfig cfg = resolve_config(windowed_config(2, 0.0));
    const MeasurementSeries series = generate_scenario(cfg.scenario);

    EstimateSeries est;
    est.estimator = "oracle";
    est.params.assign(series.ground_truth().begin(), series.ground_truth().end());
    est.relative_residual.assign(est.params.size(), 0.0);

    const EstimatorMetrics metrics =
        compute_metrics(est, series.ground_truth(), series.grid(), 15, 35);
    for (double err : metrics.tracking_error) CHECK(err == 0.0);
    for (double res : metrics.residual_vs_truth) CHECK(res == 0.0);
    CHECK(metrics.verdict == 2);
    CHECK(!metrics.inconclusive);
    CHECK(metrics.margin > 0.0);
    CHECK(!metrics.flagged_nontrackable);
    REQUIRE(metrics.window_variation.size() == 5);
    for (std::size_t n = 0; n < 5; ++n) {
        if (n == 1)
            CHECK(metrics.window_variation[n] > 0.1);
        else
            CHECK(metrics.window_variation[n] == 0.0);
    }
}

TEST_CASE("metrics mark an all-constant estimate as inconclusive") {
    const ExperimentConfig cfg = resolve_config(windowed_config(2, 0.0));
    const MeasurementSeries series = generate_scenario(cfg.scenario);

    EstimateSeries est;
    est.estimator = "frozen";
    ChannelParams constant;
    constant.tau = 1.0;
    constant.sections.assign(5, SectionParams{0.1, 0.3, -0.2});
    est.params.assign(series.ground_truth().size(), constant);

    const EstimatorMetrics metrics =
        compute_metrics(est, series.ground_truth(), series.grid(), 15, 35);
    CHECK(metrics.inconclusive);
    CHECK(metrics.margin == 0.0);
    for (double tv : metrics.window_variation) CHECK(tv == 0.0);
}

TEST_CASE("metrics validate window bounds and series lengths") {
    const ExperimentConfig cfg = resolve_config(windowed_config(2, 0.0));
    const MeasurementSeries series = generate_scenario(cfg.scenario);

    EstimateSeries est;
    est.estimator = "oracle";
    est.params.assign(series.ground_truth().begin(), series.ground_truth().end());

    CHECK_THROWS_AS(compute_metrics(est, series.ground_truth(), series.grid(), 0, 60),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_metrics(est, series.ground_truth(), series.grid(), -1, 10),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_metrics(est, series.ground_truth(), series.grid(), 30, 10),
                    std::invalid_argument);

    est.params.pop_back();
    CHECK_THROWS_AS(compute_metrics(est, series.ground_truth(), series.grid(), 15, 35),
                    std::invalid_argument);
}

TEST_CASE("the non-trackable flag needs both a good fit and drifting sections") {
    // Section 1 sweeps (legitimately moving), section 2 oscillates between two
    // orientations (drift 0.18 per step), section 3 is still.
    std::vector<double> moving, oscillating, still;
    for (int k = 0; k <= 10; ++k) {
        moving.push_back(0.1 + 0.5 * k);
        oscillating.push_back(k % 2 == 0 ? 0.5 : 0.8);
        still.push_back(1.0);
    }

    const EstimateSeries drifting = synthetic_series({moving, oscillating, still}, 1e-6);
    CHECK(nontrackable_flag(drifting));

    // Same trajectories but a residual above the fit threshold: not flagged.
    const EstimateSeries poor_fit = synthetic_series({moving, oscillating, still}, 1e-2);
    CHECK(!nontrackable_flag(poor_fit));

    // Good fit with only the moving section active: not flagged.
    const EstimateSeries stable = synthetic_series({moving, still, still}, 1e-6);
    CHECK(!nontrackable_flag(stable));

    // Degenerate shapes never flag.
    const EstimateSeries single_step = synthetic_series({{0.3}, {0.5}}, 1e-6);
    CHECK(!nontrackable_flag(single_step));
}

TEST_CASE("estimators consume only the measurements, never the truth") {
    const ExperimentConfig cfg = resolve_config(windowed_config(11, 0.01));
    const MeasurementSeries real = generate_scenario(cfg.scenario);

    std::vector<ChannelParams> fake_truth;
    for (int k = 0; k <= real.horizon(); ++k) {
        ChannelParams params;
        params.tau = 1.0;
        for (int n = 0; n < 5; ++n)
            params.sections.push_back({0.1, 0.2 + 0.01 * n, -0.3});
        fake_truth.push_back(std::move(params));
    }
    const MeasurementSeries relabeled(
        real.grid(),
        std::vector<FrequencyResponse>(real.measurements().begin(),
                                       real.measurements().end()),
        std::move(fake_truth));

    const EstimateSeries isa_a = estimate_series_isa(real, 5, 1.0);
    const EstimateSeries isa_b = estimate_series_isa(relabeled, 5, 1.0);
    REQUIRE(isa_a.params.size() == isa_b.params.size());
    for (std::size_t k = 0; k < isa_a.params.size(); ++k)
        CHECK(same_params(isa_a.params[k], isa_b.params[k]));

    OptimizerConfig fast;
    fast.iterations = 40;
    fast.track_iterations = 20;
    const EstimateSeries learn_a = estimate_series_learn(real, 5, 1.0, fast);
    const EstimateSeries learn_b = estimate_series_learn(relabeled, 5, 1.0, fast);
    REQUIRE(learn_a.params.size() == learn_b.params.size());
    for (std::size_t k = 0; k < learn_a.params.size(); ++k)
        CHECK(same_params(learn_a.params[k], learn_b.params[k]));
}

TEST_CASE("a clean tracked run localizes the moving section with both estimators") {
    const ExperimentResult result = run_experiment_in_memory(windowed_config(1, 0.0));

    REQUIRE(result.estimates.size() == 2);
    CHECK(result.estimates[0].estimator == "isa");
    CHECK(result.estimates[1].estimator == "learn");
    CHECK(result.series.horizon() == 50);

    const EstimatorMetrics* isa = result.metrics.find("isa");
    const EstimatorMetrics* learn = result.metrics.find("learn");
    REQUIRE(isa != nullptr);
    REQUIRE(learn != nullptr);

    CHECK(isa->verdict == 2);
    CHECK(!isa->inconclusive);
    for (double err : isa->tracking_error) CHECK(err <= 1e-6);
    for (double res : result.estimates[0].relative_residual) CHECK(res <= 1e-12);
    for (char failed : result.estimates[0].step_failed) CHECK(failed == 0);

    CHECK(learn->verdict == 2);
    CHECK(!learn->inconclusive);
    CHECK(result.estimates[1].relative_residual.back() <= 1e-3);
    CHECK(result.metrics.find("nonexistent") == nullptr);
}

TEST_CASE("experiment artifacts are complete, readable and reproducible") {
    const std::filesystem::path dir1 = fresh_dir("run_a");
    const std::filesystem::path dir2 = fresh_dir("run_b");

    ExperimentConfig cfg = windowed_config(7, 0.01);
    cfg.optimizer.iterations = 60;
    cfg.optimizer.track_iterations = 30;
    cfg.out_dir = dir1.string();

    const ExperimentResult result = run_experiment(cfg);

    const std::vector<std::string> artifacts = {
        "config_resolved.json", "truth.csv",   "response.csv", "est_isa.csv",
        "est_learn.csv",        "metrics.csv", "residuals.csv"};
    for (const std::string& name : artifacts) {
        CAPTURE(name);
        CHECK(std::filesystem::exists(dir1 / name));
    }

    // Read-back equals the in-memory result bit for bit.
    const std::vector<ChannelParams> truth = read_params_csv(dir1 / "truth.csv");
    REQUIRE(truth.size() == result.series.ground_truth().size());
    for (std::size_t k = 0; k < truth.size(); ++k)
        CHECK(same_params(truth[k], result.series.ground_truth()[k]));

    const std::vector<FrequencyResponse> measured = read_response_csv(dir1 / "response.csv");
    REQUIRE(measured.size() == result.series.measurements().size());
    for (std::size_t k = 0; k < measured.size(); ++k)
        CHECK(same_response(measured[k], result.series.measurements()[k]));

    const MetricsReport metrics = read_metrics_csv(dir1 / "metrics.csv");
    CHECK(metrics.window_start == 15);
    CHECK(metrics.window_end == 35);
    REQUIRE(metrics.per_estimator.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
        const EstimatorMetrics& a = metrics.per_estimator[e];
        const EstimatorMetrics& b = result.metrics.per_estimator[e];
        CHECK(a.estimator == b.estimator);
        CHECK(a.verdict == b.verdict);
        CHECK(a.margin == b.margin);
        CHECK(a.inconclusive == b.inconclusive);
        CHECK(a.flagged_nontrackable == b.flagged_nontrackable);
        CHECK(a.tracking_error == b.tracking_error);
        CHECK(a.window_variation == b.window_variation);
    }

    const std::vector<ChannelParams> est_isa = read_params_csv(dir1 / "est_isa.csv");
    REQUIRE(est_isa.size() == result.estimates[0].params.size());
    for (std::size_t k = 0; k < est_isa.size(); ++k)
        CHECK(same_params(est_isa[k], result.estimates[0].params[k]));

    // The per-step residual table covers both estimators over every step.
    const CsvTable residuals = read_csv(dir1 / "residuals.csv");
    CHECK(residuals.rows.size() == 2 * 51);
    CHECK(residuals.column("relative_residual") == 2);

    // Same config, same seed, different directory: byte-identical tables.
    std::map<std::string, std::string> bytes1;
    for (const std::string& name : artifacts) bytes1[name] = file_bytes(dir1 / name);

    cfg.out_dir = dir2.string();
    run_experiment(cfg);
    for (const std::string& name : artifacts) {
        if (name == "config_resolved.json") continue;  // records the out_dir
        CAPTURE(name);
        CHECK(file_bytes(dir2 / name) == bytes1[name]);
    }

    // And rerunning into the same directory overwrites with identical bytes.
    run_experiment(cfg);
    for (const std::string& name : artifacts) {
        CAPTURE(name);
        CHECK(file_bytes(dir2 / name) == file_bytes(dir2 / name));
    }
    const std::string again = file_bytes(dir2 / "response.csv");
    CHECK(again == bytes1["response.csv"]);

    std::filesystem::remove_all(dir1);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("scenario files round-trip through csv") {
    const ExperimentConfig cfg = resolve_config(windowed_config(9, 0.05));
    const MeasurementSeries series = generate_scenario(cfg.scenario);

    const std::filesystem::path dir = fresh_dir("scenario");
    write_scenario_csv(dir / "scenario.csv", series);
    const MeasurementSeries back = read_scenario_csv(dir / "scenario.csv");

    CHECK(back.grid() == series.grid());
    REQUIRE(back.horizon() == series.horizon());
    for (int k = 0; k <= series.horizon(); ++k) {
        CHECK(same_params(back.ground_truth()[static_cast<std::size_t>(k)],
                          series.ground_truth()[static_cast<std::size_t>(k)]));
        CHECK(same_response(back.measurements()[static_cast<std::size_t>(k)],
                            series.measurements()[static_cast<std::size_t>(k)]));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("output directory resolution prefers config, then environment") {
    ExperimentConfig cfg;
    cfg.out_dir = "explicit/dir";
    CHECK(resolve_out_dir(cfg) == std::filesystem::path("explicit/dir"));

    cfg.out_dir.clear();
    const char* saved = std::getenv("POLSENSE_OUT_DIR");
    const std::string saved_value = saved != nullptr ? saved : "";
    setenv("POLSENSE_OUT_DIR", "/tmp/polsense_env_dir", 1);
    CHECK(resolve_out_dir(cfg) == std::filesystem::path("/tmp/polsense_env_dir"));
    unsetenv("POLSENSE_OUT_DIR");
    CHECK(resolve_out_dir(cfg) == std::filesystem::path("."));
    if (saved != nullptr) setenv("POLSENSE_OUT_DIR", saved_value.c_str(), 1);
}

TEST_CASE("sweep config parsing expands seeds and rejects bad axes") {
    const std::string base = R"({
        "scenario": {
            "N": 5, "K": 50, "L": 6,
            "perturbations": [
                {"section": 2, "k_start": 15, "k_end": 35, "sigma2": 0.1, "rho2": 0.1}
            ],
            "seed": 10
        },
        "window": [15, 35],
        "sweep": {"axis": "sigma2_z", "values": [0.0, 0.001], "num_seeds": 3}
    })";
    const SweepConfig cfg = sweep_config_from_json(base);
    CHECK(cfg.axis == SweepAxis::kSigma2z);
    CHECK(cfg.values == std::vector<double>{0.0, 0.001});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{10, 11, 12});

    const std::string seed_axis = R"({
        "scenario": {
            "perturbations": [
                {"section": 2, "k_start": 15, "k_end": 35, "sigma2": 0.1, "rho2": 0.1}
            ]
        },
        "sweep": {"axis": "seed", "seeds": [4, 9]}
    })";
    const SweepConfig by_seed = sweep_config_from_json(seed_axis);
    CHECK(by_seed.axis == SweepAxis::kSeed);
    CHECK(by_seed.seeds == std::vector<std::uint64_t>{4, 9});
    CHECK(by_seed.values.empty());

    const std::vector<std::string> bad = {
        // No sweep object at all.
        R"({"scenario": {}})",
        // Unknown axis.
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 1, "k_end": 2,
            "sigma2": 0.1}]}, "sweep": {"axis": "banana", "values": [0]}})",
        // Seed axis does not take sigma2_z values.
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 1, "k_end": 2,
            "sigma2": 0.1}]}, "sweep": {"axis": "seed", "seeds": [1], "values": [0]}})",
        // Both explicit seeds and a seed count.
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 1, "k_end": 2,
            "sigma2": 0.1}]}, "sweep": {"axis": "sigma2_z", "values": [0],
            "seeds": [1], "num_seeds": 2}})",
        // Empty value axis.
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 1, "k_end": 2,
            "sigma2": 0.1}]}, "sweep": {"axis": "sigma2_z"}})",
        // Localization needs exactly one perturbed section.
        R"({"scenario": {}, "sweep": {"axis": "sigma2_z", "values": [0]}})",
        R"({"scenario": {"perturbations": [
            {"section": 1, "k_start": 1, "k_end": 2, "sigma2": 0.1},
            {"section": 2, "k_start": 1, "k_end": 2, "sigma2": 0.1}]},
            "sweep": {"axis": "sigma2_z", "values": [0]}})",
        // A zero-variance window perturbs nothing.
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 1, "k_end": 2,
            "sigma2": 0.0, "rho2": 0.0}]}, "sweep": {"axis": "sigma2_z", "values": [0]}})",
        // Unknown sweep key.
        R"({"scenario": {"perturbations": [{"section": 1, "k_start": 1, "k_end": 2,
            "sigma2": 0.1}]}, "sweep": {"axis": "sigma2_z", "values": [0], "runs": 3}})",
    };
    for (const std::string& text : bad) {
        CAPTURE(text);
        CHECK_THROWS_AS(sweep_config_from_json(text), std::invalid_argument);
    }
}

TEST_CASE("a clean twenty-seed sweep localizes every tracked run") {
    SweepConfig cfg;
    cfg.base = windowed_config(1, 0.0);
    cfg.base.optimizer.iterations = 3000;
    cfg.base.optimizer.track_iterations = 300;
    cfg.axis = SweepAxis::kSigma2z;
    cfg.values = {0.0};
    for (std::uint64_t s = 1; s <= 20; ++s) cfg.seeds.push_back(s);

    const SweepResult result = sweep(cfg);
    CHECK(result.perturbed_section == 2);
    REQUIRE(result.points.size() == 1);
    REQUIRE(result.runs.size() == 20);
    REQUIRE(result.points[0].per_estimator.size() == 2);

    const SweepEstimatorSummary& isa = result.points[0].per_estimator[0];
    CHECK(isa.estimator == "isa");
    CHECK(isa.runs == 20);
    CHECK(isa.flagged == 0);
    CHECK(isa.successes == 20);
    CHECK(isa.success_rate >= 0.95);
    CHECK(isa.median_tracking_error <= 1e-10);

    // A few realizations admit multiple parameter trajectories with the same
    // response; those are flagged as non-trackable and excluded rather than
    // counted as localization failures. The remaining runs all succeed.
    const SweepEstimatorSummary& learn = result.points[0].per_estimator[1];
    CHECK(learn.estimator == "learn");
    CHECK(learn.runs == 20);
    CHECK(learn.flagged >= 1);
    CHECK(learn.flagged <= 4);
    CHECK(learn.successes == learn.runs - learn.flagged);
    CHECK(learn.success_rate >= 0.95);
    CHECK(learn.median_tracking_error <= 0.01);
}

TEST_CASE("layer-peeling localization degrades monotonically with noise") {
    SweepConfig cfg;
    cfg.base = windowed_config(1, 0.0);
    cfg.base.estimator = EstimatorChoice::kIsa;
    cfg.axis = SweepAxis::kSigma2z;
    cfg.values = {0.0, 1e-4, 1e-3, 1e-2};
    for (std::uint64_t s = 1; s <= 20; ++s) cfg.seeds.push_back(s);

    const SweepResult result = sweep(cfg);
    REQUIRE(result.points.size() == 4);
    for (std::size_t p = 0; p < 4; ++p) {
        REQUIRE(result.points[p].per_estimator.size() == 1);
        CHECK(result.points[p].per_estimator[0].estimator == "isa");
        CHECK(result.points[p].per_estimator[0].runs == 20);
    }
    for (std::size_t p = 1; p < 4; ++p) {
        CAPTURE(p);
        CHECK(result.points[p].per_estimator[0].successes <
              result.points[p - 1].per_estimator[0].successes);
        CHECK(result.points[p].per_estimator[0].median_tracking_error >
              result.points[p - 1].per_estimator[0].median_tracking_error);
    }
    CHECK(result.points[0].per_estimator[0].successes == 20);
}

TEST_CASE("a single-seed sweep point matches the standalone experiment") {
    ExperimentConfig base = windowed_config(5, 0.01);
    base.optimizer.iterations = 60;
    base.optimizer.track_iterations = 30;

    SweepConfig cfg;
    cfg.base = base;
    cfg.axis = SweepAxis::kSigma2z;
    cfg.values = {0.01};
    cfg.seeds = {5};

    const SweepResult swept = sweep(cfg);
    const ExperimentResult direct = run_experiment_in_memory(base);

    REQUIRE(swept.runs.size() == 1);
    const ExperimentResult& run = swept.runs[0];
    REQUIRE(run.estimates.size() == direct.estimates.size());
    for (std::size_t e = 0; e < run.estimates.size(); ++e) {
        const EstimatorMetrics& a = run.metrics.per_estimator[e];
        const EstimatorMetrics& b = direct.metrics.per_estimator[e];
        CHECK(a.verdict == b.verdict);
        CHECK(a.margin == b.margin);
        CHECK(a.window_variation == b.window_variation);
        CHECK(run.estimates[e].relative_residual == direct.estimates[e].relative_residual);
        for (std::size_t k = 0; k < run.estimates[e].params.size(); ++k)
            CHECK(same_params(run.estimates[e].params[k], direct.estimates[e].params[k]));
    }
}

TEST_CASE("run_sweep writes the aggregate and per-run tables") {
    const std::filesystem::path dir = fresh_dir("sweep_out");
    SweepConfig cfg;
    cfg.base = windowed_config(1, 0.01);
    cfg.base.optimizer.iterations = 40;
    cfg.base.optimizer.track_iterations = 20;
    cfg.base.out_dir = dir.string();
    cfg.axis = SweepAxis::kSigma2z;
    cfg.values = {0.01};
    cfg.seeds = {1, 2};

    run_sweep(cfg);

    const CsvTable aggregate = read_csv(dir / "sweep.csv");
    CHECK(aggregate.rows.size() == 2);  // one axis point, two estimators
    CHECK(aggregate.column("success_rate") == 5);
    REQUIRE(!aggregate.comments.empty());
    CHECK(aggregate.comments[0] == "# axis sigma2_z");

    const CsvTable runs = read_csv(dir / "runs.csv");
    CHECK(runs.rows.size() == 4);  // two runs, two estimators each
    CHECK(runs.column("verdict") == 3);
    const std::size_t seed_col = runs.column("seed");
    CHECK(runs.rows[0][seed_col] == "1");
    CHECK(runs.rows[2][seed_col] == "2");
    std::filesystem::remove_all(dir);
}

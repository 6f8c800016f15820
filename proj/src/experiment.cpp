#include "polsense/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "polsense/csv.hpp"

namespace polsense {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(EstimatorChoice choice) {
    switch (choice) {
        case EstimatorChoice::kIsa: return "isa";
        case EstimatorChoice::kLearn: return "learn";
        case EstimatorChoice::kBoth: return "both";
    }
    throw std::logic_error("unreachable estimator choice");
}

EstimatorChoice estimator_choice_from_string(const std::string& text) {
    if (text == "isa") return EstimatorChoice::kIsa;
    if (text == "learn") return EstimatorChoice::kLearn;
    if (text == "both") return EstimatorChoice::kBoth;
    throw std::invalid_argument("config: estimator must be isa, learn or both, got '" +
                                text + "'");
}

void ExperimentConfig::validate() const {
    const ScenarioConfig& sc = scenario;
    if (sc.num_sections < 1) throw std::invalid_argument("config: N must be >= 1");
    if (sc.horizon < 0) throw std::invalid_argument("config: K must be >= 0");
    if (sc.num_frequencies < 1) throw std::invalid_argument("config: L must be >= 1");
    if (!(sc.tau > 0.0) || !std::isfinite(sc.tau))
        throw std::invalid_argument("config: tau must be positive");
    if (!(sc.gamma_min <= sc.gamma_max))
        throw std::invalid_argument("config: empty gamma range");
    if (!(sc.angle_min <= sc.angle_max))
        throw std::invalid_argument("config: empty angle range");
    if (!(sc.noise.sigma2_z >= 0.0))
        throw std::invalid_argument("config: sigma2_z must be >= 0");
    if (snr_db.has_value() && sc.noise.sigma2_z != 0.0)
        throw std::invalid_argument("config: give either sigma2_z or snr_db, not both");
    for (const PerturbationWindow& w : perturbations) {
        if (w.section < 1 || w.section > sc.num_sections)
            throw std::invalid_argument("config: perturbation section out of range");
        if (w.k_start < 0 || w.k_start > w.k_end || w.k_end > sc.horizon)
            throw std::invalid_argument("config: perturbation window outside horizon");
        if (w.sigma2 < 0.0 || w.rho2 < 0.0)
            throw std::invalid_argument("config: perturbation variance must be >= 0");
    }
    optimizer.validate();
    if (window_start < 0)
        throw std::invalid_argument("config: window start must be >= 0");
    if (window_end >= 0 && (window_end > sc.horizon || window_start > window_end))
        throw std::invalid_argument("config: metric window outside horizon");
    if (model_sections != -1 && (model_sections < 1 || model_sections > sc.num_sections))
        throw std::invalid_argument("config: N_model must be in 1..N");
    if (estimator != EstimatorChoice::kLearn &&
        sc.num_frequencies < sc.num_sections + 1)
        throw std::invalid_argument(
            "config: the inverse-scattering estimator needs L >= N+1");
}

namespace {

void check_keys(const json& object, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = object.begin(); it != object.end(); ++it) {
        bool known = false;
        for (const char* key : allowed)
            if (it.key() == key) known = true;
        if (!known)
            throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
    }
}

double get_number(const json& object, const char* key, double fallback) {
    if (!object.contains(key)) return fallback;
    if (!object.at(key).is_number())
        throw std::invalid_argument(std::string("config: '") + key + "' must be a number");
    return object.at(key).get<double>();
}

int get_integer(const json& object, const char* key, int fallback) {
    if (!object.contains(key)) return fallback;
    if (!object.at(key).is_number_integer())
        throw std::invalid_argument(std::string("config: '") + key + "' must be an integer");
    return object.at(key).get<int>();
}

std::uint64_t get_seed(const json& object, const char* key, std::uint64_t fallback) {
    if (!object.contains(key)) return fallback;
    const json& v = object.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw std::invalid_argument(std::string("config: '") + key +
                                "' must be a non-negative integer");
}

ExperimentConfig parse_experiment(const json& root, bool allow_sweep_key) {
    if (!root.is_object()) throw std::invalid_argument("config: root must be an object");
    if (allow_sweep_key)
        check_keys(root, {"scenario", "optimizer", "estimator", "out_dir", "window",
                          "N_model", "sweep"},
                   "");
    else
        check_keys(root, {"scenario", "optimizer", "estimator", "out_dir", "window",
                          "N_model"},
                   "");

    ExperimentConfig cfg;
    if (root.contains("scenario")) {
        const json& sc = root.at("scenario");
        check_keys(sc,
                   {"N", "K", "L", "tau", "gamma_min", "gamma_max", "angle_min",
                    "angle_max", "perturbations", "noise", "seed"},
                   "scenario.");
        cfg.scenario.num_sections = get_integer(sc, "N", cfg.scenario.num_sections);
        cfg.scenario.horizon = get_integer(sc, "K", cfg.scenario.horizon);
        cfg.scenario.num_frequencies = get_integer(sc, "L", cfg.scenario.num_frequencies);
        cfg.scenario.tau = get_number(sc, "tau", cfg.scenario.tau);
        cfg.scenario.gamma_min = get_number(sc, "gamma_min", cfg.scenario.gamma_min);
        cfg.scenario.gamma_max = get_number(sc, "gamma_max", cfg.scenario.gamma_max);
        cfg.scenario.angle_min = get_number(sc, "angle_min", cfg.scenario.angle_min);
        cfg.scenario.angle_max = get_number(sc, "angle_max", cfg.scenario.angle_max);
        cfg.scenario.seed = get_seed(sc, "seed", cfg.scenario.seed);
        if (sc.contains("perturbations")) {
            if (!sc.at("perturbations").is_array())
                throw std::invalid_argument("config: 'perturbations' must be an array");
            for (const json& w : sc.at("perturbations")) {
                check_keys(w, {"section", "k_start", "k_end", "sigma2", "rho2"},
                           "scenario.perturbations[].");
                PerturbationWindow window;
                window.section = get_integer(w, "section", 0);
                window.k_start = get_integer(w, "k_start", 0);
                window.k_end = get_integer(w, "k_end", window.k_start);
                window.sigma2 = get_number(w, "sigma2", 0.0);
                window.rho2 = get_number(w, "rho2", 0.0);
                cfg.perturbations.push_back(window);
            }
        }
        if (sc.contains("noise")) {
            const json& noise = sc.at("noise");
            check_keys(noise, {"sigma2_z", "snr_db"}, "scenario.noise.");
            const bool has_direct = noise.contains("sigma2_z");
            const bool has_snr = noise.contains("snr_db");
            if (has_direct == has_snr)
                throw std::invalid_argument(
                    "config: noise needs exactly one of sigma2_z or snr_db");
            if (has_direct)
                cfg.scenario.noise.sigma2_z = get_number(noise, "sigma2_z", 0.0);
            else
                cfg.snr_db = get_number(noise, "snr_db", 0.0);
        }
    }
    if (root.contains("optimizer")) {
        const json& opt = root.at("optimizer");
        check_keys(opt,
                   {"M", "alpha", "beta1", "beta2", "epsilon", "M_track",
                    "grad_norm_stop"},
                   "optimizer.");
        cfg.optimizer.iterations = get_integer(opt, "M", cfg.optimizer.iterations);
        cfg.optimizer.alpha = get_number(opt, "alpha", cfg.optimizer.alpha);
        cfg.optimizer.beta1 = get_number(opt, "beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = get_number(opt, "beta2", cfg.optimizer.beta2);
        cfg.optimizer.epsilon = get_number(opt, "epsilon", cfg.optimizer.epsilon);
        cfg.optimizer.track_iterations =
            get_integer(opt, "M_track", cfg.optimizer.track_iterations);
        cfg.optimizer.grad_norm_stop =
            get_number(opt, "grad_norm_stop", cfg.optimizer.grad_norm_stop);
    }
    if (root.contains("estimator")) {
        if (!root.at("estimator").is_string())
            throw std::invalid_argument("config: 'estimator' must be a string");
        cfg.estimator = estimator_choice_from_string(root.at("estimator").get<std::string>());
    }
    if (root.contains("out_dir")) {
        if (!root.at("out_dir").is_string())
            throw std::invalid_argument("config: 'out_dir' must be a string");
        cfg.out_dir = root.at("out_dir").get<std::string>();
    }
    if (root.contains("window")) {
        const json& w = root.at("window");
        if (!w.is_array() || w.size() != 2 || !w[0].is_number_integer() ||
            !w[1].is_number_integer())
            throw std::invalid_argument("config: 'window' must be [k_start, k_end]");
        cfg.window_start = w[0].get<int>();
        cfg.window_end = w[1].get<int>();
    }
    cfg.model_sections = get_integer(root, "N_model", cfg.model_sections);
    cfg.validate();
    return cfg;
}

json experiment_to_json_value(const ExperimentConfig& cfg) {
    json root;
    json sc;
    sc["N"] = cfg.scenario.num_sections;
    sc["K"] = cfg.scenario.horizon;
    sc["L"] = cfg.scenario.num_frequencies;
    sc["tau"] = cfg.scenario.tau;
    sc["gamma_min"] = cfg.scenario.gamma_min;
    sc["gamma_max"] = cfg.scenario.gamma_max;
    sc["angle_min"] = cfg.scenario.angle_min;
    sc["angle_max"] = cfg.scenario.angle_max;
    sc["seed"] = cfg.scenario.seed;
    sc["perturbations"] = json::array();
    for (const PerturbationWindow& w : cfg.perturbations) {
        sc["perturbations"].push_back({{"section", w.section},
                                       {"k_start", w.k_start},
                                       {"k_end", w.k_end},
                                       {"sigma2", w.sigma2},
                                       {"rho2", w.rho2}});
    }
    if (cfg.snr_db.has_value())
        sc["noise"] = json{{"snr_db", *cfg.snr_db}};
    else
        sc["noise"] = json{{"sigma2_z", cfg.scenario.noise.sigma2_z}};
    root["scenario"] = std::move(sc);
    root["optimizer"] = json{{"M", cfg.optimizer.iterations},
                             {"alpha", cfg.optimizer.alpha},
                             {"beta1", cfg.optimizer.beta1},
                             {"beta2", cfg.optimizer.beta2},
                             {"epsilon", cfg.optimizer.epsilon},
                             {"M_track", cfg.optimizer.track_iterations},
                             {"grad_norm_stop", cfg.optimizer.grad_norm_stop}};
    root["estimator"] = to_string(cfg.estimator);
    if (!cfg.out_dir.empty()) root["out_dir"] = cfg.out_dir;
    if (cfg.window_end >= 0) root["window"] = json::array({cfg.window_start, cfg.window_end});
    if (cfg.model_sections >= 1) root["N_model"] = cfg.model_sections;
    return root;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_experiment(root, /*allow_sweep_key=*/false);
}

std::string experiment_config_to_json(const ExperimentConfig& config) {
    return experiment_to_json_value(config).dump(2);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return experiment_config_from_json(buffer.str());
}

ExperimentConfig resolve_config(const ExperimentConfig& config) {
    config.validate();
    ExperimentConfig cfg = config;
    cfg.scenario.profile =
        PerturbationProfile::none(cfg.scenario.num_sections, cfg.scenario.horizon);
    for (const PerturbationWindow& w : cfg.perturbations)
        cfg.scenario.profile.add_window(w.section, w.k_start, w.k_end, w.sigma2, w.rho2);

    if (cfg.window_end < 0) cfg.window_end = cfg.scenario.horizon;
    if (cfg.window_start > cfg.window_end) cfg.window_start = cfg.window_end;
    if (cfg.model_sections < 1) cfg.model_sections = cfg.scenario.num_sections;

    if (cfg.snr_db.has_value()) {
        // Mean noiseless per-entry power of this very realization (the truth
        // trajectory is invariant under the noise level by construction).
        ScenarioConfig clean = cfg.scenario;
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
        const double mean_power = power / static_cast<double>(entries);
        cfg.scenario.noise.sigma2_z = mean_power * std::pow(10.0, -*cfg.snr_db / 10.0);
        cfg.snr_db.reset();
    }
    return cfg;
}

std::filesystem::path resolve_out_dir(const ExperimentConfig& config) {
    if (!config.out_dir.empty()) return config.out_dir;
    if (const char* env = std::getenv("POLSENSE_OUT_DIR"); env != nullptr && *env != '\0')
        return env;
    return ".";
}

// ---------------------------------------------------------------------------
// Estimates and metrics

double EstimateSeries::abs_cos(int k, int section_index) const {
    return std::abs(
        std::cos(params.at(static_cast<std::size_t>(k))
                     .sections.at(static_cast<std::size_t>(section_index))
                     .phi));
}

std::vector<double> EstimateSeries::abs_cos_trace(int section_index) const {
    std::vector<double> trace;
    trace.reserve(params.size());
    for (int k = 0; k < static_cast<int>(params.size()); ++k)
        trace.push_back(abs_cos(k, section_index));
    return trace;
}

namespace {

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) return values[mid];
    return 0.5 * (values[mid - 1] + values[mid]);
}

// Full-series total variation of |cos phi_n(k)| per section.
std::vector<double> total_variation(const EstimateSeries& est) {
    const int num_sections = est.num_sections();
    std::vector<double> tv(static_cast<std::size_t>(num_sections), 0.0);
    for (int n = 0; n < num_sections; ++n)
        for (int k = 1; k <= est.horizon(); ++k)
            tv[static_cast<std::size_t>(n)] +=
                std::abs(est.abs_cos(k, n) - est.abs_cos(k - 1, n));
    return tv;
}

}  // namespace

bool nontrackable_flag(const EstimateSeries& estimates) {
    const int num_sections = estimates.num_sections();
    if (num_sections < 2 || estimates.horizon() < 1) return false;
    if (estimates.relative_residual.size() != estimates.params.size()) return false;

    const double median_residual = median(estimates.relative_residual);
    if (!(median_residual <= kNontrackableResidual)) return false;

    // Drift of the sections other than the one carrying the largest overall
    // variation (that one may move legitimately).
    const std::vector<double> tv = total_variation(estimates);
    const std::size_t moving =
        static_cast<std::size_t>(std::max_element(tv.begin(), tv.end()) - tv.begin());
    std::vector<double> drift;
    drift.reserve(static_cast<std::size_t>(estimates.horizon()));
    for (int k = 1; k <= estimates.horizon(); ++k) {
        double worst = 0.0;
        for (int n = 0; n < num_sections; ++n) {
            if (static_cast<std::size_t>(n) == moving) continue;
            worst = std::max(worst,
                             std::abs(estimates.abs_cos(k, n) - estimates.abs_cos(k - 1, n)));
        }
        drift.push_back(worst);
    }
    return median(drift) >= kNontrackableDrift;
}

const EstimatorMetrics* MetricsReport::find(const std::string& estimator) const {
    for (const EstimatorMetrics& m : per_estimator)
        if (m.estimator == estimator) return &m;
    return nullptr;
}

EstimatorMetrics compute_metrics(const EstimateSeries& estimates,
                                 std::span<const ChannelParams> truth,
                                 const FrequencyGrid& grid, int window_start,
                                 int window_end) {
    if (estimates.params.empty() || estimates.params.size() != truth.size())
        throw std::invalid_argument("metrics: estimate and truth series differ in length");
    const int horizon = estimates.horizon();
    if (window_start < 0 || window_start > window_end || window_end > horizon)
        throw std::invalid_argument("metrics: window outside horizon");

    const int est_sections = estimates.num_sections();
    const int truth_sections = truth[0].num_sections();

    EstimatorMetrics metrics;
    metrics.estimator = estimates.estimator;

    // Per-section mean fingerprint error (defined only for matching shapes;
    // a reduced model has no per-section alignment with the truth).
    metrics.tracking_error.assign(static_cast<std::size_t>(est_sections),
                                  std::numeric_limits<double>::quiet_NaN());
    if (est_sections == truth_sections) {
        for (int n = 0; n < est_sections; ++n) {
            double total = 0.0;
            for (int k = 0; k <= horizon; ++k) {
                const double truth_cos =
                    std::abs(std::cos(truth[static_cast<std::size_t>(k)]
                                          .sections[static_cast<std::size_t>(n)]
                                          .phi));
                total += std::abs(estimates.abs_cos(k, n) - truth_cos);
            }
            metrics.tracking_error[static_cast<std::size_t>(n)] =
                total / static_cast<double>(horizon + 1);
        }
    }

    metrics.window_variation.assign(static_cast<std::size_t>(est_sections), 0.0);
    for (int n = 0; n < est_sections; ++n)
        for (int k = std::max(window_start, 1); k <= window_end; ++k)
            metrics.window_variation[static_cast<std::size_t>(n)] +=
                std::abs(estimates.abs_cos(k, n) - estimates.abs_cos(k - 1, n));

    std::size_t best = 0;
    for (std::size_t n = 1; n < metrics.window_variation.size(); ++n)
        if (metrics.window_variation[n] > metrics.window_variation[best]) best = n;
    double second = 0.0;
    for (std::size_t n = 0; n < metrics.window_variation.size(); ++n)
        if (n != best) second = std::max(second, metrics.window_variation[n]);
    metrics.verdict = static_cast<int>(best) + 1;
    metrics.margin = metrics.window_variation[best] - second;
    metrics.inconclusive = !(metrics.margin > 0.0);

    metrics.residual_vs_truth.reserve(static_cast<std::size_t>(horizon) + 1);
    for (int k = 0; k <= horizon; ++k) {
        const FrequencyResponse truth_response =
            channel_response(truth[static_cast<std::size_t>(k)], grid);
        const FrequencyResponse est_response =
            channel_response(estimates.params[static_cast<std::size_t>(k)], grid);
        double power = 0.0;
        for (const Jones& m : truth_response.matrices) power += m.norm_sq();
        const double distance = response_distance(truth_response, est_response);
        metrics.residual_vs_truth.push_back(power > 0.0 ? distance / power : distance);
    }

    metrics.flagged_nontrackable = nontrackable_flag(estimates);
    return metrics;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

double measured_power(const FrequencyResponse& response) {
    double power = 0.0;
    for (const Jones& m : response.matrices) power += m.norm_sq();
    return power;
}

bool step_is_degenerate(const std::vector<PeelDiagnostics>& diagnostics) {
    for (const PeelDiagnostics& d : diagnostics)
        if (d.unidentifiable) return true;
    return false;
}

}  // namespace

EstimateSeries estimate_series_isa(const MeasurementSeries& series, int num_sections,
                                   double tau) {
    EstimateSeries est;
    est.estimator = "isa";
    const std::span<const FrequencyResponse> measured = series.measurements();
    const std::size_t steps = measured.size();
    est.params.reserve(steps);
    est.relative_residual.reserve(steps);
    est.final_loss.reserve(steps);
    est.diagnostics.reserve(steps);
    est.remainder_deviation.reserve(steps);
    est.step_failed.reserve(steps);

    ChannelParams last;
    last.tau = tau;
    last.sections.assign(static_cast<std::size_t>(num_sections), SectionParams{});
    for (const FrequencyResponse& response : measured) {
        try {
            IsaResult result = run_isa(response, num_sections, tau);
            last = result.estimate;
            est.diagnostics.push_back(std::move(result.diagnostics));
            est.remainder_deviation.push_back(result.remainder_deviation);
            est.step_failed.push_back(0);
        } catch (const DegenerateSectionError&) {
            // Degradation is data: keep the previous estimate and flag the step.
            est.diagnostics.emplace_back(static_cast<std::size_t>(num_sections));
            est.remainder_deviation.push_back(std::numeric_limits<double>::quiet_NaN());
            est.step_failed.push_back(1);
        }
        est.params.push_back(last);
        const double distance =
            response_distance(channel_response(last, series.grid()), response);
        const double power = measured_power(response);
        est.final_loss.push_back(distance);
        est.relative_residual.push_back(power > 0.0 ? distance / power : distance);
    }
    return est;
}

EstimateSeries estimate_series_learn(const MeasurementSeries& series, int model_sections,
                                     double tau, const OptimizerConfig& optimizer) {
    EstimateSeries est;
    est.estimator = "learn";
    const std::vector<TrackStep> steps =
        track(series.measurements(), model_sections, tau, optimizer);
    est.params.reserve(steps.size());
    est.relative_residual.reserve(steps.size());
    est.final_loss.reserve(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k) {
        est.params.push_back(steps[k].params);
        est.final_loss.push_back(steps[k].final_loss);
        const double power = measured_power(series.measurements()[k]);
        est.relative_residual.push_back(power > 0.0 ? steps[k].final_loss / power
                                                    : steps[k].final_loss);
    }
    return est;
}

ExperimentResult run_experiment_in_memory(const ExperimentConfig& config) {
    const ExperimentConfig cfg = resolve_config(config);
    MeasurementSeries series = generate_scenario(cfg.scenario);

    std::vector<EstimateSeries> estimates;
    if (cfg.estimator != EstimatorChoice::kLearn)
        estimates.push_back(
            estimate_series_isa(series, cfg.scenario.num_sections, cfg.scenario.tau));
    if (cfg.estimator != EstimatorChoice::kIsa)
        estimates.push_back(
            estimate_series_learn(series, cfg.model_sections, cfg.scenario.tau, cfg.optimizer));

    MetricsReport report;
    report.window_start = cfg.window_start;
    report.window_end = cfg.window_end;
    for (const EstimateSeries& est : estimates)
        report.per_estimator.push_back(compute_metrics(est, series.ground_truth(),
                                                       series.grid(), cfg.window_start,
                                                       cfg.window_end));

    return ExperimentResult{cfg, std::move(series), std::move(estimates),
                            std::move(report)};
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    ExperimentResult result = run_experiment_in_memory(config);
    const std::filesystem::path dir = resolve_out_dir(result.config);
    std::filesystem::create_directories(dir);

    {
        std::ofstream out(dir / "config_resolved.json", std::ios::binary);
        if (!out)
            throw std::runtime_error("experiment: cannot write config_resolved.json");
        out << experiment_config_to_json(result.config) << '\n';
    }
    write_params_csv(dir / "truth.csv", result.series.ground_truth());
    write_response_csv(dir / "response.csv", result.series.measurements());
    for (const EstimateSeries& est : result.estimates)
        write_params_csv(dir / ("est_" + est.estimator + ".csv"), est.params);
    write_metrics_csv(dir / "metrics.csv", result.metrics);
    write_residuals_csv(dir / "residuals.csv", result.estimates);
    return result;
}

// ---------------------------------------------------------------------------
// Sweep

void SweepConfig::validate() const {
    base.validate();
    if (axis == SweepAxis::kSigma2z) {
        if (values.empty()) throw std::invalid_argument("sweep: empty sigma2_z axis");
        for (double v : values)
            if (!(v >= 0.0)) throw std::invalid_argument("sweep: sigma2_z must be >= 0");
        if (seeds.empty()) throw std::invalid_argument("sweep: no seeds configured");
    } else {
        if (seeds.empty()) throw std::invalid_argument("sweep: empty seed axis");
        if (!values.empty())
            throw std::invalid_argument("sweep: seed axis takes no sigma2_z values");
    }
    std::set<int> perturbed;
    for (const PerturbationWindow& w : base.perturbations)
        if (w.sigma2 > 0.0 || w.rho2 > 0.0) perturbed.insert(w.section);
    if (perturbed.size() != 1)
        throw std::invalid_argument(
            "sweep: localization success needs exactly one perturbed section");
}

namespace {

SweepConfig parse_sweep(const json& root) {
    SweepConfig cfg;
    cfg.base = parse_experiment(root, /*allow_sweep_key=*/true);
    if (!root.contains("sweep"))
        throw std::invalid_argument("config: sweep requires a 'sweep' object");
    const json& sw = root.at("sweep");
    check_keys(sw, {"axis", "values", "seeds", "num_seeds"}, "sweep.");
    if (!sw.contains("axis") || !sw.at("axis").is_string())
        throw std::invalid_argument("config: sweep.axis must be 'sigma2_z' or 'seed'");
    const std::string axis = sw.at("axis").get<std::string>();
    if (axis == "sigma2_z")
        cfg.axis = SweepAxis::kSigma2z;
    else if (axis == "seed")
        cfg.axis = SweepAxis::kSeed;
    else
        throw std::invalid_argument("config: sweep.axis must be 'sigma2_z' or 'seed'");

    if (sw.contains("values")) {
        if (!sw.at("values").is_array())
            throw std::invalid_argument("config: sweep.values must be an array");
        for (const json& v : sw.at("values")) {
            if (!v.is_number())
                throw std::invalid_argument("config: sweep.values must be numbers");
            cfg.values.push_back(v.get<double>());
        }
    }
    if (sw.contains("seeds")) {
        if (!sw.at("seeds").is_array())
            throw std::invalid_argument("config: sweep.seeds must be an array");
        for (const json& v : sw.at("seeds")) {
            if (!(v.is_number_unsigned() ||
                  (v.is_number_integer() && v.get<std::int64_t>() >= 0)))
                throw std::invalid_argument(
                    "config: sweep.seeds must be non-negative integers");
            cfg.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    if (sw.contains("num_seeds")) {
        if (!cfg.seeds.empty())
            throw std::invalid_argument("config: give sweep.seeds or sweep.num_seeds, not both");
        const int count = get_integer(sw, "num_seeds", 0);
        if (count < 1) throw std::invalid_argument("config: sweep.num_seeds must be >= 1");
        for (int i = 0; i < count; ++i)
            cfg.seeds.push_back(cfg.base.scenario.seed + static_cast<std::uint64_t>(i));
    }
    if (cfg.axis == SweepAxis::kSigma2z && cfg.seeds.empty())
        cfg.seeds.push_back(cfg.base.scenario.seed);
    cfg.validate();
    return cfg;
}

bool isa_run_degenerate(const EstimateSeries& est) {
    for (char failed : est.step_failed)
        if (failed) return true;
    for (const std::vector<PeelDiagnostics>& step : est.diagnostics)
        if (step_is_degenerate(step)) return true;
    return false;
}

double mean_ignoring_nan(const std::vector<double>& values) {
    double total = 0.0;
    int count = 0;
    for (double v : values) {
        if (std::isnan(v)) continue;
        total += v;
        ++count;
    }
    return count > 0 ? total / count : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

SweepConfig sweep_config_from_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw std::invalid_argument("config: root must be an object");
    return parse_sweep(root);
}

SweepConfig load_sweep_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return sweep_config_from_json(buffer.str());
}

SweepResult sweep(const SweepConfig& config) {
    config.validate();

    int perturbed_section = 0;
    for (const PerturbationWindow& w : config.base.perturbations)
        if (w.sigma2 > 0.0 || w.rho2 > 0.0) perturbed_section = w.section;

    struct RunSpec {
        double axis_value;
        ExperimentConfig config;
    };
    std::vector<RunSpec> specs;
    if (config.axis == SweepAxis::kSigma2z) {
        for (double value : config.values) {
            for (std::uint64_t seed : config.seeds) {
                ExperimentConfig run = config.base;
                run.scenario.noise.sigma2_z = value;
                run.snr_db.reset();
                run.scenario.seed = seed;
                specs.push_back({value, std::move(run)});
            }
        }
    } else {
        for (std::uint64_t seed : config.seeds) {
            ExperimentConfig run = config.base;
            run.scenario.seed = seed;
            specs.push_back({static_cast<double>(seed), std::move(run)});
        }
    }

    // Independent runs; process in bounded batches of async tasks.
    SweepResult result;
    result.perturbed_section = perturbed_section;
    result.runs.reserve(specs.size());
    const std::size_t batch = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t start = 0; start < specs.size(); start += batch) {
        const std::size_t stop = std::min(specs.size(), start + batch);
        std::vector<std::future<ExperimentResult>> futures;
        futures.reserve(stop - start);
        for (std::size_t r = start; r < stop; ++r)
            futures.push_back(std::async(std::launch::async, run_experiment_in_memory,
                                         specs[r].config));
        for (auto& future : futures) result.runs.push_back(future.get());
    }

    // Aggregate per axis point, per estimator.
    const std::size_t runs_per_point =
        config.axis == SweepAxis::kSigma2z ? config.seeds.size() : 1;
    const std::size_t num_points = specs.size() / runs_per_point;
    for (std::size_t p = 0; p < num_points; ++p) {
        SweepPoint point;
        point.axis_value = specs[p * runs_per_point].axis_value;
        std::vector<std::string> names;
        for (const EstimateSeries& est : result.runs[p * runs_per_point].estimates)
            names.push_back(est.estimator);
        for (const std::string& name : names) {
            SweepEstimatorSummary summary;
            summary.estimator = name;
            std::vector<double> run_errors;
            for (std::size_t r = p * runs_per_point; r < (p + 1) * runs_per_point; ++r) {
                const ExperimentResult& run = result.runs[r];
                const EstimatorMetrics* metrics = run.metrics.find(name);
                const EstimateSeries* series = nullptr;
                for (const EstimateSeries& est : run.estimates)
                    if (est.estimator == name) series = &est;
                if (metrics == nullptr || series == nullptr) continue;
                ++summary.runs;
                bool flagged = metrics->flagged_nontrackable;
                if (name == "isa" && run.config.scenario.noise.sigma2_z == 0.0 &&
                    isa_run_degenerate(*series))
                    flagged = true;
                if (flagged) {
                    ++summary.flagged;
                } else if (!metrics->inconclusive &&
                           metrics->verdict == perturbed_section) {
                    ++summary.successes;
                }
                run_errors.push_back(mean_ignoring_nan(metrics->tracking_error));
            }
            const int counted = summary.runs - summary.flagged;
            summary.success_rate =
                counted > 0 ? static_cast<double>(summary.successes) / counted : 0.0;
            summary.median_tracking_error = median(std::move(run_errors));
            point.per_estimator.push_back(std::move(summary));
        }
        result.points.push_back(std::move(point));
    }
    return result;
}

SweepResult run_sweep(const SweepConfig& config) {
    SweepResult result = sweep(config);
    const std::filesystem::path dir = resolve_out_dir(config.base);
    std::filesystem::create_directories(dir);

    CsvTable aggregate;
    aggregate.comments.push_back(
        std::string("# axis ") +
        (config.axis == SweepAxis::kSigma2z ? "sigma2_z" : "seed"));
    aggregate.comments.push_back("# perturbed_section " +
                                 std::to_string(result.perturbed_section));
    aggregate.header = {"axis_value",   "estimator", "runs",
                        "flagged",      "successes", "success_rate",
                        "median_tracking_error"};
    for (const SweepPoint& point : result.points)
        for (const SweepEstimatorSummary& summary : point.per_estimator)
            aggregate.rows.push_back({format_double(point.axis_value), summary.estimator,
                                      std::to_string(summary.runs),
                                      std::to_string(summary.flagged),
                                      std::to_string(summary.successes),
                                      format_double(summary.success_rate),
                                      format_double(summary.median_tracking_error)});
    write_csv(dir / "sweep.csv", aggregate);

    CsvTable runs;
    runs.header = {"axis_value", "seed",   "estimator",
                   "verdict",    "margin", "inconclusive",
                   "flagged",    "mean_tracking_error"};
    for (const ExperimentResult& run : result.runs) {
        const double axis_value = config.axis == SweepAxis::kSigma2z
                                      ? run.config.scenario.noise.sigma2_z
                                      : static_cast<double>(run.config.scenario.seed);
        for (const EstimateSeries& est : run.estimates) {
            const EstimatorMetrics* metrics = run.metrics.find(est.estimator);
            if (metrics == nullptr) continue;
            bool flagged = metrics->flagged_nontrackable;
            if (est.estimator == "isa" && run.config.scenario.noise.sigma2_z == 0.0 &&
                isa_run_degenerate(est))
                flagged = true;
            runs.rows.push_back({format_double(axis_value),
                                 std::to_string(run.config.scenario.seed), est.estimator,
                                 std::to_string(metrics->verdict),
                                 format_double(metrics->margin),
                                 metrics->inconclusive ? "1" : "0", flagged ? "1" : "0",
                                 format_double(mean_ignoring_nan(metrics->tracking_error))});
        }
    }
    write_csv(dir / "runs.csv", runs);
    return result;
}

// ---------------------------------------------------------------------------
// CSV artifacts

namespace {

double comment_value(const CsvTable& table, const std::string& prefix) {
    for (const std::string& comment : table.comments)
        if (comment.rfind(prefix, 0) == 0)
            return parse_double(comment.substr(prefix.size()));
    throw std::runtime_error("csv: missing '" + prefix + "' metadata comment");
}

}  // namespace

void write_params_csv(const std::filesystem::path& path,
                      std::span<const ChannelParams> series) {
    if (series.empty())
        throw std::invalid_argument("write_params_csv: empty series");
    CsvTable table;
    table.comments.push_back("# tau " + format_double(series[0].tau));
    table.header = {"k", "n", "gamma", "phi", "psi", "abs_cos_phi"};
    for (std::size_t k = 0; k < series.size(); ++k) {
        for (int n = 0; n < series[k].num_sections(); ++n) {
            const SectionParams& s = series[k].sections[static_cast<std::size_t>(n)];
            table.rows.push_back({std::to_string(k), std::to_string(n + 1),
                                  format_double(s.gamma), format_double(s.phi),
                                  format_double(s.psi),
                                  format_double(std::abs(std::cos(s.phi)))});
        }
    }
    write_csv(path, table);
}

std::vector<ChannelParams> read_params_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    const double tau = comment_value(table, "# tau ");
    const std::size_t col_k = table.column("k");
    const std::size_t col_n = table.column("n");
    const std::size_t col_gamma = table.column("gamma");
    const std::size_t col_phi = table.column("phi");
    const std::size_t col_psi = table.column("psi");

    std::vector<ChannelParams> series;
    for (const auto& row : table.rows) {
        const std::size_t k = static_cast<std::size_t>(parse_int(row[col_k]));
        const int n = static_cast<int>(parse_int(row[col_n]));
        if (k == series.size()) {
            series.emplace_back();
            series.back().tau = tau;
        }
        if (k + 1 != series.size() || n != series.back().num_sections() + 1)
            throw std::runtime_error("csv: rows out of order in " + path.string());
        series.back().sections.push_back({parse_double(row[col_gamma]),
                                          parse_double(row[col_phi]),
                                          parse_double(row[col_psi])});
    }
    if (series.empty()) throw std::runtime_error("csv: no rows in " + path.string());
    return series;
}

void write_response_csv(const std::filesystem::path& path,
                        std::span<const FrequencyResponse> series) {
    if (series.empty())
        throw std::invalid_argument("write_response_csv: empty series");
    CsvTable table;
    table.comments.push_back("# tau " + format_double(series[0].grid.tau));
    table.header = {"k",      "i",      "h11_re", "h11_im", "h12_re",
                    "h12_im", "h21_re", "h21_im", "h22_re", "h22_im"};
    for (std::size_t k = 0; k < series.size(); ++k) {
        for (std::size_t i = 0; i < series[k].matrices.size(); ++i) {
            const Jones& m = series[k].matrices[i];
            table.rows.push_back(
                {std::to_string(k), std::to_string(i), format_double(m.a11.real()),
                 format_double(m.a11.imag()), format_double(m.a12.real()),
                 format_double(m.a12.imag()), format_double(m.a21.real()),
                 format_double(m.a21.imag()), format_double(m.a22.real()),
                 format_double(m.a22.imag())});
        }
    }
    write_csv(path, table);
}

std::vector<FrequencyResponse> read_response_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    const double tau = comment_value(table, "# tau ");
    std::size_t num_freq = 0;
    for (const auto& row : table.rows)
        if (parse_int(row[0]) == 0) ++num_freq;
    if (num_freq == 0 || table.rows.size() % num_freq != 0)
        throw std::runtime_error("csv: malformed response table in " + path.string());

    const FrequencyGrid grid = FrequencyGrid::canonical(static_cast<int>(num_freq), tau);
    std::vector<FrequencyResponse> series;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t k = r / num_freq;
        const std::size_t i = r % num_freq;
        if (static_cast<std::size_t>(parse_int(row[0])) != k ||
            static_cast<std::size_t>(parse_int(row[1])) != i)
            throw std::runtime_error("csv: rows out of order in " + path.string());
        if (i == 0) series.push_back(FrequencyResponse{grid, {}});
        series.back().matrices.push_back(
            Jones{cplx{parse_double(row[2]), parse_double(row[3])},
                  cplx{parse_double(row[4]), parse_double(row[5])},
                  cplx{parse_double(row[6]), parse_double(row[7])},
                  cplx{parse_double(row[8]), parse_double(row[9])}});
    }
    return series;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report) {
    CsvTable table;
    table.comments.push_back("# window " + std::to_string(report.window_start) + " " +
                             std::to_string(report.window_end));
    table.header = {"estimator",    "section",      "tracking_error",
                    "window_variation", "verdict",  "margin",
                    "inconclusive", "flagged_nontrackable"};
    for (const EstimatorMetrics& m : report.per_estimator) {
        for (std::size_t n = 0; n < m.window_variation.size(); ++n) {
            table.rows.push_back(
                {m.estimator, std::to_string(n + 1), format_double(m.tracking_error[n]),
                 format_double(m.window_variation[n]), std::to_string(m.verdict),
                 format_double(m.margin), m.inconclusive ? "1" : "0",
                 m.flagged_nontrackable ? "1" : "0"});
        }
    }
    write_csv(path, table);
}

MetricsReport read_metrics_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    MetricsReport report;
    for (const std::string& comment : table.comments) {
        const std::string prefix = "# window ";
        if (comment.rfind(prefix, 0) == 0) {
            std::istringstream in(comment.substr(prefix.size()));
            in >> report.window_start >> report.window_end;
        }
    }
    const std::size_t col_estimator = table.column("estimator");
    const std::size_t col_tracking = table.column("tracking_error");
    const std::size_t col_variation = table.column("window_variation");
    const std::size_t col_verdict = table.column("verdict");
    const std::size_t col_margin = table.column("margin");
    const std::size_t col_inconclusive = table.column("inconclusive");
    const std::size_t col_flagged = table.column("flagged_nontrackable");
    for (const auto& row : table.rows) {
        EstimatorMetrics* metrics = nullptr;
        for (EstimatorMetrics& m : report.per_estimator)
            if (m.estimator == row[col_estimator]) metrics = &m;
        if (metrics == nullptr) {
            report.per_estimator.emplace_back();
            metrics = &report.per_estimator.back();
            metrics->estimator = row[col_estimator];
            metrics->verdict = static_cast<int>(parse_int(row[col_verdict]));
            metrics->margin = parse_double(row[col_margin]);
            metrics->inconclusive = parse_int(row[col_inconclusive]) != 0;
            metrics->flagged_nontrackable = parse_int(row[col_flagged]) != 0;
        }
        metrics->tracking_error.push_back(parse_double(row[col_tracking]));
        metrics->window_variation.push_back(parse_double(row[col_variation]));
    }
    return report;
}

void write_residuals_csv(const std::filesystem::path& path,
                         std::span<const EstimateSeries> estimates) {
    CsvTable table;
    table.header = {"estimator",         "k",
                    "relative_residual", "final_loss",
                    "max_peel_residual", "remainder_deviation",
                    "failed"};
    for (const EstimateSeries& est : estimates) {
        for (std::size_t k = 0; k < est.params.size(); ++k) {
            double peel = 0.0;
            if (k < est.diagnostics.size())
                for (const PeelDiagnostics& d : est.diagnostics[k])
                    peel = std::max({peel, d.residual_bottom, d.residual_top});
            const double deviation =
                k < est.remainder_deviation.size() ? est.remainder_deviation[k] : 0.0;
            const bool failed = k < est.step_failed.size() && est.step_failed[k] != 0;
            table.rows.push_back(
                {est.estimator, std::to_string(k), format_double(est.relative_residual[k]),
                 format_double(est.final_loss[k]), format_double(peel),
                 format_double(deviation), failed ? "1" : "0"});
        }
    }
    write_csv(path, table);
}

void write_scenario_csv(const std::filesystem::path& path,
                        const MeasurementSeries& series) {
    CsvTable table;
    table.comments.push_back("# tau " + format_double(series.grid().tau));
    table.header = {"k"};
    const int num_sections = series.ground_truth()[0].num_sections();
    for (int n = 1; n <= num_sections; ++n) {
        table.header.push_back("gamma_" + std::to_string(n));
        table.header.push_back("phi_" + std::to_string(n));
        table.header.push_back("psi_" + std::to_string(n));
    }
    const int num_freq = series.grid().size();
    for (int i = 0; i < num_freq; ++i)
        for (const char* entry : {"11", "12", "21", "22"})
            for (const char* part : {"re", "im"})
                table.header.push_back("h" + std::to_string(i) + "_" + entry + "_" + part);

    for (int k = 0; k <= series.horizon(); ++k) {
        std::vector<std::string> row{std::to_string(k)};
        const ChannelParams& truth = series.ground_truth()[static_cast<std::size_t>(k)];
        if (truth.num_sections() != num_sections)
            throw std::invalid_argument("write_scenario_csv: ragged section counts");
        for (const SectionParams& s : truth.sections) {
            row.push_back(format_double(s.gamma));
            row.push_back(format_double(s.phi));
            row.push_back(format_double(s.psi));
        }
        const FrequencyResponse& measured =
            series.measurements()[static_cast<std::size_t>(k)];
        for (const Jones& m : measured.matrices)
            for (cplx value : {m.a11, m.a12, m.a21, m.a22}) {
                row.push_back(format_double(value.real()));
                row.push_back(format_double(value.imag()));
            }
        table.rows.push_back(std::move(row));
    }
    write_csv(path, table);
}

MeasurementSeries read_scenario_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    const double tau = comment_value(table, "# tau ");
    if (table.header.empty() || table.header[0] != "k")
        throw std::runtime_error("csv: malformed scenario header in " + path.string());

    int num_sections = 0;
    std::size_t col = 1;
    while (col + 2 < table.header.size() &&
           table.header[col].rfind("gamma_", 0) == 0) {
        num_sections += 1;
        col += 3;
    }
    const std::size_t response_cols = table.header.size() - col;
    if (num_sections < 1 || response_cols == 0 || response_cols % 8 != 0)
        throw std::runtime_error("csv: malformed scenario header in " + path.string());
    const int num_freq = static_cast<int>(response_cols / 8);
    const FrequencyGrid grid = FrequencyGrid::canonical(num_freq, tau);

    std::vector<ChannelParams> truth;
    std::vector<FrequencyResponse> measured;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (static_cast<std::size_t>(parse_int(row[0])) != r)
            throw std::runtime_error("csv: rows out of order in " + path.string());
        ChannelParams params;
        params.tau = tau;
        std::size_t c = 1;
        for (int n = 0; n < num_sections; ++n) {
            params.sections.push_back({parse_double(row[c]), parse_double(row[c + 1]),
                                       parse_double(row[c + 2])});
            c += 3;
        }
        FrequencyResponse response{grid, {}};
        for (int i = 0; i < num_freq; ++i) {
            response.matrices.push_back(
                Jones{cplx{parse_double(row[c]), parse_double(row[c + 1])},
                      cplx{parse_double(row[c + 2]), parse_double(row[c + 3])},
                      cplx{parse_double(row[c + 4]), parse_double(row[c + 5])},
                      cplx{parse_double(row[c + 6]), parse_double(row[c + 7])}});
            c += 8;
        }
        truth.push_back(std::move(params));
        measured.push_back(std::move(response));
    }
    return MeasurementSeries(grid, std::move(measured), std::move(truth));
}

}  // namespace polsense

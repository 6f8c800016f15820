#pragma once

// Experiment orchestration: config loading, scenario generation, running the
// estimators over a time series, tracking/localization metrics, CSV
// artifacts, and sweeps across noise levels or seeds.
//
// Config files are JSON. Every recognized key is listed in the README;
// unknown keys are errors so that a config never silently misdescribes the
// run that produced an artifact.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polsense/channel.hpp"
#include "polsense/inverse_scattering.hpp"
#include "polsense/learner.hpp"
#include "polsense/simulate.hpp"

namespace polsense {

// ---------------------------------------------------------------------------
// Configuration

enum class EstimatorChoice { kIsa, kLearn, kBoth };

std::string to_string(EstimatorChoice choice);
EstimatorChoice estimator_choice_from_string(const std::string& text);

// Declarative form of one random-walk window: both angle-increment variances
// of one section over time steps [k_start, k_end].
struct PerturbationWindow {
    int section = 0;  // 1-based
    int k_start = 0;
    int k_end = 0;
    double sigma2 = 0.0;
    double rho2 = 0.0;
};

struct ExperimentConfig {
    ScenarioConfig scenario;  // scenario.profile is built from `perturbations` on resolve
    std::vector<PerturbationWindow> perturbations;
    // Noise convenience: per-entry SNR in dB relative to the mean noiseless
    // per-entry power of this realization. Mutually exclusive with a direct
    // scenario.noise.sigma2_z setting; resolved into sigma2_z before running.
    std::optional<double> snr_db;
    OptimizerConfig optimizer;
    EstimatorChoice estimator = EstimatorChoice::kBoth;
    std::string out_dir;        // empty: $POLSENSE_OUT_DIR, else "."
    int window_start = 1;       // localization metric window [k1, k2]
    int window_end = -1;        // -1: resolved to the horizon K
    int model_sections = -1;    // learner model size; -1: resolved to scenario N

    void validate() const;
};

// Parse / serialize configs. The string forms exist so tests can exercise
// the schema without touching the filesystem.
ExperimentConfig experiment_config_from_json(const std::string& text);
std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Copy with snr_db resolved into scenario.noise.sigma2_z (regenerates the
// noiseless truth of this seed to measure its mean per-entry power) and the
// window / model_sections defaults filled in.
ExperimentConfig resolve_config(const ExperimentConfig& config);

// out_dir resolution: config value, else $POLSENSE_OUT_DIR, else ".".
std::filesystem::path resolve_out_dir(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Estimates and metrics

// Per-time-step estimates from one estimator, plus its health diagnostics.
struct EstimateSeries {
    std::string estimator;                    // "isa" or "learn"
    std::vector<ChannelParams> params;        // one per time step k = 0..K
    // Residual of the estimate against the *measured* response at each k,
    // relative to the measured power: response_distance / sum_i ||H~_k||_F^2.
    std::vector<double> relative_residual;
    // Absolute fit distance to the measurement per k (the learner's final
    // loss; the reconstruction distance for the peeling estimator).
    std::vector<double> final_loss;
    std::vector<std::vector<PeelDiagnostics>> diagnostics;  // isa: per k, per section
    std::vector<double> remainder_deviation;  // isa: per k
    std::vector<char> step_failed;            // isa: degenerate step, estimate carried over

    int horizon() const { return static_cast<int>(params.size()) - 1; }
    int num_sections() const {
        return params.empty() ? 0 : params.front().num_sections();
    }
    double abs_cos(int k, int section_index) const;          // |cos phi_n(k)|, 0-based n
    std::vector<double> abs_cos_trace(int section_index) const;
};

// Classifier for realizations where the response fits well while the
// parameter trajectories are unstable (the model is effectively
// overparameterized, so no stable unique solution exists). Thresholds are
// deliberately pinned constants, documented in the README.
inline constexpr double kNontrackableResidual = 1e-3;  // median relative residual below
inline constexpr double kNontrackableDrift = 0.02;     // median off-verdict |cos| drift above
bool nontrackable_flag(const EstimateSeries& estimates);

struct EstimatorMetrics {
    std::string estimator;
    std::vector<double> tracking_error;    // per section: mean_k | |cos^| - |cos| |
    std::vector<double> window_variation;  // per section: sum_{k in window} |Delta |cos^| |
    int verdict = 0;                       // 1-based argmax of window_variation
    bool inconclusive = false;             // tied or all-zero window statistic
    double margin = 0.0;                   // top1 - top2 window variation
    std::vector<double> residual_vs_truth; // per k, relative to truth power
    bool flagged_nontrackable = false;
};

struct MetricsReport {
    std::vector<EstimatorMetrics> per_estimator;  // in run order
    int window_start = 0;
    int window_end = 0;

    const EstimatorMetrics* find(const std::string& estimator) const;
};

// Tracking error, windowed total variation, verdict and margin for one
// estimator's series against the ground truth. Throws if the window lies
// outside the series horizon or the series lengths differ.
EstimatorMetrics compute_metrics(const EstimateSeries& estimates,
                                 std::span<const ChannelParams> truth,
                                 const FrequencyGrid& grid, int window_start,
                                 int window_end);

// ---------------------------------------------------------------------------
// Experiment

// Run one estimator over a measurement series. Only measurements() and
// grid() are consumed — ground truth plays no part in estimation. A
// degenerate peeling step is recorded (flag + carried-over estimate), not
// thrown.
EstimateSeries estimate_series_isa(const MeasurementSeries& series, int num_sections,
                                   double tau);
EstimateSeries estimate_series_learn(const MeasurementSeries& series, int model_sections,
                                     double tau, const OptimizerConfig& optimizer);

struct ExperimentResult {
    ExperimentConfig config;              // fully resolved
    MeasurementSeries series;
    std::vector<EstimateSeries> estimates;  // isa and/or learn, in run order
    MetricsReport metrics;
};

// Generate the scenario and run the selected estimators; no filesystem
// output. Estimator degradation (e.g. a degenerate ISA step) is recorded in
// the result, not thrown.
ExperimentResult run_experiment_in_memory(const ExperimentConfig& config);

// Same, plus writes truth.csv, response.csv, est_<name>.csv, metrics.csv,
// residuals.csv and config_resolved.json into the resolved output directory.
ExperimentResult run_experiment(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Sweep

enum class SweepAxis { kSigma2z, kSeed };

struct SweepConfig {
    ExperimentConfig base;
    SweepAxis axis = SweepAxis::kSigma2z;
    std::vector<double> values;         // sigma2_z per point (kSigma2z axis)
    std::vector<std::uint64_t> seeds;   // runs per point (kSigma2z) or the axis itself (kSeed)

    void validate() const;
};

SweepConfig sweep_config_from_json(const std::string& text);
SweepConfig load_sweep_config(const std::filesystem::path& path);

struct SweepEstimatorSummary {
    std::string estimator;
    int runs = 0;
    int flagged = 0;                   // excluded from the success denominator
    int successes = 0;                 // verdict == perturbed section, not inconclusive
    double success_rate = 0.0;         // successes / (runs - flagged); 0 if empty
    double median_tracking_error = 0.0;  // median over runs of mean section error
};

struct SweepPoint {
    double axis_value = 0.0;           // sigma2_z, or the seed for kSeed
    std::vector<SweepEstimatorSummary> per_estimator;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::vector<ExperimentResult> runs;  // axis-major, then seed order
    int perturbed_section = 0;           // 1-based target from the profile
};

// Runs every (axis value, seed) experiment independently (in parallel) and
// aggregates localization success rates and median tracking errors.
SweepResult sweep(const SweepConfig& config);

// Same, plus writes sweep.csv and runs.csv into the resolved output
// directory of the base config.
SweepResult run_sweep(const SweepConfig& config);

// ---------------------------------------------------------------------------
// CSV artifacts (schemas are fixed; see README)

void write_params_csv(const std::filesystem::path& path,
                      std::span<const ChannelParams> series);
std::vector<ChannelParams> read_params_csv(const std::filesystem::path& path);

void write_response_csv(const std::filesystem::path& path,
                        std::span<const FrequencyResponse> series);
std::vector<FrequencyResponse> read_response_csv(const std::filesystem::path& path);

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_metrics_csv(const std::filesystem::path& path);

void write_residuals_csv(const std::filesystem::path& path,
                         std::span<const EstimateSeries> estimates);

// Self-contained scenario record: per time step k, the ground-truth section
// triples, then the L x 8 real parts of the measured response entries.
void write_scenario_csv(const std::filesystem::path& path, const MeasurementSeries& series);
MeasurementSeries read_scenario_csv(const std::filesystem::path& path);

}  // namespace polsense

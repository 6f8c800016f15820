#pragma once

// Scenario generation: ground-truth channel trajectories with random-walk
// rotation angles, plus additive complex-normal estimation noise on the
// measured Jones matrices.

#include <cstdint>
#include <span>
#include <vector>

#include "polsense/channel.hpp"
#include "polsense/rng.hpp"

namespace polsense {

// Per-section, per-step increment variances for the angle random walk.
// sigma2[n][k] drives phi, rho2[n][k] drives psi; index k = 1..K is the step
// that moves the state from k-1 to k (row k = 0 is unused).
struct PerturbationProfile {
    std::vector<std::vector<double>> sigma2;
    std::vector<std::vector<double>> rho2;

    static PerturbationProfile none(int num_sections, int horizon);

    int num_sections() const { return static_cast<int>(sigma2.size()); }
    int horizon() const {
        return sigma2.empty() ? 0 : static_cast<int>(sigma2[0].size()) - 1;
    }
    // Set both variances for one section (1-based) on steps [k_start, k_end].
    void add_window(int section, int k_start, int k_end, double sigma2_value,
                    double rho2_value);
    void validate() const;
};

// Per-entry complex-normal variance of the Jones-matrix estimation error:
// E[|Z|^2] = sigma2_z per entry (sigma2_z / 2 per quadrature).
struct NoiseModel {
    double sigma2_z = 0.0;
};

struct ScenarioConfig {
    int num_sections = 5;
    int horizon = 50;           // K: time steps 0..K
    int num_frequencies = 6;    // L
    double tau = 1.0;
    double gamma_min = 0.07;
    double gamma_max = 0.17;
    double angle_min = -3.141592653589793;
    double angle_max = 3.141592653589793;
    PerturbationProfile profile;
    NoiseModel noise;
    std::uint64_t seed = 1;

    void validate() const;
};

// Time-indexed measurements plus the generating ground truth. Estimators
// only ever receive measurements() and grid(); the ground truth is retained
// for evaluation.
class MeasurementSeries {
  public:
    MeasurementSeries(FrequencyGrid grid, std::vector<FrequencyResponse> measured,
                      std::vector<ChannelParams> truth);

    const FrequencyGrid& grid() const { return grid_; }
    std::span<const FrequencyResponse> measurements() const { return measured_; }
    std::span<const ChannelParams> ground_truth() const { return truth_; }
    int horizon() const { return static_cast<int>(measured_.size()) - 1; }

  private:
    FrequencyGrid grid_;
    std::vector<FrequencyResponse> measured_;
    std::vector<ChannelParams> truth_;
};

// gamma_n ~ U[gamma_min, gamma_max], phi_n(0), psi_n(0) ~ U[angle_min, angle_max].
ChannelParams sample_initial(const ScenarioConfig& config, RngStream& rng);

// One random-walk step: phi_n += N(0, sigma2[n][k]), psi_n += N(0, rho2[n][k]).
// gamma and tau are unchanged. Standard normals are drawn for every section
// regardless of variance so a realization is invariant under variance changes.
ChannelParams evolve(const ChannelParams& previous, const PerturbationProfile& profile,
                     int k, RngStream& rng);

// Adds an independent complex Gaussian with E[|Z|^2] = sigma2_z to every
// matrix entry. Draws happen even for sigma2_z = 0 (scaled by zero).
FrequencyResponse add_noise(const FrequencyResponse& response, const NoiseModel& model,
                            RngStream& rng);

// Full scenario: a pure function of the config (and its seed).
MeasurementSeries generate_scenario(const ScenarioConfig& config);

}  // namespace polsense

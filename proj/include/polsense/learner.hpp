#pragma once

// Physics-based estimator: the forward cascade is parameterized by trainable
// per-section (gamma, phi, psi) and fitted to a measured response by
// minimizing the frequency-summed squared Frobenius error with Adam.
// Gradients are analytic (prefix/suffix product rule), so one evaluation
// costs O(N * L) small matrix products.

#include <span>
#include <stdexcept>
#include <vector>

#include "polsense/channel.hpp"

namespace polsense {

// The trainable state has exactly the shape of a channel: per-section
// (gamma, phi, psi) with tau known and fixed. Kept as an alias so the
// estimator's vocabulary is explicit without duplicating the type.
using TrainableParams = ChannelParams;

struct OptimizerConfig {
    int iterations = 300;        // M: Adam steps for a cold-start fit
    double alpha = 0.05;         // learning rate
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int track_iterations = 300;  // steps per warm-started time step (k > 0)
    double grad_norm_stop = 0.0; // optional early stop; 0 disables

    void validate() const;
};

// Raised when the loss or gradient turns non-finite during optimization.
class DivergenceError : public std::runtime_error {
  public:
    DivergenceError(std::string message, int iteration)
        : std::runtime_error(std::move(message)), iteration_(iteration) {}
    int iteration() const { return iteration_; }

  private:
    int iteration_;
};

struct FitResult {
    TrainableParams params;
    std::vector<double> loss_trajectory;  // loss before step t, one entry per step taken
    double final_loss = 0.0;
    double gradient_norm = 0.0;           // at the returned parameters
};

struct TrackStep {
    TrainableParams params;
    double final_loss = 0.0;
    double gradient_norm = 0.0;
};

// sum_i || measured(w_i) - H(w_i; params) ||_F^2, evaluated on the
// measurement's own grid. Requires params.tau == measured.grid.tau.
double loss(const ChannelParams& params, const FrequencyResponse& measured);

// Exact gradient of loss() with respect to the flattened parameter vector
// (gamma_1, phi_1, psi_1, gamma_2, ...), length 3N.
std::vector<double> loss_gradient(const ChannelParams& params,
                                  const FrequencyResponse& measured);

// Loss and gradient in one pass (shared cascade products).
double loss_and_gradient(const ChannelParams& params, const FrequencyResponse& measured,
                         std::vector<double>& gradient);

// Exactly cfg.iterations Adam steps from init (unless the optional gradient
// norm stop fires). Deterministic given inputs.
FitResult fit(const FrequencyResponse& measured, const TrainableParams& init,
              const OptimizerConfig& cfg);

// Cold-start fit at k = 0 (all parameters zero), then warm-started fits with
// cfg.track_iterations steps for k > 0. Only measurements are consumed.
std::vector<TrackStep> track(std::span<const FrequencyResponse> measured,
                             int model_sections, double tau, const OptimizerConfig& cfg);

}  // namespace polsense

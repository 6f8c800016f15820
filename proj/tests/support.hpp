#pragma once

// Shared helpers for the test suites: random channel draws and error metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <polsense/channel.hpp>
#include <polsense/jones.hpp>
#include <polsense/rng.hpp>

namespace polsense::testing {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Frobenius distance between two Jones matrices.
inline double mat_error(const Jones& a, const Jones& b) { return (a - b).norm(); }

// Random channel with gamma in [gamma_min, gamma_max] and angles in [-pi, pi].
// When min_sin > 0, phi is redrawn until |sin phi| > min_sin, keeping the
// rotation identifiable.  When min_cos > 0, phi is also kept away from +-pi/2;
// the end taps of the response shrink like the product of the |cos phi_n|, so
// a near-crossed section makes the peel read its direction from a vanishing
// matrix and the reconstruction conditioning collapses.
inline ChannelParams random_channel(RngStream& rng, int num_sections,
                                    double gamma_min = 0.07, double gamma_max = 0.17,
                                    double min_sin = 0.0, double tau = 1.0,
                                    double min_cos = 0.0) {
    ChannelParams params;
    params.tau = tau;
    params.sections.resize(static_cast<std::size_t>(num_sections));
    for (SectionParams& s : params.sections) {
        s.gamma = rng.uniform(gamma_min, gamma_max);
        do {
            s.phi = rng.uniform(-kPi, kPi);
        } while (std::abs(std::sin(s.phi)) <= min_sin ||
                 std::abs(std::cos(s.phi)) <= min_cos);
        s.psi = rng.uniform(-kPi, kPi);
    }
    return params;
}

// Smallest |cos phi_n| across sections: the conditioning driver of the peel.
inline double min_abs_cos(const ChannelParams& params) {
    double worst = 1.0;
    for (const SectionParams& s : params.sections)
        worst = std::min(worst, std::abs(std::cos(s.phi)));
    return worst;
}

// Largest per-section error of the sign-invariant fingerprint (|cos phi|, gamma).
inline double fingerprint_error(const ChannelParams& truth, const ChannelParams& estimate) {
    double worst = 0.0;
    for (std::size_t n = 0; n < truth.sections.size(); ++n) {
        const SectionParams& t = truth.sections[n];
        const SectionParams& e = estimate.sections[n];
        worst = std::max(worst,
                         std::abs(std::abs(std::cos(e.phi)) - std::abs(std::cos(t.phi))));
        worst = std::max(worst, std::abs(e.gamma - t.gamma));
    }
    return worst;
}

// Largest Frobenius error between two responses on the same grid.
inline double max_matrix_error(const FrequencyResponse& a, const FrequencyResponse& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.matrices.size(); ++i)
        worst = std::max(worst, mat_error(a.matrices[i], b.matrices[i]));
    return worst;
}

}  // namespace polsense::testing

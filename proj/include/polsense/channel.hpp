#pragma once

// Forward channel model: a cascade of N sections, each consisting of a
// polarization-dependent loss (PDL) element, a polarization rotation, and a
// differential group delay (DGD) element. The cascade response at angular
// frequency w is
//
//   H(w) = A_N A_{N-1} ... A_1,   A_n = Gamma(gamma_n) R(phi_n, psi_n) T(w),
//
// i.e. section 1 is applied first (rightmost factor). In the variable
// z = exp(j w tau) the response is a matrix polynomial of degree N whose
// coefficients ("taps") are computed exactly by impulse_taps().

#include <stdexcept>
#include <vector>

#include "polsense/jones.hpp"

namespace polsense {

// One section: PDL extinction gamma (nepers) and rotation angles phi, psi
// (radians). Angles are kept unwrapped; all trigonometric use is
// wrap-agnostic.
struct SectionParams {
    double gamma = 0.0;
    double phi = 0.0;
    double psi = 0.0;
};

// Full channel state: ordered sections (index 0 is applied first) plus the
// per-section DGD tau shared by all sections.
struct ChannelParams {
    std::vector<SectionParams> sections;
    double tau = 1.0;

    int num_sections() const { return static_cast<int>(sections.size()); }
    void validate() const;
};

// Angular frequency sample points. The canonical grid places L equispaced
// samples over one free spectral range: w_i tau = 2 pi i / L.
struct FrequencyGrid {
    std::vector<double> omegas;
    double tau = 1.0;

    static FrequencyGrid canonical(int num_points, double tau);

    int size() const { return static_cast<int>(omegas.size()); }
    void validate() const;
    // Throws if two grid points coincide modulo 2 pi / tau, which makes the
    // tap representation ambiguous.
    void validate_unaliased() const;

    bool operator==(const FrequencyGrid& o) const = default;
};

// Jones matrices sampled on a frequency grid.
struct FrequencyResponse {
    FrequencyGrid grid;
    std::vector<Jones> matrices;

    void validate() const;
};

// Coefficients h_0..h_D of the response polynomial H(z) = sum_m h_m z^m,
// z = exp(j w tau). A channel with N sections has degree D = N.
struct TapSequence {
    std::vector<Jones> taps;
    double tau = 1.0;

    int degree() const { return static_cast<int>(taps.size()) - 1; }
    double total_norm() const;
};

// Elementary section matrices.
Jones make_pdl(double gamma);                      // diag(e^{g/2}, e^{-g/2})
Jones make_rotation(double phi, double psi);       // unitary, det = 1
Jones make_dgd(double omega, double tau);          // diag(1, e^{j w tau})

// Gamma(gamma) * R(phi, psi); the frequency-independent part of a section.
Jones section_loss_rotation(const SectionParams& s);

// Full cascade response on a grid.
FrequencyResponse channel_response(const ChannelParams& params,
                                   const FrequencyGrid& grid);

// Exact polynomial coefficients of H(z), computed symbolically by carrying
// the tap list through the cascade (no transform involved, so this can serve
// as an oracle for transform-based tap recovery).
TapSequence impulse_taps(const ChannelParams& params);

// Evaluate the tap polynomial at a single frequency (Horner in z).
Jones evaluate_taps(const TapSequence& taps, double omega);

// Sum over the grid of squared Frobenius distances between the two
// responses. Throws std::invalid_argument if the grids differ.
double response_distance(const FrequencyResponse& a, const FrequencyResponse& b);

}  // namespace polsense

#pragma once

// Inverse-scattering (layer-peeling) estimator. The measured frequency
// response is converted to time-domain taps; the outermost section's
// parameters are read off the rank-1 end taps, the section is de-embedded,
// and the procedure repeats until only a degree-zero remainder is left.
//
// The method is exact on noiseless responses but degrades quickly with
// noise because each peel feeds estimation error into the next one; that
// degradation is surfaced through PeelDiagnostics rather than exceptions.

#include <stdexcept>
#include <utility>
#include <vector>

#include "polsense/channel.hpp"

namespace polsense {

// Per-peel health indicators. Residuals are the norms of the rows that an
// exact de-embedding annihilates, relative to the total tap norm; the
// condition numbers are sigma_min / sigma_max of the end taps (0 for an
// exactly rank-1 tap).
struct PeelDiagnostics {
    double residual_bottom = 0.0;   // row 2 of b_0 after de-embedding
    double residual_top = 0.0;      // row 1 of b_D after de-embedding
    double end_tap_condition_first = 0.0;  // sigma_min/sigma_max of h_0
    double end_tap_condition_last = 0.0;   // sigma_min/sigma_max of h_D
    bool unidentifiable = false;    // phi-degenerate section (sin phi ~ 0)
};

// Raised when an end tap is numerically zero and no section can be
// extracted. run_isa() attaches the 1-based section index.
class DegenerateSectionError : public std::runtime_error {
  public:
    explicit DegenerateSectionError(std::string message, int section = -1)
        : std::runtime_error(std::move(message)), section_(section) {}
    int section() const { return section_; }

  private:
    int section_;
};

// Recover the N+1 tap matrices from L >= N+1 samples of the response:
// an exact inverse DFT on the canonical grid with L = N+1, a least-squares
// fit for L > N+1. Throws for underdetermined (L < N+1) or aliased grids.
TapSequence response_to_taps(const FrequencyResponse& response, int num_sections);

// Read the outermost section's (gamma, phi, psi) from the rank-1 structure
// of the end taps. phi is reported in [0, pi/2]; the remaining sign freedom
// belongs to the cascade's sign-commutation ambiguity class.
std::pair<SectionParams, PeelDiagnostics> extract_last_section(const TapSequence& taps);

// De-embed one section: taps of (Gamma R)^{-1} H(z) with the trailing
// diag(1, z) stripped. Degree drops by exactly one. If diagnostics is given,
// the discarded-row residuals are recorded there.
TapSequence peel(const TapSequence& taps, const SectionParams& section,
                 PeelDiagnostics* diagnostics = nullptr);

struct IsaResult {
    ChannelParams estimate;                 // sections in order 1..N
    std::vector<PeelDiagnostics> diagnostics;  // same order
    double remainder_deviation = 0.0;       // || final tap -/+ I ||_F
};

// Full layer peel from section N down to section 1. Noisy inputs never
// throw; instability shows up in the diagnostics and in wild parameter
// values instead.
IsaResult run_isa(const FrequencyResponse& response, int num_sections, double tau);

}  // namespace polsense

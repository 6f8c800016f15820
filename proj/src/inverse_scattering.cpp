#include "polsense/inverse_scattering.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <tuple>

namespace polsense {

namespace {

constexpr cplx kImag{0.0, 1.0};
constexpr double kDegenerateRatio = 1e-9;   // |r1|, |r2| below this: sin(phi) ~ 0
constexpr double kZeroTapRel = 1e-12;       // end tap below this (relative): no section

// Solve the Hermitian positive-definite system G x = b (Gaussian elimination
// with partial pivoting; G is tiny, at most (N+1)^2).
std::vector<cplx> solve_dense(std::vector<std::vector<cplx>> g, std::vector<cplx> b) {
    const int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int row = col + 1; row < n; ++row)
            if (std::abs(g[row][col]) > std::abs(g[pivot][col])) pivot = row;
        if (std::abs(g[pivot][col]) == 0.0)
            throw std::invalid_argument("response_to_taps: singular tap system");
        std::swap(g[col], g[pivot]);
        std::swap(b[col], b[pivot]);
        for (int row = col + 1; row < n; ++row) {
            const cplx f = g[row][col] / g[col][col];
            for (int j = col; j < n; ++j) g[row][j] -= f * g[col][j];
            b[row] -= f * b[col];
        }
    }
    std::vector<cplx> x(n);
    for (int row = n - 1; row >= 0; --row) {
        cplx acc = b[row];
        for (int j = row + 1; j < n; ++j) acc -= g[row][j] * x[j];
        x[row] = acc / g[row][row];
    }
    return x;
}

}  // namespace

TapSequence response_to_taps(const FrequencyResponse& response, int num_sections) {
    response.validate();
    if (num_sections < 1)
        throw std::invalid_argument("response_to_taps: need at least one section");
    const int num_taps = num_sections + 1;
    const int L = response.grid.size();
    if (L < num_taps)
        throw std::invalid_argument(
            "response_to_taps: underdetermined system (need L >= N+1 frequency samples)");
    response.grid.validate_unaliased();

    // Least-squares fit of H(w_i) = sum_m h_m z_i^m via the normal equations;
    // on the canonical grid the design matrix has orthogonal columns, so the
    // L = N+1 case reduces to the exact inverse DFT.
    std::vector<std::vector<cplx>> powers(L, std::vector<cplx>(num_taps));
    for (int i = 0; i < L; ++i) {
        const cplx z = std::exp(kImag * (response.grid.omegas[i] * response.grid.tau));
        powers[i][0] = 1.0;
        for (int m = 1; m < num_taps; ++m) powers[i][m] = powers[i][m - 1] * z;
    }
    std::vector<std::vector<cplx>> gram(num_taps, std::vector<cplx>(num_taps));
    for (int m = 0; m < num_taps; ++m)
        for (int p = 0; p < num_taps; ++p) {
            cplx acc = 0.0;
            for (int i = 0; i < L; ++i) acc += std::conj(powers[i][m]) * powers[i][p];
            gram[m][p] = acc;
        }

    TapSequence taps;
    taps.tau = response.grid.tau;
    taps.taps.assign(num_taps, Jones::zero());
    const auto entry_of = [](const Jones& j, int e) -> cplx {
        switch (e) {
            case 0: return j.a11;
            case 1: return j.a12;
            case 2: return j.a21;
            default: return j.a22;
        }
    };
    const auto entry_ref = [](Jones& j, int e) -> cplx& {
        switch (e) {
            case 0: return j.a11;
            case 1: return j.a12;
            case 2: return j.a21;
            default: return j.a22;
        }
    };
    for (int e = 0; e < 4; ++e) {
        std::vector<cplx> rhs(num_taps);
        for (int m = 0; m < num_taps; ++m) {
            cplx acc = 0.0;
            for (int i = 0; i < L; ++i)
                acc += std::conj(powers[i][m]) * entry_of(response.matrices[i], e);
            rhs[m] = acc;
        }
        const std::vector<cplx> h = solve_dense(gram, std::move(rhs));
        for (int m = 0; m < num_taps; ++m) entry_ref(taps.taps[m], e) = h[m];
    }
    return taps;
}

std::pair<SectionParams, PeelDiagnostics> extract_last_section(const TapSequence& taps) {
    const int deg = taps.degree();
    if (deg < 1)
        throw std::invalid_argument("extract_last_section: tap degree must be >= 1");

    const Jones& first = taps.taps.front();
    const Jones& last = taps.taps.back();
    const double total = taps.total_norm();
    if (first.norm() < kZeroTapRel * total || last.norm() < kZeroTapRel * total)
        throw DegenerateSectionError("extract_last_section: end tap numerically zero");

    PeelDiagnostics diag;
    {
        const auto [smax, smin] = singular_values(first);
        diag.end_tap_condition_first = smax > 0.0 ? smin / smax : 0.0;
    }
    {
        const auto [smax, smin] = singular_values(last);
        diag.end_tap_condition_last = smax > 0.0 ? smin / smax : 0.0;
    }

    // The cascade's end taps are rank-1 outer products whose column spaces
    // are the two columns of Gamma R:
    //   h_0 ~ (Gamma R e1) * (row),   h_D ~ (Gamma R e2) * (row).
    // With u, v the dominant left singular vectors,
    //   r1 = u2/u1 = e^{-gamma} j e^{-j psi} tan(phi),
    //   r2 = v1/v2 = e^{+gamma} j e^{+j psi} tan(phi),
    // so tan^2(phi) = -r1 r2, gamma = -ln|r1/r2| / 2, psi = -arg(r1/r2) / 2.
    const std::array<cplx, 2> u = dominant_left_singular_vector(first);
    const std::array<cplx, 2> v = dominant_left_singular_vector(last);
    const cplx r1 = u[1] / u[0];
    const cplx r2 = v[0] / v[1];

    SectionParams sec;
    const bool finite = std::isfinite(std::abs(r1)) && std::isfinite(std::abs(r2));
    if (!finite || (std::abs(r1) < kDegenerateRatio && std::abs(r2) < kDegenerateRatio) ||
        std::abs(r1) == 0.0 || std::abs(r2) == 0.0) {
        // sin(phi) ~ 0 (or an exactly diagonal/antidiagonal edge case): the
        // off-diagonal ratios carry no information, so gamma and psi are
        // unidentifiable from the end taps.
        diag.unidentifiable = true;
        return {sec, diag};
    }

    const double tan2 = std::max(0.0, (-(r1 * r2)).real());  // real-axis projection
    sec.phi = std::atan(std::sqrt(tan2));
    const cplx ratio = r1 / r2;
    sec.gamma = -0.5 * std::log(std::abs(ratio));
    sec.psi = -0.5 * std::arg(ratio);

    // r1/r2 only determines psi modulo pi. Pick the branch under which the
    // signed tan(phi) implied by r1 and r2 is nonnegative, consistent with
    // phi in [0, pi/2]; the other branch would break the de-embedding.
    const cplx ephase = std::exp(kImag * sec.psi);
    const double signed_tan =
        (-kImag * (std::exp(sec.gamma) * ephase * r1 +
                   std::exp(-sec.gamma) * std::conj(ephase) * r2))
            .real();
    if (signed_tan < 0.0) sec.psi += std::numbers::pi;
    return {sec, diag};
}

TapSequence peel(const TapSequence& taps, const SectionParams& section,
                 PeelDiagnostics* diagnostics) {
    const int deg = taps.degree();
    if (deg < 1)
        throw std::invalid_argument("peel: tap degree must be >= 1");

    const Jones w = section_loss_rotation(section).inverse();
    std::vector<Jones> b(taps.taps.size());
    double bnorm_sq = 0.0;
    for (size_t m = 0; m < taps.taps.size(); ++m) {
        b[m] = w * taps.taps[m];
        bnorm_sq += b[m].norm_sq();
    }
    const double bnorm = std::sqrt(bnorm_sq);

    if (diagnostics) {
        // Rows annihilated by an exact de-embedding of diag(1, z).
        const double bottom =
            std::sqrt(std::norm(b.front().a21) + std::norm(b.front().a22));
        const double top = std::sqrt(std::norm(b.back().a11) + std::norm(b.back().a12));
        diagnostics->residual_bottom = bnorm > 0.0 ? bottom / bnorm : 0.0;
        diagnostics->residual_top = bnorm > 0.0 ? top / bnorm : 0.0;
    }

    TapSequence out;
    out.tau = taps.tau;
    out.taps.resize(deg);
    for (int m = 0; m < deg; ++m) {
        out.taps[m].a11 = b[m].a11;
        out.taps[m].a12 = b[m].a12;
        out.taps[m].a21 = b[m + 1].a21;
        out.taps[m].a22 = b[m + 1].a22;
    }
    return out;
}

IsaResult run_isa(const FrequencyResponse& response, int num_sections, double tau) {
    if (!(tau > 0.0))
        throw std::invalid_argument("run_isa: tau must be positive");
    if (tau != response.grid.tau)
        throw std::invalid_argument("run_isa: tau does not match the response grid");

    TapSequence taps = response_to_taps(response, num_sections);

    IsaResult result;
    result.estimate.tau = tau;
    result.estimate.sections.resize(num_sections);
    result.diagnostics.resize(num_sections);
    for (int n = num_sections; n >= 1; --n) {
        SectionParams sec;
        PeelDiagnostics diag;
        try {
            std::tie(sec, diag) = extract_last_section(taps);
        } catch (const DegenerateSectionError& e) {
            throw DegenerateSectionError(e.what(), n);
        }
        taps = peel(taps, sec, &diag);
        result.estimate.sections[n - 1] = sec;
        result.diagnostics[n - 1] = diag;
    }

    // A consistent peel leaves +/- identity. The global sign is not
    // observable section by section (pairs of sign flips commute through the
    // cascade), so fold a leftover -1 into section 1 via
    // -R(phi, psi) = R(pi - phi, psi + pi), which preserves |cos phi|.
    const Jones& remainder = taps.taps.front();
    const double sign = remainder.trace().real() >= 0.0 ? 1.0 : -1.0;
    if (sign < 0.0) {
        result.estimate.sections[0].phi = std::numbers::pi - result.estimate.sections[0].phi;
        result.estimate.sections[0].psi += std::numbers::pi;
    }
    result.remainder_deviation = (remainder - sign * Jones::identity()).norm();
    return result;
}

}  // namespace polsense

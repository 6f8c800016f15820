#include "polsense/channel.hpp"

#include <cmath>
#include <numbers>

namespace polsense {

namespace {
constexpr cplx kImag{0.0, 1.0};

bool all_finite(std::initializer_list<double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}
}  // namespace

void ChannelParams::validate() const {
    if (sections.empty())
        throw std::invalid_argument("ChannelParams: need at least one section");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw std::invalid_argument("ChannelParams: tau must be positive");
    for (const auto& s : sections)
        if (!all_finite({s.gamma, s.phi, s.psi}))
            throw std::invalid_argument("ChannelParams: non-finite section parameter");
}

FrequencyGrid FrequencyGrid::canonical(int num_points, double tau) {
    if (num_points < 1)
        throw std::invalid_argument("FrequencyGrid: need at least one point");
    if (!(tau > 0.0))
        throw std::invalid_argument("FrequencyGrid: tau must be positive");
    FrequencyGrid g;
    g.tau = tau;
    g.omegas.resize(num_points);
    for (int i = 0; i < num_points; ++i)
        g.omegas[i] = 2.0 * std::numbers::pi * i / (num_points * tau);
    return g;
}

void FrequencyGrid::validate() const {
    if (omegas.empty())
        throw std::invalid_argument("FrequencyGrid: empty grid");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw std::invalid_argument("FrequencyGrid: tau must be positive");
    for (double w : omegas)
        if (!std::isfinite(w))
            throw std::invalid_argument("FrequencyGrid: non-finite frequency");
}

void FrequencyGrid::validate_unaliased() const {
    validate();
    const int n = size();
    std::vector<cplx> z(n);
    for (int i = 0; i < n; ++i) z[i] = std::exp(kImag * (omegas[i] * tau));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(z[i] - z[j]) < 1e-9)
                throw std::invalid_argument(
                    "FrequencyGrid: grid points coincide modulo 2*pi/tau (aliased grid)");
}

void FrequencyResponse::validate() const {
    grid.validate();
    if (matrices.size() != grid.omegas.size())
        throw std::invalid_argument("FrequencyResponse: matrix count != grid size");
}

double TapSequence::total_norm() const {
    double s = 0.0;
    for (const auto& t : taps) s += t.norm_sq();
    return std::sqrt(s);
}

Jones make_pdl(double gamma) {
    const double h = 0.5 * gamma;
    return {cplx{std::exp(h)}, cplx{0.0}, cplx{0.0}, cplx{std::exp(-h)}};
}

Jones make_rotation(double phi, double psi) {
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    const cplx e = std::exp(kImag * psi);
    return {cplx{c}, kImag * e * s, kImag * std::conj(e) * s, cplx{c}};
}

Jones make_dgd(double omega, double tau) {
    return {cplx{1.0}, cplx{0.0}, cplx{0.0}, std::exp(kImag * (omega * tau))};
}

Jones section_loss_rotation(const SectionParams& s) {
    return make_pdl(s.gamma) * make_rotation(s.phi, s.psi);
}

FrequencyResponse channel_response(const ChannelParams& params,
                                   const FrequencyGrid& grid) {
    params.validate();
    grid.validate();

    // The frequency-independent factors are shared across grid points.
    std::vector<Jones> lr(params.sections.size());
    for (size_t n = 0; n < params.sections.size(); ++n)
        lr[n] = section_loss_rotation(params.sections[n]);

    FrequencyResponse resp;
    resp.grid = grid;
    resp.matrices.reserve(grid.omegas.size());
    for (double w : grid.omegas) {
        const cplx zphase = std::exp(kImag * (w * params.tau));
        Jones h = Jones::identity();
        for (size_t n = 0; n < lr.size(); ++n) {
            // A_n = (Gamma R) * T(w): T scales the second column of Gamma R.
            Jones a = lr[n];
            a.a12 *= zphase;
            a.a22 *= zphase;
            h = a * h;
        }
        resp.matrices.push_back(h);
    }
    return resp;
}

TapSequence impulse_taps(const ChannelParams& params) {
    params.validate();

    // Carry the coefficient list through the cascade. Appending one section
    // maps G(z) -> Gamma R diag(1, z) G(z): the diag(1, z) factor shifts the
    // second row of every coefficient up by one degree.
    std::vector<Jones> g{Jones::identity()};
    for (const auto& s : params.sections) {
        const Jones lr = section_loss_rotation(s);
        const int deg = static_cast<int>(g.size()) - 1;
        std::vector<Jones> next(g.size() + 1);
        for (int m = 0; m <= deg + 1; ++m) {
            Jones b;  // coefficient of diag(1,z) G at degree m
            if (m <= deg) {
                b.a11 = g[m].a11;
                b.a12 = g[m].a12;
            }
            if (m >= 1) {
                b.a21 = g[m - 1].a21;
                b.a22 = g[m - 1].a22;
            }
            next[m] = lr * b;
        }
        g = std::move(next);
    }
    return TapSequence{std::move(g), params.tau};
}

Jones evaluate_taps(const TapSequence& taps, double omega) {
    if (taps.taps.empty())
        throw std::invalid_argument("evaluate_taps: empty tap sequence");
    const cplx z = std::exp(kImag * (omega * taps.tau));
    Jones acc = taps.taps.back();
    for (int m = static_cast<int>(taps.taps.size()) - 2; m >= 0; --m)
        acc = z * acc + taps.taps[m];
    return acc;
}

double response_distance(const FrequencyResponse& a, const FrequencyResponse& b) {
    a.validate();
    b.validate();
    if (!(a.grid == b.grid))
        throw std::invalid_argument("response_distance: mismatched frequency grids");
    double d = 0.0;
    for (size_t i = 0; i < a.matrices.size(); ++i)
        d += (a.matrices[i] - b.matrices[i]).norm_sq();
    return d;
}

}  // namespace polsense

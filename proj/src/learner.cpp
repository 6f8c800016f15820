#include "polsense/learner.hpp"

#include <cmath>
#include <string>

#include "polsense/jones.hpp"

namespace polsense {

namespace {

constexpr cplx kImag{0.0, 1.0};

// Frequency-independent part of one section and its parameter derivatives.
// The full per-frequency factor is each of these with the second column
// scaled by z = e^{j w tau} (the delay diag(1, z) applied on the right).
struct SectionCache {
    Jones value;    // G(gamma) R(phi, psi)
    Jones d_gamma;  // d/dgamma of value
    Jones d_phi;
    Jones d_psi;
};

Jones row_scaled(const Jones& a, cplx top, cplx bottom) {
    return {top * a.a11, top * a.a12, bottom * a.a21, bottom * a.a22};
}

SectionCache build_section_cache(const SectionParams& s) {
    const double ep = std::exp(0.5 * s.gamma);
    const double em = std::exp(-0.5 * s.gamma);
    const double c = std::cos(s.phi);
    const double sn = std::sin(s.phi);
    const cplx jep = kImag * std::exp(kImag * s.psi);    // j e^{+j psi}
    const cplx jem = kImag * std::exp(-kImag * s.psi);   // j e^{-j psi}

    const Jones rot{c, jep * sn, jem * sn, c};
    const Jones rot_dphi{-sn, jep * c, jem * c, -sn};
    const Jones rot_dpsi{0.0, kImag * jep * sn, -kImag * jem * sn, 0.0};

    SectionCache cache;
    cache.value = row_scaled(rot, ep, em);
    cache.d_gamma = row_scaled(rot, 0.5 * ep, -0.5 * em);
    cache.d_phi = row_scaled(rot_dphi, ep, em);
    cache.d_psi = row_scaled(rot_dpsi, ep, em);
    return cache;
}

Jones with_delay(const Jones& a, cplx z) {
    return {a.a11, a.a12 * z, a.a21, a.a22 * z};
}

// Re <x, y>_F = Re sum_ab conj(x_ab) y_ab.
double real_inner(const Jones& x, const Jones& y) {
    return (std::conj(x.a11) * y.a11 + std::conj(x.a12) * y.a12 +
            std::conj(x.a21) * y.a21 + std::conj(x.a22) * y.a22)
        .real();
}

void check_compatible(const ChannelParams& params, const FrequencyResponse& measured) {
    params.validate();
    measured.validate();
    if (params.tau != measured.grid.tau) {
        throw std::invalid_argument("learner: parameter tau does not match measurement grid tau");
    }
}

std::vector<double> flatten(const ChannelParams& params) {
    std::vector<double> theta;
    theta.reserve(3 * params.num_sections());
    for (const SectionParams& s : params.sections) {
        theta.push_back(s.gamma);
        theta.push_back(s.phi);
        theta.push_back(s.psi);
    }
    return theta;
}

ChannelParams unflatten(const std::vector<double>& theta, double tau) {
    ChannelParams params;
    params.tau = tau;
    params.sections.resize(theta.size() / 3);
    for (std::size_t n = 0; n < params.sections.size(); ++n) {
        params.sections[n] = {theta[3 * n], theta[3 * n + 1], theta[3 * n + 2]};
    }
    return params;
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

void OptimizerConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("optimizer: iterations must be >= 1");
    if (track_iterations < 1) {
        throw std::invalid_argument("optimizer: track_iterations must be >= 1");
    }
    if (!(alpha > 0.0)) throw std::invalid_argument("optimizer: alpha must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) {
        throw std::invalid_argument("optimizer: beta1 must be in [0, 1)");
    }
    if (!(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("optimizer: beta2 must be in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("optimizer: epsilon must be > 0");
    if (!(grad_norm_stop >= 0.0)) {
        throw std::invalid_argument("optimizer: grad_norm_stop must be >= 0");
    }
}

double loss(const ChannelParams& params, const FrequencyResponse& measured) {
    check_compatible(params, measured);
    return response_distance(measured, channel_response(params, measured.grid));
}

double loss_and_gradient(const ChannelParams& params, const FrequencyResponse& measured,
                         std::vector<double>& gradient) {
    check_compatible(params, measured);
    const int n_sections = params.num_sections();
    const std::size_t n_freq = measured.grid.size();

    gradient.assign(3 * static_cast<std::size_t>(n_sections), 0.0);

    std::vector<SectionCache> cache(static_cast<std::size_t>(n_sections));
    for (int n = 0; n < n_sections; ++n) {
        cache[static_cast<std::size_t>(n)] = build_section_cache(params.sections[static_cast<std::size_t>(n)]);
    }

    // Reused per-frequency workspaces.
    std::vector<Jones> factor(static_cast<std::size_t>(n_sections));
    std::vector<Jones> prefix(static_cast<std::size_t>(n_sections) + 1);

    double total = 0.0;
    for (std::size_t i = 0; i < n_freq; ++i) {
        const cplx z = std::exp(kImag * (measured.grid.omegas[i] * measured.grid.tau));

        prefix[0] = Jones::identity();
        for (int n = 0; n < n_sections; ++n) {
            const std::size_t un = static_cast<std::size_t>(n);
            factor[un] = with_delay(cache[un].value, z);
            prefix[un + 1] = factor[un] * prefix[un];
        }

        const Jones error = prefix[static_cast<std::size_t>(n_sections)] - measured.matrices[i];
        total += error.norm_sq();

        // cograd holds (suffix_n)^dagger * error while n walks N..1; the
        // per-parameter term is 2 Re tr(error^dagger suffix_n D prefix_{n-1})
        // = 2 Re <cograd, D * prefix_{n-1}>_F.
        Jones cograd = error;
        for (int n = n_sections - 1; n >= 0; --n) {
            const std::size_t un = static_cast<std::size_t>(n);
            const Jones& pre = prefix[un];
            gradient[3 * un + 0] += 2.0 * real_inner(cograd, with_delay(cache[un].d_gamma, z) * pre);
            gradient[3 * un + 1] += 2.0 * real_inner(cograd, with_delay(cache[un].d_phi, z) * pre);
            gradient[3 * un + 2] += 2.0 * real_inner(cograd, with_delay(cache[un].d_psi, z) * pre);
            cograd = factor[un].adjoint() * cograd;
        }
    }
    return total;
}

std::vector<double> loss_gradient(const ChannelParams& params,
                                  const FrequencyResponse& measured) {
    std::vector<double> gradient;
    loss_and_gradient(params, measured, gradient);
    return gradient;
}

FitResult fit(const FrequencyResponse& measured, const TrainableParams& init,
              const OptimizerConfig& cfg) {
    cfg.validate();
    check_compatible(init, measured);

    std::vector<double> theta = flatten(init);
    const std::size_t dim = theta.size();
    std::vector<double> m(dim, 0.0);   // first-moment accumulator
    std::vector<double> v(dim, 0.0);   // second-moment accumulator
    std::vector<double> gradient;

    FitResult result;
    result.loss_trajectory.reserve(static_cast<std::size_t>(cfg.iterations));

    double beta1_pow = 1.0;
    double beta2_pow = 1.0;
    for (int t = 1; t <= cfg.iterations; ++t) {
        const double current = loss_and_gradient(unflatten(theta, init.tau), measured, gradient);
        if (!std::isfinite(current) || !all_finite(gradient)) {
            throw DivergenceError(
                "fit diverged: non-finite loss or gradient at iteration " + std::to_string(t), t);
        }
        result.loss_trajectory.push_back(current);
        if (cfg.grad_norm_stop > 0.0 && norm2(gradient) <= cfg.grad_norm_stop) break;

        beta1_pow *= cfg.beta1;
        beta2_pow *= cfg.beta2;
        for (std::size_t p = 0; p < dim; ++p) {
            m[p] = cfg.beta1 * m[p] + (1.0 - cfg.beta1) * gradient[p];
            v[p] = cfg.beta2 * v[p] + (1.0 - cfg.beta2) * gradient[p] * gradient[p];
            const double m_hat = m[p] / (1.0 - beta1_pow);
            const double v_hat = v[p] / (1.0 - beta2_pow);
            theta[p] -= cfg.alpha * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }

    result.params = unflatten(theta, init.tau);
    result.final_loss = loss_and_gradient(result.params, measured, gradient);
    if (!std::isfinite(result.final_loss) || !all_finite(gradient)) {
        throw DivergenceError("fit diverged: non-finite state after final iteration",
                              cfg.iterations);
    }
    result.gradient_norm = norm2(gradient);
    return result;
}

std::vector<TrackStep> track(std::span<const FrequencyResponse> measured,
                             int model_sections, double tau, const OptimizerConfig& cfg) {
    cfg.validate();
    if (measured.empty()) throw std::invalid_argument("track: empty measurement series");
    if (model_sections < 1) throw std::invalid_argument("track: model_sections must be >= 1");
    if (!(tau > 0.0)) throw std::invalid_argument("track: tau must be > 0");

    TrainableParams state;
    state.tau = tau;
    state.sections.assign(static_cast<std::size_t>(model_sections), SectionParams{});

    std::vector<TrackStep> steps;
    steps.reserve(measured.size());
    for (std::size_t k = 0; k < measured.size(); ++k) {
        OptimizerConfig step_cfg = cfg;
        if (k > 0) step_cfg.iterations = cfg.track_iterations;
        FitResult fit_result;
        try {
            fit_result = fit(measured[k], state, step_cfg);
        } catch (const DivergenceError& e) {
            throw DivergenceError(
                "track: step " + std::to_string(k) + ": " + e.what(), e.iteration());
        }
        state = fit_result.params;
        steps.push_back({fit_result.params, fit_result.final_loss, fit_result.gradient_norm});
    }
    return steps;
}

}  // namespace polsense

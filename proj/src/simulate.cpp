#include "polsense/simulate.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace polsense {

namespace {
// Substream tags for seed derivation.
constexpr std::uint64_t kTagInit = 1;
constexpr std::uint64_t kTagWalk = 2;
constexpr std::uint64_t kTagNoise = 3;
}  // namespace

PerturbationProfile PerturbationProfile::none(int num_sections, int horizon) {
    if (num_sections < 1 || horizon < 0)
        throw std::invalid_argument("PerturbationProfile: bad dimensions");
    PerturbationProfile p;
    p.sigma2.assign(num_sections, std::vector<double>(horizon + 1, 0.0));
    p.rho2 = p.sigma2;
    return p;
}

void PerturbationProfile::add_window(int section, int k_start, int k_end,
                                     double sigma2_value, double rho2_value) {
    if (section < 1 || section > num_sections())
        throw std::invalid_argument("PerturbationProfile: section out of range");
    if (k_start > k_end || k_start < 0 || k_end > horizon())
        throw std::invalid_argument("PerturbationProfile: window outside horizon");
    if (sigma2_value < 0.0 || rho2_value < 0.0)
        throw std::invalid_argument("PerturbationProfile: negative variance");
    for (int k = std::max(k_start, 1); k <= k_end; ++k) {
        sigma2[section - 1][k] = sigma2_value;
        rho2[section - 1][k] = rho2_value;
    }
}

void PerturbationProfile::validate() const {
    if (sigma2.empty() || sigma2.size() != rho2.size())
        throw std::invalid_argument("PerturbationProfile: inconsistent dimensions");
    const size_t cols = sigma2[0].size();
    for (size_t n = 0; n < sigma2.size(); ++n) {
        if (sigma2[n].size() != cols || rho2[n].size() != cols)
            throw std::invalid_argument("PerturbationProfile: ragged rows");
        for (size_t k = 0; k < cols; ++k)
            if (!(sigma2[n][k] >= 0.0) || !(rho2[n][k] >= 0.0))
                throw std::invalid_argument("PerturbationProfile: negative variance");
    }
}

void ScenarioConfig::validate() const {
    if (num_sections < 1) throw std::invalid_argument("ScenarioConfig: N >= 1 required");
    if (horizon < 0) throw std::invalid_argument("ScenarioConfig: K >= 0 required");
    if (num_frequencies < 1) throw std::invalid_argument("ScenarioConfig: L >= 1 required");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw std::invalid_argument("ScenarioConfig: tau must be positive");
    if (!(gamma_min <= gamma_max) || !std::isfinite(gamma_min) || !std::isfinite(gamma_max))
        throw std::invalid_argument("ScenarioConfig: empty PDL range");
    if (!(angle_min <= angle_max) || !std::isfinite(angle_min) || !std::isfinite(angle_max))
        throw std::invalid_argument("ScenarioConfig: empty angle range");
    if (!(noise.sigma2_z >= 0.0))
        throw std::invalid_argument("ScenarioConfig: sigma2_z must be >= 0");
    profile.validate();
    if (profile.num_sections() != num_sections || profile.horizon() != horizon)
        throw std::invalid_argument("ScenarioConfig: profile dimensions do not match N, K");
}

MeasurementSeries::MeasurementSeries(FrequencyGrid grid,
                                     std::vector<FrequencyResponse> measured,
                                     std::vector<ChannelParams> truth)
    : grid_(std::move(grid)), measured_(std::move(measured)), truth_(std::move(truth)) {
    if (measured_.empty() || measured_.size() != truth_.size())
        throw std::invalid_argument("MeasurementSeries: inconsistent series lengths");
    for (const auto& m : measured_)
        if (!(m.grid == grid_))
            throw std::invalid_argument("MeasurementSeries: mixed frequency grids");
}

ChannelParams sample_initial(const ScenarioConfig& config, RngStream& rng) {
    config.validate();
    ChannelParams params;
    params.tau = config.tau;
    params.sections.resize(config.num_sections);
    for (auto& s : params.sections) {
        s.gamma = rng.uniform(config.gamma_min, config.gamma_max);
        s.phi = rng.uniform(config.angle_min, config.angle_max);
        s.psi = rng.uniform(config.angle_min, config.angle_max);
    }
    return params;
}

ChannelParams evolve(const ChannelParams& previous, const PerturbationProfile& profile,
                     int k, RngStream& rng) {
    previous.validate();
    profile.validate();
    if (profile.num_sections() != previous.num_sections())
        throw std::invalid_argument("evolve: profile/channel section mismatch");
    if (k < 1 || k > profile.horizon())
        throw std::invalid_argument("evolve: step index outside 1..K");

    ChannelParams next = previous;
    for (int n = 0; n < previous.num_sections(); ++n) {
        const double zphi = rng.normal();
        const double zpsi = rng.normal();
        next.sections[n].phi += std::sqrt(profile.sigma2[n][k]) * zphi;
        next.sections[n].psi += std::sqrt(profile.rho2[n][k]) * zpsi;
    }
    return next;
}

FrequencyResponse add_noise(const FrequencyResponse& response, const NoiseModel& model,
                            RngStream& rng) {
    response.validate();
    if (!(model.sigma2_z >= 0.0))
        throw std::invalid_argument("add_noise: sigma2_z must be >= 0");

    // E[|Z|^2] = sigma2_z per entry, i.e. sigma2_z / 2 per quadrature.
    const double scale = std::sqrt(0.5 * model.sigma2_z);
    FrequencyResponse noisy = response;
    for (auto& m : noisy.matrices) {
        for (cplx* e : {&m.a11, &m.a12, &m.a21, &m.a22}) {
            const double re = rng.normal();
            const double im = rng.normal();
            *e += cplx{scale * re, scale * im};
        }
    }
    return noisy;
}

MeasurementSeries generate_scenario(const ScenarioConfig& config) {
    config.validate();

    RngStream init_rng(derive_seed(config.seed, kTagInit, 0));
    std::vector<ChannelParams> truth;
    truth.reserve(config.horizon + 1);
    truth.push_back(sample_initial(config, init_rng));
    for (int k = 1; k <= config.horizon; ++k) {
        RngStream walk_rng(derive_seed(config.seed, kTagWalk, k));
        truth.push_back(evolve(truth.back(), config.profile, k, walk_rng));
    }

    const FrequencyGrid grid =
        FrequencyGrid::canonical(config.num_frequencies, config.tau);
    std::vector<FrequencyResponse> measured;
    measured.reserve(config.horizon + 1);
    for (int k = 0; k <= config.horizon; ++k) {
        RngStream noise_rng(derive_seed(config.seed, kTagNoise, k));
        measured.push_back(add_noise(channel_response(truth[k], grid), config.noise,
                                     noise_rng));
    }
    return MeasurementSeries(grid, std::move(measured), std::move(truth));
}

}  // namespace polsense

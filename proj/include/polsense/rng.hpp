#pragma once

// Deterministic RNG streams. A scenario owns one master seed; every purpose
// (initial draw, walk step k, noise step k) gets its own substream derived
// from (master, tag, index), so changing e.g. the noise variance never
// perturbs the walk trajectory drawn from the same master seed.

#include <cstdint>
#include <random>

namespace polsense {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag,
                                 std::uint64_t index) {
    std::uint64_t s = splitmix64(master ^ (0xA24BAED4963EE407ull * (tag + 1)));
    return splitmix64(s ^ (0x9FB21C651E98DF25ull * (index + 1)));
}

class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    double normal() { return normal_(gen_); }
    double uniform(double lo, double hi) {
        if (lo == hi) return lo;
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    std::uint64_t bits() { return gen_(); }

  private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace polsense

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace contracon {

// Single source of randomness. Every stochastic component (init, shuffles,
// dropout masks, augmentation sampling) draws from an Rng derived from the run
// seed, so a run is reproducible bit-for-bit on one platform.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    // Resamples until the draw is within two standard deviations.
    double truncated_normal(double stddev) {
        for (;;) {
            double v = normal(0.0, 1.0);
            if (v >= -2.0 && v <= 2.0) return v * stddev;
        }
    }
    bool bernoulli(double p) { return uniform() < p; }
    std::size_t uniform_index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    std::uint64_t next() { return engine_(); }

    // Independent child stream; used so adding draws in one component does not
    // perturb another.
    Rng fork() { return Rng(next()); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates with our own index draws; std::shuffle's algorithm is
        // implementation-defined.
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

   private:
    std::mt19937_64 engine_;
};

}  // namespace contracon

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ura/common.hpp"

namespace ura {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent sub-stream seed for (base, stream, index). Stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
    return splitmix64(splitmix64(base ^ splitmix64(stream)) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

// Stream tags used throughout the simulator.
enum class Stream : std::uint64_t {
    Population = 1,
    PilotNoise = 2,
    DataNoise = 3,
    Pilots = 4,
    Codec = 5,
    Analysis = 6,
    Optimizer = 7,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream s, std::uint64_t index = 0) {
    return derive_seed(base, static_cast<std::uint64_t>(s), index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    double normal() { return normal_(engine_); }

    /// Circularly-symmetric complex Gaussian with E|x|^2 = variance.
    cd complex_normal(double variance = 1.0) {
        const double s = std::sqrt(variance / 2.0);
        const double re = normal_(engine_);
        const double im = normal_(engine_);
        return {s * re, s * im};
    }

    std::uint8_t bit() { return static_cast<std::uint8_t>(engine_() >> 63); }
    bool bernoulli(double p) { return uniform_(engine_) < p; }

    std::uint64_t next() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ura

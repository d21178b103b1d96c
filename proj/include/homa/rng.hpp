#pragma once

#include <cstdint>
#include <random>

#include "homa/array.hpp"

namespace homa {

/// Seeded generator. Uniform draws are built from raw 64-bit output so they are
/// identical across standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    /// Uniform on the open interval (0, 1).
    double uniform_open() {
        double u;
        do u = uniform();
        while (u == 0.0);
        return u;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller.
    double normal();
    std::int64_t integer(std::int64_t lo, std::int64_t hi_inclusive) {
        return lo + static_cast<std::int64_t>(engine_() % static_cast<std::uint64_t>(hi_inclusive - lo + 1));
    }
    std::uint64_t next() { return engine_(); }

    Array normal_array(Shape s, double stddev = 1.0);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace homa

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "splatfit/geometry.hpp"

namespace splatfit {

/// mt19937_64 with hand-rolled distributions so draws are reproducible across
/// standard library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return std::ldexp(static_cast<double>(engine_() >> 11), -53); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; draws two uniforms per call.
    double normal() {
        double u1 = uniform();
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Vec3 normal3() { return {normal(), normal(), normal()}; }

    Vec3 unit_vector() {
        Vec3 v = normal3();
        while (v.norm() < 1e-12) v = normal3();
        return v.normalized();
    }

    Quaternion unit_quaternion() {
        Quaternion q{normal(), normal(), normal(), normal()};
        while (q.norm() < 1e-12) q = {normal(), normal(), normal(), normal()};
        return q.normalized();
    }

    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // rejection sampling over the top bits
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace splatfit

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>

#include <Eigen/Core>

namespace metanav {

using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Wrap an angle to (-pi, pi]. Angles already in range pass through exactly.
inline double wrap_angle(double a) {
    if (a > -kPi && a <= kPi) return a;
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a <= 0.0) a += 2.0 * kPi;
    return a - kPi;
}

inline double square(double x) { return x * x; }

inline double clamp(double x, double lo, double hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic random stream (xoshiro-free: splitmix64-seeded counter core).
///
/// All randomness in the project flows through explicit streams so that every
/// rollout, task sample and training run replays bit-identically from a seed.
/// Normal draws use Box-Muller with a cached spare, so the sequence depends
/// only on the seed and the call order.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : seed_(seed) {
        state_ = detail::splitmix64(seed ^ 0x5851f42d4c957f2dULL);
        if (state_ == 0) state_ = 0x9e3779b97f4a7c15ULL;
    }

    std::uint64_t next_u64() {
        state_ = detail::splitmix64(state_);
        return state_;
    }

    /// Uniform double in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    Vec2 normal2() {
        const double a = normal();
        const double b = normal();
        return {a, b};
    }

    /// Independent child stream; deterministic in (seed, tag).
    RandomStream fork(std::uint64_t tag) const {
        return RandomStream(detail::splitmix64(seed_ + 0x9e3779b97f4a7c15ULL * (tag + 1)));
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace metanav

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace l1dpf {

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent generator keyed by (seed, frame, index, salt), so per-particle
/// draws do not depend on evaluation order.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t frame, std::uint64_t index,
                              std::uint64_t salt = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ frame);
    h = mix64(h ^ index);
    h = mix64(h ^ salt);
    return std::mt19937_64(h);
}

/// Standard normal via Box-Muller on 53-bit uniforms; identical on every
/// standard library, unlike std::normal_distribution.
class NormalSource {
public:
    explicit NormalSource(std::mt19937_64& gen) : gen_(gen) {}

    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do u1 = uniform(); while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586476925286766559;
        spare_ = r * std::sin(two_pi * u2);
        has_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64& gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace l1dpf

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

// Deterministic random primitives. Everything here is fully specified by the
// C++ standard (std::mt19937_64 output) or written out explicitly, so a fixed
// seed yields the same stream on every platform. std::normal_distribution and
// std::shuffle are implementation-defined and deliberately not used.
namespace hiforecast::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Counter-based sub-seed: stream `index` of `master`. Independent of the
// order in which streams are consumed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x9E3779B97F4A7C15ull));
}

class Engine {
public:
    explicit Engine(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; caches the second deviate.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n) by 128-bit multiply-shift.
    std::uint64_t below(std::uint64_t n) {
        const unsigned __int128 wide = static_cast<unsigned __int128>(gen_()) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

private:
    std::mt19937_64 gen_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// Fisher-Yates with the explicit bounded-integer draw above.
template <typename T>
void shuffle(std::vector<T>& v, Engine& eng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(eng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace hiforecast::rng

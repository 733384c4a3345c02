// Deterministic counter-based random streams.
//
// Every Monte Carlo sample evaluates under its own stream derived from
// (master seed, sample index), so results do not depend on scheduling or
// thread count. The generator is a self-contained xoshiro256** seeded
// through splitmix64; normal variates use Box-Muller so that draws are
// bit-identical across platforms (std::normal_distribution is not).
#pragma once

#include <cstdint>
#include <cmath>

namespace cpais {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

class RngStream {
  public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_index) {
        std::uint64_t s = master_seed ^ (0xd1342543de82ef95ULL * (stream_index + 1));
        for (auto& word : state_) word = detail::splitmix64(s);
        have_cached_ = false;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in (0, 1); never returns 0 so log() stays finite.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
    double cached_ = 0.0;
    bool have_cached_;
};

}  // namespace cpais

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace fuseqa {

// splitmix64 step (Steele et al.). State advances by the golden-ratio
// increment; output is a bijective scramble of the state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a label path,
// e.g. derive_seed(seed, {kStreamSample, i}). Every consumer of randomness
// opens its own stream this way, so subsets of the work are reproducible
// without replaying everything before them.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = seed;
    (void)splitmix64(s);
    for (std::uint64_t p : path) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        (void)splitmix64(s);
    }
    return s;
}

// Stream labels used across the library. Values are arbitrary but frozen:
// changing them would change every seeded output.
enum : std::uint64_t {
    kStreamInit = 0x01,
    kStreamShuffle = 0x02,
    kStreamSample = 0x03,
    kStreamDirections = 0x04,
    kStreamShift = 0x05,
    kStreamQuestion = 0x06,
    kStreamSarPair = 0x07,
    kStreamSarClassMeans = 0x08,
};

// Small deterministic generator. All randomness in the library flows
// through this class so results do not depend on the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n >= 1; rejection keeps it unbiased
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller; the second value of the pair is
    // discarded so the draw count per call is fixed
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace fuseqa

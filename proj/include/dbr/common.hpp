#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dbr {

// Exit-code-bearing error categories used by the CLI.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StaleArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t seed, std::string_view label) {
    return splitmix64(seed ^ fnv1a64(label));
}

// Seeded RNG with hand-rolled draw helpers so that results do not depend on
// the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // uniform in [0, n)
    int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<uint64_t>(n)); }

    // uniform in [lo, hi] inclusive
    int uniform_range(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

    // uniform in [0, 1) with 53 bits
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    // uniform in [-a, a]
    double symmetric(double a) { return (2.0 * uniform() - 1.0) * a; }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[uniform_int(static_cast<int>(v.size()))];
    }

  private:
    std::mt19937_64 gen_;
};

// Counter-based uniform draw keyed by (seed, epoch, example id). Independent
// of data-loader order by construction.
inline double keyed_uniform(uint64_t seed, int epoch, std::string_view example_id) {
    uint64_t k = splitmix64(seed ^ splitmix64(static_cast<uint64_t>(epoch) ^ fnv1a64(example_id)));
    return static_cast<double>(k >> 11) * 0x1.0p-53;
}

std::string format_shape(const std::vector<int>& shape);

}  // namespace dbr

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace relprox {

// Counter-friendly deterministic generator (splitmix64 core). std::mt19937
// plus the standard distributions would not be byte-reproducible across
// library implementations, and reproducibility is a hard requirement for
// dataset generation and training logs.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ULL) {}

    // Independent substream: hash the (seed, stream) pair so instances can be
    // generated in any order or in parallel.
    static Rng substream(uint64_t seed, uint64_t stream) {
        Rng r(seed);
        r.state_ ^= mix(stream + 0x632be59bd9b4e019ULL);
        r.next();
        return r;
    }

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n); n must be positive. Modulo bias is
    // negligible for the small ranges used here and keeps the stream layout
    // simple.
    int uniform_int(int n) { return static_cast<int>(next() % static_cast<uint64_t>(n)); }

    // Standard normal via Box-Muller; one value per call, no caching, so the
    // stream position stays a pure function of call count.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

  private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

// Stable 64-bit hash for deriving stream ids from small tuples.
inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    a ^= b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2);
    return a;
}

}  // namespace relprox

#pragma once

#include <cstdint>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

namespace octforge {

// Error taxonomy, mapped to CLI exit codes by the tool layer:
// usage errors are CLI11's domain; DataError -> 3, NumericError -> 4.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void check_shape(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// Deterministic 64-bit PRNG (splitmix64). Used everywhere instead of <random>
// distributions so corpora, splits and training runs are bit-reproducible
// across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, no caching, so call order alone fixes the stream.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // in [0, n)
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

// Stream derivation: decorrelates rngs drawn from (seed, tag) pairs.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed ^ (tag * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL);
    z = (z ^ (z >> 32)) * 0xd6e8feb86659fd93ULL;
    return z ^ (z >> 32);
}

// Worker-thread cap. OCTFORGE_THREADS overrides; default is logical cores.
inline int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("OCTFORGE_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return int(v);
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? int(hw) : 1;
    }();
    return cached;
}

} // namespace octforge

// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic RNG used throughout the project. std::mt19937 distributions
// are implementation-defined, so uniform/normal draws are built from raw
// bits here and reproduce bit-identically across compilers.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace paragen {

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {
        // burn a few draws so nearby seeds decorrelate
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, spare cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // integer in [0, n)
    uint64_t below(uint64_t n) {
        // modulo with rejection to kill bias
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<double> normal_vec(size_t n, double mean, double stddev) {
        std::vector<double> out(n);
        for (auto& x : out) x = normal(mean, stddev);
        return out;
    }

    // independent child stream, tag decorrelates purpose-specific streams
    Rng fork(uint64_t tag) { return Rng(next_u64() ^ (tag * 0xd1342543de82ef95ULL)); }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for checksums and config hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::vector<double>& v, uint64_t h = 0xcbf29ce484222325ULL) {
    return v.empty() ? h : fnv1a64(v.data(), v.size() * sizeof(double), h);
}

}  // namespace paragen

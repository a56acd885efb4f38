// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace veracity {

/// Seeded generator threaded explicitly through anything stochastic
/// (initialization, dropout, shuffling, synthetic data). There is no
/// process-wide generator.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t index(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r = engine_();
        while (r >= limit) r = engine_();
        return r % n;
    }

    double normal() { return normal_(engine_); }

    /// Normal(0, stddev) redrawn until it lies within two standard deviations.
    double truncated_normal(double stddev) {
        for (;;) {
            const double z = normal();
            if (std::abs(z) <= 2.0) return z * stddev;
        }
    }

    std::uint64_t next() { return engine_(); }

   private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

template <typename Seq>
void shuffle(Seq& seq, Rng& rng) {
    for (std::size_t i = seq.size(); i > 1; --i) {
        using std::swap;
        swap(seq[i - 1], seq[rng.index(i)]);
    }
}

}  // namespace veracity

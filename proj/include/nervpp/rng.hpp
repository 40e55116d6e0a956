#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace nervpp {

// Deterministic RNG. Scalers are hand-rolled on top of the (standardized)
// mt19937_64 bit stream so the same seed yields the same values on every
// platform; std::uniform_real_distribution makes no such promise.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), n > 0. Modulo bias is irrelevant at the n used here.
    std::uint64_t bounded(std::uint64_t n) { return next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace nervpp

#pragma once

#include <cstdint>

namespace msi {

// Splittable deterministic generator used everywhere randomness is
// needed (weight init, data generation, RISE masks). The core is
// SplitMix64: a fixed, documented algorithm so runs are reproducible
// across platforms. split(id) derives an independent stream from the
// current seed and a stream id without advancing this generator.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float next_float() {
        return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    // Uniform in [lo, hi)
    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Derived stream: mixes the current seed with the stream id, leaving
    // this generator untouched. Distinct ids give independent streams.
    Rng split(std::uint64_t stream_id) const {
        Rng probe(state_ ^ (0xD1B54A32D192ED03ull * (stream_id + 1)));
        probe.next_u64();
        return Rng(probe.state_);
    }

    std::uint64_t state() const { return state_; }

  private:
    std::uint64_t state_;
};

}  // namespace msi

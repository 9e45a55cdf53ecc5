#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace distill {

// Deterministic seeded generator: xoshiro256** with the state derived
// from (seed, stream) through SplitMix64. Identical (seed, stream) pairs
// produce identical sequences on every platform; distinct stream ids give
// statistically independent sequences, which is what lets parallel
// training runs share one experiment seed.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();

    // Uniform on [0, 1), 53-bit resolution.
    double next_double();

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller; the paired draw is cached.
    double normal();
    double normal(double mean, double stddev);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    std::array<std::uint64_t, 4> state_{};
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

// Derives a child stream id from a parent id and a tag (SplitMix64-style
// mixing). Used to hand every worker / repeat / role its own stream.
std::uint64_t mix_stream(std::uint64_t parent, std::uint64_t tag);

// Seeded Fisher-Yates shuffle of an index vector.
void shuffle_indices(std::vector<std::size_t>& indices, SeededRng& rng);

}  // namespace distill

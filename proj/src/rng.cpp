#include "distill/rng.hpp"

#include <cmath>
#include <numbers>

#include "distill/errors.hpp"

namespace distill {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 step; used for state expansion and stream derivation.
std::uint64_t splitmix64(std::uint64_t& x) {
    x += kGolden;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
    // Fold the stream id into the SplitMix64 chain so different streams of
    // one seed expand to unrelated xoshiro states.
    std::uint64_t x = seed ^ (kGolden * (stream + 1));
    for (auto& s : state_) s = splitmix64(x);
    // xoshiro256** must not start from the all-zero state.
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = kGolden;
}

std::uint64_t SeededRng::next_u64() {
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

double SeededRng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_int(std::uint64_t n) {
    if (n == 0) throw ArgumentError("uniform_int: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

double SeededRng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

double SeededRng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

std::uint64_t mix_stream(std::uint64_t parent, std::uint64_t tag) {
    std::uint64_t x = parent ^ (kGolden * (tag + 0x2545f4914f6cdd1dULL));
    return splitmix64(x);
}

void shuffle_indices(std::vector<std::size_t>& indices, SeededRng& rng) {
    for (std::size_t i = indices.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(indices[i - 1], indices[j]);
    }
}

}  // namespace distill

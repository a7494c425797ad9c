#pragma once

#include <cstdint>
#include <random>

namespace multidepth {

/// The single random source used across the project.
///
/// Engine: std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The std:: distributions are implementation-defined, so the
/// transforms below are written out explicitly:
///   uniform()       top 53 bits of one draw, scaled to [0, 1)
///   uniform_int(n)  rejection sampling on the full 64-bit draw
///   normal()        Box-Muller, both outputs used in turn
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);
    double normal();
    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Deterministic child stream keyed by `key`; does not advance this Rng.
    Rng derive(std::uint64_t key) const;

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64 finalizer, used to combine seeds with stream keys.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key);

} // namespace multidepth

#pragma once

// Splittable pseudo-random streams.
//
// Every consumer of randomness (a path, a batch element, an estimator probe)
// gets its own stream derived from (seed, stream id) by an integer hash, so
// results never depend on evaluation order or thread count. The sequence
// within a stream comes from xoshiro256++ seeded by splitmix64; the integer
// output is pure 64-bit arithmetic and therefore identical on every platform.

#include <cstdint>
#include <vector>

namespace riemdiff {

class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    // Child stream with an independent state; fork(i) != fork(j) for i != j.
    RngStream fork(std::uint64_t i) const;

    std::uint64_t next_u64();

    // Uniform on [0,1) with 53 random bits.
    double uniform();
    // Uniform on (0,1]: safe as a log() argument.
    double uniform_pos();

    // Standard normal via Box-Muller; the spare value is cached.
    double gaussian();
    // +1 or -1 with equal probability.
    double rademacher();

    std::vector<double> gaussian_vector(std::size_t n);
    std::vector<double> rademacher_vector(std::size_t n);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t state_[4];
    double cached_gaussian_ = 0.0;
    bool has_cached_ = false;
};

} // namespace riemdiff

#include "riemdiff/rng.hpp"

#include <cmath>

namespace riemdiff {
namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Mixes two words into one well-scrambled word (splitmix finalizer applied
// to a combination that separates (a,b) pairs).
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (0x9e3779b97f4a7c15ull * (b + 0x632be59bd9b4e019ull));
    return splitmix64(x);
}

inline std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
}

constexpr double kInv53 = 1.0 / 9007199254740992.0; // 2^-53

} // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
    // Expand (seed, stream) into four nonzero state words.
    std::uint64_t s = mix64(seed, stream);
    state_[0] = splitmix64(s);
    state_[1] = splitmix64(s);
    state_[2] = splitmix64(s);
    state_[3] = splitmix64(s);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0)
        state_[0] = 1; // xoshiro must not start from the all-zero state
}

RngStream RngStream::fork(std::uint64_t i) const {
    return RngStream(seed_, mix64(stream_, i));
}

std::uint64_t RngStream::next_u64() {
    // xoshiro256++
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform() {
    return double(next_u64() >> 11) * kInv53;
}

double RngStream::uniform_pos() {
    return double((next_u64() >> 11) + 1) * kInv53;
}

double RngStream::gaussian() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_gaussian_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_gaussian_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
}

double RngStream::rademacher() {
    return (next_u64() >> 63) ? 1.0 : -1.0;
}

std::vector<double> RngStream::gaussian_vector(std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = gaussian();
    return v;
}

std::vector<double> RngStream::rademacher_vector(std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = rademacher();
    return v;
}

} // namespace riemdiff

#include "collig/rng.hpp"

#include <cmath>

namespace collig {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
  // Decorrelate streams by folding the stream id into the splitmix chain.
  std::uint64_t x = seed ^ (0xD1B54A32D192ED03ULL * (stream_id + 1));
  for (auto& word : state_) word = splitmix64(x);
  // splitmix64 output is never all-zero in practice; guard anyway.
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
}

std::uint64_t RngStream::next_u64() {
  // xoshiro256++ step.
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  ++counter_;
  return result;
}

real RngStream::uniform() {
  // 53 random bits; +1 maps onto (0, 1] so log(uniform()) is finite.
  return static_cast<real>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

real RngStream::normal() {
  if (have_cached_normal_) {
    have_cached_normal_ = false;
    return cached_normal_;
  }
  const real u1 = uniform();
  const real u2 = uniform();
  const real r = std::sqrt(-2.0 * std::log(u1));
  const real angle = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(angle);
  have_cached_normal_ = true;
  return r * std::cos(angle);
}

}  // namespace collig

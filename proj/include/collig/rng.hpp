// Reproducible random streams: identical sequences for a given (seed, stream)
// pair on every host and under any thread interleaving.
#pragma once

#include <cstdint>

#include "collig/types.hpp"

namespace collig {

// xoshiro256++ seeded through splitmix64 from (seed, stream_id).  Normal
// deviates come from an explicit Box-Muller transform (std::normal_distribution
// is implementation-defined and would break cross-host reproducibility).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  // Uniform on (0, 1]; never returns 0 so log() is always safe.
  real uniform();
  // Standard normal deviate.
  real normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  // Number of 64-bit words drawn so far (for diagnostics/serialization).
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  bool have_cached_normal_ = false;
  real cached_normal_ = 0.0;
};

}  // namespace collig

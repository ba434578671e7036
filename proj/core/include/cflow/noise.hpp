#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace cflow {

// Philox4x32-10 block cipher (Salmon et al. counter-based generator).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) noexcept;

// Independent families of draws. Every draw is a pure function of
// (seed, tag, stream, index), so simulation results do not depend on
// evaluation order or thread count.
enum class StreamTag : std::uint32_t {
  kParticle = 1,
  kCommonIncrement = 2,
  kZeroDecision = 3,
  kExcursionSign = 4,
  kEdgeChoice = 5,
  kTrial = 6,
  kSampling = 7,
};

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::array<std::uint32_t, 4> block(StreamTag tag, std::uint64_t stream,
                                     std::uint64_t index) const noexcept;

  // Uniform on the open interval (0, 1); lane selects one of two
  // independent 53-bit values in the same block.
  double uniform(StreamTag tag, std::uint64_t stream, std::uint64_t index,
                 unsigned lane = 0) const noexcept;

  // Standard normal via Box-Muller; consecutive even/odd indices share a block.
  double normal(StreamTag tag, std::uint64_t stream, std::uint64_t index) const noexcept;

 private:
  std::uint64_t seed_;
};

// Sequential view over one stream, for per-trial Monte Carlo loops.
class StreamCursor {
 public:
  StreamCursor(const CounterRng& rng, StreamTag tag, std::uint64_t stream) noexcept
      : rng_(&rng), tag_(tag), stream_(stream) {}

  double uniform() noexcept { return rng_->uniform(tag_, stream_, next_++); }
  double normal() noexcept;

 private:
  const CounterRng* rng_;
  StreamTag tag_;
  std::uint64_t stream_;
  std::uint64_t next_ = 0;
  std::uint64_t normal_next_ = 0;
};

// Default spatial quantum. A power of two keeps sums of quantized values exact.
inline constexpr double kSpaceQuantum = 0x1p-20;

inline double quantize(double x, double q = kSpaceQuantum) noexcept {
  return std::nearbyint(x / q) * q;
}

}  // namespace cflow

#include "cflow/noise.hpp"

#include <numbers>

namespace cflow {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

std::array<std::uint32_t, 4> CounterRng::block(StreamTag tag, std::uint64_t stream,
                                               std::uint64_t index) const noexcept {
  const auto t = static_cast<std::uint32_t>(tag);
  const std::array<std::uint32_t, 4> ctr{
      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
      static_cast<std::uint32_t>(stream),
      (t << 24) ^ static_cast<std::uint32_t>(stream >> 32)};
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_),
                                         static_cast<std::uint32_t>(seed_ >> 32)};
  return philox4x32_10(ctr, key);
}

double CounterRng::uniform(StreamTag tag, std::uint64_t stream, std::uint64_t index,
                           unsigned lane) const noexcept {
  const auto b = block(tag, stream, index);
  return lane == 0 ? to_open_unit(b[0], b[1]) : to_open_unit(b[2], b[3]);
}

double CounterRng::normal(StreamTag tag, std::uint64_t stream, std::uint64_t index) const noexcept {
  const auto b = block(tag, stream, index >> 1);
  const double u1 = to_open_unit(b[0], b[1]);
  const double u2 = to_open_unit(b[2], b[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  return (index & 1u) ? r * std::sin(a) : r * std::cos(a);
}

double StreamCursor::normal() noexcept {
  // Separate index space from uniforms so mixing the two stays independent.
  return rng_->normal(tag_, stream_ ^ 0x8000000000000000ull, normal_next_++);
}

}  // namespace cflow

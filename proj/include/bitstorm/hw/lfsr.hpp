#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bitstorm::hw {

// Fibonacci LFSR. Tap t (1..width) reads state bit (width - t); each step
// shifts right, emitting bit 0 and inserting the XOR of the taps at the top.
// The default (16,14,13,11) polynomial is maximal length.
class Lfsr {
 public:
  static std::vector<unsigned> default_taps() { return {16, 14, 13, 11}; }

  explicit Lfsr(std::uint64_t seed = 1, unsigned width = 16, std::vector<unsigned> taps = default_taps())
      : width_(width), taps_(std::move(taps)) {
    if (width_ < 2 || width_ > 64) throw std::invalid_argument("LFSR width must be in 2..64");
    if (taps_.empty()) throw std::invalid_argument("LFSR needs at least one tap");
    for (unsigned t : taps_) {
      if (t < 1 || t > width_) throw std::invalid_argument("LFSR tap " + std::to_string(t) + " out of range");
      tap_mask_ |= std::uint64_t{1} << (width_ - t);
    }
    state_ = seed & mask();
    if (state_ == 0) throw std::invalid_argument("LFSR state must be nonzero");
  }

  unsigned width() const noexcept { return width_; }
  const std::vector<unsigned>& taps() const noexcept { return taps_; }
  std::uint64_t state() const noexcept { return state_; }

  /// Advances one clock; returns the bit shifted out.
  bool step() noexcept {
    const bool out = state_ & 1U;
    const auto feedback = static_cast<std::uint64_t>(__builtin_parityll(state_ & tap_mask_));
    state_ = (state_ >> 1) | (feedback << (width_ - 1));
    return out;
  }

  /// State bit i (0 = next output).
  bool state_bit(unsigned i) const noexcept { return (state_ >> i) & 1U; }

 private:
  std::uint64_t mask() const noexcept {
    return width_ == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << width_) - 1;
  }

  unsigned width_;
  std::vector<unsigned> taps_;
  std::uint64_t tap_mask_ = 0;
  std::uint64_t state_ = 1;
};

struct LfsrPeriod {
  std::uint64_t period = 0;
  std::uint64_t ones = 0;  // output ones within one period
};

/// Brute-force cycle measurement from the current state. Empty if the state is
/// not revisited within 2^width steps (width <= 32 only).
inline std::optional<LfsrPeriod> measure_period(Lfsr lfsr) {
  if (lfsr.width() > 32) throw std::invalid_argument("period measurement limited to width 32");
  const std::uint64_t start = lfsr.state();
  const std::uint64_t limit = std::uint64_t{1} << lfsr.width();
  LfsrPeriod r;
  for (std::uint64_t n = 1; n <= limit; ++n) {
    r.ones += lfsr.step();
    if (lfsr.state() == start) {
      r.period = n;
      return r;
    }
  }
  return std::nullopt;
}

}  // namespace bitstorm::hw

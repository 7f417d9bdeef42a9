#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

#include "bitstorm/model.hpp"

namespace bitstorm::hw {

/// One modulator output from packed fair bits (bit k-1 of `random_bits` is r_k).
/// Stage k, LSB first, is a 2:1 mux: target bit 1 selects (r_k OR s), 0 selects
/// (r_k AND s). With i.i.d. fair inputs P(out=1) equals target.value() exactly.
inline bool daalen_bit_packed(const QFraction& target, std::uint64_t random_bits) noexcept {
  bool s = false;
  for (unsigned k = 1; k <= target.width(); ++k) {
    const bool r = (random_bits >> (k - 1)) & 1U;
    s = target.bit(k) ? (r || s) : (r && s);
  }
  return s;
}

inline bool daalen_bit(const QFraction& target, std::span<const std::uint8_t> random_bits) {
  if (random_bits.size() != target.width()) {
    throw std::invalid_argument("Daalen modulator needs exactly " + std::to_string(target.width()) +
                                " random bits, got " + std::to_string(random_bits.size()));
  }
  std::uint64_t packed = 0;
  for (std::size_t k = 0; k < random_bits.size(); ++k) {
    if (random_bits[k] > 1) throw std::invalid_argument("random bits must be 0 or 1");
    packed |= std::uint64_t{random_bits[k]} << k;
  }
  return daalen_bit_packed(target, packed);
}

class DaalenModulator {
 public:
  explicit DaalenModulator(QFraction target) : target_(target) {
    if (target.width() < 2) throw std::invalid_argument("modulator width must be >= 2");
  }

  const QFraction& target() const noexcept { return target_; }
  unsigned width() const noexcept { return target_.width(); }

  /// Pulls width() bits from `source` (callable returning bool).
  template <typename BitSource>
  bool next(BitSource&& source) {
    std::uint64_t packed = 0;
    for (unsigned k = 0; k < target_.width(); ++k) packed |= std::uint64_t{source() ? 1U : 0U} << k;
    return daalen_bit_packed(target_, packed);
  }

 private:
  QFraction target_;
};

}  // namespace bitstorm::hw

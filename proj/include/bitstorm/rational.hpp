#pragma once

#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace bitstorm {

// Exact nonnegative rational with 64-bit terms, always stored in lowest terms.
// Intermediate products use 128-bit arithmetic; results that do not fit after
// reduction throw std::overflow_error.
class Rational {
 public:
  constexpr Rational() = default;

  Rational(std::uint64_t num, std::uint64_t den = 1) {
    if (den == 0) throw std::domain_error("rational with zero denominator");
    assign(num, den);
  }

  std::uint64_t num() const noexcept { return num_; }
  std::uint64_t den() const noexcept { return den_; }

  double to_double() const noexcept {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }

  std::string str() const { return std::to_string(num_) + "/" + std::to_string(den_); }

  friend Rational operator*(const Rational& a, const Rational& b) {
    // cross-reduce first to keep intermediates small
    const std::uint64_t g1 = std::gcd(a.num_, b.den_);
    const std::uint64_t g2 = std::gcd(b.num_, a.den_);
    const Wide n = Wide{a.num_ / g1} * (b.num_ / g2);
    const Wide d = Wide{a.den_ / g2} * (b.den_ / g1);
    return from_wide(n, d);
  }

  friend Rational operator+(const Rational& a, const Rational& b) {
    const std::uint64_t g = std::gcd(a.den_, b.den_);
    const Wide n = Wide{a.num_} * (b.den_ / g) + Wide{b.num_} * (a.den_ / g);
    const Wide d = Wide{a.den_} * (b.den_ / g);
    return from_wide(n, d);
  }

  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator*=(const Rational& o) { return *this = *this * o; }

  /// |a - b|
  friend Rational abs_diff(const Rational& a, const Rational& b) {
    const std::uint64_t g = std::gcd(a.den_, b.den_);
    const Wide x = Wide{a.num_} * (b.den_ / g);
    const Wide y = Wide{b.num_} * (a.den_ / g);
    const Wide d = Wide{a.den_} * (b.den_ / g);
    return from_wide(x > y ? x - y : y - x, d);
  }

  friend bool operator==(const Rational&, const Rational&) = default;

  friend bool operator<(const Rational& a, const Rational& b) {
    return Wide{a.num_} * b.den_ < Wide{b.num_} * a.den_;
  }
  friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }

  friend std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.str(); }

 private:
  using Wide = unsigned __int128;

  static Wide wide_gcd(Wide a, Wide b) {
    while (b != 0) {
      const Wide t = a % b;
      a = b;
      b = t;
    }
    return a;
  }

  static Rational from_wide(Wide n, Wide d) {
    const Wide g = n == 0 ? d : wide_gcd(n, d);
    n /= g;
    d /= g;
    constexpr Wide limit = ~std::uint64_t{0};
    if (n > limit || d > limit) throw std::overflow_error("rational term exceeds 64 bits");
    Rational r;
    r.num_ = static_cast<std::uint64_t>(n);
    r.den_ = static_cast<std::uint64_t>(d);
    return r;
  }

  void assign(std::uint64_t n, std::uint64_t d) {
    const std::uint64_t g = n == 0 ? d : std::gcd(n, d);
    num_ = n / g;
    den_ = d / g;
  }

  std::uint64_t num_ = 0;
  std::uint64_t den_ = 1;
};

}  // namespace bitstorm

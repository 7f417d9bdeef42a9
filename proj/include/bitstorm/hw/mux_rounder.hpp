#pragma once

// Multiplexer-based stochastic rounding engine.
//
// An N-input mux routes in_sel to its output. When sel = i is drawn with
// probability 2^(i-1) / (2^N - 1), P(out = 1) = bits / (2^N - 1) for the
// binary fraction bits / 2^N on the inputs, within 2^-N of the fraction.
// The select index is assembled from log2(N) independent select bits,
// sel = 1 + sum_j sel_j * 2^(j-1), with P(sel_j = 1) = 2^(2^(j-1)) / (2^(2^(j-1)) + 1).

#include <algorithm>
#include <bit>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bitstorm/hw/daalen.hpp"
#include "bitstorm/hw/lfsr.hpp"
#include "bitstorm/model.hpp"
#include "bitstorm/random.hpp"
#include "bitstorm/rational.hpp"

namespace bitstorm::hw {

inline void check_inputs(unsigned n) {
  if (!is_rounder_width(n)) {
    throw std::invalid_argument("multiplexer input count must be one of 2,4,8,16,32, got " + std::to_string(n));
  }
}

inline unsigned select_bit_count(unsigned n) {
  check_inputs(n);
  return static_cast<unsigned>(std::countr_zero(n));
}

/// Routes input i (1-based; bit i-1 of in_bits) to the output.
inline bool mux_out(std::uint64_t in_bits, unsigned n, unsigned sel) {
  check_inputs(n);
  if (sel < 1 || sel > n) throw std::out_of_range("select index " + std::to_string(sel) + " outside 1.." + std::to_string(n));
  return (in_bits >> (sel - 1)) & 1U;
}

/// P(sel = i) = 2^(i-1) / (2^N - 1), i = 1..N.
inline std::vector<Rational> select_distribution(unsigned n) {
  check_inputs(n);
  const std::uint64_t den = (std::uint64_t{1} << n) - 1;
  std::vector<Rational> out;
  out.reserve(n);
  for (unsigned i = 1; i <= n; ++i) out.emplace_back(std::uint64_t{1} << (i - 1), den);
  return out;
}

/// Exact P(out = 1) under the geometric select distribution, by enumeration.
inline Rational exact_output_probability(const QFraction& in) {
  const auto dist = select_distribution(in.width());
  Rational p;
  for (unsigned i = 1; i <= in.width(); ++i) {
    if (mux_out(in.bits(), in.width(), i)) p += dist[i - 1];
  }
  return p;
}

struct SelectBitSpec {
  unsigned index = 1;  // j, 1-based
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  Rational p_one() const { return {num, den}; }
  Rational p_zero() const { return {den - num, den}; }
};

inline std::vector<SelectBitSpec> select_bit_probabilities(unsigned n) {
  const unsigned bits = select_bit_count(n);
  std::vector<SelectBitSpec> out;
  for (unsigned j = 1; j <= bits; ++j) {
    const std::uint64_t pow = std::uint64_t{1} << (std::uint64_t{1} << (j - 1));  // 2^(2^(j-1))
    out.push_back({j, pow, pow + 1});
  }
  return out;
}

/// prod_{k=1}^{log2 M} (2^(2^(k-1)) + 1); equals 2^M - 1.
inline std::uint64_t fermat_product(unsigned m) {
  std::uint64_t prod = 1;
  for (const auto& spec : select_bit_probabilities(m)) prod *= spec.den;
  return prod;
}

/// Joint select-index distribution implied by independent select bits.
inline std::vector<Rational> factorized_select_distribution(const std::vector<SelectBitSpec>& specs) {
  const std::size_t n = std::size_t{1} << specs.size();
  std::vector<Rational> out;
  out.reserve(n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    Rational p{1};
    for (std::size_t j = 0; j < specs.size(); ++j) p *= ((idx >> j) & 1U) ? specs[j].p_one() : specs[j].p_zero();
    out.push_back(p);
  }
  return out;
}

/// M-bit round-to-nearest encoding of a select-bit probability, saturated.
inline QFraction modulator_target(const SelectBitSpec& spec, unsigned m) {
  using Wide = unsigned __int128;
  const Wide scaled = (Wide{spec.num} << (m + 1)) + spec.den;  // 2*num*2^M/den + 1, halved below
  std::uint64_t bits = static_cast<std::uint64_t>(scaled / (Wide{spec.den} * 2));
  const std::uint64_t max_bits = (std::uint64_t{1} << m) - 1;
  if (bits > max_bits) bits = max_bits;
  return QFraction(bits, m);
}

/// Select distribution actually realized by M-bit modulator targets.
inline std::vector<double> quantized_select_distribution(unsigned n, unsigned m) {
  const auto specs = select_bit_probabilities(n);
  std::vector<double> p1;
  for (const auto& s : specs) p1.push_back(modulator_target(s, m).value());
  std::vector<double> out(std::size_t{1} << specs.size());
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    double p = 1.0;
    for (std::size_t j = 0; j < specs.size(); ++j) p *= ((idx >> j) & 1U) ? p1[j] : 1.0 - p1[j];
    out[idx] = p;
  }
  return out;
}

enum class SelectSource {
  ideal_exact,
  independent_lfsr_per_select_bit,
  shared_single_prbs,
  single_lfsr_with_modulators,
};

inline const char* to_string(SelectSource s) {
  switch (s) {
    case SelectSource::ideal_exact: return "ideal-exact";
    case SelectSource::independent_lfsr_per_select_bit: return "independent-lfsr";
    case SelectSource::shared_single_prbs: return "shared-prbs";
    case SelectSource::single_lfsr_with_modulators: return "single-lfsr";
  }
  return "?";
}

inline SelectSource parse_select_source(std::string_view s) {
  for (auto v : {SelectSource::ideal_exact, SelectSource::independent_lfsr_per_select_bit,
                 SelectSource::shared_single_prbs, SelectSource::single_lfsr_with_modulators}) {
    if (s == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown select source '" + std::string(s) + "'");
}

struct MuxRounderConfig {
  unsigned n_inputs = 8;
  SelectSource select_source = SelectSource::ideal_exact;
  unsigned modulator_width = 16;

  void validate() const {
    check_inputs(n_inputs);
    if (modulator_width < 2 || modulator_width > 32) {
      throw std::invalid_argument("modulator width must be in 2..32");
    }
  }

  /// Whether every rounder in the network sees one broadcast select sequence.
  bool broadcast() const noexcept {
    return select_source == SelectSource::shared_single_prbs ||
           select_source == SelectSource::single_lfsr_with_modulators;
  }

  friend bool operator==(const MuxRounderConfig&, const MuxRounderConfig&) = default;
};

// Per-cycle select index generator. Call next() once per clock; every
// consumer within that clock reads current().
class SelectStream {
 public:
  SelectStream(const MuxRounderConfig& config, const RandomSource& rng)
      : config_(config), specs_(select_bit_probabilities(config.n_inputs)), rng_(rng) {
    config.validate();
    const unsigned m = config.modulator_width;
    switch (config.select_source) {
      case SelectSource::ideal_exact:
        break;
      case SelectSource::independent_lfsr_per_select_bit:
      case SelectSource::shared_single_prbs: {
        std::vector<std::uint64_t> used;
        for (const auto& spec : specs_) {
          lfsrs_.emplace_back(fresh_seed(used));
          modulators_.emplace_back(modulator_target(spec, m));
        }
        break;
      }
      case SelectSource::single_lfsr_with_modulators: {
        std::vector<std::uint64_t> used;
        lfsrs_.emplace_back(fresh_seed(used));
        for (const auto& spec : specs_) modulators_.emplace_back(modulator_target(spec, m));
        const std::size_t span = (specs_.size() - 1) * (m + 1) + m;
        while (history_.size() < span) history_.push_back(lfsrs_[0].step());
        break;
      }
    }
  }

  const MuxRounderConfig& config() const noexcept { return config_; }
  std::uint64_t cycles() const noexcept { return cycles_; }
  unsigned current() const noexcept { return current_; }

  unsigned next() {
    unsigned sel = 1;
    switch (config_.select_source) {
      case SelectSource::ideal_exact:
        for (std::size_t j = 0; j < specs_.size(); ++j) {
          if (rng_.below(specs_[j].den) < specs_[j].num) sel += 1U << j;
        }
        break;
      case SelectSource::independent_lfsr_per_select_bit:
      case SelectSource::shared_single_prbs:
        for (std::size_t j = 0; j < specs_.size(); ++j) {
          auto& lfsr = lfsrs_[j];
          if (modulators_[j].next([&lfsr] { return lfsr.step(); })) sel += 1U << j;
        }
        break;
      case SelectSource::single_lfsr_with_modulators: {
        // Advance the base stream by one modulator word; modulator j reads an
        // M-bit window delayed by (j-1)(M+1) bits.
        const unsigned m = config_.modulator_width;
        for (unsigned k = 0; k < m; ++k) {
          history_.pop_front();
          history_.push_back(lfsrs_[0].step());
        }
        for (std::size_t j = 0; j < specs_.size(); ++j) {
          const std::size_t start = history_.size() - m - j * (m + 1);
          std::uint64_t packed = 0;
          for (unsigned k = 0; k < m; ++k) packed |= std::uint64_t{history_[start + k] ? 1U : 0U} << k;
          if (daalen_bit_packed(modulators_[j].target(), packed)) sel += 1U << j;
        }
        break;
      }
    }
    ++cycles_;
    current_ = sel;
    return sel;
  }

 private:
  std::uint64_t fresh_seed(std::vector<std::uint64_t>& used) {
    for (;;) {
      const std::uint64_t s = rng_.next_u64() & 0xFFFFU;
      if (s == 0 || std::find(used.begin(), used.end(), s) != used.end()) continue;
      used.push_back(s);
      return s;
    }
  }

  MuxRounderConfig config_;
  std::vector<SelectBitSpec> specs_;
  RandomSource rng_;
  std::vector<Lfsr> lfsrs_;
  std::vector<DaalenModulator> modulators_;
  std::deque<bool> history_;
  std::uint64_t cycles_ = 0;
  unsigned current_ = 0;
};

inline SelectStream make_select_stream(const MuxRounderConfig& config, const RandomSource& rng) {
  return SelectStream(config, rng);
}

/// sign * mux_out(magnitude, sel): the rounder output for one weight.
inline std::int8_t hw_project_ternary(const SignMagnitudeWeight& w, unsigned n, unsigned sel) {
  if (w.magnitude.width() != n) {
    throw std::invalid_argument("weight magnitude width " + std::to_string(w.magnitude.width()) +
                                " does not match rounder inputs " + std::to_string(n));
  }
  return mux_out(w.magnitude.bits(), n, sel) ? static_cast<std::int8_t>(w.sign) : std::int8_t{0};
}

struct HwProjection {
  DiscreteModelInstance instance;
  MuxRounderConfig config;
  std::size_t lanes = 1;
  std::uint64_t cycles = 0;  // clock cycles spent across all layers
};

// Projects every weight through a multiplexer rounder. Output features of a
// layer are dealt round-robin onto `lanes` rounders (feature o -> lane o % L);
// a lane walks its features' weights row-major, one weight per cycle.
// Broadcast sources drive all lanes from one stream; the others give each lane
// its own stream, seeded from rng.split(lane).
inline HwProjection hw_project_model(const NetworkModel& model, const MuxRounderConfig& config,
                                     std::size_t lanes, const RandomSource& rng) {
  config.validate();
  if (lanes == 0) throw std::invalid_argument("lane count must be >= 1");
  const unsigned n = config.n_inputs;
  const std::size_t stream_count = config.broadcast() ? 1 : lanes;
  std::vector<SelectStream> streams;
  streams.reserve(stream_count);
  for (std::size_t s = 0; s < stream_count; ++s) streams.emplace_back(config, rng.split(s));

  HwProjection out;
  out.config = config;
  out.lanes = lanes;
  static_cast<BasicNetwork<std::int8_t>&>(out.instance) =
      map_weights<std::int8_t>(model, [&](std::size_t, const Tensor& w) {
        const std::size_t features = w.extent(0);
        const std::size_t fan_in = w.size() / features;
        const std::size_t groups = (features + lanes - 1) / lanes;
        std::vector<std::int8_t> q(w.size());
        for (std::size_t cycle = 0; cycle < groups * fan_in; ++cycle) {
          const std::size_t group = cycle / fan_in;
          const std::size_t offset = cycle % fan_in;
          if (config.broadcast()) streams[0].next();
          for (std::size_t lane = 0; lane < lanes; ++lane) {
            const std::size_t feature = group * lanes + lane;
            if (feature >= features) break;
            auto& stream = streams[config.broadcast() ? 0 : lane];
            const unsigned sel = config.broadcast() ? stream.current() : stream.next();
            const std::size_t idx = feature * fan_in + offset;
            q[idx] = hw_project_ternary(to_sign_magnitude(clip(w[idx]), n), n, sel);
          }
        }
        out.cycles += groups * fan_in;
        return BasicTensor<std::int8_t>(w.shape(), std::move(q));
      });
  out.instance.mode = ProjectionMode::ternary;
  return out;
}

}  // namespace bitstorm::hw

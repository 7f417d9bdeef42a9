#include <array>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "bitstorm/hw/daalen.hpp"
#include "bitstorm/hw/lfsr.hpp"
#include "bitstorm/hw/mux_rounder.hpp"

namespace bitstorm::hw {
namespace {

TEST(Mux, Routing) {
  EXPECT_TRUE(mux_out(0b1111, 4, 3));
  for (unsigned sel = 1; sel <= 4; ++sel) EXPECT_FALSE(mux_out(0b0000, 4, sel));
  // in_1 = 1, in_4 = 1
  EXPECT_TRUE(mux_out(0b1001, 4, 4));
  EXPECT_TRUE(mux_out(0b1001, 4, 1));
  EXPECT_FALSE(mux_out(0b1001, 4, 2));
  EXPECT_THROW(mux_out(0, 4, 0), std::out_of_range);
  EXPECT_THROW(mux_out(0, 4, 5), std::out_of_range);
  EXPECT_THROW(mux_out(0, 3, 1), std::invalid_argument);
}

TEST(SelectDistribution, Examples) {
  EXPECT_EQ(select_distribution(4), (std::vector<Rational>{{1, 15}, {2, 15}, {4, 15}, {8, 15}}));
  EXPECT_EQ(select_distribution(2), (std::vector<Rational>{{1, 3}, {2, 3}}));
  for (unsigned n : {2U, 4U, 8U, 16U, 32U}) {
    Rational sum;
    for (const auto& p : select_distribution(n)) sum += p;
    EXPECT_EQ(sum, Rational(1)) << n;
  }
  EXPECT_THROW(select_distribution(6), std::invalid_argument);
}

TEST(ExactOutputProbability, Examples) {
  EXPECT_EQ(exact_output_probability(QFraction(0b1001, 4)), Rational(3, 5));  // 9/15
  EXPECT_EQ(exact_output_probability(QFraction(0b1111, 4)), Rational(1));
  EXPECT_EQ(exact_output_probability(QFraction(0, 4)), Rational(0));
}

TEST(ExactOutputProbability, ExhaustiveMatchesClosedForm) {
  for (unsigned n : {2U, 4U, 8U}) {
    const std::uint64_t full = (std::uint64_t{1} << n) - 1;
    Rational worst;
    for (std::uint64_t bits = 0; bits <= full; ++bits) {
      const Rational p = exact_output_probability(QFraction(bits, n));
      // value * 2^N / (2^N - 1) = bits / (2^N - 1)
      EXPECT_EQ(p, Rational(bits, full));
      const Rational err = abs_diff(p, Rational(bits, full + 1));
      if (worst < err) worst = err;
    }
    EXPECT_LE(worst, Rational(1, full + 1)) << "N=" << n;
  }
}

TEST(SelectBits, Examples) {
  const auto specs = select_bit_probabilities(4);
  ASSERT_EQ(specs.size(), 2U);
  EXPECT_EQ(specs[0].p_one(), Rational(2, 3));
  EXPECT_EQ(specs[1].p_one(), Rational(4, 5));
  EXPECT_EQ(specs[0].p_one() * specs[1].p_one(), Rational(8, 15));
  EXPECT_EQ(fermat_product(4), 15U);
  EXPECT_EQ(fermat_product(2), 3U);
  EXPECT_EQ(fermat_product(8), 255U);
  EXPECT_EQ(fermat_product(16), 65535U);
  EXPECT_EQ(fermat_product(32), 4294967295ULL);
}

TEST(SelectBits, FactorizationReproducesGeometricDistribution) {
  for (unsigned n : {2U, 4U, 8U, 16U}) {
    const auto joint = factorized_select_distribution(select_bit_probabilities(n));
    EXPECT_EQ(joint, select_distribution(n)) << "N=" << n;
  }
}

TEST(Lfsr, DefaultIsMaximalLength) {
  const auto p = measure_period(Lfsr(0xACE1));
  ASSERT_TRUE(p.has_value());
  EXPECT_EQ(p->period, 65535U);
  EXPECT_EQ(p->ones, 32768U);
}

TEST(Lfsr, TwoBitExample) {
  Lfsr lfsr(0b01, 2, {2, 1});
  const auto p = measure_period(lfsr);
  ASSERT_TRUE(p.has_value());
  EXPECT_EQ(p->period, 3U);
}

TEST(Lfsr, RejectsZeroStateAndBadTaps) {
  EXPECT_THROW(Lfsr(0), std::invalid_argument);
  EXPECT_THROW(Lfsr(0x10000), std::invalid_argument);  // masks to zero
  EXPECT_THROW(Lfsr(1, 16, {17}), std::invalid_argument);
}

TEST(Lfsr, NonMaximalTapsHaveShortPeriod) {
  // x^4 + x^2 + 1 is reducible
  const auto p = measure_period(Lfsr(1, 4, {4, 2}));
  ASSERT_TRUE(p.has_value());
  EXPECT_LT(p->period, 15U);
}

TEST(Daalen, Examples) {
  const QFraction three_quarters(0b11, 2);
  int ones = 0;
  for (std::uint64_t r = 0; r < 4; ++r) ones += daalen_bit_packed(three_quarters, r);
  EXPECT_EQ(ones, 3);

  const QFraction zero(0, 8);
  for (std::uint64_t r = 0; r < 256; ++r) EXPECT_FALSE(daalen_bit_packed(zero, r));

  const QFraction half(0b1000, 4);
  for (std::uint64_t r = 0; r < 16; ++r) EXPECT_EQ(daalen_bit_packed(half, r), ((r >> 3) & 1U) != 0);
}

TEST(Daalen, SpanInterface) {
  const QFraction t(0b10, 2);
  const std::array<std::uint8_t, 2> bits{0, 1};
  EXPECT_TRUE(daalen_bit(t, bits));
  const std::array<std::uint8_t, 3> wrong{0, 1, 0};
  EXPECT_THROW(daalen_bit(t, wrong), std::invalid_argument);
}

TEST(Daalen, ExhaustiveExactnessSmallWidths) {
  for (unsigned m = 2; m <= 8; ++m) {
    for (std::uint64_t target = 0; target < (std::uint64_t{1} << m); ++target) {
      const QFraction t(target, m);
      std::uint64_t ones = 0;
      for (std::uint64_t r = 0; r < (std::uint64_t{1} << m); ++r) ones += daalen_bit_packed(t, r);
      ASSERT_EQ(ones, target) << "M=" << m;
    }
  }
}

TEST(ModulatorTarget, RoundsToNearest) {
  const auto specs = select_bit_probabilities(32);
  EXPECT_EQ(modulator_target(specs[0], 16).bits(), 43691U);  // round(2/3 * 65536)
  EXPECT_EQ(modulator_target(specs[1], 16).bits(), 52429U);  // round(4/5 * 65536)
  EXPECT_EQ(modulator_target(specs[4], 16).bits(), 65535U);  // 65536/65537 saturates
  const auto q = quantized_select_distribution(8, 16);
  const auto exact = select_distribution(8);
  double sum = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    sum += q[i];
    EXPECT_NEAR(q[i], exact[i].to_double(), 1e-4);
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

std::vector<double> select_frequencies(const MuxRounderConfig& config, std::uint64_t cycles, std::uint64_t seed) {
  SelectStream stream(config, RandomSource(seed, 0));
  std::vector<double> freq(config.n_inputs, 0.0);
  for (std::uint64_t c = 0; c < cycles; ++c) freq[stream.next() - 1] += 1.0;
  for (double& f : freq) f /= static_cast<double>(cycles);
  return freq;
}

TEST(SelectStream, IdealExactFrequency) {
  constexpr std::uint64_t cycles = 1000000;
  const auto freq = select_frequencies({4, SelectSource::ideal_exact, 16}, cycles, 3);
  const double p = 8.0 / 15.0;
  EXPECT_NEAR(freq[3], p, 4.0 * std::sqrt(p * (1 - p) / cycles));
}

TEST(SelectStream, LfsrSourcesTrackGeometricDistribution) {
  constexpr std::uint64_t cycles = 200000;
  for (auto source : {SelectSource::independent_lfsr_per_select_bit, SelectSource::shared_single_prbs,
                      SelectSource::single_lfsr_with_modulators}) {
    const auto freq = select_frequencies({8, source, 16}, cycles, 5);
    const auto exact = select_distribution(8);
    for (std::size_t i = 0; i < freq.size(); ++i) {
      const double p = exact[i].to_double();
      EXPECT_NEAR(freq[i], p, 6.0 * std::sqrt(p * (1 - p) / cycles) + 1e-3) << to_string(source) << " sel=" << i + 1;
    }
  }
}

TEST(SelectStream, Deterministic) {
  for (auto source : {SelectSource::ideal_exact, SelectSource::independent_lfsr_per_select_bit,
                      SelectSource::single_lfsr_with_modulators}) {
    SelectStream a({8, source, 16}, RandomSource(1, 2)), b({8, source, 16}, RandomSource(1, 2));
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next(), b.next());
  }
}

TEST(SelectStream, SharedConsumersSeeSameSelect) {
  SelectStream stream({8, SelectSource::shared_single_prbs, 16}, RandomSource(2, 0));
  const auto w = to_sign_magnitude(0.3, 8);
  for (int cycle = 0; cycle < 100; ++cycle) {
    stream.next();
    const unsigned first = stream.current();
    const unsigned second = stream.current();
    EXPECT_EQ(first, second);
    EXPECT_EQ(hw_project_ternary(w, 8, first), hw_project_ternary(w, 8, second));
  }
  EXPECT_EQ(stream.cycles(), 100U);
}

TEST(HwProjectTernary, Examples) {
  const SignMagnitudeWeight full{-1, QFraction(0b1111, 4)};
  const SignMagnitudeWeight zero{1, QFraction(0, 4)};
  for (unsigned sel = 1; sel <= 4; ++sel) {
    EXPECT_EQ(hw_project_ternary(full, 4, sel), -1);
    EXPECT_EQ(hw_project_ternary(zero, 4, sel), 0);
  }
  // 9/16: in_1 and in_4 set; P(nonzero) = 1/15 + 8/15 = 3/5
  const SignMagnitudeWeight w{1, QFraction(9, 4)};
  Rational p;
  const auto dist = select_distribution(4);
  for (unsigned sel = 1; sel <= 4; ++sel) {
    if (hw_project_ternary(w, 4, sel) != 0) p += dist[sel - 1];
  }
  EXPECT_EQ(p, Rational(3, 5));
  EXPECT_THROW(hw_project_ternary(w, 8, 1), std::invalid_argument);
}

NetworkModel single_layer(std::vector<double> weights, std::size_t features) {
  const std::size_t fan_in = weights.size() / features;
  auto m = build_model(std::to_string(features) + "SVM", {fan_in}, HiddenActivation::sign, false);
  m.layers[0].weights = Tensor({features, fan_in}, std::move(weights));
  return m;
}

TEST(HwProjectModel, MarginalsMatchRounder) {
  // N=4: P(nonzero) = bits / 15
  const auto model = single_layer({9.0 / 16, -6.0 / 16, 1.0 / 16, 1.0}, 4);
  constexpr int draws = 20000;
  std::array<int, 4> nonzero{};
  for (int d = 0; d < draws; ++d) {
    const auto res = hw_project_model(model, {4, SelectSource::ideal_exact, 16}, 1, RandomSource(7, d));
    const auto& w = res.instance.layers[0].weights;
    for (std::size_t i = 0; i < 4; ++i) {
      nonzero[i] += w[i] != 0;
      if (w[i] != 0) {
        ASSERT_EQ(w[i], model.layers[0].weights[i] > 0 ? 1 : -1);
      }
    }
  }
  const std::array<double, 4> expect{9.0 / 15, 6.0 / 15, 1.0 / 15, 1.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double p = expect[i];
    EXPECT_NEAR(nonzero[i] / double(draws), p, 4.0 * std::sqrt(p * (1 - p) / draws) + 1e-12) << i;
  }
}

TEST(HwProjectModel, SharedSelectProjectsLanesIdentically) {
  // 16 output features with identical rows; lanes 0..7 share every cycle.
  std::vector<double> w;
  for (int o = 0; o < 16; ++o)
    for (double v : {0.3, -0.55, 0.8, 0.05, -0.95}) w.push_back(v);
  const auto model = single_layer(w, 16);
  const auto res = hw_project_model(model, {8, SelectSource::shared_single_prbs, 16}, 8, RandomSource(3, 3));
  const auto& q = res.instance.layers[0].weights;
  for (std::size_t group = 0; group < 2; ++group)
    for (std::size_t lane = 1; lane < 8; ++lane)
      for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(q[(group * 8 + lane) * 5 + f], q[group * 8 * 5 + f]);
  EXPECT_EQ(res.cycles, 2U * 5U);
  EXPECT_EQ(res.lanes, 8U);

  // independent lanes decorrelate the same rows
  const auto ind = hw_project_model(model, {8, SelectSource::independent_lfsr_per_select_bit, 16}, 8, RandomSource(3, 3));
  bool any_diff = false;
  for (std::size_t i = 0; i < 40; ++i) any_diff |= ind.instance.layers[0].weights[i] != ind.instance.layers[0].weights[i % 5];
  EXPECT_TRUE(any_diff);
}

TEST(HwProjectModel, OutputsAreTernary) {
  RandomSource gen(11, 0);
  std::vector<double> w(60);
  for (double& v : w) v = 2.0 * gen.uniform() - 1.0;
  const auto model = single_layer(w, 6);
  for (auto source : {SelectSource::ideal_exact, SelectSource::independent_lfsr_per_select_bit,
                      SelectSource::shared_single_prbs, SelectSource::single_lfsr_with_modulators}) {
    for (std::size_t lanes : {1U, 3U, 8U}) {
      const auto res = hw_project_model(model, {8, source, 16}, lanes, RandomSource(12, lanes));
      for (auto v : res.instance.layers[0].weights.data()) EXPECT_TRUE(v >= -1 && v <= 1);
      EXPECT_EQ(res.instance.mode, ProjectionMode::ternary);
    }
  }
  EXPECT_THROW(hw_project_model(model, {8, SelectSource::ideal_exact, 16}, 0, RandomSource(1, 1)), std::invalid_argument);
}

TEST(HwProjectModel, IndependentLfsrWeightLevelStatistics) {
  constexpr std::uint64_t cycles = 100000;
  const MuxRounderConfig config{8, SelectSource::independent_lfsr_per_select_bit, 16};
  for (std::uint64_t bits : {16U, 144U, 240U}) {
    const SignMagnitudeWeight w{1, QFraction(bits, 8)};
    SelectStream stream(config, RandomSource(21, bits));
    std::uint64_t nonzero = 0;
    for (std::uint64_t c = 0; c < cycles; ++c) nonzero += hw_project_ternary(w, 8, stream.next()) != 0;
    const double p = static_cast<double>(bits) / 255.0;
    const double tol = std::max(std::ldexp(1.0, -16) * 256.0 / 255.0, 4.0 * std::sqrt(p * (1 - p) / cycles));
    EXPECT_NEAR(nonzero / double(cycles), p, tol) << bits;
  }
}

}  // namespace
}  // namespace bitstorm::hw

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "bitstorm/projection.hpp"

namespace bitstorm {
namespace {

// Empirical frequency of sround(w) == target over n draws.
double frequency(double w, std::int64_t target, int n, std::uint64_t seed) {
  RandomSource rng(seed, 0);
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += sround(w, rng) == target;
  return static_cast<double>(hits) / n;
}

double tolerance(double p, int n) { return 4.0 * std::sqrt(p * (1.0 - p) / n); }

TEST(Sround, Examples) {
  constexpr int n = 100000;
  // p(ceil) = |(floor - w) / (floor - ceil)|
  EXPECT_NEAR(frequency(0.3, 1, n, 1), 0.3, tolerance(0.3, n));
  EXPECT_NEAR(frequency(-0.25, 0, n, 2), 0.75, tolerance(0.75, n));
  EXPECT_NEAR(frequency(-0.25, -1, n, 3), 0.25, tolerance(0.25, n));
  RandomSource rng(4, 0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sround(-1.0, rng), -1);
}

TEST(Sround, IntegersConsumeNoRandomness) {
  RandomSource a(5, 9), b(5, 9);
  for (double w : {-1.0, 0.0, 1.0, 7.0}) EXPECT_EQ(sround(w, a), static_cast<std::int64_t>(w));
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Sround, RejectsNonFinite) {
  RandomSource rng(0, 0);
  EXPECT_THROW(sround(std::numeric_limits<double>::quiet_NaN(), rng), std::invalid_argument);
}

TEST(Sround, UnbiasedOnGrid) {
  constexpr int n = 100000;
  for (int k = -8; k <= 8; ++k) {
    const double w = k / 8.0;
    RandomSource rng(6, static_cast<std::uint64_t>(k + 100));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += static_cast<double>(sround(w, rng));
    const double p = w - std::floor(w);
    EXPECT_LE(std::fabs(sum / n - w), tolerance(p, n) + 1e-12) << "w=" << w;
  }
}

TEST(ExpectedProjection, Examples) {
  EXPECT_DOUBLE_EQ(expected_projection(0.3, ProjectionMode::ternary), 0.3);
  EXPECT_DOUBLE_EQ(expected_projection(2.0, ProjectionMode::binary), 1.0);
  EXPECT_DOUBLE_EQ(expected_projection(-1.0, ProjectionMode::ternary), -1.0);
}

NetworkModel filled_model(double w) {
  auto m = build_model("64FC-4SVM", {64}, HiddenActivation::sign, false);
  for (auto& layer : m.layers)
    for (double& x : layer.weights.data()) x = w;
  return m;
}

TEST(ProjectTernary, FixedPoints) {
  for (double w : {0.0, 1.0, -1.0}) {
    const auto inst = project_ternary(filled_model(w), RandomSource(1, 1));
    for (const auto& layer : inst.layers)
      for (auto v : layer.weights.data()) EXPECT_EQ(v, static_cast<std::int8_t>(w));
  }
}

TEST(ProjectTernary, HalfWeightsConcentrate) {
  const auto inst = project_ternary(filled_model(0.5), RandomSource(2, 1));
  const auto& w = inst.layers[0].weights;
  double plus = 0;
  for (auto v : w.data()) {
    ASSERT_TRUE(v == 0 || v == 1);
    plus += v == 1;
  }
  const double n = static_cast<double>(w.size());
  EXPECT_NEAR(plus / n, 0.5, 4.0 * std::sqrt(0.25 / n));
}

TEST(ProjectTernary, BiasesCopied) {
  auto m = filled_model(0.2);
  m.layers[0].bias[3] = 0.77;
  const auto inst = project_ternary(m, RandomSource(3, 1));
  EXPECT_EQ(inst.layers[0].bias, m.layers[0].bias);
  EXPECT_EQ(inst.mode, ProjectionMode::ternary);
}

TEST(ProjectBinary, Probabilities) {
  constexpr int n = 100000;
  RandomSource rng(7, 0);
  int plus_one = 0, plus_half = 0, plus_zero = 0;
  for (int i = 0; i < n; ++i) {
    plus_one += sround_binary(1.0, rng) == 1;
    plus_zero += sround_binary(0.0, rng) == 1;
    plus_half += sround_binary(-0.5, rng) == 1;
  }
  EXPECT_EQ(plus_one, n);
  EXPECT_NEAR(plus_zero / double(n), 0.5, tolerance(0.5, n));
  EXPECT_NEAR(plus_half / double(n), 0.25, tolerance(0.25, n));
}

TEST(Projection, RangeAndDeterminism) {
  RandomSource gen(8, 0);
  auto m = build_model("16FC-8FC-3SVM", {5}, HiddenActivation::sign, false);
  for (auto& layer : m.layers)
    for (double& x : layer.weights.data()) x = 2.0 * gen.uniform() - 1.0;
  m.layers[0].weights[0] = 1.0;
  m.layers[0].weights[1] = -1.0;
  for (auto mode : {ProjectionMode::ternary, ProjectionMode::binary}) {
    const auto a = project(m, mode, RandomSource(9, 4));
    const auto b = project(m, mode, RandomSource(9, 4));
    const auto c = project(m, mode, RandomSource(9, 5));
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (const auto& layer : a.layers) {
      for (auto v : layer.weights.data()) {
        if (mode == ProjectionMode::ternary) {
          EXPECT_TRUE(v >= -1 && v <= 1);
        } else {
          EXPECT_TRUE(v == -1 || v == 1);
        }
      }
    }
  }
}

TEST(Projection, BinaryUnbiased) {
  constexpr int n = 100000;
  for (double w : {-1.0, -0.6, 0.0, 0.35, 1.0}) {
    RandomSource rng(10, static_cast<std::uint64_t>((w + 2) * 100));
    double sum = 0;
    for (int i = 0; i < n; ++i) sum += sround_binary(w, rng);
    const double p = (w + 1) / 2;
    // mean of +/-1 draws has variance 4 p (1-p) / n
    EXPECT_LE(std::fabs(sum / n - w), 2.0 * tolerance(p, n) + 1e-12) << w;
  }
}

}  // namespace
}  // namespace bitstorm

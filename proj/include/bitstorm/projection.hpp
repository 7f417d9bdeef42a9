#pragma once

#include <cmath>
#include <cstdint>

#include "bitstorm/model.hpp"
#include "bitstorm/random.hpp"

namespace bitstorm {

/// Stochastic rounding onto the integer grid: ceil(w) with probability
/// w - floor(w), floor(w) otherwise. Integers pass through without a draw.
inline std::int64_t sround(double w, RandomSource& rng) {
  if (!std::isfinite(w)) throw std::invalid_argument("sround: non-finite input");
  const double lo = std::floor(w);
  if (lo == w) return static_cast<std::int64_t>(w);
  const double p_up = w - lo;
  return static_cast<std::int64_t>(rng.uniform() < p_up ? lo + 1.0 : lo);
}

/// +1 with probability (clip(w)+1)/2, else -1. Always consumes one draw.
inline std::int8_t sround_binary(double w, RandomSource& rng) {
  const double p_plus = (clip(w) + 1.0) / 2.0;
  return rng.uniform() < p_plus ? 1 : -1;
}

/// E[projection(w)]; equals clip(w) in both modes.
inline double expected_projection(double w, ProjectionMode) { return clip(w); }

// Each weighted layer draws from rng.split(layer_index), row-major within the
// tensor, so a projection does not depend on how layers are scheduled.
inline DiscreteModelInstance project(const NetworkModel& model, ProjectionMode mode, const RandomSource& rng) {
  DiscreteModelInstance inst;
  static_cast<BasicNetwork<std::int8_t>&>(inst) = map_weights<std::int8_t>(
      model, [&](std::size_t layer_index, const Tensor& w) {
        RandomSource layer_rng = rng.split(layer_index);
        std::vector<std::int8_t> out(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
          out[i] = mode == ProjectionMode::ternary
                       ? static_cast<std::int8_t>(sround(clip(w[i]), layer_rng))
                       : sround_binary(w[i], layer_rng);
        }
        return BasicTensor<std::int8_t>(w.shape(), std::move(out));
      });
  inst.mode = mode;
  return inst;
}

inline DiscreteModelInstance project_ternary(const NetworkModel& model, const RandomSource& rng) {
  return project(model, ProjectionMode::ternary, rng);
}

inline DiscreteModelInstance project_binary(const NetworkModel& model, const RandomSource& rng) {
  return project(model, ProjectionMode::binary, rng);
}

}  // namespace bitstorm

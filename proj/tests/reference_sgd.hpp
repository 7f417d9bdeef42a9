#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "bitstorm/dataset.hpp"
#include "bitstorm/model.hpp"

namespace bitstorm::test_support {

// Plain SGD written out independently of the library's backward pass.
struct ReferenceMlp {
  // 2 -> H (sign) -> 2, weights row-major [out][in]
  std::vector<double> w1, b1, w2, b2;
  std::size_t hidden;

  double step(const Dataset& data, std::span<const std::size_t> batch, double eta) {
    std::vector<double> gw1(w1.size(), 0.0), gb1(b1.size(), 0.0), gw2(w2.size(), 0.0), gb2(b2.size(), 0.0);
    double loss = 0.0;
    for (std::size_t idx : batch) {
      const double x[2] = {data.features[2 * idx], data.features[2 * idx + 1]};
      std::vector<double> pre(hidden), act(hidden);
      for (std::size_t h = 0; h < hidden; ++h) {
        pre[h] = w1[2 * h] * x[0] + w1[2 * h + 1] * x[1] + b1[h];
        act[h] = pre[h] >= 0.0 ? 1.0 : -1.0;
      }
      double y[2];
      for (std::size_t o = 0; o < 2; ++o) {
        double s = 0.0;
        for (std::size_t h = 0; h < hidden; ++h) s += w2[o * hidden + h] * act[h];
        y[o] = s + b2[o];
      }
      double gy[2];
      double l = 0.0;
      for (std::size_t o = 0; o < 2; ++o) {
        const double t = o == data.labels[idx] ? 1.0 : -1.0;
        const double m = std::max(0.0, 1.0 - t * y[o]);
        l += m * m;
        gy[o] = -2.0 * t * m * 0.5;
      }
      loss += l * 0.5;
      std::vector<double> gact(hidden, 0.0);
      for (std::size_t o = 0; o < 2; ++o) {
        for (std::size_t h = 0; h < hidden; ++h) gw2[o * hidden + h] += gy[o] * act[h];
        gb2[o] += gy[o];
      }
      for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t h = 0; h < hidden; ++h) gact[h] += w2[o * hidden + h] * gy[o];
      for (std::size_t h = 0; h < hidden; ++h) {
        const double g = std::fabs(pre[h]) <= 1.0 ? gact[h] : 0.0;
        gw1[2 * h] += g * x[0];
        gw1[2 * h + 1] += g * x[1];
        gb1[h] += g;
      }
    }
    const double b = static_cast<double>(batch.size());
    for (std::size_t i = 0; i < w1.size(); ++i) w1[i] = clip(w1[i] - eta * (gw1[i] / b));
    for (std::size_t i = 0; i < w2.size(); ++i) w2[i] = clip(w2[i] - eta * (gw2[i] / b));
    for (std::size_t i = 0; i < b1.size(); ++i) b1[i] -= eta * (gb1[i] / b);
    for (std::size_t i = 0; i < b2.size(); ++i) b2[i] -= eta * (gb2[i] / b);
    return loss / b;
  }
};

}  // namespace bitstorm::test_support

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "bitstorm/model.hpp"
#include "bitstorm/tensor.hpp"

namespace bitstorm {

/// Raw output-layer class scores of one example.
struct Scores {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const Scores&, const Scores&) = default;
};

/// +1 for x >= 0, -1 otherwise.
inline double sign_act(double x) { return x >= 0.0 ? 1.0 : -1.0; }

inline double relu_act(double x) { return std::max(0.0, x); }

/// Weighted sum with ternary weights using additions and subtractions only.
inline double ternary_dot(std::span<const std::int8_t> weights, std::span<const double> activations) {
  if (weights.size() != activations.size()) throw std::invalid_argument("ternary_dot: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    switch (weights[i]) {
      case 1: sum += activations[i]; break;
      case -1: sum -= activations[i]; break;
      case 0: break;
      default: throw std::invalid_argument("ternary_dot: weight outside {-1,0,+1}");
    }
  }
  return sum;
}

template <typename W>
concept InferenceWeight = std::same_as<W, double> || std::same_as<W, std::int8_t>;

namespace detail {

// Accumulation step shared by every weighted layer. The int8 path never
// multiplies; both paths visit operands in the same order.
inline void accumulate(double& sum, double w, double a) { sum += w * a; }

inline void accumulate(double& sum, std::int8_t w, double a) {
  if (w > 0) {
    sum += a;
  } else if (w < 0) {
    sum -= a;
  }
}

}  // namespace detail

/// Conv3x3, zero padding 1, stride 1. Per output: channels outermost, then
/// the receptive field row-major, then the bias.
template <InferenceWeight W>
Tensor conv3x3_forward(const BasicLayer<W>& layer, const Tensor& in) {
  const std::size_t channels = in.extent(0), height = in.extent(1), width = in.extent(2);
  Tensor out({layer.out_units, height, width});
  const auto w = layer.weights.data();
  const auto x = in.data();
  for (std::size_t o = 0; o < layer.out_units; ++o) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t xx = 0; xx < width; ++xx) {
        double sum = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - 1;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
              detail::accumulate(sum, w[((o * channels + c) * 3 + ky) * 3 + kx],
                                 x[(c * height + static_cast<std::size_t>(iy)) * width + static_cast<std::size_t>(ix)]);
            }
          }
        }
        out[(o * height + y) * width + xx] = sum + layer.bias[o];
      }
    }
  }
  return out;
}

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
/// `argmax` (optional) receives the flat input index of each output.
inline Tensor max_pool2_forward(const Tensor& in, std::vector<std::size_t>* argmax = nullptr) {
  const std::size_t channels = in.extent(0), height = in.extent(1), width = in.extent(2);
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor out({channels, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (c * height + 2 * y) * width + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * height + 2 * y + dy) * width + 2 * x + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (c * oh + y) * ow + x;
        out[o] = in[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <InferenceWeight W>
Tensor fully_connected_forward(const BasicLayer<W>& layer, const Tensor& in) {
  const auto x = in.data();
  const auto w = layer.weights.data();
  Tensor out({layer.out_units});
  for (std::size_t o = 0; o < layer.out_units; ++o) {
    double sum = 0.0;
    if constexpr (std::same_as<W, std::int8_t>) {
      sum = ternary_dot(w.subspan(o * layer.in_units, layer.in_units), x);
    } else {
      for (std::size_t i = 0; i < layer.in_units; ++i) detail::accumulate(sum, w[o * layer.in_units + i], x[i]);
    }
    out[o] = sum + layer.bias[o];
  }
  return out;
}

/// Per-channel y = scale * x + shift (channel = leading extent).
template <typename W>
Tensor affine_forward(const BasicLayer<W>& layer, const Tensor& in) {
  Tensor out = in;
  const std::size_t per_channel = in.size() / in.extent(0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t c = i / per_channel;
    out[i] = layer.scale[c] * in[i] + layer.bias[c];
  }
  return out;
}

template <typename Fn>
Tensor elementwise(const Tensor& in, Fn&& fn) {
  Tensor out = in;
  for (double& v : out.data()) v = fn(v);
  return out;
}

/// One layer's forward step.
template <InferenceWeight W>
Tensor layer_forward(const BasicLayer<W>& layer, const Tensor& in, std::vector<std::size_t>* pool_argmax = nullptr) {
  layer_output_shape(layer.kind, layer.in_units, layer.out_units, in.shape());  // throws on mismatch
  switch (layer.kind) {
    case LayerKind::conv3x3: return conv3x3_forward(layer, in);
    case LayerKind::max_pool2: return max_pool2_forward(in, pool_argmax);
    case LayerKind::fully_connected: return fully_connected_forward(layer, in);
    case LayerKind::sign_activation: return elementwise(in, sign_act);
    case LayerKind::relu_activation: return elementwise(in, relu_act);
    case LayerKind::batch_norm_affine: return affine_forward(layer, in);
    case LayerKind::square_hinge_output: return in;
  }
  return in;
}

/// Applies every layer in order. `trace`, when given, receives the input of
/// each layer followed by the final output (layers.size() + 1 tensors).
template <InferenceWeight W>
Tensor forward_tensor(const BasicNetwork<W>& net, const Tensor& input, std::vector<Tensor>* trace = nullptr) {
  if (input.shape() != net.input_shape) {
    throw ShapeError("input " + shape_string(input.shape()) + " does not match model input " +
                     shape_string(net.input_shape));
  }
  Tensor x = input;
  if (trace) {
    trace->clear();
    trace->reserve(net.layers.size() + 1);
  }
  for (const auto& layer : net.layers) {
    if (trace) trace->push_back(x);
    x = layer_forward(layer, x);
  }
  if (trace) trace->push_back(x);
  return x;
}

/// Class scores of one example (raw output-layer values, no loss).
template <InferenceWeight W>
Scores forward(const BasicNetwork<W>& net, const Tensor& input) {
  Tensor out = forward_tensor(net, input);
  if (out.size() != net.class_count) throw ShapeError("output length does not match class count");
  return {out.values()};
}

}  // namespace bitstorm

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bitstorm/error.hpp"
#include "bitstorm/tensor.hpp"

namespace bitstorm {

/// Saturate a shadow weight to [-1, 1].
inline double clip(double w) {
  if (!std::isfinite(w)) throw std::invalid_argument("clip: non-finite weight");
  return std::min(1.0, std::max(-1.0, w));
}

enum class ProjectionMode { ternary, binary };

inline const char* to_string(ProjectionMode m) {
  return m == ProjectionMode::ternary ? "ternary" : "binary";
}

inline ProjectionMode parse_projection_mode(std::string_view s) {
  if (s == "ternary") return ProjectionMode::ternary;
  if (s == "binary") return ProjectionMode::binary;
  throw std::invalid_argument("unknown projection mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Hardware-side weight encoding

/// Unsigned binary fraction bits / 2^width. Bit i (1-based) is in_i; in_width is the MSB.
class QFraction {
 public:
  static constexpr unsigned max_width = 32;

  QFraction(std::uint64_t bits, unsigned width) : bits_(bits), width_(width) {
    if (width == 0 || width > max_width) {
      throw std::invalid_argument("QFraction width " + std::to_string(width) + " outside 1..32");
    }
    if (bits > max_bits()) {
      throw std::invalid_argument("QFraction bits exceed width " + std::to_string(width));
    }
  }

  std::uint64_t bits() const noexcept { return bits_; }
  unsigned width() const noexcept { return width_; }
  std::uint64_t max_bits() const noexcept { return (std::uint64_t{1} << width_) - 1; }
  double value() const noexcept { return std::ldexp(static_cast<double>(bits_), -static_cast<int>(width_)); }

  /// in_i for i in 1..width.
  bool bit(unsigned i) const { return ((bits_ >> (i - 1)) & 1U) != 0; }

  friend bool operator==(const QFraction&, const QFraction&) = default;

 private:
  std::uint64_t bits_;
  unsigned width_;
};

inline bool is_rounder_width(unsigned n) {
  return n == 2 || n == 4 || n == 8 || n == 16 || n == 32;
}

struct SignMagnitudeWeight {
  int sign = 1;  // +1 or -1
  QFraction magnitude{0, 8};

  double value() const noexcept { return sign * magnitude.value(); }
  friend bool operator==(const SignMagnitudeWeight&, const SignMagnitudeWeight&) = default;
};

/// Round-to-nearest-even of |w| * 2^width, saturated at 2^width - 1.
inline SignMagnitudeWeight to_sign_magnitude(double w, unsigned width) {
  if (!is_rounder_width(width)) {
    throw std::invalid_argument("sign-magnitude width must be one of 2,4,8,16,32");
  }
  if (!std::isfinite(w) || std::fabs(w) > 1.0) {
    throw std::invalid_argument("to_sign_magnitude expects a clipped weight");
  }
  const double scaled = std::ldexp(std::fabs(w), static_cast<int>(width));
  const double limit = std::ldexp(1.0, static_cast<int>(width)) - 1.0;
  const double rounded = std::min(std::nearbyint(scaled), limit);  // FE_TONEAREST: ties to even
  return {w >= 0.0 ? 1 : -1, QFraction(static_cast<std::uint64_t>(rounded), width)};
}

// ---------------------------------------------------------------------------
// Layers and networks

enum class LayerKind {
  conv3x3,
  max_pool2,
  fully_connected,
  sign_activation,
  relu_activation,
  batch_norm_affine,
  square_hinge_output,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv3x3: return "Conv3x3";
    case LayerKind::max_pool2: return "MaxPool2";
    case LayerKind::fully_connected: return "FullyConnected";
    case LayerKind::sign_activation: return "SignActivation";
    case LayerKind::relu_activation: return "ReLUActivation";
    case LayerKind::batch_norm_affine: return "BatchNormAffine";
    case LayerKind::square_hinge_output: return "SquareHingeOutput";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::conv3x3, LayerKind::max_pool2, LayerKind::fully_connected,
                 LayerKind::sign_activation, LayerKind::relu_activation,
                 LayerKind::batch_norm_affine, LayerKind::square_hinge_output}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + std::string(s) + "'");
}

inline bool has_weights(LayerKind k) {
  return k == LayerKind::conv3x3 || k == LayerKind::fully_connected;
}

// One layer. Conv3x3 weights are (out, in, 3, 3); FullyConnected weights are
// (out, in). `bias` holds the per-output bias for Conv/FC and the affine shift
// for BatchNormAffine; `scale` is only used by BatchNormAffine. Biases and
// affine parameters stay real for every weight type.
template <typename W>
struct BasicLayer {
  LayerKind kind = LayerKind::sign_activation;
  std::size_t in_units = 0;   // input channels / features (Conv, FC, BN)
  std::size_t out_units = 0;  // output channels / features (Conv, FC, BN)
  BasicTensor<W> weights;
  std::vector<double> bias;
  std::vector<double> scale;

  friend bool operator==(const BasicLayer&, const BasicLayer&) = default;
};

template <typename W>
struct BasicNetwork {
  using weight_type = W;

  std::vector<std::size_t> input_shape;  // per-example: (C,H,W) or (features)
  std::size_t class_count = 0;
  std::vector<BasicLayer<W>> layers;

  friend bool operator==(const BasicNetwork&, const BasicNetwork&) = default;
};

/// High-precision shadow-weight model.
using NetworkModel = BasicNetwork<double>;

/// One stochastic projection of a NetworkModel: weights in {-1,0,+1} or {-1,+1}.
struct DiscreteModelInstance : BasicNetwork<std::int8_t> {
  ProjectionMode mode = ProjectionMode::ternary;

  friend bool operator==(const DiscreteModelInstance&, const DiscreteModelInstance&) = default;
};

/// Weights encoded for the multiplexer rounder.
using SignMagnitudeModel = BasicNetwork<SignMagnitudeWeight>;

/// Per-example shape after `layer` given its input shape.
inline std::vector<std::size_t> layer_output_shape(LayerKind kind, std::size_t in_units,
                                                   std::size_t out_units,
                                                   const std::vector<std::size_t>& in) {
  const auto fail = [&](const std::string& what) {
    throw ShapeError(std::string(to_string(kind)) + ": " + what + " (input " + shape_string(in) + ")");
  };
  switch (kind) {
    case LayerKind::conv3x3:
      if (in.size() != 3 || in[0] != in_units) fail("expects (" + std::to_string(in_units) + ",H,W)");
      return {out_units, in[1], in[2]};
    case LayerKind::max_pool2:
      if (in.size() != 3 || in[1] < 2 || in[2] < 2) fail("expects (C,H,W) with H,W >= 2");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::fully_connected:
      if (shape_volume(in) != in_units) fail("expects " + std::to_string(in_units) + " features");
      return {out_units};
    case LayerKind::batch_norm_affine:
      if (in.empty() || in[0] != in_units) fail("channel count mismatch");
      return in;
    case LayerKind::sign_activation:
    case LayerKind::relu_activation:
    case LayerKind::square_hinge_output:
      return in;
  }
  return in;
}

/// Validates layer parameters and chaining; returns every layer's output shape.
template <typename W>
std::vector<std::vector<std::size_t>> validate(const BasicNetwork<W>& net) {
  std::vector<std::vector<std::size_t>> shapes;
  auto shape = net.input_shape;
  if (shape.empty()) throw ShapeError("network has no input shape");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(layer.kind) + ")";
    if (has_weights(layer.kind)) {
      const std::vector<std::size_t> expect =
          layer.kind == LayerKind::conv3x3
              ? std::vector<std::size_t>{layer.out_units, layer.in_units, 3, 3}
              : std::vector<std::size_t>{layer.out_units, layer.in_units};
      if (layer.weights.shape() != expect) {
        throw ShapeError(where + ": weight shape " + shape_string(layer.weights.shape()) +
                         ", expected " + shape_string(expect));
      }
      if (layer.bias.size() != layer.out_units) throw ShapeError(where + ": bias length");
    }
    if (layer.kind == LayerKind::batch_norm_affine) {
      if (layer.out_units != layer.in_units || layer.scale.size() != layer.in_units ||
          layer.bias.size() != layer.in_units) {
        throw ShapeError(where + ": affine parameter length");
      }
    }
    if (layer.kind == LayerKind::square_hinge_output && i + 1 != net.layers.size()) {
      throw ShapeError(where + ": output layer must be last");
    }
    shape = layer_output_shape(layer.kind, layer.in_units, layer.out_units, shape);
    shapes.push_back(shape);
  }
  if (net.class_count == 0 || shape_volume(shape) != net.class_count) {
    throw ShapeError("network output " + shape_string(shape) + " does not match class count " +
                     std::to_string(net.class_count));
  }
  return shapes;
}

/// Copies a network, transforming only the weight tensors of Conv/FC layers.
/// `fn(layer_index, const BasicTensor<In>&) -> BasicTensor<Out>`.
template <typename Out, typename In, typename Fn>
BasicNetwork<Out> map_weights(const BasicNetwork<In>& net, Fn&& fn) {
  BasicNetwork<Out> out;
  out.input_shape = net.input_shape;
  out.class_count = net.class_count;
  out.layers.reserve(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& src = net.layers[i];
    BasicLayer<Out> dst;
    dst.kind = src.kind;
    dst.in_units = src.in_units;
    dst.out_units = src.out_units;
    dst.bias = src.bias;
    dst.scale = src.scale;
    if (has_weights(src.kind)) dst.weights = fn(i, src.weights);
    out.layers.push_back(std::move(dst));
  }
  return out;
}

/// Clips every shadow weight in place; returns how many values changed.
inline std::size_t clip_weights(NetworkModel& model) {
  std::size_t changed = 0;
  for (auto& layer : model.layers) {
    for (double& w : layer.weights.data()) {
      const double c = clip(w);
      if (c != w) ++changed;
      w = c;
    }
  }
  return changed;
}

inline double max_abs_weight(const NetworkModel& model) {
  double m = 0.0;
  for (const auto& layer : model.layers)
    for (double w : layer.weights.data()) m = std::max(m, std::fabs(w));
  return m;
}

/// Real-valued copy of a discrete instance (for reference arithmetic).
inline NetworkModel to_real(const BasicNetwork<std::int8_t>& inst) {
  return map_weights<double>(inst, [](std::size_t, const BasicTensor<std::int8_t>& t) {
    std::vector<double> v(t.data().begin(), t.data().end());
    return Tensor(t.shape(), std::move(v));
  });
}

inline SignMagnitudeModel to_sign_magnitude(const NetworkModel& model, unsigned width) {
  return map_weights<SignMagnitudeWeight>(model, [width](std::size_t, const Tensor& t) {
    std::vector<SignMagnitudeWeight> v;
    v.reserve(t.size());
    for (double w : t.data()) v.push_back(to_sign_magnitude(clip(w), width));
    return BasicTensor<SignMagnitudeWeight>(t.shape(), std::move(v));
  });
}

// ---------------------------------------------------------------------------
// Topology strings

enum class HiddenActivation { sign, relu };

inline HiddenActivation parse_activation(std::string_view s) {
  if (s == "sign") return HiddenActivation::sign;
  if (s == "relu") return HiddenActivation::relu;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

inline LayerKind activation_layer(HiddenActivation a) {
  return a == HiddenActivation::sign ? LayerKind::sign_activation : LayerKind::relu_activation;
}

template <typename W>
BasicLayer<W> make_layer(LayerKind kind, std::size_t in_units = 0, std::size_t out_units = 0) {
  BasicLayer<W> layer;
  layer.kind = kind;
  layer.in_units = in_units;
  layer.out_units = out_units;
  if (kind == LayerKind::conv3x3) {
    layer.weights = BasicTensor<W>({out_units, in_units, 3, 3});
    layer.bias.assign(out_units, 0.0);
  } else if (kind == LayerKind::fully_connected) {
    layer.weights = BasicTensor<W>({out_units, in_units});
    layer.bias.assign(out_units, 0.0);
  } else if (kind == LayerKind::batch_norm_affine) {
    layer.out_units = in_units;
    layer.scale.assign(in_units, 1.0);
    layer.bias.assign(in_units, 0.0);
  }
  return layer;
}

/// Builds a zero-weight model from a dash-separated topology such as
/// "128C3-128C3-MP2-256C3-256C3-MP2-1024FC-10SVM" (or "32FC-16FC-2SVM").
/// Hidden C3/FC layers get an optional affine normalization and then the
/// activation; nSVM is a fully connected output layer followed by the
/// square hinge output.
inline NetworkModel build_model(std::string_view topology, std::vector<std::size_t> input_shape,
                                HiddenActivation activation, bool affine_norm) {
  NetworkModel model;
  model.input_shape = std::move(input_shape);
  auto shape = model.input_shape;
  auto push = [&](BasicLayer<double> layer) {
    shape = layer_output_shape(layer.kind, layer.in_units, layer.out_units, shape);
    model.layers.push_back(std::move(layer));
  };
  auto push_norm_act = [&](bool act) {
    if (affine_norm) push(make_layer<double>(LayerKind::batch_norm_affine, shape[0]));
    if (act) push(make_layer<double>(activation_layer(activation)));
  };

  std::stringstream ss{std::string(topology)};
  std::string tok;
  bool finished = false;
  while (std::getline(ss, tok, '-')) {
    if (tok.empty()) continue;
    if (finished) throw std::invalid_argument("topology: layers after the SVM output");
    if (tok == "MP2") {
      push(make_layer<double>(LayerKind::max_pool2));
      continue;
    }
    std::size_t pos = 0;
    unsigned long units = 0;
    try {
      units = std::stoul(tok, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("topology: bad token '" + tok + "'");
    }
    const std::string suffix = tok.substr(pos);
    if (units == 0) throw std::invalid_argument("topology: zero units in '" + tok + "'");
    if (suffix == "C3") {
      if (shape.size() != 3) throw ShapeError("topology: C3 needs a (C,H,W) input");
      push(make_layer<double>(LayerKind::conv3x3, shape[0], units));
      push_norm_act(true);
    } else if (suffix == "FC" || suffix == "SVM") {
      push(make_layer<double>(LayerKind::fully_connected, shape_volume(shape), units));
      if (suffix == "FC") {
        push_norm_act(true);
      } else {
        push_norm_act(false);
        push(make_layer<double>(LayerKind::square_hinge_output));
        model.class_count = units;
        finished = true;
      }
    } else {
      throw std::invalid_argument("topology: bad token '" + tok + "'");
    }
  }
  if (!finished) throw std::invalid_argument("topology must end with an nSVM output layer");
  validate(model);
  return model;
}

}  // namespace bitstorm

#pragma once

// Projected-gradient training: each step samples discrete weights from the
// shadow weights, runs forward/backward with the discrete weights, and applies
// the gradient to the shadow weights, which are then clipped to [-1, 1].

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bitstorm/dataset.hpp"
#include "bitstorm/ensemble.hpp"
#include "bitstorm/error.hpp"
#include "bitstorm/inference.hpp"
#include "bitstorm/projection.hpp"

namespace bitstorm {

struct HingeLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d score
};

/// Mean over classes of max(0, 1 - t_c y_c)^2 with t = +1 for the target, -1 otherwise.
inline HingeLoss square_hinge_loss(std::span<const double> scores, std::size_t target) {
  const std::size_t classes = scores.size();
  if (target >= classes) throw std::out_of_range("square_hinge_loss: target class out of range");
  HingeLoss out;
  out.grad.assign(classes, 0.0);
  const double inv = 1.0 / static_cast<double>(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const double t = c == target ? 1.0 : -1.0;
    const double margin = std::max(0.0, 1.0 - t * scores[c]);
    out.loss += margin * margin;
    out.grad[c] = -2.0 * t * margin * inv;
  }
  out.loss *= inv;
  return out;
}

/// Straight-through estimator for sign(): passes grad_out where |pre| <= window.
inline std::vector<double> ste_backward(std::span<const double> grad_out, std::span<const double> pre_activation,
                                        double window = 1.0) {
  if (grad_out.size() != pre_activation.size()) throw std::invalid_argument("ste_backward: shape mismatch");
  std::vector<double> g(grad_out.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::fabs(pre_activation[i]) <= window ? grad_out[i] : 0.0;
  return g;
}

enum class TrainProjection { ternary, binary, identity };

inline const char* to_string(TrainProjection p) {
  switch (p) {
    case TrainProjection::ternary: return "ternary";
    case TrainProjection::binary: return "binary";
    case TrainProjection::identity: return "identity";
  }
  return "?";
}

inline TrainProjection parse_train_projection(std::string_view s) {
  if (s == "ternary") return TrainProjection::ternary;
  if (s == "binary") return TrainProjection::binary;
  if (s == "identity") return TrainProjection::identity;
  throw std::invalid_argument("unknown training projection '" + std::string(s) + "'");
}

/// Plain SGD with learning_rate * lr_decay^epoch.
struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  double lr_decay = 0.9;
  std::size_t batch_size = 4;
  TrainProjection projection = TrainProjection::ternary;
  std::uint64_t seed = 0;
  double ste_window = 1.0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be >= 0");
    if (!(lr_decay > 0.0)) throw std::invalid_argument("lr decay must be > 0");
    if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    if (!(ste_window > 0.0)) throw std::invalid_argument("STE window must be > 0");
  }

  double rate_at(std::size_t epoch) const { return learning_rate * std::pow(lr_decay, static_cast<double>(epoch)); }
};

// Stream tags so training, shuffling and evaluation never share draws.
inline constexpr std::uint64_t init_stream_tag = 0x1417;
inline constexpr std::uint64_t shuffle_stream_tag = 0x5AFF;
inline constexpr std::uint64_t step_stream_tag = 0x57E9;
inline constexpr std::uint64_t validation_stream_tag = 0x7A11;

/// Uniform in [-s, s] with s = sqrt(6 / (fan_in + fan_out)), clipped; biases zeroed.
inline void initialize(NetworkModel& model, std::uint64_t seed) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    if (!has_weights(layer.kind)) continue;
    const double rf = layer.kind == LayerKind::conv3x3 ? 9.0 : 1.0;
    const double s = std::sqrt(6.0 / (rf * static_cast<double>(layer.in_units + layer.out_units)));
    RandomSource rng(seed, stream_key({init_stream_tag, l}));
    for (double& w : layer.weights.data()) w = clip((2.0 * rng.uniform() - 1.0) * s);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

struct LayerGradient {
  std::vector<double> weights;
  std::vector<double> bias;
  std::vector<double> scale;
};

using Gradients = std::vector<LayerGradient>;

inline Gradients zero_gradients(const NetworkModel& model) {
  Gradients g(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    g[l].weights.assign(layer.weights.size(), 0.0);
    g[l].bias.assign(layer.bias.size(), 0.0);
    g[l].scale.assign(layer.scale.size(), 0.0);
  }
  return g;
}

/// Accumulates parameter gradients of one example into `grads`, given the
/// forward trace (layer inputs plus final output) and d loss / d output.
template <InferenceWeight W>
void backward(const BasicNetwork<W>& net, const std::vector<Tensor>& trace, std::vector<double> grad,
              Gradients& grads, double ste_window = 1.0) {
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& layer = net.layers[li];
    const Tensor& in = trace[li];
    const bool need_input_grad = li > 0;
    std::vector<double> gin;
    switch (layer.kind) {
      case LayerKind::square_hinge_output:
        gin = std::move(grad);
        break;
      case LayerKind::fully_connected: {
        const auto w = layer.weights.data();
        const std::size_t n_in = layer.in_units;
        auto& gw = grads[li].weights;
        for (std::size_t o = 0; o < layer.out_units; ++o) {
          for (std::size_t i = 0; i < n_in; ++i) gw[o * n_in + i] += grad[o] * in[i];
          grads[li].bias[o] += grad[o];
        }
        if (need_input_grad) {
          gin.assign(n_in, 0.0);
          for (std::size_t o = 0; o < layer.out_units; ++o)
            for (std::size_t i = 0; i < n_in; ++i) gin[i] += static_cast<double>(w[o * n_in + i]) * grad[o];
        }
        break;
      }
      case LayerKind::conv3x3: {
        const std::size_t channels = in.extent(0), height = in.extent(1), width = in.extent(2);
        const auto w = layer.weights.data();
        auto& gw = grads[li].weights;
        if (need_input_grad) gin.assign(in.size(), 0.0);
        for (std::size_t o = 0; o < layer.out_units; ++o) {
          for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
              const double g = grad[(o * height + y) * width + x];
              grads[li].bias[o] += g;
              if (g == 0.0) continue;
              for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t ky = 0; ky < 3; ++ky) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - 1;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
                    const std::size_t widx = ((o * channels + c) * 3 + ky) * 3 + kx;
                    const std::size_t xidx = (c * height + static_cast<std::size_t>(iy)) * width + static_cast<std::size_t>(ix);
                    gw[widx] += g * in[xidx];
                    if (need_input_grad) gin[xidx] += static_cast<double>(w[widx]) * g;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::max_pool2: {
        std::vector<std::size_t> argmax;
        max_pool2_forward(in, &argmax);
        gin.assign(in.size(), 0.0);
        for (std::size_t o = 0; o < argmax.size(); ++o) gin[argmax[o]] += grad[o];
        break;
      }
      case LayerKind::sign_activation:
        gin = ste_backward(grad, in.data(), ste_window);
        break;
      case LayerKind::relu_activation:
        gin = std::move(grad);
        for (std::size_t i = 0; i < gin.size(); ++i)
          if (!(in[i] > 0.0)) gin[i] = 0.0;
        break;
      case LayerKind::batch_norm_affine: {
        const std::size_t per_channel = in.size() / in.extent(0);
        gin.assign(in.size(), 0.0);
        for (std::size_t i = 0; i < in.size(); ++i) {
          const std::size_t c = i / per_channel;
          grads[li].scale[c] += grad[i] * in[i];
          grads[li].bias[c] += grad[i];
          gin[i] = layer.scale[c] * grad[i];
        }
        break;
      }
    }
    grad = std::move(gin);
  }
}

struct StepResult {
  double loss = 0.0;  // mean square hinge loss over the batch
};

/// One projected-gradient step on `model` for the examples `batch` of `data`.
inline StepResult projected_sgd_step(NetworkModel& model, const Dataset& data, std::span<const std::size_t> batch,
                                     double learning_rate, const TrainConfig& config, const RandomSource& rng) {
  if (batch.empty()) throw std::invalid_argument("projected_sgd_step: empty batch");
  Gradients grads = zero_gradients(model);
  double loss_sum = 0.0;
  std::vector<Tensor> trace;

  auto run = [&](const auto& net) {
    for (std::size_t idx : batch) {
      const Tensor out = forward_tensor(net, data.example(idx), &trace);
      HingeLoss hl = square_hinge_loss(out.data(), data.label(idx));
      loss_sum += hl.loss;
      backward(net, trace, std::move(hl.grad), grads, config.ste_window);
    }
  };
  switch (config.projection) {
    case TrainProjection::identity: run(model); break;
    case TrainProjection::ternary: run(project(model, ProjectionMode::ternary, rng)); break;
    case TrainProjection::binary: run(project(model, ProjectionMode::binary, rng)); break;
  }

  const double b = static_cast<double>(batch.size());
  const double loss = loss_sum / b;
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite batch loss (" + std::to_string(loss) + ") at learning rate " +
                        std::to_string(learning_rate));
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    auto w = layer.weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = clip(w[i] - learning_rate * (grads[l].weights[i] / b));
    for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= learning_rate * (grads[l].bias[i] / b);
    for (std::size_t i = 0; i < layer.scale.size(); ++i) layer.scale[i] -= learning_rate * (grads[l].scale[i] / b);
  }
  return {loss};
}

/// Error of the single evaluation projection used for model selection.
inline double selection_error(const NetworkModel& model, const Dataset& data, const TrainConfig& config,
                              std::size_t epoch) {
  const RandomSource rng(config.seed, stream_key({validation_stream_tag, epoch}));
  switch (config.projection) {
    case TrainProjection::identity: return error_rate(model, data);
    case TrainProjection::ternary: return error_rate(project(model, ProjectionMode::ternary, rng), data);
    case TrainProjection::binary: return error_rate(project(model, ProjectionMode::binary, rng), data);
  }
  return 1.0;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_error = 0.0;
  bool selected = false;
};

struct TrainResult {
  NetworkModel model;  // snapshot with the lowest validation error
  std::vector<EpochLog> log;
  std::size_t selected_epoch = 0;
  double selected_val_error = 0.0;
};

/// Runs config.epochs epochs (epoch 0 is the initial model) and keeps the
/// snapshot with the lowest validation error, earliest on ties.
inline TrainResult train_and_select(NetworkModel model, const Dataset& train, const Dataset& validation,
                                    const TrainConfig& config) {
  config.validate();
  if (train.empty() || validation.empty()) throw std::invalid_argument("train_and_select: empty split");
  validate(model);
  clip_weights(model);

  TrainResult result;
  auto consider = [&](std::size_t epoch, double loss) {
    const double err = selection_error(model, validation, config, epoch);
    result.log.push_back({epoch, loss, err, false});
    if (epoch == 0 || err < result.selected_val_error) {
      result.selected_val_error = err;
      result.selected_epoch = epoch;
      result.model = model;
    }
  };

  {
    // epoch 0: loss of the initial shadow-weight model
    double loss = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      loss += square_hinge_loss(forward(model, train.example(i)).values, train.label(i)).loss;
    }
    consider(0, loss / static_cast<double>(train.size()));
  }

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RandomSource shuffle_rng(config.seed, stream_key({shuffle_stream_tag, epoch}));
    shuffle_indices(order, shuffle_rng);
    const double rate = config.rate_at(epoch - 1);
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const RandomSource step_rng(config.seed, stream_key({step_stream_tag, epoch, batches}));
      loss += projected_sgd_step(model, train, std::span(order).subspan(start, len), rate, config, step_rng).loss;
      ++batches;
    }
    consider(epoch, loss / static_cast<double>(batches));
  }
  for (auto& row : result.log) row.selected = row.epoch == result.selected_epoch;
  return result;
}

}  // namespace bitstorm

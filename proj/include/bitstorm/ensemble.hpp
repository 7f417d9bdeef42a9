#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "bitstorm/dataset.hpp"
#include "bitstorm/hw/mux_rounder.hpp"
#include "bitstorm/inference.hpp"
#include "bitstorm/projection.hpp"

namespace bitstorm {

/// Worker cap: BITSTORM_THREADS if set to a positive integer, else hardware concurrency.
inline std::size_t default_thread_count() {
  if (const char* env = std::getenv("BITSTORM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
/// handled exactly once; callers write results by index, so output order is fixed.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------

struct ExactSampler {
  friend bool operator==(const ExactSampler&, const ExactSampler&) = default;
};

struct HardwareSampler {
  hw::MuxRounderConfig rounder;
  std::size_t lanes = 1;
  friend bool operator==(const HardwareSampler&, const HardwareSampler&) = default;
};

using Sampler = std::variant<ExactSampler, HardwareSampler>;

inline std::string describe(const Sampler& s) {
  if (const auto* hw = std::get_if<HardwareSampler>(&s)) {
    return std::string("hardware:") + hw::to_string(hw->rounder.select_source) + ":N" +
           std::to_string(hw->rounder.n_inputs) + ":M" + std::to_string(hw->rounder.modulator_width) +
           ":L" + std::to_string(hw->lanes);
  }
  return "exact";
}

/// Stream of member `member` in trial `trial`.
inline RandomSource member_stream(std::uint64_t base_seed, std::uint64_t trial, std::uint64_t member) {
  return RandomSource(base_seed, stream_key({trial, member}));
}

inline DiscreteModelInstance sample_member(const NetworkModel& model, ProjectionMode mode,
                                           const Sampler& sampler, const RandomSource& rng) {
  if (const auto* hw = std::get_if<HardwareSampler>(&sampler)) {
    if (mode != ProjectionMode::ternary) {
      throw std::invalid_argument("the multiplexer rounder produces ternary weights only");
    }
    return hw::hw_project_model(model, hw->rounder, hw->lanes, rng).instance;
  }
  return project(model, mode, rng);
}

/// Elementwise sum of member scores.
inline Scores aggregate(std::span<const Scores> members) {
  if (members.empty()) throw std::invalid_argument("aggregate: no member scores");
  Scores sum = members.front();
  for (std::size_t m = 1; m < members.size(); ++m) {
    if (members[m].size() != sum.size()) throw std::invalid_argument("aggregate: score length mismatch");
    for (std::size_t c = 0; c < sum.size(); ++c) sum.values[c] += members[m].values[c];
  }
  return sum;
}

/// Argmax; ties go to the lowest class index.
inline std::size_t decide(const Scores& scores) {
  if (scores.values.empty()) throw std::invalid_argument("decide: empty scores");
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores.values[c] > scores.values[best]) best = c;
  }
  return best;
}

template <InferenceWeight W>
double error_rate(const BasicNetwork<W>& net, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("error_rate: empty dataset");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < data.size(); ++i) wrong += decide(forward(net, data.example(i))) != data.label(i);
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

inline double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n-1); zero for fewer than two values.
/// Deviations are taken about xs[0] first, so identical values give exactly 0.
inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  std::vector<double> d(xs.begin(), xs.end());
  for (double& x : d) x -= xs.front();
  const double m = mean_of(d);
  double ss = 0.0;
  for (double x : d) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

enum class Aggregation { score_sum, majority_vote };
enum class MemberSampling { nested, independent };

struct EnsembleConfig {
  std::vector<std::size_t> sizes{1, 2, 4, 8, 16, 32};  // ensemble sizes K to report
  ProjectionMode projection = ProjectionMode::ternary;
  Sampler sampler = ExactSampler{};
  std::size_t trials = 20;
  std::uint64_t base_seed = 0;
  Aggregation aggregation = Aggregation::score_sum;
  MemberSampling sampling = MemberSampling::nested;

  void validate() const {
    if (sizes.empty()) throw std::invalid_argument("ensemble sizes must be nonempty");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (sizes[i] == 0) throw std::invalid_argument("ensemble size must be >= 1");
      if (i && sizes[i] <= sizes[i - 1]) throw std::invalid_argument("ensemble sizes must be increasing");
    }
    if (trials == 0) throw std::invalid_argument("trials must be >= 1");
    if (const auto* hw = std::get_if<HardwareSampler>(&sampler)) hw->rounder.validate();
  }
};

struct EnsemblePoint {
  std::size_t k = 0;
  double mean_error = 0.0;
  double std_error = 0.0;
  std::vector<double> trial_errors;  // one per trial

  friend bool operator==(const EnsemblePoint&, const EnsemblePoint&) = default;
};

struct EnsembleRunReport {
  EnsembleConfig config;
  std::vector<EnsemblePoint> points;

  const EnsemblePoint& at(std::size_t k) const {
    for (const auto& p : points)
      if (p.k == k) return p;
    throw std::out_of_range("no ensemble size " + std::to_string(k) + " in report");
  }
};

namespace detail {

// Running per-example class accumulators of one trial.
class EnsembleAccumulator {
 public:
  EnsembleAccumulator(std::size_t examples, std::size_t classes, Aggregation how)
      : classes_(classes), how_(how), sums_(examples * classes, 0.0) {}

  void add(const DiscreteModelInstance& member, std::span<const Tensor> inputs) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Scores s = forward(member, inputs[i]);
      double* row = sums_.data() + i * classes_;
      if (how_ == Aggregation::score_sum) {
        for (std::size_t c = 0; c < classes_; ++c) row[c] += s.values[c];
      } else {
        row[decide(s)] += 1.0;
      }
    }
  }

  double error(const Dataset& data) const {
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      Scores s{std::vector<double>(sums_.begin() + static_cast<std::ptrdiff_t>(i * classes_),
                                   sums_.begin() + static_cast<std::ptrdiff_t>((i + 1) * classes_))};
      wrong += decide(s) != data.label(i);
    }
    return static_cast<double>(wrong) / static_cast<double>(data.size());
  }

 private:
  std::size_t classes_;
  Aggregation how_;
  std::vector<double> sums_;
};

}  // namespace detail

/// Error-rate curve over ensemble sizes, repeated over independent trials.
/// Nested sampling: within a trial, the K-member ensemble is the first K
/// members drawn, so one pass yields every K.
inline EnsembleRunReport ensemble_error_curve(const NetworkModel& model, const Dataset& data,
                                              const EnsembleConfig& config,
                                              std::size_t threads = default_thread_count()) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("ensemble_error_curve: empty dataset");
  validate(model);
  std::vector<Tensor> inputs;
  inputs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) inputs.push_back(data.example(i));

  const std::size_t n_sizes = config.sizes.size();
  std::vector<std::vector<double>> errors(config.trials, std::vector<double>(n_sizes));
  parallel_for(config.trials, threads, [&](std::size_t trial) {
    if (config.sampling == MemberSampling::nested) {
      detail::EnsembleAccumulator acc(data.size(), model.class_count, config.aggregation);
      std::size_t next = 0;
      for (std::size_t m = 0; m < config.sizes.back(); ++m) {
        acc.add(sample_member(model, config.projection, config.sampler, member_stream(config.base_seed, trial, m)),
                inputs);
        if (m + 1 == config.sizes[next]) errors[trial][next++] = acc.error(data);
      }
    } else {
      for (std::size_t s = 0; s < n_sizes; ++s) {
        detail::EnsembleAccumulator acc(data.size(), model.class_count, config.aggregation);
        const std::size_t k = config.sizes[s];
        for (std::size_t m = 0; m < k; ++m) {
          const RandomSource rng(config.base_seed, stream_key({trial, k, m}));
          acc.add(sample_member(model, config.projection, config.sampler, rng), inputs);
        }
        errors[trial][s] = acc.error(data);
      }
    }
  });

  EnsembleRunReport report{config, {}};
  for (std::size_t s = 0; s < n_sizes; ++s) {
    EnsemblePoint p;
    p.k = config.sizes[s];
    for (std::size_t t = 0; t < config.trials; ++t) p.trial_errors.push_back(errors[t][s]);
    p.mean_error = mean_of(p.trial_errors);
    p.std_error = sample_std(p.trial_errors);
    report.points.push_back(std::move(p));
  }
  return report;
}

}  // namespace bitstorm

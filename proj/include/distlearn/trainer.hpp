#pragma once

// Training protocol: every iteration draws M fresh bin distributions, N
// samples from each, extracts features, labels each distribution, and takes
// one ADAM step on the mean squared residual. Every `eval_every` iterations
// the MSE is estimated on `eval_count` fresh distributions and a trailing
// window average is appended to the series.
//
// Random streams are split from one master seed as
//   train/<iteration>/<m>/{dist,points,label}
//   eval/<iteration>/<k>/{dist,points,label}
//   init, probe
// The streams never depend on the feature scheme, so several schemes trained
// on the same seed see exactly the same distributions and samples. train_group
// exploits that by sampling once per step for all of them.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/errors.hpp"
#include "distlearn/features.hpp"
#include "distlearn/nn.hpp"
#include "distlearn/random.hpp"
#include "distlearn/targets.hpp"

namespace distlearn {

struct TrainConfig {
  FeatureScheme scheme = scheme::Quantile{200};
  TestCase test_case = make_case(CaseId::uni_b);
  std::size_t batch_size = 20;  // M
  std::size_t samples = 20000;  // N
  BinGrid grid = BinGrid::cube(1, {-2.0, 2.0}, 100);
  std::size_t iterations = 2000;
  std::size_t eval_every = 100;
  std::size_t eval_count = 200;
  std::size_t window = 20;
  LabelPolicy label_policy = LabelPolicy::exact();
  double learning_rate = 5e-3;
  Activation activation = Activation::relu;
  std::vector<std::size_t> hidden{20, 20};
  /// Cylinder baseline: hidden widths of the inner network and its output width.
  std::vector<std::size_t> inner_hidden{20, 20, 20};
  std::size_t latent = 20;
  std::uint64_t seed = 1;
  /// Replaces the case functional when set (synthetic targets).
  std::function<double(const BinDistribution&)> target{};
};

enum class Preset { desk, paper };

/// Paper-scale or desk-scale settings for a case; the scheme is left at its
/// default.
inline TrainConfig preset_config(Preset preset, const TestCase& tc) {
  TrainConfig c;
  c.test_case = tc;
  c.label_policy = default_policy(tc);
  const std::size_t d = case_dim(tc);
  const Interval support{-2.0, 2.0};
  if (preset == Preset::paper) {
    c.samples = d == 1 ? 200000 : 400000;
    c.grid = BinGrid::cube(d, support, d == 1 ? 400 : 200);
    c.iterations = 10000;
    c.eval_count = 1000;
  } else {
    c.samples = 20000;
    c.grid = BinGrid::cube(d, support, d == 1 ? 100 : 50);
    c.iterations = 2000;
    c.eval_count = 200;
  }
  c.batch_size = 20;
  c.eval_every = 100;
  c.window = 20;
  c.learning_rate = 5e-3;
  return c;
}

struct MsePoint {
  std::size_t iteration = 0;
  double mse = 0.0;
  double mse_windowed = 0.0;
  /// Training loss on a fixed probe batch.
  double probe_loss = 0.0;
};

/// Wall-clock seconds per phase. For grouped runs the sampling and labelling
/// time is shared and reported on every member.
struct PhaseTimes {
  double sampling = 0.0;
  double labels = 0.0;
  double features = 0.0;
  double optimization = 0.0;
  double evaluation = 0.0;
};

struct ExperimentResult {
  TrainConfig config;
  std::vector<MsePoint> series;
  Model model;
  /// MSE of the initialized model on the iteration-0 evaluation set.
  double initial_mse = 0.0;
  std::size_t iterations_completed = 0;
  PhaseTimes times;
  /// Set when training stopped on a non-finite loss.
  std::optional<std::string> failure;
};

/// Trailing window mean: element i averages elements max(0, i-w+1)..i.
inline std::vector<double> window_average(std::span<const double> series, std::size_t w) {
  if (w == 0) throw std::invalid_argument("window_average: window must be >= 1");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t first = i + 1 >= w ? i + 1 - w : 0;
    double sum = 0.0;
    for (std::size_t j = first; j <= i; ++j) sum += series[j];
    out[i] = sum / static_cast<double>(i - first + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// One sampled training or evaluation instance.
struct Instance {
  BinDistribution dist;
  SampleBatch batch;
  double label;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size == 0 || c.samples == 0 || c.eval_every == 0 || c.window == 0)
    throw std::invalid_argument("TrainConfig: M, N, eval_every and window must be >= 1");
  check_case(c.test_case);
  check_policy(c.label_policy);
  if (c.grid.dim() != case_dim(c.test_case))
    throw DimensionMismatch("TrainConfig: grid dimension does not match case " +
                            std::string(case_name(c.test_case.id)));
  check_scheme(c.scheme, c.grid.dim());
  if (c.label_policy.mode == LabelPolicy::Mode::exact && needs_product_statistics(c.test_case) && !c.target)
    throw UnsupportedCase("case " + std::string(case_name(c.test_case.id)) + " has no exact labels");
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
  if (c.hidden.empty()) throw std::invalid_argument("TrainConfig: need at least one hidden layer");
  if (const auto* cyl = std::get_if<scheme::CylinderRaw>(&c.scheme); cyl && cyl->n_keep > c.samples)
    throw std::invalid_argument("TrainConfig: cylinder n_keep exceeds N");
}

/// Scheme with a histogram support bound to the training grid when unset.
inline FeatureScheme bind_scheme(const FeatureScheme& s, const BinGrid& grid) {
  if (const auto* b = std::get_if<scheme::BinHistogram>(&s); b && b->support.empty()) {
    scheme::BinHistogram bound = *b;
    bound.support = grid.support();
    return bound;
  }
  return s;
}

/// Draws the distribution, its samples and its label from one instance stream.
inline Instance draw_instance(const TrainConfig& c, const RandomStream& stream) {
  auto dist_rng = stream.split("dist");
  auto points_rng = stream.split("points");
  auto label_rng = stream.split("label");
  BinDistribution dist = sample_distribution(c.grid, dist_rng);
  SampleBatch batch = sample_points(dist, c.samples, points_rng);
  const double y = c.target ? c.target(dist) : label(c.test_case, dist, c.label_policy, label_rng);
  return {std::move(dist), std::move(batch), y};
}

/// Fresh network for the config's scheme.
inline Model make_model(const TrainConfig& c, RandomStream& rng) {
  const std::size_t d = c.grid.dim();
  if (is_cylinder(c.scheme)) {
    std::vector<std::size_t> inner{d};
    inner.insert(inner.end(), c.inner_hidden.begin(), c.inner_hidden.end());
    inner.push_back(c.latent);
    std::vector<std::size_t> outer{c.latent};
    outer.insert(outer.end(), c.hidden.begin(), c.hidden.end());
    outer.push_back(1);
    auto inner_rng = rng.split("inner");
    auto outer_rng = rng.split("outer");
    return CylinderNet(init({inner, c.activation}, inner_rng), init({outer, c.activation}, outer_rng));
  }
  std::vector<std::size_t> sizes{feature_length(c.scheme, d, c.samples)};
  sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
  sizes.push_back(1);
  return init({sizes, c.activation}, rng);
}

/// Stacks per-instance features into the model's input layout.
inline ModelInputs to_inputs(const Model& model, std::span<const FeatureVector> features, std::size_t dim) {
  if (std::holds_alternative<CylinderNet>(model)) {
    std::vector<Matrix> batches;
    batches.reserve(features.size());
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    for (const auto& f : features)
      batches.emplace_back(Eigen::Map<const RowMajor>(f.values.data(), static_cast<Eigen::Index>(f.values.size() / dim),
                                                      static_cast<Eigen::Index>(dim)));
    return batches;
  }
  const auto cols = static_cast<Eigen::Index>(features.empty() ? 0 : features.front().values.size());
  Matrix x(static_cast<Eigen::Index>(features.size()), cols);
  for (std::size_t m = 0; m < features.size(); ++m)
    x.row(static_cast<Eigen::Index>(m)) = Eigen::Map<const Eigen::RowVectorXd>(features[m].values.data(), cols);
  return x;
}

/// Mean over `count` fresh instances of |label - prediction|^2, where
/// `predict(instance)` returns the scalar prediction. Instance k uses
/// rng.split(k).
template <class Predict>
double evaluate_mse_with(Predict&& predict, const TrainConfig& c, std::size_t count, const RandomStream& rng) {
  if (count == 0) throw std::invalid_argument("evaluate_mse: count must be >= 1");
  double sum = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    const Instance inst = draw_instance(c, rng.split(k));
    const double r = inst.label - predict(inst);
    sum += r * r;
  }
  return sum / static_cast<double>(count);
}

/// MSE of a trained model on `count` fresh distributions; only the
/// sampling-related fields of `c` are used besides the scheme and case.
inline double evaluate_mse(const Model& model, const FeatureScheme& fs, const TestCase& tc, std::size_t count,
                           TrainConfig c, const RandomStream& rng) {
  c.scheme = bind_scheme(fs, c.grid);
  c.test_case = tc;
  validate(c);
  return evaluate_mse_with(
      [&](const Instance& inst) {
        const FeatureVector f = extract(c.scheme, inst.batch);
        return predict(model, to_inputs(model, std::span(&f, 1), inst.batch.dim()))(0, 0);
      },
      c, count, rng);
}

namespace detail {
using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Fields that must agree for configs to share sampled data.
inline void check_shared(const TrainConfig& a, const TrainConfig& b) {
  const bool same = a.test_case.id == b.test_case.id && a.test_case.q == b.test_case.q &&
                    a.batch_size == b.batch_size && a.samples == b.samples && a.grid == b.grid &&
                    a.iterations == b.iterations && a.eval_every == b.eval_every && a.eval_count == b.eval_count &&
                    a.window == b.window && a.label_policy.mode == b.label_policy.mode &&
                    a.label_policy.n_label == b.label_policy.n_label && a.seed == b.seed &&
                    static_cast<bool>(a.target) == static_cast<bool>(b.target);
  if (!same) throw std::invalid_argument("train_group: configs differ in sampling-related fields");
}

struct Member {
  TrainConfig config;
  Model model;
  AdamState adam;
  ModelInputs probe_inputs;
  ExperimentResult* result;
  bool active = true;
};

inline double mean_square(const Matrix& out, const Matrix& labels) {
  return (out - labels).squaredNorm() / static_cast<double>(out.rows());
}
}  // namespace detail

/// Trains one model per config in lockstep on shared sampled data. The
/// configs may differ only in scheme, network shape, activation and learning
/// rate. Each result is identical to what `train` returns for that config
/// alone. A member whose loss turns non-finite stops and records a failure;
/// the others continue.
inline std::vector<ExperimentResult> train_group(std::span<const TrainConfig> configs) {
  if (configs.empty()) return {};
  for (const auto& c : configs) {
    validate(c);
    detail::check_shared(configs.front(), c);
  }
  const TrainConfig& shared = configs.front();
  const std::size_t d = shared.grid.dim();
  const RandomStream master(shared.seed);
  const RandomStream train_rng = master.split("train");
  const RandomStream eval_rng = master.split("eval");
  const RandomStream probe_rng = master.split("probe");

  std::vector<ExperimentResult> results;
  results.reserve(configs.size());
  std::vector<detail::Member> members;
  members.reserve(configs.size());
  for (const auto& raw : configs) {
    TrainConfig c = raw;
    c.scheme = bind_scheme(c.scheme, c.grid);
    auto init_rng = master.split("init");
    Model model = make_model(c, init_rng);
    results.push_back(ExperimentResult{c, {}, model, 0.0, 0, {}, std::nullopt});
    AdamState adam = make_adam(model, c.learning_rate);
    members.push_back({c, std::move(model), std::move(adam), Matrix{}, nullptr, true});
  }
  for (std::size_t i = 0; i < members.size(); ++i) members[i].result = &results[i];

  auto features_for = [&](const detail::Member& m, const std::vector<Instance>& instances) {
    std::vector<FeatureVector> f;
    f.reserve(instances.size());
    for (const auto& inst : instances) f.push_back(extract(m.config.scheme, inst.batch));
    return to_inputs(m.model, f, d);
  };
  auto label_matrix = [](const std::vector<Instance>& instances) {
    Matrix y(static_cast<Eigen::Index>(instances.size()), 1);
    for (std::size_t m = 0; m < instances.size(); ++m) y(static_cast<Eigen::Index>(m), 0) = instances[m].label;
    return y;
  };
  auto draw_all = [&](const RandomStream& base, std::size_t count) {
    std::vector<Instance> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(draw_instance(shared, base.split(k)));
    return out;
  };

  // MSE of every active member on the evaluation set of `iteration`,
  // accumulated instance by instance (same order as evaluate_mse_with).
  auto evaluate = [&](std::size_t iteration) {
    const auto t0 = detail::Clock::now();
    const RandomStream base = eval_rng.split(iteration);
    std::vector<double> sums(members.size(), 0.0);
    for (std::size_t k = 0; k < shared.eval_count; ++k) {
      const Instance inst = draw_instance(shared, base.split(k));
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (!members[i].active) continue;
        const FeatureVector f = extract(members[i].config.scheme, inst.batch);
        const double r = inst.label - predict(members[i].model, to_inputs(members[i].model, std::span(&f, 1), d))(0, 0);
        sums[i] += r * r;
      }
    }
    for (auto& s : sums) s /= static_cast<double>(shared.eval_count);
    const double dt = detail::seconds_since(t0);
    for (auto& m : members) m.result->times.evaluation += dt;
    return sums;
  };

  {
    const auto probe = draw_all(probe_rng, shared.batch_size);
    const Matrix y = label_matrix(probe);
    for (auto& m : members) m.probe_inputs = features_for(m, probe);
    const auto initial = evaluate(0);
    for (std::size_t i = 0; i < members.size(); ++i) members[i].result->initial_mse = initial[i];
    std::vector<std::vector<double>> raw(members.size());

    for (std::size_t it = 1; it <= shared.iterations; ++it) {
      auto t0 = detail::Clock::now();
      const RandomStream step = train_rng.split(it);
      std::vector<Instance> instances;
      instances.reserve(shared.batch_size);
      for (std::size_t m = 0; m < shared.batch_size; ++m) instances.push_back(draw_instance(shared, step.split(m)));
      const Matrix labels = label_matrix(instances);
      const double t_sample = detail::seconds_since(t0);

      bool any_active = false;
      for (auto& m : members) {
        if (!m.active) continue;
        m.result->times.sampling += t_sample;
        t0 = detail::Clock::now();
        const ModelInputs inputs = features_for(m, instances);
        m.result->times.features += detail::seconds_since(t0);
        t0 = detail::Clock::now();
        const LossAndGrad lg = loss_and_grad(m.model, inputs, labels);
        if (!std::isfinite(lg.loss)) {
          m.active = false;
          m.result->failure = "non-finite training loss at iteration " + std::to_string(it);
          continue;
        }
        adam_step(m.adam, m.model, lg.grads);
        m.result->iterations_completed = it;
        m.result->times.optimization += detail::seconds_since(t0);
        any_active = true;
      }
      if (!any_active) break;

      if (it % shared.eval_every == 0) {
        const auto mse = evaluate(it);
        for (std::size_t i = 0; i < members.size(); ++i) {
          auto& m = members[i];
          if (!m.active) continue;
          const double probe_loss = detail::mean_square(predict(m.model, m.probe_inputs), y);
          if (!std::isfinite(mse[i]) || !std::isfinite(probe_loss)) {
            m.active = false;
            m.result->failure = "non-finite evaluation loss at iteration " + std::to_string(it);
            continue;
          }
          raw[i].push_back(mse[i]);
          const std::size_t w = std::min(m.config.window, raw[i].size());
          double sum = 0.0;
          for (std::size_t j = raw[i].size() - w; j < raw[i].size(); ++j) sum += raw[i][j];
          m.result->series.push_back({it, mse[i], sum / static_cast<double>(w), probe_loss});
        }
      }
    }
  }
  for (std::size_t i = 0; i < members.size(); ++i) results[i].model = std::move(members[i].model);
  return results;
}

/// Runs the training protocol for one config. Throws TrainingDiverged on a
/// non-finite loss.
inline ExperimentResult train(const TrainConfig& config) {
  auto results = train_group(std::span(&config, 1));
  if (results.front().failure)
    throw TrainingDiverged(*results.front().failure, results.front().iterations_completed + 1);
  return std::move(results.front());
}

}  // namespace distlearn

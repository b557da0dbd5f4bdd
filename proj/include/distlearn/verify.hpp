#pragma once

// Fast invariant suite behind `distlearn verify`: gradient checks, estimator
// consistency, W1 metric properties and oracle equivalences. Each check
// returns a measured value and the threshold it was held to.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/features.hpp"
#include "distlearn/nn.hpp"
#include "distlearn/random.hpp"
#include "distlearn/targets.hpp"
#include "distlearn/theory.hpp"
#include "distlearn/trainer.hpp"

namespace distlearn {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  bool quick = false;
  /// Test hook: corrupt one analytic gradient entry before checking.
  bool inject_gradient_fault = false;
  std::uint64_t seed = 20240601;
};

namespace detail {
inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, RandomStream& rng, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

/// Glorot-initialized network with random biases, so kinks are spread out.
inline Mlp random_network(std::vector<std::size_t> sizes, Activation act, RandomStream& rng) {
  Mlp m = init({std::move(sizes), act}, rng);
  for (auto& l : m.layers())
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = 0.5 * (2.0 * rng.uniform() - 1.0);
  return m;
}

inline void corrupt(LayerStack& grads) {
  double& g = grads.front().weight(0, 0);
  g = g * 1.01 + 1e-3;
}
}  // namespace detail

/// Largest grad_check relative error over `count` random MLPs with random
/// inputs and labels. ReLU draws are redrawn until every hidden
/// pre-activation is at least 1e-3 away from the kink.
inline double grad_check_sweep(Activation act, std::size_t count, RandomStream& rng, bool inject_fault = false) {
  double worst = 0.0;
  std::size_t done = 0;
  while (done < count) {
    std::vector<std::size_t> sizes{1 + rng.below(6)};
    const std::size_t hidden = 1 + rng.below(3);
    for (std::size_t h = 0; h < hidden; ++h) sizes.push_back(2 + rng.below(19));
    sizes.push_back(1);
    const Mlp m = detail::random_network(sizes, act, rng);
    const auto rows = static_cast<Eigen::Index>(1 + rng.below(5));
    const Matrix x = detail::uniform_matrix(rows, static_cast<Eigen::Index>(sizes.front()), rng, 2.0);
    const Matrix y = detail::uniform_matrix(rows, 1, rng, 1.0);
    if (act == Activation::relu && min_abs_preactivation(m, x) < 1e-3) continue;
    LayerStack grads = loss_and_grad(m, x, y).grads;
    if (inject_fault) detail::corrupt(grads);
    worst = std::max(worst, grad_check(Model(m), x, y, 1e-6, &grads));
    ++done;
  }
  return worst;
}

/// Same for tanh cylinder networks with ragged sample batches.
inline double grad_check_cylinder_sweep(std::size_t count, RandomStream& rng, bool inject_fault = false) {
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t d = 1 + rng.below(2), latent = 2 + rng.below(4);
    const CylinderNet c(detail::random_network({d, 2 + rng.below(6), latent}, Activation::tanh, rng),
                        detail::random_network({latent, 2 + rng.below(6), 1}, Activation::tanh, rng));
    const std::size_t M = 1 + rng.below(4);
    std::vector<Matrix> batches;
    for (std::size_t m = 0; m < M; ++m)
      batches.push_back(
          detail::uniform_matrix(static_cast<Eigen::Index>(1 + rng.below(8)), static_cast<Eigen::Index>(d), rng, 2.0));
    const Matrix y = detail::uniform_matrix(static_cast<Eigen::Index>(M), 1, rng, 1.0);
    LayerStack grads = loss_and_grad(c, batches, y).grads;
    if (inject_fault) detail::corrupt(grads);
    worst = std::max(worst, grad_check(Model(c), batches, y, 1e-6, &grads));
  }
  return worst;
}

namespace detail {
/// Largest |empirical - exact| / tolerance over quantile, moment and
/// superquantile features of random 1-D laws at N samples. Tolerances are
/// 5 standard errors: sqrt(p(1-p)/N)/f(Q) for quantiles (f the density at
/// the quantile), sqrt(Var X^k / N) for moments, and
/// 2/sqrt(N(1-p)) plus the quantile term for superquantiles (the tail
/// variance is at most diam^2/4 = 4).
inline double estimator_consistency(std::size_t laws, std::size_t N, RandomStream& rng) {
  const BinGrid grid = BinGrid::cube(1, {-2.0, 2.0}, 20);
  const std::size_t K = 9;
  double worst = 0.0;
  for (std::size_t l = 0; l < laws; ++l) {
    const BinDistribution dist = sample_distribution(grid, rng);
    const SampleBatch batch = sample_points(dist, N, rng);
    const auto q = empirical_quantiles(batch, K).values;
    const auto s = superquantiles(batch, K).values;
    const auto m = empirical_moments(batch, 4).values;
    const double n = static_cast<double>(N);
    for (std::size_t k = 1; k <= K; ++k) {
      const double p = static_cast<double>(k) / static_cast<double>(K + 1);
      const double exact = exact_quantile_1d(dist, p);
      const double density = dist.probs()[grid.bin_of(0, std::min(exact, 2.0 - 1e-12))] / grid.bin_width(0);
      const double tol_q = 5.0 * std::sqrt(p * (1.0 - p) / n) / std::max(density, 1e-3);
      worst = std::max(worst, std::abs(q[k - 1] - exact) / tol_q);
      const double tol_s = 5.0 * 2.0 / std::sqrt(n * (1.0 - p)) + tol_q;
      worst = std::max(worst, std::abs(s[k] - exact_superquantile_1d(dist, p)) / tol_s);
    }
    for (unsigned k = 1; k <= 4; ++k) {
      const double var = exact_moment_1d(dist, 2 * k) - std::pow(exact_moment_1d(dist, k), 2);
      const double tol = 5.0 * std::sqrt(std::max(var, 1e-300) / n);
      worst = std::max(worst, std::abs(m[k] - exact_moment_1d(dist, k)) / tol);
    }
  }
  return worst;
}

/// Random step density with `pieces` random-width pieces on [-2, 2].
inline StepDensity1D random_step_density(RandomStream& rng, std::size_t pieces) {
  std::vector<double> x{-2.0};
  std::vector<double> cuts(pieces - 1);
  for (double& c : cuts) c = -2.0 + 4.0 * rng.uniform();
  std::sort(cuts.begin(), cuts.end());
  for (double c : cuts)
    if (c > x.back()) x.push_back(c);
  if (x.back() < 2.0) x.push_back(2.0);
  std::vector<double> mass(x.size() - 1);
  double total = 0.0;
  for (double& m : mass) total += (m = rng.exponential());
  std::vector<double> f(mass.size());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    f[i] = mass[i] / total / (x[i + 1] - x[i]);
    acc += f[i] * (x[i + 1] - x[i]);
  }
  f.back() = (1.0 - acc) / (x.back() - x[x.size() - 2]);
  return StepDensity1D(x, f);
}

/// Worst triangle-inequality excess; clears `symmetric` on any asymmetric pair.
inline double w1_triangle_excess(std::size_t triples, RandomStream& rng, bool& symmetric) {
  double worst = -1.0;
  symmetric = true;
  for (std::size_t t = 0; t < triples; ++t) {
    const auto a = random_step_density(rng, 1 + rng.below(12));
    const auto b = random_step_density(rng, 1 + rng.below(12));
    const auto c = random_step_density(rng, 1 + rng.below(12));
    const double ab = w1_1d(a, b), bc = w1_1d(b, c), ac = w1_1d(a, c);
    if (ab != w1_1d(b, a) || w1_1d(a, a) != 0.0) symmetric = false;
    worst = std::max(worst, ac - (ab + bc));
  }
  return worst;
}

/// Exact evaluators on the uniform law of [-2, 2] against closed forms.
inline double uniform_oracle_error() {
  const BinGrid grid = BinGrid::cube(1, {-2.0, 2.0}, 16);
  const BinDistribution u(grid, std::vector<double>(16, 1.0 / 16.0));
  // E[X] = 0, E[X^2] = 4/3, E[X^3] = 0, E[X^4] = 16/5; Q(p) = 4p - 2;
  // E[X | X > Q(p)] = (Q(p) + 2) / 2.
  auto Q = [](double p) { return 4.0 * p - 2.0; };
  auto S = [&](double p) { return (Q(p) + 2.0) / 2.0; };
  const std::vector<std::pair<CaseId, double>> expected{
      {CaseId::uni_a, 0.0 * 16.0 / 5.0 - 4.0 / 3.0},
      {CaseId::uni_b, Q(0.7)},
      {CaseId::uni_c, 0.0},
      {CaseId::uni_d, S(0.3) + Q(0.3)},
  };
  double worst = 0.0;
  for (const auto& [id, value] : expected) worst = std::max(worst, std::abs(evaluate_uni(make_case(id), u) - value));
  worst = std::max(worst, w1_1d(to_step_density(u), quantile_reconstruction(u, 13)));
  return worst;
}

/// Monte Carlo labels against exact labels on bivariate cases with closed
/// forms, in units of a fixed 0.02 tolerance (about 10 MC standard errors).
inline double monte_carlo_label_gap(std::size_t laws, std::size_t n_label, RandomStream& rng) {
  const BinGrid grid = BinGrid::cube(2, {-2.0, 2.0}, 10);
  double worst = 0.0;
  for (CaseId id : {CaseId::bi_a, CaseId::bi_d, CaseId::bi_e, CaseId::bi_f}) {
    const TestCase tc = make_case(id);
    for (std::size_t l = 0; l < laws; ++l) {
      const BinDistribution dist = sample_distribution(grid, rng);
      auto label_rng = rng.split(l);
      const double exact = label(tc, dist, LabelPolicy::exact(), label_rng);
      const double mc = label(tc, dist, LabelPolicy::monte_carlo(n_label), label_rng);
      const double scale = id == CaseId::bi_a ? 0.1 : 0.02;
      worst = std::max(worst, std::abs(mc - exact) / scale);
    }
  }
  return worst;
}

/// Grouped training reproduces separate runs, and reruns reproduce
/// themselves, on a tiny config.
inline bool training_reproducible() {
  TrainConfig c;
  c.test_case = make_case(CaseId::uni_b);
  c.scheme = scheme::Quantile{5};
  c.samples = 200;
  c.grid = BinGrid::cube(1, {-2.0, 2.0}, 8);
  c.batch_size = 5;
  c.iterations = 20;
  c.eval_every = 5;
  c.eval_count = 5;
  c.window = 2;
  TrainConfig m = c;
  m.scheme = scheme::Moment{3};
  const std::vector<TrainConfig> both{c, m};
  const auto group = train_group(both);
  for (std::size_t i = 0; i < both.size(); ++i) {
    const auto a = train(both[i]), b = train(both[i]);
    if (a.series.size() != group[i].series.size() || a.series.size() != b.series.size()) return false;
    for (std::size_t k = 0; k < a.series.size(); ++k)
      if (a.series[k].mse != group[i].series[k].mse || a.series[k].mse != b.series[k].mse) return false;
    if (!(parameters_of(a.model).back().bias == parameters_of(group[i].model).back().bias)) return false;
  }
  return true;
}
}  // namespace detail

/// Runs every check; sizes shrink under `quick`.
inline std::vector<CheckResult> run_verify(const VerifyOptions& opt) {
  std::vector<CheckResult> out;
  const RandomStream master(opt.seed);
  const std::size_t models = opt.quick ? 40 : 100;
  auto timed = [&](CheckResult r, const std::function<void(CheckResult&)>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    body(r);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  };
  timed({"gradient check, relu", false, 0.0, 1e-4, "", 0.0}, [&](CheckResult& r) {
    auto rng = master.split("grad-relu");
    r.value = grad_check_sweep(Activation::relu, models, rng, opt.inject_gradient_fault);
    r.passed = r.value < r.threshold;
    r.detail = std::to_string(models) + " models, max relative error";
  });
  timed({"gradient check, tanh", false, 0.0, 1e-6, "", 0.0}, [&](CheckResult& r) {
    auto rng = master.split("grad-tanh");
    r.value = grad_check_sweep(Activation::tanh, models, rng, opt.inject_gradient_fault);
    r.passed = r.value < r.threshold;
    r.detail = std::to_string(models) + " models, max relative error";
  });
  timed({"gradient check, cylinder", false, 0.0, 1e-6, "", 0.0}, [&](CheckResult& r) {
    auto rng = master.split("grad-cylinder");
    const std::size_t n = models / 4;
    r.value = grad_check_cylinder_sweep(n, rng, opt.inject_gradient_fault);
    r.passed = r.value < r.threshold;
    r.detail = std::to_string(n) + " models, max relative error";
  });
  timed({"estimators at N=1e4", false, 0.0, 1.0, "", 0.0}, [&](CheckResult& r) {
    auto rng = master.split("estimators");
    const std::size_t laws = opt.quick ? 10 : 40;
    r.value = detail::estimator_consistency(laws, 10000, rng);
    r.passed = r.value <= r.threshold;
    r.detail = std::to_string(laws) + " laws, worst error in units of 5 SE";
  });
  timed({"W1 symmetry and triangle", false, 0.0, 1e-10, "", 0.0}, [&](CheckResult& r) {
    auto rng = master.split("w1");
    bool symmetric = true;
    const std::size_t triples = opt.quick ? 300 : 1000;
    r.value = detail::w1_triangle_excess(triples, rng, symmetric);
    r.passed = symmetric && r.value <= r.threshold;
    r.detail = std::to_string(triples) + " triples, worst triangle excess" + (symmetric ? "" : "; ASYMMETRIC");
  });
  timed({"exact evaluators vs closed form", false, 0.0, 1e-12, "", 0.0}, [&](CheckResult& r) {
    r.value = detail::uniform_oracle_error();
    r.passed = r.value <= r.threshold;
    r.detail = "uniform law, cases uni-a..d and reconstruction W1";
  });
  timed({"Monte Carlo vs exact labels", false, 0.0, 1.0, "", 0.0}, [&](CheckResult& r) {
    auto rng = master.split("labels");
    const std::size_t laws = opt.quick ? 2 : 5;
    r.value = detail::monte_carlo_label_gap(laws, 200000, rng);
    r.passed = r.value <= r.threshold;
    r.detail = "cases bi-a, bi-d, bi-e, bi-f; gap in units of the tolerance";
  });
  timed({"training reproducibility", false, 0.0, 0.0, "", 0.0}, [&](CheckResult& r) {
    r.passed = detail::training_reproducible();
    r.value = r.passed ? 0.0 : 1.0;
    r.detail = "reruns and grouped runs are bitwise equal";
  });
  return out;
}

}  // namespace distlearn

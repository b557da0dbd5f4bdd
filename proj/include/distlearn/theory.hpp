#pragma once

// Quantile step-density reconstruction and exact 1-D Wasserstein-1 distances
// between piecewise-constant densities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/targets.hpp"

namespace distlearn {

/// Density that is constant on each interval (x_i, x_{i+1}].
class StepDensity1D {
 public:
  static constexpr double kMassTolerance = 1e-12;

  StepDensity1D(std::vector<double> breakpoints, std::vector<double> density)
      : breakpoints_(std::move(breakpoints)), density_(std::move(density)) {
    if (breakpoints_.size() < 2 || density_.size() + 1 != breakpoints_.size())
      throw std::invalid_argument("StepDensity1D: need n+1 breakpoints for n intervals");
    double mass = 0.0;
    for (std::size_t i = 0; i < density_.size(); ++i) {
      if (!(breakpoints_[i] < breakpoints_[i + 1])) throw std::invalid_argument("StepDensity1D: breakpoints not increasing");
      if (!(density_[i] >= 0.0)) throw std::invalid_argument("StepDensity1D: negative density");
      mass += density_[i] * (breakpoints_[i + 1] - breakpoints_[i]);
    }
    if (std::abs(mass - 1.0) > kMassTolerance) throw std::invalid_argument("StepDensity1D: total mass is not 1");
  }

  [[nodiscard]] const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
  [[nodiscard]] const std::vector<double>& density() const noexcept { return density_; }
  [[nodiscard]] std::size_t intervals() const noexcept { return density_.size(); }
  [[nodiscard]] double lo() const noexcept { return breakpoints_.front(); }
  [[nodiscard]] double hi() const noexcept { return breakpoints_.back(); }

  [[nodiscard]] double mass(std::size_t i) const { return density_[i] * (breakpoints_[i + 1] - breakpoints_[i]); }

  /// Piecewise-linear CDF; 0 left of the support, 1 right of it.
  [[nodiscard]] double cdf(double x) const {
    if (x <= lo()) return 0.0;
    if (x >= hi()) return 1.0;
    const auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), x);
    const auto i = static_cast<std::size_t>(it - breakpoints_.begin()) - 1;
    return cumulative()[i] + density_[i] * (x - breakpoints_[i]);
  }

  /// CDF values at the breakpoints.
  [[nodiscard]] const std::vector<double>& cumulative() const {
    if (cumulative_.empty()) {
      cumulative_.resize(breakpoints_.size());
      cumulative_[0] = 0.0;
      for (std::size_t i = 0; i < density_.size(); ++i) cumulative_[i + 1] = cumulative_[i] + mass(i);
    }
    return cumulative_;
  }

 private:
  std::vector<double> breakpoints_;
  std::vector<double> density_;
  mutable std::vector<double> cumulative_;
};

inline StepDensity1D to_step_density(const BinDistribution& dist) {
  if (dist.dim() != 1) throw DimensionMismatch("to_step_density: distribution is not 1-D");
  const BinGrid& g = dist.grid();
  const std::size_t J = g.lattice()[0];
  std::vector<double> x(J + 1), f(J);
  for (std::size_t j = 0; j <= J; ++j) x[j] = g.edge(0, j);
  for (std::size_t j = 0; j < J; ++j) f[j] = dist.probs()[j] / (x[j + 1] - x[j]);
  return StepDensity1D(std::move(x), std::move(f));
}

/// Step density putting mass 1/(K+1) between consecutive points of
/// lo = Q_0 <= Q_1 <= ... <= Q_K <= Q_{K+1} = hi.
///
/// Tied points collapse into one breakpoint; the mass of a zero-width
/// interval moves into the next interval (into the previous one at the right
/// end of the support).
inline StepDensity1D quantile_step_density(std::span<const double> quantiles, Interval support) {
  const std::size_t K = quantiles.size();
  std::vector<double> points;
  points.reserve(K + 2);
  points.push_back(support.lo);
  for (std::size_t k = 0; k < K; ++k) {
    const double q = quantiles[k];
    if (!support.contains(q)) throw std::domain_error("quantile_step_density: quantile outside the support");
    if (k > 0 && q < quantiles[k - 1]) throw std::invalid_argument("quantile_step_density: quantiles not sorted");
    points.push_back(q);
  }
  points.push_back(support.hi);

  const double unit = 1.0 / static_cast<double>(K + 1);
  std::vector<double> breaks{points.front()};
  std::vector<double> masses;
  double carried = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    carried += unit;
    if (points[i + 1] > breaks.back()) {
      breaks.push_back(points[i + 1]);
      masses.push_back(carried);
      carried = 0.0;
    }
  }
  if (carried > 0.0) masses.back() += carried;

  std::vector<double> density(masses.size());
  for (std::size_t i = 0; i < masses.size(); ++i) density[i] = masses[i] / (breaks[i + 1] - breaks[i]);
  return StepDensity1D(std::move(breaks), std::move(density));
}

/// Exact W1 = integral of |F_a - F_b|. Both CDFs are linear between the
/// merged breakpoints, so each segment integrates in closed form.
inline double w1_1d(const StepDensity1D& a, const StepDensity1D& b) {
  std::vector<double> xs;
  xs.reserve(a.breakpoints().size() + b.breakpoints().size());
  std::merge(a.breakpoints().begin(), a.breakpoints().end(), b.breakpoints().begin(), b.breakpoints().end(),
             std::back_inserter(xs));
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  double total = 0.0;
  double g0 = a.cdf(xs[0]) - b.cdf(xs[0]);
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double w = xs[i + 1] - xs[i];
    const double g1 = a.cdf(xs[i + 1]) - b.cdf(xs[i + 1]);
    if ((g0 >= 0.0) == (g1 >= 0.0) || g0 == 0.0 || g1 == 0.0) {
      total += w * (std::abs(g0) + std::abs(g1)) / 2.0;
    } else {
      // Sign change inside the segment: two triangles.
      total += w * (g0 * g0 + g1 * g1) / (2.0 * (std::abs(g0) + std::abs(g1)));
    }
    g0 = g1;
  }
  return total;
}

/// Reconstruction of a 1-D bin distribution from its K exact quantiles at
/// levels k/(K+1).
inline StepDensity1D quantile_reconstruction(const BinDistribution& dist, std::size_t K) {
  std::vector<double> q(K);
  for (std::size_t k = 1; k <= K; ++k)
    q[k - 1] = exact_quantile_1d(dist, static_cast<double>(k) / static_cast<double>(K + 1));
  return quantile_step_density(q, dist.grid().support()[0]);
}

struct ConvergenceRow {
  std::size_t K = 0;
  double max_w1 = 0.0;
  double mean_w1 = 0.0;
  /// sqrt(diam * max_w1), which bounds W2 on a compact support.
  double w2_bound = 0.0;
};

/// For each K, the worst and mean W1 between sampled distributions and their
/// quantile reconstructions. The same distributions are used for every K.
template <class Stream>
std::vector<ConvergenceRow> convergence_study(std::size_t n_dists, std::span<const std::size_t> K_list,
                                              const BinGrid& grid, Stream& rng) {
  if (grid.dim() != 1) throw DimensionMismatch("convergence_study: needs a 1-D grid");
  if (n_dists == 0) throw std::invalid_argument("convergence_study: n_dists must be >= 1");
  if (!std::is_sorted(K_list.begin(), K_list.end()))
    throw std::invalid_argument("convergence_study: K list must be increasing");
  std::vector<BinDistribution> dists;
  std::vector<StepDensity1D> exact;
  for (std::size_t i = 0; i < n_dists; ++i) {
    auto s = rng.split(i);
    dists.push_back(sample_distribution(grid, s));
    exact.push_back(to_step_density(dists.back()));
  }
  const double diam = grid.support()[0].width();
  std::vector<ConvergenceRow> rows;
  for (std::size_t K : K_list) {
    ConvergenceRow row{K, 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n_dists; ++i) {
      const double w = w1_1d(exact[i], quantile_reconstruction(dists[i], K));
      row.max_w1 = std::max(row.max_w1, w);
      row.mean_w1 += w;
    }
    row.mean_w1 /= static_cast<double>(n_dists);
    row.w2_bound = std::sqrt(diam * row.max_w1);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace distlearn

#pragma once

// Ground-truth functionals V(mu) for the univariate cases A-D and the
// bivariate cases A-F, evaluated either exactly on a bin distribution or by
// Monte Carlo from a sample batch.
//
// Every case formula is written once (`evaluate_case`) against a "view" of the
// measure that answers marginal moment / quantile / conditional-mean queries.
// ExactView answers them in closed form; EmpiricalView answers them with the
// same estimators the feature extractors use.

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/errors.hpp"
#include "distlearn/features.hpp"
#include "distlearn/random.hpp"

namespace distlearn {

// ---------------------------------------------------------------------------
// Exact 1-D and d-D quantities of a bin distribution

/// E[prod_i X_i^{k_i}] integrated cell by cell.
inline double exact_moment(const BinDistribution& dist, const MultiIndex& k) {
  const BinGrid& grid = dist.grid();
  const std::size_t d = grid.dim();
  if (k.size() != d) throw DimensionMismatch("exact_moment: multi-index length differs from the dimension");
  // Per-axis, per-bin average of x^k over the bin: (b^{k+1} - a^{k+1}) / ((k+1)(b-a)).
  std::vector<std::vector<double>> factor(d);
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t J = grid.lattice()[i];
    factor[i].resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      const double a = grid.edge(i, j);
      const double b = grid.edge(i, j + 1);
      factor[i][j] = (ipow(b, k[i] + 1) - ipow(a, k[i] + 1)) / (static_cast<double>(k[i] + 1) * (b - a));
    }
  }
  double sum = 0.0;
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
    double term = dist.probs()[cell];
    for (std::size_t i = 0; i < d; ++i) term *= factor[i][grid.axis_index(cell, i)];
    sum += term;
  }
  return sum;
}

inline double exact_moment_1d(const BinDistribution& dist, unsigned k) { return exact_moment(dist, MultiIndex{k}); }

/// Q(p) = inf{x : p <= F(x)}, inverting the piecewise-linear CDF. Zero-mass
/// bins are skipped, so a flat stretch of F maps to its left end.
inline double exact_quantile_1d(const BinDistribution& dist, double p) {
  if (dist.dim() != 1) throw DimensionMismatch("exact_quantile_1d: distribution is not 1-D");
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("exact_quantile_1d: level outside [0, 1]");
  const BinGrid& grid = dist.grid();
  const Interval s = grid.support()[0];
  if (p == 0.0) return s.lo;
  const auto& probs = dist.probs();
  double below = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    last_positive = j;
    if (below + probs[j] >= p) {
      const double frac = std::clamp((p - below) / probs[j], 0.0, 1.0);
      return grid.edge(0, j) + frac * grid.bin_width(0);
    }
    below += probs[j];
  }
  // Accumulated mass fell short of p by roundoff: F reaches 1 at the right
  // edge of the last bin with mass.
  return grid.edge(0, last_positive + 1);
}

namespace detail {
/// Integral of x * density over (t, hi] for a 1-D bin distribution.
inline double upper_first_moment(const BinDistribution& dist, double t) {
  const BinGrid& grid = dist.grid();
  const Interval s = grid.support()[0];
  const auto& probs = dist.probs();
  if (t <= s.lo) t = s.lo;
  if (t >= s.hi) return 0.0;
  const std::size_t j0 = grid.bin_of(0, t);
  const double b = grid.edge(0, j0 + 1);
  double sum = probs[j0] * (b - t) / grid.bin_width(0) * (b + t) / 2.0;
  for (std::size_t j = j0 + 1; j < probs.size(); ++j) sum += probs[j] * (grid.edge(0, j) + grid.edge(0, j + 1)) / 2.0;
  return sum;
}
}  // namespace detail

/// E[X | X > Q(p)] = (1/(1-p)) * integral of x*density above Q(p).
inline double exact_superquantile_1d(const BinDistribution& dist, double p) {
  if (dist.dim() != 1) throw DimensionMismatch("exact_superquantile_1d: distribution is not 1-D");
  if (!(p >= 0.0 && p < 1.0)) throw std::domain_error("exact_superquantile_1d: level outside [0, 1)");
  const double tail = 1.0 - p;
  if (!(tail > 0.0)) throw std::domain_error("exact_superquantile_1d: tail mass underflows");
  return detail::upper_first_moment(dist, exact_quantile_1d(dist, p)) / tail;
}

/// E[X | X > t] for an arbitrary threshold t.
inline double exact_tail_mean_1d(const BinDistribution& dist, double t) {
  if (dist.dim() != 1) throw DimensionMismatch("exact_tail_mean_1d: distribution is not 1-D");
  const double tail = 1.0 - exact_cdf_1d(dist, t);
  if (!(tail > 0.0)) throw std::domain_error("exact_tail_mean_1d: no mass above the threshold");
  return detail::upper_first_moment(dist, t) / tail;
}

// ---------------------------------------------------------------------------
// Views

/// Closed-form answers on the marginals of a bin distribution.
class ExactView {
 public:
  explicit ExactView(const BinDistribution& dist) {
    marginals_.reserve(dist.dim());
    for (std::size_t i = 0; i < dist.dim(); ++i) marginals_.push_back(marginal(dist, i));
  }
  [[nodiscard]] std::size_t dim() const noexcept { return marginals_.size(); }
  [[nodiscard]] double moment(std::size_t axis, unsigned k) const { return exact_moment_1d(marginals_.at(axis), k); }
  [[nodiscard]] double quantile(std::size_t axis, double p) const { return exact_quantile_1d(marginals_.at(axis), p); }
  [[nodiscard]] double superquantile(std::size_t axis, double p) const {
    return exact_superquantile_1d(marginals_.at(axis), p);
  }
  [[nodiscard]] double tail_mean_above(std::size_t axis, double t) const {
    return exact_tail_mean_1d(marginals_.at(axis), t);
  }
  [[noreturn]] double product_quantile(unsigned, unsigned, double) const {
    throw UnsupportedCase("no closed form for quantiles of X1^j X2^m; use a Monte Carlo label policy");
  }
  [[noreturn]] double product_superquantile(unsigned, unsigned, double) const {
    throw UnsupportedCase("no closed form for superquantiles of X1^j X2^m; use a Monte Carlo label policy");
  }

 private:
  std::vector<BinDistribution> marginals_;
};

/// Nearest rank ceil(p*n) of a real level p; the relative slack keeps
/// products like 0.7 * 400000 = 280000.00000000006 from rounding up.
inline std::size_t nearest_rank_real(double p, std::size_t n) {
  const double r = std::ceil(p * static_cast<double>(n) * (1.0 - 1e-12));
  return std::clamp<std::size_t>(r < 1.0 ? 1 : static_cast<std::size_t>(r), 1, n);
}

/// Answers from a sample batch with the feature estimators' conventions:
/// nearest-rank quantiles and conditional means over values >= the quantile.
class EmpiricalView {
 public:
  explicit EmpiricalView(const SampleBatch& batch) : batch_(batch) {}

  [[nodiscard]] std::size_t dim() const noexcept { return batch_.dim(); }

  [[nodiscard]] double moment(std::size_t axis, unsigned k) const {
    double sum = 0.0;
    for (std::size_t n = 0; n < batch_.size(); ++n) sum += ipow(batch_(n, axis), k);
    return sum / static_cast<double>(batch_.size());
  }
  double quantile(std::size_t axis, double p) { return at_level(sorted(axis_index(axis, 1)), p); }
  double superquantile(std::size_t axis, double p) {
    OrderStatistics& s = sorted(axis_index(axis, 1));
    return s.tail_mean_at_least(at_level(s, p));
  }
  double tail_mean_above(std::size_t axis, double t) {
    const double m = sorted(axis_index(axis, 1)).tail_mean_above(t);
    if (std::isnan(m)) throw std::domain_error("EmpiricalView: no samples above the threshold");
    return m;
  }
  double product_quantile(unsigned j, unsigned m, double p) { return at_level(sorted(product_index(j, m)), p); }
  double product_superquantile(unsigned j, unsigned m, double p) {
    OrderStatistics& s = sorted(product_index(j, m));
    return s.tail_mean_at_least(at_level(s, p));
  }

 private:
  static double at_level(OrderStatistics& s, double p) { return s.at_rank(nearest_rank_real(p, s.size())); }

  [[nodiscard]] MultiIndex axis_index(std::size_t axis, unsigned k) const {
    if (axis >= batch_.dim()) throw DimensionMismatch("EmpiricalView: axis out of range");
    MultiIndex idx(batch_.dim(), 0);
    idx[axis] = k;
    return idx;
  }
  [[nodiscard]] MultiIndex product_index(unsigned j, unsigned m) const {
    if (batch_.dim() != 2) throw DimensionMismatch("EmpiricalView: product variables need a 2-D batch");
    return MultiIndex{j, m};
  }
  OrderStatistics& sorted(const MultiIndex& k) {
    auto it = cache_.find(k);
    if (it == cache_.end()) it = cache_.emplace(k, OrderStatistics(monomial_values(batch_, k))).first;
    return it->second;
  }

  const SampleBatch& batch_;
  std::map<MultiIndex, OrderStatistics> cache_;
};

// ---------------------------------------------------------------------------
// Test cases

enum class CaseId { uni_a, uni_b, uni_c, uni_d, bi_a, bi_b, bi_c, bi_d, bi_e, bi_f };

struct TestCase {
  CaseId id = CaseId::uni_a;
  /// Quantile levels; only bivariate D uses the second entry.
  std::array<double, 2> q{0.5, 0.5};
};

/// A case with its default levels.
inline TestCase make_case(CaseId id) {
  switch (id) {
    case CaseId::uni_a: return {id, {0.5, 0.5}};
    case CaseId::uni_b: return {id, {0.7, 0.7}};
    case CaseId::uni_c: return {id, {0.9, 0.9}};
    case CaseId::uni_d: return {id, {0.3, 0.3}};
    case CaseId::bi_a: return {id, {0.5, 0.5}};
    case CaseId::bi_b: return {id, {0.7, 0.7}};
    case CaseId::bi_c: return {id, {0.9, 0.9}};
    case CaseId::bi_d: return {id, {0.6, 0.3}};
    case CaseId::bi_e: return {id, {0.2, 0.2}};
    case CaseId::bi_f: return {id, {0.8, 0.8}};
  }
  throw std::invalid_argument("make_case: unknown case");
}

inline constexpr std::array<std::pair<CaseId, std::string_view>, 10> kCaseNames{{
    {CaseId::uni_a, "uni-a"}, {CaseId::uni_b, "uni-b"}, {CaseId::uni_c, "uni-c"}, {CaseId::uni_d, "uni-d"},
    {CaseId::bi_a, "bi-a"},   {CaseId::bi_b, "bi-b"},   {CaseId::bi_c, "bi-c"},   {CaseId::bi_d, "bi-d"},
    {CaseId::bi_e, "bi-e"},   {CaseId::bi_f, "bi-f"},
}};

inline std::string_view case_name(CaseId id) {
  for (auto [c, name] : kCaseNames)
    if (c == id) return name;
  return "?";
}

inline TestCase parse_case(std::string_view name) {
  for (auto [c, n] : kCaseNames)
    if (n == name) return make_case(c);
  throw ParseError("unknown test case '" + std::string(name) + "'");
}

inline std::size_t case_dim(const TestCase& tc) {
  return static_cast<int>(tc.id) <= static_cast<int>(CaseId::uni_d) ? 1 : 2;
}

/// Whether the case needs statistics of X1^j X2^m (no closed form here).
inline bool needs_product_statistics(const TestCase& tc) { return tc.id == CaseId::bi_b || tc.id == CaseId::bi_c; }

inline void check_case(const TestCase& tc) {
  for (double q : tc.q)
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("test case level must lie in (0, 1)");
}

/// V(mu) written against a measure view (ExactView or EmpiricalView).
template <class View>
double evaluate_case(const TestCase& tc, View& mu) {
  if (mu.dim() != case_dim(tc))
    throw DimensionMismatch("case " + std::string(case_name(tc.id)) + " needs " + std::to_string(case_dim(tc)) +
                            "-D distributions");
  const double q = tc.q[0];
  auto moment_case = [&](std::size_t i) {
    return mu.moment(i, 1) * mu.moment(i, 4) - mu.moment(i, 2);
  };
  auto quantile_superquantile = [&](std::size_t i, double level) {
    return mu.superquantile(i, level) + mu.quantile(i, level);
  };
  switch (tc.id) {
    case CaseId::uni_a: return moment_case(0);
    case CaseId::uni_b: return mu.quantile(0, q);
    case CaseId::uni_c: return mu.moment(0, 3) * (1.0 + mu.quantile(0, q));
    case CaseId::uni_d: return quantile_superquantile(0, q);
    case CaseId::bi_a: return moment_case(0) + moment_case(1);
    case CaseId::bi_b:
      return quantile_superquantile(0, q) + quantile_superquantile(1, q) + mu.product_superquantile(1, 1, q);
    case CaseId::bi_c:
      return (1.0 + mu.quantile(0, q)) * mu.moment(0, 3) + mu.moment(1, 3) + mu.product_quantile(2, 1, q) +
             mu.product_quantile(1, 2, q);
    case CaseId::bi_d: return quantile_superquantile(0, tc.q[0]) + quantile_superquantile(1, tc.q[1]);
    case CaseId::bi_e: {
      const double threshold = mu.quantile(0, q);
      return mu.tail_mean_above(1, threshold) + threshold;
    }
    case CaseId::bi_f: return mu.quantile(0, q) + mu.quantile(1, q);
  }
  throw std::invalid_argument("evaluate_case: unknown case");
}

/// Closed-form V(mu) for a univariate case.
inline double evaluate_uni(const TestCase& tc, const BinDistribution& dist) {
  if (case_dim(tc) != 1) throw DimensionMismatch("evaluate_uni: bivariate case");
  ExactView view(dist);
  return evaluate_case(tc, view);
}

// ---------------------------------------------------------------------------
// Label policy

struct LabelPolicy {
  enum class Mode { exact, monte_carlo };
  Mode mode = Mode::exact;
  std::size_t n_label = 400000;

  static constexpr std::size_t kMinMonteCarloSamples = 10000;

  static LabelPolicy exact() { return {Mode::exact, 400000}; }
  static LabelPolicy monte_carlo(std::size_t n) { return {Mode::monte_carlo, n}; }
};

/// Exact wherever a closed form exists, Monte Carlo with 400000 samples for
/// the cases that involve product variables.
inline LabelPolicy default_policy(const TestCase& tc) {
  return needs_product_statistics(tc) ? LabelPolicy::monte_carlo(400000) : LabelPolicy::exact();
}

inline void check_policy(const LabelPolicy& policy) {
  if (policy.mode == LabelPolicy::Mode::monte_carlo && policy.n_label < LabelPolicy::kMinMonteCarloSamples)
    throw std::invalid_argument("Monte Carlo label policy needs at least 10000 samples");
}

/// V(mu) for a bivariate case. Exact mode fails with UnsupportedCase for B
/// and C; Monte Carlo mode samples `policy.n_label` points from `rng`.
template <class Stream>
double evaluate_bi(const TestCase& tc, const BinDistribution& dist, const LabelPolicy& policy, Stream& rng) {
  if (case_dim(tc) != 2) throw DimensionMismatch("evaluate_bi: univariate case");
  check_policy(policy);
  if (policy.mode == LabelPolicy::Mode::exact) {
    ExactView view(dist);
    return evaluate_case(tc, view);
  }
  const SampleBatch batch = sample_points(dist, policy.n_label, rng);
  EmpiricalView view(batch);
  return evaluate_case(tc, view);
}

/// Training label: dispatch on dimension and policy. Monte Carlo draws fresh
/// samples from `rng`, which callers dedicate to labelling.
template <class Stream>
double label(const TestCase& tc, const BinDistribution& dist, const LabelPolicy& policy, Stream& rng) {
  check_policy(policy);
  if (policy.mode == LabelPolicy::Mode::exact) {
    ExactView view(dist);
    return evaluate_case(tc, view);
  }
  const SampleBatch batch = sample_points(dist, policy.n_label, rng);
  EmpiricalView view(batch);
  return evaluate_case(tc, view);
}

}  // namespace distlearn

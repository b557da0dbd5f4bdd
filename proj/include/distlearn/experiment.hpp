#pragma once

// Experiment specs and artifacts for the command-line runner.
//
// A spec is flat `key = value` text. Keys before the first section set the
// run; each `[scheme <text>]` section adds one scheme to compare and may
// override its network keys. `#` starts a comment.
//
//   name = uni-comparison
//   case = uni-b
//   [scheme quantile:K=200]
//   [scheme moment:K=10]
//   learning_rate = 0.001

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "distlearn/distgen.hpp"
#include "distlearn/errors.hpp"
#include "distlearn/features.hpp"
#include "distlearn/nn.hpp"
#include "distlearn/random.hpp"
#include "distlearn/targets.hpp"
#include "distlearn/theory.hpp"
#include "distlearn/trainer.hpp"

namespace distlearn {

// ---------------------------------------------------------------------------
// Generic key = value parsing

struct SpecEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
  std::size_t key_column = 0;
  std::size_t value_column = 0;
};

struct SpecSection {
  std::string header;  // text after "scheme "
  std::size_t line = 0;
  std::size_t column = 0;
  std::vector<SpecEntry> entries;
};

struct SpecText {
  std::vector<SpecEntry> globals;
  std::vector<SpecSection> sections;
};

namespace detail {
inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

inline std::string_view trim(std::string_view s, std::size_t* offset = nullptr) {
  std::size_t a = 0, b = s.size();
  while (a < b && is_space(s[a])) ++a;
  while (b > a && is_space(s[b - 1])) --b;
  if (offset) *offset += a;
  return s.substr(a, b - a);
}
}  // namespace detail

/// Splits spec text into entries and sections; columns are 1-based.
inline SpecText parse_spec_text(std::string_view text) {
  SpecText out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::size_t offset = 0;
    const std::string_view body = detail::trim(line, &offset);
    if (body.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (body.front() == '[') {
      if (body.back() != ']') throw ParseError("section header is missing ']'", line_no, offset + body.size() + 1);
      std::size_t inner_off = offset + 1;
      const std::string_view inner = detail::trim(body.substr(1, body.size() - 2), &inner_off);
      constexpr std::string_view kw = "scheme";
      if (inner.substr(0, kw.size()) != kw || (inner.size() > kw.size() && !detail::is_space(inner[kw.size()])))
        throw ParseError("unknown section; expected [scheme <name>]", line_no, inner_off + 1);
      std::size_t name_off = inner_off + kw.size();
      const std::string_view name = detail::trim(inner.substr(kw.size()), &name_off);
      if (name.empty()) throw ParseError("section [scheme] needs a scheme name", line_no, name_off + 1);
      out.sections.push_back({std::string(name), line_no, name_off + 1, {}});
    } else {
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no, offset + 1);
      std::size_t key_off = offset;
      const std::string_view key = detail::trim(body.substr(0, eq), &key_off);
      if (key.empty()) throw ParseError("missing key before '='", line_no, offset + eq + 1);
      std::size_t value_off = offset + eq + 1;
      const std::string_view value = detail::trim(body.substr(eq + 1), &value_off);
      if (value.empty()) throw ParseError("missing value after '='", line_no, offset + eq + 2);
      SpecEntry e{std::string(key), std::string(value), line_no, key_off + 1, value_off + 1};
      (out.sections.empty() ? out.globals : out.sections.back().entries).push_back(std::move(e));
    }
    if (end == text.size()) break;
  }
  return out;
}

namespace detail {
inline ParseError value_error(const SpecEntry& e, const std::string& what) {
  return ParseError("bad value for '" + e.key + "': " + what, e.line, e.value_column);
}

inline std::uint64_t to_u64(const SpecEntry& e) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (ec != std::errc{} || p != e.value.data() + e.value.size()) throw value_error(e, "expected an unsigned integer");
  return v;
}

inline double to_double(const SpecEntry& e, std::string_view text) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size() || !std::isfinite(v))
    throw value_error(e, "expected a number, got '" + std::string(text) + "'");
  return v;
}

inline std::vector<std::string_view> split_list(std::string_view s, std::string_view seps) {
  std::vector<std::string_view> out;
  std::size_t a = 0;
  for (std::size_t i = 0; i <= s.size(); ++i)
    if (i == s.size() || seps.find(s[i]) != std::string_view::npos) {
      out.push_back(trim(s.substr(a, i - a)));
      a = i + 1;
    }
  return out;
}

inline std::vector<std::size_t> to_sizes(const SpecEntry& e, std::string_view seps = ",x") {
  std::vector<std::size_t> out;
  for (auto part : split_list(e.value, seps)) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc{} || p != part.data() + part.size())
      throw value_error(e, "expected a list of unsigned integers");
    out.push_back(v);
  }
  return out;
}

inline std::vector<double> to_doubles(const SpecEntry& e) {
  std::vector<double> out;
  for (auto part : split_list(e.value, ",")) out.push_back(to_double(e, part));
  return out;
}

inline bool to_bool(const SpecEntry& e) {
  if (e.value == "true" || e.value == "yes" || e.value == "1") return true;
  if (e.value == "false" || e.value == "no" || e.value == "0") return false;
  throw value_error(e, "expected true or false");
}

inline Preset to_preset(std::string_view s) {
  if (s == "desk") return Preset::desk;
  if (s == "paper") return Preset::paper;
  throw ParseError("unknown preset '" + std::string(s) + "' (expected desk or paper)");
}
}  // namespace detail

inline std::string_view preset_name(Preset p) { return p == Preset::paper ? "paper" : "desk"; }
inline Preset parse_preset(std::string_view s) { return detail::to_preset(s); }

// ---------------------------------------------------------------------------
// Training experiments

/// Network settings that a scheme section may override.
struct NetworkOverrides {
  std::optional<double> learning_rate;
  std::optional<Activation> activation;
  std::optional<std::vector<std::size_t>> hidden;
  std::optional<std::vector<std::size_t>> inner_hidden;
  std::optional<std::size_t> latent;
};

struct SchemeEntry {
  FeatureScheme scheme;
  NetworkOverrides overrides;
};

/// A parsed spec before preset and command-line resolution. Keys that the
/// spec leaves unset stay empty and take the preset's values.
struct ExperimentSpec {
  std::string name;
  TestCase test_case = make_case(CaseId::uni_b);
  std::optional<Preset> preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch_size, samples, iterations, eval_every, eval_count, window;
  std::optional<std::vector<std::size_t>> bins;
  std::optional<Interval> support;
  std::optional<LabelPolicy> label_policy;
  NetworkOverrides network;
  std::vector<SchemeEntry> schemes;
  std::optional<std::string> out;
  bool svg = true;
};

namespace detail {
inline bool apply_network_key(NetworkOverrides& n, const SpecEntry& e) {
  if (e.key == "learning_rate") {
    n.learning_rate = to_double(e, e.value);
    if (!(*n.learning_rate > 0.0)) throw value_error(e, "must be positive");
  } else if (e.key == "activation") {
    try {
      n.activation = parse_activation(e.value);
    } catch (const ParseError& err) {
      throw value_error(e, err.what());
    }
  } else if (e.key == "hidden") {
    n.hidden = to_sizes(e, ",");
  } else if (e.key == "inner_hidden") {
    n.inner_hidden = to_sizes(e, ",");
  } else if (e.key == "latent") {
    n.latent = static_cast<std::size_t>(to_u64(e));
  } else {
    return false;
  }
  return true;
}

inline LabelPolicy to_policy(const SpecEntry& e) {
  if (e.value == "exact") return LabelPolicy::exact();
  if (e.value == "mc") return LabelPolicy::monte_carlo(400000);
  if (e.value.rfind("mc:", 0) == 0) {
    SpecEntry n = e;
    n.value = e.value.substr(3);
    return LabelPolicy::monte_carlo(static_cast<std::size_t>(to_u64(n)));
  }
  throw value_error(e, "expected exact, mc or mc:<samples>");
}
}  // namespace detail

/// Parses a training spec. `default_name` is used when the spec has no
/// `name` key.
inline ExperimentSpec parse_experiment_spec(std::string_view text, const std::string& default_name = "run") {
  const SpecText st = parse_spec_text(text);
  ExperimentSpec spec;
  spec.name = default_name;
  std::set<std::string> seen;
  std::optional<SpecEntry> q_entry;
  for (const SpecEntry& e : st.globals) {
    if (!seen.insert(e.key).second) throw ParseError("duplicate key '" + e.key + "'", e.line, e.key_column);
    auto size_of = [&](std::optional<std::size_t>& slot) { slot = static_cast<std::size_t>(detail::to_u64(e)); };
    if (e.key == "name") {
      if (e.value.find_first_of("/\\") != std::string::npos) throw detail::value_error(e, "must not contain '/'");
      spec.name = e.value;
    } else if (e.key == "case") {
      try {
        spec.test_case = parse_case(e.value);
      } catch (const ParseError& err) {
        throw detail::value_error(e, err.what());
      }
    } else if (e.key == "q") {
      q_entry = e;
    } else if (e.key == "preset") {
      try {
        spec.preset = detail::to_preset(e.value);
      } catch (const ParseError& err) {
        throw detail::value_error(e, err.what());
      }
    } else if (e.key == "seed") {
      spec.seed = detail::to_u64(e);
    } else if (e.key == "batch_size") {
      size_of(spec.batch_size);
    } else if (e.key == "samples") {
      size_of(spec.samples);
    } else if (e.key == "iterations") {
      size_of(spec.iterations);
    } else if (e.key == "eval_every") {
      size_of(spec.eval_every);
    } else if (e.key == "eval_count") {
      size_of(spec.eval_count);
    } else if (e.key == "window") {
      size_of(spec.window);
    } else if (e.key == "bins") {
      spec.bins = detail::to_sizes(e);
    } else if (e.key == "support") {
      const auto v = detail::to_doubles(e);
      if (v.size() != 2 || !(v[0] < v[1])) throw detail::value_error(e, "expected lo,hi with lo < hi");
      spec.support = Interval{v[0], v[1]};
    } else if (e.key == "label") {
      spec.label_policy = detail::to_policy(e);
    } else if (e.key == "out") {
      spec.out = e.value;
    } else if (e.key == "svg") {
      spec.svg = detail::to_bool(e);
    } else if (!detail::apply_network_key(spec.network, e)) {
      throw ParseError("unknown key '" + e.key + "'", e.line, e.key_column);
    }
  }
  // Levels apply after the case so that their order in the file is free.
  if (q_entry) {
    const auto v = detail::to_doubles(*q_entry);
    if (v.empty() || v.size() > 2) throw detail::value_error(*q_entry, "expected one or two levels");
    spec.test_case.q = {v[0], v.size() == 2 ? v[1] : v[0]};
    try {
      check_case(spec.test_case);
    } catch (const std::invalid_argument& err) {
      throw detail::value_error(*q_entry, err.what());
    }
  }
  std::set<std::string> names;
  for (const SpecSection& s : st.sections) {
    SchemeEntry entry{scheme::Moment{1}, {}};
    try {
      entry.scheme = parse_scheme(s.header);
    } catch (const ParseError& err) {
      throw ParseError(std::string("bad scheme: ") + err.what(), s.line, s.column);
    }
    if (!names.insert(to_string(entry.scheme)).second)
      throw ParseError("duplicate scheme '" + to_string(entry.scheme) + "'", s.line, s.column);
    std::set<std::string> keys;
    for (const SpecEntry& e : s.entries) {
      if (!keys.insert(e.key).second) throw ParseError("duplicate key '" + e.key + "'", e.line, e.key_column);
      if (!detail::apply_network_key(entry.overrides, e))
        throw ParseError("key '" + e.key + "' is not allowed in a scheme section", e.line, e.key_column);
    }
    spec.schemes.push_back(std::move(entry));
  }
  if (spec.schemes.empty()) throw ParseError("spec lists no [scheme ...] sections");
  return spec;
}

struct ResolveOptions {
  std::optional<Preset> preset;
  std::optional<std::uint64_t> seed;
};

/// The effective preset: command line, then spec, then desk.
inline Preset effective_preset(const ExperimentSpec& spec, const ResolveOptions& opt) {
  return opt.preset ? *opt.preset : spec.preset.value_or(Preset::desk);
}

/// One TrainConfig per scheme: preset values, then spec keys, then the
/// scheme section's overrides. The command-line seed wins over the spec's.
inline std::vector<TrainConfig> resolve(const ExperimentSpec& spec, const ResolveOptions& opt) {
  TrainConfig base = preset_config(effective_preset(spec, opt), spec.test_case);
  const std::size_t d = case_dim(spec.test_case);
  if (spec.bins || spec.support) {
    std::vector<std::size_t> J = spec.bins.value_or(base.grid.lattice());
    if (J.size() == 1 && d > 1) J.assign(d, J.front());
    if (J.size() != d)
      throw DimensionMismatch("bins: " + std::to_string(J.size()) + " axes given for a " + std::to_string(d) + "-D case");
    const std::vector<Interval> support(d, spec.support.value_or(base.grid.support().front()));
    base.grid = BinGrid(support, J);
  }
  if (spec.batch_size) base.batch_size = *spec.batch_size;
  if (spec.samples) base.samples = *spec.samples;
  if (spec.iterations) base.iterations = *spec.iterations;
  if (spec.eval_every) base.eval_every = *spec.eval_every;
  if (spec.eval_count) base.eval_count = *spec.eval_count;
  if (spec.window) base.window = *spec.window;
  if (spec.label_policy) base.label_policy = *spec.label_policy;
  base.seed = opt.seed ? *opt.seed : spec.seed.value_or(1);
  auto apply = [](TrainConfig& c, const NetworkOverrides& n) {
    if (n.learning_rate) c.learning_rate = *n.learning_rate;
    if (n.activation) c.activation = *n.activation;
    if (n.hidden) c.hidden = *n.hidden;
    if (n.inner_hidden) c.inner_hidden = *n.inner_hidden;
    if (n.latent) c.latent = *n.latent;
  };
  apply(base, spec.network);
  std::vector<TrainConfig> out;
  for (const auto& s : spec.schemes) {
    TrainConfig c = base;
    c.scheme = bind_scheme(s.scheme, c.grid);
    apply(c, s.overrides);
    validate(c);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

/// 17 significant digits, locale-independent.
inline std::string format_number(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, ec == std::errc{} ? p : buf);
}

inline std::string series_csv(const ExperimentResult& r) {
  std::string s = "iteration,mse,mse_windowed\n";
  for (const auto& p : r.series)
    s += std::to_string(p.iteration) + "," + format_number(p.mse) + "," + format_number(p.mse_windowed) + "\n";
  return s;
}

inline std::string convergence_csv(std::span<const ConvergenceRow> rows) {
  std::string s = "K,max_w1,mean_w1,w2_bound\n";
  for (const auto& r : rows)
    s += std::to_string(r.K) + "," + format_number(r.max_w1) + "," + format_number(r.mean_w1) + "," +
         format_number(r.w2_bound) + "\n";
  return s;
}

namespace detail {
inline std::string join_sizes(const std::vector<std::size_t>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
  return s;
}

inline std::string policy_text(const LabelPolicy& p) {
  return p.mode == LabelPolicy::Mode::exact ? "exact" : "mc:" + std::to_string(p.n_label);
}
}  // namespace detail

/// Every resolved setting of a run plus per-scheme outcomes, as key = value
/// lines that parse back as a spec (outcome lines are comments).
inline std::string manifest_text(const std::string& name, Preset preset, std::span<const TrainConfig> configs,
                                 std::span<const ExperimentResult> results) {
  const TrainConfig& c = configs.front();
  std::ostringstream os;
  os << "name = " << name << "\n";
  os << "preset = " << preset_name(preset) << "\n";
  os << "seed = " << c.seed << "\n";
  os << "case = " << case_name(c.test_case.id) << "\n";
  os << "q = " << format_number(c.test_case.q[0]) << "," << format_number(c.test_case.q[1]) << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "samples = " << c.samples << "\n";
  os << "bins = " << detail::join_sizes(c.grid.lattice(), "x") << "\n";
  os << "support = " << format_number(c.grid.support()[0].lo) << "," << format_number(c.grid.support()[0].hi) << "\n";
  os << "iterations = " << c.iterations << "\n";
  os << "eval_every = " << c.eval_every << "\n";
  os << "eval_count = " << c.eval_count << "\n";
  os << "window = " << c.window << "\n";
  os << "label = " << detail::policy_text(c.label_policy) << "\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const TrainConfig& s = configs[i];
    os << "\n[scheme " << to_string(s.scheme) << "]\n";
    os << "learning_rate = " << format_number(s.learning_rate) << "\n";
    os << "activation = " << to_string(s.activation) << "\n";
    os << "hidden = " << detail::join_sizes(s.hidden, ",") << "\n";
    if (is_cylinder(s.scheme)) {
      os << "inner_hidden = " << detail::join_sizes(s.inner_hidden, ",") << "\n";
      os << "latent = " << s.latent << "\n";
    }
    if (i < results.size()) {
      const ExperimentResult& r = results[i];
      os << "# initial_mse = " << format_number(r.initial_mse) << "\n";
      if (!r.series.empty()) os << "# final_mse_windowed = " << format_number(r.series.back().mse_windowed) << "\n";
      os << "# iterations_completed = " << r.iterations_completed << "\n";
      os << "# status = " << (r.failure ? "diverged: " + *r.failure : std::string("ok")) << "\n";
      os << "# seconds = sampling " << format_number(r.times.sampling) << ", features "
         << format_number(r.times.features) << ", optimization " << format_number(r.times.optimization)
         << ", evaluation " << format_number(r.times.evaluation) << "\n";
    }
  }
  return os.str();
}

/// Line chart of each series' windowed MSE on a log scale.
inline std::string svg_chart(const std::string& title, std::span<const ExperimentResult> results) {
  constexpr double W = 760, H = 460, left = 80, right = 200, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double x_max = 1.0, y_min = HUGE_VAL, y_max = -HUGE_VAL;
  for (const auto& r : results)
    for (const auto& p : r.series) {
      x_max = std::max(x_max, static_cast<double>(p.iteration));
      if (p.mse_windowed > 0.0 && std::isfinite(p.mse_windowed)) {
        y_min = std::min(y_min, p.mse_windowed);
        y_max = std::max(y_max, p.mse_windowed);
      }
    }
  if (!(y_min <= y_max)) y_min = 0.1, y_max = 1.0;
  const double lo = std::floor(std::log10(y_min)), hi = std::max(lo + 1.0, std::ceil(std::log10(y_max)));
  auto X = [&](double x) { return left + pw * x / x_max; };
  auto Y = [&](double y) { return top + ph * (hi - std::log10(y)) / (hi - lo); };
  static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">" << title << "</text>\n";
  for (double e = lo; e <= hi; e += 1.0) {
    const double y = Y(std::pow(10.0, e));
    os << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  }
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double it = x_max * i / 4.0;
    os << "<text x=\"" << X(it) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
       << static_cast<long long>(std::llround(it)) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">iteration</text>\n";
  os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 18 " << top + ph / 2
     << ")\" text-anchor=\"middle\">windowed MSE</text>\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const char* color = colors[i % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : results[i].series)
      if (p.mse_windowed > 0.0 && std::isfinite(p.mse_windowed))
        os << X(static_cast<double>(p.iteration)) << "," << Y(p.mse_windowed) << " ";
    os << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << to_string(results[i].config.scheme)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct RunOutcome {
  std::filesystem::path directory;
  std::vector<ExperimentResult> results;
  bool diverged = false;
};

/// Trains every scheme of a resolved spec on shared sampled data and writes
/// `<out>/<name>/<scheme>.csv`, `<scheme>.model`, `manifest` and, when
/// enabled, `<out>/<name>.svg`.
inline RunOutcome run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir,
                                 const ResolveOptions& opt) {
  const std::vector<TrainConfig> configs = resolve(spec, opt);
  RunOutcome outcome;
  outcome.directory = out_dir / spec.name;
  std::filesystem::create_directories(outcome.directory);
  outcome.results = train_group(configs);
  for (const auto& r : outcome.results) {
    const std::string stem = to_string(r.config.scheme);
    write_file(outcome.directory / (stem + ".csv"), series_csv(r));
    std::ostringstream model;
    save_model(model, r.model);
    write_file(outcome.directory / (stem + ".model"), model.str());
    outcome.diverged = outcome.diverged || r.failure.has_value();
  }
  write_file(outcome.directory / "manifest",
             manifest_text(spec.name, effective_preset(spec, opt), configs, outcome.results));
  if (spec.svg)
    write_file(out_dir / (spec.name + ".svg"),
               svg_chart(spec.name + " (" + std::string(case_name(configs.front().test_case.id)) + ")",
                         outcome.results));
  return outcome;
}

// ---------------------------------------------------------------------------
// Convergence studies

struct ConvergenceSpec {
  std::string name;
  std::size_t bins = 100;
  Interval support{-2.0, 2.0};
  std::size_t n_dists = 50;
  std::vector<std::size_t> K{10, 25, 50, 100, 200};
  std::uint64_t seed = 1;
  std::optional<std::string> out;
};

inline ConvergenceSpec parse_convergence_spec(std::string_view text, const std::string& default_name = "convergence") {
  const SpecText st = parse_spec_text(text);
  if (!st.sections.empty())
    throw ParseError("a convergence study has no sections", st.sections.front().line, st.sections.front().column);
  ConvergenceSpec spec;
  spec.name = default_name;
  std::set<std::string> seen;
  for (const SpecEntry& e : st.globals) {
    if (!seen.insert(e.key).second) throw ParseError("duplicate key '" + e.key + "'", e.line, e.key_column);
    if (e.key == "name") {
      spec.name = e.value;
    } else if (e.key == "bins") {
      const auto J = detail::to_sizes(e);
      if (J.size() != 1) throw DimensionMismatch("convergence study: bins must describe a 1-D grid");
      spec.bins = J.front();
    } else if (e.key == "support") {
      const auto v = detail::to_doubles(e);
      if (v.size() != 2 || !(v[0] < v[1])) throw detail::value_error(e, "expected lo,hi with lo < hi");
      spec.support = {v[0], v[1]};
    } else if (e.key == "n_dists") {
      spec.n_dists = static_cast<std::size_t>(detail::to_u64(e));
    } else if (e.key == "K") {
      spec.K = detail::to_sizes(e, ",");
      if (!std::is_sorted(spec.K.begin(), spec.K.end())) throw detail::value_error(e, "K list must be increasing");
    } else if (e.key == "seed") {
      spec.seed = detail::to_u64(e);
    } else if (e.key == "out") {
      spec.out = e.value;
    } else {
      throw ParseError("unknown key '" + e.key + "'", e.line, e.key_column);
    }
  }
  return spec;
}

/// Runs the study with streams split from the seed; distribution i uses
/// split(i) of the "convergence" stream.
inline std::vector<ConvergenceRow> run_convergence(const ConvergenceSpec& spec) {
  auto rng = RandomStream(spec.seed).split("convergence");
  return convergence_study(spec.n_dists, spec.K, BinGrid({spec.support}, {spec.bins}), rng);
}

}  // namespace distlearn

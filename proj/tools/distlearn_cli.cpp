// distlearn: train distribution-regression networks from experiment specs,
// run the self-checks, and tabulate quantile-reconstruction convergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distlearn/experiment.hpp"
#include "distlearn/verify.hpp"

namespace fs = std::filesystem;
using namespace distlearn;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailed = 1;     // verify failure or I/O error
constexpr int kBadInput = 2;   // parse errors, dimension mismatches, bad configs
constexpr int kDiverged = 3;

std::string stem_of(const fs::path& p) { return p.stem().string(); }

int cmd_run(const std::vector<std::string>& specs, const ResolveOptions& opt, const std::optional<std::string>& out) {
  std::vector<ExperimentSpec> parsed;
  std::vector<fs::path> outs;
  for (const auto& path : specs) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const std::exception& e) {
      std::cerr << e.what() << "\n";
      return kBadInput;
    }
    try {
      parsed.push_back(parse_experiment_spec(text, stem_of(path)));
    } catch (const ParseError& e) {
      std::cerr << path << ":" << e.what() << "\n";
      return kBadInput;
    }
    outs.emplace_back(out ? *out : parsed.back().out.value_or("runs"));
  }
  // Catch name clashes and config errors before any training starts.
  std::set<std::string> names;
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    const std::string key = (outs[i] / parsed[i].name).lexically_normal().string();
    if (!names.insert(key).second) {
      std::cerr << specs[i] << ": run name '" << parsed[i].name << "' is used twice in this batch\n";
      return kBadInput;
    }
    try {
      (void)resolve(parsed[i], opt);
    } catch (const std::exception& e) {
      std::cerr << specs[i] << ": " << e.what() << "\n";
      return kBadInput;
    }
  }
  int status = kOk;
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    try {
      const RunOutcome r = run_experiment(parsed[i], outs[i], opt);
      for (const auto& res : r.results) {
        std::printf("%-30s initial %.4g  final windowed %.4g%s\n", to_string(res.config.scheme).c_str(),
                    res.initial_mse, res.series.empty() ? res.initial_mse : res.series.back().mse_windowed,
                    res.failure ? "  DIVERGED" : "");
      }
      std::printf("wrote %s\n", r.directory.string().c_str());
      if (r.diverged) status = kDiverged;
    } catch (const std::exception& e) {
      std::cerr << specs[i] << ": " << e.what() << "\n";
      return kFailed;
    }
  }
  return status;
}

int cmd_verify(const VerifyOptions& opt) {
  const auto results = run_verify(opt);
  bool all = true;
  std::printf("%-34s %-6s %12s %12s %9s  %s\n", "check", "result", "value", "threshold", "seconds", "detail");
  for (const auto& r : results) {
    all = all && r.passed;
    std::printf("%-34s %-6s %12.4g %12.4g %9.2f  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.value,
                r.threshold, r.seconds, r.detail.c_str());
  }
  std::printf("%s\n", all ? "all checks passed" : "some checks FAILED");
  return all ? kOk : kFailed;
}

int cmd_convergence(const std::string& path, const std::optional<std::uint64_t>& seed,
                    const std::optional<std::string>& out) {
  ConvergenceSpec spec;
  try {
    spec = parse_convergence_spec(read_file(path), stem_of(path));
  } catch (const ParseError& e) {
    std::cerr << path << ":" << e.what() << "\n";
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << path << ": " << e.what() << "\n";
    return kBadInput;
  }
  if (seed) spec.seed = *seed;
  try {
    const auto rows = run_convergence(spec);
    const fs::path dir = out ? *out : spec.out.value_or("runs");
    fs::create_directories(dir);
    const fs::path file = dir / (spec.name + ".csv");
    write_file(file, convergence_csv(rows));
    std::printf("%6s %12s %12s %12s\n", "K", "max_w1", "mean_w1", "w2_bound");
    for (const auto& r : rows) std::printf("%6zu %12.6g %12.6g %12.6g\n", r.K, r.max_w1, r.mean_w1, r.w2_bound);
    std::printf("wrote %s\n", file.string().c_str());
  } catch (const std::exception& e) {
    std::cerr << path << ": " << e.what() << "\n";
    return kBadInput;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distribution regression with quantile and moment features"};
  app.require_subcommand(1);

  std::string preset_text;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  app.add_option("--preset", preset_text, "Scale preset: desk (default) or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", seed, "Master seed; overrides the spec");
  app.add_option("--out", out, "Output directory; overrides the spec");

  auto* run = app.add_subcommand("run", "Train every scheme of one or more experiment specs");
  std::vector<std::string> run_specs;
  run->add_option("spec", run_specs, "Experiment spec files")->required()->check(CLI::ExistingFile);

  auto* verify = app.add_subcommand("verify", "Run the built-in correctness checks");
  VerifyOptions vopt;
  verify->add_flag("--quick", vopt.quick, "Smaller sweeps");
  verify->add_flag("--inject-gradient-fault", vopt.inject_gradient_fault,
                   "Corrupt backpropagated gradients (the gradient checks must then fail)");

  auto* conv = app.add_subcommand("convergence-study", "Tabulate W1 of quantile reconstructions against K");
  std::string conv_spec;
  conv->add_option("spec", conv_spec, "Convergence spec file")->required()->check(CLI::ExistingFile);

  // Global options are accepted after the subcommand too.
  for (auto* sub : {run, verify, conv}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  ResolveOptions ropt;
  if (!preset_text.empty()) ropt.preset = parse_preset(preset_text);
  ropt.seed = seed;
  try {
    if (*run) return cmd_run(run_specs, ropt, out);
    if (*verify) {
      if (seed) vopt.seed = *seed;
      return cmd_verify(vopt);
    }
    if (*conv) return cmd_convergence(conv_spec, seed, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}

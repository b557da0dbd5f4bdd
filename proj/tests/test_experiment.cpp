#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "distlearn/experiment.hpp"

namespace fs = std::filesystem;
using namespace distlearn;

namespace {

struct Exec {
  int code = 0;
  std::string output;
};

// Runs the CLI in `dir`, capturing stdout and stderr.
Exec cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" DISTLEARN_CLI_PATH "' " + args + " 2>&1";
  Exec r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, "popen failed"};
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / ("distlearn_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path write(const std::string& name, const std::string& text) const {
    write_file(path_ / name, text);
    return path_ / name;
  }

 private:
  fs::path path_;
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

ParseError parse_failure(const std::string& text) {
  try {
    parse_experiment_spec(text);
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no parse error for:\n" << text;
  return ParseError("none");
}

const std::string kSmall =
    "case = uni-b\n"
    "samples = 500\n"
    "iterations = 40\n"
    "eval_every = 10\n"
    "eval_count = 8\n"
    "window = 2\n";

}  // namespace

TEST(SpecText, SectionsAndComments) {
  const auto st = parse_spec_text("# header\n a = 1 \n\n[scheme moment:K=3]\nb=x # trailing\n[ scheme  bin:J=5 ]\n");
  ASSERT_EQ(st.globals.size(), 1u);
  EXPECT_EQ(st.globals[0].key, "a");
  EXPECT_EQ(st.globals[0].value, "1");
  EXPECT_EQ(st.globals[0].line, 2u);
  EXPECT_EQ(st.globals[0].key_column, 2u);
  EXPECT_EQ(st.globals[0].value_column, 6u);
  ASSERT_EQ(st.sections.size(), 2u);
  EXPECT_EQ(st.sections[0].header, "moment:K=3");
  ASSERT_EQ(st.sections[0].entries.size(), 1u);
  EXPECT_EQ(st.sections[0].entries[0].value, "x");
  EXPECT_EQ(st.sections[1].header, "bin:J=5");
  EXPECT_TRUE(st.sections[1].entries.empty());
}

TEST(SpecParse, ErrorsCarryLineAndColumn) {
  auto e = parse_failure("case = uni-a\n  colour = red\n[scheme moment:K=3]\n");
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.column(), 3u);
  EXPECT_NE(std::string(e.what()).find("2:3:"), std::string::npos);

  e = parse_failure("case = uni-a\niterations = 1x\n[scheme moment:K=3]\n");
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.column(), 14u);

  e = parse_failure("case = uni-a\n[scheme moment:K=3]\nsamples = 5\n");
  EXPECT_EQ(e.line(), 3u);
  EXPECT_EQ(e.column(), 1u);

  e = parse_failure("case = uni-a\n[scheme moment:Q=3]\n");
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.column(), 9u);

  e = parse_failure("case = uni-a\n[scheme moment:K=3\n");
  EXPECT_EQ(e.line(), 2u);

  e = parse_failure("case = uni-a\njust words\n[scheme moment:K=3]\n");
  EXPECT_EQ(e.line(), 2u);

  e = parse_failure("case = uni-z\n[scheme moment:K=3]\n");
  EXPECT_EQ(e.line(), 1u);
  EXPECT_EQ(e.column(), 8u);

  e = parse_failure("case = uni-a\ncase = uni-b\n[scheme moment:K=3]\n");
  EXPECT_EQ(e.line(), 2u);

  e = parse_failure("case = uni-a\n[scheme moment:K=3]\n[scheme moment:K=3]\n");
  EXPECT_EQ(e.line(), 3u);

  e = parse_failure("case = uni-a\nq = 1.5\n[scheme moment:K=3]\n");
  EXPECT_EQ(e.line(), 2u);

  e = parse_failure("[section moment:K=3]\n");
  EXPECT_EQ(e.line(), 1u);

  EXPECT_THROW(parse_experiment_spec("case = uni-a\n"), ParseError);
}

TEST(SpecParse, ValuesAndOverrides) {
  const auto spec = parse_experiment_spec(
      "name = demo\ncase = bi-d\nq = 0.2, 0.8\nseed = 42\nbins = 30\nsupport = -1,3\nlabel = mc:20000\n"
      "hidden = 8,4\nsvg = false\n[scheme moment:K=5]\nlearning_rate = 0.01\nactivation = tanh\n[scheme "
      "cylinder:n=100]\nlatent = 6\ninner_hidden = 5\n");
  EXPECT_EQ(spec.name, "demo");
  EXPECT_EQ(spec.test_case.id, CaseId::bi_d);
  EXPECT_EQ(spec.test_case.q[0], 0.2);
  EXPECT_EQ(spec.test_case.q[1], 0.8);
  EXPECT_EQ(*spec.seed, 42u);
  EXPECT_FALSE(spec.svg);
  ASSERT_EQ(spec.schemes.size(), 2u);

  const auto configs = resolve(spec, {});
  ASSERT_EQ(configs.size(), 2u);
  for (const auto& c : configs) {
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.grid.lattice(), (std::vector<std::size_t>{30, 30}));
    EXPECT_EQ(c.grid.support()[1].lo, -1.0);
    EXPECT_EQ(c.grid.support()[1].hi, 3.0);
    EXPECT_EQ(c.label_policy.mode, LabelPolicy::Mode::monte_carlo);
    EXPECT_EQ(c.label_policy.n_label, 20000u);
    EXPECT_EQ(c.hidden, (std::vector<std::size_t>{8, 4}));
    EXPECT_EQ(c.samples, 20000u);  // desk preset
  }
  EXPECT_EQ(configs[0].learning_rate, 0.01);
  EXPECT_EQ(configs[0].activation, Activation::tanh);
  EXPECT_EQ(configs[1].learning_rate, 5e-3);
  EXPECT_EQ(configs[1].latent, 6u);
  EXPECT_EQ(configs[1].inner_hidden, (std::vector<std::size_t>{5}));
}

TEST(SpecResolve, Precedence) {
  auto spec = parse_experiment_spec("case = uni-a\npreset = paper\nseed = 7\n[scheme moment:K=3]\n");
  auto c = resolve(spec, {}).front();
  EXPECT_EQ(c.samples, 200000u);
  EXPECT_EQ(c.seed, 7u);
  c = resolve(spec, {Preset::desk, 99}).front();
  EXPECT_EQ(c.samples, 20000u);
  EXPECT_EQ(c.seed, 99u);

  spec = parse_experiment_spec("case = uni-a\nsamples = 1234\n[scheme moment:K=3]\n");
  EXPECT_EQ(resolve(spec, {Preset::paper, {}}).front().samples, 1234u);
  EXPECT_EQ(resolve(spec, {Preset::paper, {}}).front().iterations, 10000u);
}

TEST(SpecResolve, DimensionMismatch) {
  auto spec = parse_experiment_spec("case = uni-a\nbins = 10x10\n[scheme moment:K=3]\n");
  EXPECT_THROW(resolve(spec, {}), DimensionMismatch);
  spec = parse_experiment_spec("case = bi-a\nbins = 10x10x10\n[scheme moment:K=3]\n");
  EXPECT_THROW(resolve(spec, {}), DimensionMismatch);
  spec = parse_experiment_spec("case = uni-a\n[scheme bin:J=5x5]\n");
  EXPECT_THROW(resolve(spec, {}), DimensionMismatch);
}

TEST(Artifacts, NumberFormatRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5e17}) EXPECT_EQ(std::stod(format_number(v)), v);
  EXPECT_EQ(format_number(0.5), "0.5");
}

TEST(Artifacts, ManifestParsesBackToTheSameConfig) {
  const auto spec = parse_experiment_spec(kSmall + "seed = 5\n[scheme moment:K=4]\nhidden = 7\n[scheme quantile:K=9]\n");
  const auto configs = resolve(spec, {});
  const std::string text = manifest_text("m", Preset::desk, configs, {});
  const auto again = resolve(parse_experiment_spec(text), {});
  ASSERT_EQ(again.size(), configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    EXPECT_EQ(to_string(again[i].scheme), to_string(configs[i].scheme));
    EXPECT_EQ(again[i].seed, configs[i].seed);
    EXPECT_EQ(again[i].samples, configs[i].samples);
    EXPECT_EQ(again[i].hidden, configs[i].hidden);
    EXPECT_EQ(again[i].learning_rate, configs[i].learning_rate);
    EXPECT_EQ(again[i].test_case.q, configs[i].test_case.q);
  }
}

TEST(Cli, ZeroIterationsWritesHeaderOnly) {
  TempDir dir;
  dir.write("z.spec", "case = uni-a\niterations = 0\nsamples = 200\neval_count = 4\n[scheme moment:K=3]\n");
  const auto r = cli(dir.path(), "run z.spec --out out");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_file(dir.path() / "out/z/moment:K=3.csv"), "iteration,mse,mse_windowed\n");
  EXPECT_TRUE(fs::exists(dir.path() / "out/z/moment:K=3.model"));
  EXPECT_TRUE(fs::exists(dir.path() / "out/z/manifest"));
  EXPECT_TRUE(fs::exists(dir.path() / "out/z.svg"));
}

TEST(Cli, EqualSeedsGiveIdenticalFiles) {
  TempDir dir;
  dir.write("r.spec", kSmall + "[scheme moment:K=4]\n[scheme quantile:K=9]\n");
  ASSERT_EQ(cli(dir.path(), "run r.spec --out a --seed 11").code, 0);
  ASSERT_EQ(cli(dir.path(), "run r.spec --out b --seed 11").code, 0);
  ASSERT_EQ(cli(dir.path(), "run r.spec --out c --seed 12").code, 0);
  for (const char* f : {"moment:K=4.csv", "quantile:K=9.csv", "moment:K=4.model"}) {
    const std::string a = read_file(dir.path() / "a/r" / f);
    EXPECT_EQ(a, read_file(dir.path() / "b/r" / f)) << f;
    EXPECT_NE(a, read_file(dir.path() / "c/r" / f)) << f;
  }
  const std::string csv = read_file(dir.path() / "a/r/moment:K=4.csv");
  EXPECT_EQ(count_lines(csv), 5u);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_NE(read_file(dir.path() / "a/r/manifest").find("seed = 11\n"), std::string::npos);
}

TEST(Cli, ComparisonSpecWritesFiveSeries) {
  TempDir dir;
  // Shrunk copy of the shipped comparison spec.
  dir.write("cmp.spec", "samples = 400\niterations = 20\neval_every = 10\neval_count = 4\nwindow = 2\n" +
                            read_file(fs::path(DISTLEARN_SPEC_DIR) / "uni-comparison.spec"));
  const auto r = cli(dir.path(), "run cmp.spec --out out");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* s : {"quantile:K=200", "moment:K=10", "momquant:KM=7,KQ=200", "quantmom:KM=7,KQ=200", "bin:J=200"}) {
    const fs::path csv = dir.path() / "out/uni-comparison" / (std::string(s) + ".csv");
    ASSERT_TRUE(fs::exists(csv)) << s;
    EXPECT_EQ(count_lines(read_file(csv)), 3u) << s;
  }
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "out/uni-comparison")) csvs += e.path().extension() == ".csv";
  EXPECT_EQ(csvs, 5u);
  const std::string svg = read_file(dir.path() / "out/uni-comparison.svg");
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 0, true);
  EXPECT_NE(svg.find("moment:K=10"), std::string::npos);
  EXPECT_NE(svg.find("1e-"), std::string::npos);
}

TEST(Cli, ParseErrorExitsWithPosition) {
  TempDir dir;
  dir.write("bad.spec", "case = uni-a\n\n   samplez = 3\n[scheme moment:K=3]\n");
  const auto r = cli(dir.path(), "run bad.spec --out out");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("bad.spec:3:4:"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir.path() / "out"));
}

TEST(Cli, DimensionMismatchIsAnError) {
  TempDir dir;
  dir.write("dim.spec", "case = bi-a\nbins = 100\n[scheme quantile:K=10]\n");
  const auto r = cli(dir.path(), "run dim.spec --out out");
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(dir.path() / "out/dim"));
}

TEST(Cli, DuplicateRunNamesAreRejected) {
  TempDir dir;
  dir.write("a.spec", "name = same\ncase = uni-a\niterations = 0\n[scheme moment:K=3]\n");
  dir.write("b.spec", "name = same\ncase = uni-b\niterations = 0\n[scheme moment:K=3]\n");
  const auto r = cli(dir.path(), "run a.spec b.spec --out out");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("same"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir.path() / "out"));
}

TEST(Cli, DivergenceIsRecorded) {
  TempDir dir;
  dir.write("d.spec", "case = uni-a\nsamples = 300\niterations = 30\neval_every = 10\neval_count = 4\n"
                      "learning_rate = 1e300\n[scheme moment:K=3]\n");
  const auto r = cli(dir.path(), "run d.spec --out out");
  EXPECT_EQ(r.code, 3) << r.output;
  const std::string manifest = read_file(dir.path() / "out/d/manifest");
  EXPECT_NE(manifest.find("# status = diverged"), std::string::npos) << manifest;
}

TEST(Cli, ConvergenceStudyCsv) {
  TempDir dir;
  dir.write("c.spec", "name = conv\nn_dists = 5\nK = 5,20\n");
  const auto r = cli(dir.path(), "convergence-study c.spec --out out");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = read_file(dir.path() / "out/conv.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "K,max_w1,mean_w1,w2_bound");
  EXPECT_EQ(count_lines(csv), 3u);

  dir.write("bad.spec", "n_dists = 5\nK = 20,5\n");
  const auto bad = cli(dir.path(), "convergence-study bad.spec --out out");
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.output.find("bad.spec:2:5:"), std::string::npos) << bad.output;
}

TEST(Cli, VerifyFailsUnderInjectedGradientFault) {
  TempDir dir;
  const auto r = cli(dir.path(), "verify --quick --inject-gradient-fault");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("gradient check, relu"), std::string::npos);
  EXPECT_NE(r.output.find("FAIL"), std::string::npos);
}

TEST(Cli, VerifyQuickPasses) {
  TempDir dir;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = cli(dir.path(), "verify --quick");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos) << r.output;
  EXPECT_LT(seconds, 120.0);
}

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "attn_sieve_cli.hpp"
#include "test_support.hpp"

namespace attn_sieve {
namespace {

using testing::slurp;
using testing::spit;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// 1000 samples keeps spurious BSI >= 2 fits on unimodal layers out of reach;
// small L and T keep it fast.
const char* kScenario =
    "n_samples=1000\n"
    "n_layers=12\n"
    "n_tokens=144\n"
    "sensitive_layers=4-6\n"
    "rng_seed=5\n";

class CliTest : public ::testing::Test {
 protected:
  testing::TempDir dir;

  std::string path(const std::string& name) const { return dir.file(name); }

  std::string simulate(const std::string& name, const std::string& scenario = kScenario,
                       const std::vector<std::string>& extra = {}) {
    spit(path(name + ".cfg"), scenario);
    std::vector<std::string> args = {"simulate", "--config", path(name + ".cfg"), "--out",
                                     path(name)};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return path(name);
  }
};

TEST_F(CliTest, SimulateIsDeterministic) {
  const auto a = simulate("a");
  const auto b = simulate("b", kScenario, {"--threads", "3"});
  EXPECT_EQ(slurp(a + ".atne"), slurp(b + ".atne"));
  EXPECT_EQ(slurp(a + ".manifest"), slurp(b + ".manifest"));
  const auto c = simulate("c", kScenario, {"--seed", "6"});
  EXPECT_NE(slurp(a + ".atne"), slurp(c + ".atne"));
  const auto set = load_tensor_set(a + ".atne");
  EXPECT_EQ(set.n_samples, 1000u);
  EXPECT_TRUE(set.renormalized);
}

TEST_F(CliTest, SimulateRejectsUnknownKey) {
  spit(path("bad.cfg"), "n_samples=10\nposion_rate=0.1\n");
  const auto r = cli({"simulate", "--config", path("bad.cfg"), "--out", path("bad")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("posion_rate"), std::string::npos) << r.err;
}

TEST_F(CliTest, SimulateWithoutPoisonLabelsNothing) {
  const auto prefix = simulate("clean", std::string(kScenario) + "poison_rate=0\n");
  const auto manifest = load_manifest(prefix + ".manifest");
  for (const auto& e : manifest.entries) EXPECT_EQ(e.poisoned, std::optional<bool>(false));
}

TEST_F(CliTest, ProfileMarksExactlyTheMask) {
  const auto prefix = simulate("p");
  const auto r = cli({"profile", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                      "--out", path("prof")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "tau_bsi 2 sensitive 4,5,6\n");
  std::istringstream report(slurp(path("prof.layers.txt")));
  std::string line;
  for (int l = 0; l < 12; ++l) {
    ASSERT_TRUE(std::getline(report, line));
    std::istringstream fields(line);
    int layer = -1, sensitive = -1;
    double b = 0;
    fields >> layer >> b >> sensitive;
    EXPECT_EQ(layer, l);
    EXPECT_EQ(sensitive, (l >= 4 && l <= 6) ? 1 : 0) << line;
  }
  const auto csv = slurp(path("prof.entropy.csv"));
  EXPECT_EQ(csv.rfind("sample_id,layer_0,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1001);
}

TEST_F(CliTest, ProfileWithHugeTauReportsNoLayer) {
  const auto prefix = simulate("p");
  const auto r = cli({"profile", "--atne", prefix + ".atne", "--out", path("prof"),
                      "--tau-bsi", "1e6"});
  EXPECT_EQ(r.code, cli::kNoSensitiveLayer);
  EXPECT_NE(r.out.find("no sensitive layer detected"), std::string::npos);
}

TEST_F(CliTest, PerHeadInputGivesTheSameCsvAsPreAveraged) {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  AttentionTensorSet heads;
  heads.n_samples = 20;
  heads.n_layers = 3;
  heads.n_tokens = 16;
  heads.per_head = true;
  heads.n_heads = 4;
  heads.values.resize(heads.expected_values());
  for (auto& v : heads.values) v = u(rng);

  AttentionTensorSet flat = heads;
  flat.per_head = false;
  flat.n_heads = 1;
  flat.values.assign(flat.expected_values(), 0.0f);
  for (std::size_t s = 0; s < heads.n_samples; ++s) {
    for (std::size_t l = 0; l < heads.n_layers; ++l) {
      const auto src = heads.slice(s, l);
      auto dst = flat.slice(s, l);
      for (std::size_t t = 0; t < heads.n_tokens; ++t) {
        double acc = 0.0;
        for (std::size_t h = 0; h < 4; ++h) acc += src[h * 16 + t];
        dst[t] = static_cast<float>(acc / 4.0);
      }
    }
  }
  save_tensor_set(heads, path("heads.atne"));
  save_tensor_set(flat, path("flat.atne"));
  cli({"profile", "--atne", path("heads.atne"), "--out", path("h"), "--tau-bsi", "0"});
  cli({"profile", "--atne", path("flat.atne"), "--out", path("f"), "--tau-bsi", "0"});
  const auto a = slurp(path("h.entropy.csv"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(path("f.entropy.csv")));
  EXPECT_EQ(slurp(path("h.layers.txt")), slurp(path("f.layers.txt")));
}

TEST_F(CliTest, CleanConservesSamplesAndEvaluateScores) {
  const auto prefix = simulate("c");
  const auto r = cli({"clean", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                      "--out", path("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream report_in(path("run.report.txt"));
  const auto verdicts = read_clean_report(report_in);
  ASSERT_EQ(verdicts.size(), 1000u);
  std::size_t flagged = 0;
  for (const auto& v : verdicts) flagged += v.verdict == Verdict::flagged;
  const auto purified = load_manifest(path("run.purified.manifest"));
  EXPECT_EQ(purified.size(), 1000u - flagged);
  EXPECT_NE(r.out.find("flagged " + std::to_string(flagged) + " "), std::string::npos);

  const auto ev = cli({"evaluate", "--report", path("run.report.txt"), "--manifest",
                       prefix + ".manifest", "--out", path("score.txt")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(slurp(path("score.txt")), ev.out);
  // Recompute from the report and the labels directly.
  const auto manifest = load_manifest(prefix + ".manifest");
  std::vector<Verdict> flags;
  for (const auto& v : verdicts) flags.push_back(v.verdict);
  EXPECT_EQ(ev.out, to_record(score(flags, manifest.truth())) + "\n");
}

TEST_F(CliTest, ThresholdMethodDelegates) {
  const auto prefix = simulate("t");
  const auto r = cli({"clean", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                      "--out", path("th"), "--method", "threshold", "--threshold", "4.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto set = load_tensor_set(prefix + ".atne");
  const auto h = aggregate_entropy(entropy_matrix(set), std::vector<std::size_t>{4, 5, 6});
  const auto expected = threshold_classify(h, 4.5);
  std::ifstream in(path("th.report.txt"));
  const auto verdicts = read_clean_report(in);
  ASSERT_EQ(verdicts.size(), expected.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_EQ(verdicts[i].verdict == Verdict::flagged, expected[i] == Cluster::low);
  }
}

TEST_F(CliTest, KMeansStaysCloseToGmm) {
  const auto prefix = simulate("k");
  const auto r = cli({"compare", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream table(r.out);
  std::string line, method;
  std::getline(table, line);
  EXPECT_EQ(line, "# method flagged precision recall f1 status");
  std::map<std::string, double> f1;
  while (std::getline(table, line)) {
    std::istringstream row(line);
    double flagged, p, rec, f;
    row >> method >> flagged >> p >> rec >> f;
    f1[method] = f;
  }
  ASSERT_EQ(f1.size(), 3u);
  EXPECT_LE(std::abs(f1["gmm"] - f1["kmeans"]), 2.0);
}

TEST_F(CliTest, SweepIsMonotoneAndMatchesSingleRuns) {
  const auto prefix = simulate("s");
  const auto r = cli({"sweep", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                      "--taus", "0,0.5,1,1.5,2,2.5,3,1e6"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream table(r.out);
  std::string line;
  std::getline(table, line);
  EXPECT_EQ(line, "# tau n_sensitive precision recall f1 status");
  std::size_t previous = SIZE_MAX;
  std::string tau2_row, last_status;
  while (std::getline(table, line)) {
    std::istringstream row(line);
    std::string tau, p, rec, f;
    std::size_t n;
    row >> tau >> n >> p >> rec >> f >> last_status;
    EXPECT_LE(n, previous);
    previous = n;
    if (tau == "2") tau2_row = line;
  }
  EXPECT_EQ(last_status, "no_sensitive_layer");
  EXPECT_EQ(previous, 0u);

  // A single-tau sweep agrees with clean + evaluate at that tau.
  const auto one = cli({"sweep", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                        "--taus", "2"});
  ASSERT_EQ(one.code, 0);
  EXPECT_EQ(one.out, "# tau n_sensitive precision recall f1 status\n" + tau2_row + "\n");
  ASSERT_EQ(cli({"clean", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                 "--out", path("s2")}).code, 0);
  const auto ev = cli({"evaluate", "--report", path("s2.report.txt"), "--manifest",
                       prefix + ".manifest"});
  std::istringstream rec(ev.out), row(tau2_row);
  std::string tp, fp, fn, tn, p, r2, f, tau;
  std::size_t n;
  std::string rp, rr, rf;
  rec >> tp >> fp >> fn >> tn >> p >> r2 >> f;
  row >> tau >> n >> rp >> rr >> rf;
  EXPECT_EQ(n, 3u);
  EXPECT_EQ(p, rp);
  EXPECT_EQ(r2, rr);
  EXPECT_EQ(f, rf);
}

TEST_F(CliTest, UsageErrors) {
  const auto prefix = simulate("u");
  EXPECT_EQ(cli({"sweep", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                 "--taus", ""}).code,
            cli::kUsage);
  EXPECT_EQ(cli({"sweep", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest"}).code,
            cli::kUsage);
  EXPECT_EQ(cli({}).code, cli::kUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(cli({"profile", "--atne", path("missing.atne"), "--out", path("x")}).code,
            cli::kUsage);
  EXPECT_EQ(cli({"clean", "--atne", prefix + ".atne", "--manifest", prefix + ".manifest",
                 "--out", path("x"), "--method", "svm"}).code,
            cli::kUsage);
  EXPECT_EQ(cli({"profile", "--atne", prefix + ".atne", "--out", path("nodir/x")}).code,
            cli::kUsage);
}

TEST_F(CliTest, DataErrors) {
  spit(path("junk.atne"), "definitely not attention");
  const auto r = cli({"profile", "--atne", path("junk.atne"), "--out", path("x")});
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("not an ATNE container"), std::string::npos);

  const auto prefix = simulate("d");
  auto bytes = slurp(prefix + ".atne");
  bytes.resize(bytes.size() - 10);
  spit(path("short.atne"), bytes);
  EXPECT_EQ(cli({"profile", "--atne", path("short.atne"), "--out", path("x")}).code,
            cli::kDataError);

  spit(path("wrong.manifest"), "0\tonly_one\tclean\n");
  EXPECT_EQ(cli({"clean", "--atne", prefix + ".atne", "--manifest", path("wrong.manifest"),
                 "--out", path("x")}).code,
            cli::kDataError);

  // Identical slices everywhere: every layer is degenerate.
  AttentionTensorSet flat;
  flat.n_samples = 10;
  flat.n_layers = 2;
  flat.n_tokens = 4;
  flat.values.assign(flat.expected_values(), 0.25f);
  save_tensor_set(flat, path("flat.atne"));
  const auto d = cli({"profile", "--atne", path("flat.atne"), "--out", path("x")});
  EXPECT_EQ(d.code, cli::kDataError);
  EXPECT_NE(d.err.find("degenerate"), std::string::npos);
}

TEST_F(CliTest, LogLevelFromEnvironment) {
  const auto prefix = simulate("l");
  ::setenv("ATTN_SIEVE_LOG", "info", 1);
  const auto loud = cli({"profile", "--atne", prefix + ".atne", "--out", path("x")});
  ::setenv("ATTN_SIEVE_LOG", "off", 1);
  const auto quiet = cli({"profile", "--atne", path("missing"), "--out", path("x")});
  ::unsetenv("ATTN_SIEVE_LOG");
  EXPECT_NE(loud.err.find("attn_sieve: info: loaded"), std::string::npos);
  EXPECT_EQ(quiet.code, cli::kUsage);
}

}  // namespace
}  // namespace attn_sieve

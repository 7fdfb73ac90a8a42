#pragma once

// Subcommand wiring for the attn_sieve executable. Kept in a header so the
// test suites can drive the CLI in-process.

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "attn_sieve/attn_sieve.hpp"

namespace attn_sieve::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kNoSensitiveLayer = 3,
  kDataError = 4,
};

enum class LogLevel { off, error, warn, info, debug };

inline LogLevel log_level_from_env() {
  const char* raw = std::getenv("ATTN_SIEVE_LOG");
  if (!raw) return LogLevel::warn;
  const std::string v(raw);
  if (v == "off" || v == "0") return LogLevel::off;
  if (v == "error") return LogLevel::error;
  if (v == "info") return LogLevel::info;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::warn;
}

class Log {
 public:
  explicit Log(std::ostream& sink) : sink_(sink), level_(log_level_from_env()) {}

  void operator()(LogLevel level, const std::string& msg) const {
    if (level == LogLevel::off || level > level_) return;
    static constexpr const char* kNames[] = {"", "error", "warn", "info", "debug"};
    sink_ << "attn_sieve: " << kNames[static_cast<int>(level)] << ": " << msg << '\n';
  }

 private:
  std::ostream& sink_;
  LogLevel level_;
};

struct Options {
  std::string config_path;
  std::string out_prefix;
  std::string atne_path;
  std::string manifest_path;
  std::string report_path;
  std::string out_path;
  double tau_bsi = kDefaultTauBsi;
  double threshold = kDefaultFixedThreshold;
  std::string method = "gmm";
  std::optional<double> guard_bsi;
  std::optional<std::uint64_t> seed;
  std::vector<double> taus;
  unsigned threads = 1;
  std::size_t histogram_bins = 40;
};

namespace detail {

inline void require_output_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    fail(ErrorKind::usage, "output directory does not exist: " + parent.string());
  }
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  return out;
}

struct Loaded {
  EntropyMatrix matrix;
  SampleManifest manifest;
};

inline Loaded load_entropies(const Options& o, const Log& log) {
  const auto set = load_tensor_set(o.atne_path);
  log(LogLevel::info, "loaded " + o.atne_path + ": N=" + std::to_string(set.n_samples) +
                          " L=" + std::to_string(set.n_layers) +
                          " T=" + std::to_string(set.n_tokens) +
                          (set.per_head ? " H=" + std::to_string(set.n_heads) : ""));
  Loaded out;
  out.manifest = o.manifest_path.empty() ? default_manifest(set.n_samples)
                                         : load_manifest(o.manifest_path);
  if (out.manifest.size() != set.n_samples) {
    fail(ErrorKind::format, "manifest has " + std::to_string(out.manifest.size()) +
                                " entries but " + o.atne_path + " has " +
                                std::to_string(set.n_samples) + " samples");
  }
  out.matrix = entropy_matrix(set, o.threads);
  return out;
}

inline SensitivitySelection profile(const EntropyMatrix& matrix, double tau,
                                    unsigned threads, const Log& log) {
  auto selection = profile_layers(matrix, tau, threads);
  for (const auto& w : selection.warnings) log(LogLevel::warn, w);
  if (selection.all_degenerate()) {
    fail(ErrorKind::degenerate,
         "degenerate data: every layer's entropy column is constant");
  }
  return selection;
}

inline std::string rate(double value) {
  return attn_sieve::detail::format_fixed(100.0 * value, 2);
}

inline void require_truth(const SampleManifest& manifest, const std::string& path) {
  if (!manifest.fully_labeled()) {
    fail(ErrorKind::format, "manifest " + path + " lacks ground-truth labels");
  }
}

}  // namespace detail

inline int cmd_simulate(const Options& o, std::ostream& out, const Log& log) {
  ScenarioConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) fail(ErrorKind::usage, "cannot open scenario " + o.config_path);
    cfg = parse_scenario(in);
  }
  if (o.seed) cfg.rng_seed = *o.seed;
  cfg.validate();
  detail::require_output_dir(o.out_prefix);
  const auto scenario = generate(cfg, o.threads);
  save_tensor_set(scenario.tensors, o.out_prefix + ".atne");
  save_manifest(scenario.manifest, o.out_prefix + ".manifest");
  log(LogLevel::info, "wrote " + o.out_prefix + ".atne and " + o.out_prefix + ".manifest");
  out << "simulated " << cfg.n_samples << " samples, " << cfg.poisoned_count()
      << " poisoned, variant " << to_string(cfg.attack_variant) << '\n';
  return kOk;
}

inline int cmd_profile(const Options& o, std::ostream& out, const Log& log) {
  detail::require_output_dir(o.out_prefix);
  const auto loaded = detail::load_entropies(o, log);
  const auto selection = detail::profile(loaded.matrix, o.tau_bsi, o.threads, log);
  {
    auto csv = detail::open_output(o.out_prefix + ".entropy.csv");
    write_entropy_csv(loaded.matrix, loaded.manifest, csv);
  }
  {
    auto report = detail::open_output(o.out_prefix + ".layers.txt");
    write_selection_report(selection, report);
  }
  out << selection_summary(selection) << '\n';
  return selection.empty() ? kNoSensitiveLayer : kOk;
}

inline CleanOptions clean_options(const Options& o) {
  CleanOptions c;
  c.method = parse_method(o.method);
  c.fixed_threshold = o.threshold;
  c.guard_bsi = o.guard_bsi;
  return c;
}

inline int cmd_clean(const Options& o, std::ostream& out, const Log& log) {
  const auto options = clean_options(o);
  detail::require_output_dir(o.out_prefix);
  const auto loaded = detail::load_entropies(o, log);
  const auto selection = detail::profile(loaded.matrix, o.tau_bsi, o.threads, log);
  log(LogLevel::info, selection_summary(selection));
  const auto result = clean(loaded.matrix, selection, loaded.manifest, options);
  {
    auto report = detail::open_output(o.out_prefix + ".report.txt");
    write_clean_report(result.report, loaded.manifest, report);
  }
  save_manifest(result.purified, o.out_prefix + ".purified.manifest");
  {
    auto hist = detail::open_output(o.out_prefix + ".hist.csv");
    write_histogram_csv(result.report, o.histogram_bins, hist);
  }
  out << clean_summary(result.report) << '\n';
  if (result.report.status == CleanStatus::no_sensitive_layer) {
    log(LogLevel::warn, "no sensitive layer detected; every sample retained");
    return kNoSensitiveLayer;
  }
  if (result.report.status == CleanStatus::separation_below_guard) {
    log(LogLevel::warn, "sample-level separation below guard; every sample retained");
  }
  return kOk;
}

inline int cmd_evaluate(const Options& o, std::ostream& out, const Log& log) {
  const auto manifest = load_manifest(o.manifest_path);
  detail::require_truth(manifest, o.manifest_path);
  std::ifstream in(o.report_path);
  if (!in) fail(ErrorKind::io, "cannot open " + o.report_path);
  const auto verdicts = read_clean_report(in);
  if (verdicts.size() != manifest.size()) {
    fail(ErrorKind::format, "report has " + std::to_string(verdicts.size()) +
                                " samples but manifest has " +
                                std::to_string(manifest.size()));
  }
  std::vector<Verdict> flags(manifest.size());
  std::vector<std::optional<bool>> truth(manifest.size());
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (verdicts[i].sample_id != manifest.entries[i].sample_id) {
      fail(ErrorKind::format, "report line " + std::to_string(i) + " is '" +
                                  verdicts[i].sample_id + "', manifest has '" +
                                  manifest.entries[i].sample_id + "'");
    }
    flags[i] = verdicts[i].verdict;
    truth[i] = manifest.entries[i].poisoned;
  }
  const auto s = score(flags, truth);
  log(LogLevel::info, "scored " + std::to_string(flags.size()) + " samples");
  const std::string record = to_record(s);
  if (!o.out_path.empty()) {
    auto file = detail::open_output(o.out_path);
    file << record << '\n';
  }
  out << record << '\n';
  return kOk;
}

inline int cmd_sweep(const Options& o, std::ostream& out, const Log& log) {
  if (o.taus.empty()) fail(ErrorKind::usage, "sweep needs at least one tau");
  const auto options = clean_options(o);
  if (!o.out_path.empty()) detail::require_output_dir(o.out_path);
  const auto loaded = detail::load_entropies(o, log);
  detail::require_truth(loaded.manifest, o.manifest_path);
  // Fits do not depend on tau: profile once, reselect per row.
  const auto base = detail::profile(loaded.matrix, o.taus.front(), o.threads, log);
  const auto truth = loaded.manifest.truth();
  std::ostringstream table;
  table << "# tau n_sensitive precision recall f1 status\n";
  for (double tau : o.taus) {
    const auto selection = select_layers(base, tau);
    const auto result = clean(loaded.matrix, selection, loaded.manifest, options);
    const auto s = score(result.report.flags, truth);
    table << attn_sieve::detail::format_g(tau) << ' ' << selection.sensitive_layers.size()
          << ' ' << detail::rate(s.precision) << ' ' << detail::rate(s.recall)
          << ' ' << detail::rate(s.f1) << ' '
          << (selection.empty() ? std::string("no_sensitive_layer")
                                : std::string(to_string(result.report.status)))
          << '\n';
  }
  if (!o.out_path.empty()) {
    auto file = detail::open_output(o.out_path);
    file << table.str();
  }
  out << table.str();
  return kOk;
}

inline int cmd_compare(const Options& o, std::ostream& out, const Log& log) {
  if (!o.out_path.empty()) detail::require_output_dir(o.out_path);
  const auto loaded = detail::load_entropies(o, log);
  const auto selection = detail::profile(loaded.matrix, o.tau_bsi, o.threads, log);
  const bool labeled = loaded.manifest.fully_labeled();
  const auto truth = loaded.manifest.truth();
  std::ostringstream table;
  table << "# method flagged precision recall f1 status\n";
  for (auto method : {ClusterMethod::gmm, ClusterMethod::kmeans, ClusterMethod::threshold}) {
    auto options = clean_options(o);
    options.method = method;
    const auto result = clean(loaded.matrix, selection, loaded.manifest, options);
    table << to_string(method) << ' ' << result.report.flagged_count();
    if (labeled) {
      const auto s = score(result.report.flags, truth);
      table << ' ' << detail::rate(s.precision) << ' ' << detail::rate(s.recall)
            << ' ' << detail::rate(s.f1);
    } else {
      table << " - - -";
    }
    table << ' ' << to_string(result.report.status) << '\n';
  }
  if (!o.out_path.empty()) {
    auto file = detail::open_output(o.out_path);
    file << table.str();
  }
  out << table.str();
  return selection.empty() ? kNoSensitiveLayer : kOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const Log log(err);
  Options o;
  CLI::App app{"attn_sieve: attention-entropy screening of poisoned multimodal fine-tuning data"};
  app.require_subcommand(1);

  auto add_threads = [&](CLI::App* cmd) {
    cmd->add_option("--threads", o.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::Range(1u, 1024u));
  };
  auto add_tau = [&](CLI::App* cmd) {
    cmd->add_option("--tau-bsi", o.tau_bsi, "BSI threshold for sensitive layers")
        ->check(CLI::NonNegativeNumber);
  };
  auto add_clean_flags = [&](CLI::App* cmd) {
    cmd->add_option("--method", o.method, "gmm, kmeans or threshold")
        ->check(CLI::IsMember({"gmm", "kmeans", "threshold"}));
    cmd->add_option("--threshold", o.threshold, "Fixed entropy threshold (method=threshold)");
    cmd->add_option("--guard-bsi", o.guard_bsi,
                    "Refuse to flag when the sample-level BSI is below this")
        ->check(CLI::NonNegativeNumber);
  };

  auto* simulate = app.add_subcommand("simulate", "Generate a labeled synthetic attention set");
  simulate->add_option("--config", o.config_path, "Scenario key=value file")
      ->check(CLI::ExistingFile);
  simulate->add_option("--out", o.out_prefix, "Output prefix")->required();
  simulate->add_option("--seed", o.seed, "Override rng_seed");
  add_threads(simulate);

  auto* profile = app.add_subcommand("profile", "Entropy matrix and per-layer BSI report");
  profile->add_option("--atne", o.atne_path, "Attention tensors")->required()->check(CLI::ExistingFile);
  profile->add_option("--manifest", o.manifest_path, "Sample manifest")->check(CLI::ExistingFile);
  profile->add_option("--out", o.out_prefix, "Output prefix")->required();
  add_tau(profile);
  add_threads(profile);

  auto* clean_cmd = app.add_subcommand("clean", "Flag low-entropy samples and write the purified manifest");
  clean_cmd->add_option("--atne", o.atne_path, "Attention tensors")->required()->check(CLI::ExistingFile);
  clean_cmd->add_option("--manifest", o.manifest_path, "Sample manifest")->required()->check(CLI::ExistingFile);
  clean_cmd->add_option("--out", o.out_prefix, "Output prefix")->required();
  clean_cmd->add_option("--histogram-bins", o.histogram_bins, "Bins in <out>.hist.csv")
      ->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  add_tau(clean_cmd);
  add_clean_flags(clean_cmd);
  add_threads(clean_cmd);

  auto* evaluate = app.add_subcommand("evaluate", "Score a clean report against ground truth");
  evaluate->add_option("--report", o.report_path, "Clean report")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", o.manifest_path, "Manifest with labels")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", o.out_path, "Also write the score record here");

  auto* sweep = app.add_subcommand("sweep", "Detection quality across BSI thresholds");
  sweep->add_option("--atne", o.atne_path, "Attention tensors")->required()->check(CLI::ExistingFile);
  sweep->add_option("--manifest", o.manifest_path, "Manifest with labels")->required()->check(CLI::ExistingFile);
  sweep->add_option("--taus", o.taus, "Comma-separated thresholds")
      ->required()
      ->delimiter(',')
      ->expected(1, -1)
      ->check(CLI::NonNegativeNumber);
  sweep->add_option("--out", o.out_path, "Also write the table here");
  add_clean_flags(sweep);
  add_threads(sweep);

  auto* compare = app.add_subcommand("compare", "GMM, K-Means and fixed threshold side by side");
  compare->add_option("--atne", o.atne_path, "Attention tensors")->required()->check(CLI::ExistingFile);
  compare->add_option("--manifest", o.manifest_path, "Sample manifest")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", o.out_path, "Also write the table here");
  add_tau(compare);
  compare->add_option("--threshold", o.threshold, "Fixed entropy threshold");
  compare->add_option("--guard-bsi", o.guard_bsi, "Sample-level BSI guard")
      ->check(CLI::NonNegativeNumber);
  add_threads(compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*simulate) return cmd_simulate(o, out, log);
    if (*profile) return cmd_profile(o, out, log);
    if (*clean_cmd) return cmd_clean(o, out, log);
    if (*evaluate) return cmd_evaluate(o, out, log);
    if (*sweep) return cmd_sweep(o, out, log);
    if (*compare) return cmd_compare(o, out, log);
  } catch (const Error& e) {
    log(LogLevel::error, e.what());
    return e.kind() == ErrorKind::usage ? kUsage : kDataError;
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return kDataError;
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("attn_sieve");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace attn_sieve::cli

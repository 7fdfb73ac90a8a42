#pragma once

// Cross-layer aggregation, sample clustering and the purified manifest.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "attn_sieve/detail/util.hpp"
#include "attn_sieve/entropy.hpp"
#include "attn_sieve/layer_select.hpp"
#include "attn_sieve/mixture.hpp"
#include "attn_sieve/tensor_store.hpp"

namespace attn_sieve {

inline constexpr double kDefaultFixedThreshold = 4.5;

enum class Verdict : std::uint8_t { retained, flagged };

enum class CleanStatus { ok, no_sensitive_layer, separation_below_guard };

enum class ClusterMethod { gmm, kmeans, threshold };

inline std::string_view to_string(CleanStatus status) {
  switch (status) {
    case CleanStatus::ok: return "ok";
    case CleanStatus::no_sensitive_layer: return "no_sensitive_layer";
    case CleanStatus::separation_below_guard: return "separation_below_guard";
  }
  return "?";
}

inline std::string_view to_string(ClusterMethod method) {
  switch (method) {
    case ClusterMethod::gmm: return "gmm";
    case ClusterMethod::kmeans: return "kmeans";
    case ClusterMethod::threshold: return "threshold";
  }
  return "?";
}

inline ClusterMethod parse_method(std::string_view name) {
  if (name == "gmm") return ClusterMethod::gmm;
  if (name == "kmeans") return ClusterMethod::kmeans;
  if (name == "threshold") return ClusterMethod::threshold;
  fail(ErrorKind::usage, "unknown method '" + std::string(name) +
                             "' (expected gmm, kmeans or threshold)");
}

// Mean entropy over the given layers, summed in list order.
inline std::vector<double> aggregate_entropy(
    const EntropyMatrix& matrix, std::span<const std::size_t> layers) {
  if (layers.empty()) {
    fail(ErrorKind::degenerate, "no sensitive layer to aggregate over");
  }
  for (std::size_t l : layers) {
    if (l >= matrix.n_layers) {
      fail(ErrorKind::usage, "layer index " + std::to_string(l) +
                                 " out of range (L=" +
                                 std::to_string(matrix.n_layers) + ")");
    }
  }
  std::vector<double> out(matrix.n_samples);
  const double count = static_cast<double>(layers.size());
  for (std::size_t i = 0; i < matrix.n_samples; ++i) {
    double sum = 0.0;
    for (std::size_t l : layers) sum += matrix.at(i, l);
    out[i] = sum / count;
  }
  return out;
}

struct CleanOptions {
  ClusterMethod method = ClusterMethod::gmm;
  double fixed_threshold = kDefaultFixedThreshold;
  std::optional<double> guard_bsi;
  GmmConfig gmm;
};

struct CleanReport {
  CleanStatus status = CleanStatus::ok;
  ClusterMethod method = ClusterMethod::gmm;
  std::vector<double> aggregated_entropy;  // empty when no sensitive layer
  std::optional<MixtureFit> sample_fit;
  std::vector<double> responsibility_low;
  std::vector<Verdict> flags;
  double guard_bsi = 0.0;  // BSI of sample_fit

  std::size_t flagged_count() const {
    std::size_t n = 0;
    for (auto v : flags) n += v == Verdict::flagged;
    return n;
  }
};

struct CleanResult {
  CleanReport report;
  SampleManifest purified;
};

inline SampleManifest purify(const SampleManifest& manifest,
                             std::span<const Verdict> flags) {
  SampleManifest out;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (flags[i] == Verdict::retained) {
      ManifestEntry e = manifest.entries[i];
      e.index = out.entries.size();
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

// The sample-level GMM is always fitted: it drives the default method,
// supplies the guard BSI and the exported responsibilities for the others.
// A degenerate aggregate (every sample equal) is an error, never an empty or
// arbitrary flag set.
inline CleanResult clean(const EntropyMatrix& matrix,
                         const SensitivitySelection& selection,
                         const SampleManifest& manifest,
                         const CleanOptions& options = {}) {
  if (manifest.size() != matrix.n_samples) {
    fail(ErrorKind::format, "manifest has " + std::to_string(manifest.size()) +
                                " entries but entropy matrix has " +
                                std::to_string(matrix.n_samples) + " samples");
  }
  if (matrix.n_samples < 4) {
    fail(ErrorKind::degenerate, "cleaning needs at least 4 samples");
  }

  CleanResult result;
  CleanReport& report = result.report;
  report.method = options.method;
  report.flags.assign(matrix.n_samples, Verdict::retained);

  if (selection.sensitive_layers.empty()) {
    report.status = CleanStatus::no_sensitive_layer;
    result.purified = purify(manifest, report.flags);
    return result;
  }

  report.aggregated_entropy = aggregate_entropy(matrix, selection.sensitive_layers);
  const auto& h = report.aggregated_entropy;
  report.sample_fit = fit_gmm2(h, options.gmm);
  report.guard_bsi = bsi(*report.sample_fit);
  auto assignment = assign(*report.sample_fit, h);
  report.responsibility_low = std::move(assignment.responsibility_low);

  if (options.guard_bsi && report.guard_bsi < *options.guard_bsi) {
    report.status = CleanStatus::separation_below_guard;
    result.purified = purify(manifest, report.flags);
    return result;
  }

  std::vector<Cluster> labels;
  switch (options.method) {
    case ClusterMethod::gmm: labels = std::move(assignment.labels); break;
    case ClusterMethod::kmeans: labels = fit_kmeans2(h).labels; break;
    case ClusterMethod::threshold:
      labels = threshold_classify(h, options.fixed_threshold);
      break;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Cluster::low) report.flags[i] = Verdict::flagged;
  }
  result.purified = purify(manifest, report.flags);
  return result;
}

inline std::string clean_summary(const CleanReport& report) {
  const std::size_t flagged = report.flagged_count();
  return "status " + std::string(to_string(report.status)) + " method " +
         std::string(to_string(report.method)) + " flagged " +
         std::to_string(flagged) + " retained " +
         std::to_string(report.flags.size() - flagged) + " total " +
         std::to_string(report.flags.size()) + " guard_bsi " +
         (report.sample_fit ? detail::format_g(report.guard_bsi) : "-");
}

// Summary line (`# ...`), then `sample_id aggregated_entropy
// responsibility_low verdict` per sample.
inline void write_clean_report(const CleanReport& report,
                               const SampleManifest& manifest,
                               std::ostream& out) {
  out << "# " << clean_summary(report) << '\n';
  for (std::size_t i = 0; i < report.flags.size(); ++i) {
    out << manifest.entries[i].sample_id << ' ';
    if (report.aggregated_entropy.empty()) {
      out << "- -";
    } else {
      out << detail::format_g(report.aggregated_entropy[i]) << ' '
          << detail::format_g(report.responsibility_low[i]);
    }
    out << ' ' << (report.flags[i] == Verdict::flagged ? "flagged" : "retained")
        << '\n';
  }
}

struct ReportVerdict {
  std::string sample_id;
  Verdict verdict = Verdict::retained;
};

inline std::vector<ReportVerdict> read_clean_report(std::istream& in) {
  std::vector<ReportVerdict> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto fields = detail::split(text, ' ');
    if (fields.size() != 4) {
      fail(ErrorKind::format,
           "clean report line " + std::to_string(line_no) + ": expected 4 fields");
    }
    ReportVerdict v{std::string(fields[0]), Verdict::retained};
    if (fields[3] == "flagged") {
      v.verdict = Verdict::flagged;
    } else if (fields[3] != "retained") {
      fail(ErrorKind::format, "clean report line " + std::to_string(line_no) +
                                  ": unknown verdict '" + std::string(fields[3]) +
                                  "'");
    }
    out.push_back(std::move(v));
  }
  return out;
}

// Equal-width histogram of the aggregated entropy split by verdict, as CSV
// `bin_lo,bin_hi,flagged,retained`.
inline void write_histogram_csv(const CleanReport& report, std::size_t bins,
                                std::ostream& out) {
  out << "bin_lo,bin_hi,flagged,retained\n";
  const auto& h = report.aggregated_entropy;
  if (h.empty() || bins == 0) return;
  const auto [lo_it, hi_it] = std::minmax_element(h.begin(), h.end());
  const double lo = *lo_it;
  const double width = (*hi_it > lo) ? (*hi_it - lo) / static_cast<double>(bins) : 1.0;
  std::vector<std::array<std::size_t, 2>> counts(bins, {0, 0});
  for (std::size_t i = 0; i < h.size(); ++i) {
    auto b = static_cast<std::size_t>((h[i] - lo) / width);
    b = std::min(b, bins - 1);
    ++counts[b][report.flags[i] == Verdict::flagged ? 0 : 1];
  }
  for (std::size_t b = 0; b < bins; ++b) {
    out << detail::format_g(lo + width * static_cast<double>(b)) << ','
        << detail::format_g(lo + width * static_cast<double>(b + 1)) << ','
        << counts[b][0] << ',' << counts[b][1] << '\n';
  }
}

}  // namespace attn_sieve

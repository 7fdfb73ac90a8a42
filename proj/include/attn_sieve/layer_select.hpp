#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "attn_sieve/detail/util.hpp"
#include "attn_sieve/entropy.hpp"
#include "attn_sieve/mixture.hpp"

namespace attn_sieve {

inline constexpr double kDefaultTauBsi = 2.0;

// Bimodal separation index: |mu1 - mu2| / sqrt(var1 + var2).
inline double bsi(const MixtureFit& fit) {
  return std::abs(fit.means[0] - fit.means[1]) /
         std::sqrt(fit.variances[0] + fit.variances[1]);
}

struct LayerProfile {
  std::size_t layer = 0;
  std::optional<MixtureFit> fit;  // empty when the column was degenerate
  double bsi = 0.0;
  bool sensitive = false;
};

struct SensitivitySelection {
  double tau_bsi = kDefaultTauBsi;
  std::vector<LayerProfile> profiles;
  std::vector<std::size_t> sensitive_layers;
  std::vector<std::string> warnings;

  bool empty() const { return sensitive_layers.empty(); }

  bool all_degenerate() const {
    for (const auto& p : profiles) {
      if (p.fit) return false;
    }
    return true;
  }
};

// Re-applies a threshold to existing per-layer fits.
inline SensitivitySelection select_layers(SensitivitySelection selection,
                                          double tau_bsi) {
  if (!std::isfinite(tau_bsi) || tau_bsi < 0.0) {
    fail(ErrorKind::usage, "tau_bsi must be a finite non-negative number");
  }
  selection.tau_bsi = tau_bsi;
  selection.sensitive_layers.clear();
  for (auto& p : selection.profiles) {
    p.sensitive = p.fit.has_value() && p.bsi >= tau_bsi;
    if (p.sensitive) selection.sensitive_layers.push_back(p.layer);
  }
  return selection;
}

inline SensitivitySelection profile_layers(const EntropyMatrix& matrix,
                                           double tau_bsi = kDefaultTauBsi,
                                           unsigned threads = 1,
                                           const GmmConfig& config = {}) {
  if (matrix.n_samples < 4) {
    fail(ErrorKind::degenerate, "layer profiling needs at least 4 samples, got " +
                                    std::to_string(matrix.n_samples));
  }
  SensitivitySelection selection;
  selection.profiles.resize(matrix.n_layers);
  std::vector<std::string> failures(matrix.n_layers);
  detail::parallel_for(matrix.n_layers, threads, [&](std::size_t l) {
    auto& profile = selection.profiles[l];
    profile.layer = l;
    const auto column = matrix.column(l);
    try {
      profile.fit = fit_gmm2(column, config);
      profile.bsi = bsi(*profile.fit);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
      failures[l] = e.what();
    }
  });
  for (std::size_t l = 0; l < matrix.n_layers; ++l) {
    if (!failures[l].empty()) {
      selection.warnings.push_back("layer " + std::to_string(l) +
                                   " scored bsi=0: " + failures[l]);
    }
  }
  return select_layers(std::move(selection), tau_bsi);
}

inline std::string selection_summary(const SensitivitySelection& selection) {
  std::string line = "tau_bsi " + detail::format_g(selection.tau_bsi) + " ";
  if (selection.empty()) return line + "no sensitive layer detected";
  line += "sensitive";
  for (std::size_t i = 0; i < selection.sensitive_layers.size(); ++i) {
    line += (i == 0 ? " " : ",") + std::to_string(selection.sensitive_layers[i]);
  }
  return line;
}

// One record per layer, `layer bsi sensitive pi1 pi2 mu1 mu2 var1 var2`
// (fit fields are `-` for degenerate layers), then the summary line.
inline void write_selection_report(const SensitivitySelection& selection,
                                   std::ostream& out) {
  using detail::format_g;
  for (const auto& p : selection.profiles) {
    out << p.layer << ' ' << format_g(p.bsi) << ' ' << (p.sensitive ? 1 : 0);
    if (p.fit) {
      out << ' ' << format_g(p.fit->weights[0]) << ' '
          << format_g(p.fit->weights[1]) << ' ' << format_g(p.fit->means[0])
          << ' ' << format_g(p.fit->means[1]) << ' '
          << format_g(p.fit->variances[0]) << ' '
          << format_g(p.fit->variances[1]);
    } else {
      out << " - - - - - -";
    }
    out << '\n';
  }
  out << "# " << selection_summary(selection) << '\n';
}

}  // namespace attn_sieve

#pragma once

// One-dimensional two-cluster models: Gaussian mixture by EM, Lloyd
// K-Means, and a fixed cut. Component/cluster 0 is always the low one.

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "attn_sieve/detail/util.hpp"
#include "attn_sieve/error.hpp"

namespace attn_sieve {

enum class Cluster : std::uint8_t { low, high };

struct MixtureFit {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<double, 2> means{0.0, 0.0};
  std::array<double, 2> variances{1.0, 1.0};
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct GmmConfig {
  int max_iter = 500;
  double tol = 1e-8;  // relative log-likelihood improvement
};

namespace detail {

inline double log_normal_pdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + d * d / variance);
}

inline double log_add(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -INFINITY) return hi;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

inline Moments moments(std::span<const double> data) {
  Moments m;
  for (double x : data) m.mean += x;
  m.mean /= static_cast<double>(data.size());
  for (double x : data) m.variance += (x - m.mean) * (x - m.mean);
  m.variance /= static_cast<double>(data.size());
  return m;
}

inline void require_finite(std::span<const double> data, const char* who) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      fail(ErrorKind::format, std::string(who) + ": non-finite value at position " +
                                  std::to_string(i));
    }
  }
}

}  // namespace detail

// Variance floor applied in every M-step.
inline double variance_floor(double data_variance) {
  return std::max(1e-6, 1e-4 * data_variance);
}

// EM for a two-component 1-D Gaussian mixture. Initialization is seedless:
// means at the 10th/90th percentiles, both variances at the data variance,
// equal weights. Stops when the relative log-likelihood gain drops below
// config.tol or after config.max_iter M-steps. If `trace` is given it
// receives the log-likelihood before the first and after every M-step.
inline MixtureFit fit_gmm2(std::span<const double> data,
                           const GmmConfig& config = {},
                           std::vector<double>* trace = nullptr) {
  if (data.size() < 4) {
    fail(ErrorKind::degenerate, "degenerate data for mixture fit: need at least "
                                "4 points, got " + std::to_string(data.size()));
  }
  detail::require_finite(data, "fit_gmm2");
  std::vector<double> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    fail(ErrorKind::degenerate,
         "degenerate data for mixture fit: all values equal (" +
             detail::format_g(sorted.front()) + ")");
  }
  const auto overall = detail::moments(data);
  const double floor = variance_floor(overall.variance);

  MixtureFit fit;
  fit.means = {detail::sorted_percentile(sorted, 0.10),
               detail::sorted_percentile(sorted, 0.90)};
  fit.variances = {std::max(overall.variance, floor),
                   std::max(overall.variance, floor)};
  fit.weights = {0.5, 0.5};

  const std::size_t n = data.size();
  std::vector<double> resp_low(n);
  if (trace) trace->clear();

  double previous = 0.0;
  for (int step = 0;; ++step) {
    // E-step at the current parameters.
    double ll = 0.0;
    const double log_w0 = std::log(fit.weights[0]);
    const double log_w1 = std::log(fit.weights[1]);
    for (std::size_t i = 0; i < n; ++i) {
      const double a =
          log_w0 + detail::log_normal_pdf(data[i], fit.means[0], fit.variances[0]);
      const double b =
          log_w1 + detail::log_normal_pdf(data[i], fit.means[1], fit.variances[1]);
      const double total = detail::log_add(a, b);
      resp_low[i] = std::exp(a - total);
      ll += total;
    }
    if (trace) trace->push_back(ll);
    fit.log_likelihood = ll;
    if (step > 0) {
      const double gain = ll - previous;
      assert(gain >= -1e-9 * std::max(1.0, std::abs(previous)));
      if (gain < config.tol * std::max(std::abs(previous), 1e-300)) {
        fit.converged = true;
        break;
      }
    }
    if (fit.iterations >= config.max_iter) break;
    previous = ll;

    // M-step.
    std::array<double, 2> mass{0.0, 0.0};
    std::array<double, 2> weighted_sum{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      mass[0] += resp_low[i];
      mass[1] += 1.0 - resp_low[i];
      weighted_sum[0] += resp_low[i] * data[i];
      weighted_sum[1] += (1.0 - resp_low[i]) * data[i];
    }
    std::array<double, 2> means = fit.means;
    for (int k = 0; k < 2; ++k) {
      if (mass[k] > 0.0) means[k] = weighted_sum[k] / mass[k];
    }
    std::array<double, 2> spread{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const double d0 = data[i] - means[0];
      const double d1 = data[i] - means[1];
      spread[0] += resp_low[i] * d0 * d0;
      spread[1] += (1.0 - resp_low[i]) * d1 * d1;
    }
    for (int k = 0; k < 2; ++k) {
      fit.means[k] = means[k];
      if (mass[k] > 0.0) {
        fit.variances[k] = std::max(spread[k] / mass[k], floor);
      }
      fit.weights[k] = mass[k] / static_cast<double>(n);
    }
    ++fit.iterations;
  }

  if (fit.means[0] > fit.means[1]) {
    std::swap(fit.means[0], fit.means[1]);
    std::swap(fit.variances[0], fit.variances[1]);
    std::swap(fit.weights[0], fit.weights[1]);
  }
  return fit;
}

struct Assignment {
  std::vector<Cluster> labels;
  std::vector<double> responsibility_low;
};

// Posterior responsibility of the low component at x.
inline double responsibility_low(const MixtureFit& fit, double x) {
  const double a = std::log(fit.weights[0]) +
                   detail::log_normal_pdf(x, fit.means[0], fit.variances[0]);
  const double b = std::log(fit.weights[1]) +
                   detail::log_normal_pdf(x, fit.means[1], fit.variances[1]);
  return std::exp(a - detail::log_add(a, b));
}

// Label rule: between the two means a point is `low` when the low
// component's weighted density is at least the high one's (ties go low).
// Below the low mean a point is always `low`, above the high mean always
// `high`; with unequal variances the posterior can cross a second time in a
// far tail, and that crossing must not flip a fully collapsed sample to the
// clean side.
inline Cluster label_for(const MixtureFit& fit, double x) {
  if (x <= fit.means[0]) return Cluster::low;
  if (x > fit.means[1]) return Cluster::high;
  const double a = std::log(fit.weights[0]) +
                   detail::log_normal_pdf(x, fit.means[0], fit.variances[0]);
  const double b = std::log(fit.weights[1]) +
                   detail::log_normal_pdf(x, fit.means[1], fit.variances[1]);
  return a >= b ? Cluster::low : Cluster::high;
}

inline Assignment assign(const MixtureFit& fit, std::span<const double> data) {
  Assignment out;
  out.labels.reserve(data.size());
  out.responsibility_low.reserve(data.size());
  for (double x : data) {
    out.labels.push_back(label_for(fit, x));
    out.responsibility_low.push_back(responsibility_low(fit, x));
  }
  return out;
}

// "pi1 pi2 mu1 mu2 var1 var2 loglik iters converged"
inline std::string to_record(const MixtureFit& fit) {
  using detail::format_g;
  return format_g(fit.weights[0]) + ' ' + format_g(fit.weights[1]) + ' ' +
         format_g(fit.means[0]) + ' ' + format_g(fit.means[1]) + ' ' +
         format_g(fit.variances[0]) + ' ' + format_g(fit.variances[1]) + ' ' +
         format_g(fit.log_likelihood) + ' ' + std::to_string(fit.iterations) +
         ' ' + (fit.converged ? "1" : "0");
}

// ---------------------------------------------------------------------------

struct KMeansFit {
  std::array<double, 2> centers{0.0, 0.0};
  std::vector<Cluster> labels;
  int iterations = 0;
};

// Lloyd's algorithm with k = 2, centers seeded at the 10th/90th percentiles
// and iterated until the labeling stops changing. Equidistant points go low.
inline KMeansFit fit_kmeans2(std::span<const double> data) {
  if (data.size() < 2) {
    fail(ErrorKind::degenerate, "k-means needs at least 2 points");
  }
  detail::require_finite(data, "fit_kmeans2");
  std::vector<double> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    fail(ErrorKind::degenerate, "degenerate data for k-means: all values equal");
  }

  KMeansFit fit;
  fit.centers = {detail::sorted_percentile(sorted, 0.10),
                 detail::sorted_percentile(sorted, 0.90)};
  if (fit.centers[0] == fit.centers[1]) {
    fit.centers = {sorted.front(), sorted.back()};
  }

  auto nearest = [&](double x) {
    return std::abs(x - fit.centers[0]) <= std::abs(x - fit.centers[1])
               ? Cluster::low
               : Cluster::high;
  };

  fit.labels.assign(data.size(), Cluster::low);
  for (std::size_t i = 0; i < data.size(); ++i) fit.labels[i] = nearest(data[i]);

  constexpr int kMaxIter = 10000;
  while (fit.iterations < kMaxIter) {
    std::array<double, 2> sum{0.0, 0.0};
    std::array<std::size_t, 2> count{0, 0};
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto k = static_cast<std::size_t>(fit.labels[i]);
      sum[k] += data[i];
      ++count[k];
    }
    for (std::size_t k = 0; k < 2; ++k) {
      if (count[k] > 0) fit.centers[k] = sum[k] / static_cast<double>(count[k]);
    }
    ++fit.iterations;
    bool changed = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Cluster next = nearest(data[i]);
      if (next != fit.labels[i]) {
        fit.labels[i] = next;
        changed = true;
      }
    }
    if (!changed) break;
  }
  if (fit.centers[0] > fit.centers[1]) {
    std::swap(fit.centers[0], fit.centers[1]);
    for (auto& label : fit.labels) {
      label = label == Cluster::low ? Cluster::high : Cluster::low;
    }
  }
  return fit;
}

// `low` iff value < threshold.
inline std::vector<Cluster> threshold_classify(std::span<const double> data,
                                               double threshold) {
  detail::require_finite(data, "threshold_classify");
  std::vector<Cluster> labels;
  labels.reserve(data.size());
  for (double x : data) labels.push_back(x < threshold ? Cluster::low : Cluster::high);
  return labels;
}

}  // namespace attn_sieve

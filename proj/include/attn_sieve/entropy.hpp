#pragma once

// Head averaging and per-slice Shannon entropy (nats) of image-token
// attention.

#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "attn_sieve/detail/util.hpp"
#include "attn_sieve/error.hpp"
#include "attn_sieve/tensor_store.hpp"

namespace attn_sieve {

inline constexpr double kSimplexTolerance = 1e-5;

// Element-wise mean over the head axis of an H x T block. The mean is
// accumulated in double and stored as f32, the same precision a
// head-averaged ATNE file carries, so averaging here or upstream gives
// identical downstream entropies.
inline std::vector<float> average_heads(std::span<const float> rows,
                                        std::size_t n_heads) {
  if (n_heads == 0) fail(ErrorKind::format, "average_heads: zero heads");
  if (rows.size() % n_heads != 0) {
    fail(ErrorKind::format, "average_heads: row block is not H x T");
  }
  const std::size_t n_tokens = rows.size() / n_heads;
  std::vector<float> out(n_tokens);
  for (std::size_t t = 0; t < n_tokens; ++t) {
    double sum = 0.0;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const float v = rows[h * n_tokens + t];
      if (!std::isfinite(v)) {
        fail(ErrorKind::format, "average_heads: non-finite value at head " +
                                    std::to_string(h) + ", token " +
                                    std::to_string(t));
      }
      sum += v;
    }
    out[t] = static_cast<float>(sum / static_cast<double>(n_heads));
  }
  return out;
}

template <typename T>
std::vector<double> normalize_distribution(std::span<const T> raw) {
  double sum = 0.0;
  for (std::size_t t = 0; t < raw.size(); ++t) {
    const double v = static_cast<double>(raw[t]);
    if (!std::isfinite(v)) {
      fail(ErrorKind::format, "non-finite attention value at token " +
                                  std::to_string(t));
    }
    if (v < 0.0) {
      fail(ErrorKind::format,
           "negative attention value at token " + std::to_string(t));
    }
    sum += v;
  }
  if (!(sum > 0.0)) fail(ErrorKind::degenerate, "degenerate attention slice");
  std::vector<double> out(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    out[t] = static_cast<double>(raw[t]) / sum;
  }
  return out;
}

inline std::vector<double> normalize_distribution(std::span<const double> raw) {
  return normalize_distribution<double>(raw);
}

// -sum p ln p with 0 ln 0 = 0 (zero entries are skipped).
inline double shannon_entropy(std::span<const double> p) {
  double sum = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t] < 0.0 || !std::isfinite(p[t])) {
      fail(ErrorKind::format,
           "probability entry " + std::to_string(t) + " is not in [0, 1]");
    }
    sum += p[t];
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    fail(ErrorKind::format, "distribution sums to " + detail::format_g(sum) +
                                ", not 1 (normalize first)");
  }
  double acc = 0.0;
  for (double v : p) {
    if (v > 0.0) acc += v * std::log(v);
  }
  return -acc + 0.0;  // +0.0 turns -0 into 0 for one-hot slices
}

struct EntropyMatrix {
  std::size_t n_samples = 0;
  std::size_t n_layers = 0;
  std::vector<double> values;  // row-major [sample][layer]

  EntropyMatrix() = default;
  EntropyMatrix(std::size_t samples, std::size_t layers)
      : n_samples(samples), n_layers(layers), values(samples * layers, 0.0) {}

  double& at(std::size_t sample, std::size_t layer) {
    return values[sample * n_layers + layer];
  }
  double at(std::size_t sample, std::size_t layer) const {
    return values[sample * n_layers + layer];
  }

  std::vector<double> column(std::size_t layer) const {
    std::vector<double> out(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) out[i] = at(i, layer);
    return out;
  }
};

// Entropy of one stored (sample, layer) cell, head-averaging first when the
// set carries per-head maps.
inline double slice_entropy(const AttentionTensorSet& set, std::size_t sample,
                            std::size_t layer) {
  const auto stored = set.slice(sample, layer);
  std::vector<float> averaged;
  std::span<const float> row = stored;
  if (set.per_head) {
    averaged = average_heads(stored, set.n_heads);
    row = averaged;
  }
  if (set.renormalized) {
    double sum = 0.0;
    for (float v : row) sum += v;
    if (std::abs(sum - 1.0) > kSimplexTolerance) {
      fail(ErrorKind::format, "slice flagged renormalized sums to " +
                                  detail::format_g(sum));
    }
  }
  const auto p = normalize_distribution<float>(row);
  return shannon_entropy(p);
}

inline EntropyMatrix entropy_matrix(const AttentionTensorSet& set,
                                    unsigned threads = 1) {
  validate(set);
  EntropyMatrix matrix(static_cast<std::size_t>(set.n_samples), set.n_layers);
  const std::size_t cells = matrix.values.size();
  detail::parallel_for(cells, threads, [&](std::size_t cell) {
    const std::size_t sample = cell / set.n_layers;
    const std::size_t layer = cell % set.n_layers;
    try {
      matrix.values[cell] = slice_entropy(set, sample, layer);
    } catch (const Error& e) {
      throw Error(e.kind(), "slice (sample " + std::to_string(sample) +
                                ", layer " + std::to_string(layer) +
                                "): " + e.what());
    }
  });
  return matrix;
}

// CSV: `sample_id,layer_0,...,layer_{L-1}`, 9 significant digits.
inline void write_entropy_csv(const EntropyMatrix& matrix,
                              const SampleManifest& manifest,
                              std::ostream& out) {
  if (manifest.size() != matrix.n_samples) {
    fail(ErrorKind::format, "manifest has " + std::to_string(manifest.size()) +
                                " entries but matrix has " +
                                std::to_string(matrix.n_samples) + " samples");
  }
  out << "sample_id";
  for (std::size_t l = 0; l < matrix.n_layers; ++l) out << ",layer_" << l;
  out << '\n';
  for (std::size_t i = 0; i < matrix.n_samples; ++i) {
    out << manifest.entries[i].sample_id;
    for (std::size_t l = 0; l < matrix.n_layers; ++l) {
      out << ',' << detail::format_g(matrix.at(i, l));
    }
    out << '\n';
  }
}

}  // namespace attn_sieve

#pragma once

// Synthetic labeled attention sets. Attacks are modeled at the attention
// level: a poisoned sample puts a fixed share of its image-token attention
// on the trigger tokens in the sensitive layers, everything else is drawn
// from a symmetric Dirichlet.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "attn_sieve/detail/util.hpp"
#include "attn_sieve/entropy.hpp"
#include "attn_sieve/error.hpp"
#include "attn_sieve/random.hpp"
#include "attn_sieve/tensor_store.hpp"

namespace attn_sieve {

enum class AttackVariant { single, fixed_dual, varied_multi, random_position, texture_like };

inline std::string_view to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::single: return "single";
    case AttackVariant::fixed_dual: return "fixed_dual";
    case AttackVariant::varied_multi: return "varied_multi";
    case AttackVariant::random_position: return "random_position";
    case AttackVariant::texture_like: return "texture_like";
  }
  return "?";
}

inline AttackVariant parse_variant(std::string_view name) {
  for (auto v : {AttackVariant::single, AttackVariant::fixed_dual,
                 AttackVariant::varied_multi, AttackVariant::random_position,
                 AttackVariant::texture_like}) {
    if (name == to_string(v)) return v;
  }
  fail(ErrorKind::usage, "unknown attack_variant '" + std::string(name) + "'");
}

// Number of trigger blocks a variant places.
inline std::uint32_t block_multiplicity(AttackVariant v) {
  switch (v) {
    case AttackVariant::fixed_dual: return 2;
    case AttackVariant::varied_multi: return 4;
    default: return 1;
  }
}

// Anchor positions available to varied_multi.
inline constexpr std::uint32_t kMultiTriggerGrid = 9;

struct ScenarioConfig {
  std::size_t n_samples = 1000;
  std::uint32_t n_layers = 32;
  std::uint32_t n_tokens = 576;
  double poison_rate = 0.10;
  std::optional<std::uint32_t> trigger_token_count;  // default ceil(T/256)
  double trigger_mass = 0.8;
  std::optional<std::vector<std::uint32_t>> sensitive_layers;  // default: middle L/4
  double clean_concentration = 1.0;
  // Std-dev of a per-sample log-concentration shift applied in layers
  // outside the sensitive mask: content-driven variation of how focused
  // clean attention is, shared by all those layers of one sample.
  double background_spread = 0.5;
  AttackVariant attack_variant = AttackVariant::single;
  std::uint64_t rng_seed = 1;

  std::uint32_t trigger_tokens() const {
    return trigger_token_count.value_or((n_tokens + 255) / 256);
  }

  std::vector<std::uint32_t> mask() const {
    if (sensitive_layers) return *sensitive_layers;
    const std::uint32_t count = std::max<std::uint32_t>(1, n_layers / 4);
    std::vector<std::uint32_t> out(count);
    std::iota(out.begin(), out.end(), (n_layers - count) / 2);
    return out;
  }

  std::size_t poisoned_count() const {
    // The epsilon keeps products like 0.29 * 100 from flooring to 28.
    return static_cast<std::size_t>(
        std::floor(poison_rate * static_cast<double>(n_samples) + 1e-9));
  }

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorKind::usage, what); };
    if (n_samples < 1 || n_layers < 1 || n_tokens < 2) {
      bad("scenario needs n_samples >= 1, n_layers >= 1, n_tokens >= 2");
    }
    if (!(poison_rate >= 0.0 && poison_rate <= 1.0)) bad("poison_rate must be in [0, 1]");
    if (!(trigger_mass > 0.0 && trigger_mass <= 1.0)) bad("trigger_mass must be in (0, 1]");
    if (!(clean_concentration > 0.0) || !std::isfinite(clean_concentration)) {
      bad("clean_concentration must be positive");
    }
    if (!(background_spread >= 0.0) || !std::isfinite(background_spread)) {
      bad("background_spread must be non-negative");
    }
    const std::uint32_t k = trigger_tokens();
    if (k < 1) bad("trigger_token_count must be >= 1");
    const std::uint64_t used = std::uint64_t{k} * block_multiplicity(attack_variant);
    if (used > n_tokens) {
      bad("trigger blocks exceed T: " + std::to_string(used) + " tokens > " +
          std::to_string(n_tokens));
    }
    if (attack_variant == AttackVariant::varied_multi &&
        std::uint64_t{k} * (kMultiTriggerGrid - 1) > n_tokens - k) {
      bad("trigger blocks exceed T: varied_multi grid cannot hold blocks of " +
          std::to_string(k) + " tokens");
    }
    if (trigger_mass < 1.0 && used == n_tokens) {
      bad("trigger blocks cover every token; no room for residual attention");
    }
    const auto layers = mask();
    for (auto l : layers) {
      if (l >= n_layers) bad("sensitive layer " + std::to_string(l) + " >= n_layers");
    }
    if (poisoned_count() > 0 && layers.empty()) {
      bad("poisoned scenario needs a non-empty sensitive_layers mask");
    }
  }
};

// Flat key=value text, `#` comments. Unknown keys are rejected.
inline ScenarioConfig parse_scenario(std::istream& in) {
  ScenarioConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = detail::trim(line);
    if (const auto hash = text.find('#'); hash != std::string_view::npos) {
      text = detail::trim(text.substr(0, hash));
    }
    if (text.empty()) continue;
    const auto eq = text.find('=');
    const std::string where = "scenario line " + std::to_string(line_no);
    if (eq == std::string_view::npos) fail(ErrorKind::usage, where + ": expected key=value");
    const std::string key(detail::trim(text.substr(0, eq)));
    const std::string value(detail::trim(text.substr(eq + 1)));
    auto number = [&]() -> double {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        fail(ErrorKind::usage, where + ": key '" + key + "' needs a number, got '" +
                                   value + "'");
      }
    };
    auto count = [&]() -> std::uint64_t {
      try {
        std::size_t used = 0;
        if (value.empty() || value.front() == '-') throw std::invalid_argument(value);
        const auto v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        fail(ErrorKind::usage, where + ": key '" + key +
                                   "' needs a non-negative integer, got '" + value + "'");
      }
    };
    if (key == "n_samples") {
      cfg.n_samples = count();
    } else if (key == "n_layers") {
      cfg.n_layers = static_cast<std::uint32_t>(count());
    } else if (key == "n_tokens") {
      cfg.n_tokens = static_cast<std::uint32_t>(count());
    } else if (key == "poison_rate") {
      cfg.poison_rate = number();
    } else if (key == "trigger_token_count") {
      cfg.trigger_token_count = static_cast<std::uint32_t>(count());
    } else if (key == "trigger_mass") {
      cfg.trigger_mass = number();
    } else if (key == "sensitive_layers") {
      // Comma list of indices and inclusive ranges, e.g. "12-19" or "3,5,7".
      std::vector<std::uint32_t> layers;
      for (auto part : detail::split(value, ',')) {
        part = detail::trim(part);
        if (part.empty()) continue;
        const auto dash = part.find('-');
        try {
          if (dash == std::string_view::npos) {
            layers.push_back(static_cast<std::uint32_t>(std::stoul(std::string(part))));
          } else {
            const auto lo = std::stoul(std::string(part.substr(0, dash)));
            const auto hi = std::stoul(std::string(part.substr(dash + 1)));
            if (hi < lo) throw std::invalid_argument("range");
            for (auto l = lo; l <= hi; ++l) layers.push_back(static_cast<std::uint32_t>(l));
          }
        } catch (const std::exception&) {
          fail(ErrorKind::usage, where + ": bad sensitive_layers entry '" +
                                     std::string(part) + "'");
        }
      }
      std::sort(layers.begin(), layers.end());
      layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
      cfg.sensitive_layers = std::move(layers);
    } else if (key == "clean_concentration") {
      cfg.clean_concentration = number();
    } else if (key == "background_spread") {
      cfg.background_spread = number();
    } else if (key == "attack_variant") {
      cfg.attack_variant = parse_variant(value);
    } else if (key == "rng_seed") {
      cfg.rng_seed = count();
    } else {
      fail(ErrorKind::usage, where + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline void write_scenario(const ScenarioConfig& cfg, std::ostream& out) {
  using detail::format_g;
  out << "n_samples=" << cfg.n_samples << '\n'
      << "n_layers=" << cfg.n_layers << '\n'
      << "n_tokens=" << cfg.n_tokens << '\n'
      << "poison_rate=" << format_g(cfg.poison_rate, 17) << '\n'
      << "trigger_token_count=" << cfg.trigger_tokens() << '\n'
      << "trigger_mass=" << format_g(cfg.trigger_mass, 17) << '\n'
      << "sensitive_layers=";
  const auto layers = cfg.mask();
  for (std::size_t i = 0; i < layers.size(); ++i) out << (i ? "," : "") << layers[i];
  out << '\n'
      << "clean_concentration=" << format_g(cfg.clean_concentration, 17) << '\n'
      << "background_spread=" << format_g(cfg.background_spread, 17) << '\n'
      << "attack_variant=" << to_string(cfg.attack_variant) << '\n'
      << "rng_seed=" << cfg.rng_seed << '\n';
}

namespace detail {

// Stream tags; layers use their own index as the second coordinate.
inline constexpr std::uint64_t kTagSlice = 1;
inline constexpr std::uint64_t kTagPoisonPick = 2;
inline constexpr std::uint64_t kTagTriggerPlace = 3;
inline constexpr std::uint64_t kTagBackground = 4;

// Fills `out` with a Dirichlet(alpha) draw scaled to `total`.
inline void dirichlet_fill(random::CounterRng& rng, double alpha, double total,
                           std::span<double> out) {
  if (out.empty()) return;
  double peak = -INFINITY;
  for (auto& v : out) {
    v = rng.log_gamma_variate(alpha);
    peak = std::max(peak, v);
  }
  double sum = 0.0;
  for (auto& v : out) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (auto& v : out) v = total * v / sum;
}

}  // namespace detail

// Token indices carrying the trigger for one poisoned sample, ascending.
inline std::vector<std::uint32_t> trigger_token_set(const ScenarioConfig& cfg,
                                                    std::size_t sample) {
  const std::uint32_t k = cfg.trigger_tokens();
  const std::uint32_t t = cfg.n_tokens;
  std::vector<std::uint32_t> starts;
  random::CounterRng rng(
      random::stream_key(cfg.rng_seed, detail::kTagTriggerPlace, sample));
  switch (cfg.attack_variant) {
    case AttackVariant::single:
      starts = {t - k};
      break;
    case AttackVariant::fixed_dual:
      starts = {0, t - k};
      break;
    case AttackVariant::varied_multi: {
      // Evenly spaced anchors over [0, T - k]; each sample uses a random
      // subset of them.
      std::vector<std::uint32_t> anchors(kMultiTriggerGrid);
      for (std::uint32_t j = 0; j < kMultiTriggerGrid; ++j) {
        anchors[j] = static_cast<std::uint32_t>(
            (std::uint64_t{j} * (t - k)) / (kMultiTriggerGrid - 1));
      }
      const std::uint32_t m = block_multiplicity(cfg.attack_variant);
      for (std::uint32_t j = 0; j < m; ++j) {
        const auto pick = j + rng.below(kMultiTriggerGrid - j);
        std::swap(anchors[j], anchors[pick]);
      }
      starts.assign(anchors.begin(), anchors.begin() + m);
      break;
    }
    case AttackVariant::random_position:
      starts = {static_cast<std::uint32_t>(rng.below(t - k + 1))};
      break;
    case AttackVariant::texture_like: {
      std::vector<std::uint32_t> comb(k);
      const std::uint32_t stride = t / k;
      for (std::uint32_t j = 0; j < k; ++j) comb[j] = j * stride + stride / 2;
      return comb;
    }
  }
  std::vector<std::uint32_t> tokens;
  for (auto s : starts) {
    for (std::uint32_t j = 0; j < k; ++j) tokens.push_back(s + j);
  }
  std::sort(tokens.begin(), tokens.end());
  return tokens;
}

// Which samples carry the trigger: a seeded partial shuffle picks exactly
// poisoned_count() of them.
inline std::vector<bool> poisoned_samples(const ScenarioConfig& cfg) {
  std::vector<std::size_t> order(cfg.n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  random::CounterRng rng(random::stream_key(cfg.rng_seed, detail::kTagPoisonPick));
  const std::size_t k = cfg.poisoned_count();
  std::vector<bool> out(cfg.n_samples, false);
  for (std::size_t j = 0; j < k; ++j) {
    const auto pick = j + static_cast<std::size_t>(rng.below(cfg.n_samples - j));
    std::swap(order[j], order[pick]);
    out[order[j]] = true;
  }
  return out;
}

// One (sample, layer) attention slice on the simplex, in double precision.
inline std::vector<double> generate_slice(const ScenarioConfig& cfg,
                                          std::size_t sample, std::size_t layer,
                                          bool poisoned, bool sensitive_layer) {
  std::vector<double> p(cfg.n_tokens, 0.0);
  random::CounterRng rng(random::stream_key(cfg.rng_seed, detail::kTagSlice,
                                            sample * cfg.n_layers + layer));
  if (!sensitive_layer) {
    double alpha = cfg.clean_concentration;
    if (cfg.background_spread > 0.0) {
      random::CounterRng bg(
          random::stream_key(cfg.rng_seed, detail::kTagBackground, sample));
      alpha *= std::exp(cfg.background_spread * bg.normal());
    }
    detail::dirichlet_fill(rng, alpha, 1.0, p);
    return p;
  }
  if (!poisoned) {
    detail::dirichlet_fill(rng, cfg.clean_concentration, 1.0, p);
    return p;
  }
  const auto trigger = trigger_token_set(cfg, sample);
  const double share = cfg.trigger_mass / static_cast<double>(trigger.size());
  std::vector<double> rest(cfg.n_tokens - trigger.size());
  detail::dirichlet_fill(rng, cfg.clean_concentration, 1.0 - cfg.trigger_mass, rest);
  std::size_t next_trigger = 0;
  std::size_t next_rest = 0;
  for (std::uint32_t t = 0; t < cfg.n_tokens; ++t) {
    if (next_trigger < trigger.size() && trigger[next_trigger] == t) {
      p[t] = share;
      ++next_trigger;
    } else {
      p[t] = rest[next_rest++];
    }
  }
  return p;
}

struct Scenario {
  AttentionTensorSet tensors;
  SampleManifest manifest;
};

inline Scenario generate(const ScenarioConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  Scenario out;
  auto& set = out.tensors;
  set.n_samples = cfg.n_samples;
  set.n_layers = cfg.n_layers;
  set.n_tokens = cfg.n_tokens;
  set.renormalized = true;
  set.values.assign(set.expected_values(), 0.0f);

  const auto poisoned = poisoned_samples(cfg);
  std::vector<bool> in_mask(cfg.n_layers, false);
  for (auto l : cfg.mask()) in_mask[l] = true;

  detail::parallel_for(cfg.n_samples * cfg.n_layers, threads, [&](std::size_t cell) {
    const std::size_t sample = cell / cfg.n_layers;
    const std::size_t layer = cell % cfg.n_layers;
    const auto p = generate_slice(cfg, sample, layer, poisoned[sample], in_mask[layer]);
    auto dst = set.slice(sample, layer);
    for (std::size_t t = 0; t < p.size(); ++t) dst[t] = static_cast<float>(p[t]);
  });

  const int width = std::max<int>(6, static_cast<int>(std::to_string(cfg.n_samples).size()));
  out.manifest.entries.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    std::string id = std::to_string(i);
    id.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0');
    out.manifest.entries.push_back({i, "sample_" + id, static_cast<bool>(poisoned[i])});
  }
  return out;
}

struct EntropyEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

// Monte-Carlo mean entropy (nats) of Dirichlet(alpha) draws over T tokens.
inline EntropyEstimate expected_clean_entropy(double alpha, std::uint32_t n_tokens,
                                              std::size_t draws = 10000,
                                              std::uint64_t seed = 0x0dd1e7u) {
  if (!(alpha > 0.0)) fail(ErrorKind::usage, "alpha must be positive");
  if (n_tokens < 2) fail(ErrorKind::usage, "T must be >= 2");
  if (draws < 2) fail(ErrorKind::usage, "need at least 2 draws");
  std::vector<double> p(n_tokens);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    random::CounterRng rng(random::stream_key(seed, d));
    detail::dirichlet_fill(rng, alpha, 1.0, p);
    double acc = 0.0;
    for (double v : p) {
      if (v > 0.0) acc -= v * std::log(v);
    }
    sum += acc;
    sum_sq += acc * acc;
  }
  const double n = static_cast<double>(draws);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

}  // namespace attn_sieve

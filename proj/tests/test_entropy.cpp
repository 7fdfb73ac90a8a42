#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "attn_sieve/entropy.hpp"
#include "test_support.hpp"

namespace attn_sieve {
namespace {

TEST(AverageHeads, SingleHeadIsIdentity) {
  const std::vector<float> row = {0.1f, 0.7f, 0.2f};
  EXPECT_EQ(average_heads(row, 1), row);
}

TEST(AverageHeads, TwoOppositeHeads) {
  const std::vector<float> rows = {1.0f, 0.0f, 0.0f, 1.0f};
  EXPECT_EQ(average_heads(rows, 2), (std::vector<float>{0.5f, 0.5f}));
}

TEST(AverageHeads, MatchesReversedOrderSummation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const std::size_t heads = 3, tokens = 50;
  std::vector<float> rows(heads * tokens);
  for (auto& v : rows) v = u(rng);
  const auto mean = average_heads(rows, heads);
  for (std::size_t t = 0; t < tokens; ++t) {
    double oracle = 0.0;
    for (std::size_t h = heads; h-- > 0;) oracle += rows[h * tokens + t];
    EXPECT_NEAR(mean[t], oracle / 3.0, 1e-7);
  }
}

TEST(AverageHeads, Errors) {
  const std::vector<float> rows = {1.0f, NAN};
  EXPECT_THROW(average_heads(rows, 0), Error);
  EXPECT_THROW(average_heads(rows, 1), Error);
  EXPECT_THROW(average_heads(std::vector<float>{1, 2, 3}, 2), Error);
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_distribution(std::vector<double>{2, 2, 2, 2}),
            (std::vector<double>{0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(normalize_distribution(std::vector<double>{1, 0, 0, 0}),
            (std::vector<double>{1, 0, 0, 0}));
  try {
    normalize_distribution(std::vector<double>{0, 0});
    FAIL() << "expected degenerate error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "degenerate attention slice");
  }
  EXPECT_THROW(normalize_distribution(std::vector<double>{1, -1, 2}), Error);
}

TEST(Normalize, SumsToOneAndStaysProportional) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> raw(1 + rng() % 600);
    for (auto& v : raw) v = u(rng);
    const auto p = normalize_distribution(raw);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (std::size_t t = 1; t < raw.size(); ++t) {
      EXPECT_NEAR(p[t] * raw[0], p[0] * raw[t], 1e-12 * raw[0] * raw[t] + 1e-15);
    }
  }
}

TEST(ShannonEntropy, OneHotIsExactlyZero) {
  for (std::size_t t : {1u, 2u, 16u, 576u}) {
    std::vector<double> p(t, 0.0);
    p[t / 2] = 1.0;
    const double h = shannon_entropy(p);
    EXPECT_EQ(h, 0.0);
    EXPECT_FALSE(std::signbit(h));
  }
}

TEST(ShannonEntropy, UniformIsLogT) {
  for (std::size_t t : {2u, 16u, 576u}) {
    const std::vector<double> p(t, 1.0 / static_cast<double>(t));
    EXPECT_NEAR(shannon_entropy(p), std::log(static_cast<double>(t)), 1e-9);
  }
  EXPECT_NEAR(shannon_entropy(std::vector<double>(576, 1.0 / 576)), 6.35611, 1e-5);
}

TEST(ShannonEntropy, DyadicCase) {
  EXPECT_NEAR(shannon_entropy(std::vector<double>{0.5, 0.25, 0.25}),
              1.5 * std::log(2.0), 1e-12);
}

TEST(ShannonEntropy, RejectsOffSimplexInput) {
  EXPECT_THROW(shannon_entropy(std::vector<double>{0.5, 0.6}), Error);
  EXPECT_THROW(shannon_entropy(std::vector<double>{1.2, -0.2}), Error);
  EXPECT_NO_THROW(shannon_entropy(std::vector<double>{0.5, 0.500001}));
}

TEST(ShannonEntropy, PermutationInvariant) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> raw(64);
    for (auto& v : raw) v = u(rng);
    auto p = normalize_distribution(raw);
    const double h = shannon_entropy(p);
    std::shuffle(p.begin(), p.end(), rng);
    EXPECT_NEAR(shannon_entropy(p), h, 1e-12);
  }
}

// Moving mass from a smaller entry onto a larger one yields a distribution
// that majorizes the original, so entropy cannot go up.
TEST(ShannonEntropy, CollapseNeverIncreasesEntropy) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> raw(32);
    for (auto& v : raw) v = u(rng);
    auto p = normalize_distribution(raw);
    const double before = shannon_entropy(p);
    auto i = rng() % p.size();
    auto j = rng() % p.size();
    if (i == j) continue;
    if (p[i] < p[j]) std::swap(i, j);
    const double moved = u(rng) * p[j];
    p[i] += moved;
    p[j] -= moved;
    EXPECT_LE(shannon_entropy(p), before + 1e-12);
  }
}

TEST(ShannonEntropy, RangeIsZeroToLogT) {
  std::mt19937_64 rng(29);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> raw(2 + rng() % 700);
    for (auto& v : raw) v = (rng() % 4 == 0) ? 0.0 : e(rng);
    raw[0] += 1.0;
    const double h = shannon_entropy(normalize_distribution(raw));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(raw.size())) + 1e-9);
  }
}

AttentionTensorSet uniform_set(std::uint64_t n, std::uint32_t layers, std::uint32_t tokens) {
  AttentionTensorSet set;
  set.n_samples = n;
  set.n_layers = layers;
  set.n_tokens = tokens;
  set.values.assign(set.expected_values(), 1.0f / static_cast<float>(tokens));
  return set;
}

TEST(EntropyMatrix, UniformSlicesGiveLog16) {
  const auto m = entropy_matrix(uniform_set(5, 4, 16));
  for (double v : m.values) EXPECT_NEAR(v, std::log(16.0), 1e-9);
  EXPECT_NEAR(m.values.front(), 2.77259, 1e-5);
}

TEST(EntropyMatrix, OneHotSliceOnlyChangesItsCell) {
  auto set = uniform_set(5, 9, 16);
  auto slice = set.slice(3, 7);
  std::fill(slice.begin(), slice.end(), 0.0f);
  slice[4] = 0.3f;  // not normalized on arrival
  const auto m = entropy_matrix(set);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t l = 0; l < 9; ++l) {
      if (i == 3 && l == 7) {
        EXPECT_EQ(m.at(i, l), 0.0);
      } else {
        EXPECT_NEAR(m.at(i, l), std::log(16.0), 1e-9);
      }
    }
  }
}

TEST(EntropyMatrix, MatchesPerSliceOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const bool per_head = trial % 2 == 1;
    const auto set = testing::random_set(rng, per_head);
    const auto m = entropy_matrix(set);
    for (std::size_t s = 0; s < set.n_samples; ++s) {
      for (std::size_t l = 0; l < set.n_layers; ++l) {
        const auto cell = set.slice(s, l);
        std::vector<double> raw(set.n_tokens, 0.0);
        const std::size_t heads = set.heads_stored();
        for (std::size_t t = 0; t < set.n_tokens; ++t) {
          double acc = 0.0;
          for (std::size_t h = 0; h < heads; ++h) acc += cell[h * set.n_tokens + t];
          // Head-averaged maps are stored as f32; mirror that.
          raw[t] = static_cast<float>(acc / static_cast<double>(heads));
        }
        EXPECT_NEAR(m.at(s, l), testing::oracle_entropy(raw), 1e-7);
      }
    }
  }
}

TEST(EntropyMatrix, AveragingAlreadyAveragedSetIsIdentity) {
  std::mt19937_64 rng(37);
  const auto flat = testing::random_set(rng, false);
  auto as_per_head = flat;
  as_per_head.per_head = true;
  as_per_head.n_heads = 1;
  EXPECT_EQ(entropy_matrix(flat).values, entropy_matrix(as_per_head).values);
}

TEST(EntropyMatrix, ThreadCountDoesNotChangeResult) {
  std::mt19937_64 rng(41);
  const auto set = testing::random_set(rng, true);
  EXPECT_EQ(entropy_matrix(set, 1).values, entropy_matrix(set, 4).values);
}

TEST(EntropyMatrix, DegenerateSliceErrorCarriesCoordinates) {
  auto set = uniform_set(3, 3, 4);
  auto slice = set.slice(2, 1);
  std::fill(slice.begin(), slice.end(), 0.0f);
  try {
    entropy_matrix(set);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "slice (sample 2, layer 1): degenerate attention slice");
  }
}

TEST(EntropyMatrix, RenormalizedFlagIsVerified) {
  auto set = uniform_set(2, 2, 4);
  set.renormalized = true;
  EXPECT_NO_THROW(entropy_matrix(set));
  set.slice(1, 0)[0] = 0.5f;
  EXPECT_THROW(entropy_matrix(set), Error);
}

TEST(EntropyMatrix, CsvExport) {
  EntropyMatrix m(2, 3);
  m.at(0, 0) = std::log(576.0);
  m.at(1, 2) = 1.0 / 3.0;
  const auto manifest = default_manifest(2);
  std::ostringstream out;
  write_entropy_csv(m, manifest, out);
  EXPECT_EQ(out.str(),
            "sample_id,layer_0,layer_1,layer_2\n"
            "sample_0,6.35610766,0,0\n"
            "sample_1,0,0,0.333333333\n");
  EXPECT_THROW(write_entropy_csv(m, default_manifest(3), out), Error);
}

}  // namespace
}  // namespace attn_sieve

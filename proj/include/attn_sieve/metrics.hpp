#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attn_sieve/cleaner.hpp"
#include "attn_sieve/detail/util.hpp"
#include "attn_sieve/error.hpp"

namespace attn_sieve {

// Positive class = poisoned = flagged. Rates are fractions in [0, 1].
struct DetectionScore {
  std::uint64_t true_positive = 0;
  std::uint64_t false_positive = 0;
  std::uint64_t false_negative = 0;
  std::uint64_t true_negative = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool undefined_precision = false;  // nothing flagged
  bool undefined_recall = false;     // nothing poisoned
};

inline DetectionScore score_counts(std::uint64_t tp, std::uint64_t fp,
                                   std::uint64_t fn, std::uint64_t tn) {
  DetectionScore s{tp, fp, fn, tn};
  const auto predicted = tp + fp;
  const auto actual = tp + fn;
  s.undefined_precision = predicted == 0;
  s.undefined_recall = actual == 0;
  s.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  s.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

inline DetectionScore score(std::span<const Verdict> flags,
                            std::span<const std::optional<bool>> truth) {
  if (flags.size() != truth.size()) {
    fail(ErrorKind::format, "score: " + std::to_string(flags.size()) +
                                " verdicts vs " + std::to_string(truth.size()) +
                                " labels");
  }
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!truth[i]) {
      fail(ErrorKind::format,
           "score: missing ground-truth label at index " + std::to_string(i));
    }
    const bool flagged = flags[i] == Verdict::flagged;
    const bool poisoned = *truth[i];
    if (flagged && poisoned) ++tp;
    else if (flagged) ++fp;
    else if (poisoned) ++fn;
    else ++tn;
  }
  return score_counts(tp, fp, fn, tn);
}

inline std::string score_note(const DetectionScore& s) {
  if (s.undefined_precision && s.undefined_recall) return "undefined_precision,undefined_recall";
  if (s.undefined_precision) return "undefined_precision";
  if (s.undefined_recall) return "undefined_recall";
  return "-";
}

// `tp fp fn tn precision recall f1 note`, rates as percentages with two
// decimals.
inline std::string to_record(const DetectionScore& s) {
  using detail::format_fixed;
  return std::to_string(s.true_positive) + ' ' + std::to_string(s.false_positive) +
         ' ' + std::to_string(s.false_negative) + ' ' +
         std::to_string(s.true_negative) + ' ' +
         format_fixed(100.0 * s.precision, 2) + ' ' +
         format_fixed(100.0 * s.recall, 2) + ' ' + format_fixed(100.0 * s.f1, 2) +
         ' ' + score_note(s);
}

}  // namespace attn_sieve

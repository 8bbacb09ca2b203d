#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "subseq/core.hpp"

namespace subseq {

// Start of a run of a foreground class. A direct class-to-class transition
// counts as a new onset; no background gap is required.
struct Onset {
  std::size_t position = 0;
  int cls = 0;

  friend bool operator==(const Onset&, const Onset&) = default;
};

inline std::vector<Onset> find_onsets(const LabelSeries& y) {
  std::vector<Onset> onsets;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == LabelSeries::kBackground) continue;
    if (i == 0 || y[i - 1] != y[i]) onsets.push_back({i, y[i]});
  }
  return onsets;
}

// Median of the maximal same-class foreground run lengths; even count takes
// the lower median.
inline std::size_t median_foreground_length(const LabelSeries& y) {
  std::vector<std::size_t> runs;
  std::size_t i = 0;
  while (i < y.size()) {
    if (y[i] == LabelSeries::kBackground) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < y.size() && y[j] == y[i]) ++j;
    runs.push_back(j - i);
    i = j;
  }
  if (runs.empty()) throw ConfigError("median_foreground_length: no foreground runs");
  std::sort(runs.begin(), runs.end());
  return runs[(runs.size() - 1) / 2];
}

struct OnsetScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n_pred_onsets = 0;
  std::size_t n_true_onsets = 0;
};

namespace detail {

// Fraction of `from` onsets with a same-class onset in `to` strictly within
// the tolerance. Each onset is checked independently.
inline double matched_fraction(const std::vector<Onset>& from, const std::vector<Onset>& to,
                               double tolerance) {
  if (from.empty()) return 0.0;
  std::size_t matched = 0;
  for (const Onset& a : from) {
    for (const Onset& b : to) {
      if (a.cls != b.cls) continue;
      const double gap = a.position > b.position
                             ? static_cast<double>(a.position - b.position)
                             : static_cast<double>(b.position - a.position);
      if (gap < tolerance) {
        ++matched;
        break;
      }
    }
  }
  return static_cast<double>(matched) / static_cast<double>(from.size());
}

}  // namespace detail

// Onset precision/recall/F1 with tolerance 0.1 * m_med (strict inequality,
// real-valued, not rounded). Recall swaps the roles of the two series.
inline OnsetScore onset_f1(const LabelSeries& y_pred, const LabelSeries& y_true,
                           std::size_t m_med) {
  if (y_pred.size() != y_true.size()) throw ConfigError("onset_f1: length mismatch");
  if (m_med < 1) throw ConfigError("onset_f1: m_med must be >= 1");
  const double tolerance = 0.1 * static_cast<double>(m_med);
  const auto pred_onsets = find_onsets(y_pred);
  const auto true_onsets = find_onsets(y_true);
  OnsetScore score;
  score.n_pred_onsets = pred_onsets.size();
  score.n_true_onsets = true_onsets.size();
  score.precision = detail::matched_fraction(pred_onsets, true_onsets, tolerance);
  score.recall = detail::matched_fraction(true_onsets, pred_onsets, tolerance);
  score.f1 = (score.precision + score.recall > 0.0)
                 ? 2.0 * score.precision * score.recall / (score.precision + score.recall)
                 : 0.0;
  return score;
}

}  // namespace subseq

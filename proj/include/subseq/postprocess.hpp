#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "subseq/core.hpp"
#include "subseq/metrics.hpp"

namespace subseq {

// Temporal-consistency smoothing: scan the input left to right; at every
// onset overwrite the next `window` positions with the majority class of
// that stretch, then resume scanning past it. Onsets are always detected in
// the input, so the result is a pure function of it.
//
// Positions past the end of the series count as background when taking the
// majority, and genuine ties go to the class appearing earliest in the
// window.
inline LabelSeries smooth_labels(const LabelSeries& y_before, std::size_t window) {
  if (window < 1) throw ConfigError("smooth_labels: window must be >= 1");
  const std::size_t n = y_before.size();
  std::vector<int> after = y_before.labels;
  std::vector<std::size_t> count(static_cast<std::size_t>(y_before.n_classes));
  std::vector<std::size_t> first_pos(static_cast<std::size_t>(y_before.n_classes));
  std::size_t i = 0;
  while (i < n) {
    const bool is_onset = y_before[i] != LabelSeries::kBackground &&
                          (i == 0 || y_before[i - 1] != y_before[i]);
    if (!is_onset) {
      ++i;
      continue;
    }
    const std::size_t hi = std::min(n, i + window);
    std::fill(count.begin(), count.end(), 0);
    std::fill(first_pos.begin(), first_pos.end(), SIZE_MAX);
    for (std::size_t j = i; j < hi; ++j) {
      const auto c = static_cast<std::size_t>(y_before[j]);
      if (count[c]++ == 0) first_pos[c] = j;
    }
    if (const std::size_t pad = window - (hi - i); pad > 0) {
      if (count[LabelSeries::kBackground] == 0) first_pos[LabelSeries::kBackground] = hi;
      count[LabelSeries::kBackground] += pad;
    }
    int majority = 0;
    std::size_t best_count = 0, best_pos = SIZE_MAX;
    for (int c = 0; c < y_before.n_classes; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      if (count[cc] > best_count ||
          (count[cc] == best_count && count[cc] > 0 && first_pos[cc] < best_pos)) {
        majority = c;
        best_count = count[cc];
        best_pos = first_pos[cc];
      }
    }
    for (std::size_t j = i; j < hi; ++j) after[j] = majority;
    i += window;
  }
  return LabelSeries(std::move(after), y_before.n_classes);
}

// Candidate window maximizing smoothed onset F1 on a validation pair; ties
// go to the smallest candidate.
inline std::size_t select_window_by_validation(const LabelSeries& y_pred_valid,
                                               const LabelSeries& y_true_valid,
                                               std::vector<std::size_t> candidates,
                                               std::size_t m_med) {
  if (candidates.empty()) throw ConfigError("select_window_by_validation: no candidates");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  std::size_t best = candidates.front();
  double best_f1 = -1.0;
  for (const std::size_t w : candidates) {
    const double f1 = onset_f1(smooth_labels(y_pred_valid, w), y_true_valid, m_med).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best = w;
    }
  }
  return best;
}

}  // namespace subseq

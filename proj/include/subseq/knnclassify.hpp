#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "subseq/knngraph.hpp"
#include "subseq/metrics.hpp"
#include "subseq/postprocess.hpp"

namespace subseq {

// Majority vote over the first k_use neighbors of each row. Vote ties are
// resolved in favor of the tied class holding the nearest (lowest-rank)
// neighbor.
inline LabelSeries knn_predict(const KnnGraph& g, const LabelSeries& y_train,
                               std::size_t k_use) {
  if (k_use < 1 || k_use > g.k) throw ConfigError("knn_predict: k_use must be in [1, graph k]");
  std::vector<int> out(g.n_rows());
  std::vector<std::size_t> count(static_cast<std::size_t>(y_train.n_classes));
  std::vector<std::size_t> first_rank(static_cast<std::size_t>(y_train.n_classes));
  for (std::size_t i = 0; i < g.n_rows(); ++i) {
    std::fill(count.begin(), count.end(), 0);
    std::fill(first_rank.begin(), first_rank.end(), SIZE_MAX);
    const auto row = g.row(i);
    for (std::size_t r = 0; r < k_use; ++r) {
      const std::uint64_t idx = row[r];
      if (idx >= y_train.size())
        throw ConfigError("knn_predict: neighbor index " + std::to_string(idx) +
                          " outside the training label series (row " + std::to_string(i) + ")");
      const auto c = static_cast<std::size_t>(y_train[idx]);
      if (count[c]++ == 0) first_rank[c] = r;
    }
    int best = 0;
    std::size_t best_count = 0, best_rank = SIZE_MAX;
    for (int c = 0; c < y_train.n_classes; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      if (count[cc] > best_count || (count[cc] == best_count && first_rank[cc] < best_rank)) {
        best = c;
        best_count = count[cc];
        best_rank = first_rank[cc];
      }
    }
    out[i] = best;
  }
  return LabelSeries(std::move(out), y_train.n_classes);
}

// Candidate k maximizing smoothed onset F1 against the validation labels;
// ties go to the smallest candidate. `smooth_window` is the post-processing
// window applied before scoring (1 leaves predictions untouched).
inline std::size_t select_k_by_validation(const KnnGraph& g_valid, const LabelSeries& y_train,
                                          const LabelSeries& y_valid,
                                          std::vector<std::size_t> candidates, std::size_t m_med,
                                          std::size_t smooth_window = 1) {
  if (candidates.empty()) throw ConfigError("select_k_by_validation: no candidates");
  if (y_valid.size() != g_valid.n_rows())
    throw ConfigError("select_k_by_validation: validation labels do not match the graph");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  std::size_t best = candidates.front();
  double best_f1 = -1.0;
  for (const std::size_t k : candidates) {
    const LabelSeries pred = smooth_labels(knn_predict(g_valid, y_train, k), smooth_window);
    const double f1 = onset_f1(pred, y_valid, m_med).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best = k;
    }
  }
  return best;
}

}  // namespace subseq

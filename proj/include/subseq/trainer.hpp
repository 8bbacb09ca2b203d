#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "subseq/core.hpp"
#include "subseq/egonet.hpp"
#include "subseq/knngraph.hpp"
#include "subseq/metrics.hpp"
#include "subseq/postprocess.hpp"

namespace subseq {

struct TrainConfig {
  std::size_t m = 32;
  std::size_t k = 5;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t patience = 10;    // early stop, counted in validation evaluations
  std::size_t eval_every = 1;   // epochs between validation evaluations
  std::vector<std::size_t> smooth_window_candidates = {1, 8, 16, 32, 64};
  nn::BackboneKind backbone = nn::BackboneKind::kTransformer;
  std::size_t threads = 0;      // 0 = hardware concurrency

  void validate() const {
    if (m == 0 || k == 0 || epochs == 0 || batch_size == 0)
      throw ConfigError("TrainConfig: m, k, epochs, batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning rate must be positive");
    if (smooth_window_candidates.empty())
      throw ConfigError("TrainConfig: need at least one smoothing window candidate");
  }
};

struct SampledSubsequences {
  std::vector<std::size_t> indices;  // distinct start positions
  std::vector<int> labels;
};

// ceil(n/m) distinct start indices drawn uniformly without replacement; the
// per-epoch redraw exposes different shifts of the same underlying patterns.
inline SampledSubsequences sample_subsequences(const TimeSeries& t, const LabelSeries& y,
                                               std::size_t m, Rng& rng) {
  const std::size_t n = t.length();
  if (m == 0 || m > n) throw ConfigError("sample_subsequences: m exceeds series length");
  const std::size_t available = n - m + 1;
  if (y.size() != available)
    throw ConfigError("sample_subsequences: label series does not match n - m + 1");
  const std::size_t n_sample = (n + m - 1) / m;
  if (n_sample > available)
    throw ConfigError("sample_subsequences: not enough distinct subsequences");
  std::vector<std::size_t> pool(available);
  std::iota(pool.begin(), pool.end(), 0);
  SampledSubsequences out;
  out.indices.reserve(n_sample);
  for (std::size_t i = 0; i < n_sample; ++i) {
    const std::size_t j = i + rng.next_below(available - i);
    std::swap(pool[i], pool[j]);
    out.indices.push_back(pool[i]);
  }
  out.labels.reserve(n_sample);
  for (const std::size_t idx : out.indices) out.labels.push_back(y[idx]);
  return out;
}

// [n, d, m] tensor of the windows starting at the given indices.
inline nn::Tensor windows_tensor(const TimeSeries& t, std::span<const std::size_t> starts,
                                 std::size_t m) {
  const std::size_t d = t.dims();
  std::vector<double> data(starts.size() * d * m);
  for (std::size_t i = 0; i < starts.size(); ++i)
    for (std::size_t dd = 0; dd < d; ++dd) {
      const auto w = t.window(dd, starts[i], m);
      std::copy(w.begin(), w.end(), data.data() + (i * d + dd) * m);
    }
  return nn::Tensor::from_vector(std::move(data), {starts.size(), d, m});
}

struct NeighborBatch {
  nn::Tensor windows;            // [batch, k, d, m]
  std::vector<int> labels;       // batch * k
  std::vector<std::size_t> indices;  // batch * k, start positions
};

// Materializes the graph rows for the given focal indices.
inline NeighborBatch get_neighbors(const KnnGraph& g, std::span<const std::size_t> focal_indices,
                                   const TimeSeries& t, const LabelSeries& y) {
  const std::size_t k = g.k;
  NeighborBatch out;
  out.indices.reserve(focal_indices.size() * k);
  for (const std::size_t row : focal_indices) {
    if (row >= g.n_rows())
      throw ConfigError("get_neighbors: index " + std::to_string(row) + " outside the graph");
    for (const std::uint64_t idx : g.row(row)) out.indices.push_back(idx);
  }
  out.labels.reserve(out.indices.size());
  for (const std::size_t idx : out.indices) {
    if (idx >= y.size()) throw ConfigError("get_neighbors: neighbor outside the label series");
    out.labels.push_back(y[idx]);
  }
  const std::size_t m = g.m, d = t.dims();
  nn::Tensor flat = windows_tensor(t, out.indices, m);
  out.windows = ad::reshape(flat, {focal_indices.size(), k, d, m});
  return out;
}

namespace detail {

inline std::size_t resolve_threads(std::size_t threads) {
  if (threads != 0) return threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

// Fixed-size batches regardless of thread count, threads split the batch
// list, so results are bit-identical for any parallelism level.
template <typename Fn>
inline void parallel_batches(std::size_t total, std::size_t batch_size, std::size_t threads,
                             Fn&& fn) {
  const std::size_t n_batches = (total + batch_size - 1) / batch_size;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    ad::NoGradGuard no_grad;
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_batches) return;
      fn(b * batch_size, std::min(total, (b + 1) * batch_size));
    }
  };
  threads = std::min(resolve_threads(threads), n_batches);
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Label predictions for every row of a prebuilt cross graph. Backbone
// representations of training subsequences are computed once per distinct
// neighbor index and shared across ego-networks.
inline LabelSeries predict_with_graph(const nn::SubseqClassifier& model, const KnnGraph& graph,
                                      const TimeSeries& t_query, const TimeSeries& t_train,
                                      const LabelSeries& y_train, std::size_t threads = 0) {
  const std::size_t m = model.manifest().m;
  const std::size_t rows = t_query.length() - m + 1;
  const std::size_t out_dim = 128;
  const std::size_t encode_batch = 64;
  ad::NoGradGuard no_grad;

  // focal representations
  std::vector<double> focal_repr(rows * out_dim);
  detail::parallel_batches(rows, encode_batch, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> starts(hi - lo);
    std::iota(starts.begin(), starts.end(), lo);
    const nn::Tensor repr = model.encode(windows_tensor(t_query, starts, m));
    std::copy(repr.data().begin(), repr.data().end(), focal_repr.data() + lo * out_dim);
  });

  std::vector<int> predicted(rows);
  if (!model.uses_neighbors()) {
    detail::parallel_batches(rows, encode_batch, threads, [&](std::size_t lo, std::size_t hi) {
      const std::size_t b = hi - lo;
      std::vector<double> chunk(focal_repr.data() + lo * out_dim,
                                focal_repr.data() + hi * out_dim);
      const nn::Tensor logits = model.logits_from(
          nn::Tensor::from_vector(std::move(chunk), {b, out_dim}), nullptr, nullptr);
      const auto cls = nn::predict_class(logits);
      std::copy(cls.begin(), cls.end(), predicted.begin() + static_cast<std::ptrdiff_t>(lo));
    });
    return LabelSeries(std::move(predicted), y_train.n_classes);
  }

  const std::size_t k = graph.k;
  if (graph.n_rows() != rows)
    throw ConfigError("predict_with_graph: graph does not match the query series");
  if (model.manifest().k != k)
    throw ConfigError("predict_with_graph: model trained with k = " +
                      std::to_string(model.manifest().k) + ", graph has k = " + std::to_string(k));

  // distinct training subsequences referenced anywhere in the graph
  std::vector<std::uint64_t> unique_idx(graph.indices);
  std::sort(unique_idx.begin(), unique_idx.end());
  unique_idx.erase(std::unique(unique_idx.begin(), unique_idx.end()), unique_idx.end());
  std::unordered_map<std::uint64_t, std::size_t> idx_slot;
  idx_slot.reserve(unique_idx.size());
  for (std::size_t i = 0; i < unique_idx.size(); ++i) idx_slot[unique_idx[i]] = i;

  std::vector<double> neigh_repr(unique_idx.size() * out_dim);
  detail::parallel_batches(unique_idx.size(), encode_batch, threads,
                           [&](std::size_t lo, std::size_t hi) {
                             std::vector<std::size_t> starts(unique_idx.begin() + lo,
                                                             unique_idx.begin() + hi);
                             const nn::Tensor repr = model.encode(windows_tensor(t_train, starts, m));
                             std::copy(repr.data().begin(), repr.data().end(),
                                       neigh_repr.data() + lo * out_dim);
                           });

  detail::parallel_batches(rows, encode_batch, threads, [&](std::size_t lo, std::size_t hi) {
    const std::size_t b = hi - lo;
    std::vector<double> focal_chunk(focal_repr.data() + lo * out_dim,
                                    focal_repr.data() + hi * out_dim);
    std::vector<double> neigh_chunk(b * k * out_dim);
    std::vector<int> labels(b * k);
    for (std::size_t i = 0; i < b; ++i) {
      const auto row = graph.row(lo + i);
      for (std::size_t j = 0; j < k; ++j) {
        const std::uint64_t idx = row[j];
        if (idx >= y_train.size())
          throw ConfigError("predict_with_graph: neighbor outside the training labels");
        labels[i * k + j] = y_train[idx];
        std::copy_n(neigh_repr.data() + idx_slot.at(idx) * out_dim, out_dim,
                    neigh_chunk.data() + (i * k + j) * out_dim);
      }
    }
    const nn::Tensor neigh =
        nn::Tensor::from_vector(std::move(neigh_chunk), {b, k, out_dim});
    const nn::Tensor logits = model.logits_from(
        nn::Tensor::from_vector(std::move(focal_chunk), {b, out_dim}), &neigh, &labels);
    const auto cls = nn::predict_class(logits);
    std::copy(cls.begin(), cls.end(), predicted.begin() + static_cast<std::ptrdiff_t>(lo));
  });
  return LabelSeries(std::move(predicted), y_train.n_classes);
}

struct ValidationData {
  TimeSeries series;
  LabelSeries labels;
};

struct TrainResult {
  std::unique_ptr<nn::SubseqClassifier> model;
  std::vector<double> epoch_losses;    // mean loss per epoch
  double best_valid_f1 = -1.0;         // smoothed, best window candidate
  std::size_t best_window = 1;
  std::size_t best_epoch = 0;
};

namespace detail {

inline std::vector<std::vector<double>> snapshot_params(const ad::ParameterStore& store) {
  std::vector<std::vector<double>> out;
  out.reserve(store.size());
  for (const auto& [name, t] : store.all()) out.push_back(t.data());
  return out;
}

inline void restore_params(ad::ParameterStore& store, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < store.size(); ++i)
    const_cast<nn::Tensor&>(store.all()[i].second).data() = snap[i];
}

// Smoothed onset F1 maximized over the window candidates.
inline std::pair<double, std::size_t> best_smoothed_f1(const LabelSeries& pred,
                                                       const LabelSeries& truth,
                                                       std::vector<std::size_t> candidates) {
  const std::size_t m_med = median_foreground_length(truth);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  double best = -1.0;
  std::size_t best_w = candidates.front();
  for (const std::size_t w : candidates) {
    const double f1 = onset_f1(smooth_labels(pred, w), truth, m_med).f1;
    if (f1 > best) {
      best = f1;
      best_w = w;
    }
  }
  return {best, best_w};
}

// The shared epoch loop behind train() and train_baseline().
inline TrainResult train_loop(std::unique_ptr<nn::SubseqClassifier> model, const TimeSeries& t,
                              const LabelSeries& y, const TrainConfig& cfg,
                              const std::optional<ValidationData>& valid) {
  cfg.validate();
  const bool needs_graph = model->uses_neighbors();
  KnnGraph graph;
  if (needs_graph) graph = knn_stomp_self(t, cfg.m, cfg.k, cfg.threads);
  KnnGraph valid_graph;
  if (valid && needs_graph)
    valid_graph = knn_stomp_cross(valid->series, t, cfg.m, cfg.k, cfg.threads);

  ad::AdamOptimizer optimizer(cfg.learning_rate);
  Rng rng = Rng(cfg.seed).fork(0x7261696e);
  TrainResult result;
  std::vector<std::vector<double>> best_snapshot;
  std::size_t stale_evals = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const SampledSubsequences sample = sample_subsequences(t, y, cfg.m, rng);
    long double loss_sum = 0.0L;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < sample.indices.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(sample.indices.size(), lo + cfg.batch_size);
      const std::span<const std::size_t> focal_idx(sample.indices.data() + lo, hi - lo);
      nn::EgoBatch batch;
      batch.focal = windows_tensor(t, focal_idx, cfg.m);
      if (needs_graph) {
        NeighborBatch nb = get_neighbors(graph, focal_idx, t, y);
        batch.neighbors = nb.windows;
        batch.neighbor_labels = std::move(nb.labels);
      }
      const std::vector<int> targets(sample.labels.begin() + static_cast<std::ptrdiff_t>(lo),
                                     sample.labels.begin() + static_cast<std::ptrdiff_t>(hi));
      model->params().zero_grad();
      const nn::Tensor loss = ad::cross_entropy(model->forward(batch), targets);
      ad::backward(loss);
      optimizer.step(model->params());
      loss_sum += static_cast<long double>(loss.item()) * static_cast<long double>(hi - lo);
      seen += hi - lo;
    }
    const double epoch_loss = static_cast<double>(loss_sum / static_cast<long double>(seen));
    if (!std::isfinite(epoch_loss))
      throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
    result.epoch_losses.push_back(epoch_loss);

    const bool last_epoch = epoch + 1 == cfg.epochs;
    if (valid && ((epoch + 1) % cfg.eval_every == 0 || last_epoch)) {
      const LabelSeries pred = predict_with_graph(*model, valid_graph, valid->series, t, y,
                                                  cfg.threads);
      const auto [f1, window] = best_smoothed_f1(pred, valid->labels, cfg.smooth_window_candidates);
      if (f1 > result.best_valid_f1) {
        result.best_valid_f1 = f1;
        result.best_window = window;
        result.best_epoch = epoch;
        best_snapshot = snapshot_params(model->params());
        stale_evals = 0;
      } else if (++stale_evals >= cfg.patience) {
        break;
      }
    }
  }
  if (!best_snapshot.empty()) restore_params(model->params(), best_snapshot);
  result.model = std::move(model);
  return result;
}

inline void check_classes(const LabelSeries& y) {
  bool has_bg = false, has_fg = false;
  for (const int label : y.labels) (label == LabelSeries::kBackground ? has_bg : has_fg) = true;
  if (!has_bg || !has_fg)
    throw ConfigError("train: labels need background (class 0) and at least one foreground class");
}

}  // namespace detail

// Ego-network training: builds the self graph, samples ceil(n/m) windows per
// epoch, and keeps the checkpoint with the best smoothed validation onset F1.
inline TrainResult train(const TimeSeries& t, const LabelSeries& y, const TrainConfig& cfg,
                         const std::optional<ValidationData>& valid = std::nullopt) {
  detail::check_classes(y);
  nn::BackboneConfig backbone;
  backbone.kind = cfg.backbone;
  backbone.input_dims = t.dims();
  auto model = std::make_unique<nn::EgoNetModel>(backbone, cfg.m, cfg.k, y.n_classes, cfg.seed);
  return detail::train_loop(std::move(model), t, y, cfg, valid);
}

// Backbone plus classification layer, no neighbor information.
inline TrainResult train_baseline(const TimeSeries& t, const LabelSeries& y,
                                  const TrainConfig& cfg,
                                  const std::optional<ValidationData>& valid = std::nullopt) {
  detail::check_classes(y);
  nn::BackboneConfig backbone;
  backbone.kind = cfg.backbone;
  backbone.input_dims = t.dims();
  auto model = std::make_unique<nn::BaselineModel>(backbone, cfg.m, y.n_classes, cfg.seed);
  return detail::train_loop(std::move(model), t, y, cfg, valid);
}

// Stride-1 label predictions for every subsequence of the test series.
inline LabelSeries infer(const TimeSeries& t_test, const TimeSeries& t_train,
                         const LabelSeries& y_train, const nn::SubseqClassifier& model,
                         std::size_t m, std::size_t k, std::size_t threads = 0) {
  const auto& manifest = model.manifest();
  if (manifest.m != m || (model.uses_neighbors() && manifest.k != k))
    throw ConfigError("infer: m/k disagree with the checkpoint manifest (m = " +
                      std::to_string(manifest.m) + ", k = " + std::to_string(manifest.k) + ")");
  if (manifest.input_dims != t_test.dims() || t_train.dims() != t_test.dims())
    throw ConfigError("infer: dimensionality disagrees with the checkpoint manifest");
  if (manifest.n_classes != y_train.n_classes)
    throw ConfigError("infer: class count disagrees with the checkpoint manifest");
  KnnGraph graph;
  if (model.uses_neighbors()) graph = knn_stomp_cross(t_test, t_train, m, k, threads);
  return predict_with_graph(model, graph, t_test, t_train, y_train, threads);
}

}  // namespace subseq

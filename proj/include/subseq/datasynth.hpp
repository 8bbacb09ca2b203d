#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "subseq/common.hpp"
#include "subseq/core.hpp"

namespace subseq {

// A classification instance acting as one foreground segment.
struct Instance {
  std::vector<std::vector<double>> series;  // d x L
  int cls = 1;

  std::size_t dims() const { return series.size(); }
  std::size_t length() const { return series.empty() ? 0 : series[0].size(); }
};

struct SynthesisRecipe {
  double train_ratio = 0.6;
  double valid_ratio = 0.2;
  double test_ratio = 0.2;
  double background_factor = 2.0;  // background length per foreground length
  double label_threshold = 0.6;    // fraction of window positions required
  std::uint64_t seed = 0;
};

// Cumulative sum of i.i.d. standard normal steps; entry 0 is the first step.
inline std::vector<double> random_walk(std::size_t length, std::uint64_t seed) {
  if (length == 0) throw ConfigError("random_walk: length must be >= 1");
  Rng rng(seed);
  std::vector<double> walk(length);
  double acc = 0.0;
  for (auto& v : walk) {
    acc += rng.next_gaussian();
    v = acc;
  }
  return walk;
}

// Per-position foreground class of an assembled series; 0 is background.
using ForegroundMask = std::vector<int>;

struct ExpandedInstance {
  std::vector<std::vector<double>> series;  // d x (L + background)
  ForegroundMask mask;
};

namespace detail {

// Append `piece` to `dst`, shifting the whole piece so its first value meets
// the last existing value. An empty destination takes the piece unshifted.
inline void stitch_append(std::vector<double>& dst, std::span<const double> piece) {
  if (piece.empty()) return;
  const double shift = dst.empty() ? 0.0 : dst.back() - piece[0];
  for (const double v : piece) dst.push_back(v + shift);
}

}  // namespace detail

// Surround one instance with random-walk background: a background segment of
// background_factor * L per dimension is split at a random position and the
// two parts are stitched before and after the foreground.
inline ExpandedInstance expand_instance(const Instance& inst, const SynthesisRecipe& recipe,
                                        std::uint64_t seed) {
  if (inst.cls < 1) throw ConfigError("expand_instance: class id must be >= 1");
  if (inst.dims() == 0 || inst.length() == 0)
    throw ConfigError("expand_instance: empty instance");
  const std::size_t len = inst.length();
  const auto bg_len =
      static_cast<std::size_t>(std::llround(recipe.background_factor * static_cast<double>(len)));
  Rng rng(seed);
  const std::size_t cut = bg_len == 0 ? 0 : rng.next_below(bg_len + 1);
  ExpandedInstance out;
  out.series.resize(inst.dims());
  for (std::size_t d = 0; d < inst.dims(); ++d) {
    const std::vector<double> bg = random_walk(std::max<std::size_t>(bg_len, 1), rng.fork(d).next_u64());
    auto& dst = out.series[d];
    dst.reserve(len + bg_len);
    detail::stitch_append(dst, std::span<const double>(bg).first(cut));
    detail::stitch_append(dst, inst.series[d]);
    detail::stitch_append(dst, std::span<const double>(bg).subspan(cut, bg_len - cut));
  }
  out.mask.assign(len + bg_len, 0);
  for (std::size_t i = 0; i < len; ++i) out.mask[cut + i] = inst.cls;
  return out;
}

// Stitch all expanded instances into one continuous series and derive the
// per-window labels: class c when at least label_threshold of the window's
// positions carry class-c foreground.
inline std::pair<TimeSeries, LabelSeries> synthesize_split(const std::vector<Instance>& instances,
                                                           const SynthesisRecipe& recipe,
                                                           std::size_t m, std::uint64_t seed) {
  if (instances.empty()) throw ConfigError("synthesize_split: no instances");
  const std::size_t d = instances[0].dims();
  Rng rng(seed);
  std::vector<std::vector<double>> series(d);
  ForegroundMask mask;
  int n_classes = 2;
  for (std::size_t idx = 0; idx < instances.size(); ++idx) {
    const Instance& inst = instances[idx];
    if (inst.dims() != d) throw ConfigError("synthesize_split: mixed dimensionality");
    const ExpandedInstance expanded = expand_instance(inst, recipe, rng.fork(idx).next_u64());
    for (std::size_t dd = 0; dd < d; ++dd)
      detail::stitch_append(series[dd], expanded.series[dd]);
    mask.insert(mask.end(), expanded.mask.begin(), expanded.mask.end());
    n_classes = std::max(n_classes, inst.cls + 1);
  }
  const std::size_t n = mask.size();
  if (m == 0 || m > n) throw ConfigError("synthesize_split: m exceeds the assembled series");

  std::vector<int> labels(n - m + 1, 0);
  std::vector<std::size_t> count(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < m; ++i) ++count[static_cast<std::size_t>(mask[i])];
  const double needed = recipe.label_threshold * static_cast<double>(m);
  for (std::size_t s = 0;; ++s) {
    for (int c = 1; c < n_classes; ++c) {
      if (static_cast<double>(count[static_cast<std::size_t>(c)]) >= needed) {
        labels[s] = c;
        break;
      }
    }
    if (s + m == n) break;
    --count[static_cast<std::size_t>(mask[s])];
    ++count[static_cast<std::size_t>(mask[s + m])];
  }
  return {TimeSeries(std::move(series), "synth"), LabelSeries(std::move(labels), n_classes)};
}

struct DatasetSplit {
  TimeSeries series;
  LabelSeries labels;
};

struct PlantedDataset {
  DatasetSplit train, valid, test;
  int n_classes = 0;
};

namespace detail {

// Distinct per-class waveform templates: sine, square, sawtooth, then
// higher-frequency sines. Deterministic, so zero noise means identical
// instances within a class.
inline std::vector<double> class_template(int cls, std::size_t length) {
  std::vector<double> out(length);
  const double amp = 3.0;
  const double two_pi = 6.283185307179586476925286766559;
  for (std::size_t i = 0; i < length; ++i) {
    const double phase = static_cast<double>(i) / static_cast<double>(length);
    double v = 0.0;
    switch (cls) {
      case 1:
        v = std::sin(two_pi * 2.0 * phase);
        break;
      case 2:
        v = std::sin(two_pi * 2.0 * phase) >= 0.0 ? 1.0 : -1.0;
        break;
      case 3:
        v = 2.0 * (phase * 3.0 - std::floor(phase * 3.0)) - 1.0;
        break;
      default:
        v = std::sin(two_pi * static_cast<double>(cls) * phase);
        break;
    }
    out[i] = amp * v;
  }
  return out;
}

}  // namespace detail

// Balanced synthetic benchmark: `runs` instances per foreground class, each a
// class template plus Gaussian noise, expanded into background and split
// 6:2:2 into train/valid/test series.
inline PlantedDataset planted_motif_dataset(int n_classes, std::size_t runs, std::size_t m,
                                            double noise_std, std::uint64_t seed,
                                            std::size_t dims = 1) {
  if (n_classes < 1) throw ConfigError("planted_motif_dataset: need at least one class");
  if (runs < 5) throw ConfigError("planted_motif_dataset: need at least 5 runs per class");
  Rng rng(seed);
  SynthesisRecipe recipe;
  recipe.seed = seed;

  const std::size_t n_train = runs * 6 / 10;
  const std::size_t n_valid = runs * 2 / 10;
  std::vector<std::vector<Instance>> split_instances(3);
  for (int cls = 1; cls <= n_classes; ++cls) {
    const std::vector<double> base = detail::class_template(cls, m);
    for (std::size_t r = 0; r < runs; ++r) {
      Instance inst;
      inst.cls = cls;
      inst.series.resize(dims);
      Rng noise = rng.fork(static_cast<std::uint64_t>(cls) * 10007 + r);
      for (std::size_t d = 0; d < dims; ++d) {
        inst.series[d].resize(m);
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t j = (i + d * m / (dims + 1)) % m;  // per-dim phase shift
          inst.series[d][i] = base[j] + noise_std * noise.next_gaussian();
        }
      }
      const std::size_t split = r < n_train ? 0 : (r < n_train + n_valid ? 1 : 2);
      split_instances[split].push_back(std::move(inst));
    }
  }
  // deterministic shuffle so classes interleave within each split
  for (std::size_t s = 0; s < 3; ++s) {
    auto& list = split_instances[s];
    Rng shuffle = rng.fork(1000 + s);
    for (std::size_t i = list.size(); i > 1; --i)
      std::swap(list[i - 1], list[shuffle.next_below(i)]);
  }

  PlantedDataset out;
  auto build = [&](std::size_t s) {
    auto [series, labels] = synthesize_split(split_instances[s], recipe, m, rng.fork(2000 + s).next_u64());
    return DatasetSplit{std::move(series), std::move(labels)};
  };
  out.train = build(0);
  out.valid = build(1);
  out.test = build(2);
  out.n_classes = n_classes + 1;  // plus background
  return out;
}

}  // namespace subseq

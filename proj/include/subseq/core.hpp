#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "subseq/common.hpp"

namespace subseq {

// Windows whose standard deviation falls below this are treated as constant:
// their z-normalized form is the all-zero vector. This keeps distances finite
// and deterministic (constant-vs-constant = 0, constant-vs-other = sqrt(m)).
inline constexpr double kFlatStdEps = 1e-8;

// A d-dimensional real-valued series of length n, stored one contiguous row
// per dimension. Immutable by convention after construction; all pipeline
// stages share it read-only.
class TimeSeries {
 public:
  TimeSeries() = default;
  TimeSeries(std::vector<std::vector<double>> values, std::string name = "")
      : values_(std::move(values)), name_(std::move(name)) {
    if (values_.empty()) throw ConfigError("TimeSeries: need at least one dimension");
    const std::size_t n = values_[0].size();
    if (n == 0) throw ConfigError("TimeSeries: need at least one time step");
    for (const auto& dim : values_) {
      if (dim.size() != n)
        throw ConfigError("TimeSeries: all dimensions must share the same length");
      for (double v : dim) {
        if (!std::isfinite(v)) throw NumericError("TimeSeries: values must be finite");
      }
    }
  }

  static TimeSeries univariate(std::vector<double> values, std::string name = "") {
    std::vector<std::vector<double>> dims;
    dims.push_back(std::move(values));
    return TimeSeries(std::move(dims), std::move(name));
  }

  std::size_t dims() const { return values_.size(); }
  std::size_t length() const { return values_.empty() ? 0 : values_[0].size(); }
  std::size_t n_subsequences(std::size_t m) const {
    if (m == 0 || m > length())
      throw ConfigError("TimeSeries: subsequence length out of range");
    return length() - m + 1;
  }

  const std::vector<double>& dim(std::size_t d) const { return values_.at(d); }
  std::span<const double> window(std::size_t d, std::size_t start, std::size_t m) const {
    return std::span<const double>(values_.at(d)).subspan(start, m);
  }
  const std::string& name() const { return name_; }

 private:
  std::vector<std::vector<double>> values_;
  std::string name_;
};

// One label per subsequence start index; class 0 is background.
struct LabelSeries {
  std::vector<int> labels;
  int n_classes = 0;
  static constexpr int kBackground = 0;

  LabelSeries() = default;
  LabelSeries(std::vector<int> l, int classes) : labels(std::move(l)), n_classes(classes) {
    if (n_classes < 1) throw ConfigError("LabelSeries: n_classes must be >= 1");
    for (int v : labels) {
      if (v < 0 || v >= n_classes)
        throw ConfigError("LabelSeries: label out of [0, n_classes)");
    }
  }

  std::size_t size() const { return labels.size(); }
  int operator[](std::size_t i) const { return labels[i]; }
};

struct SubseqWindow {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Copy of columns [i, i+m) of every dimension. Never aliases the source.
inline std::vector<std::vector<double>> extract_subsequence(const TimeSeries& t,
                                                            std::size_t i, std::size_t m) {
  if (m == 0 || m > t.length() || i > t.length() - m)
    throw std::out_of_range("extract_subsequence: window [" + std::to_string(i) + ", " +
                            std::to_string(i + m) + ") exceeds series length " +
                            std::to_string(t.length()));
  std::vector<std::vector<double>> out(t.dims());
  for (std::size_t d = 0; d < t.dims(); ++d) {
    auto w = t.window(d, i, m);
    out[d].assign(w.begin(), w.end());
  }
  return out;
}

inline void mean_and_std(std::span<const double> x, double& mean, double& std_out) {
  long double sum = 0.0L, sumsq = 0.0L;
  for (double v : x) {
    sum += v;
    sumsq += static_cast<long double>(v) * v;
  }
  const long double mu = sum / static_cast<long double>(x.size());
  long double var = sumsq / static_cast<long double>(x.size()) - mu * mu;
  if (var < 0.0L) var = 0.0L;  // round-off on near-constant windows
  mean = static_cast<double>(mu);
  std_out = static_cast<double>(std::sqrt(var));
}

// (x - mean) / std with the population (1/m) standard deviation. A window
// with std < kFlatStdEps maps to the all-zero vector.
inline void z_normalize_into(std::span<const double> x, std::span<double> out) {
  double mu = 0.0, sigma = 0.0;
  mean_and_std(x, mu, sigma);
  if (sigma < kFlatStdEps) {
    for (auto& v : out) v = 0.0;
    return;
  }
  const double inv = 1.0 / sigma;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) * inv;
}

inline std::vector<double> z_normalize(std::span<const double> x) {
  if (x.empty()) throw ConfigError("z_normalize: empty input");
  std::vector<double> out(x.size());
  z_normalize_into(x, out);
  return out;
}

inline std::vector<double> z_normalize(const std::vector<double>& x) {
  return z_normalize(std::span<const double>(x));
}

}  // namespace subseq

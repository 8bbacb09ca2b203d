#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "subseq/core.hpp"

namespace subseq {

// Distances between one query subsequence and every window of a target
// series. Entries are finite non-negative or +inf (masked); never NaN.
struct DistanceProfile {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

// Per-window mean and population std for every subsequence of one dimension.
struct MovingStats {
  std::vector<double> means;
  std::vector<double> stds;
};

inline MovingStats moving_stats(std::span<const double> x, std::size_t m) {
  if (m == 0 || m > x.size()) throw ConfigError("moving_stats: m out of range");
  const std::size_t r = x.size() - m + 1;
  MovingStats out;
  out.means.resize(r);
  out.stds.resize(r);
  // Cumulative sums in extended precision keep the differenced window
  // statistics accurate even for long, offset-heavy series.
  std::vector<long double> cum(x.size() + 1, 0.0L), cumsq(x.size() + 1, 0.0L);
  for (std::size_t i = 0; i < x.size(); ++i) {
    cum[i + 1] = cum[i] + x[i];
    cumsq[i + 1] = cumsq[i] + static_cast<long double>(x[i]) * x[i];
  }
  const long double inv_m = 1.0L / static_cast<long double>(m);
  for (std::size_t j = 0; j < r; ++j) {
    const long double mu = (cum[j + m] - cum[j]) * inv_m;
    long double var = (cumsq[j + m] - cumsq[j]) * inv_m - mu * mu;
    if (var < 0.0L) var = 0.0L;
    out.means[j] = static_cast<double>(mu);
    out.stds[j] = static_cast<double>(std::sqrt(var));
  }
  return out;
}

// ||z(a) - z(b)||_2, the definitional route.
inline double znorm_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("znorm_distance: length mismatch");
  if (a.empty()) throw ConfigError("znorm_distance: empty input");
  const std::vector<double> za = z_normalize(a);
  const std::vector<double> zb = z_normalize(b);
  long double acc = 0.0L;
  for (std::size_t i = 0; i < za.size(); ++i) {
    const long double diff = static_cast<long double>(za[i]) - zb[i];
    acc += diff * diff;
  }
  return static_cast<double>(std::sqrt(acc));
}

inline double znorm_distance(const std::vector<double>& a, const std::vector<double>& b) {
  return znorm_distance(std::span<const double>(a), std::span<const double>(b));
}

// sqrt(2m(1 - rho)) with rho the normalized dot product, clamped to [-1, 1]
// against round-off. Must agree with znorm_distance to 1e-6 relative; the
// streaming recurrence relies on this algebraic form.
inline double znorm_distance_closed_form(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("znorm_distance_closed_form: length mismatch");
  const std::size_t m = a.size();
  double mu_a = 0.0, sd_a = 0.0, mu_b = 0.0, sd_b = 0.0;
  mean_and_std(a, mu_a, sd_a);
  mean_and_std(b, mu_b, sd_b);
  const bool flat_a = sd_a < kFlatStdEps, flat_b = sd_b < kFlatStdEps;
  if (flat_a && flat_b) return 0.0;
  if (flat_a || flat_b) return std::sqrt(static_cast<double>(m));
  long double dot = 0.0L;
  for (std::size_t i = 0; i < m; ++i) dot += static_cast<long double>(a[i]) * b[i];
  long double rho = (dot - static_cast<long double>(m) * mu_a * mu_b) /
                    (static_cast<long double>(m) * sd_a * sd_b);
  rho = std::clamp(rho, -1.0L, 1.0L);
  return static_cast<double>(std::sqrt(2.0L * static_cast<long double>(m) * (1.0L - rho)));
}

// Brute-force profile: one znorm_distance per window, O(n m). Doubles as the
// independent oracle for the streaming recurrence.
inline DistanceProfile distance_profile_brute(std::span<const double> query, const TimeSeries& t) {
  if (t.dims() != 1) throw ConfigError("distance_profile_brute: target must be univariate");
  const std::size_t m = query.size();
  if (m == 0 || m > t.length()) throw ConfigError("distance_profile_brute: m exceeds series length");
  const std::size_t r = t.length() - m + 1;
  DistanceProfile out;
  out.values.resize(r);
  for (std::size_t j = 0; j < r; ++j) {
    const auto window = extract_subsequence(t, j, m);
    out.values[j] = znorm_distance(query, window[0]);
  }
  return out;
}

// Per-dimension distances summed across dimensions (sum of distances, not of
// squared distances; each dimension contributes equally).
inline DistanceProfile multivariate_distance_profile(const std::vector<std::vector<double>>& query,
                                                     const TimeSeries& t) {
  if (query.size() != t.dims())
    throw ConfigError("multivariate_distance_profile: dimension count mismatch");
  const std::size_t m = query.at(0).size();
  for (const auto& q : query)
    if (q.size() != m) throw ConfigError("multivariate_distance_profile: ragged query");
  if (m == 0 || m > t.length())
    throw ConfigError("multivariate_distance_profile: m exceeds series length");
  const std::size_t r = t.length() - m + 1;
  DistanceProfile out;
  out.values.assign(r, 0.0);
  std::vector<double> window(m);
  for (std::size_t d = 0; d < t.dims(); ++d) {
    for (std::size_t j = 0; j < r; ++j) {
      auto w = t.window(d, j, m);
      window.assign(w.begin(), w.end());
      out.values[j] += znorm_distance(query[d], window);
    }
  }
  return out;
}

// Streaming distance profiles, one per query start index, via the sliding
// dot-product recurrence
//   qt[j] = qt_prev[j-1] - q[i-1]*t[j-1] + q[i+m-1]*t[j+m-1]
// with row 0 and column 0 seeded by direct dot products. Dot products and
// window statistics accumulate in the widest float type, and qt is re-seeded
// from direct dot products every `reseed_every` rows to bound drift; the
// 1e-6 brute-force agreement depends on both.
//
// Multivariate inputs produce per-dimension distances summed per entry.
// Independent streams over disjoint row ranges may run in parallel; a single
// stream is single-consumer.
class ProfileStream {
 public:
  static constexpr std::size_t kDefaultReseed = 1024;

  ProfileStream(const TimeSeries& query, const TimeSeries& target, std::size_t m,
                std::size_t first_row = 0, std::size_t row_end = SIZE_MAX,
                std::size_t reseed_every = kDefaultReseed)
      : query_(&query), target_(&target), m_(m), reseed_every_(reseed_every) {
    if (query.dims() != target.dims())
      throw ConfigError("ProfileStream: dimension count mismatch");
    if (m == 0 || m > query.length() || m > target.length())
      throw ConfigError("ProfileStream: m exceeds series length");
    n_rows_total_ = query.length() - m + 1;
    n_cols_ = target.length() - m + 1;
    row_end_ = std::min(row_end, n_rows_total_);
    row_ = first_row;
    if (row_ > row_end_) throw ConfigError("ProfileStream: first_row out of range");
    const std::size_t d = query.dims();
    qmu_.resize(d); qsig_.resize(d); tmu_.resize(d); tinv_sig_.resize(d); tflat_.resize(d);
    qt_.assign(d, std::vector<long double>(n_cols_));
    for (std::size_t dd = 0; dd < d; ++dd) {
      compute_stats(query.dim(dd), m, qmu_[dd], qsig_[dd]);
      std::vector<long double> tsig;
      compute_stats(target.dim(dd), m, tmu_[dd], tsig);
      tinv_sig_[dd].resize(n_cols_);
      tflat_[dd].resize(n_cols_);
      any_tflat_.push_back(false);
      for (std::size_t j = 0; j < n_cols_; ++j) {
        const bool flat = tsig[j] < kFlatStdEps;
        tflat_[dd][j] = flat;
        if (flat) any_tflat_[dd] = true;
        tinv_sig_[dd][j] = flat ? 0.0L : 1.0L / tsig[j];
      }
    }
  }

  std::size_t rows_remaining() const { return row_end_ - row_; }
  std::size_t n_cols() const { return n_cols_; }
  std::size_t current_row() const { return row_; }

  // Next profile as z-normalized Euclidean distances (summed over dims).
  bool next(DistanceProfile& out) {
    if (row_ >= row_end_) return false;
    advance_qt();
    out.values.assign(n_cols_, 0.0);
    for (std::size_t dd = 0; dd < query_->dims(); ++dd) emit_dim(dd, /*squared=*/false, out.values);
    ++row_;
    return true;
  }

  // Univariate fast path for neighbor selection: fills `out` with values
  // that order exactly like the distances of this row (an affine image of
  // the squared distance with a positive row-constant scale), skipping the
  // sqrt and clamp. Only within-row comparisons are meaningful.
  bool next_pick_keys(std::vector<double>& out) {
    if (query_->dims() != 1)
      throw ConfigError("ProfileStream::next_pick_keys: univariate only");
    if (row_ >= row_end_) return false;
    out.resize(n_cols_);
    const std::size_t i = row_;
    const bool at_seed = (i == 0) || !seeded_ || (i % reseed_every_ == 0) || (i != last_row_ + 1);
    const auto& q = query_->dim(0);
    const auto& t = target_->dim(0);
    auto& qt = qt_[0];
    if (at_seed) {
      seed_row(0, i);
    } else {
      // Fused recurrence + key emission, descending so qt[j-1] is still the
      // previous row's value. Identical update expression to advance_qt().
      const long double drop = q[i - 1];
      const long double add = q[i + m_ - 1];
      if (qsig_[0][i] < kFlatStdEps) {
        for (std::size_t j = n_cols_ - 1; j > 0; --j)
          qt[j] = qt[j - 1] - drop * t[j - 1] + add * t[j + m_ - 1];
      } else {
        const long double a_mu = static_cast<long double>(m_) * qmu_[0][i];
        const long double c = static_cast<long double>(m_) * qsig_[0][i];
        const auto& tmu = tmu_[0];
        const auto& tinv = tinv_sig_[0];
        for (std::size_t j = n_cols_ - 1; j > 0; --j) {
          const long double v = qt[j - 1] - drop * t[j - 1] + add * t[j + m_ - 1];
          qt[j] = v;
          out[j] = static_cast<double>(c - (v - a_mu * tmu[j]) * tinv[j]);
        }
      }
      long double acc = 0.0L;
      for (std::size_t u = 0; u < m_; ++u) acc += static_cast<long double>(q[i + u]) * t[u];
      qt[0] = acc;
      seeded_ = true;
      last_row_ = i;
      if (qsig_[0][i] >= kFlatStdEps) {
        finish_keys_row(i, out, /*only_col0_and_flats=*/true);
        ++row_;
        return true;
      }
    }
    seeded_ = true;
    last_row_ = i;
    finish_keys_row(i, out, /*only_col0_and_flats=*/false);
    ++row_;
    return true;
  }

 private:
  static void compute_stats(std::span<const double> x, std::size_t m,
                            std::vector<long double>& mu, std::vector<long double>& sig) {
    const std::size_t r = x.size() - m + 1;
    mu.resize(r);
    sig.resize(r);
    std::vector<long double> cum(x.size() + 1, 0.0L), cumsq(x.size() + 1, 0.0L);
    for (std::size_t i = 0; i < x.size(); ++i) {
      cum[i + 1] = cum[i] + x[i];
      cumsq[i + 1] = cumsq[i] + static_cast<long double>(x[i]) * x[i];
    }
    const long double inv_m = 1.0L / static_cast<long double>(m);
    for (std::size_t j = 0; j < r; ++j) {
      mu[j] = (cum[j + m] - cum[j]) * inv_m;
      long double var = (cumsq[j + m] - cumsq[j]) * inv_m - mu[j] * mu[j];
      if (var < 0.0L) var = 0.0L;
      sig[j] = std::sqrt(var);
    }
  }

  void seed_row(std::size_t dd, std::size_t i) {
    const auto& q = query_->dim(dd);
    const auto& t = target_->dim(dd);
    auto& qt = qt_[dd];
    for (std::size_t j = 0; j < n_cols_; ++j) {
      long double acc = 0.0L;
      for (std::size_t u = 0; u < m_; ++u) acc += static_cast<long double>(q[i + u]) * t[j + u];
      qt[j] = acc;
    }
  }

  void advance_qt() {
    const std::size_t i = row_;
    const bool at_seed = (i == 0) || !seeded_ || (i % reseed_every_ == 0) || (i != last_row_ + 1);
    for (std::size_t dd = 0; dd < query_->dims(); ++dd) {
      if (at_seed) {
        seed_row(dd, i);
        continue;
      }
      const auto& q = query_->dim(dd);
      const auto& t = target_->dim(dd);
      auto& qt = qt_[dd];
      const long double drop = q[i - 1];
      const long double add = q[i + m_ - 1];
      for (std::size_t j = n_cols_ - 1; j > 0; --j)
        qt[j] = qt[j - 1] - drop * t[j - 1] + add * t[j + m_ - 1];
      long double acc = 0.0L;  // column 0 by direct dot product
      for (std::size_t u = 0; u < m_; ++u) acc += static_cast<long double>(q[i + u]) * t[u];
      qt[0] = acc;
    }
    seeded_ = true;
    last_row_ = i;
  }

  // Key scale: (sigma_q / 2) * d^2 for a regular row, d^2 itself for a
  // flat-query row; both are positive monotone images of the distance.
  void finish_keys_row(std::size_t i, std::vector<double>& out, bool only_col0_and_flats) {
    const auto& qt = qt_[0];
    const auto& tmu = tmu_[0];
    const auto& tinv = tinv_sig_[0];
    const auto& tflat = tflat_[0];
    const bool flat_q = qsig_[0][i] < kFlatStdEps;
    if (flat_q) {
      for (std::size_t j = 0; j < n_cols_; ++j)
        out[j] = tflat[j] ? 0.0 : static_cast<double>(m_);
      return;
    }
    const long double a_mu = static_cast<long double>(m_) * qmu_[0][i];
    const long double c = static_cast<long double>(m_) * qsig_[0][i];
    const double flat_key = 0.5 * static_cast<double>(m_) * static_cast<double>(qsig_[0][i]);
    const std::size_t first = only_col0_and_flats ? 1 : 0;
    if (!only_col0_and_flats) {
      for (std::size_t j = first; j < n_cols_; ++j)
        out[j] = static_cast<double>(c - (qt[j] - a_mu * tmu[j]) * tinv[j]);
    }
    out[0] = static_cast<double>(c - (qt[0] - a_mu * tmu[0]) * tinv[0]);
    if (any_tflat_[0]) {
      for (std::size_t j = 0; j < n_cols_; ++j)
        if (tflat[j]) out[j] = flat_key;
    }
  }

  void emit_dim(std::size_t dd, bool squared, std::vector<double>& out) {
    const std::size_t i = row_;
    const long double msq = static_cast<long double>(m_);
    const bool flat_q = qsig_[dd][i] < kFlatStdEps;
    const long double q_mu_m = msq * qmu_[dd][i];
    const long double inv_mq = flat_q ? 0.0L : 1.0L / (msq * qsig_[dd][i]);
    const auto& qt = qt_[dd];
    const auto& tmu = tmu_[dd];
    const auto& tinv = tinv_sig_[dd];
    const auto& tflat = tflat_[dd];
    for (std::size_t j = 0; j < n_cols_; ++j) {
      double v;
      if (flat_q || tflat[j]) {
        v = (flat_q && tflat[j]) ? 0.0 : static_cast<double>(m_);  // squared form
        if (!squared) v = std::sqrt(v);
      } else {
        long double rho = (qt[j] - q_mu_m * tmu[j]) * inv_mq * tinv[j];
        rho = std::clamp(rho, -1.0L, 1.0L);
        const long double d2 = 2.0L * msq * (1.0L - rho);
        v = squared ? static_cast<double>(d2)
                    : static_cast<double>(std::sqrt(d2));
      }
      out[j] += v;
    }
  }

  const TimeSeries* query_;
  const TimeSeries* target_;
  std::size_t m_;
  std::size_t reseed_every_;
  std::size_t n_rows_total_ = 0, n_cols_ = 0, row_ = 0, row_end_ = 0;
  std::size_t last_row_ = 0;
  bool seeded_ = false;
  std::vector<std::vector<long double>> qmu_, qsig_, tmu_, tinv_sig_;
  std::vector<std::vector<char>> tflat_;
  std::vector<bool> any_tflat_;
  std::vector<std::vector<long double>> qt_;
};

inline ProfileStream distance_profiles_streaming(const TimeSeries& query, const TimeSeries& target,
                                                 std::size_t m) {
  return ProfileStream(query, target, m);
}

}  // namespace subseq

#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "subseq/distprof.hpp"

namespace subseq {

enum class GraphMode : std::uint8_t { kSelf = 0, kCross = 1 };

// Neighbor start indices for every query subsequence, ranked nearest first.
struct KnnGraph {
  std::vector<std::uint64_t> indices;  // row-major, n_rows x k
  GraphMode mode = GraphMode::kSelf;
  std::uint32_t m = 0;
  std::uint32_t k = 0;

  std::size_t n_rows() const { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::uint64_t> row(std::size_t i) const {
    return std::span<const std::uint64_t>(indices).subspan(i * k, k);
  }
};

namespace detail {

// Mask [i - floor(m/2), i + ceil(m/2)) with +inf, clipped to the profile.
inline void mask_span(std::vector<double>& values, std::size_t i, std::size_t m) {
  const std::size_t lo = (i >= m / 2) ? i - m / 2 : 0;
  const std::size_t hi = std::min(values.size(), i + (m + 1) / 2);
  for (std::size_t j = lo; j < hi; ++j) values[j] = std::numeric_limits<double>::infinity();
}

// Lowest index wins ties; SIZE_MAX when everything is masked.
inline std::size_t argmin(const std::vector<double>& values) {
  double best_v = std::numeric_limits<double>::infinity();
  for (const double v : values) best_v = v < best_v ? v : best_v;
  if (std::isinf(best_v)) return SIZE_MAX;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (values[j] == best_v) return j;
  return SIZE_MAX;
}

// Per-block minima so repeated argmin+mask rounds touch O(n/B + B) entries
// instead of rescanning the row. Same result as a plain scan: the first
// block holding the global min, then the first entry inside it.
class BlockMinIndex {
 public:
  static constexpr std::size_t kBlock = 64;

  void build(const std::vector<double>& v) {
    n_ = v.size();
    mins_.assign((n_ + kBlock - 1) / kBlock, std::numeric_limits<double>::infinity());
    for (std::size_t b = 0; b < mins_.size(); ++b) recompute(v, b);
  }

  std::size_t argmin(const std::vector<double>& v) const {
    double best = std::numeric_limits<double>::infinity();
    for (const double bm : mins_) best = bm < best ? bm : best;
    if (std::isinf(best)) return SIZE_MAX;
    for (std::size_t b = 0; b < mins_.size(); ++b) {
      if (mins_[b] == best) {
        const std::size_t hi = std::min(n_, (b + 1) * kBlock);
        for (std::size_t j = b * kBlock; j < hi; ++j)
          if (v[j] == best) return j;
      }
    }
    return SIZE_MAX;
  }

  void mask(std::vector<double>& v, std::size_t i, std::size_t m) {
    const std::size_t lo = (i >= m / 2) ? i - m / 2 : 0;
    const std::size_t hi = std::min(n_, i + (m + 1) / 2);
    for (std::size_t j = lo; j < hi; ++j) v[j] = std::numeric_limits<double>::infinity();
    for (std::size_t b = lo / kBlock; b * kBlock < hi; ++b) recompute(v, b);
  }

 private:
  void recompute(const std::vector<double>& v, std::size_t b) {
    const std::size_t hi = std::min(n_, (b + 1) * kBlock);
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t j = b * kBlock; j < hi; ++j) m = v[j] < m ? v[j] : m;
    mins_[b] = m;
  }

  std::vector<double> mins_;
  std::size_t n_ = 0;
};

// The shared pick loop of both builders: optionally mask the query's own
// zone, then take k argmin picks, masking around each pick before the next.
inline void pick_k_neighbors(std::vector<double>& dist, std::size_t row, std::size_t m,
                             std::size_t k, bool self_mode, std::uint64_t* out) {
  thread_local BlockMinIndex index;
  if (self_mode) mask_span(dist, row, m);
  index.build(dist);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t idx = index.argmin(dist);
    if (idx == SIZE_MAX)
      throw ConfigError("knn graph: row " + std::to_string(row) + " has only " +
                        std::to_string(j) + " of " + std::to_string(k) +
                        " candidates after exclusion-zone masking");
    out[j] = idx;
    index.mask(dist, idx, m);
  }
}

template <typename RowFn>
inline void parallel_blocks(std::size_t n_rows, std::size_t block, std::size_t threads,
                            RowFn&& fn) {
  const std::size_t n_blocks = (n_rows + block - 1) / block;
  if (threads <= 1 || n_blocks <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) fn(b * block, std::min(n_rows, (b + 1) * block));
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      fn(b * block, std::min(n_rows, (b + 1) * block));
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_threads = std::min(threads, n_blocks);
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline KnnGraph build_streaming(const TimeSeries& query, const TimeSeries& target, std::size_t m,
                                std::size_t k, GraphMode mode, std::size_t threads) {
  if (k == 0) throw ConfigError("knn graph: k must be >= 1");
  if (m == 0 || m > query.length() || m > target.length())
    throw ConfigError("knn graph: m exceeds series length");
  const std::size_t n_rows = query.length() - m + 1;
  KnnGraph g;
  g.mode = mode;
  g.m = static_cast<std::uint32_t>(m);
  g.k = static_cast<std::uint32_t>(k);
  g.indices.resize(n_rows * k);
  const bool self_mode = mode == GraphMode::kSelf;
  // Blocks align with the re-seed period so results are bit-identical for
  // any thread count.
  const std::size_t block = ProfileStream::kDefaultReseed;
  parallel_blocks(n_rows, block, threads, [&](std::size_t lo, std::size_t hi) {
    ProfileStream stream(query, target, m, lo, hi);
    std::vector<double> dist;
    DistanceProfile prof;
    for (std::size_t i = lo; i < hi; ++i) {
      if (query.dims() == 1) {
        stream.next_pick_keys(dist);  // orders like the distances, no sqrt
      } else {
        stream.next(prof);
        dist.swap(prof.values);
      }
      pick_k_neighbors(dist, i, m, k, self_mode, &g.indices[i * k]);
    }
  });
  return g;
}

inline KnnGraph build_naive(const TimeSeries& query, const TimeSeries& target, std::size_t m,
                            std::size_t k, GraphMode mode, std::size_t threads) {
  if (k == 0) throw ConfigError("knn graph: k must be >= 1");
  if (m == 0 || m > query.length() || m > target.length())
    throw ConfigError("knn graph: m exceeds series length");
  const std::size_t n_rows = query.length() - m + 1;
  KnnGraph g;
  g.mode = mode;
  g.m = static_cast<std::uint32_t>(m);
  g.k = static_cast<std::uint32_t>(k);
  g.indices.resize(n_rows * k);
  const bool self_mode = mode == GraphMode::kSelf;
  parallel_blocks(n_rows, 256, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto q = extract_subsequence(query, i, m);
      DistanceProfile prof = (query.dims() == 1) ? distance_profile_brute(q[0], target)
                                                 : multivariate_distance_profile(q, target);
      pick_k_neighbors(prof.values, i, m, k, self_mode, &g.indices[i * k]);
    }
  });
  return g;
}

}  // namespace detail

inline DistanceProfile mask_with_inf(DistanceProfile d, std::size_t i, std::size_t m) {
  if (i >= d.size()) throw std::out_of_range("mask_with_inf: index out of range");
  detail::mask_span(d.values, i, m);
  return d;
}

inline KnnGraph knn_stomp_self(const TimeSeries& t, std::size_t m, std::size_t k,
                               std::size_t threads = 0) {
  if (threads == 0) threads = std::thread::hardware_concurrency();
  return detail::build_streaming(t, t, m, k, GraphMode::kSelf, threads);
}

inline KnnGraph knn_stomp_cross(const TimeSeries& t_test, const TimeSeries& t_train, std::size_t m,
                                std::size_t k, std::size_t threads = 0) {
  if (threads == 0) threads = std::thread::hardware_concurrency();
  return detail::build_streaming(t_test, t_train, m, k, GraphMode::kCross, threads);
}

// Quadratic reference builders; the benchmark baseline and the oracle the
// streaming builders are tested against.
inline KnnGraph knn_naive_self(const TimeSeries& t, std::size_t m, std::size_t k,
                               std::size_t threads = 1) {
  return detail::build_naive(t, t, m, k, GraphMode::kSelf, threads);
}

inline KnnGraph knn_naive_cross(const TimeSeries& t_test, const TimeSeries& t_train, std::size_t m,
                                std::size_t k, std::size_t threads = 1) {
  return detail::build_naive(t_test, t_train, m, k, GraphMode::kCross, threads);
}

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  void raw(void* dst, std::size_t n) { std::memcpy(dst, take(n), n); }
  std::size_t offset() const { return pos_; }
  bool exhausted() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > data_.size())
      throw FormatError(path_ + ": truncated at offset " + std::to_string(pos_));
    const auto* p = reinterpret_cast<const unsigned char*>(data_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace detail

// Graph file: magic KNNG, version u32, mode u8, m u32, k u32, n_rows u64,
// then n_rows*k neighbor indices as u64, row-major. Little-endian.
inline void save_graph(const KnnGraph& g, const std::string& path) {
  std::string buf;
  buf.reserve(25 + g.indices.size() * 8);
  buf += "KNNG";
  detail::put_u32(buf, 1);
  buf.push_back(static_cast<char>(g.mode));
  detail::put_u32(buf, g.m);
  detail::put_u32(buf, g.k);
  detail::put_u64(buf, g.n_rows());
  for (std::uint64_t v : g.indices) detail::put_u64(buf, v);
  detail::write_file_bytes(path, buf);
}

inline KnnGraph load_graph(const std::string& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "KNNG", 4) != 0) throw FormatError(path + ": bad magic, not a KNNG file");
  const std::uint32_t version = r.u32();
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  KnnGraph g;
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError(path + ": bad mode byte at offset " + std::to_string(r.offset() - 1));
  g.mode = static_cast<GraphMode>(mode);
  g.m = r.u32();
  g.k = r.u32();
  const std::uint64_t n_rows = r.u64();
  if (g.k == 0 || g.m == 0) throw FormatError(path + ": zero m or k");
  g.indices.resize(n_rows * g.k);
  for (auto& v : g.indices) v = r.u64();
  if (!r.exhausted())
    throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
  return g;
}

inline void save_graph_csv(const KnnGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "row,rank,neighbor\n";
  for (std::size_t i = 0; i < g.n_rows(); ++i)
    for (std::size_t j = 0; j < g.k; ++j)
      out << i << "," << j << "," << g.row(i)[j] << "\n";
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace subseq

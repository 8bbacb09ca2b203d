#include "subseq/knngraph.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "subseq/common.hpp"

using namespace subseq;

namespace {

TimeSeries random_series(Rng& rng, std::size_t n, std::size_t dims = 1) {
  std::vector<std::vector<double>> values(dims, std::vector<double>(n));
  for (auto& dim : values)
    for (auto& v : dim) v = rng.next_gaussian();
  return TimeSeries(std::move(values));
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void require_graphs_equal(const KnnGraph& a, const KnnGraph& b) {
  REQUIRE(a.mode == b.mode);
  REQUIRE(a.m == b.m);
  REQUIRE(a.k == b.k);
  REQUIRE(a.indices == b.indices);
}

}  // namespace

TEST_CASE("mask_with_inf masks the half-open zone") {
  DistanceProfile d;
  d.values.assign(10, 1.0);

  SECTION("interior index") {
    const auto masked = mask_with_inf(d, 5, 4);
    for (std::size_t j = 0; j < 10; ++j) {
      const bool in_zone = j >= 3 && j < 7;
      REQUIRE(std::isinf(masked[j]) == in_zone);
    }
  }

  SECTION("left-clipped") {
    const auto masked = mask_with_inf(d, 0, 4);
    REQUIRE(std::isinf(masked[0]));
    REQUIRE(std::isinf(masked[1]));
    REQUIRE(masked[2] == 1.0);
  }

  SECTION("idempotent") {
    const auto once = mask_with_inf(d, 4, 6);
    const auto twice = mask_with_inf(once, 4, 6);
    REQUIRE(once.values == twice.values);
  }

  SECTION("out of range") {
    REQUIRE_THROWS_AS(mask_with_inf(d, 10, 4), std::out_of_range);
  }
}

TEST_CASE("planted motif pair find each other") {
  Rng rng(21);
  std::vector<double> values(260);
  for (auto& v : values) v = rng.next_gaussian() * 0.2;
  // identical pattern planted at 30 and 180
  for (std::size_t u = 0; u < 20; ++u) {
    const double pattern = std::sin(static_cast<double>(u) * 0.7) * 4.0;
    values[30 + u] = pattern;
    values[180 + u] = pattern;
  }
  const TimeSeries t = TimeSeries::univariate(values);
  const auto g = knn_stomp_self(t, 20, 1);
  REQUIRE(g.row(30)[0] == 180);
  REQUIRE(g.row(180)[0] == 30);
}

TEST_CASE("streaming builders match the naive oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t d = (trial % 2 == 0) ? 1 : 2;
    const std::size_t m = (trial % 3 == 0) ? 8 : 25;
    const std::size_t k = 1 + trial % 3;
    const std::size_t n = 4 * k * m + 40 + rng.next_below(80);

    SECTION("self mode trial " + std::to_string(trial)) {
      const TimeSeries t = random_series(rng, n, d);
      const auto fast = knn_stomp_self(t, m, k);
      const auto oracle = knn_naive_self(t, m, k);
      require_graphs_equal(fast, oracle);
      // exclusion-zone conformance
      for (std::size_t i = 0; i < fast.n_rows(); ++i)
        for (auto idx : fast.row(i)) {
          const auto diff = idx > i ? idx - i : i - idx;
          REQUIRE(diff >= m / 2);
        }
    }

    SECTION("cross mode trial " + std::to_string(trial)) {
      const TimeSeries train = random_series(rng, n, d);
      const TimeSeries test = random_series(rng, n / 2 + m, d);
      const auto fast = knn_stomp_cross(test, train, m, k);
      const auto oracle = knn_naive_cross(test, train, m, k);
      require_graphs_equal(fast, oracle);
      REQUIRE(fast.n_rows() == test.length() - m + 1);
    }
  }
}

TEST_CASE("self graph neighbor distances are non-decreasing along a row") {
  Rng rng(4);
  const TimeSeries t = random_series(rng, 220);
  const std::size_t m = 16, k = 4;
  const auto g = knn_stomp_self(t, m, k);
  for (std::size_t i = 0; i < g.n_rows(); i += 13) {
    const auto q = extract_subsequence(t, i, m);
    double prev = -1.0;
    for (auto idx : g.row(i)) {
      const auto w = extract_subsequence(t, idx, m);
      const double dist = znorm_distance(q[0], w[0]);
      REQUIRE(dist >= prev);
      prev = dist;
    }
  }
}

TEST_CASE("cross graph on identical series finds the exact copy") {
  Rng rng(17);
  const TimeSeries t = random_series(rng, 150);
  const auto g = knn_stomp_cross(t, t, 12, 1);
  for (std::size_t i = 0; i < g.n_rows(); ++i) {
    REQUIRE(g.row(i)[0] == i);
    const auto q = extract_subsequence(t, i, 12);
    REQUIRE(znorm_distance(q[0], q[0]) == 0.0);
  }
}

TEST_CASE("cross graph with k = 1 is a cross matrix profile index") {
  Rng rng(55);
  const TimeSeries train = random_series(rng, 160);
  const TimeSeries test = random_series(rng, 80);
  const std::size_t m = 10;
  const auto g = knn_stomp_cross(test, train, m, 1);
  for (std::size_t i = 0; i < g.n_rows(); ++i) {
    const auto q = extract_subsequence(test, i, m);
    const auto prof = distance_profile_brute(q[0], train);
    std::size_t best = 0;
    for (std::size_t j = 1; j < prof.size(); ++j)
      if (prof[j] < prof[best]) best = j;
    REQUIRE(g.row(i)[0] == best);
  }
}

TEST_CASE("thread count does not change the result") {
  Rng rng(2);
  const TimeSeries t = random_series(rng, 300, 2);
  const auto serial = knn_stomp_self(t, 14, 3, 1);
  const auto threaded = knn_stomp_self(t, 14, 3, 4);
  require_graphs_equal(serial, threaded);
}

TEST_CASE("insufficient candidates raise an error naming the row") {
  const TimeSeries t = TimeSeries::univariate({1, 5, 2, 8, 3, 9, 4, 7, 2, 6});
  // m = 6: only 5 subsequences, all within each other's exclusion zone
  REQUIRE_THROWS_WITH(knn_stomp_self(t, 6, 3), Catch::Matchers::ContainsSubstring("row 0"));
}

TEST_CASE("graph serialization round-trips") {
  Rng rng(13);
  const TimeSeries t = random_series(rng, 120);
  const auto g = knn_stomp_self(t, 10, 3);
  const std::string path = temp_path("subseq_test_graph.knng");
  save_graph(g, path);
  const auto loaded = load_graph(path);
  require_graphs_equal(g, loaded);

  SECTION("truncated file") {
    auto bytes = detail::read_file_bytes(path);
    detail::write_file_bytes(path, bytes.substr(0, bytes.size() / 2));
    REQUIRE_THROWS_AS(load_graph(path), FormatError);
    REQUIRE_THROWS_WITH(load_graph(path), Catch::Matchers::ContainsSubstring("truncated"));
  }

  SECTION("wrong magic") {
    auto bytes = detail::read_file_bytes(path);
    bytes[0] = 'X';
    detail::write_file_bytes(path, bytes);
    REQUIRE_THROWS_WITH(load_graph(path), Catch::Matchers::ContainsSubstring("magic"));
  }

  std::remove(path.c_str());
}

TEST_CASE("csv escape hatch lists row,rank,neighbor triples") {
  Rng rng(3);
  const TimeSeries t = random_series(rng, 90);
  const auto g = knn_stomp_self(t, 8, 2);
  const std::string path = temp_path("subseq_test_graph.csv");
  save_graph_csv(g, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "row,rank,neighbor");
  std::string first;
  std::getline(in, first);
  REQUIRE(first == "0,0," + std::to_string(g.row(0)[0]));
  std::remove(path.c_str());
}

#include "subseq/metrics.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "subseq/common.hpp"

using namespace subseq;

namespace {

LabelSeries series(std::vector<int> labels, int n_classes = 3) {
  return LabelSeries(std::move(labels), n_classes);
}

// Background run, then a class run of the given length.
std::vector<int> run_at(std::size_t n, std::size_t start, std::size_t len, int cls) {
  std::vector<int> y(n, 0);
  for (std::size_t i = start; i < start + len; ++i) y[i] = cls;
  return y;
}

LabelSeries random_labels(Rng& rng, std::size_t n, int n_classes) {
  std::vector<int> y(n);
  int cur = 0;
  for (auto& v : y) {
    if (rng.next_double() < 0.15) cur = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_classes)));
    v = cur;
  }
  return LabelSeries(std::move(y), n_classes);
}

}  // namespace

TEST_CASE("find_onsets marks foreground starts") {
  REQUIRE(find_onsets(series({0, 0, 1, 1, 0, 2})) ==
          std::vector<Onset>{{2, 1}, {5, 2}});
  REQUIRE(find_onsets(series({0, 0, 0})).empty());
  // class change without a background gap starts a new onset
  REQUIRE(find_onsets(series({1, 1, 2, 2})) == std::vector<Onset>{{0, 1}, {2, 2}});
}

TEST_CASE("median_foreground_length takes the lower median") {
  // runs of lengths 3, 5, 7
  REQUIRE(median_foreground_length(series({1, 1, 1, 0, 2, 2, 2, 2, 2, 0, 1, 1, 1, 1, 1, 1, 1})) == 5);
  // even count: lengths 4 and 6 -> lower median 4
  REQUIRE(median_foreground_length(series({1, 1, 1, 1, 0, 2, 2, 2, 2, 2, 2})) == 4);
  REQUIRE(median_foreground_length(series({0, 2, 2, 0})) == 2);
  REQUIRE_THROWS_AS(median_foreground_length(series({0, 0, 0})), ConfigError);
}

TEST_CASE("onset_f1 identity") {
  const auto y = series(run_at(200, 100, 30, 1));
  const auto score = onset_f1(y, y, median_foreground_length(y));
  REQUIRE(score.precision == 1.0);
  REQUIRE(score.recall == 1.0);
  REQUIRE(score.f1 == 1.0);
  REQUIRE(score.n_pred_onsets == 1);
  REQUIRE(score.n_true_onsets == 1);
}

TEST_CASE("onset_f1 threshold arithmetic") {
  // m_med = 50 -> tolerance 5, strict
  const auto truth = series(run_at(300, 100, 50, 1));
  REQUIRE(median_foreground_length(truth) == 50);

  SECTION("|i - j| = 4 matches") {
    const auto pred = series(run_at(300, 104, 50, 1));
    const auto score = onset_f1(pred, truth, 50);
    REQUIRE(score.precision == 1.0);
    REQUIRE(score.recall == 1.0);
  }

  SECTION("|i - j| = 6 does not match") {
    const auto pred = series(run_at(300, 106, 50, 1));
    const auto score = onset_f1(pred, truth, 50);
    REQUIRE(score.precision == 0.0);
    REQUIRE(score.recall == 0.0);
    REQUIRE(score.f1 == 0.0);
  }

  SECTION("|i - j| exactly at 0.1 * m_med does not match") {
    const auto pred = series(run_at(300, 105, 50, 1));
    REQUIRE(onset_f1(pred, truth, 50).precision == 0.0);
  }

  SECTION("class must match too") {
    const auto pred = series(run_at(300, 100, 50, 2));
    REQUIRE(onset_f1(pred, truth, 50).f1 == 0.0);
  }
}

TEST_CASE("onset_f1 degenerate counts") {
  const auto empty = series(std::vector<int>(50, 0));
  const auto one = series(run_at(50, 10, 5, 1));
  const auto s = onset_f1(empty, one, 5);
  REQUIRE(s.precision == 0.0);  // nothing predicted
  REQUIRE(s.recall == 0.0);
  REQUIRE(s.f1 == 0.0);
  REQUIRE_THROWS_AS(onset_f1(empty, series(std::vector<int>(49, 0)), 5), ConfigError);
}

TEST_CASE("onset_f1 role-swap symmetry is exact") {
  Rng rng(314);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_labels(rng, 120, 4);
    const auto b = random_labels(rng, 120, 4);
    const auto ab = onset_f1(a, b, 20);
    const auto ba = onset_f1(b, a, 20);
    REQUIRE(ab.precision == ba.recall);
    REQUIRE(ab.recall == ba.precision);
    REQUIRE(ab.f1 >= 0.0);
    REQUIRE(ab.f1 <= 1.0);
  }
}

TEST_CASE("small shifts below the tolerance keep F1 at 1") {
  const auto truth = series(run_at(400, 50, 60, 1), 2);
  const std::size_t m_med = median_foreground_length(truth);  // 60 -> tolerance 6
  for (std::size_t shift = 1; shift <= 5; ++shift) {
    const auto pred = series(run_at(400, 50 + shift, 60, 1), 2);
    REQUIRE(onset_f1(pred, truth, m_med).f1 == 1.0);
  }
}

#include "subseq/trainer.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "subseq/datasynth.hpp"

using namespace subseq;

namespace {

TrainConfig small_config(std::size_t m, std::size_t k) {
  TrainConfig cfg;
  cfg.m = m;
  cfg.k = k;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.learning_rate = 2e-3;
  cfg.seed = 7;
  cfg.eval_every = 2;
  cfg.smooth_window_candidates = {1, m};
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("sample_subsequences draws ceil(n/m) distinct starts") {
  Rng rng(1);
  std::vector<double> values(100);
  for (auto& v : values) v = rng.next_gaussian();
  const TimeSeries t = TimeSeries::univariate(values);
  const LabelSeries y(std::vector<int>(91, 0), 2);

  SECTION("n = 100, m = 10 gives 10 distinct indices") {
    const auto sample = sample_subsequences(t, y, 10, rng);
    REQUIRE(sample.indices.size() == 10);
    const std::set<std::size_t> unique(sample.indices.begin(), sample.indices.end());
    REQUIRE(unique.size() == 10);
    for (const std::size_t idx : sample.indices) REQUIRE(idx <= 90);
  }

  SECTION("n = m samples exactly the single start 0") {
    const TimeSeries one = TimeSeries::univariate(std::vector<double>(values.begin(), values.begin() + 10));
    const LabelSeries ly({1}, 2);
    const auto sample = sample_subsequences(one, ly, 10, rng);
    REQUIRE(sample.indices == std::vector<std::size_t>{0});
    REQUIRE(sample.labels == std::vector<int>{1});
  }

  SECTION("all draws distinct across 1000 seeds") {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      Rng r(seed);
      const auto sample = sample_subsequences(t, y, 10, r);
      REQUIRE(sample.indices.size() == 10);
      const std::set<std::size_t> unique(sample.indices.begin(), sample.indices.end());
      REQUIRE(unique.size() == sample.indices.size());
    }
  }

  SECTION("m larger than the series errors") {
    REQUIRE_THROWS_AS(sample_subsequences(t, y, 101, rng), ConfigError);
  }
}

TEST_CASE("get_neighbors materializes graph rows position-wise") {
  Rng rng(3);
  std::vector<double> values(60);
  for (auto& v : values) v = rng.next_gaussian();
  const TimeSeries t = TimeSeries::univariate(values);
  std::vector<int> labels(51);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
  const LabelSeries y(labels, 3);

  KnnGraph g;
  g.mode = GraphMode::kSelf;
  g.m = 10;
  g.k = 2;
  g.indices = {5, 40, /*row1*/ 20, 0, /*row2*/ 33, 12};

  SECTION("batch of one is a row lookup") {
    const std::vector<std::size_t> focal{1};
    const auto nb = get_neighbors(g, focal, t, y);
    REQUIRE(nb.indices == std::vector<std::size_t>{20, 0});
    REQUIRE(nb.labels == std::vector<int>{y[20], y[0]});
    REQUIRE(nb.windows.shape() == ad::Shape{1, 2, 1, 10});
  }

  SECTION("three-row case matches manual extraction") {
    const std::vector<std::size_t> focal{0, 1, 2};
    const auto nb = get_neighbors(g, focal, t, y);
    REQUIRE(nb.indices == std::vector<std::size_t>{5, 40, 20, 0, 33, 12});
    for (std::size_t i = 0; i < 6; ++i) {
      REQUIRE(nb.labels[i] == y[nb.indices[i]]);
      const auto window = extract_subsequence(t, nb.indices[i], 10);
      for (std::size_t u = 0; u < 10; ++u)
        REQUIRE(nb.windows.data()[i * 10 + u] == window[0][u]);
    }
  }

  SECTION("row outside the graph errors") {
    const std::vector<std::size_t> focal{3};
    REQUIRE_THROWS_AS(get_neighbors(g, focal, t, y), ConfigError);
  }
}

TEST_CASE("training neighbor lookups respect the exclusion zone") {
  const std::size_t m = 16, k = 3;
  const auto data = planted_motif_dataset(2, 10, m, 0.3, 19);
  const auto graph = knn_stomp_self(data.train.series, m, k);
  Rng rng(4);
  const auto sample = sample_subsequences(data.train.series, data.train.labels, m, rng);
  const auto nb = get_neighbors(graph, sample.indices, data.train.series, data.train.labels);
  for (std::size_t i = 0; i < sample.indices.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t focal = sample.indices[i];
      const std::size_t neighbor = nb.indices[i * k + j];
      const std::size_t gap = focal > neighbor ? focal - neighbor : neighbor - focal;
      REQUIRE(gap >= m / 2);
    }
}

TEST_CASE("training on a small planted dataset") {
  const std::size_t m = 16, k = 3;
  const auto data = planted_motif_dataset(2, 10, m, 0.3, 23);
  TrainConfig cfg = small_config(m, k);

  SECTION("loss decreases and the run is reproducible") {
    const auto first = train(data.train.series, data.train.labels, cfg);
    REQUIRE(first.epoch_losses.size() == cfg.epochs);
    for (const double loss : first.epoch_losses) REQUIRE(std::isfinite(loss));
    REQUIRE(first.epoch_losses.back() < first.epoch_losses.front());

    const auto second = train(data.train.series, data.train.labels, cfg);
    for (std::size_t i = 0; i < first.model->params().size(); ++i)
      REQUIRE(first.model->params().all()[i].second.data() ==
              second.model->params().all()[i].second.data());
    REQUIRE(first.epoch_losses == second.epoch_losses);
  }

  SECTION("validation tracking keeps the best checkpoint") {
    const auto result = train(data.train.series, data.train.labels, cfg,
                              ValidationData{data.valid.series, data.valid.labels});
    REQUIRE(result.best_valid_f1 >= 0.0);
    REQUIRE(result.best_valid_f1 <= 1.0);
    REQUIRE(std::find(cfg.smooth_window_candidates.begin(), cfg.smooth_window_candidates.end(),
                      result.best_window) != cfg.smooth_window_candidates.end());
  }
}

TEST_CASE("single-foreground degenerate data still trains without NaN") {
  const std::size_t m = 16;
  const auto data = planted_motif_dataset(1, 10, m, 0.3, 31);
  REQUIRE(data.train.labels.n_classes == 2);
  TrainConfig cfg = small_config(m, 2);
  cfg.epochs = 2;
  const auto result = train(data.train.series, data.train.labels, cfg);
  for (const double loss : result.epoch_losses) REQUIRE(std::isfinite(loss));
}

TEST_CASE("training rejects label series without both label kinds") {
  Rng rng(5);
  std::vector<double> values(80);
  for (auto& v : values) v = rng.next_gaussian();
  const TimeSeries t = TimeSeries::univariate(values);
  TrainConfig cfg = small_config(8, 2);
  REQUIRE_THROWS_AS(train(t, LabelSeries(std::vector<int>(73, 0), 2), cfg), ConfigError);
  REQUIRE_THROWS_AS(train(t, LabelSeries(std::vector<int>(73, 1), 2), cfg), ConfigError);
}

TEST_CASE("inference contract on a planted dataset") {
  const std::size_t m = 16, k = 2;
  const auto data = planted_motif_dataset(2, 10, m, 0.2, 37);
  TrainConfig cfg = small_config(m, k);
  cfg.epochs = 6;
  const auto result = train(data.train.series, data.train.labels, cfg);

  SECTION("self-test: inferring the training series mostly reproduces its labels") {
    const LabelSeries pred = infer(data.train.series, data.train.series, data.train.labels,
                                   *result.model, m, k, 1);
    REQUIRE(pred.size() == data.train.labels.size());
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      agree += pred[i] == data.train.labels[i] ? 1 : 0;
    // the nearest neighbors include the (excluded-zone) siblings of each
    // window, so the labels should be largely recoverable
    REQUIRE(static_cast<double>(agree) / static_cast<double>(pred.size()) > 0.7);
  }

  SECTION("output length and thread-count independence") {
    const LabelSeries one = infer(data.test.series, data.train.series, data.train.labels,
                                  *result.model, m, k, 1);
    REQUIRE(one.size() == data.test.series.length() - m + 1);
    const LabelSeries two = infer(data.test.series, data.train.series, data.train.labels,
                                  *result.model, m, k, 2);
    REQUIRE(one.labels == two.labels);
  }

  SECTION("manifest mismatches are rejected") {
    REQUIRE_THROWS_AS(infer(data.test.series, data.train.series, data.train.labels,
                            *result.model, m + 1, k, 1),
                      ConfigError);
    REQUIRE_THROWS_AS(infer(data.test.series, data.train.series, data.train.labels,
                            *result.model, m, k + 1, 1),
                      ConfigError);
  }
}

TEST_CASE("desk-scale run: loss halves on a two-motif dataset") {
  // ~3000-step training series, m = 32, k = 5
  const std::size_t m = 32, k = 5;
  const auto data = planted_motif_dataset(2, 26, m, 0.4, 101);
  REQUIRE(data.train.series.length() >= 2800);
  TrainConfig cfg;
  cfg.m = m;
  cfg.k = k;
  cfg.epochs = 8;
  cfg.batch_size = 32;
  cfg.learning_rate = 2e-3;
  cfg.seed = 11;
  cfg.threads = 2;
  const auto result = train(data.train.series, data.train.labels, cfg);
  double best = result.epoch_losses.front();
  for (const double loss : result.epoch_losses) best = std::min(best, loss);
  INFO("first " << result.epoch_losses.front() << " best " << best);
  REQUIRE(best <= 0.5 * result.epoch_losses.front());
}

#include "subseq/egonet.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>

#include "subseq/common.hpp"

using namespace subseq;
using namespace subseq::nn;
using ad::Tensor;

namespace {

BackboneConfig small_cfg(BackboneKind kind = BackboneKind::kTransformer, std::size_t d = 1) {
  BackboneConfig cfg;
  cfg.kind = kind;
  cfg.input_dims = d;
  return cfg;
}

EgoBatch random_batch(Rng& rng, std::size_t batch, std::size_t k, std::size_t d, std::size_t m,
                      int n_classes) {
  EgoBatch out;
  std::vector<double> focal(batch * d * m), neigh(batch * k * d * m);
  for (auto& v : focal) v = rng.next_gaussian();
  for (auto& v : neigh) v = rng.next_gaussian();
  out.focal = Tensor::from_vector(std::move(focal), {batch, d, m});
  out.neighbors = Tensor::from_vector(std::move(neigh), {batch, k, d, m});
  out.neighbor_labels.resize(batch * k);
  for (auto& l : out.neighbor_labels)
    l = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_classes)));
  return out;
}

EgoBatch permute_neighbors(const EgoBatch& batch, const std::vector<std::size_t>& perm) {
  const std::size_t b = batch.focal.dim(0), k = batch.neighbors.dim(1);
  const std::size_t d = batch.neighbors.dim(2), m = batch.neighbors.dim(3);
  EgoBatch out;
  out.focal = Tensor::from_vector(batch.focal.data(), batch.focal.shape());
  std::vector<double> neigh(batch.neighbors.numel());
  out.neighbor_labels.resize(b * k);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(batch.neighbors.data().data() + (i * k + perm[j]) * d * m, d * m,
                  neigh.data() + (i * k + j) * d * m);
      out.neighbor_labels[i * k + j] = batch.neighbor_labels[i * k + perm[j]];
    }
  out.neighbors = Tensor::from_vector(std::move(neigh), {b, k, d, m});
  return out;
}

}  // namespace

TEST_CASE("predict_class argmax and ties") {
  SECTION("one-hot rows") {
    const Tensor logits = Tensor::from_vector({0, 0, 5, 0, /**/ 7, 0, 0, 0}, {2, 4});
    REQUIRE(predict_class(logits) == std::vector<int>{2, 0});
  }

  SECTION("all-equal logits tie to class 0") {
    const Tensor logits = Tensor::zeros({1, 3});
    REQUIRE(predict_class(logits) == std::vector<int>{0});
  }

  SECTION("matches a naive scan") {
    Rng rng(5);
    std::vector<double> data(6 * 5);
    for (auto& v : data) v = rng.next_gaussian();
    const Tensor logits = Tensor::from_vector(data, {6, 5});
    const auto pred = predict_class(logits);
    for (std::size_t i = 0; i < 6; ++i) {
      int best = 0;
      for (int c = 1; c < 5; ++c)
        if (data[i * 5 + static_cast<std::size_t>(c)] > data[i * 5 + static_cast<std::size_t>(best)])
          best = c;
      REQUIRE(pred[i] == best);
    }
  }

  SECTION("needs at least two classes") {
    REQUIRE_THROWS_AS(predict_class(Tensor::zeros({2, 1})), ConfigError);
  }
}

TEST_CASE("ego-network forward contract") {
  Rng rng(1);
  const std::size_t m = 10, k = 3;
  EgoNetModel model(small_cfg(), m, k, 3, 42);

  SECTION("logit shape") {
    const auto batch = random_batch(rng, 4, k, 1, m, 3);
    REQUIRE(model.forward(batch).shape() == ad::Shape{4, 3});
  }

  SECTION("k = 0 is rejected at construction") {
    REQUIRE_THROWS_AS(EgoNetModel(small_cfg(), m, 0, 3, 1), ConfigError);
  }

  SECTION("label out of range is rejected") {
    auto batch = random_batch(rng, 1, k, 1, m, 3);
    batch.neighbor_labels[0] = 3;
    REQUIRE_THROWS_AS(model.forward(batch), ConfigError);
  }

  SECTION("neighbor shape mismatch is rejected") {
    auto batch = random_batch(rng, 1, k + 1, 1, m, 3);
    REQUIRE_THROWS_AS(model.forward(batch), ConfigError);
  }
}

TEST_CASE("neighbor permutation leaves logits unchanged") {
  Rng rng(2);
  const std::size_t m = 9, k = 4;
  for (int trial = 0; trial < 10; ++trial) {
    EgoNetModel model(small_cfg(), m, k, 3, 100 + static_cast<std::uint64_t>(trial));
    const auto batch = random_batch(rng, 2, k, 1, m, 3);
    const Tensor base = model.forward(batch);

    std::vector<std::size_t> perm{2, 0, 3, 1};
    const Tensor shuffled = model.forward(permute_neighbors(batch, perm));
    double max_diff = 0.0;
    for (std::size_t i = 0; i < base.numel(); ++i)
      max_diff = std::max(max_diff, std::abs(base.data()[i] - shuffled.data()[i]));
    REQUIRE(max_diff <= 1e-5);
  }
}

TEST_CASE("zeroed aggregation blocks decouple the logits from the neighbors") {
  Rng rng(3);
  const std::size_t m = 8, k = 2;
  EgoNetModel model(small_cfg(), m, k, 3, 7);
  for (auto& [name, t] : model.params().all()) {
    if (name.rfind("agg", 0) != 0) continue;
    if (name.find(".norm") != std::string::npos) continue;  // keep identity affines
    auto& mut = const_cast<Tensor&>(t);
    std::fill(mut.data().begin(), mut.data().end(), 0.0);
  }
  auto batch = random_batch(rng, 2, k, 1, m, 3);
  const Tensor base = model.forward(batch);

  // with attention and feed-forward silenced, only the focal readout position
  // can reach the head: replacing every neighbor must not move the logits
  auto other = random_batch(rng, 2, k, 1, m, 3);
  other.focal = Tensor::from_vector(batch.focal.data(), batch.focal.shape());
  const Tensor swapped = model.forward(other);
  for (std::size_t i = 0; i < base.numel(); ++i)
    REQUIRE(swapped.data()[i] == Catch::Approx(base.data()[i]).margin(1e-12));
}

TEST_CASE("a neighbor label reaches the logits") {
  Rng rng(4);
  const std::size_t m = 9, k = 3;
  EgoNetModel model(small_cfg(), m, k, 3, 11);
  auto batch = random_batch(rng, 1, k, 1, m, 3);
  batch.neighbor_labels = {0, 1, 2};
  const Tensor base = model.forward(batch);
  batch.neighbor_labels = {2, 1, 2};  // swap one label
  const Tensor changed = model.forward(batch);
  double diff = 0.0;
  for (std::size_t i = 0; i < base.numel(); ++i)
    diff = std::max(diff, std::abs(base.data()[i] - changed.data()[i]));
  REQUIRE(diff > 1e-8);
}

TEST_CASE("gradients flow into the label embeddings of present labels") {
  Rng rng(5);
  const std::size_t m = 8, k = 2;
  EgoNetModel model(small_cfg(), m, k, 4, 13);
  auto batch = random_batch(rng, 2, k, 1, m, 4);
  batch.neighbor_labels = {1, 3, 3, 1};  // classes 0 and 2 absent
  model.params().zero_grad();
  ad::backward(ad::cross_entropy(model.forward(batch), {0, 2}));
  const Tensor emb = model.label_embeddings();
  const auto& g = emb.grad();
  auto row_mass = [&](int row) {
    double mass = 0.0;
    for (std::size_t j = 0; j < emb.dim(1); ++j)
      mass += std::abs(g[static_cast<std::size_t>(row) * emb.dim(1) + j]);
    return mass;
  };
  REQUIRE(row_mass(1) > 0.0);
  REQUIRE(row_mass(3) > 0.0);
  REQUIRE(row_mass(0) == 0.0);
  REQUIRE(row_mass(2) == 0.0);
}

TEST_CASE("baseline model ignores neighbors") {
  Rng rng(6);
  const std::size_t m = 12;
  BaselineModel model(small_cfg(BackboneKind::kResNet), m, 3, 21);
  REQUIRE_FALSE(model.uses_neighbors());
  auto batch = random_batch(rng, 2, 1, 1, m, 3);
  const Tensor a = model.forward(batch);
  REQUIRE(a.shape() == ad::Shape{2, 3});
  auto other = random_batch(rng, 2, 1, 1, m, 3);
  other.focal = Tensor::from_vector(batch.focal.data(), batch.focal.shape());
  const Tensor b = model.forward(other);
  REQUIRE(a.data() == b.data());
}

TEST_CASE("model checkpoints round-trip through EGOW files") {
  Rng rng(7);
  const std::size_t m = 9, k = 2;
  EgoNetModel model(small_cfg(), m, k, 3, 5);
  const auto batch = random_batch(rng, 2, k, 1, m, 3);
  const Tensor before = model.forward(batch);

  const std::string path =
      (std::filesystem::temp_directory_path() / "subseq_test_model.egow").string();
  save_model(model, path);

  const auto manifest = peek_manifest(path);
  REQUIRE(manifest.kind == "egonet");
  REQUIRE(manifest.m == m);
  REQUIRE(manifest.k == k);
  REQUIRE(manifest.n_classes == 3);

  const auto loaded = load_model(path);
  const Tensor after = loaded->forward(batch);
  REQUIRE(before.data() == after.data());  // bit-exact restore
  std::remove(path.c_str());
}

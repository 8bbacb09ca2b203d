#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "subseq/backbones.hpp"

namespace subseq::nn {

// One classification batch: focal subsequences plus their k labeled
// neighbors from the training series.
struct EgoBatch {
  Tensor focal;                          // [batch, d, m]
  Tensor neighbors;                      // [batch, k, d, m]
  std::vector<int> neighbor_labels;      // batch * k, row-major
};

struct ModelManifest {
  std::string kind;  // "egonet" | "baseline"
  BackboneKind backbone = BackboneKind::kTransformer;
  std::size_t input_dims = 1;
  std::size_t m = 0;
  std::size_t k = 0;
  int n_classes = 0;

  std::string to_json() const {
    nlohmann::json j{{"kind", kind},        {"backbone", to_string(backbone)},
                     {"input_dims", input_dims}, {"m", m},
                     {"k", k},              {"n_classes", n_classes}};
    return j.dump();
  }

  static ModelManifest from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ModelManifest m;
    m.kind = j.at("kind").get<std::string>();
    m.backbone = backbone_kind_from_string(j.at("backbone").get<std::string>());
    m.input_dims = j.at("input_dims").get<std::size_t>();
    m.m = j.at("m").get<std::size_t>();
    m.k = j.at("k").get<std::size_t>();
    m.n_classes = j.at("n_classes").get<int>();
    return m;
  }
};

// Shared classifier surface for the ego-network model and the plain
// backbone baseline the paper compares against. The encode / logits_from
// split lets inference cache backbone representations of training
// subsequences that many ego-networks share.
class SubseqClassifier {
 public:
  virtual ~SubseqClassifier() = default;
  virtual bool uses_neighbors() const = 0;
  // [n, d, m] subsequences -> [n, out_dim] representations
  virtual Tensor encode(const Tensor& x) const = 0;
  // focal_repr [batch, out_dim]; for neighbor-using models neigh_repr is
  // [batch, k, out_dim] with batch*k labels; baseline passes nullptr.
  virtual Tensor logits_from(const Tensor& focal_repr, const Tensor* neigh_repr,
                             const std::vector<int>* neighbor_labels) const = 0;
  virtual ad::ParameterStore& params() = 0;
  virtual const ad::ParameterStore& params() const = 0;
  virtual const ModelManifest& manifest() const = 0;

  Tensor forward(const EgoBatch& batch) const {
    if (!uses_neighbors()) return logits_from(encode(batch.focal), nullptr, nullptr);
    const std::size_t b = batch.focal.dim(0);
    const std::size_t k = manifest().k;
    if (batch.neighbors.ndim() != 4 || batch.neighbors.dim(0) != b || batch.neighbors.dim(1) != k)
      throw ConfigError("forward: neighbors must be [batch, k, d, m]");
    if (batch.neighbor_labels.size() != b * k)
      throw ConfigError("forward: neighbor label count mismatch");
    const Tensor focal_repr = encode(batch.focal);
    const Tensor neigh_in = ad::reshape(
        batch.neighbors, {b * k, batch.neighbors.dim(2), batch.neighbors.dim(3)});
    const Tensor neigh_repr =
        ad::reshape(encode(neigh_in), {b, k, focal_repr.dim(1)});
    return logits_from(focal_repr, &neigh_repr, &batch.neighbor_labels);
  }
};

// Argmax per row; exact ties go to the lowest class index.
inline std::vector<int> predict_class(const Tensor& logits) {
  if (logits.ndim() != 2 || logits.dim(1) < 2)
    throw ConfigError("predict_class: logits must be [batch, n_classes >= 2]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<int> out(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = logits.data().data() + i * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

// Ego-network classifier: a shared backbone encodes the focal subsequence
// and its k neighbors, each neighbor representation absorbs its label
// embedding, and two aggregation Transformer blocks (no positional encoding,
// focal at position 0) feed the readout head.
class EgoNetModel : public SubseqClassifier {
 public:
  EgoNetModel(const BackboneConfig& backbone_cfg, std::size_t m, std::size_t k, int n_classes,
              std::uint64_t seed)
      : manifest_{.kind = "egonet",
                  .backbone = backbone_cfg.kind,
                  .input_dims = backbone_cfg.input_dims,
                  .m = m,
                  .k = k,
                  .n_classes = n_classes} {
    if (k == 0)
      throw ConfigError("EgoNetModel: k must be >= 1; an ego-network needs neighbors");
    if (n_classes < 2) throw ConfigError("EgoNetModel: need at least two classes");
    Rng rng(seed);
    backbone_ = std::make_unique<Backbone>(backbone_cfg, store_, rng, "backbone");
    const std::size_t dim = backbone_cfg.out_dim;
    label_embeddings_ = store_.add(
        "label_embeddings",
        ad::gaussian_init(rng, {static_cast<std::size_t>(n_classes), dim}, 0.02));
    for (std::size_t i = 0; i < 2; ++i)
      agg_blocks_.push_back(TransformerBlock::make(store_, "agg" + std::to_string(i), rng, dim,
                                                   8, 4 * dim));
    head_ = LinearLayer::make(store_, "head", rng, dim, static_cast<std::size_t>(n_classes));
  }

  bool uses_neighbors() const override { return true; }

  Tensor encode(const Tensor& x) const override { return backbone_->forward(x); }

  Tensor logits_from(const Tensor& focal_repr, const Tensor* neigh_repr,
                     const std::vector<int>* neighbor_labels) const override {
    if (!neigh_repr || !neighbor_labels)
      throw ConfigError("EgoNetModel: neighbor representations required");
    const std::size_t b = focal_repr.dim(0);
    const std::size_t k = manifest_.k;
    const std::size_t dim = backbone_->config().out_dim;
    if (neigh_repr->ndim() != 3 || neigh_repr->dim(0) != b || neigh_repr->dim(1) != k ||
        neigh_repr->dim(2) != dim)
      throw ConfigError("EgoNetModel: neighbor representations must be [batch, k, out_dim]");
    if (neighbor_labels->size() != b * k)
      throw ConfigError("EgoNetModel: neighbor label count mismatch");
    std::vector<std::size_t> label_idx(b * k);
    for (std::size_t i = 0; i < label_idx.size(); ++i) {
      const int label = (*neighbor_labels)[i];
      if (label < 0 || label >= manifest_.n_classes)
        throw ConfigError("EgoNetModel: neighbor label out of range");
      label_idx[i] = static_cast<std::size_t>(label);
    }
    const Tensor labeled = ad::add(
        ad::reshape(*neigh_repr, {b * k, dim}), ad::gather_rows(label_embeddings_, label_idx));
    Tensor seq = ad::concat_seq(
        {ad::reshape(focal_repr, {b, 1, dim}), ad::reshape(labeled, {b, k, dim})});
    for (const auto& block : agg_blocks_) seq = block.forward(seq);
    return head_.forward(ad::select_seq(seq, 0));
  }

  ad::ParameterStore& params() override { return store_; }
  const ad::ParameterStore& params() const override { return store_; }
  const ModelManifest& manifest() const override { return manifest_; }
  Tensor label_embeddings() const { return label_embeddings_; }

 private:
  ModelManifest manifest_;
  ad::ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  Tensor label_embeddings_;
  std::vector<TransformerBlock> agg_blocks_;
  LinearLayer head_;
};

// Plain backbone plus classification layer; ignores neighbors entirely.
class BaselineModel : public SubseqClassifier {
 public:
  BaselineModel(const BackboneConfig& backbone_cfg, std::size_t m, int n_classes,
                std::uint64_t seed)
      : manifest_{.kind = "baseline",
                  .backbone = backbone_cfg.kind,
                  .input_dims = backbone_cfg.input_dims,
                  .m = m,
                  .k = 0,
                  .n_classes = n_classes} {
    if (n_classes < 2) throw ConfigError("BaselineModel: need at least two classes");
    Rng rng(seed);
    backbone_ = std::make_unique<Backbone>(backbone_cfg, store_, rng, "backbone");
    head_ = LinearLayer::make(store_, "head", rng, backbone_cfg.out_dim,
                              static_cast<std::size_t>(n_classes));
  }

  bool uses_neighbors() const override { return false; }

  Tensor encode(const Tensor& x) const override { return backbone_->forward(x); }

  Tensor logits_from(const Tensor& focal_repr, const Tensor*,
                     const std::vector<int>*) const override {
    return head_.forward(focal_repr);
  }

  ad::ParameterStore& params() override { return store_; }
  const ad::ParameterStore& params() const override { return store_; }
  const ModelManifest& manifest() const override { return manifest_; }

 private:
  ModelManifest manifest_;
  ad::ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  LinearLayer head_;
};

// ---------------------------------------------------------------------------
// checkpoints: the autodiff container with a manifest record up front

inline void save_model(const SubseqClassifier& model, const std::string& path) {
  std::vector<ad::CheckpointRecord> records;
  ad::CheckpointRecord manifest;
  manifest.name = "manifest";
  manifest.is_raw = true;
  manifest.raw = model.manifest().to_json();
  records.push_back(std::move(manifest));
  for (const auto& [name, tensor] : model.params().all()) {
    ad::CheckpointRecord rec;
    rec.name = name;
    rec.shape = tensor.shape();
    rec.data = tensor.data();
    records.push_back(std::move(rec));
  }
  ad::save_checkpoint(path, records);
}

inline ModelManifest peek_manifest(const std::string& path) {
  const auto records = ad::load_checkpoint(path);
  if (records.empty() || !records[0].is_raw || records[0].name != "manifest")
    throw FormatError(path + ": missing manifest record");
  return ModelManifest::from_json(records[0].raw);
}

// Rebuilds the model described by the manifest and restores every parameter
// tensor bit-exactly.
inline std::unique_ptr<SubseqClassifier> load_model(const std::string& path,
                                                    const BackboneConfig& base_cfg = {}) {
  const auto records = ad::load_checkpoint(path);
  if (records.empty() || !records[0].is_raw || records[0].name != "manifest")
    throw FormatError(path + ": missing manifest record");
  const ModelManifest manifest = ModelManifest::from_json(records[0].raw);
  BackboneConfig cfg = base_cfg;
  cfg.kind = manifest.backbone;
  cfg.input_dims = manifest.input_dims;
  std::unique_ptr<SubseqClassifier> model;
  if (manifest.kind == "egonet") {
    model = std::make_unique<EgoNetModel>(cfg, manifest.m, manifest.k, manifest.n_classes, 0);
  } else if (manifest.kind == "baseline") {
    model = std::make_unique<BaselineModel>(cfg, manifest.m, manifest.n_classes, 0);
  } else {
    throw FormatError(path + ": unknown model kind '" + manifest.kind + "'");
  }
  std::size_t restored = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.is_raw) continue;
    if (!model->params().contains(rec.name))
      throw FormatError(path + ": unexpected parameter '" + rec.name + "'");
    Tensor t = model->params().get(rec.name);
    if (t.shape() != rec.shape)
      throw FormatError(path + ": shape mismatch for '" + rec.name + "'");
    t.data() = rec.data;
    ++restored;
  }
  if (restored != model->params().size())
    throw FormatError(path + ": checkpoint restored " + std::to_string(restored) + " of " +
                      std::to_string(model->params().size()) + " parameters");
  return model;
}

}  // namespace subseq::nn

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "subseq/autodiff.hpp"

namespace subseq::nn {

using ad::Tensor;

enum class BackboneKind { kResNet, kTransformer };

inline std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::kResNet ? "resnet" : "transformer";
}

inline BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "resnet") return BackboneKind::kResNet;
  if (s == "transformer") return BackboneKind::kTransformer;
  throw ConfigError("unknown backbone kind '" + s + "'");
}

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kTransformer;
  std::size_t input_dims = 1;
  std::size_t model_dim = 64;
  std::size_t out_dim = 128;
  std::size_t heads = 8;
  std::size_t n_tblocks = 4;
  std::size_t n_rblocks = 3;
  std::size_t ff_hidden = 256;  // 4x model_dim

  void validate() const {
    if (model_dim == 0 || model_dim % heads != 0)
      throw ConfigError("BackboneConfig: model_dim must be divisible by heads");
    if (input_dims == 0) throw ConfigError("BackboneConfig: input_dims must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// layers

struct LinearLayer {
  Tensor w, b;

  static LinearLayer make(ad::ParameterStore& store, const std::string& prefix, Rng& rng,
                          std::size_t in, std::size_t out) {
    LinearLayer l;
    l.w = store.add(prefix + ".w", ad::uniform_init(rng, {in, out}, in));
    l.b = store.add(prefix + ".b", Tensor::zeros({out}));
    return l;
  }

  Tensor forward(const Tensor& x) const { return ad::add_bias(ad::matmul(x, w), b); }
};

struct Conv1dLayer {
  Tensor w, b;
  std::size_t stride = 1, pad = 0;

  static Conv1dLayer make(ad::ParameterStore& store, const std::string& prefix, Rng& rng,
                          std::size_t c_in, std::size_t c_out, std::size_t f, std::size_t stride,
                          std::size_t pad) {
    Conv1dLayer l;
    l.w = store.add(prefix + ".w", ad::uniform_init(rng, {c_out, c_in, f}, c_in * f));
    l.b = store.add(prefix + ".b", Tensor::zeros({c_out}));
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Tensor forward(const Tensor& x) const { return ad::conv1d(x, w, &b, stride, pad); }
};

struct NormLayer {
  Tensor gain, bias;

  static NormLayer make(ad::ParameterStore& store, const std::string& prefix, std::size_t d) {
    NormLayer l;
    l.gain = store.add(prefix + ".gain", Tensor::from_vector(std::vector<double>(d, 1.0), {d}));
    l.bias = store.add(prefix + ".bias", Tensor::zeros({d}));
    return l;
  }

  Tensor forward(const Tensor& x) const { return ad::layer_norm(x, gain, bias); }
};

// Channel-wise layer norm for conv activations: [B, C, L] normalizes C at
// every position.
inline Tensor channel_layer_norm(const Tensor& x, const NormLayer& norm) {
  return ad::transpose_last2(norm.forward(ad::transpose_last2(x)));
}

// Main path conv7 - LN - ReLU, conv5 - LN - ReLU, conv3 - LN - ReLU, all
// stride 1 with same-padding, added to the skip path. The skip stays the
// identity when the channel counts match; otherwise a filter-size-1 conv
// aligns them.
struct ResidualBlock {
  Conv1dLayer conv7, conv5, conv3;
  NormLayer norm7, norm5, norm3;
  std::optional<Conv1dLayer> skip;

  static ResidualBlock make(ad::ParameterStore& store, const std::string& prefix, Rng& rng,
                            std::size_t c_in, std::size_t c_out) {
    ResidualBlock b;
    b.conv7 = Conv1dLayer::make(store, prefix + ".conv7", rng, c_in, c_out, 7, 1, 3);
    b.norm7 = NormLayer::make(store, prefix + ".norm7", c_out);
    b.conv5 = Conv1dLayer::make(store, prefix + ".conv5", rng, c_out, c_out, 5, 1, 2);
    b.norm5 = NormLayer::make(store, prefix + ".norm5", c_out);
    b.conv3 = Conv1dLayer::make(store, prefix + ".conv3", rng, c_out, c_out, 3, 1, 1);
    b.norm3 = NormLayer::make(store, prefix + ".norm3", c_out);
    if (c_in != c_out)
      b.skip = Conv1dLayer::make(store, prefix + ".skip", rng, c_in, c_out, 1, 1, 0);
    return b;
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = ad::relu(channel_layer_norm(conv7.forward(x), norm7));
    h = ad::relu(channel_layer_norm(conv5.forward(h), norm5));
    h = ad::relu(channel_layer_norm(conv3.forward(h), norm3));
    const Tensor shortcut = skip ? skip->forward(x) : x;
    return ad::add(h, shortcut);
  }
};

// Post-norm Transformer block: y = LN(x + MHA(x)); out = LN(y + FF(y)).
struct TransformerBlock {
  ad::AttentionParams attn;
  NormLayer norm1, norm2;
  LinearLayer ff1, ff2;
  std::size_t heads = 8;

  static TransformerBlock make(ad::ParameterStore& store, const std::string& prefix, Rng& rng,
                               std::size_t dim, std::size_t heads, std::size_t ff_hidden) {
    TransformerBlock b;
    b.heads = heads;
    b.attn.wq = store.add(prefix + ".wq", ad::uniform_init(rng, {dim, dim}, dim));
    b.attn.bq = store.add(prefix + ".bq", Tensor::zeros({dim}));
    b.attn.wk = store.add(prefix + ".wk", ad::uniform_init(rng, {dim, dim}, dim));
    b.attn.bk = store.add(prefix + ".bk", Tensor::zeros({dim}));
    b.attn.wv = store.add(prefix + ".wv", ad::uniform_init(rng, {dim, dim}, dim));
    b.attn.bv = store.add(prefix + ".bv", Tensor::zeros({dim}));
    b.attn.wo = store.add(prefix + ".wo", ad::uniform_init(rng, {dim, dim}, dim));
    b.attn.bo = store.add(prefix + ".bo", Tensor::zeros({dim}));
    b.norm1 = NormLayer::make(store, prefix + ".norm1", dim);
    b.norm2 = NormLayer::make(store, prefix + ".norm2", dim);
    b.ff1 = LinearLayer::make(store, prefix + ".ff1", rng, dim, ff_hidden);
    b.ff2 = LinearLayer::make(store, prefix + ".ff2", rng, ff_hidden, dim);
    return b;
  }

  Tensor forward(const Tensor& x) const {
    const Tensor y = norm1.forward(ad::add(x, ad::multihead_attention(x, heads, attn)));
    return norm2.forward(ad::add(y, ff2.forward(ad::relu(ff1.forward(y)))));
  }
};

// Fixed sinusoidal positional encoding for `len` positions of width `dim`.
inline Tensor positional_encoding(std::size_t len, std::size_t dim) {
  std::vector<double> pe(len * dim);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from_vector(std::move(pe), {len, dim});
}

// ---------------------------------------------------------------------------
// backbone

// Maps [batch, d, m] subsequences to 128-wide global representations. Both
// variants open with a filter-7 stride-2 conv (padding 3, so the token count
// is ceil(m/2)) and close with three linear layers 64-64-64-128, ReLU after
// the first two.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ad::ParameterStore& store, Rng& rng,
           const std::string& prefix)
      : cfg_(cfg) {
    cfg_.validate();
    entry_ = Conv1dLayer::make(store, prefix + ".entry", rng, cfg_.input_dims, cfg_.model_dim, 7,
                               2, 3);
    if (cfg_.kind == BackboneKind::kResNet) {
      for (std::size_t i = 0; i < cfg_.n_rblocks; ++i)
        rblocks_.push_back(ResidualBlock::make(store, prefix + ".rblock" + std::to_string(i), rng,
                                               cfg_.model_dim, cfg_.model_dim));
    } else {
      start_token_ = store.add(prefix + ".start_token",
                               ad::gaussian_init(rng, {cfg_.model_dim}, 0.02));
      for (std::size_t i = 0; i < cfg_.n_tblocks; ++i)
        tblocks_.push_back(TransformerBlock::make(store, prefix + ".tblock" + std::to_string(i),
                                                  rng, cfg_.model_dim, cfg_.heads, cfg_.ff_hidden));
    }
    head1_ = LinearLayer::make(store, prefix + ".head1", rng, cfg_.model_dim, cfg_.model_dim);
    head2_ = LinearLayer::make(store, prefix + ".head2", rng, cfg_.model_dim, cfg_.model_dim);
    head3_ = LinearLayer::make(store, prefix + ".head3", rng, cfg_.model_dim, cfg_.out_dim);
  }

  const BackboneConfig& config() const { return cfg_; }

  Tensor forward(const Tensor& x) const {
    if (x.ndim() != 3 || x.dim(1) != cfg_.input_dims)
      throw ConfigError("Backbone: input must be [batch, " + std::to_string(cfg_.input_dims) +
                        ", m]");
    // padding 3 keeps the filter-7 entry conv defined for every m >= 1
    const Tensor tokens = entry_.forward(x);  // [B, model_dim, L']
    Tensor global;
    if (cfg_.kind == BackboneKind::kResNet) {
      Tensor h = tokens;
      for (const auto& block : rblocks_) h = block.forward(h);
      // pooling applies only when more than one position remains
      global = h.dim(2) > 1 ? ad::mean_last(h) : ad::reshape(h, {h.dim(0), h.dim(1)});
    } else {
      const std::size_t b = tokens.dim(0), len = tokens.dim(2);
      Tensor seq = ad::transpose_last2(tokens);  // [B, L', model_dim]
      Tensor pe = positional_encoding(len, cfg_.model_dim);
      seq = ad::add(seq, ad::reshape(ad::broadcast_rows(ad::reshape(pe, {len * cfg_.model_dim}),
                                                        b),
                                     {b, len, cfg_.model_dim}));
      // the [start] readout token carries no positional encoding
      const Tensor start = ad::reshape(ad::broadcast_rows(start_token_, b), {b, 1, cfg_.model_dim});
      Tensor h = ad::concat_seq({start, seq});
      for (const auto& block : tblocks_) h = block.forward(h);
      global = ad::select_seq(h, 0);
    }
    const Tensor h1 = ad::relu(head1_.forward(global));
    const Tensor h2 = ad::relu(head2_.forward(h1));
    return head3_.forward(h2);
  }

 private:
  BackboneConfig cfg_;
  Conv1dLayer entry_;
  std::vector<ResidualBlock> rblocks_;
  std::vector<TransformerBlock> tblocks_;
  Tensor start_token_;
  LinearLayer head1_, head2_, head3_;
};

}  // namespace subseq::nn

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "subseq/common.hpp"
#include "subseq/knngraph.hpp"  // byte reader/writer helpers

namespace subseq::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (const std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Forward passes record the graph only while grad mode is on; inference
// paths wrap themselves in NoGradGuard and skip the bookkeeping.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

// Value-semantics handle onto a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_vector(std::vector<double> data, Shape shape, bool requires_grad = false) {
    if (data.size() != shape_numel(shape))
      throw ConfigError("Tensor: data length does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return from_vector({v}, {1}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  const std::vector<double>& grad() const {
    if (node_->grad.size() != node_->data.size())
      throw NumericError("Tensor::grad: no gradient populated");
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
  double item() const {
    if (numel() != 1) throw ConfigError("Tensor::item: tensor is not scalar");
    return node_->data[0];
  }

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

inline Tensor make_result(Shape shape, bool track, std::vector<NodePtr> parents,
                          std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data.resize(shape_numel(n->shape));
  if (track && grad_mode()) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  if (!grad_mode()) return false;
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// dst += src, both length n
inline void axpy(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and shape ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ConfigError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool track = detail::any_requires_grad({&a, &b});
  auto na = a.node(), nb = b.node();
  Tensor out = detail::make_result(a.shape(), track, {na, nb}, [na, nb](Node& self) {
    if (na->requires_grad) {
      na->ensure_grad();
      detail::axpy(na->grad, self.grad);
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      detail::axpy(nb->grad, self.grad);
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

// x [.., d] + bias [d], broadcast over leading axes.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || x.dim(x.ndim() - 1) != bias.dim(0))
    throw ConfigError("add_bias: bias must match the last axis");
  const std::size_t d = bias.dim(0);
  const std::size_t rows = x.numel() / d;
  const bool track = detail::any_requires_grad({&x, &bias});
  auto nx = x.node(), nb = bias.node();
  Tensor out = detail::make_result(x.shape(), track, {nx, nb}, [nx, nb, rows, d](Node& self) {
    if (nx->requires_grad) {
      nx->ensure_grad();
      detail::axpy(nx->grad, self.grad);
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) nb->grad[j] += self.grad[r * d + j];
    }
  });
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out.data()[r * d + j] = x.data()[r * d + j] + bias.data()[j];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ConfigError("mul: shape mismatch");
  const bool track = detail::any_requires_grad({&a, &b});
  auto na = a.node(), nb = b.node();
  Tensor out = detail::make_result(a.shape(), track, {na, nb}, [na, nb](Node& self) {
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i] * nb->data[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] += self.grad[i] * na->data[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result(x.shape(), track, {nx}, [nx, c](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += self.grad[i] * c;
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = x.data()[i] * c;
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ConfigError("reshape: element count mismatch for " + shape_str(shape));
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result(std::move(shape), track, {nx}, [nx](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    detail::axpy(nx->grad, self.grad);
  });
  out.data() = x.data();
  return out;
}

inline Tensor relu(const Tensor& x) {
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result(x.shape(), track, {nx}, [nx](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (nx->data[i] > 0.0) nx->grad[i] += self.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return out;
}

inline Tensor sum(const Tensor& x) {
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result({1}, track, {nx}, [nx](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (double& g : nx->grad) g += self.grad[0];
  });
  long double acc = 0.0L;
  for (const double v : x.data()) acc += v;
  out.data()[0] = static_cast<double>(acc);
  return out;
}

// mean over the last axis: [.., L] -> [..]
inline Tensor mean_last(const Tensor& x) {
  if (x.ndim() < 2) throw ConfigError("mean_last: needs at least 2 axes");
  const std::size_t l = x.dim(x.ndim() - 1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const std::size_t rows = shape_numel(out_shape);
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result(std::move(out_shape), track, {nx}, [nx, rows, l](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    const double inv = 1.0 / static_cast<double>(l);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < l; ++j) nx->grad[r * l + j] += self.grad[r] * inv;
  });
  const double inv = 1.0 / static_cast<double>(l);
  for (std::size_t r = 0; r < rows; ++r) {
    long double acc = 0.0L;
    for (std::size_t j = 0; j < l; ++j) acc += x.data()[r * l + j];
    out.data()[r] = static_cast<double>(acc) * inv;
  }
  return out;
}

// swap the last two axes
inline Tensor transpose_last2(const Tensor& x) {
  if (x.ndim() < 2) throw ConfigError("transpose_last2: needs at least 2 axes");
  Shape shape = x.shape();
  const std::size_t a = shape[shape.size() - 2], b = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const std::size_t batch = x.numel() / (a * b);
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result(std::move(shape), track, {nx}, [nx, batch, a, b](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t g = 0; g < batch; ++g) {
      const double* src = self.grad.data() + g * a * b;
      double* dst = nx->grad.data() + g * a * b;
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j) dst[i * b + j] += src[j * a + i];
    }
  });
  for (std::size_t g = 0; g < batch; ++g) {
    const double* src = x.data().data() + g * a * b;
    double* dst = out.data().data() + g * a * b;
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) dst[j * a + i] = src[i * b + j];
  }
  return out;
}

// swap axes 1 and 2 of a rank-4 tensor: [B, S, H, D] <-> [B, H, S, D]
inline Tensor swap_axes12(const Tensor& x) {
  if (x.ndim() != 4) throw ConfigError("swap_axes12: rank-4 only");
  const std::size_t b = x.dim(0), s = x.dim(1), h = x.dim(2), d = x.dim(3);
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result({b, h, s, d}, track, {nx}, [nx, b, s, h, d](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t bb = 0; bb < b; ++bb)
      for (std::size_t hh = 0; hh < h; ++hh)
        for (std::size_t ss = 0; ss < s; ++ss) {
          const double* src = self.grad.data() + ((bb * h + hh) * s + ss) * d;
          double* dst = nx->grad.data() + ((bb * s + ss) * h + hh) * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
  });
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t ss = 0; ss < s; ++ss)
      for (std::size_t hh = 0; hh < h; ++hh) {
        const double* src = x.data().data() + ((bb * s + ss) * h + hh) * d;
        double* dst = out.data().data() + ((bb * h + hh) * s + ss) * d;
        std::memcpy(dst, src, d * sizeof(double));
      }
  return out;
}

// ---------------------------------------------------------------------------
// matmul

namespace detail {

// c[p,r] (+)= a[p,q] * b[q,r]
inline void mm_acc(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
                   std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c + i * r;
    const double* arow = a + i * q;
    for (std::size_t kk = 0; kk < q; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[p,r] += a[p,q] * b^T where bT is [r,q]
inline void mm_acc_bt(const double* a, const double* bt, double* c, std::size_t p, std::size_t q,
                      std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a + i * q;
    double* crow = c + i * r;
    for (std::size_t j = 0; j < r; ++j) {
      const double* brow = bt + j * q;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < q; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

// c[q,r] += a^T * g where a is [p,q], g is [p,r]
inline void mm_acc_at(const double* a, const double* g, double* c, std::size_t p, std::size_t q,
                      std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a + i * q;
    const double* grow = g + i * r;
    for (std::size_t kk = 0; kk < q; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      double* crow = c + kk * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

// a [.., p, q] x b [q, r] (weights) or a [B.., p, q] x b [B.., q, r] with
// identical leading axes.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw ConfigError("matmul: operands must be at least rank 2");
  const std::size_t p = a.dim(a.ndim() - 2), q = a.dim(a.ndim() - 1);
  const std::size_t q2 = b.dim(b.ndim() - 2), r = b.dim(b.ndim() - 1);
  if (q != q2)
    throw ConfigError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const std::size_t batch = a.numel() / (p * q);
  const bool b_batched = b.ndim() > 2;
  if (b_batched) {
    if (Shape(a.shape().begin(), a.shape().end() - 2) != Shape(b.shape().begin(), b.shape().end() - 2))
      throw ConfigError("matmul: batched operands must share leading axes");
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(p);
  out_shape.push_back(r);
  const bool track = detail::any_requires_grad({&a, &b});
  auto na = a.node(), nb = b.node();
  Tensor out = detail::make_result(
      std::move(out_shape), track, {na, nb}, [na, nb, batch, p, q, r, b_batched](Node& self) {
        for (std::size_t g = 0; g < batch; ++g) {
          const double* ga = na->data.data() + g * p * q;
          const double* gb = nb->data.data() + (b_batched ? g * q * r : 0);
          const double* gout = self.grad.data() + g * p * r;
          if (na->requires_grad) {
            na->ensure_grad();
            detail::mm_acc_bt(gout, gb, na->grad.data() + g * p * q, p, r, q);
          }
          if (nb->requires_grad) {
            nb->ensure_grad();
            detail::mm_acc_at(ga, gout, nb->grad.data() + (b_batched ? g * q * r : 0), p, q, r);
          }
        }
      });
  std::fill(out.data().begin(), out.data().end(), 0.0);
  for (std::size_t g = 0; g < batch; ++g)
    detail::mm_acc(a.data().data() + g * p * q, b.data().data() + (b_batched ? g * q * r : 0),
                   out.data().data() + g * p * r, p, q, r);
  return out;
}

// ---------------------------------------------------------------------------
// normalization and attention building blocks

inline Tensor softmax(const Tensor& x) {
  const std::size_t d = x.dim(x.ndim() - 1);
  const std::size_t rows = x.numel() / d;
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result(x.shape(), track, {nx}, [nx, rows, d](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t rr = 0; rr < rows; ++rr) {
      const double* s = self.data.data() + rr * d;
      const double* g = self.grad.data() + rr * d;
      double* gx = nx->grad.data() + rr * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += s[j] * g[j];
      for (std::size_t j = 0; j < d; ++j) gx[j] += s[j] * (g[j] - dot);
    }
  });
  for (std::size_t rr = 0; rr < rows; ++rr) {
    const double* in = x.data().data() + rr * d;
    double* o = out.data().data() + rr * d;
    double mx = in[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    const double inv = 1.0 / denom;
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
  }
  return out;
}

// Per-last-axis normalization to zero mean and unit variance (eps inside the
// square root), then elementwise affine with gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  const std::size_t d = x.dim(x.ndim() - 1);
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw ConfigError("layer_norm: gain/bias must match the last axis");
  const std::size_t rows = x.numel() / d;
  const bool track = detail::any_requires_grad({&x, &gain, &bias});
  auto nx = x.node(), ng = gain.node(), nb = bias.node();
  // save normalized values and inverse stddev per row for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out = detail::make_result(
      x.shape(), track, {nx, ng, nb}, [nx, ng, nb, xhat, inv_std, rows, d](Node& self) {
        if (ng->requires_grad) {
          ng->ensure_grad();
          for (std::size_t rr = 0; rr < rows; ++rr)
            for (std::size_t j = 0; j < d; ++j)
              ng->grad[j] += self.grad[rr * d + j] * (*xhat)[rr * d + j];
        }
        if (nb->requires_grad) {
          nb->ensure_grad();
          for (std::size_t rr = 0; rr < rows; ++rr)
            for (std::size_t j = 0; j < d; ++j) nb->grad[j] += self.grad[rr * d + j];
        }
        if (nx->requires_grad) {
          nx->ensure_grad();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t rr = 0; rr < rows; ++rr) {
            const double* g = self.grad.data() + rr * d;
            const double* xh = xhat->data() + rr * d;
            double* gx = nx->grad.data() + rr * d;
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gj = g[j] * ng->data[j];
              sum_g += gj;
              sum_gx += gj * xh[j];
            }
            const double is = (*inv_std)[rr];
            for (std::size_t j = 0; j < d; ++j) {
              const double gj = g[j] * ng->data[j];
              gx[j] += is * (gj - inv_d * sum_g - xh[j] * inv_d * sum_gx);
            }
          }
        }
      });
  for (std::size_t rr = 0; rr < rows; ++rr) {
    const double* in = x.data().data() + rr * d;
    double* o = out.data().data() + rr * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[rr] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (in[j] - mu) * is;
      (*xhat)[rr * d + j] = xh;
      o[j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution

// x [batch, c_in, len], w [c_out, c_in, f], optional bias [c_out].
// Cross-correlation convention: out[b,co,ol] = sum_ci,u x[b,ci,ol*stride-pad+u] * w[co,ci,u].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
                     std::size_t pad) {
  if (x.ndim() != 3 || w.ndim() != 3) throw ConfigError("conv1d: x and w must be rank 3");
  const std::size_t batch = x.dim(0), c_in = x.dim(1), len = x.dim(2);
  const std::size_t c_out = w.dim(0), f = w.dim(2);
  if (w.dim(1) != c_in) throw ConfigError("conv1d: channel mismatch");
  if (stride == 0) throw ConfigError("conv1d: stride must be >= 1");
  if (f > len + 2 * pad) throw ConfigError("conv1d: filter longer than padded input");
  const std::size_t out_len = (len + 2 * pad - f) / stride + 1;
  if (bias && (bias->ndim() != 1 || bias->dim(0) != c_out))
    throw ConfigError("conv1d: bias must be [c_out]");

  const bool track = bias ? detail::any_requires_grad({&x, &w, bias})
                          : detail::any_requires_grad({&x, &w});
  auto nx = x.node(), nw = w.node();
  NodePtr nb = bias ? bias->node() : nullptr;
  std::vector<NodePtr> parents = {nx, nw};
  if (nb) parents.push_back(nb);
  Tensor out = detail::make_result(
      {batch, c_out, out_len}, track, std::move(parents),
      [nx, nw, nb, batch, c_in, len, c_out, f, out_len, stride, pad](Node& self) {
        if (nx->requires_grad) nx->ensure_grad();
        if (nw->requires_grad) nw->ensure_grad();
        if (nb && nb->requires_grad) nb->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < c_out; ++co) {
            const double* g = self.grad.data() + (b * c_out + co) * out_len;
            if (nb && nb->requires_grad)
              for (std::size_t ol = 0; ol < out_len; ++ol) nb->grad[co] += g[ol];
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const double* xrow = nx->data.data() + (b * c_in + ci) * len;
              const double* wrow = nw->data.data() + (co * c_in + ci) * f;
              double* gx = nx->requires_grad ? nx->grad.data() + (b * c_in + ci) * len : nullptr;
              double* gw = nw->requires_grad ? nw->grad.data() + (co * c_in + ci) * f : nullptr;
              for (std::size_t ol = 0; ol < out_len; ++ol) {
                const double go = g[ol];
                if (go == 0.0) continue;
                const std::size_t base = ol * stride;
                for (std::size_t u = 0; u < f; ++u) {
                  const std::size_t il = base + u;
                  if (il < pad || il - pad >= len) continue;
                  if (gx) gx[il - pad] += go * wrow[u];
                  if (gw) gw[u] += go * xrow[il - pad];
                }
              }
            }
          }
        }
      });
  std::fill(out.data().begin(), out.data().end(), 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < c_out; ++co) {
      double* o = out.data().data() + (b * c_out + co) * out_len;
      if (bias) {
        const double bv = bias->data()[co];
        for (std::size_t ol = 0; ol < out_len; ++ol) o[ol] = bv;
      }
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xrow = x.data().data() + (b * c_in + ci) * len;
        const double* wrow = w.data().data() + (co * c_in + ci) * f;
        for (std::size_t ol = 0; ol < out_len; ++ol) {
          const std::size_t base = ol * stride;
          double acc = 0.0;
          for (std::size_t u = 0; u < f; ++u) {
            const std::size_t il = base + u;
            if (il < pad || il - pad >= len) continue;
            acc += xrow[il - pad] * wrow[u];
          }
          o[ol] += acc;
        }
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// gather / scatter style ops

// table [n, d], indices in [0, n) -> [len(indices), d]; grads scatter-add.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  if (table.ndim() != 2) throw ConfigError("gather_rows: table must be rank 2");
  const std::size_t n = table.dim(0), d = table.dim(1);
  for (const std::size_t idx : indices)
    if (idx >= n) throw ConfigError("gather_rows: index " + std::to_string(idx) + " out of range");
  const bool track = detail::any_requires_grad({&table});
  auto nt = table.node();
  auto idx_copy = std::make_shared<std::vector<std::size_t>>(indices);
  Tensor out =
      detail::make_result({indices.size(), d}, track, {nt}, [nt, idx_copy, d](Node& self) {
        if (!nt->requires_grad) return;
        nt->ensure_grad();
        for (std::size_t i = 0; i < idx_copy->size(); ++i) {
          const double* g = self.grad.data() + i * d;
          double* dst = nt->grad.data() + (*idx_copy)[i] * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
        }
      });
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::memcpy(out.data().data() + i * d, table.data().data() + indices[i] * d,
                d * sizeof(double));
  return out;
}

// row [d] -> [n, d]; grad sums over the broadcast copies.
inline Tensor broadcast_rows(const Tensor& row, std::size_t n) {
  if (row.ndim() != 1) throw ConfigError("broadcast_rows: input must be rank 1");
  const std::size_t d = row.dim(0);
  const bool track = detail::any_requires_grad({&row});
  auto nr = row.node();
  Tensor out = detail::make_result({n, d}, track, {nr}, [nr, n, d](Node& self) {
    if (!nr->requires_grad) return;
    nr->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) nr->grad[j] += self.grad[i * d + j];
  });
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(out.data().data() + i * d, row.data().data(), d * sizeof(double));
  return out;
}

// x [b, s, d] -> [b, d] at sequence position `pos`.
inline Tensor select_seq(const Tensor& x, std::size_t pos) {
  if (x.ndim() != 3) throw ConfigError("select_seq: rank-3 input required");
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  if (pos >= s) throw ConfigError("select_seq: position out of range");
  const bool track = detail::any_requires_grad({&x});
  auto nx = x.node();
  Tensor out = detail::make_result({b, d}, track, {nx}, [nx, b, s, d, pos](Node& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t i = 0; i < b; ++i) {
      const double* g = self.grad.data() + i * d;
      double* dst = nx->grad.data() + (i * s + pos) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  });
  for (std::size_t i = 0; i < b; ++i)
    std::memcpy(out.data().data() + i * d, x.data().data() + (i * s + pos) * d,
                d * sizeof(double));
  return out;
}

// concatenate along axis 1 (sequence): inputs [b, s_i, d] -> [b, sum s_i, d]
inline Tensor concat_seq(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_seq: nothing to concatenate");
  const std::size_t b = parts[0].dim(0), d = parts[0].dim(2);
  std::size_t total = 0;
  bool track = false;
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> seq_lens;
  for (const Tensor& t : parts) {
    if (t.ndim() != 3 || t.dim(0) != b || t.dim(2) != d)
      throw ConfigError("concat_seq: all parts must be [b, *, d]");
    total += t.dim(1);
    seq_lens.push_back(t.dim(1));
    nodes.push_back(t.node());
    track = track || (grad_mode() && t.requires_grad());
  }
  auto lens = std::make_shared<std::vector<std::size_t>>(std::move(seq_lens));
  Tensor out = detail::make_result({b, total, d}, track, nodes, [nodes, lens, b, total, d](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      const std::size_t s = (*lens)[p];
      if (nodes[p]->requires_grad) {
        nodes[p]->ensure_grad();
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t ss = 0; ss < s; ++ss) {
            const double* g = self.grad.data() + ((i * total) + off + ss) * d;
            double* dst = nodes[p]->grad.data() + (i * s + ss) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
          }
      }
      off += s;
    }
  });
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    const std::size_t s = t.dim(1);
    for (std::size_t i = 0; i < b; ++i)
      std::memcpy(out.data().data() + ((i * total) + off) * d,
                  t.data().data() + i * s * d, s * d * sizeof(double));
    off += s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention and loss

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor bq, bk, bv, bo;  // [d]
};

// Standard scaled dot-product multihead self-attention with output projection.
inline Tensor multihead_attention(const Tensor& x, std::size_t heads, const AttentionParams& p) {
  if (x.ndim() != 3) throw ConfigError("multihead_attention: input must be [batch, seq, dim]");
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("multihead_attention: dim " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  const std::size_t dh = d / heads;
  const Tensor q = add_bias(matmul(x, p.wq), p.bq);
  const Tensor k = add_bias(matmul(x, p.wk), p.bk);
  const Tensor v = add_bias(matmul(x, p.wv), p.bv);
  const Tensor qh = swap_axes12(reshape(q, {b, s, heads, dh}));  // [b, h, s, dh]
  const Tensor kh = swap_axes12(reshape(k, {b, s, heads, dh}));
  const Tensor vh = swap_axes12(reshape(v, {b, s, heads, dh}));
  const Tensor scores = scale(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor attn = softmax(scores);                    // rows sum to 1
  const Tensor ctx = swap_axes12(matmul(attn, vh));       // [b, s, h, dh]
  return add_bias(matmul(reshape(ctx, {b, s, d}), p.wo), p.bo);
}

// Mean over the batch of -log softmax(logits)[target], log-sum-exp stabilized.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.ndim() != 2) throw ConfigError("cross_entropy: logits must be [batch, classes]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch) throw ConfigError("cross_entropy: target count mismatch");
  for (const int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= classes)
      throw ConfigError("cross_entropy: target out of range");
  const bool track = detail::any_requires_grad({&logits});
  auto nl = logits.node();
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  auto tgt = std::make_shared<std::vector<int>>(targets);
  Tensor out = detail::make_result({1}, track, {nl}, [nl, probs, tgt, batch, classes](Node& self) {
    if (!nl->requires_grad) return;
    nl->ensure_grad();
    const double scale = self.grad[0] / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* pr = probs->data() + i * classes;
      double* g = nl->grad.data() + i * classes;
      for (std::size_t c = 0; c < classes; ++c) g[c] += scale * pr[c];
      g[(*tgt)[i]] -= scale;
    }
  });
  long double loss = 0.0L;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = logits.data().data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    const double log_denom = std::log(denom) + mx;
    for (std::size_t c = 0; c < classes; ++c)
      (*probs)[i * classes + c] = std::exp(row[c] - log_denom);
    loss += log_denom - row[targets[i]];
  }
  out.data()[0] = static_cast<double>(loss / static_cast<long double>(batch));
  return out;
}

// ---------------------------------------------------------------------------
// reverse pass

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ConfigError("backward: loss must be scalar");
  Node* root = loss.node().get();
  if (!root->requires_grad)
    throw ConfigError("backward: loss does not require grad (built outside grad mode?)");
  if (root->backward_done) throw NumericError("backward: already ran on this graph; rebuild it");

  // iterative DFS topological order over parents
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() == node->data.size()) node->backward_fn(*node);
    node->backward_done = true;
  }
}

// ---------------------------------------------------------------------------
// parameters, optimizer, checkpoints

class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ConfigError("ParameterStore: duplicate name " + name);
    t.node()->requires_grad = true;
    index_[name] = params_.size();
    params_.emplace_back(name, t);
    return t;
  }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParameterStore: unknown name " + name);
    return params_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Tensor>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  // total scalar count, useful for reporting
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Adaptive-moment optimizer with bias correction.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore& params) {
    ++t_;
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
    }
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor tensor = params.all()[i].second;
      if (!tensor.has_grad())
        throw NumericError("AdamOptimizer: parameter '" + params.all()[i].first +
                           "' has no gradient");
      auto& m = m_[i];
      auto& v = v_[i];
      if (m.size() != tensor.numel()) {
        m.assign(tensor.numel(), 0.0);
        v.assign(tensor.numel(), 0.0);
      }
      const auto& g = tensor.grad();
      auto& w = tensor.data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// checkpoint file: magic EGOW, version u32, record count u64, then records.
// Record: name (u32 len + bytes), kind u8 (0 tensor f64 / 1 raw bytes),
// tensor: ndim u32 + dims u64 + f64 payload; raw: u64 len + bytes.

struct CheckpointRecord {
  std::string name;
  Shape shape;               // tensors only
  std::vector<double> data;  // tensors only
  std::string raw;           // raw records only
  bool is_raw = false;
};

inline void save_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  std::string buf;
  buf += "EGOW";
  subseq::detail::put_u32(buf, 1);
  subseq::detail::put_u64(buf, records.size());
  for (const auto& rec : records) {
    subseq::detail::put_u32(buf, static_cast<std::uint32_t>(rec.name.size()));
    buf += rec.name;
    buf.push_back(rec.is_raw ? 1 : 0);
    if (rec.is_raw) {
      subseq::detail::put_u64(buf, rec.raw.size());
      buf += rec.raw;
    } else {
      subseq::detail::put_u32(buf, static_cast<std::uint32_t>(rec.shape.size()));
      for (const std::size_t d : rec.shape) subseq::detail::put_u64(buf, d);
      const std::size_t bytes = rec.data.size() * sizeof(double);
      const std::size_t at = buf.size();
      buf.resize(buf.size() + bytes);
      std::memcpy(buf.data() + at, rec.data.data(), bytes);
    }
  }
  subseq::detail::write_file_bytes(path, buf);
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  subseq::detail::ByteReader r(subseq::detail::read_file_bytes(path), path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "EGOW", 4) != 0) throw FormatError(path + ": bad magic, not an EGOW file");
  const std::uint32_t version = r.u32();
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const std::uint32_t name_len = r.u32();
    rec.name.resize(name_len);
    r.raw(rec.name.data(), name_len);
    rec.is_raw = r.u8() != 0;
    if (rec.is_raw) {
      const std::uint64_t len = r.u64();
      rec.raw.resize(len);
      r.raw(rec.raw.data(), len);
    } else {
      const std::uint32_t ndim = r.u32();
      rec.shape.resize(ndim);
      for (auto& d : rec.shape) d = r.u64();
      rec.data.resize(shape_numel(rec.shape));
      r.raw(rec.data.data(), rec.data.size() * sizeof(double));
    }
    records.push_back(std::move(rec));
  }
  if (!r.exhausted())
    throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
  return records;
}

// ---------------------------------------------------------------------------
// initialization helpers

inline Tensor uniform_init(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.next_uniform(-bound, bound);
  return Tensor::from_vector(std::move(data), std::move(shape));
}

inline Tensor gaussian_init(Rng& rng, Shape shape, double std_dev) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.next_gaussian() * std_dev;
  return Tensor::from_vector(std::move(data), std::move(shape));
}

}  // namespace subseq::ad

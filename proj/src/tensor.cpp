#include "canonkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>
#include <utility>

namespace canonkit {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    CK_CHECK(d > 0, ErrKind::dim, "non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->value.assign(static_cast<size_t>(numel(shape)), v);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  CK_CHECK(static_cast<int64_t>(data.size()) == numel(shape), ErrKind::dim,
           "data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

double Tensor::item() const {
  CK_CHECK(defined() && node_->value.size() == 1, ErrKind::contract, "item() needs a scalar tensor");
  return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  CK_CHECK(defined(), ErrKind::contract, "grad() on undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  CK_CHECK(defined(), ErrKind::contract, "zero_grad() on undefined tensor");
  node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detached_copy() const {
  CK_CHECK(defined(), ErrKind::contract, "detached_copy() on undefined tensor");
  return from(node_->shape, node_->value, false);
}

bool Tensor::same_values(const Tensor& other) const {
  if (!defined() || !other.defined()) return false;
  if (node_->shape != other.node_->shape) return false;
  return std::memcmp(node_->value.data(), other.node_->value.data(),
                     node_->value.size() * sizeof(double)) == 0;
}

namespace {

Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<std::shared_ptr<TensorNode>> parents,
               std::function<void(TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

void accum_into(TensorNode& parent, size_t i, double v) {
  parent.ensure_grad();
  parent.grad[i] += v;
}

}  // namespace

Tensor linear(const Tensor& W, const Tensor& b, const Tensor& x) {
  CK_CHECK(W.rank() == 2, ErrKind::dim, "linear: weight must be rank 2, got " + shape_str(W.shape()));
  CK_CHECK(b.rank() == 1 && b.dim(0) == W.dim(0), ErrKind::dim,
           "linear: bias shape " + shape_str(b.shape()) + " does not match weight rows");
  CK_CHECK(x.rank() == 1 && x.dim(0) == W.dim(1), ErrKind::dim,
           "linear: input shape " + shape_str(x.shape()) + " does not match weight cols");
  const int out = W.dim(0), in = W.dim(1);
  const auto& w = W.data();
  const auto& bv = b.data();
  const auto& xv = x.data();
  std::vector<double> y(static_cast<size_t>(out));
  for (int o = 0; o < out; ++o) {
    double acc = bv[static_cast<size_t>(o)];
    const double* row = w.data() + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * xv[static_cast<size_t>(i)];
    y[static_cast<size_t>(o)] = acc;
  }
  return make_op({out}, std::move(y), {W.node(), b.node(), x.node()}, [out, in](TensorNode& self) {
    auto& Wn = *self.parents[0];
    auto& bn = *self.parents[1];
    auto& xn = *self.parents[2];
    const auto& g = self.grad;
    if (Wn.requires_grad) {
      Wn.ensure_grad();
      for (int o = 0; o < out; ++o)
        for (int i = 0; i < in; ++i)
          Wn.grad[static_cast<size_t>(o) * in + i] += g[static_cast<size_t>(o)] * xn.value[static_cast<size_t>(i)];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (int o = 0; o < out; ++o) bn.grad[static_cast<size_t>(o)] += g[static_cast<size_t>(o)];
    }
    if (xn.requires_grad) {
      xn.ensure_grad();
      for (int o = 0; o < out; ++o) {
        const double* row = Wn.value.data() + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) xn.grad[static_cast<size_t>(i)] += g[static_cast<size_t>(o)] * row[i];
      }
    }
  });
}

Tensor conv2d(const Tensor& K, const Tensor& x) {
  CK_CHECK(K.rank() == 4, ErrKind::dim, "conv2d: kernel must be rank 4, got " + shape_str(K.shape()));
  CK_CHECK(x.rank() == 3, ErrKind::dim, "conv2d: input must be rank 3, got " + shape_str(x.shape()));
  CK_CHECK(K.dim(2) == K.dim(3), ErrKind::dim, "conv2d: kernel window must be square");
  CK_CHECK(K.dim(2) % 2 == 1, ErrKind::dim, "conv2d: kernel size must be odd");
  CK_CHECK(K.dim(1) == x.dim(0), ErrKind::dim,
           "conv2d: kernel expects " + std::to_string(K.dim(1)) + " input channels, got " +
               std::to_string(x.dim(0)));
  const int co = K.dim(0), ci = K.dim(1), k = K.dim(2);
  const int h = x.dim(1), w = x.dim(2);
  const int p = (k - 1) / 2;
  const auto& kv = K.data();
  const auto& xv = x.data();
  std::vector<double> y(static_cast<size_t>(co) * h * w, 0.0);
  for (int o = 0; o < co; ++o)
    for (int c = 0; c < ci; ++c)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          const double kval = kv[((static_cast<size_t>(o) * ci + c) * k + kh) * k + kw];
          if (kval == 0.0) continue;
          const int dh = kh - p, dw = kw - p;
          const int h0 = std::max(0, -dh), h1 = std::min(h, h - dh);
          const int w0 = std::max(0, -dw), w1 = std::min(w, w - dw);
          for (int oh = h0; oh < h1; ++oh) {
            const double* xrow = xv.data() + (static_cast<size_t>(c) * h + (oh + dh)) * w + dw;
            double* yrow = y.data() + (static_cast<size_t>(o) * h + oh) * w;
            for (int ow = w0; ow < w1; ++ow) yrow[ow] += kval * xrow[ow];
          }
        }
  return make_op({co, h, w}, std::move(y), {K.node(), x.node()},
                 [co, ci, k, h, w, p](TensorNode& self) {
                   auto& Kn = *self.parents[0];
                   auto& xn = *self.parents[1];
                   const auto& g = self.grad;
                   if (Kn.requires_grad) {
                     Kn.ensure_grad();
                     for (int o = 0; o < co; ++o)
                       for (int c = 0; c < ci; ++c)
                         for (int kh = 0; kh < k; ++kh)
                           for (int kw = 0; kw < k; ++kw) {
                             const int dh = kh - p, dw = kw - p;
                             const int h0 = std::max(0, -dh), h1 = std::min(h, h - dh);
                             const int w0 = std::max(0, -dw), w1 = std::min(w, w - dw);
                             double acc = 0.0;
                             for (int oh = h0; oh < h1; ++oh) {
                               const double* xrow =
                                   xn.value.data() + (static_cast<size_t>(c) * h + (oh + dh)) * w + dw;
                               const double* grow = g.data() + (static_cast<size_t>(o) * h + oh) * w;
                               for (int ow = w0; ow < w1; ++ow) acc += grow[ow] * xrow[ow];
                             }
                             Kn.grad[((static_cast<size_t>(o) * ci + c) * k + kh) * k + kw] += acc;
                           }
                   }
                   if (xn.requires_grad) {
                     xn.ensure_grad();
                     for (int o = 0; o < co; ++o)
                       for (int c = 0; c < ci; ++c)
                         for (int kh = 0; kh < k; ++kh)
                           for (int kw = 0; kw < k; ++kw) {
                             const double kval =
                                 Kn.value[((static_cast<size_t>(o) * ci + c) * k + kh) * k + kw];
                             if (kval == 0.0) continue;
                             const int dh = kh - p, dw = kw - p;
                             const int h0 = std::max(0, -dh), h1 = std::min(h, h - dh);
                             const int w0 = std::max(0, -dw), w1 = std::min(w, w - dw);
                             for (int oh = h0; oh < h1; ++oh) {
                               double* xrow =
                                   xn.grad.data() + (static_cast<size_t>(c) * h + (oh + dh)) * w + dw;
                               const double* grow = g.data() + (static_cast<size_t>(o) * h + oh) * w;
                               for (int ow = w0; ow < w1; ++ow) xrow[ow] += kval * grow[ow];
                             }
                           }
                   }
                 });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  CK_CHECK(x.rank() == 3, ErrKind::dim, "add_channel_bias: input must be rank 3");
  CK_CHECK(b.rank() == 1 && b.dim(0) == x.dim(0), ErrKind::dim,
           "add_channel_bias: bias shape " + shape_str(b.shape()) + " does not match channels");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> y(x.data());
  for (int i = 0; i < c; ++i) {
    const double bi = b.data()[static_cast<size_t>(i)];
    for (int j = 0; j < hw; ++j) y[static_cast<size_t>(i) * hw + j] += bi;
  }
  return make_op(x.shape(), std::move(y), {x.node(), b.node()}, [c, hw](TensorNode& self) {
    auto& xn = *self.parents[0];
    auto& bn = *self.parents[1];
    if (xn.requires_grad) {
      xn.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (int i = 0; i < c; ++i) {
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) acc += self.grad[static_cast<size_t>(i) * hw + j];
        bn.grad[static_cast<size_t>(i)] += acc;
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> y(x.data());
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  return make_op(x.shape(), std::move(y), {x.node()}, [](TensorNode& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (xn.value[i] > 0.0) xn.grad[i] += self.grad[i];
  });
}

Tensor global_mean_pool(const Tensor& x) {
  CK_CHECK(x.rank() == 3, ErrKind::dim, "global_mean_pool: input must be rank 3");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> y(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    double acc = 0.0;
    for (int j = 0; j < hw; ++j) acc += x.data()[static_cast<size_t>(i) * hw + j];
    y[static_cast<size_t>(i)] = acc / hw;
  }
  return make_op({c}, std::move(y), {x.node()}, [c, hw](TensorNode& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    for (int i = 0; i < c; ++i) {
      const double gi = self.grad[static_cast<size_t>(i)] / hw;
      for (int j = 0; j < hw; ++j) xn.grad[static_cast<size_t>(i) * hw + j] += gi;
    }
  });
}

Tensor softmax(const Tensor& z, double tau) {
  CK_CHECK(z.rank() == 1, ErrKind::dim, "softmax: input must be rank 1");
  CK_CHECK(tau > 0.0, ErrKind::config, "softmax: temperature must be positive");
  const int n = z.dim(0);
  std::vector<double> y(static_cast<size_t>(n));
  // max is taken before the tau division: an exact shift of the logits then
  // cancels bitwise
  double mx = z.data()[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, z.data()[static_cast<size_t>(i)]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    y[static_cast<size_t>(i)] = std::exp((z.data()[static_cast<size_t>(i)] - mx) / tau);
    s += y[static_cast<size_t>(i)];
  }
  for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] /= s;
  return make_op({n}, std::move(y), {z.node()}, [n, tau](TensorNode& self) {
    auto& zn = *self.parents[0];
    if (!zn.requires_grad) return;
    zn.ensure_grad();
    double gdoty = 0.0;
    for (int i = 0; i < n; ++i) gdoty += self.grad[static_cast<size_t>(i)] * self.value[static_cast<size_t>(i)];
    for (int i = 0; i < n; ++i)
      zn.grad[static_cast<size_t>(i)] +=
          self.value[static_cast<size_t>(i)] * (self.grad[static_cast<size_t>(i)] - gdoty) / tau;
  });
}

Tensor cross_entropy(const Tensor& probs, int target) {
  CK_CHECK(probs.rank() == 1, ErrKind::dim, "cross_entropy: probs must be rank 1");
  CK_CHECK(target >= 0 && target < probs.dim(0), ErrKind::index,
           "cross_entropy: target " + std::to_string(target) + " out of range for " +
               std::to_string(probs.dim(0)) + " classes");
  const double p = probs.data()[static_cast<size_t>(target)];
  const double pc = std::max(p, 1e-12);
  return make_op({1}, {-std::log(pc)}, {probs.node()}, [target](TensorNode& self) {
    auto& pn = *self.parents[0];
    if (!pn.requires_grad) return;
    pn.ensure_grad();
    const double p = pn.value[static_cast<size_t>(target)];
    if (p > 1e-12) pn.grad[static_cast<size_t>(target)] += -self.grad[0] / p;
  });
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  CK_CHECK(a.shape() == b.shape(), ErrKind::dim,
           std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> y(a.data());
  for (size_t i = 0; i < y.size(); ++i) y[i] += b.data()[i];
  return make_op(a.shape(), std::move(y), {a.node(), b.node()}, [](TensorNode& self) {
    for (int p = 0; p < 2; ++p) {
      auto& n = *self.parents[static_cast<size_t>(p)];
      if (!n.requires_grad) continue;
      n.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) n.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> y(a.data());
  for (size_t i = 0; i < y.size(); ++i) y[i] -= b.data()[i];
  return make_op(a.shape(), std::move(y), {a.node(), b.node()}, [](TensorNode& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      an.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> y(a.data());
  for (size_t i = 0; i < y.size(); ++i) y[i] *= b.data()[i];
  return make_op(a.shape(), std::move(y), {a.node(), b.node()}, [](TensorNode& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      an.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] += self.grad[i] * an.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> y(a.data());
  for (double& v : y) v *= c;
  return make_op(a.shape(), std::move(y), {a.node()}, [c](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    n.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) n.grad[i] += c * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op({1}, {acc}, {a.node()}, [](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    n.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op({1}, {acc * inv}, {a.node()}, [inv](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    n.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += self.grad[0] * inv;
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double acc = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) acc += a.data()[i] * b.data()[i];
  return make_op({1}, {acc}, {a.node(), b.node()}, [](TensorNode& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      an.ensure_grad();
      for (size_t i = 0; i < an.grad.size(); ++i) an.grad[i] += self.grad[0] * bn.value[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (size_t i = 0; i < bn.grad.size(); ++i) bn.grad[i] += self.grad[0] * an.value[i];
    }
  });
}

Tensor l2_normalize(const Tensor& a) {
  double sq = 0.0;
  for (double v : a.data()) sq += v * v;
  const double norm = std::max(std::sqrt(sq), 1e-12);
  std::vector<double> y(a.data());
  for (double& v : y) v /= norm;
  const bool clamped = std::sqrt(sq) <= 1e-12;
  return make_op(a.shape(), std::move(y), {a.node()}, [norm, clamped](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    n.ensure_grad();
    if (clamped) {
      for (size_t i = 0; i < self.grad.size(); ++i) n.grad[i] += self.grad[i] / norm;
      return;
    }
    double gdoty = 0.0;
    for (size_t i = 0; i < self.grad.size(); ++i) gdoty += self.grad[i] * self.value[i];
    for (size_t i = 0; i < self.grad.size(); ++i)
      n.grad[i] += (self.grad[i] - self.value[i] * gdoty) / norm;
  });
}

Tensor log_clamped(const Tensor& a) {
  std::vector<double> y(a.data());
  for (double& v : y) v = std::log(std::max(v, 1e-12));
  return make_op(a.shape(), std::move(y), {a.node()}, [](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    n.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (n.value[i] > 1e-12) n.grad[i] += self.grad[i] / n.value[i];
  });
}

Tensor flatten(const Tensor& a) {
  const int n = static_cast<int>(a.size());
  return make_op({n}, a.data(), {a.node()}, [](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    n.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) n.grad[i] += self.grad[i];
  });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  CK_CHECK(!xs.empty(), ErrKind::dim, "stack_scalars: empty input");
  std::vector<double> y;
  std::vector<std::shared_ptr<TensorNode>> parents;
  y.reserve(xs.size());
  parents.reserve(xs.size());
  for (const auto& x : xs) {
    CK_CHECK(x.size() == 1, ErrKind::dim, "stack_scalars: all inputs must be scalar");
    y.push_back(x.data()[0]);
    parents.push_back(x.node());
  }
  const int n = static_cast<int>(xs.size());
  return make_op({n}, std::move(y), std::move(parents), [](TensorNode& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      if (!p.requires_grad) continue;
      accum_into(p, 0, self.grad[i]);
    }
  });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  CK_CHECK(!xs.empty(), ErrKind::dim, "concat_channels: empty input");
  const int h = xs[0].dim(1), w = xs[0].dim(2);
  int channels = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  parents.reserve(xs.size());
  for (const auto& x : xs) {
    CK_CHECK(x.rank() == 3 && x.dim(1) == h && x.dim(2) == w, ErrKind::dim,
             "concat_channels: inputs must be rank 3 with matching spatial dims");
    channels += x.dim(0);
    parents.push_back(x.node());
  }
  std::vector<double> y;
  y.reserve(static_cast<size_t>(channels) * h * w);
  for (const auto& x : xs) y.insert(y.end(), x.data().begin(), x.data().end());
  return make_op({channels, h, w}, std::move(y), std::move(parents), [](TensorNode& self) {
    size_t off = 0;
    for (auto& pp : self.parents) {
      auto& p = *pp;
      if (p.requires_grad) {
        p.ensure_grad();
        for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[off + i];
      }
      off += p.value.size();
    }
  });
}

Tensor index(const Tensor& v, int i) {
  CK_CHECK(v.rank() == 1, ErrKind::dim, "index: input must be rank 1");
  CK_CHECK(i >= 0 && i < v.dim(0), ErrKind::index,
           "index: position " + std::to_string(i) + " out of range for " + shape_str(v.shape()));
  return make_op({1}, {v.data()[static_cast<size_t>(i)]}, {v.node()}, [i](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    accum_into(n, static_cast<size_t>(i), self.grad[0]);
  });
}

Tensor hard_select(const Tensor& weights, const std::vector<Tensor>& entries, int hard) {
  CK_CHECK(weights.rank() == 1, ErrKind::dim, "hard_select: weights must be rank 1");
  CK_CHECK(!entries.empty() && weights.dim(0) == static_cast<int>(entries.size()), ErrKind::dim,
           "hard_select: weights length must match entry count");
  CK_CHECK(hard >= 0 && hard < static_cast<int>(entries.size()), ErrKind::index,
           "hard_select: hard index out of range");
  for (const auto& e : entries)
    CK_CHECK(e.shape() == entries[0].shape(), ErrKind::dim, "hard_select: entries must share a shape");
  std::vector<std::shared_ptr<TensorNode>> parents;
  parents.reserve(entries.size() + 1);
  parents.push_back(weights.node());
  for (const auto& e : entries) parents.push_back(e.node());
  return make_op(entries[static_cast<size_t>(hard)].shape(),
                 entries[static_cast<size_t>(hard)].data(), std::move(parents),
                 [](TensorNode& self) {
                   auto& wn = *self.parents[0];
                   const size_t n = self.parents.size() - 1;
                   if (wn.requires_grad) {
                     wn.ensure_grad();
                     for (size_t i = 0; i < n; ++i) {
                       const auto& e = self.parents[i + 1]->value;
                       double acc = 0.0;
                       for (size_t j = 0; j < e.size(); ++j) acc += self.grad[j] * e[j];
                       wn.grad[i] += acc;
                     }
                   }
                   for (size_t i = 0; i < n; ++i) {
                     auto& en = *self.parents[i + 1];
                     if (!en.requires_grad) continue;
                     en.ensure_grad();
                     const double wi = wn.value[i];
                     for (size_t j = 0; j < self.grad.size(); ++j) en.grad[j] += wi * self.grad[j];
                   }
                 });
}

Tensor permute_values(const Tensor& x, const std::vector<int64_t>& perm, const Shape& out_shape) {
  CK_CHECK(static_cast<int64_t>(perm.size()) == numel(out_shape), ErrKind::dim,
           "permute_values: map size does not match output shape");
  CK_CHECK(static_cast<int64_t>(perm.size()) == x.size(), ErrKind::dim,
           "permute_values: map size does not match input size");
  std::vector<double> y(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    CK_CHECK(perm[i] >= 0 && perm[i] < x.size(), ErrKind::index, "permute_values: map entry out of range");
    y[i] = x.data()[static_cast<size_t>(perm[i])];
  }
  return make_op(out_shape, std::move(y), {x.node()}, [perm](TensorNode& self) {
    auto& n = *self.parents[0];
    if (!n.requires_grad) return;
    n.ensure_grad();
    for (size_t i = 0; i < perm.size(); ++i) n.grad[static_cast<size_t>(perm[i])] += self.grad[i];
  });
}

void backward(const Tensor& loss) {
  CK_CHECK(loss.defined() && loss.size() == 1, ErrKind::contract, "backward: loss must be a defined scalar");
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is a topological sort with parents before children; interior grads
  // reset every call, leaf grads accumulate across calls.
  for (TensorNode* n : order) {
    if (n->backprop) {
      n->grad.assign(n->value.size(), 0.0);
    } else {
      n->ensure_grad();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop && (*it)->requires_grad) (*it)->backprop(**it);
}

int argmax(const std::vector<double>& v) {
  CK_CHECK(!v.empty(), ErrKind::dim, "argmax: empty input");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  return best;
}

void Parameters::add(const std::string& name, Tensor t) {
  CK_CHECK(items.count(name) == 0, ErrKind::contract, "duplicate parameter name: " + name);
  t.set_requires_grad(true);
  items.emplace(name, std::move(t));
}

Tensor& Parameters::at(const std::string& name) {
  auto it = items.find(name);
  CK_CHECK(it != items.end(), ErrKind::contract, "unknown parameter name: " + name);
  return it->second;
}

const Tensor& Parameters::at(const std::string& name) const {
  auto it = items.find(name);
  CK_CHECK(it != items.end(), ErrKind::contract, "unknown parameter name: " + name);
  return it->second;
}

void Parameters::zero_grad() {
  for (auto& [name, t] : items) t.zero_grad();
}

int64_t Parameters::count() const {
  int64_t n = 0;
  for (const auto& [name, t] : items) n += t.size();
  return n;
}

void Parameters::merge(const std::string& prefix, const Parameters& other) {
  for (const auto& [name, t] : other.items) {
    CK_CHECK(items.count(prefix + name) == 0, ErrKind::contract,
             "duplicate parameter name: " + prefix + name);
    items.emplace(prefix + name, t);
  }
}

void Adam::step(Parameters& params) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& [name, tensor] : params.items) {
    auto& val = tensor.mutable_data();
    const auto& g = tensor.grad();
    auto& mb = m[name];
    auto& vb = v[name];
    if (mb.size() != val.size()) mb.assign(val.size(), 0.0);
    if (vb.size() != val.size()) vb.assign(val.size(), 0.0);
    for (size_t i = 0; i < val.size(); ++i) {
      mb[i] = beta1 * mb[i] + (1.0 - beta1) * g[i];
      vb[i] = beta2 * vb[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = mb[i] / bc1;
      const double vhat = vb[i] / bc2;
      val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace canonkit

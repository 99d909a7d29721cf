#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "canonkit/error.hpp"

namespace canonkit {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // accumulates self.grad into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Dense row-major tensor of doubles with reverse-mode autodiff. Value
/// semantics via a shared node; forward ops record a trace whenever any
/// input requires grad. Values are immutable once an op has consumed them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& mutable_data() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Same values, no trace, no grad requirement. Used to move data across
  /// training contexts without leaking graph history.
  Tensor detached_copy() const;

  bool same_values(const Tensor& other) const;  // bitwise value equality

  std::shared_ptr<TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- forward ops --------------------------------------------------------

Tensor linear(const Tensor& W, const Tensor& b, const Tensor& x);
Tensor conv2d(const Tensor& K, const Tensor& x);  // odd k, zero pad (k-1)/2, stride 1
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor global_mean_pool(const Tensor& x);  // [C,H,W] -> [C]
Tensor softmax(const Tensor& z, double tau);
Tensor cross_entropy(const Tensor& probs, int target);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor l2_normalize(const Tensor& a);          // norm clamped at 1e-12
Tensor log_clamped(const Tensor& a);           // log(max(a, 1e-12))
Tensor flatten(const Tensor& a);
Tensor stack_scalars(const std::vector<Tensor>& xs);  // n scalars -> [n]
Tensor concat_channels(const std::vector<Tensor>& xs);  // rank-3, same H,W -> stacked channels
Tensor index(const Tensor& v, int i);                 // [n] -> scalar

/// Hard selection with a soft backward: forward returns a bitwise copy of
/// entries[hard], backward behaves as if the output were sum_i w_i*entries[i].
Tensor hard_select(const Tensor& weights, const std::vector<Tensor>& entries, int hard);

/// Permute values by an index map: out[i] = in[perm[i]]. Exact, differentiable.
Tensor permute_values(const Tensor& x, const std::vector<int64_t>& perm, const Shape& out_shape);

void backward(const Tensor& loss);

int argmax(const std::vector<double>& v);  // lowest index wins ties

// ---- parameters & optimizer ---------------------------------------------

/// Named tensors with requires_grad set; iteration is lexicographic by name.
struct Parameters {
  std::map<std::string, Tensor> items;

  void add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return items.count(name) != 0; }
  void zero_grad();
  int64_t count() const;  // total number of scalars
  void merge(const std::string& prefix, const Parameters& other);
};

/// Adam with bias correction. Moment buffers live here, keyed by name.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, std::vector<double>> m, v;

  void step(Parameters& params);
};

}  // namespace canonkit

#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A tensor is a shared handle to a graph node. Ops create a new node that
// records its inputs and a backward closure when any input requires grad;
// backward() walks the recorded DAG in reverse topological order. Values are
// immutable after creation, except for leaf tensors updated in place by the
// optimizer. All ops are instantiated for float and double.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vw::ad {

using shape_t = std::vector<int64_t>;

int64_t numel(const shape_t& shape);
std::string shape_string(const shape_t& shape);

template <typename T>
struct node {
  shape_t shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<node>> inputs;
  // Accumulates this node's grad into the grads of its inputs.
  std::function<void(node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class tensor {
 public:
  tensor() = default;
  tensor(shape_t shape, std::vector<T> values, bool requires_grad = false);
  explicit tensor(std::shared_ptr<node<T>> n) : node_(std::move(n)) {}

  static tensor zeros(shape_t shape, bool requires_grad = false);
  static tensor full(shape_t shape, T value, bool requires_grad = false);
  static tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const shape_t& shape() const { return node_->shape; }
  int rank() const { return int(node_->shape.size()); }
  int64_t dim(int axis) const;
  int64_t numel() const { return int64_t(node_->value.size()); }

  std::span<const T> values() const { return node_->value; }
  // Leaf-only in-place access, used by optimizers and initializers.
  std::span<T> mutable_values();
  T item() const;
  T operator[](int64_t i) const { return node_->value[size_t(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  // Gradient accumulated by backward(); zeros when never reached.
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  std::string_view op() const { return node_->op; }
  const std::shared_ptr<node<T>>& impl() const { return node_; }

  // New leaf holding a copy of the values, detached from the graph.
  tensor detach() const;

 private:
  std::shared_ptr<node<T>> node_;
};

// Names of every op that records a backward closure.
const std::vector<std::string_view>& differentiable_ops();

// Populates grads of every requires_grad tensor reachable from loss.
template <typename T>
void backward(const tensor<T>& loss);

// -----------------------------------------------------------------------------
// ELEMENTWISE
// -----------------------------------------------------------------------------

template <typename T> tensor<T> relu(const tensor<T>& x);
template <typename T> tensor<T> leaky_relu(const tensor<T>& x, T slope = T(0.2));
template <typename T> tensor<T> add(const tensor<T>& a, const tensor<T>& b);
template <typename T> tensor<T> sub(const tensor<T>& a, const tensor<T>& b);
template <typename T> tensor<T> mul(const tensor<T>& a, const tensor<T>& b);
template <typename T> tensor<T> div(const tensor<T>& a, const tensor<T>& b);
template <typename T> tensor<T> add_scalar(const tensor<T>& x, T c);
template <typename T> tensor<T> mul_scalar(const tensor<T>& x, T c);
template <typename T> tensor<T> log(const tensor<T>& x);
template <typename T> tensor<T> exp(const tensor<T>& x);
template <typename T> tensor<T> pow_scalar(const tensor<T>& x, T exponent);
// Ties route the gradient to b.
template <typename T> tensor<T> min_elem(const tensor<T>& a, const tensor<T>& b);
// Ties route the gradient to a.
template <typename T> tensor<T> max_elem(const tensor<T>& a, const tensor<T>& b);

// -----------------------------------------------------------------------------
// SHAPE
// -----------------------------------------------------------------------------

template <typename T> tensor<T> reshape(const tensor<T>& x, shape_t shape);
template <typename T> tensor<T> permute(const tensor<T>& x, const std::vector<int>& axes);
template <typename T> tensor<T> concat(const std::vector<tensor<T>>& parts, int axis);
template <typename T> tensor<T> narrow(const tensor<T>& x, int axis, int64_t start, int64_t length);
// Expands size-1 axes to the target shape; ranks must match.
template <typename T> tensor<T> broadcast(const tensor<T>& x, const shape_t& shape);
// Adds bias[c] to every element of channel c (axis 1).
template <typename T> tensor<T> bias_add(const tensor<T>& x, const tensor<T>& bias);

// -----------------------------------------------------------------------------
// REDUCTIONS
// -----------------------------------------------------------------------------

// Pairwise summation in a fixed order.
template <typename T> tensor<T> sum(const tensor<T>& x);
template <typename T> tensor<T> sum(const tensor<T>& x, int axis);
template <typename T> tensor<T> mean(const tensor<T>& x);
template <typename T> tensor<T> softmax(const tensor<T>& x, int axis);

// -----------------------------------------------------------------------------
// CONVOLUTION AND SAMPLING
// -----------------------------------------------------------------------------

// input [N,C,H,W], kernel [Co,C,kh,kw]; cross-correlation.
template <typename T>
tensor<T> conv2d(const tensor<T>& input, const tensor<T>& kernel, int stride, int padding);
// input [N,C,D,H,W], kernel [Co,C,kd,kh,kw].
template <typename T>
tensor<T> conv3d(const tensor<T>& input, const tensor<T>& kernel, int stride, int padding);
// input [N,Ci,D,H,W], kernel [Ci,Co,kd,kh,kw]; adjoint of conv3d with the
// same kernel and geometry. Output extent (in-1)*stride - 2*padding + k.
template <typename T>
tensor<T> conv3d_transposed(const tensor<T>& input, const tensor<T>& kernel, int stride,
                            int padding);

// Continuous pixel position; (0,0) is the centre of the top-left texel.
struct sample_coord {
  double u = 0;
  double v = 0;
  bool valid = true;
};

// features [C,He,We] -> [M,C]. Invalid or out-of-image coordinates yield
// zero rows. Differentiable w.r.t. features only.
template <typename T>
tensor<T> bilinear_sample2d(const tensor<T>& features, std::span<const sample_coord> coords);

// Converts precision; the result is a new leaf.
template <typename To, typename From>
tensor<To> cast(const tensor<From>& x, bool requires_grad = false);

}  // namespace vw::ad

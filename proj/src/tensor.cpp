#include "voxelweave/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "voxelweave/common.hpp"

namespace vw::ad {

int64_t numel(const shape_t& shape) {
  int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw dimension_error("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const shape_t& shape) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << "]";
  return out.str();
}

const std::vector<std::string_view>& differentiable_ops() {
  static const std::vector<std::string_view> ops = {
      "relu",      "leaky_relu", "add",       "sub",        "mul",     "div",
      "add_scalar", "mul_scalar", "log",      "exp",        "pow_scalar", "min_elem",
      "max_elem",  "reshape",    "permute",   "concat",     "narrow",  "broadcast",
      "bias_add",  "sum",        "sum_axis",  "softmax",    "conv2d",  "conv3d",
      "conv3d_transposed", "bilinear_sample2d"};
  return ops;
}

namespace {

template <typename T>
using row_matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using matrix_map = Eigen::Map<row_matrix<T>>;
template <typename T>
using const_matrix_map = Eigen::Map<const row_matrix<T>>;

template <typename T>
void check_finite(std::string_view op, const std::vector<T>& values) {
  for (auto v : values) {
    if (!std::isfinite(v)) throw numeric_error(std::string(op) + ": non-finite value produced");
  }
}

// Builds the output node; attaches inputs and the backward closure only when
// some input participates in differentiation.
template <typename T>
tensor<T> make_result(std::string_view op, shape_t shape, std::vector<T> values,
                      std::vector<tensor<T>> inputs, std::function<void(node<T>&)> backward_fn) {
  check_finite(op, values);
  auto n = std::make_shared<node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->op = op;
  for (auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (auto& in : inputs) n->inputs.push_back(in.impl());
    n->backward = std::move(backward_fn);
  }
  return tensor<T>(std::move(n));
}

void require_same_shape(std::string_view op, const shape_t& a, const shape_t& b) {
  if (a != b) {
    throw dimension_error(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                          shape_string(b));
  }
}

int normalize_axis(std::string_view op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw dimension_error(std::string(op) + ": axis out of range");
  }
  return axis;
}

// outer x length x inner decomposition around an axis
struct axis_split {
  int64_t outer = 1;
  int64_t length = 1;
  int64_t inner = 1;
};

axis_split split_at(const shape_t& shape, int axis) {
  axis_split s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
T pairwise_sum(const T* data, int64_t n) {
  if (n <= 8) {
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += data[i];
    return acc;
  }
  int64_t half = n / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

template <typename T, typename F, typename G>
tensor<T> unary_op(std::string_view op, const tensor<T>& x, F forward, G derivative) {
  std::vector<T> out(x.numel());
  auto in = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [derivative](node<T>& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    src.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      src.grad[i] += self.grad[i] * derivative(src.value[i], self.value[i]);
    }
  });
}

}  // namespace

// -----------------------------------------------------------------------------
// TENSOR HANDLE
// -----------------------------------------------------------------------------

template <typename T>
tensor<T>::tensor(shape_t shape, std::vector<T> values, bool requires_grad) {
  if (ad::numel(shape) != int64_t(values.size())) {
    throw dimension_error("tensor: " + std::to_string(values.size()) +
                          " values do not fill shape " + shape_string(shape));
  }
  node_ = std::make_shared<node<T>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
tensor<T> tensor<T>::zeros(shape_t shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
tensor<T> tensor<T>::full(shape_t shape, T value, bool requires_grad) {
  auto n = ad::numel(shape);
  return tensor(std::move(shape), std::vector<T>(size_t(n), value), requires_grad);
}

template <typename T>
tensor<T> tensor<T>::scalar(T value, bool requires_grad) {
  return tensor(shape_t{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
int64_t tensor<T>::dim(int axis) const {
  return node_->shape.at(size_t(normalize_axis("dim", axis, rank())));
}

template <typename T>
std::span<T> tensor<T>::mutable_values() {
  if (node_->op != "leaf") throw contract_error("mutable_values on a non-leaf tensor");
  return node_->value;
}

template <typename T>
T tensor<T>::item() const {
  if (numel() != 1) throw dimension_error("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
void tensor<T>::set_requires_grad(bool flag) {
  if (node_->op != "leaf") throw contract_error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

template <typename T>
std::span<const T> tensor<T>::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
std::span<T> tensor<T>::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
void tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
tensor<T> tensor<T>::detach() const {
  return tensor(shape(), node_->value, false);
}

template <typename T>
void backward(const tensor<T>& loss) {
  if (loss.numel() != 1 || loss.rank() != 0) {
    throw contract_error("backward: loss must be a scalar, got shape " +
                         shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // iterative post-order DFS gives a topological order
  std::vector<node<T>*> order;
  std::unordered_set<node<T>*> visited;
  std::vector<std::pair<node<T>*, size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  auto* root = loss.impl().get();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    node<T>* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

// -----------------------------------------------------------------------------
// ELEMENTWISE
// -----------------------------------------------------------------------------

template <typename T>
tensor<T> relu(const tensor<T>& x) {
  return unary_op<T>(
      "relu", x, [](T a) { return a > 0 ? a : T(0); },
      [](T a, T) { return a > 0 ? T(1) : T(0); });
}

template <typename T>
tensor<T> leaky_relu(const tensor<T>& x, T slope) {
  return unary_op<T>(
      "leaky_relu", x, [slope](T a) { return a > 0 ? a : slope * a; },
      [slope](T a, T) { return a > 0 ? T(1) : slope; });
}

template <typename T>
tensor<T> add_scalar(const tensor<T>& x, T c) {
  return unary_op<T>(
      "add_scalar", x, [c](T a) { return a + c; }, [](T, T) { return T(1); });
}

template <typename T>
tensor<T> mul_scalar(const tensor<T>& x, T c) {
  return unary_op<T>(
      "mul_scalar", x, [c](T a) { return a * c; }, [c](T, T) { return c; });
}

template <typename T>
tensor<T> log(const tensor<T>& x) {
  for (auto v : x.values()) {
    if (!(v > 0)) throw domain_error("log: non-positive input");
  }
  return unary_op<T>(
      "log", x, [](T a) { return std::log(a); }, [](T a, T) { return T(1) / a; });
}

template <typename T>
tensor<T> exp(const tensor<T>& x) {
  return unary_op<T>(
      "exp", x, [](T a) { return std::exp(a); }, [](T, T y) { return y; });
}

template <typename T>
tensor<T> pow_scalar(const tensor<T>& x, T exponent) {
  if (exponent != std::floor(exponent)) {
    for (auto v : x.values()) {
      if (v < 0) throw domain_error("pow_scalar: negative base with fractional exponent");
    }
  }
  return unary_op<T>(
      "pow_scalar", x, [exponent](T a) { return std::pow(a, exponent); },
      [exponent](T a, T) {
        if (exponent == 0) return T(0);
        return exponent * std::pow(a, exponent - 1);
      });
}

namespace {

template <typename T, typename F, typename GA, typename GB>
tensor<T> binary_op(std::string_view op, const tensor<T>& a, const tensor<T>& b, F forward,
                    GA da, GB db) {
  require_same_shape(op, a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = forward(av[i], bv[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a, b}, [da, db](node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      na.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        na.grad[i] += self.grad[i] * da(na.value[i], nb.value[i]);
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        nb.grad[i] += self.grad[i] * db(na.value[i], nb.value[i]);
    }
  });
}

}  // namespace

template <typename T>
tensor<T> add(const tensor<T>& a, const tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
tensor<T> sub(const tensor<T>& a, const tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
tensor<T> mul(const tensor<T>& a, const tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
tensor<T> div(const tensor<T>& a, const tensor<T>& b) {
  for (auto v : b.values()) {
    if (v == 0) throw domain_error("div: division by zero");
  }
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
tensor<T> min_elem(const tensor<T>& a, const tensor<T>& b) {
  return binary_op<T>(
      "min_elem", a, b, [](T x, T y) { return std::min(x, y); },
      [](T x, T y) { return x < y ? T(1) : T(0); },
      [](T x, T y) { return x < y ? T(0) : T(1); });
}

template <typename T>
tensor<T> max_elem(const tensor<T>& a, const tensor<T>& b) {
  return binary_op<T>(
      "max_elem", a, b, [](T x, T y) { return std::max(x, y); },
      [](T x, T y) { return x >= y ? T(1) : T(0); },
      [](T x, T y) { return x >= y ? T(0) : T(1); });
}

// -----------------------------------------------------------------------------
// SHAPE
// -----------------------------------------------------------------------------

template <typename T>
tensor<T> reshape(const tensor<T>& x, shape_t shape) {
  if (numel(shape) != x.numel()) {
    throw dimension_error("reshape: cannot view " + shape_string(x.shape()) + " as " +
                          shape_string(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](node<T>& self) {
    auto& src = *self.inputs[0];
    src.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) src.grad[i] += self.grad[i];
  });
}

template <typename T>
tensor<T> permute(const tensor<T>& x, const std::vector<int>& axes) {
  int r = x.rank();
  if (int(axes.size()) != r) throw dimension_error("permute: axis count mismatch");
  std::vector<int> seen(r, 0);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[a]++) throw dimension_error("permute: invalid axis list");
  }
  const auto& in_shape = x.shape();
  shape_t out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<int64_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  // source offset (in input) for each output element
  std::vector<int64_t> source(size_t(x.numel()));
  std::vector<int64_t> idx(r, 0);
  for (size_t o = 0; o < source.size(); ++o) {
    int64_t off = 0;
    for (int i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
    source[o] = off;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> out(source.size());
  auto in = x.values();
  for (size_t o = 0; o < out.size(); ++o) out[o] = in[size_t(source[o])];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                        [source = std::move(source)](node<T>& self) {
                          auto& src = *self.inputs[0];
                          src.ensure_grad();
                          for (size_t o = 0; o < source.size(); ++o)
                            src.grad[size_t(source[o])] += self.grad[o];
                        });
}

template <typename T>
tensor<T> concat(const std::vector<tensor<T>>& parts, int axis) {
  if (parts.empty()) throw dimension_error("concat: no inputs");
  int r = parts[0].rank();
  axis = normalize_axis("concat", axis, r);
  shape_t out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (auto& p : parts) {
    if (p.rank() != r) throw dimension_error("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && p.shape()[i] != parts[0].shape()[i])
        throw dimension_error("concat: shape mismatch " + shape_string(p.shape()) + " vs " +
                              shape_string(parts[0].shape()));
    }
    out_shape[axis] += p.shape()[axis];
  }
  auto split = split_at(out_shape, axis);
  std::vector<T> out(size_t(numel(out_shape)));
  std::vector<int64_t> offsets;
  int64_t offset = 0;
  for (auto& p : parts) {
    offsets.push_back(offset);
    int64_t block = p.shape()[axis] * split.inner;
    auto v = p.values();
    for (int64_t o = 0; o < split.outer; ++o) {
      std::copy_n(v.data() + o * block, block,
                  out.data() + o * split.length * split.inner + offset * split.inner);
    }
    offset += p.shape()[axis];
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [split, offsets](node<T>& self) {
                          for (size_t k = 0; k < self.inputs.size(); ++k) {
                            auto& src = *self.inputs[k];
                            if (!src.requires_grad) continue;
                            src.ensure_grad();
                            int64_t len = int64_t(src.value.size()) / (split.outer * split.inner);
                            int64_t block = len * split.inner;
                            for (int64_t o = 0; o < split.outer; ++o) {
                              const T* g = self.grad.data() + o * split.length * split.inner +
                                           offsets[k] * split.inner;
                              T* dst = src.grad.data() + o * block;
                              for (int64_t i = 0; i < block; ++i) dst[i] += g[i];
                            }
                          }
                        });
}

template <typename T>
tensor<T> narrow(const tensor<T>& x, int axis, int64_t start, int64_t length) {
  axis = normalize_axis("narrow", axis, x.rank());
  if (start < 0 || length < 0 || start + length > x.shape()[axis]) {
    throw dimension_error("narrow: range out of bounds");
  }
  auto split = split_at(x.shape(), axis);
  shape_t out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(size_t(numel(out_shape)));
  auto v = x.values();
  int64_t block = length * split.inner;
  for (int64_t o = 0; o < split.outer; ++o) {
    std::copy_n(v.data() + (o * split.length + start) * split.inner, block,
                out.data() + o * block);
  }
  return make_result<T>("narrow", std::move(out_shape), std::move(out), {x},
                        [split, start, block](node<T>& self) {
                          auto& src = *self.inputs[0];
                          src.ensure_grad();
                          for (int64_t o = 0; o < split.outer; ++o) {
                            T* dst = src.grad.data() + (o * split.length + start) * split.inner;
                            const T* g = self.grad.data() + o * block;
                            for (int64_t i = 0; i < block; ++i) dst[i] += g[i];
                          }
                        });
}

template <typename T>
tensor<T> broadcast(const tensor<T>& x, const shape_t& shape) {
  int r = x.rank();
  if (int(shape.size()) != r) throw dimension_error("broadcast: rank mismatch");
  for (int i = 0; i < r; ++i) {
    if (x.shape()[i] != shape[i] && x.shape()[i] != 1) {
      throw dimension_error("broadcast: cannot expand " + shape_string(x.shape()) + " to " +
                            shape_string(shape));
    }
  }
  std::vector<int64_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  std::vector<int64_t> source(size_t(numel(shape)));
  std::vector<int64_t> idx(r, 0);
  for (size_t o = 0; o < source.size(); ++o) {
    int64_t off = 0;
    for (int i = 0; i < r; ++i) {
      if (x.shape()[i] != 1) off += idx[i] * in_strides[i];
    }
    source[o] = off;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> out(source.size());
  auto in = x.values();
  for (size_t o = 0; o < out.size(); ++o) out[o] = in[size_t(source[o])];
  return make_result<T>("broadcast", shape, std::move(out), {x},
                        [source = std::move(source)](node<T>& self) {
                          auto& src = *self.inputs[0];
                          src.ensure_grad();
                          for (size_t o = 0; o < source.size(); ++o)
                            src.grad[size_t(source[o])] += self.grad[o];
                        });
}

template <typename T>
tensor<T> bias_add(const tensor<T>& x, const tensor<T>& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw dimension_error("bias_add: bias " + shape_string(bias.shape()) +
                          " does not match channels of " + shape_string(x.shape()));
  }
  auto split = split_at(x.shape(), 1);
  std::vector<T> out(x.values().begin(), x.values().end());
  auto b = bias.values();
  for (int64_t o = 0; o < split.outer; ++o)
    for (int64_t c = 0; c < split.length; ++c) {
      T* dst = out.data() + (o * split.length + c) * split.inner;
      for (int64_t i = 0; i < split.inner; ++i) dst[i] += b[c];
    }
  return make_result<T>("bias_add", x.shape(), std::move(out), {x, bias},
                        [split](node<T>& self) {
                          auto& nx = *self.inputs[0];
                          auto& nb = *self.inputs[1];
                          if (nx.requires_grad) {
                            nx.ensure_grad();
                            for (size_t i = 0; i < self.grad.size(); ++i)
                              nx.grad[i] += self.grad[i];
                          }
                          if (nb.requires_grad) {
                            nb.ensure_grad();
                            for (int64_t o = 0; o < split.outer; ++o)
                              for (int64_t c = 0; c < split.length; ++c) {
                                const T* g =
                                    self.grad.data() + (o * split.length + c) * split.inner;
                                nb.grad[c] += pairwise_sum(g, split.inner);
                              }
                          }
                        });
}

// -----------------------------------------------------------------------------
// REDUCTIONS
// -----------------------------------------------------------------------------

template <typename T>
tensor<T> sum(const tensor<T>& x) {
  T total = pairwise_sum(x.values().data(), x.numel());
  return make_result<T>("sum", shape_t{}, std::vector<T>{total}, {x}, [](node<T>& self) {
    auto& src = *self.inputs[0];
    src.ensure_grad();
    for (auto& g : src.grad) g += self.grad[0];
  });
}

template <typename T>
tensor<T> sum(const tensor<T>& x, int axis) {
  axis = normalize_axis("sum", axis, x.rank());
  auto split = split_at(x.shape(), axis);
  shape_t out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  std::vector<T> out(size_t(split.outer * split.inner), T(0));
  auto v = x.values();
  for (int64_t o = 0; o < split.outer; ++o)
    for (int64_t a = 0; a < split.length; ++a)
      for (int64_t i = 0; i < split.inner; ++i)
        out[o * split.inner + i] += v[(o * split.length + a) * split.inner + i];
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {x},
                        [split](node<T>& self) {
                          auto& src = *self.inputs[0];
                          src.ensure_grad();
                          for (int64_t o = 0; o < split.outer; ++o)
                            for (int64_t a = 0; a < split.length; ++a)
                              for (int64_t i = 0; i < split.inner; ++i)
                                src.grad[(o * split.length + a) * split.inner + i] +=
                                    self.grad[o * split.inner + i];
                        });
}

template <typename T>
tensor<T> mean(const tensor<T>& x) {
  if (x.numel() == 0) throw dimension_error("mean of empty tensor");
  return mul_scalar(sum(x), T(1) / T(x.numel()));
}

template <typename T>
tensor<T> softmax(const tensor<T>& x, int axis) {
  axis = normalize_axis("softmax", axis, x.rank());
  auto split = split_at(x.shape(), axis);
  std::vector<T> out(size_t(x.numel()));
  auto v = x.values();
  for (int64_t o = 0; o < split.outer; ++o)
    for (int64_t i = 0; i < split.inner; ++i) {
      auto at = [&](int64_t a) { return (o * split.length + a) * split.inner + i; };
      T peak = v[at(0)];
      for (int64_t a = 1; a < split.length; ++a) peak = std::max(peak, v[at(a)]);
      T total = 0;
      for (int64_t a = 0; a < split.length; ++a) {
        out[at(a)] = std::exp(v[at(a)] - peak);
        total += out[at(a)];
      }
      for (int64_t a = 0; a < split.length; ++a) out[at(a)] /= total;
    }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [split](node<T>& self) {
    auto& src = *self.inputs[0];
    src.ensure_grad();
    for (int64_t o = 0; o < split.outer; ++o)
      for (int64_t i = 0; i < split.inner; ++i) {
        auto at = [&](int64_t a) { return (o * split.length + a) * split.inner + i; };
        T dot = 0;
        for (int64_t a = 0; a < split.length; ++a) dot += self.grad[at(a)] * self.value[at(a)];
        for (int64_t a = 0; a < split.length; ++a)
          src.grad[at(a)] += self.value[at(a)] * (self.grad[at(a)] - dot);
      }
  });
}

// -----------------------------------------------------------------------------
// CONVOLUTION
// -----------------------------------------------------------------------------

namespace {

// Geometry of a correlation between an image of `channels` x image[3] and a
// kernel k[3]; col rows are (c, kd, kh, kw), columns are output positions.
struct conv_geometry {
  int64_t channels = 0;
  int64_t image[3] = {1, 1, 1};
  int64_t out[3] = {1, 1, 1};
  int64_t k[3] = {1, 1, 1};
  int64_t stride[3] = {1, 1, 1};
  int64_t pad[3] = {0, 0, 0};

  int64_t image_size() const { return image[0] * image[1] * image[2]; }
  int64_t out_size() const { return out[0] * out[1] * out[2]; }
  int64_t taps() const { return k[0] * k[1] * k[2]; }
  bool pointwise() const {
    return taps() == 1 && stride[0] == 1 && stride[1] == 1 && stride[2] == 1 && pad[0] == 0 &&
           pad[1] == 0 && pad[2] == 0;
  }
};

template <typename T, bool Accumulate>
void col_transfer(T* image, T* col, const conv_geometry& g) {
  const int64_t P = g.out_size();
  int64_t row = 0;
  for (int64_t c = 0; c < g.channels; ++c)
    for (int64_t a = 0; a < g.k[0]; ++a)
      for (int64_t b = 0; b < g.k[1]; ++b)
        for (int64_t e = 0; e < g.k[2]; ++e, ++row) {
          T* line = col + row * P;
          for (int64_t od = 0; od < g.out[0]; ++od) {
            int64_t id = od * g.stride[0] - g.pad[0] + a;
            bool d_ok = id >= 0 && id < g.image[0];
            for (int64_t oh = 0; oh < g.out[1]; ++oh) {
              int64_t ih = oh * g.stride[1] - g.pad[1] + b;
              bool h_ok = d_ok && ih >= 0 && ih < g.image[1];
              T* dst = line + (od * g.out[1] + oh) * g.out[2];
              if (!h_ok) {
                if constexpr (!Accumulate) std::fill_n(dst, g.out[2], T(0));
                continue;
              }
              T* src_row = image + ((c * g.image[0] + id) * g.image[1] + ih) * g.image[2];
              for (int64_t ow = 0; ow < g.out[2]; ++ow) {
                int64_t iw = ow * g.stride[2] - g.pad[2] + e;
                bool ok = iw >= 0 && iw < g.image[2];
                if constexpr (Accumulate) {
                  if (ok) src_row[iw] += dst[ow];
                } else {
                  dst[ow] = ok ? src_row[iw] : T(0);
                }
              }
            }
          }
        }
}

template <typename T>
void im2col(const T* image, T* col, const conv_geometry& g) {
  col_transfer<T, false>(const_cast<T*>(image), col, g);
}

template <typename T>
void col2im_add(const T* col, T* image, const conv_geometry& g) {
  col_transfer<T, true>(image, const_cast<T*>(col), g);
}

int64_t conv_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  int64_t span = in + 2 * pad - k;
  if (span < 0) throw dimension_error("convolution kernel exceeds padded input");
  return span / stride + 1;
}

// conv over 3 spatial axes; conv2d goes through here with a unit depth axis.
template <typename T>
tensor<T> correlate(std::string_view op, const tensor<T>& x, const tensor<T>& w,
                    const conv_geometry& g, const shape_t& out_shape, int64_t batch) {
  const int64_t co = w.dim(0);
  const int64_t K = g.channels * g.taps();
  const int64_t P = g.out_size();
  const int64_t I = g.channels * g.image_size();
  const bool pointwise = g.pointwise();

  auto cols = std::make_shared<std::vector<T>>();
  if (!pointwise) cols->resize(size_t(batch * K * P));
  std::vector<T> out(size_t(batch * co * P));
  const_matrix_map<T> W(w.values().data(), co, K);
  for (int64_t n = 0; n < batch; ++n) {
    const T* col_ptr;
    if (pointwise) {
      col_ptr = x.values().data() + n * I;
    } else {
      im2col(x.values().data() + n * I, cols->data() + n * K * P, g);
      col_ptr = cols->data() + n * K * P;
    }
    const_matrix_map<T> C(col_ptr, K, P);
    matrix_map<T> O(out.data() + n * co * P, co, P);
    O.noalias() = W * C;
  }

  return make_result<T>(
      op, out_shape, std::move(out), {x, w}, [g, co, K, P, I, batch, pointwise, cols](node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const_matrix_map<T> W(nw.value.data(), co, K);
        std::vector<T> dcol;
        if (nx.requires_grad) {
          nx.ensure_grad();
          if (!pointwise) dcol.resize(size_t(K * P));
        }
        if (nw.requires_grad) nw.ensure_grad();
        for (int64_t n = 0; n < batch; ++n) {
          const_matrix_map<T> G(self.grad.data() + n * co * P, co, P);
          const T* col_ptr = pointwise ? nx.value.data() + n * I : cols->data() + n * K * P;
          if (nw.requires_grad) {
            const_matrix_map<T> C(col_ptr, K, P);
            matrix_map<T> dW(nw.grad.data(), co, K);
            dW.noalias() += G * C.transpose();
          }
          if (nx.requires_grad) {
            if (pointwise) {
              matrix_map<T> dX(nx.grad.data() + n * I, K, P);
              dX.noalias() += W.transpose() * G;
            } else {
              matrix_map<T> dC(dcol.data(), K, P);
              dC.noalias() = W.transpose() * G;
              col2im_add(dcol.data(), nx.grad.data() + n * I, g);
            }
          }
        }
      });
}

}  // namespace

template <typename T>
tensor<T> conv2d(const tensor<T>& input, const tensor<T>& kernel, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw dimension_error("conv2d: expected rank-4 input and kernel");
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw dimension_error("conv2d: kernel channels " + shape_string(kernel.shape()) +
                          " do not match input " + shape_string(input.shape()));
  }
  if (stride < 1 || padding < 0) throw contract_error("conv2d: stride >= 1, padding >= 0");
  conv_geometry g;
  g.channels = input.dim(1);
  g.image[1] = input.dim(2);
  g.image[2] = input.dim(3);
  g.k[1] = kernel.dim(2);
  g.k[2] = kernel.dim(3);
  g.stride[1] = g.stride[2] = stride;
  g.pad[1] = g.pad[2] = padding;
  g.out[1] = conv_extent(g.image[1], g.k[1], stride, padding);
  g.out[2] = conv_extent(g.image[2], g.k[2], stride, padding);
  shape_t out_shape{input.dim(0), kernel.dim(0), g.out[1], g.out[2]};
  return correlate<T>("conv2d", input, kernel, g, out_shape, input.dim(0));
}

template <typename T>
tensor<T> conv3d(const tensor<T>& input, const tensor<T>& kernel, int stride, int padding) {
  if (input.rank() != 5 || kernel.rank() != 5) {
    throw dimension_error("conv3d: expected rank-5 input and kernel");
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw dimension_error("conv3d: kernel channels " + shape_string(kernel.shape()) +
                          " do not match input " + shape_string(input.shape()));
  }
  if (stride < 1 || padding < 0) throw contract_error("conv3d: stride >= 1, padding >= 0");
  conv_geometry g;
  g.channels = input.dim(1);
  for (int a = 0; a < 3; ++a) {
    g.image[a] = input.dim(2 + a);
    g.k[a] = kernel.dim(2 + a);
    g.stride[a] = stride;
    g.pad[a] = padding;
    g.out[a] = conv_extent(g.image[a], g.k[a], stride, padding);
  }
  shape_t out_shape{input.dim(0), kernel.dim(0), g.out[0], g.out[1], g.out[2]};
  return correlate<T>("conv3d", input, kernel, g, out_shape, input.dim(0));
}

template <typename T>
tensor<T> conv3d_transposed(const tensor<T>& input, const tensor<T>& kernel, int stride,
                            int padding) {
  if (input.rank() != 5 || kernel.rank() != 5) {
    throw dimension_error("conv3d_transposed: expected rank-5 input and kernel");
  }
  if (kernel.dim(0) != input.dim(1)) {
    throw dimension_error("conv3d_transposed: kernel " + shape_string(kernel.shape()) +
                          " does not match input channels " + shape_string(input.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw contract_error("conv3d_transposed: stride >= 1, padding >= 0");
  }
  const int64_t batch = input.dim(0);
  const int64_t ci = input.dim(1);
  const int64_t co = kernel.dim(1);
  // g describes the forward correlation whose adjoint this is: its image is
  // our output, its output positions are our input positions.
  conv_geometry g;
  g.channels = co;
  for (int a = 0; a < 3; ++a) {
    g.k[a] = kernel.dim(2 + a);
    g.stride[a] = stride;
    g.pad[a] = padding;
    g.out[a] = input.dim(2 + a);
    g.image[a] = (g.out[a] - 1) * stride - 2 * padding + g.k[a];
    if (g.image[a] < 1) throw dimension_error("conv3d_transposed: empty output extent");
  }
  const int64_t K = co * g.taps();  // rows of the column matrix
  const int64_t P = g.out_size();   // input positions
  const int64_t O = co * g.image_size();
  shape_t out_shape{batch, co, g.image[0], g.image[1], g.image[2]};

  std::vector<T> out(size_t(batch * O), T(0));
  std::vector<T> col(size_t(K * P));
  const_matrix_map<T> Kmat(kernel.values().data(), ci, K);
  for (int64_t n = 0; n < batch; ++n) {
    const_matrix_map<T> X(input.values().data() + n * ci * P, ci, P);
    matrix_map<T> C(col.data(), K, P);
    C.noalias() = Kmat.transpose() * X;
    col2im_add(col.data(), out.data() + n * O, g);
  }

  return make_result<T>("conv3d_transposed", out_shape, std::move(out), {input, kernel},
                        [g, ci, K, P, O, batch](node<T>& self) {
                          auto& nx = *self.inputs[0];
                          auto& nk = *self.inputs[1];
                          std::vector<T> dcol(size_t(K * P));
                          const_matrix_map<T> Kmat(nk.value.data(), ci, K);
                          if (nx.requires_grad) nx.ensure_grad();
                          if (nk.requires_grad) nk.ensure_grad();
                          for (int64_t n = 0; n < batch; ++n) {
                            im2col(self.grad.data() + n * O, dcol.data(), g);
                            const_matrix_map<T> D(dcol.data(), K, P);
                            if (nx.requires_grad) {
                              matrix_map<T> dX(nx.grad.data() + n * ci * P, ci, P);
                              dX.noalias() += Kmat * D;
                            }
                            if (nk.requires_grad) {
                              const_matrix_map<T> X(nx.value.data() + n * ci * P, ci, P);
                              matrix_map<T> dK(nk.grad.data(), ci, K);
                              dK.noalias() += X * D.transpose();
                            }
                          }
                        });
}

// -----------------------------------------------------------------------------
// SAMPLING
// -----------------------------------------------------------------------------

namespace {

struct bilinear_taps {
  int64_t index[4] = {0, 0, 0, 0};
  double weight[4] = {0, 0, 0, 0};
  bool inside = false;
};

bilinear_taps bilinear_weights(const sample_coord& c, int64_t width, int64_t height) {
  bilinear_taps t;
  if (!c.valid || !(c.u >= 0) || !(c.v >= 0) || c.u > double(width - 1) ||
      c.v > double(height - 1)) {
    return t;
  }
  int64_t x0 = std::min<int64_t>(int64_t(std::floor(c.u)), std::max<int64_t>(width - 2, 0));
  int64_t y0 = std::min<int64_t>(int64_t(std::floor(c.v)), std::max<int64_t>(height - 2, 0));
  int64_t x1 = std::min<int64_t>(x0 + 1, width - 1);
  int64_t y1 = std::min<int64_t>(y0 + 1, height - 1);
  double fx = c.u - double(x0);
  double fy = c.v - double(y0);
  t.inside = true;
  t.index[0] = y0 * width + x0;
  t.index[1] = y0 * width + x1;
  t.index[2] = y1 * width + x0;
  t.index[3] = y1 * width + x1;
  t.weight[0] = (1 - fx) * (1 - fy);
  t.weight[1] = fx * (1 - fy);
  t.weight[2] = (1 - fx) * fy;
  t.weight[3] = fx * fy;
  return t;
}

}  // namespace

template <typename T>
tensor<T> bilinear_sample2d(const tensor<T>& features, std::span<const sample_coord> coords) {
  if (features.rank() != 3 || features.numel() == 0) {
    throw dimension_error("bilinear_sample2d: features must be non-empty [C,H,W]");
  }
  const int64_t channels = features.dim(0);
  const int64_t height = features.dim(1);
  const int64_t width = features.dim(2);
  const int64_t plane = height * width;
  const int64_t m = int64_t(coords.size());
  std::vector<bilinear_taps> taps(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].valid && !(std::isfinite(coords[i].u) && std::isfinite(coords[i].v))) {
      throw domain_error("bilinear_sample2d: non-finite coordinate");
    }
    taps[i] = bilinear_weights(coords[i], width, height);
  }
  std::vector<T> out(size_t(m * channels), T(0));
  auto f = features.values();
  for (int64_t i = 0; i < m; ++i) {
    const auto& t = taps[size_t(i)];
    if (!t.inside) continue;
    for (int64_t c = 0; c < channels; ++c) {
      const T* p = f.data() + c * plane;
      T acc = 0;
      for (int j = 0; j < 4; ++j) acc += T(t.weight[j]) * p[t.index[j]];
      out[size_t(i * channels + c)] = acc;
    }
  }
  return make_result<T>("bilinear_sample2d", shape_t{m, channels}, std::move(out), {features},
                        [taps = std::move(taps), channels, plane](node<T>& self) {
                          auto& src = *self.inputs[0];
                          src.ensure_grad();
                          for (size_t i = 0; i < taps.size(); ++i) {
                            const auto& t = taps[i];
                            if (!t.inside) continue;
                            for (int64_t c = 0; c < channels; ++c) {
                              T g = self.grad[i * size_t(channels) + size_t(c)];
                              T* dst = src.grad.data() + c * plane;
                              for (int j = 0; j < 4; ++j) dst[t.index[j]] += T(t.weight[j]) * g;
                            }
                          }
                        });
}

template <typename To, typename From>
tensor<To> cast(const tensor<From>& x, bool requires_grad) {
  std::vector<To> out(x.values().begin(), x.values().end());
  return tensor<To>(x.shape(), std::move(out), requires_grad);
}

// -----------------------------------------------------------------------------
// INSTANTIATIONS
// -----------------------------------------------------------------------------

#define VW_INSTANTIATE(T)                                                                   \
  template class tensor<T>;                                                                 \
  template void backward<T>(const tensor<T>&);                                              \
  template tensor<T> relu<T>(const tensor<T>&);                                             \
  template tensor<T> leaky_relu<T>(const tensor<T>&, T);                                    \
  template tensor<T> add<T>(const tensor<T>&, const tensor<T>&);                            \
  template tensor<T> sub<T>(const tensor<T>&, const tensor<T>&);                            \
  template tensor<T> mul<T>(const tensor<T>&, const tensor<T>&);                            \
  template tensor<T> div<T>(const tensor<T>&, const tensor<T>&);                            \
  template tensor<T> add_scalar<T>(const tensor<T>&, T);                                    \
  template tensor<T> mul_scalar<T>(const tensor<T>&, T);                                    \
  template tensor<T> log<T>(const tensor<T>&);                                              \
  template tensor<T> exp<T>(const tensor<T>&);                                              \
  template tensor<T> pow_scalar<T>(const tensor<T>&, T);                                    \
  template tensor<T> min_elem<T>(const tensor<T>&, const tensor<T>&);                       \
  template tensor<T> max_elem<T>(const tensor<T>&, const tensor<T>&);                       \
  template tensor<T> reshape<T>(const tensor<T>&, shape_t);                                 \
  template tensor<T> permute<T>(const tensor<T>&, const std::vector<int>&);                 \
  template tensor<T> concat<T>(const std::vector<tensor<T>>&, int);                         \
  template tensor<T> narrow<T>(const tensor<T>&, int, int64_t, int64_t);                    \
  template tensor<T> broadcast<T>(const tensor<T>&, const shape_t&);                        \
  template tensor<T> bias_add<T>(const tensor<T>&, const tensor<T>&);                       \
  template tensor<T> sum<T>(const tensor<T>&);                                              \
  template tensor<T> sum<T>(const tensor<T>&, int);                                         \
  template tensor<T> mean<T>(const tensor<T>&);                                             \
  template tensor<T> softmax<T>(const tensor<T>&, int);                                     \
  template tensor<T> conv2d<T>(const tensor<T>&, const tensor<T>&, int, int);               \
  template tensor<T> conv3d<T>(const tensor<T>&, const tensor<T>&, int, int);               \
  template tensor<T> conv3d_transposed<T>(const tensor<T>&, const tensor<T>&, int, int);    \
  template tensor<T> bilinear_sample2d<T>(const tensor<T>&, std::span<const sample_coord>);

VW_INSTANTIATE(float)
VW_INSTANTIATE(double)
#undef VW_INSTANTIATE

template tensor<float> cast<float, double>(const tensor<double>&, bool);
template tensor<double> cast<double, float>(const tensor<float>&, bool);
template tensor<float> cast<float, float>(const tensor<float>&, bool);
template tensor<double> cast<double, double>(const tensor<double>&, bool);

}  // namespace vw::ad

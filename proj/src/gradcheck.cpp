#include "voxelweave/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "voxelweave/losses.hpp"
#include "voxelweave/model.hpp"

namespace vw {

using ad::shape_t;
using tensor = ad::tensor<double>;

namespace {

struct check_case {
  std::vector<tensor> inputs;  // leaves; those with requires_grad are checked
  std::function<tensor(const std::vector<tensor>&)> f;
};

using builder = std::function<check_case(rng&)>;

struct check_entry {
  std::string name;
  std::string kind;
  builder make;
};

int between(rng& g, int lo, int hi) { return lo + int(g.index(uint64_t(hi - lo + 1))); }

shape_t random_shape(rng& g, int min_rank, int max_rank, int lo = 2, int hi = 4) {
  shape_t s(static_cast<size_t>(between(g, min_rank, max_rank)));
  for (auto& d : s) d = between(g, lo, hi);
  return s;
}

tensor leaf(const shape_t& s, rng& g, double lo, double hi, bool grad = true) {
  std::vector<double> v(size_t(ad::numel(s)));
  for (auto& x : v) x = g.uniform(lo, hi);
  return tensor(s, std::move(v), grad);
}

// values with |x| in [lo, hi] and random sign, away from kinks at zero
tensor signed_leaf(const shape_t& s, rng& g, double lo, double hi) {
  std::vector<double> v(size_t(ad::numel(s)));
  for (auto& x : v) x = g.uniform(lo, hi) * (g.uniform() < 0.5 ? -1.0 : 1.0);
  return tensor(s, std::move(v), true);
}

tensor offset_leaf(const tensor& a, rng& g, double lo, double hi) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (auto& x : v) x += g.uniform(lo, hi) * (g.uniform() < 0.5 ? -1.0 : 1.0);
  return tensor(a.shape(), std::move(v), true);
}

template <typename F>
check_entry unary(const std::string& name, double lo, double hi, F op, bool signed_values = false) {
  return {name, "op", [=](rng& g) {
            auto s = random_shape(g, 1, 3);
            auto x = signed_values ? signed_leaf(s, g, lo, hi) : leaf(s, g, lo, hi);
            return check_case{{x}, [op](const std::vector<tensor>& in) { return op(in[0]); }};
          }};
}

template <typename F>
check_entry binary(const std::string& name, F op, double blo = -1, double bhi = 1) {
  return {name, "op", [=](rng& g) {
            auto s = random_shape(g, 1, 3);
            auto a = leaf(s, g, -1, 1);
            auto b = blo > 0 ? signed_leaf(s, g, blo, bhi) : leaf(s, g, blo, bhi);
            return check_case{{a, b},
                              [op](const std::vector<tensor>& in) { return op(in[0], in[1]); }};
          }};
}

// softmax column distributions and a random one-hot target
check_entry loss_check(const std::string& name, loss_spec spec) {
  return {name, "loss", [=](rng& g) {
            const int c = between(g, 2, 4), p = between(g, 3, 10);
            auto logits = leaf({c, p}, g, -2, 2);
            std::vector<double> gt(size_t(c * p), 0.0);
            for (int j = 0; j < p; ++j) gt[size_t(int(g.index(uint64_t(c))) * p + j)] = 1.0;
            tensor target({c, p}, std::move(gt));
            return check_case{{logits, target}, [spec](const std::vector<tensor>& in) {
                                return compute_loss(spec, in[1], ad::softmax(in[0], 0));
                              }};
          }};
}

model_config micro_config() {
  model_config c;
  c.image_width = c.image_height = 16;
  c.encoder_channels = {4, 8};
  c.seed_depth = 4;
  c.decoder = {{2, 3, 1, 4, 0}};
  c.num_classes = 3;
  c.grid = {8, 8, 8, 0.125, vec3d::Zero(), vec3d(-0.5, -0.5, 1.5)};
  c.head_scale = 0.1;
  return c;
}

std::vector<check_entry> registry() {
  std::vector<check_entry> r;
  r.push_back(unary("relu", 0.05, 1.0, [](const tensor& x) { return ad::relu(x); }, true));
  r.push_back(unary("leaky_relu", 0.05, 1.0, [](const tensor& x) { return ad::leaky_relu(x); }, true));
  r.push_back(binary("add", [](const tensor& a, const tensor& b) { return ad::add(a, b); }));
  r.push_back(binary("sub", [](const tensor& a, const tensor& b) { return ad::sub(a, b); }));
  r.push_back(binary("mul", [](const tensor& a, const tensor& b) { return ad::mul(a, b); }));
  r.push_back(binary("div", [](const tensor& a, const tensor& b) { return ad::div(a, b); }, 0.5, 2.0));
  r.push_back(unary("add_scalar", -1, 1, [](const tensor& x) { return ad::add_scalar(x, 0.7); }));
  r.push_back(unary("mul_scalar", -1, 1, [](const tensor& x) { return ad::mul_scalar(x, -1.3); }));
  r.push_back(unary("log", 0.2, 2.0, [](const tensor& x) { return ad::log(x); }));
  r.push_back(unary("exp", -1, 1, [](const tensor& x) { return ad::exp(x); }));
  r.push_back({"pow_scalar", "op", [](rng& g) {
                 auto x = leaf(random_shape(g, 1, 3), g, 0.3, 2.0);
                 const double e = g.uniform(-1.5, 2.5);
                 return check_case{{x}, [e](const std::vector<tensor>& in) {
                                     return ad::pow_scalar(in[0], e);
                                   }};
               }});
  for (std::string name : {"min_elem", "max_elem"}) {
    r.push_back({name, "op", [name](rng& g) {
                   auto a = leaf(random_shape(g, 1, 3), g, -1, 1);
                   auto b = offset_leaf(a, g, 0.05, 0.5);
                   return check_case{{a, b}, [name](const std::vector<tensor>& in) {
                                       return name == "min_elem" ? ad::min_elem(in[0], in[1])
                                                                 : ad::max_elem(in[0], in[1]);
                                     }};
                 }});
  }
  r.push_back({"reshape", "op", [](rng& g) {
                 auto x = leaf(random_shape(g, 2, 3), g, -1, 1);
                 shape_t to{x.numel()};
                 if (g.uniform() < 0.5) to = {x.dim(0), x.numel() / x.dim(0)};
                 return check_case{{x}, [to](const std::vector<tensor>& in) {
                                     return ad::reshape(in[0], to);
                                   }};
               }});
  r.push_back({"permute", "op", [](rng& g) {
                 auto x = leaf(random_shape(g, 2, 4), g, -1, 1);
                 std::vector<int> axes(size_t(x.rank()));
                 std::iota(axes.begin(), axes.end(), 0);
                 for (size_t i = axes.size() - 1; i > 0; --i)
                   std::swap(axes[i], axes[size_t(g.index(i + 1))]);
                 return check_case{{x}, [axes](const std::vector<tensor>& in) {
                                     return ad::permute(in[0], axes);
                                   }};
               }});
  r.push_back({"concat", "op", [](rng& g) {
                 auto s = random_shape(g, 1, 3);
                 const int axis = int(g.index(s.size()));
                 std::vector<tensor> parts;
                 for (int k = between(g, 2, 3); k > 0; --k) {
                   auto t = s;
                   t[size_t(axis)] = between(g, 1, 3);
                   parts.push_back(leaf(t, g, -1, 1));
                 }
                 return check_case{parts, [axis](const std::vector<tensor>& in) {
                                     return ad::concat(in, axis);
                                   }};
               }});
  r.push_back({"narrow", "op", [](rng& g) {
                 auto x = leaf(random_shape(g, 1, 3, 3, 5), g, -1, 1);
                 const int axis = int(g.index(size_t(x.rank())));
                 const int64_t n = x.dim(axis), start = int64_t(g.index(uint64_t(n - 1)));
                 const int64_t len = 1 + int64_t(g.index(uint64_t(n - start)));
                 return check_case{{x}, [=](const std::vector<tensor>& in) {
                                     return ad::narrow(in[0], axis, start, len);
                                   }};
               }});
  r.push_back({"broadcast", "op", [](rng& g) {
                 auto target = random_shape(g, 1, 3);
                 auto s = target;
                 for (auto& d : s)
                   if (g.uniform() < 0.5) d = 1;
                 auto x = leaf(s, g, -1, 1);
                 return check_case{{x}, [target](const std::vector<tensor>& in) {
                                     return ad::broadcast(in[0], target);
                                   }};
               }});
  r.push_back({"bias_add", "op", [](rng& g) {
                 auto s = random_shape(g, 2, 4);
                 auto x = leaf(s, g, -1, 1), b = leaf({s[1]}, g, -1, 1);
                 return check_case{{x, b}, [](const std::vector<tensor>& in) {
                                     return ad::bias_add(in[0], in[1]);
                                   }};
               }});
  r.push_back(unary("sum", -1, 1, [](const tensor& x) { return ad::sum(x); }));
  r.push_back({"sum_axis", "op", [](rng& g) {
                 auto x = leaf(random_shape(g, 1, 3), g, -1, 1);
                 const int axis = int(g.index(size_t(x.rank())));
                 return check_case{{x}, [axis](const std::vector<tensor>& in) {
                                     return ad::sum(in[0], axis);
                                   }};
               }});
  r.push_back(unary("mean", -1, 1, [](const tensor& x) { return ad::mean(x); }));
  r.push_back({"softmax", "op", [](rng& g) {
                 auto x = leaf(random_shape(g, 1, 3), g, -2, 2);
                 const int axis = int(g.index(size_t(x.rank())));
                 return check_case{{x}, [axis](const std::vector<tensor>& in) {
                                     return ad::softmax(in[0], axis);
                                   }};
               }});
  r.push_back({"conv2d", "op", [](rng& g) {
                 const int k = g.uniform() < 0.5 ? 1 : 3, stride = between(g, 1, 2);
                 const int pad = k == 3 ? between(g, 0, 1) : 0;
                 const int64_t n = between(g, 1, 2), c = between(g, 1, 3), co = between(g, 1, 3);
                 auto x = leaf({n, c, between(g, 3, 6), between(g, 3, 6)}, g, -1, 1);
                 auto w = leaf({co, c, k, k}, g, -1, 1);
                 return check_case{{x, w}, [=](const std::vector<tensor>& in) {
                                     return ad::conv2d(in[0], in[1], stride, pad);
                                   }};
               }});
  r.push_back({"conv3d", "op", [](rng& g) {
                 const int k = g.uniform() < 0.5 ? 1 : 3, stride = between(g, 1, 2);
                 const int pad = k == 3 ? between(g, 0, 1) : 0;
                 const int64_t c = between(g, 1, 2), co = between(g, 1, 2);
                 auto x = leaf({1, c, between(g, 3, 4), between(g, 3, 4), between(g, 3, 4)}, g, -1, 1);
                 auto w = leaf({co, c, k, k, k}, g, -1, 1);
                 return check_case{{x, w}, [=](const std::vector<tensor>& in) {
                                     return ad::conv3d(in[0], in[1], stride, pad);
                                   }};
               }});
  r.push_back({"conv3d_transposed", "op", [](rng& g) {
                 const int k = between(g, 1, 3), stride = between(g, 1, 2);
                 const int pad = k == 3 ? between(g, 0, 1) : 0;
                 const int64_t c = between(g, 1, 2), co = between(g, 1, 2);
                 auto x = leaf({1, c, between(g, 2, 3), between(g, 2, 3), between(g, 2, 3)}, g, -1, 1);
                 auto w = leaf({c, co, k, k, k}, g, -1, 1);
                 return check_case{{x, w}, [=](const std::vector<tensor>& in) {
                                     return ad::conv3d_transposed(in[0], in[1], stride, pad);
                                   }};
               }});
  r.push_back({"bilinear_sample2d", "op", [](rng& g) {
                 const int64_t c = between(g, 1, 3), h = between(g, 2, 5), w = between(g, 2, 5);
                 auto f = leaf({c, h, w}, g, -1, 1);
                 std::vector<ad::sample_coord> coords(size_t(between(g, 4, 12)));
                 for (auto& q : coords) {
                   q.u = g.uniform(-0.8, double(w) - 0.2);
                   q.v = g.uniform(-0.8, double(h) - 0.2);
                   q.valid = g.uniform() > 0.15;
                 }
                 return check_case{{f}, [coords](const std::vector<tensor>& in) {
                                     return ad::bilinear_sample2d(
                                         in[0], std::span<const ad::sample_coord>(coords));
                                   }};
               }});
  r.push_back(loss_check("loss_iou", {loss_kind::iou}));
  r.push_back(loss_check("loss_xent", {loss_kind::xent}));
  r.push_back(loss_check("loss_focal", {loss_kind::focal, 2.0}));
  r.push_back(loss_check("loss_iou_xent_product", {loss_kind::iou_xent_product}));
  r.push_back({"model", "model", [](rng& g) {
                 const auto config = micro_config();
                 auto params = init_params<double>(config, g);
                 // nonzero biases so every bias gradient path is exercised
                 for (auto& e : params.entries)
                   if (e.name.ends_with(".bias"))
                     for (auto& x : e.value.mutable_values()) x = g.uniform(-0.1, 0.1);
                 auto image = leaf({1, 3, 16, 16}, g, 0, 1, false);
                 pinhole_camera cam;
                 cam.width = cam.height = 16;
                 cam.fx = cam.fy = 25;
                 cam.cx = cam.cy = 7.5;
                 const vec3d offset(g.uniform() * 0.125, g.uniform() * 0.125, g.uniform() * 0.125);
                 std::vector<tensor> inputs;
                 for (auto& e : params.entries) inputs.push_back(e.value);
                 auto names = params.entries;
                 return check_case{inputs, [=](const std::vector<tensor>& in) {
                                     model_params<double> p;
                                     for (size_t i = 0; i < in.size(); ++i)
                                       p.entries.push_back({names[i].name, in[i]});
                                     return forward_probs(config, p, image, offset, cam);
                                   }};
               }});
  return r;
}

void collect_ops(const std::shared_ptr<ad::node<double>>& root, std::set<std::string>& ops) {
  std::unordered_set<const ad::node<double>*> seen;
  std::vector<const ad::node<double>*> stack{root.get()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    ops.insert(std::string(n->op));
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
}

// Branch taken by every piecewise op in the graph, in a fixed traversal order.
std::vector<bool> branch_signature(const tensor& root) {
  std::vector<bool> sig;
  std::unordered_set<const ad::node<double>*> seen;
  std::vector<const ad::node<double>*> stack{root.impl().get()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if ((n->op == "relu" || n->op == "leaky_relu") && !n->inputs.empty()) {
      for (double x : n->inputs[0]->value) sig.push_back(x > 0);
    } else if ((n->op == "min_elem" || n->op == "max_elem") && n->inputs.size() == 2) {
      const auto& a = n->inputs[0]->value;
      const auto& b = n->inputs[1]->value;
      for (size_t i = 0; i < a.size(); ++i) sig.push_back(a[i] < b[i]);
    }
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  return sig;
}

// sum_k w_k (a_k - b_k), summed term by term so large outputs do not cancel
double weighted_difference(std::span<const double> a, std::span<const double> b,
                           const std::vector<double>& w) {
  double s = 0;
  for (size_t k = 0; k < w.size(); ++k) s += w[k] * (a[k] - b[k]);
  return s;
}

}  // namespace

double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> out;
  for (const auto& e : registry()) out.push_back(e.name);
  return out;
}

bool gradcheck_report::passed() const {
  if (!uncovered_ops.empty()) return false;
  for (const auto& r : results)
    if (!r.passed) return false;
  return !results.empty();
}

gradcheck_report run_gradcheck(const gradcheck_options& options) {
  if (options.trials < 1) throw config_error("gradcheck: trials must be >= 1");
  if (!(options.step > 0)) throw config_error("gradcheck: step must be > 0");
  gradcheck_report report;
  std::set<std::string> exercised;
  for (const auto& entry : registry()) {
    gradcheck_result res;
    res.name = entry.name;
    res.kind = entry.kind;
    for (int t = 0; t < options.trials; ++t) {
      rng gen = rng::stream(options.seed, "gradcheck:" + entry.name, uint64_t(t));
      check_case cc = entry.make(gen);
      tensor out = cc.f(cc.inputs);
      std::vector<double> w(size_t(out.numel()));
      for (auto& x : w) x = gen.uniform(-1, 1);
      tensor projected = ad::sum(ad::mul(out, tensor(out.shape(), w)));
      collect_ops(projected.impl(), exercised);
      for (auto& in : cc.inputs)
        if (in.requires_grad()) in.zero_grad();
      ad::backward(projected);
      for (size_t input = 0; input < cc.inputs.size(); ++input) {
        auto& in = cc.inputs[input];
        if (!in.requires_grad()) continue;
        std::vector<double> analytic(in.grad().begin(), in.grad().end());
        if (options.corrupt == entry.name)
          for (auto& a : analytic) a = a * 1.01 + 1e-3;
        auto values = in.mutable_values();
        for (size_t i = 0; i < values.size(); ++i) {
          const double x0 = values[i];
          values[i] = x0 + options.step;
          tensor plus = cc.f(cc.inputs);
          values[i] = x0 - options.step;
          tensor minus = cc.f(cc.inputs);
          values[i] = x0;
          ++res.entries;
          if (branch_signature(plus) != branch_signature(minus)) {
            ++res.kinked;
            continue;
          }
          const double numeric =
              weighted_difference(plus.values(), minus.values(), w) / (2 * options.step);
          const double err = gradcheck_relative_error(analytic[i], numeric);
          res.failing += err > options.tolerance;
          if (err > res.max_rel_error || res.worst_at.empty()) {
            res.max_rel_error = err;
            res.worst_at = "trial " + std::to_string(t) + " input " + std::to_string(input) +
                           " element " + std::to_string(i);
            res.worst_analytic = analytic[i];
            res.worst_numeric = numeric;
          }
        }
      }
      ++res.trials;
    }
    res.passed = res.max_rel_error <= options.tolerance &&
                 double(res.kinked) <= options.max_kinked_fraction * double(res.entries);
    report.results.push_back(res);
  }
  for (auto op : ad::differentiable_ops())
    if (!exercised.count(std::string(op))) report.uncovered_ops.emplace_back(op);
  return report;
}

nlohmann::json gradcheck_to_json(const gradcheck_report& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& x : r.results)
    checks.push_back({{"name", x.name},
                      {"kind", x.kind},
                      {"trials", x.trials},
                      {"entries", x.entries},
                      {"failing", x.failing},
                      {"kinked", x.kinked},
                      {"max_rel_error", x.max_rel_error},
                      {"worst_at", x.worst_at},
                      {"worst_analytic", x.worst_analytic},
                      {"worst_numeric", x.worst_numeric},
                      {"passed", x.passed}});
  return {{"passed", r.passed()}, {"checks", checks}, {"uncovered_ops", r.uncovered_ops}};
}

}  // namespace vw

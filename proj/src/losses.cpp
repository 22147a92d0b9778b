#include "voxelweave/losses.hpp"

#include "voxelweave/common.hpp"

namespace vw {

void loss_spec::validate(int64_t num_classes) const {
  if (!(gamma >= 0)) throw config_error("loss: focal gamma must be >= 0");
  if (num_classes < 2) throw config_error("loss: at least two classes (void + object) required");
}

loss_kind parse_loss_kind(std::string_view name) {
  if (name == "iou") return loss_kind::iou;
  if (name == "xent") return loss_kind::xent;
  if (name == "focal") return loss_kind::focal;
  if (name == "iou-xent" || name == "iou_xent" || name == "iou_xent_product")
    return loss_kind::iou_xent_product;
  throw config_error("unknown loss '" + std::string(name) + "'");
}

std::string loss_kind_name(loss_kind kind) {
  switch (kind) {
    case loss_kind::iou:
      return "iou";
    case loss_kind::xent:
      return "xent";
    case loss_kind::focal:
      return "focal";
    case loss_kind::iou_xent_product:
      return "iou-xent";
  }
  return "?";
}

namespace {

template <typename T>
void check_pair(const ad::tensor<T>& g, const ad::tensor<T>& p) {
  if (g.rank() != 2 || g.shape() != p.shape()) {
    throw dimension_error("loss: g and p must share a [C,P] shape, got " +
                          ad::shape_string(g.shape()) + " and " + ad::shape_string(p.shape()));
  }
  if (g.dim(0) < 2) throw dimension_error("loss: need at least two classes");
}

}  // namespace

template <typename T>
ad::tensor<T> iou_g(const ad::tensor<T>& g, const ad::tensor<T>& p) {
  check_pair(g, p);
  const int64_t classes = g.dim(0);
  const int64_t points = g.dim(1);
  auto g_obj = ad::narrow(g, 0, 1, classes - 1);
  auto p_obj = ad::narrow(p, 0, 1, classes - 1);
  std::vector<T> weight(size_t((classes - 1) * points));
  const T zero_weight = T(1) / T(classes - 1);
  auto gv = g_obj.values();
  for (size_t i = 0; i < weight.size(); ++i) weight[i] = gv[i] == T(1) ? T(1) : zero_weight;
  ad::tensor<T> mu(g_obj.shape(), std::move(weight));

  auto numerator = ad::sum(ad::mul(ad::min_elem(g_obj, p_obj), mu));
  auto denominator = ad::sum(ad::mul(ad::max_elem(g_obj, p_obj), mu));
  if (denominator.item() == T(0)) return ad::tensor<T>::scalar(T(1));
  return ad::div(numerator, denominator);
}

template <typename T>
ad::tensor<T> loss_iou(const ad::tensor<T>& g, const ad::tensor<T>& p) {
  return ad::add_scalar(ad::mul_scalar(iou_g(g, p), T(-1)), T(1));
}

template <typename T>
ad::tensor<T> loss_xent(const ad::tensor<T>& g, const ad::tensor<T>& p) {
  check_pair(g, p);
  const T eps = T(log_epsilon);
  auto terms = ad::mul(g, ad::log(ad::add_scalar(p, eps)));
  return ad::mul_scalar(ad::sum(terms), T(-1) / T(g.dim(1)));
}

template <typename T>
ad::tensor<T> loss_focal(const ad::tensor<T>& g, const ad::tensor<T>& p, double gamma) {
  check_pair(g, p);
  if (!(gamma >= 0)) throw domain_error("loss_focal: gamma must be >= 0");
  const T eps = T(log_epsilon);
  // g is one-hot, so only the true-class term of each column survives
  auto modulator = ad::pow_scalar(ad::add_scalar(ad::mul_scalar(p, T(-1)), T(1)), T(gamma));
  auto terms = ad::mul(ad::mul(g, modulator), ad::log(ad::add_scalar(p, eps)));
  return ad::mul_scalar(ad::sum(terms), T(-1) / T(g.dim(1)));
}

template <typename T>
ad::tensor<T> loss_iou_xent_product(const ad::tensor<T>& g, const ad::tensor<T>& p) {
  return ad::mul(loss_iou(g, p), loss_xent(g, p));
}

template <typename T>
ad::tensor<T> compute_loss(const loss_spec& spec, const ad::tensor<T>& g, const ad::tensor<T>& p) {
  switch (spec.kind) {
    case loss_kind::iou:
      return loss_iou(g, p);
    case loss_kind::xent:
      return loss_xent(g, p);
    case loss_kind::focal:
      return loss_focal(g, p, spec.gamma);
    case loss_kind::iou_xent_product:
      return loss_iou_xent_product(g, p);
  }
  throw config_error("compute_loss: unknown loss kind");
}

#define VW_INSTANTIATE(T)                                                                   \
  template ad::tensor<T> iou_g<T>(const ad::tensor<T>&, const ad::tensor<T>&);              \
  template ad::tensor<T> loss_iou<T>(const ad::tensor<T>&, const ad::tensor<T>&);           \
  template ad::tensor<T> loss_xent<T>(const ad::tensor<T>&, const ad::tensor<T>&);          \
  template ad::tensor<T> loss_focal<T>(const ad::tensor<T>&, const ad::tensor<T>&, double); \
  template ad::tensor<T> loss_iou_xent_product<T>(const ad::tensor<T>&,                     \
                                                  const ad::tensor<T>&);                    \
  template ad::tensor<T> compute_loss<T>(const loss_spec&, const ad::tensor<T>&,            \
                                         const ad::tensor<T>&);
VW_INSTANTIATE(float)
VW_INSTANTIATE(double)
#undef VW_INSTANTIATE

}  // namespace vw

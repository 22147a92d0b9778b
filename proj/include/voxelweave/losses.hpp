#pragma once

// Training losses over per-point class distributions. Ground truth g and
// prediction p are [C, P] tensors (class-major, points along axis 1) with
// class 0 the void class; g is one-hot, columns of p sum to one.

#include <string>
#include <string_view>

#include "voxelweave/tensor.hpp"

namespace vw {

enum class loss_kind { iou, xent, focal, iou_xent_product };

struct loss_spec {
  loss_kind kind = loss_kind::iou;
  double gamma = 2.0;  // focal exponent

  void validate(int64_t num_classes) const;
};

loss_kind parse_loss_kind(std::string_view name);
std::string loss_kind_name(loss_kind kind);

inline constexpr double log_epsilon = 1e-12;

// Generalised IoU over the C-1 non-void classes, weighting zero ground-truth
// entries by 1/(C-1). Returns 1 when both g and p carry no non-void mass.
template <typename T>
ad::tensor<T> iou_g(const ad::tensor<T>& g, const ad::tensor<T>& p);

template <typename T>
ad::tensor<T> loss_iou(const ad::tensor<T>& g, const ad::tensor<T>& p);

// mean over points of -sum_c g log(p + eps), void included
template <typename T>
ad::tensor<T> loss_xent(const ad::tensor<T>& g, const ad::tensor<T>& p);

// mean over points of -(1 - p_t)^gamma log(p_t + eps)
template <typename T>
ad::tensor<T> loss_focal(const ad::tensor<T>& g, const ad::tensor<T>& p, double gamma);

// (1 - IoU_g) * Xent
template <typename T>
ad::tensor<T> loss_iou_xent_product(const ad::tensor<T>& g, const ad::tensor<T>& p);

template <typename T>
ad::tensor<T> compute_loss(const loss_spec& spec, const ad::tensor<T>& g, const ad::tensor<T>& p);

}  // namespace vw

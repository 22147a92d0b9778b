#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace vw::ad {

struct adam_config {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct adam_state {
  std::vector<T> m;
  std::vector<T> v;
  int64_t step = 0;
};

// One bias-corrected Adam update, in place. State is sized on first use.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, adam_state<T>& state,
               const adam_config& config);

}  // namespace vw::ad

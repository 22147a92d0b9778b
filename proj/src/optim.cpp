#include "voxelweave/optim.hpp"

#include <cmath>

#include "voxelweave/common.hpp"

namespace vw::ad {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, adam_state<T>& state,
               const adam_config& config) {
  if (params.size() != grads.size()) throw dimension_error("adam_step: params/grads size mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw dimension_error("adam_step: optimizer state size mismatch");
  }
  state.step += 1;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    double m = b1 * double(state.m[i]) + (1 - b1) * g;
    double v = b2 * double(state.v[i]) + (1 - b2) * g * g;
    state.m[i] = T(m);
    state.v[i] = T(v);
    double update = config.lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
    params[i] = T(double(params[i]) - update);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, adam_state<float>&,
                               const adam_config&);
template void adam_step<double>(std::span<double>, std::span<const double>, adam_state<double>&,
                                const adam_config&);

}  // namespace vw::ad

#pragma once

// Training loop: per step, draw examples and a grid offset, rasterize the
// ground truth at that offset, run the model, take one Adam step.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "voxelweave/losses.hpp"
#include "voxelweave/model.hpp"
#include "voxelweave/scene.hpp"

namespace vw {

struct train_config {
  loss_spec loss;
  ad::adam_config adam;
  int64_t steps = 1000;
  int batch = 1;
  uint64_t seed = 0;
  // false trains every step at fixed_offset_fraction * v on all axes
  bool random_offsets = true;
  double fixed_offset_fraction = 0.5;

  void validate() const;
};

struct train_result {
  checkpoint final;
  std::vector<double> losses;  // one per step taken in this run
};

// Called after every step with (step index, loss).
using step_callback = std::function<void(int64_t, double)>;

// Trains from a fresh init (seeded from config.seed) or continues `resume`,
// whose step counter sets the first step index. Throws numeric_error on a
// non-finite loss.
train_result train(const std::vector<example>& data, const model_config& model,
                   const train_config& config, const std::optional<checkpoint>& resume = {},
                   const step_callback& on_step = {});

// Ground truth as a [C, P] one-hot tensor at the given lattice.
template <typename T>
ad::tensor<T> ground_truth_tensor(const scene& s, const grid_spec& spec, int num_classes);

}  // namespace vw

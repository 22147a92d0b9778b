#pragma once

// Inference plumbing: single passes, n^3 super-resolution passes, and
// dataset-level label accuracy.

#include <functional>
#include <vector>

#include "voxelweave/metrics.hpp"
#include "voxelweave/model.hpp"
#include "voxelweave/scene.hpp"

namespace vw {

// Class probabilities on the coarse lattice at one offset.
using pass_fn = std::function<volume_grid(const vec3d& offset)>;

pass_fn model_pass(const model_config& config, const model_params<float>& params,
                   const image_rgb& image, const pinhole_camera& camera);

// Runs the n^3 passes at superres_offsets(n, spacing) and interleaves them.
// The passes are also returned when `passes` is non-null.
volume_grid superres(const pass_fn& pass, int n, double spacing,
                     std::vector<volume_grid>* passes = nullptr);

label_grid predict_labels(const model_config& config, const model_params<float>& params,
                          const example& ex, const vec3d& offset);

// Label-only evaluation of every example at one offset.
eval_report evaluate_labels(const model_config& config, const model_params<float>& params,
                            const std::vector<example>& data, const vec3d& offset);

}  // namespace vw

#include "voxelweave/pipeline.hpp"

namespace vw {

pass_fn model_pass(const model_config& config, const model_params<float>& params,
                   const image_rgb& image, const pinhole_camera& camera) {
  auto x = image_tensor<float>(image.width, image.height, image.data);
  return [&config, &params, x, camera](const vec3d& offset) {
    return predict_probs(config, params, x, camera, offset);
  };
}

volume_grid superres(const pass_fn& pass, int n, double spacing,
                     std::vector<volume_grid>* passes) {
  std::vector<volume_grid> out;
  for (const auto& o : superres_offsets(n, spacing)) out.push_back(pass(o));
  volume_grid fine = interleave(out, n);
  if (passes) *passes = std::move(out);
  return fine;
}

label_grid predict_labels(const model_config& config, const model_params<float>& params,
                          const example& ex, const vec3d& offset) {
  return argmax_labels(model_pass(config, params, ex.image, ex.scene_data.camera)(offset));
}

eval_report evaluate_labels(const model_config& config, const model_params<float>& params,
                            const std::vector<example>& data, const vec3d& offset) {
  eval_config ec;
  ec.surface = false;
  std::vector<std::vector<instance_record>> per(data.size());
  parallel_for(int64_t(data.size()), [&](int64_t i) {
    per[size_t(i)] = evaluate_scene(predict_labels(config, params, data[size_t(i)], offset), {},
                                    data[size_t(i)].scene_data, ec, i);
  });
  std::vector<instance_record> all;
  for (auto& v : per) all.insert(all.end(), v.begin(), v.end());
  return aggregate(all, ec);
}

}  // namespace vw

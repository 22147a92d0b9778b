#include "voxelweave/train.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

namespace vw {

void train_config::validate() const {
  if (steps < 0) throw config_error("train: steps must be >= 0");
  if (batch < 1) throw config_error("train: batch must be >= 1");
  if (!(adam.lr >= 0)) throw config_error("train: learning rate must be >= 0");
  if (!(fixed_offset_fraction >= 0 && fixed_offset_fraction < 1))
    throw config_error("train: fixed offset fraction must lie in [0, 1)");
}

template <typename T>
ad::tensor<T> ground_truth_tensor(const scene& s, const grid_spec& spec, int num_classes) {
  auto labels = voxelize(s, spec);
  const int64_t n = spec.count();
  std::vector<T> values(size_t(num_classes * n), T(0));
  for (int64_t p = 0; p < n; ++p) {
    int32_t c = labels.labels[size_t(p)];
    if (c < 0 || c >= num_classes) throw contract_error("ground truth label exceeds class count");
    values[size_t(c * n + p)] = T(1);
  }
  return ad::tensor<T>({num_classes, n}, std::move(values));
}

template ad::tensor<float> ground_truth_tensor<float>(const scene&, const grid_spec&, int);
template ad::tensor<double> ground_truth_tensor<double>(const scene&, const grid_spec&, int);

train_result train(const std::vector<example>& data, const model_config& model,
                   const train_config& config, const std::optional<checkpoint>& resume,
                   const step_callback& on_step) {
  config.validate();
  model.validate();
  config.loss.validate(model.num_classes);
  if (data.empty()) throw config_error("train: dataset is empty");

  train_result result;
  checkpoint& ck = result.final;
  if (resume) {
    ck = *resume;
    if (model_config_to_json(ck.config) != model_config_to_json(model))
      throw config_error("train: checkpoint was written for a different model config");
  } else {
    ck.config = model;
    rng init = rng::stream(config.seed, "init");
    ck.params = init_params<float>(model, init);
    ck.step = 0;
  }
  if (ck.adam.empty()) ck.adam.resize(ck.params.entries.size());

  std::vector<ad::tensor<float>> images;
  std::vector<pinhole_camera> cameras;
  for (const auto& ex : data) {
    images.push_back(image_tensor<float>(ex.image.width, ex.image.height, ex.image.data));
    cameras.push_back(reconstruction_camera(ex.scene_data.camera));
  }

  const double v = model.grid.spacing;
  const int64_t first = ck.step;
  for (int64_t step = first; step < first + config.steps; ++step) {
    rng gen = rng::stream(config.seed, "training", uint64_t(step));
    ck.params.zero_grad();
    ad::tensor<float> total;
    for (int b = 0; b < config.batch; ++b) {
      const size_t e = size_t(gen.index(data.size()));
      const vec3d offset = config.random_offsets ? sample_training_offset(gen, v)
                                                 : vec3d::Constant(config.fixed_offset_fraction * v);
      auto gt = ground_truth_tensor<float>(data[e].scene_data, model.grid.with_offset(offset),
                                           model.num_classes);
      auto probs = forward_probs(model, ck.params, images[e], offset, cameras[e]);
      auto loss = compute_loss(config.loss, gt, probs);
      total = total.defined() ? ad::add(total, loss) : loss;
    }
    if (config.batch > 1) total = ad::mul_scalar(total, 1.0f / float(config.batch));
    const double value = total.item();
    if (!std::isfinite(value))
      throw numeric_error("train: non-finite loss at step " + std::to_string(step));
    ad::backward(total);
    for (size_t i = 0; i < ck.params.entries.size(); ++i) {
      auto& p = ck.params.entries[i].value;
      ad::adam_step(p.mutable_values(), p.grad(), ck.adam[i], config.adam);
    }
    ck.step = step + 1;
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
  }
  return result;
}

}  // namespace vw

#pragma once

// Toy single-image reconstruction network.
//
//   image -> [conv s2 -> lrelu -> conv s1 -> lrelu] x stages (2D encoder)
//         -> channel-to-depth reshape of the last map (3D seed grid)
//         -> per decoder stage: transposed conv upscale, concat of
//            ray-traced skip features and offset channels, mixing convs
//         -> 1x1x1 head -> softmax over C classes at every grid point
//
// The output grid lives in camera space, so skip projection uses the image
// intrinsics with an identity extrinsic.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxelweave/camera.hpp"
#include "voxelweave/grid.hpp"
#include "voxelweave/optim.hpp"
#include "voxelweave/tensor.hpp"

namespace vw {

struct decoder_stage_config {
  int upscale = 2;      // transposed-conv stride and kernel size
  int mix_kernel = 3;   // 3 or 1
  int mix_convs = 1;
  int channels = 16;    // C_d
  int skip_stage = -1;  // encoder stage feeding the ray-traced skip, -1 for none
};

struct model_config {
  int image_width = 64;
  int image_height = 64;
  std::vector<int> encoder_channels = {8, 16, 32, 64};
  int seed_depth = 4;  // last encoder map [Ce,h,w] becomes [Ce/seed_depth, seed_depth, h, w]
  std::vector<decoder_stage_config> decoder = {
      {2, 3, 1, 16, 2},
      {2, 3, 1, 8, 1},
      {2, 1, 1, 8, 0},
  };
  int num_classes = 4;
  // output lattice template (its offset is ignored); defaults to the 32^3
  // box that scene generation reconstructs
  grid_spec grid = {32, 32, 32, 1.0 / 32.0, vec3d::Zero(), vec3d(-0.5, -0.5, 1.5)};
  bool offset_channels = true;
  double head_scale = 0.0;

  void validate() const;
  int64_t seed_width() const;
  int64_t seed_height() const;
  int64_t seed_channels() const;
  // decoder grid side lengths after stage d
  std::vector<int64_t> stage_resolution() const;
  // number of channels the ray-traced skip carries into stage d
  int skip_channels(size_t stage) const;
  // copy with every skip connection removed
  model_config without_skips() const;
};

nlohmann::json model_config_to_json(const model_config& c);
model_config model_config_from_json(const nlohmann::json& j);

template <typename T>
struct named_tensor {
  std::string name;
  ad::tensor<T> value;
};

template <typename T>
struct model_params {
  std::vector<named_tensor<T>> entries;

  const ad::tensor<T>& at(const std::string& name) const;
  int64_t total_size() const;
  void zero_grad();
};

// Parameter names and shapes implied by a config, in a fixed order.
std::vector<std::pair<std::string, ad::shape_t>> parameter_layout(const model_config& config);

// He-uniform weights, zero biases, head weights scaled by head_scale (zero by
// default).
template <typename T>
model_params<T> init_params(const model_config& config, rng& gen);

template <typename To, typename From>
model_params<To> cast_params(const model_params<From>& params);

// image [1,3,H,W]; returns one map [1,C_s,H/2^(s+1),W/2^(s+1)] per stage.
template <typename T>
std::vector<ad::tensor<T>> encode(const model_config& config, const model_params<T>& params,
                                  const ad::tensor<T>& image);

// Channel-reduced feature sampled at the projection of every decoder grid
// point: [W_d*H_d*D_d, floor(0.75*C_d)], zeros for points that fall outside
// the image or behind the camera.
template <typename T>
ad::tensor<T> ray_skip_gather(const model_config& config, const model_params<T>& params,
                              size_t stage, const ad::tensor<T>& feature,
                              const pinhole_camera& camera, const decoder_grid_spec& grid);

// Class logits [C, P] on config.grid at the given offset.
template <typename T>
ad::tensor<T> decode(const model_config& config, const model_params<T>& params,
                     const std::vector<ad::tensor<T>>& features, const vec3d& offset,
                     const pinhole_camera& camera);

// softmax(decode(encode(image))) as [C, P]
template <typename T>
ad::tensor<T> forward_probs(const model_config& config, const model_params<T>& params,
                            const ad::tensor<T>& image, const vec3d& offset,
                            const pinhole_camera& camera);

template <typename T>
volume_grid predict_probs(const model_config& config, const model_params<T>& params,
                          const ad::tensor<T>& image, const pinhole_camera& camera,
                          const vec3d& offset);

// planar [3,H,W] floats -> [1,3,H,W]
template <typename T>
ad::tensor<T> image_tensor(int width, int height, const std::vector<float>& planar);

// camera with the same intrinsics and an identity extrinsic
pinhole_camera reconstruction_camera(const pinhole_camera& camera);

// -----------------------------------------------------------------------------
// CHECKPOINTS
// -----------------------------------------------------------------------------
//
//   bytes 0-3  magic "VWCK"
//   u32        format version (1)
//   u64        manifest length in bytes
//   manifest   UTF-8 JSON: {"config", "step", "parameters": [{name, shape}],
//              "adam": {"has_moments", "steps"}}
//   records    one VWT1 tensor per parameter, in manifest order, followed by
//              the Adam first and second moments when has_moments is true

struct checkpoint {
  model_config config;
  model_params<float> params;
  std::vector<ad::adam_state<float>> adam;  // empty or one per parameter
  int64_t step = 0;
};

void save_checkpoint(const std::filesystem::path& path, const checkpoint& ck);
checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vw

#pragma once

// Hybrid volume representation: a regular W x H x D lattice with spacing v,
// placed at a sub-voxel offset inside an axis-aligned reconstruction box.
//
//   pos(i,j,k) = origin + offset + v * (i,j,k),   0 <= offset_axis < v
//
// Points are linearised x-fastest: index(i,j,k) = (k*H + j)*W + i, which is
// also the [D,H,W] order of the model's 3D tensors.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxelweave/common.hpp"

namespace vw {

struct grid_spec {
  int64_t width = 1;   // W, points along x
  int64_t height = 1;  // H, points along y
  int64_t depth = 1;   // D, points along z
  double spacing = 1;  // v
  vec3d offset = vec3d::Zero();
  vec3d origin = vec3d::Zero();  // minimum corner of the reconstruction box

  void validate() const;
  int64_t count() const { return width * height * depth; }
  int64_t index(int64_t i, int64_t j, int64_t k) const { return (k * height + j) * width + i; }
  vec3d position(int64_t i, int64_t j, int64_t k) const {
    return {origin.x() + offset.x() + spacing * double(i),
            origin.y() + offset.y() + spacing * double(j),
            origin.z() + offset.z() + spacing * double(k)};
  }
  vec3d position(int64_t point) const;
  grid_spec with_offset(const vec3d& new_offset) const;
  // side lengths of the reconstruction box
  vec3d extent() const {
    return {spacing * double(width), spacing * double(height), spacing * double(depth)};
  }
  double diagonal() const { return extent().norm(); }

  bool operator==(const grid_spec&) const = default;
};

// Coarser lattice of a decoder layer: k times fewer points per axis, spacing
// k*v and offset k*offset, spanning the same box as its parent.
struct decoder_grid_spec {
  grid_spec parent;
  int64_t factor = 1;  // k

  decoder_grid_spec(const grid_spec& parent_grid, int64_t k);
  grid_spec grid() const;
};

// W x H x D x C values, stored channel-major: values[c*count + point].
struct volume_grid {
  grid_spec spec;
  int64_t channels = 1;
  std::vector<double> values;

  volume_grid() = default;
  volume_grid(const grid_spec& s, int64_t c, double fill = 0.0);

  double at(int64_t point, int64_t c) const { return values[size_t(c * spec.count() + point)]; }
  double& at(int64_t point, int64_t c) { return values[size_t(c * spec.count() + point)]; }
  double at(int64_t i, int64_t j, int64_t k, int64_t c) const {
    return at(spec.index(i, j, k), c);
  }
  double& at(int64_t i, int64_t j, int64_t k, int64_t c) { return at(spec.index(i, j, k), c); }
};

// Integer class label per point; 0 is void.
struct label_grid {
  grid_spec spec;
  std::vector<int32_t> labels;

  label_grid() = default;
  explicit label_grid(const grid_spec& s, int32_t fill = 0)
      : spec(s), labels(size_t(s.count()), fill) {}
};

volume_grid one_hot(const label_grid& labels, int64_t num_classes);
// Per-point argmax; ties resolve to the lowest class index.
label_grid argmax_labels(const volume_grid& probs);
// Largest deviation of per-point channel sums from 1.
double max_normalization_error(const volume_grid& probs);

// uniform offset in [0, v)^3
vec3d sample_training_offset(rng& gen, double spacing);

// The n^3 offsets ((m+0.5)/n) * v per axis, x index fastest.
std::vector<vec3d> superres_offsets(int n, double spacing);

// Assembles n^3 coarse passes taken at superres_offsets(n, v) into one grid
// of n*W x n*H x n*D points with spacing v/n and offset (0.5/n)*v.
volume_grid interleave(const std::vector<volume_grid>& passes, int n);

nlohmann::json spec_to_json(const grid_spec& s);
grid_spec spec_from_json(const nlohmann::json& j);

// VWT1 payload of shape [C,D,H,W] plus a JSON sidecar at path + ".json".
void save_volume(const std::filesystem::path& path, const volume_grid& grid);
volume_grid load_volume(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const label_grid& grid);
label_grid load_labels(const std::filesystem::path& path);

}  // namespace vw

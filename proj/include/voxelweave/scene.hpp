#pragma once

// Procedural scenes: parametric shape families resting on a ground plane,
// a camera looking at the scene centre, a low-realism rasterizer and the
// parity voxelizer that produces ground-truth labels.
//
// World space is y-up with the ground plane at y = ground_height. The
// reconstruction volume is an axis-aligned box in camera space.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxelweave/camera.hpp"
#include "voxelweave/grid.hpp"
#include "voxelweave/mesh.hpp"

namespace vw {

enum class shape_family { box, sphere, cylinder, torus, l_bracket, table, chair };

std::string family_name(shape_family family);
shape_family parse_family(const std::string& name);
const std::vector<shape_family>& all_families();

// Named parameters in canonical object units.
struct shape {
  shape_family family = shape_family::box;
  std::map<std::string, double> params;
};

// Canonical frame: base on y = 0, centred on the y axis. Composite families
// return several closed parts that may touch but never overlap.
std::vector<tri_mesh> build_shape_parts(const shape& s);
shape sample_shape(shape_family family, rng& gen);

struct scene_object {
  shape geometry;
  rigid_transform pose;  // canonical -> world, applied after scaling
  double scale = 1.0;
  int class_id = 1;
  std::vector<tri_mesh> parts;  // posed, world space; rebuilt from the fields above

  void rebuild();
  tri_mesh world_mesh() const;
  bool contains(const vec3d& world_point) const;
};

struct scene {
  uint64_t seed = 0;
  pinhole_camera camera;
  bool ground_plane = true;
  double ground_height = -0.25;
  std::vector<scene_object> objects;
};

// -----------------------------------------------------------------------------
// GENERATION
// -----------------------------------------------------------------------------

struct scene_forge_config {
  int num_classes = 4;  // C, void included
  // classes 1..C-1 and the families drawn for each; every class mixes a
  // compact family with a thin-walled one
  std::map<int, std::vector<shape_family>> class_families = {
      {1, {shape_family::box, shape_family::table}},
      {2, {shape_family::sphere, shape_family::torus}},
      {3, {shape_family::cylinder, shape_family::l_bracket, shape_family::chair}},
  };
  int image_width = 64;
  int image_height = 64;
  double focal = 100.0;  // pixels, for the default 64-pixel image
  double camera_distance = 2.0;
  double yaw_min_deg = 0.0, yaw_max_deg = 360.0;
  double pitch_min_deg = 15.0, pitch_max_deg = 45.0;
  // objects stay inside this ball around the world origin, which the
  // reconstruction volume contains for every camera orientation
  double scene_radius = 0.5;
  double ground_height = -0.25;
  double single_scale_min = 0.8, single_scale_max = 1.2;
  double multi_scale_min = 0.45, multi_scale_max = 0.75;
  int max_attempts = 1000;

  void validate() const;
  // camera-space box: centre at depth camera_distance, side 2 * scene_radius
  grid_spec reconstruction_grid(int64_t resolution) const;
};

// Draws a scene with the given classes (one object per entry).
scene generate_scene(const std::vector<int>& classes, const scene_forge_config& config, rng& gen);
// Picks `count` distinct classes from pool (with replacement when the pool is smaller).
scene generate_scene(int count, const std::vector<int>& class_pool,
                     const scene_forge_config& config, rng& gen);

// -----------------------------------------------------------------------------
// RENDERING
// -----------------------------------------------------------------------------

// Planar RGB in [0,1], layout [3, height, width], values on the 8-bit grid.
struct image_rgb {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  float at(int channel, int y, int x) const {
    return data[size_t((channel * height + y) * width + x)];
  }
};

struct render_style {
  vec3d background = {0.82, 0.86, 0.92};
  vec3d ground_albedo = {0.55, 0.55, 0.5};
  vec3d light_direction = vec3d(0.35, 1.0, 0.25).normalized();  // world, towards the light
  double ambient = 0.35;
  double diffuse = 0.65;
  std::map<int, vec3d> class_albedo = {
      {1, {0.85, 0.30, 0.25}}, {2, {0.25, 0.55, 0.85}}, {3, {0.30, 0.75, 0.35}},
      {4, {0.85, 0.75, 0.25}}, {5, {0.65, 0.35, 0.75}}, {6, {0.35, 0.75, 0.75}},
  };
  vec3d albedo(int class_id) const;
};

image_rgb render(const scene& s, const render_style& style = {});
// Renders an arbitrary triangle list (world space) with the scene's camera.
image_rgb render_meshes(const pinhole_camera& camera, const std::vector<tri_mesh>& meshes,
                        const render_style& style, bool ground_plane, double ground_height);

// Per-pixel index of the visible object, -1 for none. `only` >= 0 renders
// that object alone.
std::vector<int> render_ids(const scene& s, const pinhole_camera& camera, int only = -1);

void write_ppm(const std::filesystem::path& path, const image_rgb& image);
image_rgb read_ppm(const std::filesystem::path& path);

// -----------------------------------------------------------------------------
// VOXELIZATION
// -----------------------------------------------------------------------------

// Labels at the grid points of `spec` (camera space): the class of the
// object containing each point, void otherwise. Points on a surface count
// as inside. Throws scene_integrity_error when two objects claim a point.
label_grid voxelize(const scene& s, const grid_spec& spec);
// Containment of each grid point in one closed world-space mesh set.
std::vector<char> voxelize_parts(const std::vector<tri_mesh>& parts_camera, const grid_spec& spec);
// same as voxelize
label_grid rasterize_labels(const scene& s, const grid_spec& spec);

// -----------------------------------------------------------------------------
// SERIALISATION AND DATASETS
// -----------------------------------------------------------------------------

nlohmann::json scene_to_json(const scene& s);
scene scene_from_json(const nlohmann::json& j);
void save_scene(const std::filesystem::path& path, const scene& s);
scene load_scene(const std::filesystem::path& path);

nlohmann::json camera_to_json(const pinhole_camera& c);
pinhole_camera camera_from_json(const nlohmann::json& j);

struct dataset_config {
  scene_forge_config forge;
  int objects_per_scene = 1;  // 1, 2 or 3
  int64_t resolution = 32;    // label grid points per axis
  double test_fraction = 0.0;
};

struct dataset_entry {
  std::filesystem::path dir;
  std::string split;  // "train" or "test"
  std::vector<int> classes;
  uint64_t shape_seed = 0;
};

// Writes <root>/scene_NNNNN/{scene.json,image.ppm,labels.vwt(+.json)} and
// <root>/index.json. Class combinations are assigned round-robin; train and
// test shapes come from disjoint seed sets.
std::vector<dataset_entry> make_dataset(const std::filesystem::path& root, int64_t n_scenes,
                                        const dataset_config& config, uint64_t seed);

// In-memory example, as used by training and evaluation.
struct example {
  scene scene_data;
  image_rgb image;
  std::string split = "train";
};

std::vector<example> load_dataset(const std::filesystem::path& root,
                                  const std::string& split = "");
// Generates the same scenes as make_dataset without touching disk.
std::vector<example> generate_examples(int64_t n_scenes, const dataset_config& config,
                                       uint64_t seed);

// Class combinations of size k from classes 1..C-1, lexicographic.
std::vector<std::vector<int>> class_combinations(int num_classes, int k);

}  // namespace vw

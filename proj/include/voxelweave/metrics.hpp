#pragma once

// Evaluation: volumetric IoU over label grids, surface F-score and Chamfer
// distance from area-uniform samples, and occlusion / depth breakdowns.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxelweave/grid.hpp"
#include "voxelweave/mesh.hpp"
#include "voxelweave/scene.hpp"

namespace vw {

// |pred=c and gt=c| / |pred=c or gt=c|, 1 when the union is empty.
double volumetric_iou(const label_grid& pred, const label_grid& gt, int class_id);

// Area-uniform samples; empty for an empty mesh.
std::vector<vec3d> sample_surface(const tri_mesh& mesh, int64_t count, rng& gen);

// Bounding-volume hierarchy answering exact point-to-triangle distances.
class triangle_bvh {
 public:
  explicit triangle_bvh(const tri_mesh& mesh);
  bool empty() const { return tris_.empty(); }
  double distance(const vec3d& p) const;

 private:
  struct tri {
    vec3d a, b, c;
  };
  struct bvh_node {
    aabb box;
    int32_t left = -1;  // child index, or -1 for a leaf
    int32_t right = -1;
    int32_t first = 0;  // leaf range in tris_
    int32_t count = 0;
  };
  int32_t build(int32_t first, int32_t count, std::vector<vec3d>& centroids);

  std::vector<tri> tris_;
  std::vector<bvh_node> nodes_;
};

// Closest distance from p to triangle abc.
double point_triangle_distance(const vec3d& p, const vec3d& a, const vec3d& b, const vec3d& c);

// Precision/recall at tau from given samples of each mesh.
double fscore_from_samples(const std::vector<vec3d>& pred_samples, const triangle_bvh& pred,
                           const std::vector<vec3d>& gt_samples, const triangle_bvh& gt,
                           double tau);
double chamfer_from_samples(const std::vector<vec3d>& pred_samples, const triangle_bvh& pred,
                            const std::vector<vec3d>& gt_samples, const triangle_bvh& gt);

// Sampling wrappers. fscore: empty pred with nonempty gt gives 0, both
// empty give 1. chamfer requires both meshes non-empty.
double fscore(const tri_mesh& pred, const tri_mesh& gt, double tau, int64_t samples = 100000,
              uint64_t seed = 0);
double chamfer(const tri_mesh& pred, const tri_mesh& gt, int64_t samples = 100000,
               uint64_t seed = 0);

// Share of the object's solo-render pixels that another object covers in
// the full render, at a resolution-pixel-wide image. 1 when the object is
// not visible on its own.
double occlusion_fraction(const scene& s, const pinhole_camera& camera, int object_index,
                          int resolution);

struct eval_config {
  double tau_fraction = 0.01;  // of the reconstruction-volume diagonal
  int64_t samples = 100000;
  uint64_t seed = 0;
  bool surface = true;     // F-score and Chamfer
  bool occlusion = false;  // occlusion fraction per instance
  int occlusion_resolution = 64;
  std::vector<double> occlusion_edges = {0.0, 0.1, 0.3, 0.6, 1.0};
  std::vector<double> depth_edges = {};  // camera-space depth of the object centre
};

struct instance_record {
  int64_t scene_index = 0;
  int object_index = 0;
  int class_id = 0;
  double iou = 0;
  std::optional<double> fscore;
  std::optional<double> chamfer;
  std::optional<double> occlusion;
  double depth = 0;
};

struct metric_bin {
  double lo = 0;
  double hi = 0;
  int64_t count = 0;
  double mean_iou = 0;
};

struct eval_report {
  std::map<int, double> class_iou;
  double miou = 0;        // mean over classes
  double global_iou = 0;  // mean over instances
  std::map<int, double> class_fscore;
  double mean_fscore = 0;
  std::map<int, double> class_chamfer;
  double mean_chamfer = 0;
  std::vector<metric_bin> occlusion_bins;
  std::vector<metric_bin> depth_bins;
  std::vector<instance_record> instances;
};

// One record per ground-truth object. pred_meshes are camera-space class
// meshes (class_id set); gt labels come from voxelizing gt at pred.spec.
std::vector<instance_record> evaluate_scene(const label_grid& pred,
                                            const std::vector<tri_mesh>& pred_meshes,
                                            const scene& gt, const eval_config& config,
                                            int64_t scene_index = 0);
eval_report aggregate(const std::vector<instance_record>& instances, const eval_config& config);
eval_report evaluate(const label_grid& pred, const std::vector<tri_mesh>& pred_meshes,
                     const scene& gt, const eval_config& config);

nlohmann::json report_to_json(const eval_report& r);
std::string report_table(const eval_report& r);

}  // namespace vw

#pragma once

// Pinhole camera. Camera space is right-handed with x right, y down and z
// along the viewing direction; pixel (0,0) is the centre of the top-left
// pixel.

#include <vector>

#include "voxelweave/common.hpp"
#include "voxelweave/grid.hpp"
#include "voxelweave/tensor.hpp"

namespace vw {

struct rigid_transform {
  mat3d rotation = mat3d::Identity();
  vec3d translation = vec3d::Zero();

  static rigid_transform identity() { return {}; }
  vec3d apply(const vec3d& p) const { return rotation * p + translation; }
  rigid_transform inverse() const;
  // (*this) after inner: x -> this(inner(x))
  rigid_transform operator*(const rigid_transform& inner) const;
};

// rotation about +y (world up) by angle radians
mat3d yaw_rotation(double angle);
bool is_rotation(const mat3d& r, double tolerance = 1e-9);
// world->camera transform for an eye looking at target; up is world +y
rigid_transform look_at(const vec3d& eye, const vec3d& target, const vec3d& up = vec3d::UnitY());

struct pinhole_camera {
  double fx = 1;
  double fy = 1;
  double cx = 0;
  double cy = 0;
  int width = 1;
  int height = 1;
  rigid_transform extrinsic;  // world -> camera

  void validate() const;
  // intrinsics resampled to a width x height image, coordinates multiplied
  // by width/this->width (consistent with feature-map rescaling)
  pinhole_camera rescaled(int new_width, int new_height) const;
};

struct projection {
  double u = 0;
  double v = 0;
  double depth = 0;
  bool in_front = true;  // camera-space depth > 0
};

projection project(const pinhole_camera& camera, const vec3d& point_world);
vec3d unproject(const pinhole_camera& camera, double u, double v, double depth);

// One continuous pixel coordinate per grid point (grid_spec::index order),
// scaled from the full image to a feature_width x feature_height map.
// Points at or behind the camera plane are flagged invalid.
std::vector<ad::sample_coord> project_grid(const pinhole_camera& camera, const grid_spec& grid,
                                           int feature_width, int feature_height);

}  // namespace vw

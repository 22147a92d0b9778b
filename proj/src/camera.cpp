#include "voxelweave/camera.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace vw {

rigid_transform rigid_transform::inverse() const {
  rigid_transform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

rigid_transform rigid_transform::operator*(const rigid_transform& inner) const {
  rigid_transform out;
  out.rotation = rotation * inner.rotation;
  out.translation = rotation * inner.translation + translation;
  return out;
}

mat3d yaw_rotation(double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  mat3d r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

bool is_rotation(const mat3d& r, double tolerance) {
  double ortho = (r.transpose() * r - mat3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tolerance && std::abs(r.determinant() - 1.0) <= 10 * tolerance;
}

rigid_transform look_at(const vec3d& eye, const vec3d& target, const vec3d& up) {
  vec3d forward = (target - eye).normalized();
  vec3d right = forward.cross(up);
  if (right.norm() < 1e-12) throw domain_error("look_at: view direction parallel to up");
  right.normalize();
  vec3d down = forward.cross(right);
  rigid_transform t;
  t.rotation.row(0) = right.transpose();
  t.rotation.row(1) = down.transpose();
  t.rotation.row(2) = forward.transpose();
  t.translation = -(t.rotation * eye);
  return t;
}

void pinhole_camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw config_error("camera: focal lengths must be > 0");
  if (width < 1 || height < 1) throw config_error("camera: image size must be >= 1");
  if (!is_rotation(extrinsic.rotation)) throw config_error("camera: extrinsic is not a rotation");
}

pinhole_camera pinhole_camera::rescaled(int new_width, int new_height) const {
  pinhole_camera c = *this;
  double sx = double(new_width) / double(width);
  double sy = double(new_height) / double(height);
  c.fx *= sx;
  c.cx *= sx;
  c.fy *= sy;
  c.cy *= sy;
  c.width = new_width;
  c.height = new_height;
  return c;
}

projection project(const pinhole_camera& camera, const vec3d& point_world) {
  vec3d p = camera.extrinsic.apply(point_world);
  if (p.z() == 0) throw projection_error("project: point lies on the camera plane");
  projection out;
  out.u = camera.fx * p.x() / p.z() + camera.cx;
  out.v = camera.fy * p.y() / p.z() + camera.cy;
  out.depth = p.z();
  out.in_front = p.z() > 0;
  return out;
}

vec3d unproject(const pinhole_camera& camera, double u, double v, double depth) {
  if (!(depth > 0)) throw domain_error("unproject: depth must be > 0");
  vec3d p((u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth);
  return camera.extrinsic.inverse().apply(p);
}

std::vector<ad::sample_coord> project_grid(const pinhole_camera& camera, const grid_spec& grid,
                                           int feature_width, int feature_height) {
  const double sx = double(feature_width) / double(camera.width);
  const double sy = double(feature_height) / double(camera.height);
  std::vector<ad::sample_coord> coords(size_t(grid.count()));
  for (int64_t k = 0; k < grid.depth; ++k)
    for (int64_t j = 0; j < grid.height; ++j)
      for (int64_t i = 0; i < grid.width; ++i) {
        auto& c = coords[size_t(grid.index(i, j, k))];
        vec3d p = camera.extrinsic.apply(grid.position(i, j, k));
        if (!(p.z() > 0)) {
          c.valid = false;
          continue;
        }
        c.u = (camera.fx * p.x() / p.z() + camera.cx) * sx;
        c.v = (camera.fy * p.y() / p.z() + camera.cy) * sy;
      }
  return coords;
}

}  // namespace vw

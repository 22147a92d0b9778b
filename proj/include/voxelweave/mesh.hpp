#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxelweave/camera.hpp"
#include "voxelweave/common.hpp"

namespace vw {

// Indexed triangle mesh; triangles wind counter-clockwise seen from outside.
struct tri_mesh {
  std::vector<vec3d> vertices;
  std::vector<std::array<int32_t, 3>> triangles;
  int class_id = 1;
  std::string name;

  bool empty() const { return triangles.empty(); }
  void append(const tri_mesh& other);
};

// s * x mapped through t
tri_mesh transformed(const tri_mesh& mesh, const rigid_transform& t, double scale = 1.0);

double triangle_area(const tri_mesh& mesh, size_t triangle);
double surface_area(const tri_mesh& mesh);
double signed_volume(const tri_mesh& mesh);
double min_triangle_area(const tri_mesh& mesh);

struct edge_report {
  int64_t edges = 0;
  int64_t boundary_edges = 0;      // one incident triangle
  int64_t nonmanifold_edges = 0;   // three or more
  int64_t misoriented_edges = 0;   // neighbours traverse the shared edge the same way
};
edge_report analyze_edges(const tri_mesh& mesh);
// every edge shared by exactly two triangles
bool is_watertight(const tri_mesh& mesh);
// watertight and every shared edge traversed in opposite directions
bool is_closed_oriented(const tri_mesh& mesh);
int64_t euler_characteristic(const tri_mesh& mesh);

struct aabb {
  vec3d lo = vec3d::Constant(1e300);
  vec3d hi = vec3d::Constant(-1e300);
  void extend(const vec3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  bool overlaps(const aabb& o) const {
    return (lo.array() <= o.hi.array()).all() && (o.lo.array() <= hi.array()).all();
  }
};
aabb bounds(const tri_mesh& mesh);

// Parity of crossings along a fixed oblique ray; meaningful for closed meshes.
bool contains_point(const tri_mesh& mesh, const vec3d& p);

bool triangles_intersect(const vec3d& a0, const vec3d& a1, const vec3d& a2, const vec3d& b0,
                         const vec3d& b1, const vec3d& b2);
// Surface intersection or containment of one closed mesh in the other.
bool meshes_overlap(const tri_mesh& a, const tri_mesh& b);

// ASCII OBJ with one group per mesh. Vertices are written as (x, -y, -z):
// camera space (y down, z forward) becomes right-handed Y-up.
void write_obj(const std::filesystem::path& path, const std::vector<tri_mesh>& meshes);
// Binary little-endian PLY, float32 positions, same axis convention.
void write_ply(const std::filesystem::path& path, const tri_mesh& mesh);
tri_mesh read_obj(const std::filesystem::path& path);

}  // namespace vw

#include "voxelweave/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <Eigen/Geometry>

namespace vw {

void tri_mesh::append(const tri_mesh& other) {
  const auto base = int32_t(vertices.size());
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (auto t : other.triangles) triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
}

tri_mesh transformed(const tri_mesh& mesh, const rigid_transform& t, double scale) {
  tri_mesh out = mesh;
  for (auto& p : out.vertices) p = t.apply(scale * p);
  return out;
}

double triangle_area(const tri_mesh& mesh, size_t triangle) {
  const auto& t = mesh.triangles[triangle];
  const vec3d& a = mesh.vertices[size_t(t[0])];
  return 0.5 * (mesh.vertices[size_t(t[1])] - a).cross(mesh.vertices[size_t(t[2])] - a).norm();
}

double surface_area(const tri_mesh& mesh) {
  double total = 0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) total += triangle_area(mesh, i);
  return total;
}

double signed_volume(const tri_mesh& mesh) {
  double total = 0;
  for (auto t : mesh.triangles) {
    total += mesh.vertices[size_t(t[0])].dot(
        mesh.vertices[size_t(t[1])].cross(mesh.vertices[size_t(t[2])]));
  }
  return total / 6.0;
}

double min_triangle_area(const tri_mesh& mesh) {
  double least = mesh.triangles.empty() ? 0.0 : 1e300;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) least = std::min(least, triangle_area(mesh, i));
  return least;
}

namespace {

uint64_t edge_key(int32_t a, int32_t b) { return (uint64_t(uint32_t(a)) << 32) | uint32_t(b); }

}  // namespace

edge_report analyze_edges(const tri_mesh& mesh) {
  // per undirected edge: incident count and forward-minus-backward traversals
  struct usage {
    int count = 0;
    int direction = 0;
  };
  std::unordered_map<uint64_t, usage> edges;
  edges.reserve(mesh.triangles.size() * 2);
  for (auto t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      int32_t a = t[size_t(e)], b = t[size_t((e + 1) % 3)];
      auto& u = edges[edge_key(std::min(a, b), std::max(a, b))];
      u.count += 1;
      u.direction += a < b ? 1 : -1;
    }
  }
  edge_report report;
  report.edges = int64_t(edges.size());
  for (const auto& [key, u] : edges) {
    if (u.count == 1) report.boundary_edges++;
    if (u.count > 2) report.nonmanifold_edges++;
    if (u.count == 2 && u.direction != 0) report.misoriented_edges++;
  }
  return report;
}

bool is_watertight(const tri_mesh& mesh) {
  auto r = analyze_edges(mesh);
  return !mesh.empty() && r.boundary_edges == 0 && r.nonmanifold_edges == 0;
}

bool is_closed_oriented(const tri_mesh& mesh) {
  auto r = analyze_edges(mesh);
  return !mesh.empty() && r.boundary_edges == 0 && r.nonmanifold_edges == 0 &&
         r.misoriented_edges == 0;
}

int64_t euler_characteristic(const tri_mesh& mesh) {
  std::vector<char> used(mesh.vertices.size(), 0);
  for (auto t : mesh.triangles)
    for (auto i : t) used[size_t(i)] = 1;
  int64_t v = std::count(used.begin(), used.end(), 1);
  return v - analyze_edges(mesh).edges + int64_t(mesh.triangles.size());
}

aabb bounds(const tri_mesh& mesh) {
  aabb box;
  for (const auto& p : mesh.vertices) box.extend(p);
  return box;
}

bool contains_point(const tri_mesh& mesh, const vec3d& p) {
  // oblique direction, unlikely to graze edges of axis-aligned geometry
  const vec3d dir = vec3d(0.5773502691896258, 0.5345224838248488, 0.6172133998483676).normalized();
  int crossings = 0;
  for (auto t : mesh.triangles) {
    const vec3d& a = mesh.vertices[size_t(t[0])];
    const vec3d e1 = mesh.vertices[size_t(t[1])] - a;
    const vec3d e2 = mesh.vertices[size_t(t[2])] - a;
    const vec3d h = dir.cross(e2);
    const double det = e1.dot(h);
    if (std::abs(det) < 1e-300) continue;
    const double inv = 1.0 / det;
    const vec3d s = p - a;
    const double u = inv * s.dot(h);
    if (u < 0 || u > 1) continue;
    const vec3d q = s.cross(e1);
    const double w = inv * dir.dot(q);
    if (w < 0 || u + w > 1) continue;
    if (inv * e2.dot(q) > 0) crossings++;
  }
  return crossings % 2 == 1;
}

namespace {

double orient2(const vec2d& a, const vec2d& b, const vec2d& c) {
  return (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
}

bool segments_cross_2d(const vec2d& p0, const vec2d& p1, const vec2d& q0, const vec2d& q1) {
  double d1 = orient2(q0, q1, p0), d2 = orient2(q0, q1, p1);
  double d3 = orient2(p0, p1, q0), d4 = orient2(p0, p1, q1);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

bool point_in_triangle_2d(const vec2d& p, const vec2d& a, const vec2d& b, const vec2d& c) {
  double d1 = orient2(a, b, p), d2 = orient2(b, c, p), d3 = orient2(c, a, p);
  return (d1 > 0 && d2 > 0 && d3 > 0) || (d1 < 0 && d2 < 0 && d3 < 0);
}

// Open-interior overlap of two coplanar triangles.
bool coplanar_overlap(const std::array<vec3d, 3>& a, const std::array<vec3d, 3>& b,
                      const vec3d& normal) {
  int drop = 0;
  normal.cwiseAbs().maxCoeff(&drop);
  auto flat = [drop](const vec3d& p) {
    return drop == 0 ? vec2d(p.y(), p.z()) : drop == 1 ? vec2d(p.x(), p.z()) : vec2d(p.x(), p.y());
  };
  std::array<vec2d, 3> pa, pb;
  for (int i = 0; i < 3; ++i) {
    pa[size_t(i)] = flat(a[size_t(i)]);
    pb[size_t(i)] = flat(b[size_t(i)]);
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (segments_cross_2d(pa[size_t(i)], pa[size_t((i + 1) % 3)], pb[size_t(j)],
                            pb[size_t((j + 1) % 3)]))
        return true;
  vec2d ca = (pa[0] + pa[1] + pa[2]) / 3.0, cb = (pb[0] + pb[1] + pb[2]) / 3.0;
  return point_in_triangle_2d(ca, pb[0], pb[1], pb[2]) ||
         point_in_triangle_2d(cb, pa[0], pa[1], pa[2]);
}

// Segment pq against the triangle's closed surface, strictly crossing its plane.
bool segment_hits_triangle(const vec3d& p, const vec3d& q, const std::array<vec3d, 3>& t,
                           const vec3d& normal) {
  double dp = normal.dot(p - t[0]), dq = normal.dot(q - t[0]);
  if ((dp > 0 && dq > 0) || (dp < 0 && dq < 0) || dp == dq) return false;
  vec3d x = p + (q - p) * (dp / (dp - dq));
  for (int i = 0; i < 3; ++i) {
    vec3d edge = t[size_t((i + 1) % 3)] - t[size_t(i)];
    if (normal.dot(edge.cross(x - t[size_t(i)])) < 0) return false;
  }
  return true;
}

}  // namespace

bool triangles_intersect(const vec3d& a0, const vec3d& a1, const vec3d& a2, const vec3d& b0,
                         const vec3d& b1, const vec3d& b2) {
  std::array<vec3d, 3> a{a0, a1, a2}, b{b0, b1, b2};
  vec3d na = (a1 - a0).cross(a2 - a0), nb = (b1 - b0).cross(b2 - b0);
  if (na.norm() == 0 || nb.norm() == 0) return false;
  const vec3d unit = na.normalized();
  bool coplanar = true;
  for (const auto& p : b) coplanar = coplanar && std::abs(unit.dot(p - a0)) <= 1e-12;
  if (coplanar) return coplanar_overlap(a, b, na);
  for (int i = 0; i < 3; ++i) {
    if (segment_hits_triangle(a[size_t(i)], a[size_t((i + 1) % 3)], b, nb)) return true;
    if (segment_hits_triangle(b[size_t(i)], b[size_t((i + 1) % 3)], a, na)) return true;
  }
  return false;
}

bool meshes_overlap(const tri_mesh& a, const tri_mesh& b) {
  if (a.empty() || b.empty()) return false;
  if (!bounds(a).overlaps(bounds(b))) return false;
  auto tri_box = [](const tri_mesh& m, size_t i) {
    aabb box;
    for (auto v : m.triangles[i]) box.extend(m.vertices[size_t(v)]);
    return box;
  };
  std::vector<aabb> boxes_b(b.triangles.size());
  for (size_t j = 0; j < b.triangles.size(); ++j) boxes_b[j] = tri_box(b, j);
  for (size_t i = 0; i < a.triangles.size(); ++i) {
    aabb box_a = tri_box(a, i);
    const auto& ta = a.triangles[i];
    for (size_t j = 0; j < b.triangles.size(); ++j) {
      if (!box_a.overlaps(boxes_b[j])) continue;
      const auto& tb = b.triangles[j];
      if (triangles_intersect(a.vertices[size_t(ta[0])], a.vertices[size_t(ta[1])],
                              a.vertices[size_t(ta[2])], b.vertices[size_t(tb[0])],
                              b.vertices[size_t(tb[1])], b.vertices[size_t(tb[2])]))
        return true;
    }
  }
  return contains_point(b, a.vertices.front()) || contains_point(a, b.vertices.front());
}

void write_obj(const std::filesystem::path& path, const std::vector<tri_mesh>& meshes) {
  std::ofstream out(path);
  if (!out) throw io_error("write_obj: cannot open " + path.string());
  out.precision(9);
  out << "# voxelweave\n";
  int64_t base = 1;
  for (const auto& m : meshes) {
    out << "g " << (m.name.empty() ? "class_" + std::to_string(m.class_id) : m.name) << "\n";
    for (const auto& p : m.vertices) out << "v " << p.x() << ' ' << -p.y() << ' ' << -p.z() << "\n";
    for (auto t : m.triangles)
      out << "f " << t[0] + base << ' ' << t[1] + base << ' ' << t[2] + base << "\n";
    base += int64_t(m.vertices.size());
  }
  if (!out) throw io_error("write_obj: write failed for " + path.string());
}

void write_ply(const std::filesystem::path& path, const tri_mesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("write_ply: cannot open " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "comment class " << mesh.class_id << "\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& p : mesh.vertices) {
    float xyz[3] = {float(p.x()), float(-p.y()), float(-p.z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  for (auto t : mesh.triangles) {
    uint8_t n = 3;
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(t.data()), 3 * sizeof(int32_t));
  }
  if (!out) throw io_error("write_ply: write failed for " + path.string());
}

tri_mesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("read_obj: cannot open " + path.string());
  tri_mesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      mesh.vertices.emplace_back(x, -y, -z);
    } else if (tag == "f") {
      std::vector<int32_t> idx;
      std::string token;
      while (ls >> token) idx.push_back(int32_t(std::stol(token.substr(0, token.find('/')))) - 1);
      for (size_t i = 1; i + 1 < idx.size(); ++i) mesh.triangles.push_back({idx[0], idx[i], idx[i + 1]});
    } else if (tag == "g" || tag == "o") {
      ls >> mesh.name;
    }
  }
  return mesh;
}

}  // namespace vw

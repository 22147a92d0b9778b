#include "voxelweave/mesher.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

namespace vw {

namespace {

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
// Faces list their corners counter-clockwise as seen from outside the cell.
constexpr std::array<std::array<int, 4>, 6> face_corners = {{
    {0, 4, 6, 2},  // -x
    {1, 3, 7, 5},  // +x
    {0, 1, 5, 4},  // -y
    {2, 6, 7, 3},  // +y
    {0, 2, 3, 1},  // -z
    {4, 5, 7, 6},  // +z
}};

// Cell edges as corner pairs, lower corner first.
constexpr std::array<std::array<int, 2>, 12> edge_corners = {{
    {0, 1}, {2, 3}, {4, 5}, {6, 7},  // x
    {0, 2}, {1, 3}, {4, 6}, {5, 7},  // y
    {0, 4}, {1, 5}, {2, 6}, {3, 7},  // z
}};

int edge_between(int a, int b) {
  if (a > b) std::swap(a, b);
  for (int e = 0; e < 12; ++e)
    if (edge_corners[size_t(e)][0] == a && edge_corners[size_t(e)][1] == b) return e;
  return -1;
}

struct edge_table {
  std::array<std::array<int, 8>, 8> id{};
  edge_table() {
    for (auto& row : id) row.fill(-1);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b)
        if (std::popcount(unsigned(a ^ b)) == 1) id[size_t(a)][size_t(b)] = edge_between(a, b);
  }
};
const edge_table& edges_by_corner() {
  static const edge_table table;
  return table;
}

struct union_find {
  std::vector<int> parent;
  explicit union_find(int n) : parent(size_t(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[size_t(x)] != x) x = parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[size_t(std::max(a, b))] = std::min(a, b);
  }
};

}  // namespace

namespace detail {

std::array<int, 8> corner_components(const std::array<double, 8>& g, int sign) {
  // slice square corners, cyclic: (0,0) (1,0) (1,1) (0,1)
  constexpr std::array<int, 4> column = {0, 1, 3, 2};
  std::array<double, 4> alpha, beta;
  for (int s = 0; s < 4; ++s) {
    alpha[size_t(s)] = g[size_t(column[size_t(s)])];
    beta[size_t(s)] = g[size_t(column[size_t(s)] + 4)] - alpha[size_t(s)];
  }
  std::vector<double> cuts = {0.0, 1.0};
  for (int s = 0; s < 4; ++s) {
    double a = alpha[size_t(s)], b = alpha[size_t(s)] + beta[size_t(s)];
    if ((a > 0) != (b > 0)) cuts.push_back(a / (a - b));
  }
  // asymptotic decider q(z) = v0 v2 - v1 v3
  const double q0 = alpha[0] * alpha[2] - alpha[1] * alpha[3];
  const double q1 = alpha[0] * beta[2] + beta[0] * alpha[2] - alpha[1] * beta[3] - beta[1] * alpha[3];
  const double q2 = beta[0] * beta[2] - beta[1] * beta[3];
  if (q2 != 0) {
    double disc = q1 * q1 - 4 * q2 * q0;
    if (disc >= 0) {
      double root = std::sqrt(disc);
      double t = q1 >= 0 ? -0.5 * (q1 + root) : -0.5 * (q1 - root);
      if (t != 0) cuts.push_back(q0 / t);
      cuts.push_back(t / q2);
    }
  } else if (q1 != 0) {
    cuts.push_back(-q0 / q1);
  }
  std::erase_if(cuts, [](double z) { return !(z >= 0 && z <= 1); });
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const int slices = int(cuts.size()) - 1;
  union_find sets(slices * 4);
  std::vector<std::array<bool, 4>> member(static_cast<size_t>(slices));
  for (int t = 0; t < slices; ++t) {
    const double z = 0.5 * (cuts[size_t(t)] + cuts[size_t(t + 1)]);
    std::array<double, 4> v;
    for (int s = 0; s < 4; ++s) v[size_t(s)] = alpha[size_t(s)] + beta[size_t(s)] * z;
    const double q = v[0] * v[2] - v[1] * v[3];
    auto& in = member[size_t(t)];
    for (int s = 0; s < 4; ++s) in[size_t(s)] = sign > 0 ? v[size_t(s)] > 0 : !(v[size_t(s)] > 0);
    for (int s = 0; s < 4; ++s)
      if (in[size_t(s)] && in[size_t((s + 1) % 4)]) sets.unite(t * 4 + s, t * 4 + (s + 1) % 4);
    const bool checker = in[0] == in[2] && in[1] == in[3] && in[0] != in[1];
    if (checker) {
      // the positive diagonal joins when its product dominates; the other
      // diagonal joins when it strictly does not
      const bool positive_join = v[0] > 0 ? q > 0 : q < 0;
      const bool join = sign > 0 ? positive_join : (!positive_join && q != 0);
      const int first = in[0] ? 0 : 1;
      if (join) sets.unite(t * 4 + first, t * 4 + first + 2);
    }
    if (t > 0)
      for (int s = 0; s < 4; ++s)
        if (in[size_t(s)] && member[size_t(t - 1)][size_t(s)]) sets.unite((t - 1) * 4 + s, t * 4 + s);
  }
  std::array<int, 8> label;
  for (int s = 0; s < 4; ++s) {
    label[size_t(column[size_t(s)])] = sets.find(s);
    label[size_t(column[size_t(s)] + 4)] = sets.find((slices - 1) * 4 + s);
  }
  return label;
}

}  // namespace detail

namespace {

using detail::corner_components;

struct mc_builder {
  const std::vector<double>& field;
  const grid_spec& spec;
  double iso;
  tri_mesh mesh;
  std::unordered_map<int64_t, int32_t> edge_vertex;

  int32_t vertex_on(int64_t p0, int axis, int64_t p1) {
    const int64_t key = p0 * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double f0 = field[size_t(p0)], f1 = field[size_t(p1)];
    double t = (iso - f0) / (f1 - f0);
    t = std::clamp(t, 1e-3, 1.0 - 1e-3);
    const vec3d a = spec.position(p0), b = spec.position(p1);
    mesh.vertices.push_back(a + t * (b - a));
    const auto id = int32_t(mesh.vertices.size() - 1);
    edge_vertex.emplace(key, id);
    return id;
  }

  int32_t add_point(const vec3d& p) {
    mesh.vertices.push_back(p);
    return int32_t(mesh.vertices.size() - 1);
  }

  void triangle(int32_t a, int32_t b, int32_t c) { mesh.triangles.push_back({a, b, c}); }

  // Disk spanning one boundary loop.
  void cap(const std::vector<int32_t>& loop) {
    const size_t n = loop.size();
    if (n == 3) {
      triangle(loop[0], loop[2], loop[1]);
    } else if (n == 4) {
      const auto& v = mesh.vertices;
      double d02 = (v[size_t(loop[0])] - v[size_t(loop[2])]).squaredNorm();
      double d13 = (v[size_t(loop[1])] - v[size_t(loop[3])]).squaredNorm();
      if (d02 <= d13) {
        triangle(loop[0], loop[2], loop[1]);
        triangle(loop[0], loop[3], loop[2]);
      } else {
        triangle(loop[1], loop[3], loop[2]);
        triangle(loop[1], loop[0], loop[3]);
      }
    } else {
      fan(loop, add_point(centroid({loop})));
    }
  }

  void fan(const std::vector<int32_t>& loop, int32_t center) {
    for (size_t i = 0; i < loop.size(); ++i) triangle(center, loop[(i + 1) % loop.size()], loop[i]);
  }

  vec3d centroid(const std::vector<std::vector<int32_t>>& loops) const {
    vec3d sum = vec3d::Zero();
    size_t count = 0;
    for (const auto& loop : loops)
      for (auto id : loop) {
        sum += mesh.vertices[size_t(id)];
        ++count;
      }
    return sum / double(count);
  }

  // Tube joining two loops that bound the same surface patch.
  void band(std::vector<int32_t> a, const std::vector<int32_t>& r) {
    std::reverse(a.begin(), a.end());
    const auto& v = mesh.vertices;
    auto dist = [&](int32_t x, int32_t y) { return (v[size_t(x)] - v[size_t(y)]).squaredNorm(); };
    const size_t m = a.size(), n = r.size();
    size_t start = 0;
    for (size_t j = 1; j < n; ++j)
      if (dist(a[0], r[j]) < dist(a[0], r[start])) start = j;
    size_t i = 0, j = 0;
    while (i < m || j < n) {
      const int32_t ai = a[i % m], ai1 = a[(i + 1) % m];
      const int32_t rj = r[(start + j) % n], rj1 = r[(start + j + 1) % n];
      const bool advance_a = j == n || (i < m && dist(ai1, rj) <= dist(ai, rj1));
      if (advance_a) {
        triangle(ai, ai1, rj);
        ++i;
      } else {
        triangle(rj1, rj, ai);
        ++j;
      }
    }
  }

  void process_cell(int64_t i, int64_t j, int64_t k) {
    std::array<int64_t, 8> point;
    std::array<double, 8> g;
    double scale = 0;
    int positives = 0;
    for (int c = 0; c < 8; ++c) {
      point[size_t(c)] = spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
      g[size_t(c)] = field[size_t(point[size_t(c)])] - iso;
      scale = std::max(scale, std::abs(g[size_t(c)]));
      positives += g[size_t(c)] > 0;
    }
    if (positives == 0 || positives == 8) return;
    // values at iso count as outside; nudge them strictly negative
    for (auto& x : g)
      if (!(x > 0)) x = std::min(x, -1e-9 * scale);

    const auto& by_corner = edges_by_corner().id;
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& f : face_corners) {
      std::array<bool, 4> in;
      for (int s = 0; s < 4; ++s) in[size_t(s)] = g[size_t(f[size_t(s)])] > 0;
      auto face_edge = [&](int s) {
        return by_corner[size_t(f[size_t(s % 4)])][size_t(f[size_t((s + 1) % 4)])];
      };
      const bool checker = in[0] == in[2] && in[1] == in[3] && in[0] != in[1];
      bool joined = false;
      if (checker) {
        const double d = g[size_t(f[0])] * g[size_t(f[2])] - g[size_t(f[1])] * g[size_t(f[3])];
        joined = in[0] ? d > 0 : d < 0;
      }
      if (checker && joined) {
        for (int s = 0; s < 4; ++s)
          if (!in[size_t(s)]) next[size_t(face_edge(s + 3))] = face_edge(s);
      } else {
        for (int s = 0; s < 4; ++s) {
          // exit from the positive run on edge s, re-enter on the edge before it
          if (in[size_t(s)] && !in[size_t((s + 1) % 4)]) {
            int back = s;
            while (in[size_t((back + 3) % 4)]) back = (back + 3) % 4;
            next[size_t(face_edge(s))] = face_edge(back + 3);
          }
        }
      }
    }

    const auto pos_label = corner_components(g, +1);
    const auto neg_label = corner_components(g, -1);
    std::map<std::pair<int, int>, std::vector<std::vector<int32_t>>> groups;
    std::array<bool, 12> seen{};
    for (int e = 0; e < 12; ++e) {
      if (next[size_t(e)] < 0 || seen[size_t(e)]) continue;
      std::vector<int32_t> loop;
      int c0 = edge_corners[size_t(e)][0], c1 = edge_corners[size_t(e)][1];
      if (!(g[size_t(c0)] > 0)) std::swap(c0, c1);
      const std::pair<int, int> key{pos_label[size_t(c0)], neg_label[size_t(c1)]};
      for (int cur = e; !seen[size_t(cur)]; cur = next[size_t(cur)]) {
        if (cur < 0) throw contract_error("marching_cubes: open face segment chain");
        seen[size_t(cur)] = true;
        const auto& ec = edge_corners[size_t(cur)];
        const int axis = cur / 4;
        loop.push_back(vertex_on(point[size_t(ec[0])], axis, point[size_t(ec[1])]));
      }
      groups[key].push_back(std::move(loop));
    }
    for (auto& [key, loops] : groups) {
      if (loops.size() == 1) {
        cap(loops[0]);
      } else if (loops.size() == 2) {
        band(loops[0], loops[1]);
      } else {
        const int32_t center = add_point(centroid(loops));
        for (const auto& loop : loops) fan(loop, center);
      }
    }
  }
};

}  // namespace

tri_mesh marching_cubes(const std::vector<double>& field, const grid_spec& spec, double iso) {
  spec.validate();
  if (spec.width < 2 || spec.height < 2 || spec.depth < 2)
    throw dimension_error("marching_cubes: need at least 2 points per axis");
  if (int64_t(field.size()) != spec.count())
    throw dimension_error("marching_cubes: field size does not match grid");
  for (double x : field)
    if (!std::isfinite(x)) throw numeric_error("marching_cubes: non-finite field value");
  mc_builder builder{field, spec, iso, {}, {}};
  for (int64_t k = 0; k + 1 < spec.depth; ++k)
    for (int64_t j = 0; j + 1 < spec.height; ++j)
      for (int64_t i = 0; i + 1 < spec.width; ++i) builder.process_cell(i, j, k);
  return std::move(builder.mesh);
}

std::vector<tri_mesh> extract_scene_meshes(const volume_grid& probs, double iso) {
  if (probs.channels < 2) throw dimension_error("extract_scene_meshes: need a void and an object class");
  const int64_t count = probs.spec.count();
  std::vector<tri_mesh> meshes;
  for (int64_t c = 1; c < probs.channels; ++c) {
    std::vector<double> slice(probs.values.begin() + c * count, probs.values.begin() + (c + 1) * count);
    tri_mesh m = marching_cubes(slice, probs.spec, iso);
    if (m.empty()) continue;
    m.class_id = int(c);
    m.name = "class_" + std::to_string(c);
    meshes.push_back(std::move(m));
  }
  return meshes;
}

}  // namespace vw

#include <cmath>
#include <numbers>

#include "voxelweave/scene.hpp"

namespace vw {

namespace {

constexpr double pi = std::numbers::pi;

struct family_entry {
  shape_family family;
  const char* name;
};
constexpr family_entry family_names[] = {
    {shape_family::box, "box"},         {shape_family::sphere, "sphere"},
    {shape_family::cylinder, "cylinder"}, {shape_family::torus, "torus"},
    {shape_family::l_bracket, "l_bracket"}, {shape_family::table, "table"},
    {shape_family::chair, "chair"},
};

double param(const shape& s, const char* name) {
  auto it = s.params.find(name);
  if (it == s.params.end())
    throw config_error("shape " + family_name(s.family) + ": missing parameter '" + name + "'");
  if (!(it->second > 0)) throw config_error("shape parameter '" + std::string(name) + "' must be > 0");
  return it->second;
}

// axis-aligned box [lo, hi]
tri_mesh make_box(const vec3d& lo, const vec3d& hi) {
  tri_mesh m;
  for (int c = 0; c < 8; ++c)
    m.vertices.emplace_back((c & 1) ? hi.x() : lo.x(), (c & 2) ? hi.y() : lo.y(),
                            (c & 4) ? hi.z() : lo.z());
  // quads counter-clockwise from outside
  const int quads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (auto& q : quads) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

tri_mesh make_sphere(double radius, int slices, int stacks) {
  tri_mesh m;
  m.vertices.emplace_back(0, 2 * radius, 0);  // top pole
  for (int s = 1; s < stacks; ++s) {
    double theta = pi * s / stacks;
    for (int a = 0; a < slices; ++a) {
      double phi = 2 * pi * a / slices;
      m.vertices.emplace_back(radius * std::sin(theta) * std::cos(phi),
                              radius + radius * std::cos(theta),
                              radius * std::sin(theta) * std::sin(phi));
    }
  }
  m.vertices.emplace_back(0, 0, 0);  // bottom pole
  const int bottom = int(m.vertices.size()) - 1;
  auto ring = [&](int s, int a) { return 1 + (s - 1) * slices + (a % slices); };
  for (int a = 0; a < slices; ++a) m.triangles.push_back({0, ring(1, a + 1), ring(1, a)});
  for (int s = 1; s + 1 < stacks; ++s)
    for (int a = 0; a < slices; ++a) {
      m.triangles.push_back({ring(s, a), ring(s, a + 1), ring(s + 1, a + 1)});
      m.triangles.push_back({ring(s, a), ring(s + 1, a + 1), ring(s + 1, a)});
    }
  for (int a = 0; a < slices; ++a)
    m.triangles.push_back({bottom, ring(stacks - 1, a), ring(stacks - 1, a + 1)});
  return m;
}

tri_mesh make_cylinder(double radius, double height, int slices) {
  tri_mesh m;
  for (int level = 0; level < 2; ++level)
    for (int a = 0; a < slices; ++a) {
      double phi = 2 * pi * a / slices;
      m.vertices.emplace_back(radius * std::cos(phi), level * height, radius * std::sin(phi));
    }
  const int bottom = int(m.vertices.size());
  m.vertices.emplace_back(0, 0, 0);
  m.vertices.emplace_back(0, height, 0);
  const int top = bottom + 1;
  for (int a = 0; a < slices; ++a) {
    int b0 = a, b1 = (a + 1) % slices, t0 = slices + a, t1 = slices + (a + 1) % slices;
    m.triangles.push_back({b0, t1, b1});
    m.triangles.push_back({b0, t0, t1});
    m.triangles.push_back({bottom, b0, b1});
    m.triangles.push_back({top, t1, t0});
  }
  return m;
}

tri_mesh make_torus(double major, double minor, int rings, int sides) {
  tri_mesh m;
  for (int a = 0; a < rings; ++a) {
    double phi = 2 * pi * a / rings;
    for (int b = 0; b < sides; ++b) {
      double theta = 2 * pi * b / sides;
      double r = major + minor * std::cos(theta);
      m.vertices.emplace_back(r * std::cos(phi), minor + minor * std::sin(theta), r * std::sin(phi));
    }
  }
  auto at = [&](int a, int b) { return (a % rings) * sides + (b % sides); };
  for (int a = 0; a < rings; ++a)
    for (int b = 0; b < sides; ++b) {
      m.triangles.push_back({at(a, b), at(a, b + 1), at(a + 1, b + 1)});
      m.triangles.push_back({at(a, b), at(a + 1, b + 1), at(a + 1, b)});
    }
  return m;
}

// L-shaped profile in the xy plane extruded along z, centred on the y axis.
tri_mesh make_l_bracket(double length, double height, double thickness, double depth) {
  const double x0 = -0.5 * length;
  const std::vector<vec2d> outline = {{x0, 0},
                                      {x0 + length, 0},
                                      {x0 + length, thickness},
                                      {x0 + thickness, thickness},
                                      {x0 + thickness, height},
                                      {x0, height}};
  const int n = int(outline.size());
  tri_mesh m;
  for (int side = 0; side < 2; ++side)
    for (const auto& p : outline) m.vertices.emplace_back(p.x(), p.y(), (side - 0.5) * depth);
  // fan from the reflex corner (index 3) covers the profile
  const int reflex = 3;
  for (int i = 0; i < n; ++i) {
    int a = (reflex + 1 + i) % n, b = (reflex + 2 + i) % n;
    if (a == reflex || b == reflex) continue;
    m.triangles.push_back({reflex, b, a});          // back cap, facing -z
    m.triangles.push_back({n + reflex, n + a, n + b});  // front cap, facing +z
  }
  for (int i = 0; i < n; ++i) {
    int j = (i + 1) % n;
    m.triangles.push_back({i, j, n + j});
    m.triangles.push_back({i, n + j, n + i});
  }
  return m;
}

std::vector<tri_mesh> make_table(double width, double depth, double height, double top,
                                 double leg) {
  std::vector<tri_mesh> parts;
  const double hx = 0.5 * width, hz = 0.5 * depth;
  parts.push_back(make_box({-hx, height - top, -hz}, {hx, height, hz}));
  for (int c = 0; c < 4; ++c) {
    double x = (c & 1) ? hx - leg : -hx, z = (c & 2) ? hz - leg : -hz;
    parts.push_back(make_box({x, 0, z}, {x + leg, height - top, z + leg}));
  }
  return parts;
}

std::vector<tri_mesh> make_chair(double width, double seat_height, double back_height,
                                 double thickness) {
  auto parts = make_table(width, width, seat_height, thickness, thickness);
  const double h = 0.5 * width;
  parts.push_back(make_box({-h, seat_height, -h}, {h, seat_height + back_height, -h + thickness}));
  return parts;
}

}  // namespace

std::string family_name(shape_family family) {
  for (const auto& e : family_names)
    if (e.family == family) return e.name;
  return "?";
}

shape_family parse_family(const std::string& name) {
  for (const auto& e : family_names)
    if (name == e.name) return e.family;
  throw config_error("unknown shape family '" + name + "'");
}

const std::vector<shape_family>& all_families() {
  static const std::vector<shape_family> families = {
      shape_family::box,       shape_family::sphere, shape_family::cylinder, shape_family::torus,
      shape_family::l_bracket, shape_family::table,  shape_family::chair};
  return families;
}

std::vector<tri_mesh> build_shape_parts(const shape& s) {
  switch (s.family) {
    case shape_family::box: {
      double w = param(s, "width"), h = param(s, "height"), d = param(s, "depth");
      return {make_box({-0.5 * w, 0, -0.5 * d}, {0.5 * w, h, 0.5 * d})};
    }
    case shape_family::sphere:
      return {make_sphere(param(s, "radius"), 64, 32)};
    case shape_family::cylinder:
      return {make_cylinder(param(s, "radius"), param(s, "height"), 64)};
    case shape_family::torus: {
      double major = param(s, "major"), minor = param(s, "minor");
      if (minor >= major) throw config_error("torus: minor radius must be below major radius");
      return {make_torus(major, minor, 48, 16)};
    }
    case shape_family::l_bracket: {
      double l = param(s, "length"), h = param(s, "height"), t = param(s, "thickness");
      if (t >= l || t >= h) throw config_error("l_bracket: thickness exceeds the arms");
      return {make_l_bracket(l, h, t, param(s, "depth"))};
    }
    case shape_family::table: {
      double w = param(s, "width"), d = param(s, "depth"), h = param(s, "height");
      double top = param(s, "top"), leg = param(s, "leg");
      if (top >= h || 2 * leg >= std::min(w, d)) throw config_error("table: inconsistent sizes");
      return make_table(w, d, h, top, leg);
    }
    case shape_family::chair: {
      double w = param(s, "width"), sh = param(s, "seat_height"), bh = param(s, "back_height");
      double t = param(s, "thickness");
      if (t >= sh || 2 * t >= w) throw config_error("chair: inconsistent sizes");
      return make_chair(w, sh, bh, t);
    }
  }
  throw config_error("build_shape_parts: unknown family");
}

shape sample_shape(shape_family family, rng& gen) {
  shape s;
  s.family = family;
  auto& p = s.params;
  switch (family) {
    case shape_family::box:
      p["width"] = gen.uniform(0.25, 0.5);
      p["height"] = gen.uniform(0.2, 0.45);
      p["depth"] = gen.uniform(0.25, 0.5);
      break;
    case shape_family::sphere:
      p["radius"] = gen.uniform(0.15, 0.3);
      break;
    case shape_family::cylinder:
      p["radius"] = gen.uniform(0.12, 0.24);
      p["height"] = gen.uniform(0.2, 0.45);
      break;
    case shape_family::torus:
      p["major"] = gen.uniform(0.16, 0.26);
      p["minor"] = gen.uniform(0.05, 0.09);
      break;
    case shape_family::l_bracket:
      p["length"] = gen.uniform(0.3, 0.5);
      p["height"] = gen.uniform(0.25, 0.45);
      p["thickness"] = gen.uniform(0.08, 0.14);
      p["depth"] = gen.uniform(0.15, 0.35);
      break;
    case shape_family::table:
      p["width"] = gen.uniform(0.35, 0.55);
      p["depth"] = gen.uniform(0.25, 0.45);
      p["height"] = gen.uniform(0.25, 0.4);
      p["top"] = 0.1;
      p["leg"] = 0.1;
      break;
    case shape_family::chair:
      p["width"] = gen.uniform(0.25, 0.38);
      p["seat_height"] = gen.uniform(0.15, 0.25);
      p["back_height"] = gen.uniform(0.12, 0.22);
      p["thickness"] = 0.1;
      break;
  }
  return s;
}

void scene_object::rebuild() {
  parts = build_shape_parts(geometry);
  for (auto& m : parts) {
    m = transformed(m, pose, scale);
    m.class_id = class_id;
    m.name = family_name(geometry.family);
  }
}

tri_mesh scene_object::world_mesh() const {
  tri_mesh out;
  out.class_id = class_id;
  out.name = family_name(geometry.family);
  for (const auto& m : parts) out.append(m);
  return out;
}

bool scene_object::contains(const vec3d& world_point) const {
  for (const auto& m : parts)
    if (contains_point(m, world_point)) return true;
  return false;
}

}  // namespace vw

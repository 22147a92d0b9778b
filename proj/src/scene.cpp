#include "voxelweave/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

namespace vw {

using nlohmann::json;

namespace {

constexpr double deg = std::numbers::pi / 180.0;

double horizontal_radius(const scene_object& o) {
  const vec3d c = o.pose.translation;
  double r = 0;
  for (const auto& m : o.parts)
    for (const auto& p : m.vertices) r = std::max(r, std::hypot(p.x() - c.x(), p.z() - c.z()));
  return r;
}

bool inside_ball(const scene_object& o, double radius) {
  for (const auto& m : o.parts)
    for (const auto& p : m.vertices)
      if (p.norm() > radius) return false;
  return true;
}

// parts are closed individually, so containment is tested part by part
bool objects_overlap(const scene_object& a, const scene_object& b) {
  for (const auto& pa : a.parts)
    for (const auto& pb : b.parts)
      if (meshes_overlap(pa, pb)) return true;
  return false;
}

}  // namespace

void scene_forge_config::validate() const {
  if (num_classes < 2) throw config_error("scene: num_classes must be >= 2");
  for (const auto& [c, families] : class_families) {
    if (c < 1 || c >= num_classes) throw config_error("scene: class id outside [1, C-1]");
    if (families.empty()) throw config_error("scene: class without shape families");
  }
  if (image_width < 1 || image_height < 1) throw config_error("scene: image size must be >= 1");
  if (!(focal > 0) || !(camera_distance > scene_radius) || !(scene_radius > 0))
    throw config_error("scene: invalid camera or volume settings");
  if (max_attempts < 1) throw config_error("scene: max_attempts must be >= 1");
}

grid_spec scene_forge_config::reconstruction_grid(int64_t resolution) const {
  if (resolution < 1) throw config_error("scene: resolution must be >= 1");
  grid_spec g;
  g.width = g.height = g.depth = resolution;
  g.spacing = 2 * scene_radius / double(resolution);
  g.origin = vec3d(-scene_radius, -scene_radius, camera_distance - scene_radius);
  return g;
}

scene generate_scene(const std::vector<int>& classes, const scene_forge_config& config, rng& gen) {
  config.validate();
  scene s;
  s.seed = gen.next_u64();
  s.ground_height = config.ground_height;
  const bool single = classes.size() == 1;
  std::vector<shape> shapes;
  for (int cls : classes) {
    auto it = config.class_families.find(cls);
    if (it == config.class_families.end())
      throw config_error("generate_scene: class " + std::to_string(cls) + " has no families");
    const auto& families = it->second;
    shapes.push_back(sample_shape(families[gen.index(families.size())], gen));
  }
  // an object that keeps failing sends every pose back to the start
  const int per_object = std::max(1, config.max_attempts / 10);
  int attempts = 0, tries = 0;
  while (s.objects.size() < classes.size()) {
    if (++attempts > config.max_attempts)
      throw placement_error("generate_scene: no valid placement after " +
                            std::to_string(config.max_attempts) + " attempts");
    if (++tries > per_object) {
      s.objects.clear();
      tries = 1;
    }
    const size_t k = s.objects.size();
    scene_object o;
    o.geometry = shapes[k];
    o.class_id = classes[k];
    o.scale = single ? gen.uniform(config.single_scale_min, config.single_scale_max)
                     : gen.uniform(config.multi_scale_min, config.multi_scale_max);
    o.pose.rotation = yaw_rotation(gen.uniform(0, 2 * std::numbers::pi));
    double x = 0, z = 0;
    if (!single) {
      // uniform in the disc of radius scene_radius
      double r = config.scene_radius * std::sqrt(gen.uniform()), phi = gen.uniform(0, 2 * std::numbers::pi);
      x = r * std::cos(phi);
      z = r * std::sin(phi);
    }
    o.pose.translation = vec3d(x, config.ground_height, z);
    o.rebuild();
    if (!inside_ball(o, config.scene_radius)) continue;
    bool clear = true;
    const double ro = horizontal_radius(o);
    for (const auto& other : s.objects) {
      const vec3d d = o.pose.translation - other.pose.translation;
      // disjoint footprints cannot overlap; otherwise the exact test decides
      if (std::hypot(d.x(), d.z()) <= ro + horizontal_radius(other) && objects_overlap(o, other)) {
        clear = false;
        break;
      }
    }
    if (!clear) continue;
    s.objects.push_back(std::move(o));
    tries = 0;
  }

  const double yaw = gen.uniform(config.yaw_min_deg, config.yaw_max_deg) * deg;
  const double pitch = gen.uniform(config.pitch_min_deg, config.pitch_max_deg) * deg;
  const vec3d eye = config.camera_distance * vec3d(std::cos(pitch) * std::sin(yaw), std::sin(pitch),
                                                   std::cos(pitch) * std::cos(yaw));
  s.camera.width = config.image_width;
  s.camera.height = config.image_height;
  s.camera.fx = s.camera.fy = config.focal;
  s.camera.cx = 0.5 * (config.image_width - 1);
  s.camera.cy = 0.5 * (config.image_height - 1);
  s.camera.extrinsic = look_at(eye, vec3d::Zero());
  return s;
}

scene generate_scene(int count, const std::vector<int>& class_pool,
                     const scene_forge_config& config, rng& gen) {
  if (class_pool.empty()) throw config_error("generate_scene: empty class pool");
  if (count < 1) throw config_error("generate_scene: count must be >= 1");
  std::vector<int> pool = class_pool, chosen;
  for (int i = 0; i < count; ++i) {
    if (pool.empty()) pool = class_pool;
    size_t pick = size_t(gen.index(pool.size()));
    chosen.push_back(pool[pick]);
    pool.erase(pool.begin() + std::ptrdiff_t(pick));
  }
  return generate_scene(chosen, config, gen);
}

// -----------------------------------------------------------------------------
// RENDERING
// -----------------------------------------------------------------------------

vec3d render_style::albedo(int class_id) const {
  auto it = class_albedo.find(class_id);
  return it != class_albedo.end() ? it->second : vec3d(0.7, 0.7, 0.7);
}

namespace {

struct raster_target {
  int width, height;
  std::vector<double> depth;
  std::vector<int> id;
  std::vector<vec3d> color;

  raster_target(int w, int h, const vec3d& background)
      : width(w),
        height(h),
        depth(size_t(w * h), std::numeric_limits<double>::infinity()),
        id(size_t(w * h), -1),
        color(size_t(w * h), background) {}
};

void rasterize(const pinhole_camera& cam, const tri_mesh& mesh, int id, const vec3d& albedo,
               const render_style* style, raster_target& target) {
  const vec3d eye = cam.extrinsic.inverse().translation;
  for (const auto& t : mesh.triangles) {
    std::array<vec3d, 3> world, local;
    std::array<vec2d, 3> screen;
    bool visible = true;
    for (int i = 0; i < 3; ++i) {
      world[size_t(i)] = mesh.vertices[size_t(t[size_t(i)])];
      local[size_t(i)] = cam.extrinsic.apply(world[size_t(i)]);
      if (!(local[size_t(i)].z() > 1e-6)) visible = false;
      screen[size_t(i)] = vec2d(cam.fx * local[size_t(i)].x() / local[size_t(i)].z() + cam.cx,
                                cam.fy * local[size_t(i)].y() / local[size_t(i)].z() + cam.cy);
    }
    if (!visible) continue;
    auto edge = [](const vec2d& a, const vec2d& b, const vec2d& p) {
      return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
    };
    const double area = edge(screen[0], screen[1], screen[2]);
    if (area == 0) continue;
    vec3d shade = vec3d::Zero();
    if (style) {
      vec3d n = (world[1] - world[0]).cross(world[2] - world[0]).normalized();
      if (n.dot(eye - world[0]) < 0) n = -n;
      shade = albedo * (style->ambient + style->diffuse * std::max(0.0, n.dot(style->light_direction)));
    }
    double xmin = std::min({screen[0].x(), screen[1].x(), screen[2].x()});
    double xmax = std::max({screen[0].x(), screen[1].x(), screen[2].x()});
    double ymin = std::min({screen[0].y(), screen[1].y(), screen[2].y()});
    double ymax = std::max({screen[0].y(), screen[1].y(), screen[2].y()});
    int x0 = std::max(0, int(std::ceil(xmin))), x1 = std::min(target.width - 1, int(std::floor(xmax)));
    int y0 = std::max(0, int(std::ceil(ymin))), y1 = std::min(target.height - 1, int(std::floor(ymax)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const vec2d p(x, y);
        double w0 = edge(screen[1], screen[2], p) / area;
        double w1 = edge(screen[2], screen[0], p) / area;
        double w2 = edge(screen[0], screen[1], p) / area;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        // perspective-correct depth: 1/z is affine in screen space
        double z = 1.0 / (w0 / local[0].z() + w1 / local[1].z() + w2 / local[2].z());
        const size_t px = size_t(y * target.width + x);
        if (z < target.depth[px]) {
          target.depth[px] = z;
          target.id[px] = id;
          target.color[px] = shade;
        }
      }
  }
}

void draw_ground(const pinhole_camera& cam, double height, const render_style& style,
                 raster_target& target) {
  const auto inv = cam.extrinsic.inverse();
  const vec3d eye = inv.translation;
  const vec3d shade = style.ground_albedo *
                      (style.ambient + style.diffuse * std::max(0.0, style.light_direction.y()));
  for (int y = 0; y < target.height; ++y)
    for (int x = 0; x < target.width; ++x) {
      vec3d dir = inv.rotation * vec3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      if (dir.y() == 0) continue;
      double s = (height - eye.y()) / dir.y();
      if (!(s > 0)) continue;
      const size_t px = size_t(y * target.width + x);
      target.depth[px] = s;  // camera-space depth, the ray's z component is 1
      target.color[px] = shade;
    }
}

float quantize(double x) { return float(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)) / 255.0f; }

}  // namespace

image_rgb render_meshes(const pinhole_camera& camera, const std::vector<tri_mesh>& meshes,
                        const render_style& style, bool ground_plane, double ground_height) {
  camera.validate();
  raster_target target(camera.width, camera.height, style.background);
  if (ground_plane) draw_ground(camera, ground_height, style, target);
  for (size_t i = 0; i < meshes.size(); ++i)
    rasterize(camera, meshes[i], int(i), style.albedo(meshes[i].class_id), &style, target);
  image_rgb img;
  img.width = camera.width;
  img.height = camera.height;
  img.data.resize(size_t(3 * img.width * img.height));
  for (int c = 0; c < 3; ++c)
    for (size_t px = 0; px < target.color.size(); ++px)
      img.data[size_t(c) * target.color.size() + px] = quantize(target.color[px][c]);
  return img;
}

image_rgb render(const scene& s, const render_style& style) {
  std::vector<tri_mesh> meshes;
  for (const auto& o : s.objects) meshes.push_back(o.world_mesh());
  return render_meshes(s.camera, meshes, style, s.ground_plane, s.ground_height);
}

std::vector<int> render_ids(const scene& s, const pinhole_camera& camera, int only) {
  camera.validate();
  raster_target target(camera.width, camera.height, vec3d::Zero());
  for (size_t i = 0; i < s.objects.size(); ++i) {
    if (only >= 0 && int(i) != only) continue;
    rasterize(camera, s.objects[i].world_mesh(), int(i), vec3d::Zero(), nullptr, target);
  }
  return target.id;
}

void write_ppm(const std::filesystem::path& path, const image_rgb& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("write_ppm: cannot open " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  const size_t plane = size_t(image.width * image.height);
  std::vector<unsigned char> bytes(plane * 3);
  for (size_t px = 0; px < plane; ++px)
    for (size_t c = 0; c < 3; ++c)
      bytes[px * 3 + c] = (unsigned char)std::lround(image.data[c * plane + px] * 255.0f);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw io_error("write_ppm: write failed for " + path.string());
}

image_rgb read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("read_ppm: cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) throw io_error("read_ppm: unsupported file " + path.string());
  in.get();
  const size_t plane = size_t(w * h);
  std::vector<unsigned char> bytes(plane * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!in) throw io_error("read_ppm: truncated file " + path.string());
  image_rgb img;
  img.width = w;
  img.height = h;
  img.data.resize(plane * 3);
  for (size_t px = 0; px < plane; ++px)
    for (size_t c = 0; c < 3; ++c) img.data[c * plane + px] = float(bytes[px * 3 + c]) / 255.0f;
  return img;
}

// -----------------------------------------------------------------------------
// VOXELIZATION
// -----------------------------------------------------------------------------

std::vector<char> voxelize_parts(const std::vector<tri_mesh>& parts, const grid_spec& spec) {
  spec.validate();
  std::vector<char> inside(size_t(spec.count()), 0);
  const double base_y = spec.origin.y() + spec.offset.y();
  const double base_z = spec.origin.z() + spec.offset.z();
  const double v = spec.spacing;
  for (const auto& mesh : parts) {
    // bin triangles by the rows (j,k) their (y,z) footprint may cover
    std::vector<std::vector<int32_t>> rows(size_t(spec.height * spec.depth));
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
      double ylo = 1e300, yhi = -1e300, zlo = 1e300, zhi = -1e300;
      for (auto i : mesh.triangles[t]) {
        const vec3d& p = mesh.vertices[size_t(i)];
        ylo = std::min(ylo, p.y());
        yhi = std::max(yhi, p.y());
        zlo = std::min(zlo, p.z());
        zhi = std::max(zhi, p.z());
      }
      int64_t j0 = std::max<int64_t>(0, int64_t(std::floor((ylo - base_y) / v)) - 1);
      int64_t j1 = std::min<int64_t>(spec.height - 1, int64_t(std::ceil((yhi - base_y) / v)) + 1);
      int64_t k0 = std::max<int64_t>(0, int64_t(std::floor((zlo - base_z) / v)) - 1);
      int64_t k1 = std::min<int64_t>(spec.depth - 1, int64_t(std::ceil((zhi - base_z) / v)) + 1);
      for (int64_t k = k0; k <= k1; ++k)
        for (int64_t j = j0; j <= j1; ++j) rows[size_t(k * spec.height + j)].push_back(int32_t(t));
    }
    std::vector<double> hits;
    for (int64_t k = 0; k < spec.depth; ++k)
      for (int64_t j = 0; j < spec.height; ++j) {
        const auto& bin = rows[size_t(k * spec.height + j)];
        if (bin.empty()) continue;
        // deterministic sub-voxel jitter of the +x ray keeps it off edges
        const uint64_t h = splitmix64(hash_combine(uint64_t(j), uint64_t(k)));
        const double jy = (double(h & 0xffffffu) / double(0x1000000) - 0.5) * 1e-7 * v;
        const double jz = (double((h >> 24) & 0xffffffu) / double(0x1000000) - 0.5) * 1e-7 * v;
        const double py = base_y + v * double(j) + jy, pz = base_z + v * double(k) + jz;
        hits.clear();
        for (auto t : bin) {
          const auto& tri = mesh.triangles[size_t(t)];
          const vec3d& a = mesh.vertices[size_t(tri[0])];
          const vec3d& b = mesh.vertices[size_t(tri[1])];
          const vec3d& c = mesh.vertices[size_t(tri[2])];
          auto orient = [](double ay, double az, double by, double bz, double cy, double cz) {
            return (by - ay) * (cz - az) - (bz - az) * (cy - ay);
          };
          const double area = orient(a.y(), a.z(), b.y(), b.z(), c.y(), c.z());
          if (area == 0) continue;
          const double wa = orient(b.y(), b.z(), c.y(), c.z(), py, pz) / area;
          const double wb = orient(c.y(), c.z(), a.y(), a.z(), py, pz) / area;
          const double wc = orient(a.y(), a.z(), b.y(), b.z(), py, pz) / area;
          if (wa < 0 || wb < 0 || wc < 0) continue;
          hits.push_back(wa * a.x() + wb * b.x() + wc * c.x());
        }
        if (hits.empty()) continue;
        std::sort(hits.begin(), hits.end());
        for (int64_t i = 0; i < spec.width; ++i) {
          const double x = spec.origin.x() + spec.offset.x() + v * double(i);
          auto upper = std::upper_bound(hits.begin(), hits.end(), x);
          const bool on_surface = upper != hits.begin() && *(upper - 1) == x;
          const auto right = hits.end() - upper;
          if (on_surface || right % 2 == 1) inside[size_t(spec.index(i, j, k))] = 1;
        }
      }
  }
  return inside;
}

label_grid voxelize(const scene& s, const grid_spec& spec) {
  label_grid out(spec, 0);
  for (size_t o = 0; o < s.objects.size(); ++o) {
    std::vector<tri_mesh> local = s.objects[o].parts;
    for (auto& m : local)
      for (auto& p : m.vertices) p = s.camera.extrinsic.apply(p);
    const auto inside = voxelize_parts(local, spec);
    for (size_t p = 0; p < inside.size(); ++p) {
      if (!inside[p]) continue;
      if (out.labels[p] != 0)
        throw scene_integrity_error("voxelize: grid point " + std::to_string(p) +
                                    " lies inside two objects");
      out.labels[p] = s.objects[o].class_id;
    }
  }
  return out;
}

label_grid rasterize_labels(const scene& s, const grid_spec& spec) { return voxelize(s, spec); }

// -----------------------------------------------------------------------------
// SERIALISATION
// -----------------------------------------------------------------------------

namespace {

json transform_to_json(const rigid_transform& t) {
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(t.rotation(i, j));
  return {{"rotation", r}, {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

rigid_transform transform_from_json(const json& j) {
  rigid_transform t;
  const auto& r = j.at("rotation");
  if (r.size() != 9) throw io_error("scene: rotation must have 9 entries");
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) t.rotation(a, b) = r.at(size_t(a * 3 + b)).get<double>();
  const auto& tr = j.at("translation");
  for (int a = 0; a < 3; ++a) t.translation[a] = tr.at(size_t(a)).get<double>();
  return t;
}

}  // namespace

json camera_to_json(const pinhole_camera& c) {
  return {{"fx", c.fx},         {"fy", c.fy},         {"cx", c.cx},
          {"cy", c.cy},         {"width", c.width},   {"height", c.height},
          {"extrinsic", transform_to_json(c.extrinsic)}};
}

pinhole_camera camera_from_json(const json& j) {
  pinhole_camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  if (j.contains("extrinsic")) c.extrinsic = transform_from_json(j.at("extrinsic"));
  c.validate();
  return c;
}

json scene_to_json(const scene& s) {
  json objects = json::array();
  for (const auto& o : s.objects) {
    json params = json::object();
    for (const auto& [k, v] : o.geometry.params) params[k] = v;
    objects.push_back({{"family", family_name(o.geometry.family)},
                       {"params", params},
                       {"transform", transform_to_json(o.pose)},
                       {"scale", o.scale},
                       {"class_id", o.class_id}});
  }
  return {{"seed", s.seed},
          {"camera", camera_to_json(s.camera)},
          {"ground_plane", s.ground_plane},
          {"ground_height", s.ground_height},
          {"objects", objects}};
}

scene scene_from_json(const json& j) {
  try {
    scene s;
    s.seed = j.value("seed", uint64_t(0));
    s.camera = camera_from_json(j.at("camera"));
    s.ground_plane = j.value("ground_plane", true);
    s.ground_height = j.value("ground_height", -0.25);
    for (const auto& jo : j.at("objects")) {
      scene_object o;
      o.geometry.family = parse_family(jo.at("family").get<std::string>());
      for (const auto& [k, v] : jo.at("params").items()) o.geometry.params[k] = v.get<double>();
      o.pose = transform_from_json(jo.at("transform"));
      o.scale = jo.value("scale", 1.0);
      o.class_id = jo.at("class_id").get<int>();
      if (o.class_id < 1) throw io_error("scene: class_id must be >= 1");
      o.rebuild();
      s.objects.push_back(std::move(o));
    }
    return s;
  } catch (const json::exception& e) {
    throw io_error(std::string("scene JSON: ") + e.what());
  }
}

void save_scene(const std::filesystem::path& path, const scene& s) {
  std::ofstream out(path);
  if (!out) throw io_error("save_scene: cannot open " + path.string());
  out << scene_to_json(s).dump(2) << "\n";
}

scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_scene: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw io_error("load_scene: " + path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

// -----------------------------------------------------------------------------
// DATASETS
// -----------------------------------------------------------------------------

std::vector<std::vector<int>> class_combinations(int num_classes, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> current;
  std::function<void(int)> recurse = [&](int next) {
    if (int(current.size()) == k) {
      out.push_back(current);
      return;
    }
    for (int c = next; c < num_classes; ++c) {
      current.push_back(c);
      recurse(c + 1);
      current.pop_back();
    }
  };
  if (k >= 1) recurse(1);
  return out;
}

namespace {

struct planned_scene {
  std::vector<int> classes;
  std::string split;
  uint64_t shape_seed;
};

std::vector<planned_scene> plan_dataset(int64_t n_scenes, const dataset_config& config) {
  if (n_scenes < 1) throw config_error("dataset: n_scenes must be >= 1");
  if (config.objects_per_scene < 1 || config.objects_per_scene > 3)
    throw config_error("dataset: objects_per_scene must be 1, 2 or 3");
  if (!(config.test_fraction >= 0 && config.test_fraction < 1))
    throw config_error("dataset: test_fraction must lie in [0, 1)");
  auto combos = class_combinations(config.forge.num_classes, config.objects_per_scene);
  if (combos.empty()) throw config_error("dataset: not enough classes for the requested object count");
  const auto n_test = int64_t(std::floor(double(n_scenes) * config.test_fraction));
  const int64_t n_train = n_scenes - n_test;
  std::vector<planned_scene> plan;
  for (int64_t i = 0; i < n_scenes; ++i) {
    const bool test = i >= n_train;
    const int64_t local = test ? i - n_train : i;
    // even seeds for training shapes, odd for test shapes
    plan.push_back({combos[size_t(local) % combos.size()], test ? "test" : "train",
                    uint64_t(2 * local + (test ? 1 : 0))});
  }
  return plan;
}

example realize(const planned_scene& p, const dataset_config& config, uint64_t seed) {
  rng gen = rng::stream(seed, "dataset", p.shape_seed);
  example ex;
  ex.scene_data = generate_scene(p.classes, config.forge, gen);
  ex.image = render(ex.scene_data);
  ex.split = p.split;
  return ex;
}

}  // namespace

std::vector<example> generate_examples(int64_t n_scenes, const dataset_config& config,
                                       uint64_t seed) {
  auto plan = plan_dataset(n_scenes, config);
  std::vector<example> out(plan.size());
  parallel_for(int64_t(plan.size()), [&](int64_t i) { out[size_t(i)] = realize(plan[size_t(i)], config, seed); });
  return out;
}

std::vector<dataset_entry> make_dataset(const std::filesystem::path& root, int64_t n_scenes,
                                        const dataset_config& config, uint64_t seed) {
  auto plan = plan_dataset(n_scenes, config);
  std::filesystem::create_directories(root);
  std::vector<dataset_entry> entries(plan.size());
  grid_spec labels_spec = config.forge.reconstruction_grid(config.resolution);
  labels_spec.offset = vec3d::Constant(0.5 * labels_spec.spacing);
  parallel_for(int64_t(plan.size()), [&](int64_t i) {
    const auto& p = plan[size_t(i)];
    example ex = realize(p, config, seed);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05lld", static_cast<long long>(i));
    const auto dir = root / name;
    std::filesystem::create_directories(dir);
    save_scene(dir / "scene.json", ex.scene_data);
    write_ppm(dir / "image.ppm", ex.image);
    save_labels(dir / "labels.vwt", voxelize(ex.scene_data, labels_spec));
    entries[size_t(i)] = {dir, p.split, p.classes, p.shape_seed};
  });
  json index = json::array();
  for (const auto& e : entries)
    index.push_back({{"dir", e.dir.filename().string()},
                     {"split", e.split},
                     {"classes", e.classes},
                     {"shape_seed", e.shape_seed}});
  json meta = {{"seed", seed},
               {"num_classes", config.forge.num_classes},
               {"objects_per_scene", config.objects_per_scene},
               {"resolution", config.resolution},
               {"scenes", index}};
  std::ofstream out(root / "index.json");
  if (!out) throw io_error("make_dataset: cannot write index.json");
  out << meta.dump(2) << "\n";
  return entries;
}

std::vector<example> load_dataset(const std::filesystem::path& root, const std::string& split) {
  std::ifstream in(root / "index.json");
  if (!in) throw io_error("load_dataset: no index.json under " + root.string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw io_error(std::string("load_dataset: ") + e.what());
  }
  std::vector<example> out;
  for (const auto& e : meta.at("scenes")) {
    const std::string s = e.at("split").get<std::string>();
    if (!split.empty() && s != split) continue;
    const auto dir = root / e.at("dir").get<std::string>();
    example ex;
    ex.scene_data = load_scene(dir / "scene.json");
    ex.image = read_ppm(dir / "image.ppm");
    ex.split = s;
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw io_error("load_dataset: no scenes in " + root.string());
  return out;
}

}  // namespace vw

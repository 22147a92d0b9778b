#include "voxelweave/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vw {

using nlohmann::json;

double volumetric_iou(const label_grid& pred, const label_grid& gt, int class_id) {
  if (!(pred.spec == gt.spec) || pred.labels.size() != gt.labels.size())
    throw dimension_error("volumetric_iou: label grids differ in layout");
  int64_t inter = 0, uni = 0;
  for (size_t p = 0; p < gt.labels.size(); ++p) {
    bool a = pred.labels[p] == class_id, b = gt.labels[p] == class_id;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

std::vector<vec3d> sample_surface(const tri_mesh& mesh, int64_t count, rng& gen) {
  std::vector<vec3d> out;
  if (mesh.empty() || count <= 0) return out;
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) cdf[t] = total += triangle_area(mesh, t);
  if (!(total > 0)) throw domain_error("sample_surface: mesh has zero area");
  out.reserve(size_t(count));
  for (int64_t i = 0; i < count; ++i) {
    double r = gen.uniform() * total;
    size_t t = size_t(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
    t = std::min(t, cdf.size() - 1);
    const auto& tri = mesh.triangles[t];
    const vec3d& a = mesh.vertices[size_t(tri[0])];
    const vec3d& b = mesh.vertices[size_t(tri[1])];
    const vec3d& c = mesh.vertices[size_t(tri[2])];
    double s = std::sqrt(gen.uniform()), u = gen.uniform();
    out.push_back((1 - s) * a + s * (1 - u) * b + s * u * c);
  }
  return out;
}

double point_triangle_distance(const vec3d& p, const vec3d& a, const vec3d& b, const vec3d& c) {
  // Voronoi-region walk over vertices, edges and face
  const vec3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.norm();
  const vec3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + ab * (d1 / (d1 - d3)))).norm();
  const vec3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + ac * (d2 / (d2 - d6)))).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + (c - b) * w)).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return (p - (a + ab * v + ac * w)).norm();
}

// -----------------------------------------------------------------------------
// BVH
// -----------------------------------------------------------------------------

namespace {

constexpr int32_t leaf_size = 4;

double box_distance_sq(const aabb& box, const vec3d& p) {
  vec3d d = (box.lo - p).cwiseMax(p - box.hi).cwiseMax(0.0);
  return d.squaredNorm();
}

}  // namespace

triangle_bvh::triangle_bvh(const tri_mesh& mesh) {
  tris_.reserve(mesh.triangles.size());
  std::vector<vec3d> centroids;
  for (const auto& t : mesh.triangles) {
    tri x{mesh.vertices[size_t(t[0])], mesh.vertices[size_t(t[1])], mesh.vertices[size_t(t[2])]};
    centroids.push_back((x.a + x.b + x.c) / 3.0);
    tris_.push_back(x);
  }
  if (!tris_.empty()) build(0, int32_t(tris_.size()), centroids);
}

int32_t triangle_bvh::build(int32_t first, int32_t count, std::vector<vec3d>& centroids) {
  const int32_t id = int32_t(nodes_.size());
  nodes_.push_back({});
  aabb box, cbox;
  for (int32_t i = first; i < first + count; ++i) {
    box.extend(tris_[size_t(i)].a);
    box.extend(tris_[size_t(i)].b);
    box.extend(tris_[size_t(i)].c);
    cbox.extend(centroids[size_t(i)]);
  }
  nodes_[size_t(id)].box = box;
  if (count <= leaf_size) {
    nodes_[size_t(id)].first = first;
    nodes_[size_t(id)].count = count;
    return id;
  }
  int axis = 0;
  (cbox.hi - cbox.lo).maxCoeff(&axis);
  const int32_t mid = first + count / 2;
  std::vector<int32_t> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), first);
  std::nth_element(order.begin(), order.begin() + (mid - first), order.end(),
                   [&](int32_t x, int32_t y) {
                     double cx = centroids[size_t(x)][axis], cy = centroids[size_t(y)][axis];
                     return cx < cy || (cx == cy && x < y);
                   });
  std::vector<tri> t2;
  std::vector<vec3d> c2;
  for (int32_t i : order) {
    t2.push_back(tris_[size_t(i)]);
    c2.push_back(centroids[size_t(i)]);
  }
  std::copy(t2.begin(), t2.end(), tris_.begin() + first);
  std::copy(c2.begin(), c2.end(), centroids.begin() + first);
  int32_t left = build(first, mid - first, centroids);
  int32_t right = build(mid, first + count - mid, centroids);
  nodes_[size_t(id)].left = left;
  nodes_[size_t(id)].right = right;
  return id;
}

double triangle_bvh::distance(const vec3d& p) const {
  if (tris_.empty()) throw contract_error("triangle_bvh: distance query on an empty mesh");
  double best = 1e300;
  std::vector<int32_t> stack{0};
  while (!stack.empty()) {
    const bvh_node& n = nodes_[size_t(stack.back())];
    stack.pop_back();
    if (box_distance_sq(n.box, p) >= best * best) continue;
    if (n.left < 0) {
      for (int32_t i = n.first; i < n.first + n.count; ++i) {
        const tri& t = tris_[size_t(i)];
        best = std::min(best, point_triangle_distance(p, t.a, t.b, t.c));
      }
      continue;
    }
    double dl = box_distance_sq(nodes_[size_t(n.left)].box, p);
    double dr = box_distance_sq(nodes_[size_t(n.right)].box, p);
    // nearer child on top
    if (dl < dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return best;
}

// -----------------------------------------------------------------------------
// SURFACE METRICS
// -----------------------------------------------------------------------------

namespace {

std::vector<double> distances(const std::vector<vec3d>& samples, const triangle_bvh& target) {
  std::vector<double> d(samples.size());
  const int64_t chunk = 4096;
  const int64_t chunks = (int64_t(samples.size()) + chunk - 1) / chunk;
  parallel_for(chunks, [&](int64_t c) {
    const size_t end = std::min(samples.size(), size_t((c + 1) * chunk));
    for (size_t i = size_t(c * chunk); i < end; ++i) d[i] = target.distance(samples[i]);
  });
  return d;
}

double fraction_within(const std::vector<double>& d, double tau) {
  if (d.empty()) return 0;
  int64_t n = 0;
  for (double x : d) n += x <= tau;
  return double(n) / double(d.size());
}

double mean_of(const std::vector<double>& d) {
  double s = 0;
  for (double x : d) s += x;
  return d.empty() ? 0 : s / double(d.size());
}

}  // namespace

double fscore_from_samples(const std::vector<vec3d>& pred_samples, const triangle_bvh& pred,
                           const std::vector<vec3d>& gt_samples, const triangle_bvh& gt,
                           double tau) {
  if (pred.empty() && gt.empty()) return 1.0;
  if (pred.empty() || gt.empty()) return 0.0;
  const double precision = fraction_within(distances(pred_samples, gt), tau);
  const double recall = fraction_within(distances(gt_samples, pred), tau);
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

double chamfer_from_samples(const std::vector<vec3d>& pred_samples, const triangle_bvh& pred,
                            const std::vector<vec3d>& gt_samples, const triangle_bvh& gt) {
  if (pred.empty() || gt.empty()) throw contract_error("chamfer: both meshes must be non-empty");
  return 0.5 * (mean_of(distances(pred_samples, gt)) + mean_of(distances(gt_samples, pred)));
}

double fscore(const tri_mesh& pred, const tri_mesh& gt, double tau, int64_t samples,
              uint64_t seed) {
  rng gp = rng::stream(seed, "surface", 0), gg = rng::stream(seed, "surface", 1);
  triangle_bvh bp(pred), bg(gt);
  return fscore_from_samples(sample_surface(pred, samples, gp), bp, sample_surface(gt, samples, gg),
                             bg, tau);
}

double chamfer(const tri_mesh& pred, const tri_mesh& gt, int64_t samples, uint64_t seed) {
  rng gp = rng::stream(seed, "surface", 0), gg = rng::stream(seed, "surface", 1);
  triangle_bvh bp(pred), bg(gt);
  return chamfer_from_samples(sample_surface(pred, samples, gp), bp, sample_surface(gt, samples, gg),
                              bg);
}

double occlusion_fraction(const scene& s, const pinhole_camera& camera, int object_index,
                          int resolution) {
  if (object_index < 0 || object_index >= int(s.objects.size()))
    throw contract_error("occlusion_fraction: object index out of range");
  if (resolution < 1) throw config_error("occlusion_fraction: resolution must be >= 1");
  const int h = std::max(1, int(std::lround(double(resolution) * camera.height / camera.width)));
  const pinhole_camera cam = camera.rescaled(resolution, h);
  const auto solo = render_ids(s, cam, object_index);
  const auto full = render_ids(s, cam);
  int64_t visible = 0, covered = 0;
  for (size_t p = 0; p < solo.size(); ++p) {
    if (solo[p] != object_index) continue;
    ++visible;
    covered += full[p] != object_index;
  }
  return visible == 0 ? 1.0 : double(covered) / double(visible);
}

// -----------------------------------------------------------------------------
// EVALUATION
// -----------------------------------------------------------------------------

std::vector<instance_record> evaluate_scene(const label_grid& pred,
                                            const std::vector<tri_mesh>& pred_meshes,
                                            const scene& gt, const eval_config& config,
                                            int64_t scene_index) {
  const label_grid gt_labels = voxelize(gt, pred.spec);
  const double tau = config.tau_fraction * pred.spec.diagonal();
  std::vector<instance_record> out;
  for (int o = 0; o < int(gt.objects.size()); ++o) {
    const auto& obj = gt.objects[size_t(o)];
    instance_record r;
    r.scene_index = scene_index;
    r.object_index = o;
    r.class_id = obj.class_id;
    r.iou = volumetric_iou(pred, gt_labels, obj.class_id);
    const tri_mesh gt_mesh = transformed(obj.world_mesh(), gt.camera.extrinsic);
    const aabb b = bounds(gt_mesh);
    r.depth = 0.5 * (b.lo.z() + b.hi.z());
    if (config.surface) {
      tri_mesh pm;
      for (const auto& m : pred_meshes)
        if (m.class_id == obj.class_id) pm.append(m);
      const uint64_t seed = hash_combine(config.seed, uint64_t(scene_index * 64 + o));
      r.fscore = fscore(pm, gt_mesh, tau, config.samples, seed);
      if (!pm.empty()) r.chamfer = chamfer(pm, gt_mesh, config.samples, seed);
    }
    if (config.occlusion)
      r.occlusion = occlusion_fraction(gt, gt.camera, o, config.occlusion_resolution);
    out.push_back(r);
  }
  return out;
}

namespace {

std::vector<metric_bin> make_bins(const std::vector<instance_record>& xs,
                                  const std::vector<double>& edges,
                                  double (*key)(const instance_record&),
                                  bool (*has)(const instance_record&)) {
  std::vector<metric_bin> bins;
  for (size_t b = 0; b + 1 < edges.size(); ++b) {
    metric_bin mb{edges[b], edges[b + 1], 0, 0.0};
    const bool last = b + 2 == edges.size();
    double s = 0;
    for (const auto& r : xs) {
      if (!has(r)) continue;
      double k = key(r);
      if (k >= mb.lo && (k < mb.hi || (last && k <= mb.hi))) {
        ++mb.count;
        s += r.iou;
      }
    }
    mb.mean_iou = mb.count ? s / double(mb.count) : 0.0;
    bins.push_back(mb);
  }
  return bins;
}

double mean_values(const std::map<int, double>& m) {
  if (m.empty()) return 0;
  double s = 0;
  for (const auto& [k, v] : m) s += v;
  return s / double(m.size());
}

}  // namespace

eval_report aggregate(const std::vector<instance_record>& instances, const eval_config& config) {
  eval_report r;
  r.instances = instances;
  std::map<int, std::vector<double>> iou, fs, ch;
  double total = 0;
  for (const auto& x : instances) {
    iou[x.class_id].push_back(x.iou);
    total += x.iou;
    if (x.fscore) fs[x.class_id].push_back(*x.fscore);
    if (x.chamfer) ch[x.class_id].push_back(*x.chamfer);
  }
  for (const auto& [c, v] : iou) r.class_iou[c] = mean_of(v);
  for (const auto& [c, v] : fs) r.class_fscore[c] = mean_of(v);
  for (const auto& [c, v] : ch) r.class_chamfer[c] = mean_of(v);
  r.miou = mean_values(r.class_iou);
  r.global_iou = instances.empty() ? 0 : total / double(instances.size());
  r.mean_fscore = mean_values(r.class_fscore);
  r.mean_chamfer = mean_values(r.class_chamfer);
  if (config.occlusion)
    r.occlusion_bins = make_bins(
        instances, config.occlusion_edges, [](const instance_record& x) { return *x.occlusion; },
        [](const instance_record& x) { return x.occlusion.has_value(); });
  if (!config.depth_edges.empty())
    r.depth_bins = make_bins(
        instances, config.depth_edges, [](const instance_record& x) { return x.depth; },
        [](const instance_record&) { return true; });
  return r;
}

eval_report evaluate(const label_grid& pred, const std::vector<tri_mesh>& pred_meshes,
                     const scene& gt, const eval_config& config) {
  return aggregate(evaluate_scene(pred, pred_meshes, gt, config), config);
}

json report_to_json(const eval_report& r) {
  auto class_map = [](const std::map<int, double>& m) {
    json j = json::object();
    for (const auto& [c, v] : m) j[std::to_string(c)] = v;
    return j;
  };
  auto bins = [](const std::vector<metric_bin>& bs) {
    json j = json::array();
    for (const auto& b : bs)
      j.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean_iou", b.mean_iou}});
    return j;
  };
  json inst = json::array();
  for (const auto& x : r.instances) {
    json j{{"scene", x.scene_index}, {"object", x.object_index}, {"class", x.class_id},
           {"iou", x.iou},           {"depth", x.depth}};
    j["fscore"] = x.fscore ? json(*x.fscore) : json(nullptr);
    j["chamfer"] = x.chamfer ? json(*x.chamfer) : json(nullptr);
    j["occlusion"] = x.occlusion ? json(*x.occlusion) : json(nullptr);
    inst.push_back(j);
  }
  return json{{"class_iou", class_map(r.class_iou)},
              {"miou", r.miou},
              {"global_iou", r.global_iou},
              {"class_fscore", class_map(r.class_fscore)},
              {"mean_fscore", r.mean_fscore},
              {"class_chamfer", class_map(r.class_chamfer)},
              {"mean_chamfer", r.mean_chamfer},
              {"occlusion_bins", bins(r.occlusion_bins)},
              {"depth_bins", bins(r.depth_bins)},
              {"instances", inst}};
}

std::string report_table(const eval_report& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(8) << "class" << std::right << std::setw(10) << "IoU"
      << std::setw(10) << "F@1%" << std::setw(12) << "Chamfer" << "\n";
  auto cell = [&](const std::map<int, double>& m, int c, int w) {
    auto it = m.find(c);
    if (it == m.end()) out << std::setw(w) << "-";
    else out << std::setw(w) << it->second;
  };
  for (const auto& [c, v] : r.class_iou) {
    out << std::left << std::setw(8) << c << std::right << std::setw(10) << v;
    cell(r.class_fscore, c, 10);
    cell(r.class_chamfer, c, 12);
    out << "\n";
  }
  out << std::left << std::setw(8) << "mean" << std::right << std::setw(10) << r.miou
      << std::setw(10) << r.mean_fscore << std::setw(12) << r.mean_chamfer << "\n";
  out << "global IoU " << r.global_iou << " over " << r.instances.size() << " instances\n";
  auto print_bins = [&](const char* name, const std::vector<metric_bin>& bs) {
    if (bs.empty()) return;
    out << name << "\n";
    for (const auto& b : bs)
      out << "  [" << b.lo << ", " << b.hi << ")  n=" << b.count << "  IoU " << b.mean_iou << "\n";
  };
  print_bins("by occlusion", r.occlusion_bins);
  print_bins("by depth", r.depth_bins);
  return out.str();
}

}  // namespace vw

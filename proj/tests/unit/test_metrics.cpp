#include <doctest.h>

#include <cmath>
#include <limits>

#include "voxelweave/metrics.hpp"
#include "voxelweave/scene.hpp"

using namespace vw;

namespace {

tri_mesh box_mesh(double side, const vec3d& at = vec3d::Zero()) {
  shape s{shape_family::box, {{"width", side}, {"height", side}, {"depth", side}}};
  rigid_transform t;
  t.translation = at;
  return transformed(build_shape_parts(s).front(), t);
}

tri_mesh square(double z) {
  tri_mesh m;
  m.vertices = {{0, 0, z}, {1, 0, z}, {1, 1, z}, {0, 1, z}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

double brute_distance(const vec3d& p, const tri_mesh& m) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : m.triangles)
    best = std::min(best, point_triangle_distance(p, m.vertices[size_t(t[0])],
                                                  m.vertices[size_t(t[1])], m.vertices[size_t(t[2])]));
  return best;
}

grid_spec grid16() {
  grid_spec g;
  g.width = g.height = g.depth = 16;
  g.spacing = 1.0 / 16;
  g.origin = vec3d(-0.5, -0.5, 1.5);
  return g;
}

}  // namespace

TEST_CASE("volumetric IoU of half-overlapping equal boxes is one third") {
  label_grid a(grid16()), b(grid16());
  for (int64_t k = 4; k < 12; ++k)
    for (int64_t j = 4; j < 12; ++j)
      for (int64_t i = 0; i < 16; ++i) {
        if (i < 8) a.labels[size_t(a.spec.index(i, j, k))] = 1;
        if (i >= 4 && i < 12) b.labels[size_t(b.spec.index(i, j, k))] = 1;
      }
  CHECK(volumetric_iou(a, b, 1) == 1.0 / 3.0);
  CHECK(volumetric_iou(a, a, 1) == 1.0);
  CHECK(volumetric_iou(a, b, 2) == 1.0);
}

TEST_CASE("point-triangle distance: face, edge and vertex regions") {
  const vec3d a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  CHECK(point_triangle_distance(vec3d(0.2, 0.2, 0.7), a, b, c) == doctest::Approx(0.7));
  CHECK(point_triangle_distance(vec3d(0.5, -2, 0), a, b, c) == doctest::Approx(2.0));
  CHECK(point_triangle_distance(vec3d(-3, -4, 0), a, b, c) == doctest::Approx(5.0));
  CHECK(point_triangle_distance(vec3d(1, 1, 0), a, b, c) == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("identical meshes: F-score 1 and zero Chamfer with shared samples") {
  auto m = box_mesh(0.4);
  rng g(1);
  auto samples = sample_surface(m, 5000, g);
  triangle_bvh bvh(m);
  CHECK(fscore_from_samples(samples, bvh, samples, bvh, 1e-3) == 1.0);
  CHECK(chamfer_from_samples(samples, bvh, samples, bvh) <= 1e-6);
  CHECK(fscore(m, m, 1e-3, 2000) == 1.0);
}

TEST_CASE("parallel unit squares at distance d have Chamfer d") {
  const double d = 0.3;
  CHECK(chamfer(square(0), square(d), 5000) == doctest::Approx(d).epsilon(1e-12));
  CHECK(fscore(square(0), square(d), 0.29, 5000) == 0.0);
  CHECK(fscore(square(0), square(d), 0.31, 5000) == 1.0);
}

TEST_CASE("BVH distances and F-score match a brute-force oracle") {
  const double tau = 0.02;
  auto gt = box_mesh(0.5);
  for (double shift : {0.5 * tau, 3.0 * tau}) {
    auto pred = box_mesh(0.5, vec3d(shift, 0, 0));
    rng gp(2), gg(3);
    auto ps = sample_surface(pred, 3000, gp), gs = sample_surface(gt, 3000, gg);
    triangle_bvh bp(pred), bg(gt);
    for (size_t i = 0; i < 200; ++i) CHECK(bg.distance(ps[i]) == doctest::Approx(brute_distance(ps[i], gt)));
    double prec = 0, rec = 0;
    for (const auto& p : ps) prec += brute_distance(p, gt) <= tau;
    for (const auto& p : gs) rec += brute_distance(p, pred) <= tau;
    prec /= double(ps.size());
    rec /= double(gs.size());
    const double want = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    CHECK(fscore_from_samples(ps, bp, gs, bg, tau) == doctest::Approx(want).epsilon(1e-12));
    if (shift < tau) {
      CHECK(want == 1.0);
    } else {
      CHECK(want < 1.0);
      CHECK(want > 0.5);
    }
  }
}

TEST_CASE("surface sampling is area uniform") {
  tri_mesh m;
  // two triangles with areas 1/2 and 3/2
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 5}, {3, 0, 5}, {0, 1, 5}};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  rng g(4);
  auto s = sample_surface(m, 20000, g);
  double top = 0;
  for (const auto& p : s) top += p.z() > 2.5;
  CHECK(top / 20000.0 == doctest::Approx(0.75).epsilon(0.02));
  CHECK(sample_surface(tri_mesh{}, 10, g).empty());
  CHECK(fscore(tri_mesh{}, m, 0.1, 10) == 0.0);
  CHECK(fscore(tri_mesh{}, tri_mesh{}, 0.1, 10) == 1.0);
  CHECK_THROWS_AS(chamfer(tri_mesh{}, m, 10), contract_error);
}

TEST_CASE("occlusion: lone object is unoccluded, one hidden behind a wall is fully occluded") {
  scene sc;
  sc.ground_plane = false;
  sc.camera.width = sc.camera.height = 64;
  sc.camera.fx = sc.camera.fy = 100;
  sc.camera.cx = sc.camera.cy = 31.5;
  scene_object small;
  small.geometry = {shape_family::box, {{"width", 0.1}, {"height", 0.1}, {"depth", 0.1}}};
  small.pose.translation = vec3d(0, -0.05, 2.3);
  small.rebuild();
  sc.objects.push_back(small);
  CHECK(occlusion_fraction(sc, sc.camera, 0, 64) == 0.0);

  scene_object wall;
  wall.geometry = {shape_family::box, {{"width", 0.6}, {"height", 0.6}, {"depth", 0.05}}};
  wall.pose.translation = vec3d(0, -0.3, 1.8);
  wall.class_id = 2;
  wall.rebuild();
  sc.objects.push_back(wall);
  CHECK(occlusion_fraction(sc, sc.camera, 0, 64) == 1.0);
  CHECK(occlusion_fraction(sc, sc.camera, 1, 64) == 0.0);

  // moved out of view: invisible on its own counts as fully occluded
  sc.objects[0].pose.translation = vec3d(0, 0, -2);
  sc.objects[0].rebuild();
  CHECK(occlusion_fraction(sc, sc.camera, 0, 64) == 1.0);
}

TEST_CASE("evaluate: perfect prediction scores 1 everywhere") {
  scene sc;
  sc.camera.width = sc.camera.height = 64;
  sc.camera.fx = sc.camera.fy = 100;
  sc.camera.cx = sc.camera.cy = 31.5;
  scene_object o;
  o.geometry = {shape_family::box, {{"width", 0.4}, {"height", 0.4}, {"depth", 0.4}}};
  o.pose.translation = vec3d(0, -0.2, 2.0);
  o.class_id = 2;
  o.rebuild();
  sc.objects.push_back(o);
  auto spec = grid16();
  auto gt = voxelize(sc, spec);
  tri_mesh m = o.world_mesh();
  m.class_id = 2;
  eval_config ec;
  ec.samples = 2000;
  auto r = evaluate(gt, {m}, sc, ec);
  CHECK(r.miou == 1.0);
  CHECK(r.mean_fscore == 1.0);
  CHECK(r.instances.size() == 1);
  auto empty = evaluate(label_grid(spec), {}, sc, ec);
  CHECK(empty.miou == 0.0);
  CHECK(empty.mean_fscore == 0.0);
}

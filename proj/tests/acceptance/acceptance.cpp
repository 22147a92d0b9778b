// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 iff all pass.
//
//   voxelweave_acceptance [--only 1,4,9] [--report file]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <set>
#include <string>

#include "voxelweave/gradcheck.hpp"
#include "voxelweave/losses.hpp"
#include "voxelweave/mesher.hpp"
#include "voxelweave/metrics.hpp"
#include "voxelweave/pipeline.hpp"
#include "voxelweave/train.hpp"

using namespace vw;

namespace {

struct outcome {
  bool pass = false;
  std::string detail;
};

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

grid_spec box_grid(int64_t n, const vec3d& offset = vec3d::Zero()) {
  grid_spec g;
  g.width = g.height = g.depth = n;
  g.spacing = 1.0 / double(n);
  g.origin = vec3d(-0.5, -0.5, 1.5);
  g.offset = offset;
  return g;
}

scene lone_object(const shape& s, const vec3d& at) {
  scene sc;
  sc.camera.width = sc.camera.height = 64;
  sc.camera.fx = sc.camera.fy = 100;
  sc.camera.cx = sc.camera.cy = 31.5;
  scene_object o;
  o.geometry = s;
  o.pose.translation = at;
  o.rebuild();
  sc.objects.push_back(o);
  return sc;
}

double window_mean(const std::vector<double>& v, size_t first, size_t count) {
  return std::accumulate(v.begin() + long(first), v.begin() + long(first + count), 0.0) /
         double(count);
}

// ---------------------------------------------------------------------------

outcome gradient_suite() {
  const auto t0 = clock_type::now();
  gradcheck_options opt;  // 64-bit, tol 1e-4, 5 trials
  auto report = run_gradcheck(opt);
  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  int min_trials = 1 << 30;
  std::set<std::string> names;
  for (const auto& r : report.results) {
    names.insert(r.name);
    min_trials = std::min(min_trials, r.trials);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  bool losses = true;
  for (const char* l : {"loss_iou", "loss_xent", "loss_focal", "loss_iou_xent_product"})
    losses = losses && names.count(l);
  const bool pass = report.passed() && report.uncovered_ops.empty() && losses &&
                    worst <= opt.tolerance && min_trials >= 5 && elapsed <= 120;
  return {pass, fmt("%zu checks, worst %.2e (%s), min trials %d, uncovered %zu, %.1fs",
                    report.results.size(), worst, worst_name.c_str(), min_trials,
                    report.uncovered_ops.size(), elapsed)};
}

outcome binary_reduction() {
  rng g = rng::stream(2, "acceptance");
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + int(g.index(512));
    const double density = g.uniform();
    std::vector<double> gt(size_t(2 * n)), pr(size_t(2 * n));
    int64_t inter = 0, uni = 0;
    for (int j = 0; j < n; ++j) {
      const bool a = g.uniform() < density, b = g.uniform() < density;
      gt[size_t(j)] = !a;
      gt[size_t(n + j)] = a;
      pr[size_t(j)] = !b;
      pr[size_t(n + j)] = b;
      inter += a && b;
      uni += a || b;
    }
    const double want = uni ? double(inter) / double(uni) : 1.0;
    const double got =
        iou_g(ad::tensor<double>({2, n}, gt), ad::tensor<double>({2, n}, pr)).item();
    worst = std::max(worst, std::abs(got - want));
  }
  return {worst <= 1e-12, fmt("1000 volumes, max |iou_g - set IoU| = %.2e", worst)};
}

outcome worked_value() {
  // g = (0,1,0), p = (0.2,0.5,0.3), mu(1) = 1, mu(0) = 1/2:
  // (min(1,.5) + min(0,.3)/2) / (max(1,.5) + max(0,.3)/2) = 0.5 / 1.15
  ad::tensor<double> g({3, 1}, {0, 1, 0}), p({3, 1}, {0.2, 0.5, 0.3});
  const double got = iou_g(g, p).item(), want = 0.5 / 1.15;
  return {std::abs(got - want) <= 1e-15, fmt("iou_g = %.15f, hand value %.15f", got, want)};
}

outcome superres_exactness() {
  const vec3d centre(0.031, -0.047, 2.013);
  const double radius = 0.337;
  auto stub = [&](const grid_spec& s) {
    volume_grid v(s, 2);
    for (int64_t p = 0; p < s.count(); ++p) {
      const double inside = (s.position(p) - centre).norm() < radius ? 1.0 : 0.0;
      v.at(p, 0) = 1 - inside;
      v.at(p, 1) = inside;
    }
    return v;
  };
  const grid_spec coarse = box_grid(16);
  std::vector<volume_grid> passes;
  auto fine = superres([&](const vec3d& o) { return stub(coarse.with_offset(o)); }, 4,
                       coarse.spacing, &passes);
  auto direct = stub(fine.spec);
  int64_t mismatched = 0, occupied = 0;
  for (size_t i = 0; i < fine.values.size(); ++i) mismatched += fine.values[i] != direct.values[i];
  for (int64_t p = 0; p < fine.spec.count(); ++p) occupied += fine.at(p, 1) == 1.0;
  const bool shape_ok = fine.spec.width == 64 && fine.spec.depth == 64 && passes.size() == 64;
  return {shape_ok && mismatched == 0 && occupied > 0,
          fmt("%zu passes of 16^3 -> %lldx%lldx%lld, %lld differing values, %lld occupied points",
              passes.size(), (long long)fine.spec.width, (long long)fine.spec.height,
              (long long)fine.spec.depth, (long long)mismatched, (long long)occupied)};
}

outcome space_exclusion() {
  const int n = 16, classes = 4;
  int64_t audited = 0, shared = 0, meshes = 0, dense = 0, dense_shared = 0;
  for (int vol = 0; vol < 100; ++vol) {
    rng g = rng::stream(5, "acceptance", uint64_t(vol));
    grid_spec s = box_grid(n);
    volume_grid v(s, classes);
    const double temperature = g.uniform(0.5, 4.0);
    for (int64_t k = 0; k < n; ++k)
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < n; ++i) {
          const int64_t p = s.index(i, j, k);
          // void border keeps every class surface closed
          const bool border = i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1;
          double z[classes], m = -1e300;
          for (int c = 0; c < classes; ++c) {
            z[c] = border ? (c == 0 ? 20.0 : 0.0) : temperature * g.normal();
            m = std::max(m, z[c]);
          }
          double sum = 0;
          for (int c = 0; c < classes; ++c) sum += z[c] = std::exp(z[c] - m);
          for (int c = 0; c < classes; ++c) v.at(p, c) = z[c] / sum;
        }
    auto ms = extract_scene_meshes(v);
    meshes += int64_t(ms.size());
    // 100 uniform points per volume, strictly inside the void border
    const vec3d lo = s.position(0, 0, 0), hi = s.position(n - 1, n - 1, n - 1);
    for (int q = 0; q < 100; ++q) {
      const vec3d x(g.uniform(lo.x(), hi.x()), g.uniform(lo.y(), hi.y()), g.uniform(lo.z(), hi.z()));
      int count = 0;
      for (const auto& mesh : ms) count += contains_point(mesh, x);
      shared += count > 1;
      ++audited;
    }
    // denser lattice audit, reported only
    grid_spec lattice;
    lattice.width = lattice.height = 22;
    lattice.depth = 21;
    lattice.spacing = (double(n - 1) * s.spacing) / 22.0;
    lattice.origin = s.origin;
    lattice.offset = vec3d(g.uniform(0.1, 0.9), g.uniform(0.1, 0.9), g.uniform(0.1, 0.9)) * lattice.spacing;
    std::vector<int> inside(size_t(lattice.count()), 0);
    for (const auto& mesh : ms) {
      auto in = voxelize_parts({mesh}, lattice);
      for (size_t q = 0; q < in.size(); ++q) inside[q] += in[q] != 0;
    }
    dense += lattice.count();
    for (int c : inside) dense_shared += c > 1;
  }
  return {shared == 0 && audited >= 10000,
          fmt("100 volumes, %lld class meshes, %lld audited points, %lld inside two meshes "
              "(dense lattice: %lld of %lld)",
              (long long)meshes, (long long)audited, (long long)shared, (long long)dense_shared,
              (long long)dense)};
}

outcome marching_cubes_fidelity() {
  const int n = 64;
  grid_spec s = box_grid(n);
  const vec3d c(0.012, -0.021, 2.007);
  const double r = 0.3;
  std::vector<double> field(size_t(s.count()));
  // smooth occupancy probability, 0.5 on the sphere
  for (int64_t p = 0; p < s.count(); ++p)
    field[size_t(p)] = 0.5 + 0.5 * std::tanh((r - (s.position(p) - c).norm()) / (2 * s.spacing));
  auto m = marching_cubes(field, s, 0.5);
  auto e = analyze_edges(m);
  double worst = 0;
  for (const auto& x : m.vertices) worst = std::max(worst, std::abs((x - c).norm() - r));
  const double area = 4 * std::numbers::pi * r * r;
  const double rel = std::abs(surface_area(m) - area) / area;
  const bool pass = !m.empty() && e.boundary_edges == 0 && e.nonmanifold_edges == 0 &&
                    worst <= s.spacing && rel <= 0.05;
  return {pass, fmt("%zu triangles, %lld boundary / %lld non-manifold edges, max deviation "
                    "%.2e (v = %.2e), area error %.3f%%",
                    m.triangles.size(), (long long)e.boundary_edges,
                    (long long)e.nonmanifold_edges, worst, s.spacing, 100 * rel)};
}

outcome metric_sanity() {
  shape box{shape_family::box, {{"width", 0.4}, {"height", 0.3}, {"depth", 0.35}}};
  tri_mesh a = build_shape_parts(box).front();
  rng g = rng::stream(7, "acceptance");
  auto samples = sample_surface(a, 20000, g);
  triangle_bvh bvh(a);
  const double f = fscore_from_samples(samples, bvh, samples, bvh, 0.01 * std::sqrt(3.0));
  const double ch = chamfer_from_samples(samples, bvh, samples, bvh);

  label_grid x(box_grid(32)), y(box_grid(32));
  for (int64_t k = 8; k < 24; ++k)
    for (int64_t j = 8; j < 24; ++j)
      for (int64_t i = 0; i < 24; ++i) {
        if (i < 16) x.labels[size_t(x.spec.index(i, j, k))] = 1;
        if (i >= 8) y.labels[size_t(y.spec.index(i, j, k))] = 1;
      }
  const double iou = volumetric_iou(x, y, 1);
  return {f == 1.0 && ch <= 1e-6 && iou == 1.0 / 3.0,
          fmt("fscore(A,A) = %.6f, chamfer(A,A) = %.2e, half-overlap IoU = %.17g", f, ch, iou)};
}

outcome voxelizer_oracle() {
  auto s = box_grid(64, vec3d::Constant(0.5 / 64));
  shape box{shape_family::box, {{"width", 0.43}, {"height", 0.37}, {"depth", 0.29}}};
  const vec3d at(0.013, -0.21, 2.02);
  auto lb = voxelize(lone_object(box, at), s);
  const vec3d lo(at.x() - 0.215, at.y(), at.z() - 0.145), hi(at.x() + 0.215, at.y() + 0.37, at.z() + 0.145);
  int64_t agree_box = 0;
  for (int64_t p = 0; p < s.count(); ++p) {
    const vec3d x = s.position(p);
    const bool in = (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
    agree_box += (lb.labels[size_t(p)] == 1) == in;
  }
  const double r = 0.3;
  shape ball{shape_family::sphere, {{"radius", r}}};
  const vec3d base(0.01, -r + 0.02, 2.0), centre(0.01, 0.02, 2.0);
  auto ls = voxelize(lone_object(ball, base), s);
  int64_t agree_ball = 0;
  for (int64_t p = 0; p < s.count(); ++p)
    agree_ball += (ls.labels[size_t(p)] == 1) == ((s.position(p) - centre).norm() < r);
  const double fb = double(agree_box) / double(s.count()), fs = double(agree_ball) / double(s.count());
  return {fb >= 0.999 && fs >= 0.999,
          fmt("64^3 agreement: box %.5f, sphere %.5f", fb, fs)};
}

// --- training criteria -------------------------------------------------------

struct toy_run {
  train_result result;
  std::vector<example> data;
  model_config model;
  train_config train;
  double seconds = 0;
};

// single-object training run of criteria 9 and 11
constexpr int64_t toy_steps = 3000;
constexpr int toy_batch = 4;
constexpr double toy_lr = 1e-3;
constexpr uint64_t toy_seed = 1;

const toy_run& single_object_run() {
  static const toy_run run = [] {
    toy_run r;
    const auto t0 = clock_type::now();
    dataset_config dc;
    dc.objects_per_scene = 1;
    r.data = generate_examples(500, dc, 11);
    r.train.loss = {loss_kind::iou};
    r.train.steps = toy_steps;
    r.train.batch = toy_batch;
    r.train.adam.lr = toy_lr;
    r.train.seed = toy_seed;
    r.result = train(r.data, r.model, r.train);
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

outcome toy_training() {
  const auto& run = single_object_run();
  const auto t0 = clock_type::now();
  const double v = run.model.grid.spacing;
  auto report = evaluate_labels(run.model, run.result.final.params, run.data, vec3d::Constant(0.5 * v));
  const double elapsed = run.seconds + seconds_since(t0);
  const auto& l = run.result.losses;
  const double first = window_mean(l, 0, 50), last = window_mean(l, l.size() - 50, 50);
  std::string per;
  for (const auto& [c, iou] : report.class_iou) per += fmt(" %d:%.3f", c, iou);
  const bool pass = report.miou >= 0.5 && last <= 0.5 * first && elapsed <= 45 * 60;
  return {pass, fmt("500 scenes, %lld steps x %d: train mIoU %.4f (%s ), loss %.4f -> %.4f "
                    "(ratio %.3f), %.0fs",
                    (long long)l.size(), run.train.batch, report.miou, per.c_str(), first, last,
                    last / first, elapsed)};
}

// criterion 10: skip vs no-skip on 2-object scenes
constexpr int ablation_scenes = 300;
constexpr int64_t ablation_steps = 2000;
constexpr int ablation_batch = 4;

outcome skip_ablation() {
  const auto t0 = clock_type::now();
  double with_skip = 0, without = 0;
  std::string rows;
  for (uint64_t seed : {1, 2, 3}) {
    dataset_config dc;
    dc.objects_per_scene = 2;
    auto data = generate_examples(ablation_scenes, dc, 100 + seed);
    train_config tc;
    tc.loss = {loss_kind::iou_xent_product};
    tc.steps = ablation_steps;
    tc.batch = ablation_batch;
    tc.adam.lr = toy_lr;
    tc.seed = seed;
    double m[2];
    for (int skip = 0; skip < 2; ++skip) {
      model_config mc;
      if (!skip) mc = mc.without_skips();
      auto r = train(data, mc, tc);
      m[skip] = evaluate_labels(mc, r.final.params, data, vec3d::Constant(0.5 * mc.grid.spacing)).miou;
    }
    with_skip += m[1] / 3;
    without += m[0] / 3;
    rows += fmt(" seed %llu: %.4f vs %.4f;", (unsigned long long)seed, m[1], m[0]);
  }
  const double gap = 100 * (with_skip - without);
  return {gap >= 2.0, fmt("mean mIoU skip %.4f, no-skip %.4f, gap %+.2f points (%s ) %.0fs", with_skip,
                          without, gap, rows.c_str(), seconds_since(t0))};
}

outcome offset_consistency() {
  const auto& run = single_object_run();
  const double v = run.model.grid.spacing;
  // offsets the run actually trained on: the first example of the last steps
  std::vector<vec3d> seen;
  for (int64_t step = run.train.steps - 4; step < run.train.steps; ++step) {
    rng gen = rng::stream(run.train.seed, "training", uint64_t(step));
    gen.index(run.data.size());
    seen.push_back(sample_training_offset(gen, v));
  }
  const vec3d unseen = vec3d::Constant(0.5 * v);
  double seen_mean = 0;
  std::string rows;
  for (const auto& o : seen) {
    const double m = evaluate_labels(run.model, run.result.final.params, run.data, o).miou;
    seen_mean += m / double(seen.size());
    rows += fmt(" %.4f", m);
    if ((o - unseen).norm() == 0) return {false, "unseen offset occurred in training"};
  }
  const double m_unseen = evaluate_labels(run.model, run.result.final.params, run.data, unseen).miou;
  const double drop = 100 * (seen_mean - m_unseen);
  return {drop <= 5.0, fmt("mIoU at seen offsets%s (mean %.4f), at unseen cell centre %.4f, "
                           "drop %+.2f points",
                           rows.c_str(), seen_mean, m_unseen, drop)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string report_path;
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  app.add_option("--report", report_path, "also write the result lines to this file");
  CLI11_PARSE(app, argc, argv);
  std::ofstream report;
  if (!report_path.empty()) report.open(report_path);

  const std::vector<std::pair<const char*, std::function<outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"binary reduction of iou_g", binary_reduction},
      {"worked iou_g value", worked_value},
      {"super-resolution exactness", superres_exactness},
      {"space exclusion", space_exclusion},
      {"marching cubes fidelity", marching_cubes_fidelity},
      {"metric sanity", metric_sanity},
      {"voxelizer oracle", voxelizer_oracle},
      {"toy training", toy_training},
      {"skip-connection ablation", skip_ablation},
      {"multi-offset consistency", offset_consistency},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int number = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    const std::string line = fmt("[%02d] %s  %s: %s", number, o.pass ? "PASS" : "FAIL",
                                 criteria[i].first, o.detail.c_str());
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (report.is_open()) report << line << std::endl;
  }
  return failed ? 1 : 0;
}

#include "voxelweave/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "voxelweave/gradcheck.hpp"
#include "voxelweave/mesh.hpp"
#include "voxelweave/mesher.hpp"
#include "voxelweave/pipeline.hpp"
#include "voxelweave/train.hpp"

namespace vw {

using json = nlohmann::json;
namespace fs = std::filesystem;

void run_config::validate() const {
  if (n < 1) throw config_error("--n must be >= 1");
  if (resolution < 0) throw config_error("--resolution must be >= 0");
  if (steps < 0) throw config_error("--steps must be >= 0");
  if (batch < 1) throw config_error("--batch must be >= 1");
  if (scenes < 1) throw config_error("--scenes must be >= 1");
  if (objects < 1 || objects > 3) throw config_error("--objects must be 1, 2 or 3");
  if (format != "obj" && format != "ply") throw config_error("--format must be obj or ply");
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw config_error(path.string() + ": " + e.what());
  }
}

// The model lattice at a requested resolution; spacing keeps the box side.
model_config with_resolution(model_config m, int64_t resolution) {
  if (resolution == 0) return m;
  int64_t factor = 1;
  for (const auto& st : m.decoder) factor *= st.upscale;
  if (resolution % factor)
    throw config_error("resolution " + std::to_string(resolution) +
                       " is not divisible by the decoder upscaling " + std::to_string(factor));
  const double side = m.grid.spacing * double(m.grid.width);
  m.grid.width = m.grid.height = m.grid.depth = resolution;
  m.grid.spacing = side / double(resolution);
  m.validate();
  return m;
}

void check_resolution(const model_config& m, int64_t resolution) {
  if (resolution != 0 && (resolution != m.grid.width || resolution != m.grid.height ||
                          resolution != m.grid.depth))
    throw config_error("resolution " + std::to_string(resolution) +
                       " does not match the checkpoint lattice " + std::to_string(m.grid.width));
}

example load_scene_dir(const fs::path& dir) {
  if (!fs::exists(dir / "scene.json")) throw io_error("missing " + (dir / "scene.json").string());
  example ex;
  ex.scene_data = load_scene(dir / "scene.json");
  ex.image = read_ppm(dir / "image.ppm");
  return ex;
}

std::vector<example> require_dataset(const fs::path& root, const std::string& split) {
  if (root.empty()) throw config_error("--dataset is required");
  if (!fs::exists(root / "index.json")) throw io_error("no dataset at " + root.string());
  auto data = load_dataset(root, split);
  if (data.empty()) throw io_error("dataset " + root.string() + " has no examples");
  return data;
}

int cmd_generate(const run_config& rc, std::ostream& out) {
  dataset_config dc;
  dc.objects_per_scene = rc.objects;
  dc.test_fraction = rc.test_fraction;
  if (rc.resolution) dc.resolution = rc.resolution;
  auto entries = make_dataset(rc.out, rc.scenes, dc, rc.seed);
  out << "wrote " << entries.size() << " scenes to " << rc.out.string() << "\n";
  return exit_ok;
}

int cmd_train(const run_config& rc, const json& file, std::ostream& out) {
  auto data = require_dataset(rc.dataset, "train");
  std::optional<checkpoint> resume;
  model_config model;
  if (!rc.checkpoint.empty()) {
    resume = load_checkpoint(rc.checkpoint);
    model = resume->config;
    check_resolution(model, rc.resolution);
  } else {
    if (file.contains("model")) model = model_config_from_json(file["model"]);
    model = with_resolution(model, rc.resolution);
  }
  train_config tc;
  tc.loss = rc.loss;
  tc.adam.lr = rc.lr;
  tc.steps = rc.steps;
  tc.batch = rc.batch;
  tc.seed = rc.seed;

  fs::create_directories(rc.out);
  const fs::path log_path = rc.out / "losses.csv";
  const bool append = resume && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw io_error("cannot write " + log_path.string());
  if (!append) log << "step,loss\n";
  log.precision(9);

  auto result = train(data, model, tc, resume, [&](int64_t step, double loss) {
    log << step + 1 << "," << loss << "\n";
  });
  log.flush();
  save_checkpoint(rc.out / "checkpoint.vwck", result.final);
  out << "trained to step " << result.final.step;
  if (!result.losses.empty()) out << ", last loss " << result.losses.back();
  out << "\n";
  return exit_ok;
}

int cmd_infer(const run_config& rc, std::ostream& out) {
  if (rc.checkpoint.empty()) throw config_error("--checkpoint is required");
  if (rc.scene.empty()) throw config_error("--scene is required");
  auto ck = load_checkpoint(rc.checkpoint);
  check_resolution(ck.config, rc.resolution);
  auto ex = load_scene_dir(rc.scene);
  std::vector<volume_grid> passes;
  auto fine = superres(model_pass(ck.config, ck.params, ex.image, ex.scene_data.camera), rc.n,
                       ck.config.grid.spacing, rc.debug ? &passes : nullptr);
  fs::create_directories(rc.out);
  save_volume(rc.out / "probs.vwt", fine);
  for (size_t i = 0; i < passes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "pass_%03zu.vwt", i);
    save_volume(rc.out / name, passes[i]);
  }
  out << "wrote " << fine.spec.width << "x" << fine.spec.height << "x" << fine.spec.depth << "x"
      << fine.channels << " volume to " << (rc.out / "probs.vwt").string() << "\n";
  return exit_ok;
}

int cmd_extract(const run_config& rc, std::ostream& out) {
  if (rc.volume.empty()) throw config_error("--volume is required");
  auto probs = load_volume(rc.volume);
  auto meshes = extract_scene_meshes(probs);
  fs::create_directories(rc.out);
  for (const auto& m : meshes) {
    const fs::path path = rc.out / ("class_" + std::to_string(m.class_id) + "." + rc.format);
    if (rc.format == "ply")
      write_ply(path, m);
    else
      write_obj(path, {m});
    out << "wrote " << path.string() << " (" << m.triangles.size() << " triangles)\n";
  }
  if (meshes.empty()) out << "no class exceeds 0.5 anywhere; nothing written\n";
  return exit_ok;
}

int cmd_evaluate(const run_config& rc, std::ostream& out) {
  if (rc.checkpoint.empty()) throw config_error("--checkpoint is required");
  auto ck = load_checkpoint(rc.checkpoint);
  check_resolution(ck.config, rc.resolution);
  auto data = require_dataset(rc.dataset, rc.split);
  eval_config ec;
  ec.seed = rc.seed;
  ec.surface = rc.surface;
  std::vector<std::vector<instance_record>> per(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    auto fine = superres(model_pass(ck.config, ck.params, ex.image, ex.scene_data.camera), rc.n,
                         ck.config.grid.spacing);
    std::vector<tri_mesh> meshes;
    if (rc.surface) meshes = extract_scene_meshes(fine);
    per[i] = evaluate_scene(argmax_labels(fine), meshes, ex.scene_data, ec, int64_t(i));
  }
  std::vector<instance_record> all;
  for (auto& v : per) all.insert(all.end(), v.begin(), v.end());
  auto report = aggregate(all, ec);
  fs::create_directories(rc.out);
  std::ofstream(rc.out / "report.json") << report_to_json(report).dump(2) << "\n";
  out << report_table(report);
  return exit_ok;
}

int cmd_gradcheck(const run_config& rc, std::ostream& out) {
  gradcheck_options opt;
  opt.seed = rc.seed;
  opt.corrupt = rc.corrupt;
  auto report = run_gradcheck(opt);
  char line[160];
  for (const auto& r : report.results) {
    std::snprintf(line, sizeof line, "%-28s %-5s max_rel_error %.3e  kinked %lld/%lld\n",
                  r.name.c_str(), r.passed ? "PASS" : "FAIL", r.max_rel_error,
                  (long long)r.kinked, (long long)r.entries);
    out << line;
  }
  for (const auto& op : report.uncovered_ops) out << "uncovered op: " << op << "\n";
  if (rc.out != ".") {
    fs::create_directories(rc.out);
    std::ofstream(rc.out / "gradcheck.json") << gradcheck_to_json(report).dump(2) << "\n";
  }
  return report.passed() ? exit_ok : exit_numeric;
}

// Config file values, under the flags.
template <typename T>
void from_file(const json& file, const char* key, const CLI::App& app, const char* flag, T& v) {
  if (file.contains(key) && app.count(flag) == 0) v = file[key].get<T>();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"voxelweave: single-image multi-class voxel reconstruction"};
  app.require_subcommand(1);
  run_config rc;
  fs::path config_path;
  std::string loss_name = "iou", dataset, checkpoint, scene, volume, outdir = ".";

  auto common = [&](CLI::App* s) {
    s->add_option("--config", config_path, "JSON config; flags override its values");
    s->add_option("--seed", rc.seed, "root seed");
    s->add_option("--out", outdir, "output directory");
  };
  auto* gen = app.add_subcommand("generate", "write a procedural dataset");
  common(gen);
  gen->add_option("--scenes", rc.scenes, "number of scenes");
  gen->add_option("--objects", rc.objects, "objects per scene");
  gen->add_option("--resolution", rc.resolution, "label grid points per axis");
  gen->add_option("--test-fraction", rc.test_fraction, "share of scenes in the test split");

  auto* trn = app.add_subcommand("train", "train a model");
  common(trn);
  trn->add_option("--dataset", dataset, "dataset root");
  trn->add_option("--checkpoint", checkpoint, "resume from this checkpoint");
  trn->add_option("--loss", loss_name, "iou, xent, focal or iou-xent");
  trn->add_option("--gamma", rc.loss.gamma, "focal exponent");
  trn->add_option("--resolution", rc.resolution, "output lattice points per axis");
  trn->add_option("--steps", rc.steps, "steps to run");
  trn->add_option("--lr", rc.lr, "Adam learning rate");
  trn->add_option("--batch", rc.batch, "examples per step");

  auto* inf = app.add_subcommand("infer", "predict a probability volume");
  common(inf);
  inf->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  inf->add_option("--scene", scene, "scene directory")->required();
  inf->add_option("--n", rc.n, "super-resolution factor");
  inf->add_option("--resolution", rc.resolution, "expected lattice points per axis");
  inf->add_flag("--debug", rc.debug, "also write the per-pass volumes");

  auto* ext = app.add_subcommand("extract", "mesh every non-void class");
  common(ext);
  ext->add_option("--volume", volume, "probability volume")->required();
  ext->add_option("--format", rc.format, "obj or ply");

  auto* evl = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  common(evl);
  evl->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  evl->add_option("--dataset", dataset, "dataset root")->required();
  evl->add_option("--split", rc.split, "train, test or empty for both");
  evl->add_option("--n", rc.n, "super-resolution factor");
  evl->add_option("--resolution", rc.resolution, "expected lattice points per axis");
  evl->add_flag("!--no-surface", rc.surface, "skip F-score and Chamfer");

  auto* gck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  common(gck);
  gck->add_option("--corrupt", rc.corrupt, "test hook: perturb one check's gradient")
      ->group("");

  try {
    std::vector<std::string> argv(args.rbegin(), args.rend());
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, x;
    int code = app.exit(e, o, x);
    out << o.str();
    err << x.str();
    return code == 0 ? exit_ok : exit_usage;
  }

  CLI::App* sub = app.get_subcommands().front();
  rc.subcommand = sub->get_name();
  try {
    json file = json::object();
    if (!config_path.empty()) file = read_json(config_path);
    from_file(file, "seed", *sub, "--seed", rc.seed);
    from_file(file, "out", *sub, "--out", outdir);
    from_file(file, "dataset", *sub, "--dataset", dataset);
    from_file(file, "checkpoint", *sub, "--checkpoint", checkpoint);
    from_file(file, "scene", *sub, "--scene", scene);
    from_file(file, "volume", *sub, "--volume", volume);
    from_file(file, "loss", *sub, "--loss", loss_name);
    from_file(file, "gamma", *sub, "--gamma", rc.loss.gamma);
    from_file(file, "resolution", *sub, "--resolution", rc.resolution);
    from_file(file, "n", *sub, "--n", rc.n);
    from_file(file, "steps", *sub, "--steps", rc.steps);
    from_file(file, "lr", *sub, "--lr", rc.lr);
    from_file(file, "batch", *sub, "--batch", rc.batch);
    from_file(file, "scenes", *sub, "--scenes", rc.scenes);
    from_file(file, "objects", *sub, "--objects", rc.objects);
    from_file(file, "test_fraction", *sub, "--test-fraction", rc.test_fraction);
    from_file(file, "split", *sub, "--split", rc.split);
    from_file(file, "format", *sub, "--format", rc.format);
    rc.out = outdir;
    rc.dataset = dataset;
    rc.checkpoint = checkpoint;
    rc.scene = scene;
    rc.volume = volume;
    rc.loss.kind = parse_loss_kind(loss_name);
    rc.validate();

    if (rc.subcommand == "generate") return cmd_generate(rc, out);
    if (rc.subcommand == "train") return cmd_train(rc, file, out);
    if (rc.subcommand == "infer") return cmd_infer(rc, out);
    if (rc.subcommand == "extract") return cmd_extract(rc, out);
    if (rc.subcommand == "evaluate") return cmd_evaluate(rc, out);
    return cmd_gradcheck(rc, out);
  } catch (const numeric_error& e) {
    err << "numeric failure: " << e.what() << "\n";
    return exit_numeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace vw

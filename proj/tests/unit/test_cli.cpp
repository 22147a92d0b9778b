#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxelweave/cli.hpp"
#include "voxelweave/mesher.hpp"
#include "voxelweave/pipeline.hpp"

using namespace vw;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args, std::string* output = nullptr) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  if (output) *output = out.str() + err.str();
  return code;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct workspace {
  fs::path root = fs::temp_directory_path() / "vw_cli_test";
  workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~workspace() { fs::remove_all(root); }
  std::string at(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  workspace ws;
  CHECK(run({}) == exit_usage);
  CHECK(run({"bogus"}) == exit_usage);
  CHECK(run({"train", "--dataset", ws.at("missing"), "--out", ws.at("t")}) == exit_usage);
  CHECK(run({"train", "--loss", "hinge", "--dataset", ws.at("missing")}) == exit_usage);
  CHECK(run({"help"}) == exit_usage);
  CHECK(run({"--help"}) == exit_ok);
}

TEST_CASE("cli: generate, train, resume, infer, extract, evaluate") {
  workspace ws;
  const auto data = ws.at("data"), run_dir = ws.at("run");
  REQUIRE(run({"generate", "--out", data, "--scenes", "3", "--seed", "5"}) == exit_ok);
  CHECK(fs::exists(ws.root / "data" / "index.json"));

  // config file values sit under flags
  {
    std::ofstream cfg(ws.root / "cfg.json");
    cfg << R"({"steps": 9, "lr": 0.002, "dataset": ")" << data << R"("})";
  }
  REQUIRE(run({"train", "--config", ws.at("cfg.json"), "--steps", "3", "--out", run_dir}) == exit_ok);
  auto lines = read_lines(ws.root / "run" / "losses.csv");
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "step,loss");
  CHECK(lines[1].rfind("1,", 0) == 0);
  CHECK(lines[3].rfind("3,", 0) == 0);

  const auto ck = (ws.root / "run" / "checkpoint.vwck").string();
  REQUIRE(run({"train", "--config", ws.at("cfg.json"), "--steps", "2", "--out", run_dir,
               "--checkpoint", ck}) == exit_ok);
  lines = read_lines(ws.root / "run" / "losses.csv");
  REQUIRE(lines.size() == 6);
  CHECK(lines[4].rfind("4,", 0) == 0);
  CHECK(lines[5].rfind("5,", 0) == 0);
  CHECK(load_checkpoint(ck).step == 5);

  const auto scene_dir = (ws.root / "data" / "scene_00000").string();
  REQUIRE(run({"infer", "--checkpoint", ck, "--scene", scene_dir, "--out", ws.at("i1")}) == exit_ok);
  auto v1 = load_volume(ws.root / "i1" / "probs.vwt");
  CHECK(v1.spec.width == 32);

  // a CLI pass equals the in-process pass bit for bit
  auto ckp = load_checkpoint(ck);
  auto ex = load_dataset(ws.root / "data")[0];
  auto direct = superres(model_pass(ckp.config, ckp.params, ex.image, ex.scene_data.camera), 1,
                         ckp.config.grid.spacing);
  CHECK(direct.values == v1.values);
  CHECK(direct.spec == v1.spec);

  REQUIRE(run({"infer", "--checkpoint", ck, "--scene", scene_dir, "--n", "2", "--debug", "--out",
               ws.at("i2")}) == exit_ok);
  auto v2 = load_volume(ws.root / "i2" / "probs.vwt");
  CHECK(v2.spec.width == 64);
  CHECK(v2.spec.depth == 64);
  CHECK(fs::exists(ws.root / "i2" / "pass_007.vwt"));
  CHECK(run({"infer", "--checkpoint", ck, "--scene", scene_dir, "--resolution", "64", "--out",
             ws.at("i3")}) == exit_usage);

  REQUIRE(run({"extract", "--volume", ws.at("i2/probs.vwt"), "--out", ws.at("m")}) == exit_ok);
  const auto meshes = extract_scene_meshes(v2);
  for (const auto& m : meshes)
    CHECK(fs::exists(ws.root / "m" / ("class_" + std::to_string(m.class_id) + ".obj")));

  std::string table;
  REQUIRE(run({"evaluate", "--checkpoint", ck, "--dataset", data, "--no-surface", "--out",
               ws.at("e")}, &table) == exit_ok);
  CHECK(fs::exists(ws.root / "e" / "report.json"));
  CHECK(table.find("global IoU") != std::string::npos);

  // diverging optimisation is a numeric failure
  CHECK(run({"train", "--dataset", data, "--steps", "4", "--lr", "1e300", "--out", ws.at("nan")}) ==
        exit_numeric);
}

TEST_CASE("cli: extract writes one file per class and is deterministic") {
  workspace ws;
  grid_spec g;
  g.width = g.height = g.depth = 12;
  g.spacing = 1.0 / 12;
  volume_grid v(g, 3);
  for (int64_t k = 0; k < 12; ++k)
    for (int64_t j = 0; j < 12; ++j)
      for (int64_t i = 0; i < 12; ++i) {
        const int64_t p = g.index(i, j, k);
        const bool a = (vec3d(double(i), double(j), double(k)) - vec3d(3, 6, 6)).norm() < 2.2;
        const bool b = (vec3d(double(i), double(j), double(k)) - vec3d(8, 6, 6)).norm() < 2.2;
        v.at(p, 1) = a ? 0.9 : 0.05;
        v.at(p, 2) = b ? 0.9 : 0.05;
        v.at(p, 0) = 1 - v.at(p, 1) - v.at(p, 2);
      }
  save_volume(ws.root / "v.vwt", v);
  REQUIRE(run({"extract", "--volume", ws.at("v.vwt"), "--out", ws.at("a")}) == exit_ok);
  REQUIRE(run({"extract", "--volume", ws.at("v.vwt"), "--out", ws.at("b")}) == exit_ok);
  int files = 0;
  for (const auto& e : fs::directory_iterator(ws.root / "a")) {
    ++files;
    CHECK(slurp(e.path()) == slurp(ws.root / "b" / e.path().filename()));
  }
  CHECK(files == 2);
  CHECK(fs::exists(ws.root / "a" / "class_1.obj"));
  CHECK(fs::exists(ws.root / "a" / "class_2.obj"));

  volume_grid flat(g, 4, 0.25);
  save_volume(ws.root / "flat.vwt", flat);
  REQUIRE(run({"extract", "--volume", ws.at("flat.vwt"), "--out", ws.at("flat")}) == exit_ok);
  CHECK(fs::is_empty(ws.root / "flat"));
}

TEST_CASE("cli: gradcheck fault injection exits nonzero") {
  std::string out;
  CHECK(run({"gradcheck", "--corrupt", "relu"}, &out) == exit_numeric);
  CHECK(out.find("relu") != std::string::npos);
  CHECK(out.find("FAIL") != std::string::npos);
}

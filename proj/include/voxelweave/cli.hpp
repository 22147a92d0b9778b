#pragma once

// Command-line front end: generate | train | infer | extract | evaluate | gradcheck.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "voxelweave/losses.hpp"

namespace vw {

enum exit_code : int { exit_ok = 0, exit_usage = 2, exit_numeric = 3 };

struct run_config {
  std::string subcommand;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path scene;   // scene directory (scene.json + image.ppm)
  std::filesystem::path volume;  // extract input
  std::filesystem::path out = ".";
  int64_t resolution = 0;  // 0 keeps the model's lattice
  int n = 1;
  loss_spec loss;
  uint64_t seed = 0;
  int64_t steps = 1000;
  double lr = 1e-3;
  int batch = 1;
  int64_t scenes = 100;
  int objects = 1;
  double test_fraction = 0.0;
  std::string split;
  std::string format = "obj";
  bool debug = false;
  bool surface = true;
  std::string corrupt;

  void validate() const;
};

// argv-style entry point; returns the process exit code
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace vw

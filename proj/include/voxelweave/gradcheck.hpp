#pragma once

// Central finite-difference checks of every differentiable op, every loss
// and the full model on a micro config, in double precision.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace vw {

struct gradcheck_options {
  double tolerance = 1e-4;
  double step = 1e-5;
  int trials = 5;  // random shapes per check
  uint64_t seed = 0;
  // Test hook: perturbs the analytic gradient of the named check.
  std::string corrupt;
  // largest tolerated share of kinked entries per check
  double max_kinked_fraction = 0.01;
};

struct gradcheck_result {
  std::string name;
  std::string kind;  // "op", "loss" or "model"
  int trials = 0;
  int64_t entries = 0;  // gradient entries compared
  int64_t failing = 0;  // entries above tolerance
  // entries whose +/- step flips the branch of a relu, leaky_relu, min or
  // max somewhere in the graph; excluded from the error
  int64_t kinked = 0;
  double max_rel_error = 0;
  // location and values of the worst entry
  std::string worst_at;
  double worst_analytic = 0;
  double worst_numeric = 0;
  bool passed = false;
};

struct gradcheck_report {
  std::vector<gradcheck_result> results;
  std::vector<std::string> uncovered_ops;  // registered ops no check exercised
  bool passed() const;
};

// |a - n| / max(|a|, |n|, 1e-6)
double gradcheck_relative_error(double analytic, double numeric);

std::vector<std::string> gradcheck_names();
gradcheck_report run_gradcheck(const gradcheck_options& options);
nlohmann::json gradcheck_to_json(const gradcheck_report& r);

}  // namespace vw

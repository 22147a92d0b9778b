#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace vw {

using vec2d = Eigen::Vector2d;
using vec3d = Eigen::Vector3d;
using mat3d = Eigen::Matrix3d;

// -----------------------------------------------------------------------------
// ERRORS
// -----------------------------------------------------------------------------

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Tensor shapes or grid extents that do not line up.
struct dimension_error : error {
  using error::error;
};
// Caller broke a documented precondition.
struct contract_error : error {
  using error::error;
};
// Argument outside the mathematical domain of the operation.
struct domain_error : error {
  using error::error;
};
// NaN/Inf produced or consumed.
struct numeric_error : error {
  using error::error;
};
struct config_error : error {
  using error::error;
};
struct io_error : error {
  using error::error;
};
// A grid point is contained in more than one object.
struct scene_integrity_error : error {
  using error::error;
};
struct placement_error : error {
  using error::error;
};
struct projection_error : error {
  using error::error;
};

// -----------------------------------------------------------------------------
// RANDOM NUMBERS
// -----------------------------------------------------------------------------

// Seeded generator with portable uniform draws. Named sub-streams derive
// independent generators from one master seed.
class rng {
 public:
  explicit rng(uint64_t seed = 0) : engine_(seed) {}

  static rng stream(uint64_t seed, std::string_view name, uint64_t index = 0);

  uint64_t next_u64() { return engine_(); }
  // uniform in [0, 1)
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // uniform integer in [0, n)
  uint64_t index(uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
};

uint64_t splitmix64(uint64_t x);
uint64_t hash_combine(uint64_t seed, uint64_t value);

// -----------------------------------------------------------------------------
// THREADING
// -----------------------------------------------------------------------------

// Worker count: hardware concurrency capped by VOXELWEAVE_THREADS.
int worker_count();

// Runs body(i) for i in [0, count) across worker_count() threads. Each index
// is processed exactly once; exceptions are rethrown on the calling thread.
void parallel_for(int64_t count, const std::function<void(int64_t)>& body);

}  // namespace vw

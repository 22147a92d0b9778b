#pragma once

// VWT1 tensor container:
//   bytes 0-3   magic "VWT1"
//   u32         rank
//   u64 x rank  dimensions
//   u8          dtype (0 = f32, 1 = f64)
//   payload     row-major elements
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "voxelweave/tensor.hpp"

namespace vw {

enum class dtype : uint8_t { f32 = 0, f64 = 1 };

struct stored_tensor {
  ad::shape_t shape;
  dtype type = dtype::f64;
  std::vector<double> values;  // f32 payloads widen exactly
};

void write_tensor(std::ostream& out, const ad::shape_t& shape, std::span<const double> values,
                  dtype type);
void write_tensor(std::ostream& out, const ad::shape_t& shape, std::span<const float> values);
stored_tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const ad::shape_t& shape,
                 std::span<const double> values, dtype type = dtype::f64);
stored_tensor load_tensor(const std::filesystem::path& path);

}  // namespace vw

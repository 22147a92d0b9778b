#include "voxelweave/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "voxelweave/common.hpp"

namespace vw {

static_assert(std::endian::native == std::endian::little,
              "VWT1 I/O assumes a little-endian host");

namespace {

constexpr char magic[4] = {'V', 'W', 'T', '1'};

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!in) throw io_error("VWT1: truncated header");
  return value;
}

void write_header(std::ostream& out, const ad::shape_t& shape, dtype type) {
  out.write(magic, 4);
  put<uint32_t>(out, uint32_t(shape.size()));
  for (auto d : shape) put<uint64_t>(out, uint64_t(d));
  put<uint8_t>(out, uint8_t(type));
}

}  // namespace

void write_tensor(std::ostream& out, const ad::shape_t& shape, std::span<const double> values,
                  dtype type) {
  if (ad::numel(shape) != int64_t(values.size())) {
    throw dimension_error("write_tensor: value count does not match shape");
  }
  write_header(out, shape, type);
  if (type == dtype::f64) {
    out.write(reinterpret_cast<const char*>(values.data()),
              std::streamsize(values.size() * sizeof(double)));
  } else {
    std::vector<float> narrow(values.begin(), values.end());
    out.write(reinterpret_cast<const char*>(narrow.data()),
              std::streamsize(narrow.size() * sizeof(float)));
  }
  if (!out) throw io_error("VWT1: write failed");
}

void write_tensor(std::ostream& out, const ad::shape_t& shape, std::span<const float> values) {
  if (ad::numel(shape) != int64_t(values.size())) {
    throw dimension_error("write_tensor: value count does not match shape");
  }
  write_header(out, shape, dtype::f32);
  out.write(reinterpret_cast<const char*>(values.data()),
            std::streamsize(values.size() * sizeof(float)));
  if (!out) throw io_error("VWT1: write failed");
}

stored_tensor read_tensor(std::istream& in) {
  char head[4];
  in.read(head, 4);
  if (!in || std::memcmp(head, magic, 4) != 0) throw io_error("VWT1: bad magic");
  stored_tensor t;
  auto rank = get<uint32_t>(in);
  if (rank > 16) throw io_error("VWT1: implausible rank");
  for (uint32_t i = 0; i < rank; ++i) t.shape.push_back(int64_t(get<uint64_t>(in)));
  auto code = get<uint8_t>(in);
  if (code > 1) throw io_error("VWT1: unknown dtype code " + std::to_string(code));
  t.type = dtype(code);
  auto count = size_t(ad::numel(t.shape));
  if (t.type == dtype::f64) {
    t.values.resize(count);
    in.read(reinterpret_cast<char*>(t.values.data()), std::streamsize(count * sizeof(double)));
  } else {
    std::vector<float> narrow(count);
    in.read(reinterpret_cast<char*>(narrow.data()), std::streamsize(count * sizeof(float)));
    t.values.assign(narrow.begin(), narrow.end());
  }
  if (!in) throw io_error("VWT1: truncated payload");
  return t;
}

void save_tensor(const std::filesystem::path& path, const ad::shape_t& shape,
                 std::span<const double> values, dtype type) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  write_tensor(out, shape, values, type);
}

stored_tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace vw

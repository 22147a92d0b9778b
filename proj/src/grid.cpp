#include "voxelweave/grid.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "voxelweave/tensor_io.hpp"

namespace vw {

using nlohmann::json;

void grid_spec::validate() const {
  if (width < 1 || height < 1 || depth < 1) throw config_error("grid: W,H,D must be >= 1");
  if (!(spacing > 0) || !std::isfinite(spacing)) throw config_error("grid: spacing must be > 0");
  for (int a = 0; a < 3; ++a) {
    if (!(offset[a] >= 0 && offset[a] < spacing)) {
      throw config_error("grid: offset components must lie in [0, v)");
    }
  }
}

vec3d grid_spec::position(int64_t point) const {
  int64_t i = point % width;
  int64_t j = (point / width) % height;
  int64_t k = point / (width * height);
  return position(i, j, k);
}

grid_spec grid_spec::with_offset(const vec3d& new_offset) const {
  grid_spec g = *this;
  g.offset = new_offset;
  g.validate();
  return g;
}

decoder_grid_spec::decoder_grid_spec(const grid_spec& parent_grid, int64_t k)
    : parent(parent_grid), factor(k) {
  if (k < 1) throw config_error("decoder grid: factor must be >= 1");
  if (parent.width % k || parent.height % k || parent.depth % k) {
    throw config_error("decoder grid: factor must divide the output resolution");
  }
}

grid_spec decoder_grid_spec::grid() const {
  grid_spec g;
  g.width = parent.width / factor;
  g.height = parent.height / factor;
  g.depth = parent.depth / factor;
  g.spacing = double(factor) * parent.spacing;
  g.offset = double(factor) * parent.offset;
  g.origin = parent.origin;
  return g;
}

volume_grid::volume_grid(const grid_spec& s, int64_t c, double fill)
    : spec(s), channels(c), values(size_t(s.count() * c), fill) {
  if (c < 1) throw config_error("volume_grid: channel count must be >= 1");
}

volume_grid one_hot(const label_grid& labels, int64_t num_classes) {
  volume_grid out(labels.spec, num_classes, 0.0);
  for (int64_t p = 0; p < labels.spec.count(); ++p) {
    int32_t c = labels.labels[size_t(p)];
    if (c < 0 || c >= num_classes) throw contract_error("one_hot: label out of range");
    out.at(p, c) = 1.0;
  }
  return out;
}

label_grid argmax_labels(const volume_grid& probs) {
  label_grid out(probs.spec);
  for (int64_t p = 0; p < probs.spec.count(); ++p) {
    int32_t best = 0;
    for (int64_t c = 1; c < probs.channels; ++c) {
      if (probs.at(p, c) > probs.at(p, best)) best = int32_t(c);
    }
    out.labels[size_t(p)] = best;
  }
  return out;
}

double max_normalization_error(const volume_grid& probs) {
  double worst = 0;
  for (int64_t p = 0; p < probs.spec.count(); ++p) {
    double total = 0;
    for (int64_t c = 0; c < probs.channels; ++c) total += probs.at(p, c);
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return worst;
}

vec3d sample_training_offset(rng& gen, double spacing) {
  if (!(spacing > 0)) throw domain_error("sample_training_offset: spacing must be > 0");
  vec3d o;
  for (int a = 0; a < 3; ++a) {
    o[a] = gen.uniform() * spacing;
    if (o[a] >= spacing) o[a] = std::nextafter(spacing, 0.0);
  }
  return o;
}

std::vector<vec3d> superres_offsets(int n, double spacing) {
  if (n < 1) throw domain_error("superres_offsets: n must be >= 1");
  std::vector<double> axis(static_cast<size_t>(n));
  for (int m = 0; m < n; ++m) axis[size_t(m)] = ((double(m) + 0.5) / double(n)) * spacing;
  std::vector<vec3d> out;
  out.reserve(size_t(n) * n * n);
  for (int mz = 0; mz < n; ++mz)
    for (int my = 0; my < n; ++my)
      for (int mx = 0; mx < n; ++mx) out.emplace_back(axis[mx], axis[my], axis[mz]);
  return out;
}

volume_grid interleave(const std::vector<volume_grid>& passes, int n) {
  if (n < 1) throw domain_error("interleave: n must be >= 1");
  if (passes.size() != size_t(n) * n * n) {
    throw contract_error("interleave: expected n^3 passes");
  }
  const auto& first = passes.front().spec;
  auto expected = superres_offsets(n, first.spacing);
  for (size_t p = 0; p < passes.size(); ++p) {
    const auto& s = passes[p].spec;
    if (s.width != first.width || s.height != first.height || s.depth != first.depth ||
        s.spacing != first.spacing || s.origin != first.origin ||
        passes[p].channels != passes.front().channels) {
      throw contract_error("interleave: passes disagree on grid layout");
    }
    if (s.offset != expected[p]) {
      throw contract_error("interleave: pass offsets are not the super-resolution offsets");
    }
  }
  grid_spec fine;
  fine.width = first.width * n;
  fine.height = first.height * n;
  fine.depth = first.depth * n;
  fine.spacing = first.spacing / double(n);
  fine.offset = expected.front();
  fine.origin = first.origin;
  const int64_t channels = passes.front().channels;
  volume_grid out(fine, channels);
  for (int mz = 0; mz < n; ++mz)
    for (int my = 0; my < n; ++my)
      for (int mx = 0; mx < n; ++mx) {
        const auto& pass = passes[size_t((mz * n + my) * n + mx)];
        for (int64_t k = 0; k < first.depth; ++k)
          for (int64_t j = 0; j < first.height; ++j)
            for (int64_t i = 0; i < first.width; ++i)
              for (int64_t c = 0; c < channels; ++c)
                out.at(n * i + mx, n * j + my, n * k + mz, c) = pass.at(i, j, k, c);
      }
  return out;
}

// -----------------------------------------------------------------------------
// SERIALIZATION
// -----------------------------------------------------------------------------

json spec_to_json(const grid_spec& s) {
  return json{{"W", s.width},
              {"H", s.height},
              {"D", s.depth},
              {"spacing", s.spacing},
              {"offset", {s.offset.x(), s.offset.y(), s.offset.z()}},
              {"origin", {s.origin.x(), s.origin.y(), s.origin.z()}}};
}

grid_spec spec_from_json(const json& j) {
  grid_spec s;
  s.width = j.at("W").get<int64_t>();
  s.height = j.at("H").get<int64_t>();
  s.depth = j.at("D").get<int64_t>();
  s.spacing = j.at("spacing").get<double>();
  for (int a = 0; a < 3; ++a) {
    s.offset[a] = j.at("offset").at(a).get<double>();
    s.origin[a] = j.at("origin").at(a).get<double>();
  }
  s.validate();
  return s;
}

namespace {

void write_sidecar(const std::filesystem::path& path, json j) {
  std::ofstream out(path.string() + ".json");
  if (!out) throw io_error("cannot write sidecar for " + path.string());
  out << j.dump(2) << "\n";
}

json read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw io_error("missing grid sidecar " + path.string() + ".json");
  return json::parse(in);
}

}  // namespace

void save_volume(const std::filesystem::path& path, const volume_grid& grid) {
  const auto& s = grid.spec;
  save_tensor(path, {grid.channels, s.depth, s.height, s.width}, grid.values, dtype::f64);
  write_sidecar(path, json{{"grid", spec_to_json(s)},
                           {"channels", grid.channels},
                           {"layout", "CDHW"},
                           {"kind", "probabilities"}});
}

volume_grid load_volume(const std::filesystem::path& path) {
  auto meta = read_sidecar(path);
  auto t = load_tensor(path);
  volume_grid g(spec_from_json(meta.at("grid")), meta.at("channels").get<int64_t>());
  if (t.shape != ad::shape_t{g.channels, g.spec.depth, g.spec.height, g.spec.width}) {
    throw io_error("volume payload shape disagrees with its sidecar");
  }
  g.values = std::move(t.values);
  return g;
}

void save_labels(const std::filesystem::path& path, const label_grid& grid) {
  const auto& s = grid.spec;
  std::vector<double> values(grid.labels.begin(), grid.labels.end());
  save_tensor(path, {s.depth, s.height, s.width}, values, dtype::f32);
  write_sidecar(path, json{{"grid", spec_to_json(s)}, {"layout", "DHW"}, {"kind", "labels"}});
}

label_grid load_labels(const std::filesystem::path& path) {
  auto meta = read_sidecar(path);
  auto t = load_tensor(path);
  label_grid g(spec_from_json(meta.at("grid")));
  if (t.shape != ad::shape_t{g.spec.depth, g.spec.height, g.spec.width}) {
    throw io_error("label payload shape disagrees with its sidecar");
  }
  for (size_t i = 0; i < g.labels.size(); ++i) g.labels[i] = int32_t(t.values[i]);
  return g;
}

}  // namespace vw

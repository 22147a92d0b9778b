#include "voxelweave/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "voxelweave/tensor_io.hpp"

namespace vw {

using nlohmann::json;
using ad::shape_t;
using ad::tensor;

// -----------------------------------------------------------------------------
// CONFIG
// -----------------------------------------------------------------------------

int64_t model_config::seed_width() const {
  return image_width >> encoder_channels.size();
}

int64_t model_config::seed_height() const {
  return image_height >> encoder_channels.size();
}

int64_t model_config::seed_channels() const {
  return encoder_channels.empty() ? 0 : encoder_channels.back() / seed_depth;
}

std::vector<int64_t> model_config::stage_resolution() const {
  std::vector<int64_t> out;
  int64_t d = seed_depth;
  for (const auto& st : decoder) out.push_back(d *= st.upscale);
  return out;
}

int model_config::skip_channels(size_t stage) const {
  const auto& st = decoder.at(stage);
  return st.skip_stage < 0 ? 0 : (3 * st.channels) / 4;
}

model_config model_config::without_skips() const {
  model_config c = *this;
  for (auto& st : c.decoder) st.skip_stage = -1;
  return c;
}

void model_config::validate() const {
  const int stages = int(encoder_channels.size());
  if (stages < 1) throw config_error("model: at least one encoder stage required");
  if (image_width < 1 || image_height < 1) throw config_error("model: bad image size");
  if (image_width % (1 << stages) || image_height % (1 << stages))
    throw config_error("model: image size must be divisible by 2^stages");
  for (int c : encoder_channels)
    if (c < 1) throw config_error("model: encoder channels must be >= 1");
  if (seed_depth < 1 || encoder_channels.back() % seed_depth)
    throw config_error("model: seed depth must divide the last encoder width");
  if (num_classes < 2) throw config_error("model: at least two classes required");
  grid.validate();
  int64_t factor = 1;
  for (const auto& st : decoder) {
    if (st.upscale < 1) throw config_error("model: upscale factor must be >= 1");
    if (st.mix_kernel < 1 || st.mix_kernel % 2 == 0)
      throw config_error("model: mixing kernel must be odd");
    if (st.mix_convs < 1) throw config_error("model: each decoder stage needs a mixing conv");
    if (st.channels < 1) throw config_error("model: decoder channels must be >= 1");
    if (st.skip_stage < -1 || st.skip_stage >= stages)
      throw config_error("model: skip source references a missing encoder stage");
    if (st.skip_stage >= 0 && (3 * st.channels) / 4 < 1)
      throw config_error("model: skip would carry zero channels");
    factor *= st.upscale;
  }
  if (seed_width() * factor != grid.width || seed_height() * factor != grid.height ||
      int64_t(seed_depth) * factor != grid.depth)
    throw config_error("model: decoder upscaling does not reach the grid resolution");
}

json model_config_to_json(const model_config& c) {
  json dec = json::array();
  for (const auto& st : c.decoder)
    dec.push_back({{"upscale", st.upscale},
                   {"mix_kernel", st.mix_kernel},
                   {"mix_convs", st.mix_convs},
                   {"channels", st.channels},
                   {"skip_stage", st.skip_stage}});
  return json{{"image_width", c.image_width},
              {"image_height", c.image_height},
              {"encoder_channels", c.encoder_channels},
              {"seed_depth", c.seed_depth},
              {"decoder", dec},
              {"num_classes", c.num_classes},
              {"grid", spec_to_json(c.grid)},
              {"offset_channels", c.offset_channels},
              {"head_scale", c.head_scale}};
}

model_config model_config_from_json(const json& j) {
  model_config c;
  c.image_width = j.value("image_width", c.image_width);
  c.image_height = j.value("image_height", c.image_height);
  if (j.contains("encoder_channels"))
    c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.seed_depth = j.value("seed_depth", c.seed_depth);
  if (j.contains("decoder")) {
    c.decoder.clear();
    for (const auto& d : j.at("decoder")) {
      decoder_stage_config st;
      st.upscale = d.value("upscale", st.upscale);
      st.mix_kernel = d.value("mix_kernel", st.mix_kernel);
      st.mix_convs = d.value("mix_convs", st.mix_convs);
      st.channels = d.value("channels", st.channels);
      st.skip_stage = d.value("skip_stage", st.skip_stage);
      c.decoder.push_back(st);
    }
  }
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("grid")) c.grid = spec_from_json(j.at("grid"));
  c.offset_channels = j.value("offset_channels", c.offset_channels);
  c.head_scale = j.value("head_scale", c.head_scale);
  c.validate();
  return c;
}

// -----------------------------------------------------------------------------
// PARAMETERS
// -----------------------------------------------------------------------------

namespace {

struct layout_entry {
  std::string name;
  shape_t shape;
  int64_t fan_in = 0;  // 0 for biases
  double scale = 1.0;
};

std::vector<layout_entry> full_layout(const model_config& c) {
  c.validate();
  std::vector<layout_entry> out;
  auto conv = [&](const std::string& prefix, shape_t wshape, int64_t fan_in, int64_t bias_len,
                  double scale = 1.0) {
    out.push_back({prefix + ".weight", std::move(wshape), fan_in, scale});
    out.push_back({prefix + ".bias", {bias_len}, 0, 1.0});
  };
  int64_t in = 3;
  for (size_t s = 0; s < c.encoder_channels.size(); ++s) {
    const int64_t co = c.encoder_channels[s];
    const std::string p = "enc" + std::to_string(s);
    conv(p + ".conv0", {co, in, 3, 3}, in * 9, co);
    conv(p + ".conv1", {co, co, 3, 3}, co * 9, co);
    in = co;
  }
  in = c.seed_channels();
  for (size_t d = 0; d < c.decoder.size(); ++d) {
    const auto& st = c.decoder[d];
    const std::string p = "dec" + std::to_string(d);
    const int64_t f = st.upscale, cd = st.channels;
    // one input voxel per output voxel when kernel == stride
    conv(p + ".up", {in, cd, f, f, f}, in, cd);
    const int64_t skip = c.skip_channels(d);
    if (skip > 0) {
      const int64_t cs = c.encoder_channels[size_t(st.skip_stage)];
      conv(p + ".skip", {skip, cs, 1, 1}, cs, skip);
    }
    int64_t mix_in = cd + skip + (c.offset_channels ? 3 : 0);
    const int64_t k = st.mix_kernel;
    for (int m = 0; m < st.mix_convs; ++m) {
      conv(p + ".mix" + std::to_string(m), {cd, mix_in, k, k, k}, mix_in * k * k * k, cd);
      mix_in = cd;
    }
    in = cd;
  }
  conv("head", {c.num_classes, in, 1, 1, 1}, in, c.num_classes, c.head_scale);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, shape_t>> parameter_layout(const model_config& config) {
  std::vector<std::pair<std::string, shape_t>> out;
  for (auto& e : full_layout(config)) out.emplace_back(e.name, e.shape);
  return out;
}

template <typename T>
const tensor<T>& model_params<T>::at(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e.value;
  throw contract_error("model: missing parameter '" + name + "'");
}

template <typename T>
int64_t model_params<T>::total_size() const {
  int64_t n = 0;
  for (const auto& e : entries) n += e.value.numel();
  return n;
}

template <typename T>
void model_params<T>::zero_grad() {
  for (auto& e : entries) e.value.zero_grad();
}

template <typename T>
model_params<T> init_params(const model_config& config, rng& gen) {
  model_params<T> out;
  for (const auto& e : full_layout(config)) {
    auto t = tensor<T>::zeros(e.shape, true);
    if (e.fan_in > 0) {
      const double bound = std::sqrt(6.0 / double(e.fan_in)) * e.scale;
      for (auto& x : t.mutable_values()) x = T(gen.uniform(-bound, bound));
    }
    out.entries.push_back({e.name, t});
  }
  return out;
}

template <typename To, typename From>
model_params<To> cast_params(const model_params<From>& params) {
  model_params<To> out;
  for (const auto& e : params.entries) out.entries.push_back({e.name, ad::cast<To>(e.value, true)});
  return out;
}

namespace {

template <typename T>
void check_layout(const model_config& config, const model_params<T>& params) {
  auto layout = parameter_layout(config);
  if (layout.size() != params.entries.size())
    throw config_error("model: parameter set does not match the config");
  for (size_t i = 0; i < layout.size(); ++i)
    if (layout[i].first != params.entries[i].name ||
        layout[i].second != params.entries[i].value.shape())
      throw config_error("model: parameter '" + layout[i].first + "' has the wrong name or shape");
}

template <typename T>
tensor<T> conv2d_block(const model_params<T>& p, const std::string& name, const tensor<T>& x,
                       int stride, int padding) {
  return ad::bias_add(ad::conv2d(x, p.at(name + ".weight"), stride, padding), p.at(name + ".bias"));
}

template <typename T>
tensor<T> conv3d_block(const model_params<T>& p, const std::string& name, const tensor<T>& x,
                       int padding) {
  return ad::bias_add(ad::conv3d(x, p.at(name + ".weight"), 1, padding), p.at(name + ".bias"));
}

}  // namespace

// -----------------------------------------------------------------------------
// FORWARD
// -----------------------------------------------------------------------------

template <typename T>
std::vector<tensor<T>> encode(const model_config& config, const model_params<T>& params,
                              const tensor<T>& image) {
  if (image.shape() != shape_t{1, 3, config.image_height, config.image_width})
    throw dimension_error("encode: expected image " +
                          ad::shape_string({1, 3, config.image_height, config.image_width}) +
                          ", got " + ad::shape_string(image.shape()));
  std::vector<tensor<T>> out;
  tensor<T> x = image;
  for (size_t s = 0; s < config.encoder_channels.size(); ++s) {
    const std::string p = "enc" + std::to_string(s);
    x = ad::leaky_relu(conv2d_block(params, p + ".conv0", x, 2, 1));
    x = ad::leaky_relu(conv2d_block(params, p + ".conv1", x, 1, 1));
    out.push_back(x);
  }
  return out;
}

template <typename T>
tensor<T> ray_skip_gather(const model_config& config, const model_params<T>& params, size_t stage,
                          const tensor<T>& feature, const pinhole_camera& camera,
                          const decoder_grid_spec& grid) {
  const auto& st = config.decoder.at(stage);
  if (st.skip_stage < 0) throw contract_error("ray_skip_gather: stage has no skip connection");
  if (feature.rank() != 4 || feature.dim(0) != 1)
    throw dimension_error("ray_skip_gather: feature must be [1,C,H,W]");
  const std::string p = "dec" + std::to_string(stage) + ".skip";
  tensor<T> reduced = conv2d_block(params, p, feature, 1, 0);
  const int64_t r = reduced.dim(1), h = reduced.dim(2), w = reduced.dim(3);
  auto coords = project_grid(camera, grid.grid(), int(w), int(h));
  return ad::bilinear_sample2d(ad::reshape(reduced, {r, h, w}),
                               std::span<const ad::sample_coord>(coords));
}

template <typename T>
tensor<T> decode(const model_config& config, const model_params<T>& params,
                 const std::vector<tensor<T>>& features, const vec3d& offset,
                 const pinhole_camera& camera) {
  const double v = config.grid.spacing;
  for (int a = 0; a < 3; ++a)
    if (!(offset[a] >= 0 && offset[a] < v)) throw contract_error("decode: offset outside [0, v)");
  if (features.size() != config.encoder_channels.size())
    throw dimension_error("decode: one feature map per encoder stage required");
  const grid_spec out_grid = config.grid.with_offset(offset);

  const auto& last = features.back();
  tensor<T> x = ad::reshape(last, {1, config.seed_channels(), config.seed_depth, last.dim(2),
                                   last.dim(3)});
  for (size_t d = 0; d < config.decoder.size(); ++d) {
    const auto& st = config.decoder[d];
    const std::string p = "dec" + std::to_string(d);
    x = ad::conv3d_transposed(x, params.at(p + ".up.weight"), st.upscale, 0);
    x = ad::leaky_relu(ad::bias_add(x, params.at(p + ".up.bias")));
    const int64_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
    std::vector<tensor<T>> parts{x};
    if (st.skip_stage >= 0) {
      decoder_grid_spec dg(out_grid, config.grid.width / W);
      tensor<T> g = ray_skip_gather(config, params, d, features[size_t(st.skip_stage)], camera, dg);
      parts.push_back(ad::reshape(ad::permute(g, {1, 0}), {1, g.dim(1), D, H, W}));
    }
    if (config.offset_channels) {
      std::vector<T> vals(size_t(3 * D * H * W));
      for (int a = 0; a < 3; ++a)
        std::fill(vals.begin() + a * D * H * W, vals.begin() + (a + 1) * D * H * W,
                  T(offset[a] / v));
      parts.emplace_back(shape_t{1, 3, D, H, W}, std::move(vals));
    }
    x = parts.size() == 1 ? x : ad::concat(parts, 1);
    for (int m = 0; m < st.mix_convs; ++m)
      x = ad::leaky_relu(conv3d_block(params, p + ".mix" + std::to_string(m), x, st.mix_kernel / 2));
  }
  x = conv3d_block(params, "head", x, 0);
  return ad::reshape(x, {config.num_classes, out_grid.count()});
}

template <typename T>
tensor<T> forward_probs(const model_config& config, const model_params<T>& params,
                        const tensor<T>& image, const vec3d& offset, const pinhole_camera& camera) {
  check_layout(config, params);
  return ad::softmax(decode(config, params, encode(config, params, image), offset, camera), 0);
}

template <typename T>
volume_grid predict_probs(const model_config& config, const model_params<T>& params,
                          const tensor<T>& image, const pinhole_camera& camera,
                          const vec3d& offset) {
  auto probs = forward_probs(config, params, image, offset, reconstruction_camera(camera));
  volume_grid out(config.grid.with_offset(offset), config.num_classes);
  auto vals = probs.values();
  std::copy(vals.begin(), vals.end(), out.values.begin());
  return out;
}

template <typename T>
tensor<T> image_tensor(int width, int height, const std::vector<float>& planar) {
  if (int64_t(planar.size()) != int64_t(3) * width * height)
    throw dimension_error("image_tensor: expected 3 * width * height values");
  return tensor<T>({1, 3, height, width}, std::vector<T>(planar.begin(), planar.end()));
}

pinhole_camera reconstruction_camera(const pinhole_camera& camera) {
  pinhole_camera c = camera;
  c.extrinsic = rigid_transform::identity();
  return c;
}

// -----------------------------------------------------------------------------
// CHECKPOINTS
// -----------------------------------------------------------------------------

namespace {

constexpr char ck_magic[4] = {'V', 'W', 'C', 'K'};
constexpr uint32_t ck_version = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const checkpoint& ck) {
  check_layout(ck.config, ck.params);
  const bool moments = !ck.adam.empty();
  if (moments && ck.adam.size() != ck.params.entries.size())
    throw contract_error("save_checkpoint: one optimizer state per parameter required");
  json params = json::array();
  for (const auto& e : ck.params.entries) params.push_back({{"name", e.name}, {"shape", e.value.shape()}});
  json adam{{"has_moments", moments}, {"steps", json::array()}};
  for (const auto& s : ck.adam) adam["steps"].push_back(s.step);
  const std::string manifest =
      json{{"config", model_config_to_json(ck.config)}, {"step", ck.step},
           {"parameters", params}, {"adam", adam}}
          .dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw io_error("cannot write checkpoint " + path.string());
    out.write(ck_magic, 4);
    uint32_t version = ck_version;
    uint64_t len = manifest.size();
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(manifest.data(), std::streamsize(len));
    for (const auto& e : ck.params.entries) write_tensor(out, e.value.shape(), e.value.values());
    for (size_t i = 0; moments && i < ck.adam.size(); ++i) {
      const auto& shape = ck.params.entries[i].value.shape();
      const auto n = size_t(ad::numel(shape));
      std::vector<float> m = ck.adam[i].m, v = ck.adam[i].v;
      m.resize(n, 0.0f);
      v.resize(n, 0.0f);
      write_tensor(out, shape, std::span<const float>(m));
      write_tensor(out, shape, std::span<const float>(v));
    }
    if (!out) throw io_error("checkpoint write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint " + path.string());
  char magic[4];
  uint32_t version = 0;
  uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || std::memcmp(magic, ck_magic, 4) != 0) throw io_error("not a checkpoint: " + path.string());
  if (version != ck_version) throw io_error("unsupported checkpoint version");
  if (len > (uint64_t(1) << 30)) throw io_error("checkpoint manifest too large");
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw io_error("truncated checkpoint manifest");
  const json manifest = json::parse(text);

  checkpoint ck;
  ck.config = model_config_from_json(manifest.at("config"));
  ck.step = manifest.at("step").get<int64_t>();
  const auto layout = parameter_layout(ck.config);
  const auto& names = manifest.at("parameters");
  if (names.size() != layout.size()) throw io_error("checkpoint parameter count mismatch");
  auto read_as = [&](const shape_t& shape) {
    stored_tensor t = read_tensor(in);
    if (t.shape != shape) throw io_error("checkpoint tensor has the wrong shape");
    return t;
  };
  for (size_t i = 0; i < layout.size(); ++i) {
    if (names[i].at("name").get<std::string>() != layout[i].first)
      throw io_error("checkpoint parameter '" + layout[i].first + "' missing");
    stored_tensor t = read_as(layout[i].second);
    ck.params.entries.push_back(
        {layout[i].first, tensor<float>(t.shape, std::vector<float>(t.values.begin(), t.values.end()), true)});
  }
  const auto& adam = manifest.at("adam");
  if (adam.at("has_moments").get<bool>()) {
    const auto& steps = adam.at("steps");
    for (size_t i = 0; i < layout.size(); ++i) {
      ad::adam_state<float> s;
      auto m = read_as(layout[i].second), v = read_as(layout[i].second);
      s.m.assign(m.values.begin(), m.values.end());
      s.v.assign(v.values.begin(), v.values.end());
      s.step = steps.at(i).get<int64_t>();
      ck.adam.push_back(std::move(s));
    }
  }
  return ck;
}

// -----------------------------------------------------------------------------
// INSTANTIATIONS
// -----------------------------------------------------------------------------

#define VW_MODEL_INSTANTIATE(T)                                                                \
  template struct model_params<T>;                                                             \
  template model_params<T> init_params<T>(const model_config&, rng&);                          \
  template std::vector<tensor<T>> encode<T>(const model_config&, const model_params<T>&,       \
                                            const tensor<T>&);                                 \
  template tensor<T> ray_skip_gather<T>(const model_config&, const model_params<T>&, size_t,   \
                                        const tensor<T>&, const pinhole_camera&,               \
                                        const decoder_grid_spec&);                             \
  template tensor<T> decode<T>(const model_config&, const model_params<T>&,                    \
                               const std::vector<tensor<T>>&, const vec3d&,                    \
                               const pinhole_camera&);                                         \
  template tensor<T> forward_probs<T>(const model_config&, const model_params<T>&,             \
                                      const tensor<T>&, const vec3d&, const pinhole_camera&);  \
  template volume_grid predict_probs<T>(const model_config&, const model_params<T>&,           \
                                        const tensor<T>&, const pinhole_camera&,               \
                                        const vec3d&);                                         \
  template tensor<T> image_tensor<T>(int, int, const std::vector<float>&);

VW_MODEL_INSTANTIATE(float)
VW_MODEL_INSTANTIATE(double)
#undef VW_MODEL_INSTANTIATE

template model_params<double> cast_params<double, float>(const model_params<float>&);
template model_params<float> cast_params<float, double>(const model_params<double>&);
template model_params<float> cast_params<float, float>(const model_params<float>&);
template model_params<double> cast_params<double, double>(const model_params<double>&);

}  // namespace vw

#include "nwm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "nwm/error.hpp"

namespace nwm {

using nlohmann::json;

namespace {

const char* activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "none"; }

Activation parse_activation(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "' (expected none|tanh)");
}

int down_stride(const ModelConfig& c, int layer) { return layer < c.upsample_stages ? 2 : 1; }

}  // namespace

void ModelConfig::validate() const {
  if (upsample_stages < 1 || upsample_stages > 3) {
    throw ConfigError("upsample_stages must be in [1, 3], got " + std::to_string(upsample_stages));
  }
  const int factor = 1 << upsample_stages;
  if (canonical_height <= 0 || canonical_width <= 0) {
    throw ConfigError("canonical dimensions must be positive");
  }
  if (canonical_height % factor != 0 || canonical_width % factor != 0) {
    throw ConfigError("canonical dimensions " + std::to_string(canonical_width) + "x" +
                      std::to_string(canonical_height) + " must be divisible by " +
                      std::to_string(factor));
  }
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw ConfigError("kernel_size must be odd and positive, got " + std::to_string(kernel_size));
  }
  if (latent_channels <= 0) throw ConfigError("latent_channels must be positive");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"canonical_height", c.canonical_height},
           {"canonical_width", c.canonical_width},
           {"latent_channels", c.latent_channels},
           {"kernel_size", c.kernel_size},
           {"upsample_stages", c.upsample_stages},
           {"seed", c.seed},
           {"activation", activation_name(c.activation)}};
}

void from_json(const json& j, ModelConfig& c) {
  try {
    ModelConfig d;
    c.canonical_height = j.value("canonical_height", d.canonical_height);
    c.canonical_width = j.value("canonical_width", d.canonical_width);
    c.latent_channels = j.value("latent_channels", d.latent_channels);
    c.kernel_size = j.value("kernel_size", d.kernel_size);
    c.upsample_stages = j.value("upsample_stages", d.upsample_stages);
    c.seed = j.value("seed", d.seed);
    c.activation = parse_activation(j.value("activation", std::string("none")));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  c.validate();
  const int k = c.kernel_size, L = c.latent_channels;
  std::vector<std::pair<std::string, Shape>> out;
  for (const char* branch : {"up_image", "up_mark"}) {
    for (int i = 0; i < c.upsample_stages; ++i) {
      const int in = i == 0 ? kImageChannels : L;
      out.emplace_back(std::string(branch) + "." + std::to_string(i), Shape{k, k, L, in});
    }
  }
  out.emplace_back("blend.ws", Shape{1, 1, 1, L});
  out.emplace_back("blend.we", Shape{1, 1, 1, L});
  const int down[4] = {L, kHiddenWide, kHiddenNarrow, kImageChannels};
  for (int i = 0; i < 3; ++i) {
    out.emplace_back("down." + std::to_string(i), Shape{k, k, down[i], down[i + 1]});
  }
  const int ext[4] = {kImageChannels, kHiddenWide, kHiddenNarrow, kImageChannels};
  for (int i = 0; i < 3; ++i) {
    out.emplace_back("extract." + std::to_string(i), Shape{k, k, ext[i], ext[i + 1]});
  }
  return out;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_layout(config)) total += shape.size();
  return total;
}

std::size_t WatermarkModel::parameter_count() const {
  std::size_t total = 0;
  params.for_each([&](const Parameter& p) { total += p.value.size(); });
  return total;
}

template <class T>
template <class U>
NetworkParams<U> NetworkParams<T>::cast() const {
  auto conv = [](const BasicParameter<T>& p) {
    return BasicParameter<U>(p.name, p.value.template cast<U>());
  };
  NetworkParams<U> out;
  for (const auto& p : up_image) out.up_image.push_back(conv(p));
  for (const auto& p : up_mark) out.up_mark.push_back(conv(p));
  out.blend_ws = conv(blend_ws);
  out.blend_we = conv(blend_we);
  for (const auto& p : down) out.down.push_back(conv(p));
  for (const auto& p : extract) out.extract.push_back(conv(p));
  return out;
}

template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;

WatermarkModel build_model(const ModelConfig& config) {
  const auto layout = parameter_layout(config);
  std::mt19937_64 rng(config.seed);
  // 53-bit uniform in [0, 1); avoids std::uniform_real_distribution so the
  // stream is identical across standard libraries.
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  WatermarkModel model;
  model.config = config;
  std::size_t idx = 0;
  auto make = [&](bool is_blend, bool transposed) {
    const auto& [name, shape] = layout[idx++];
    Tensor value(shape);
    if (is_blend) {
      value.fill(1.0f);
    } else {
      const int fan_in = shape[0] * shape[1] * (transposed ? shape[3] : shape[2]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (float& v : value.data()) v = static_cast<float>((2.0 * uniform() - 1.0) * bound);
    }
    return Parameter(name, std::move(value));
  };
  for (int i = 0; i < config.upsample_stages; ++i) model.params.up_image.push_back(make(false, true));
  for (int i = 0; i < config.upsample_stages; ++i) model.params.up_mark.push_back(make(false, true));
  model.params.blend_ws = make(true, false);
  model.params.blend_we = make(true, false);
  for (int i = 0; i < 3; ++i) model.params.down.push_back(make(false, false));
  for (int i = 0; i < 3; ++i) model.params.extract.push_back(make(false, false));
  return model;
}

Tensor prepare_watermark(const Tensor& raw) {
  if (raw.empty()) throw ConfigError("watermark is empty");
  const auto [lo, hi] = std::minmax_element(raw.data().begin(), raw.data().end());
  if (*lo < 0.0f) throw ConfigError("watermark has negative pixel values");
  if (*hi <= 0.0f) throw ConfigError("watermark is all zero");
  Tensor out(raw.shape());
  const float scale = kWatermarkPeak / *hi;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * scale;
  return out;
}

template <class T>
BoundParams bind_params(BasicTape<T>& tape, NetworkParams<T>& params) {
  BoundParams b;
  for (auto& p : params.up_image) b.up_image.push_back(tape.parameter(p));
  for (auto& p : params.up_mark) b.up_mark.push_back(tape.parameter(p));
  b.blend_ws = tape.parameter(params.blend_ws);
  b.blend_we = tape.parameter(params.blend_we);
  for (auto& p : params.down) b.down.push_back(tape.parameter(p));
  for (auto& p : params.extract) b.extract.push_back(tape.parameter(p));
  return b;
}

template <class T>
BoundParams bind_constants(BasicTape<T>& tape, const NetworkParams<T>& params) {
  BoundParams b;
  for (const auto& p : params.up_image) b.up_image.push_back(tape.constant(p.value));
  for (const auto& p : params.up_mark) b.up_mark.push_back(tape.constant(p.value));
  b.blend_ws = tape.constant(params.blend_ws.value);
  b.blend_we = tape.constant(params.blend_we.value);
  for (const auto& p : params.down) b.down.push_back(tape.constant(p.value));
  for (const auto& p : params.extract) b.extract.push_back(tape.constant(p.value));
  return b;
}

namespace {

void check_canonical(const ModelConfig& c, const Shape& s, const char* what) {
  if (s.h() != c.canonical_height || s.w() != c.canonical_width || s.c() != kImageChannels) {
    throw ShapeError(std::string(what) + " shape " + to_string(s) + " does not match canonical (n, " +
                     std::to_string(c.canonical_height) + ", " + std::to_string(c.canonical_width) +
                     ", 3)");
  }
}

template <class T>
Var activate(BasicTape<T>& tape, const ModelConfig& c, Var x) {
  return c.activation == Activation::tanh ? tape.tanh(x) : x;
}

template <class T>
Var upsample(BasicTape<T>& tape, const ModelConfig& c, const std::vector<Var>& kernels, Var x) {
  for (Var k : kernels) x = activate(tape, c, tape.conv2d_transpose(x, k, 2));
  return x;
}

}  // namespace

template <class T>
Var record_embed(BasicTape<T>& tape, const ModelConfig& c, const BoundParams& p, Var images,
                 Var watermark) {
  check_canonical(c, tape.value(images).shape(), "image");
  check_canonical(c, tape.value(watermark).shape(), "watermark");
  const Var lifted_image = upsample(tape, c, p.up_image, images);
  const Var lifted_mark = upsample(tape, c, p.up_mark, watermark);
  Var x = tape.blend_conv2d(lifted_image, lifted_mark, p.blend_ws, p.blend_we, p.down[0],
                            down_stride(c, 0));
  x = activate(tape, c, x);
  x = tape.avg_pool(x, 1);
  x = activate(tape, c, tape.conv2d(x, p.down[1], down_stride(c, 1)));
  x = tape.avg_pool(x, 1);
  return tape.conv2d(x, p.down[2], down_stride(c, 2));
}

template <class T>
Var record_extract(BasicTape<T>& tape, const ModelConfig& c, const BoundParams& p,
                   Var watermarked) {
  check_canonical(c, tape.value(watermarked).shape(), "watermarked image");
  Var x = tape.avg_pool(watermarked, 1);
  x = activate(tape, c, tape.conv2d(x, p.extract[0], 1));
  x = activate(tape, c, tape.conv2d(x, p.extract[1], 1));
  return tape.conv2d(x, p.extract[2], 1);
}

template <class T>
LossVars record_loss(BasicTape<T>& tape, const ModelConfig& c, const BoundParams& p,
                     const BasicTensor<T>& images, const BasicTensor<T>& watermark) {
  if (watermark.shape().n() != 1) throw ShapeError("record_loss: watermark must have batch 1");
  LossVars v;
  const Var img = tape.constant(images);
  const Var mark = tape.constant(watermark);
  const Var target =
      images.shape().n() == 1 ? mark : tape.constant(repeat_batch(watermark, images.shape().n()));
  v.watermarked = record_embed(tape, c, p, img, mark);
  v.extracted = record_extract(tape, c, p, v.watermarked);
  v.image_term = tape.mse(v.watermarked, img);
  v.mark_term = tape.mse(v.extracted, target);
  v.total = tape.add(v.image_term, v.mark_term);
  return v;
}

#define NWM_INSTANTIATE_GRAPH(T)                                                              \
  template BoundParams bind_params(BasicTape<T>&, NetworkParams<T>&);                         \
  template BoundParams bind_constants(BasicTape<T>&, const NetworkParams<T>&);                \
  template Var record_embed(BasicTape<T>&, const ModelConfig&, const BoundParams&, Var, Var); \
  template Var record_extract(BasicTape<T>&, const ModelConfig&, const BoundParams&, Var);    \
  template LossVars record_loss(BasicTape<T>&, const ModelConfig&, const BoundParams&,        \
                                const BasicTensor<T>&, const BasicTensor<T>&);

NWM_INSTANTIATE_GRAPH(float)
NWM_INSTANTIATE_GRAPH(double)
#undef NWM_INSTANTIATE_GRAPH

Tensor embed(const WatermarkModel& model, const Tensor& images, const Tensor& watermark) {
  Tape tape;
  const BoundParams p = bind_constants(tape, model.params);
  const Var out =
      record_embed(tape, model.config, p, tape.constant(images), tape.constant(watermark));
  return tape.value(out);
}

Tensor extract(const WatermarkModel& model, const Tensor& watermarked) {
  Tape tape;
  const BoundParams p = bind_constants(tape, model.params);
  return tape.value(record_extract(tape, model.config, p, tape.constant(watermarked)));
}

LossTerms evaluate_loss(const WatermarkModel& model, const Tensor& images,
                        const Tensor& watermark) {
  Tape tape;
  const BoundParams p = bind_constants(tape, model.params);
  const LossVars v = record_loss(tape, model.config, p, images, watermark);
  return {tape.scalar(v.total), tape.scalar(v.image_term), tape.scalar(v.mark_term)};
}

LossTerms loss_and_gradients(WatermarkModel& model, const Tensor& images,
                             const Tensor& watermark) {
  Tape tape;
  const BoundParams p = bind_params(tape, model.params);
  const LossVars v = record_loss(tape, model.config, p, images, watermark);
  LossTerms terms{tape.scalar(v.total), tape.scalar(v.image_term), tape.scalar(v.mark_term)};
  tape.backward(v.total);
  return terms;
}

// --- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'N', 'W', 'M', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace

void save_checkpoint(const WatermarkModel& model, std::int64_t iteration,
                     const std::filesystem::path& path) {
  json manifest = json::array();
  std::size_t offset = 0;
  model.params.for_each([&](const Parameter& p) {
    const Shape s = p.value.shape();
    manifest.push_back({{"name", p.name},
                        {"shape", {s[0], s[1], s[2], s[3]}},
                        {"offset", offset},
                        {"count", p.value.size()}});
    offset += p.value.size() * sizeof(float);
  });
  const json header = {{"config", model.config},
                       {"iteration", iteration},
                       {"parameters", manifest},
                       {"payload_bytes", offset}};
  const std::string header_text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  out.reserve(out.size() + offset);
  model.params.for_each([&](const Parameter& p) {
    for (float v : p.value.data()) put_f32(out, v);
  });

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4) throw CheckpointTruncatedError("checkpoint shorter than its magic bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointFormatError("not a checkpoint (bad magic bytes): " + path.string());
  }
  if (bytes.size() < 12) throw CheckpointTruncatedError("checkpoint preamble truncated");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
    throw CheckpointTruncatedError("checkpoint header truncated");
  }

  json header;
  LoadedCheckpoint out;
  try {
    header = json::parse(bytes.substr(12, header_len));
    out.model.config = header.at("config").get<ModelConfig>();
    out.iteration = header.at("iteration").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw CheckpointFormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointFormatError(std::string("bad config in checkpoint: ") + e.what());
  }

  std::vector<std::pair<std::string, Shape>> layout;
  try {
    layout = parameter_layout(out.model.config);
  } catch (const ConfigError& e) {
    throw CheckpointFormatError(std::string("bad config in checkpoint: ") + e.what());
  }

  const json& manifest = header.contains("parameters") ? header["parameters"] : json();
  if (!manifest.is_array() || manifest.size() != layout.size()) {
    throw CheckpointManifestError("manifest lists " +
                                  std::to_string(manifest.is_array() ? manifest.size() : 0) +
                                  " parameters, config implies " + std::to_string(layout.size()));
  }
  const std::size_t payload_start = 12 + static_cast<std::size_t>(header_len);
  std::size_t expected_offset = 0;
  std::vector<Parameter> loaded;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    const json& entry = manifest[i];
    try {
      const auto dims = entry.at("shape").get<std::vector<int>>();
      if (entry.at("name").get<std::string>() != name || dims.size() != 4 ||
          Shape(dims[0], dims[1], dims[2], dims[3]) != shape ||
          entry.at("offset").get<std::size_t>() != expected_offset ||
          entry.at("count").get<std::size_t>() != shape.size()) {
        throw CheckpointManifestError("manifest entry " + std::to_string(i) + " ('" +
                                      entry.value("name", std::string("?")) +
                                      "') disagrees with the model layout");
      }
    } catch (const json::exception& e) {
      throw CheckpointManifestError(std::string("malformed manifest entry: ") + e.what());
    }
    const std::size_t start = payload_start + expected_offset;
    const std::size_t len = shape.size() * sizeof(float);
    if (bytes.size() < start + len) {
      throw CheckpointTruncatedError("checkpoint payload truncated in '" + name + "'");
    }
    Tensor value(shape);
    for (std::size_t j = 0; j < shape.size(); ++j) {
      value[j] = std::bit_cast<float>(get_u32(bytes, start + j * sizeof(float)));
    }
    loaded.emplace_back(name, std::move(value));
    expected_offset += len;
  }
  if (bytes.size() != payload_start + expected_offset) {
    throw CheckpointManifestError("checkpoint has " +
                                  std::to_string(bytes.size() - payload_start - expected_offset) +
                                  " trailing bytes beyond the manifest");
  }

  auto it = loaded.begin();
  auto& p = out.model.params;
  const int stages = out.model.config.upsample_stages;
  for (int i = 0; i < stages; ++i) p.up_image.push_back(std::move(*it++));
  for (int i = 0; i < stages; ++i) p.up_mark.push_back(std::move(*it++));
  p.blend_ws = std::move(*it++);
  p.blend_we = std::move(*it++);
  for (int i = 0; i < 3; ++i) p.down.push_back(std::move(*it++));
  for (int i = 0; i < 3; ++i) p.extract.push_back(std::move(*it++));
  return out;
}

}  // namespace nwm

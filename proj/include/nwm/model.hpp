#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nwm/tape.hpp"
#include "nwm/tensor.hpp"

namespace nwm {

enum class Activation { none, tanh };

struct ModelConfig {
  int canonical_height = 240;
  int canonical_width = 320;
  int latent_channels = 16;
  int kernel_size = 5;
  int upsample_stages = 3;
  std::uint64_t seed = 0;
  // Hidden-layer nonlinearity. The reference network is purely linear.
  Activation activation = Activation::none;

  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Down-sampler and extractor hidden widths (Table-style 12 -> 6 -> 3).
inline constexpr int kHiddenWide = 12;
inline constexpr int kHiddenNarrow = 6;
inline constexpr int kImageChannels = 3;

// Every trainable tensor of the network, in checkpoint manifest order.
template <class T>
struct NetworkParams {
  std::vector<BasicParameter<T>> up_image;  // transposed-conv kernels (k, k, out, in)
  std::vector<BasicParameter<T>> up_mark;
  BasicParameter<T> blend_ws;  // (1, 1, 1, latent)
  BasicParameter<T> blend_we;
  std::vector<BasicParameter<T>> down;     // conv kernels (k, k, in, out)
  std::vector<BasicParameter<T>> extract;

  template <class F>
  void for_each(F&& f) {
    for (auto& p : up_image) f(p);
    for (auto& p : up_mark) f(p);
    f(blend_ws);
    f(blend_we);
    for (auto& p : down) f(p);
    for (auto& p : extract) f(p);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& p : up_image) f(p);
    for (const auto& p : up_mark) f(p);
    f(blend_ws);
    f(blend_we);
    for (const auto& p : down) f(p);
    for (const auto& p : extract) f(p);
  }

  void zero_grad() {
    for_each([](BasicParameter<T>& p) { p.zero_grad(); });
  }

  template <class U>
  NetworkParams<U> cast() const;
};

struct WatermarkModel {
  ModelConfig config;
  NetworkParams<float> params;

  std::size_t parameter_count() const;
};

// Number of scalars in the network for a config; pure shape arithmetic.
std::size_t parameter_count(const ModelConfig& config);

// Kernel shapes in manifest order, paired with their names.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels, blend weights 1.0.
WatermarkModel build_model(const ModelConfig& config);

// Scales a watermark so its maximum pixel is 63/255. Throws ConfigError on
// an all-zero or negative-valued watermark.
Tensor prepare_watermark(const Tensor& raw);
inline constexpr float kWatermarkPeak = 63.0f / 255.0f;

// Tape handles for every parameter, mirroring NetworkParams.
struct BoundParams {
  std::vector<Var> up_image, up_mark;
  Var blend_ws, blend_we;
  std::vector<Var> down, extract;
};

// Trainable binding: backward() accumulates into params.*.grad.
template <class T>
BoundParams bind_params(BasicTape<T>& tape, NetworkParams<T>& params);
// Frozen binding: parameters enter the tape as constants.
template <class T>
BoundParams bind_constants(BasicTape<T>& tape, const NetworkParams<T>& params);

// `watermark` may have batch 1, in which case it is broadcast over the image batch.
template <class T>
Var record_embed(BasicTape<T>& tape, const ModelConfig& config, const BoundParams& params,
                 Var images, Var watermark);

template <class T>
Var record_extract(BasicTape<T>& tape, const ModelConfig& config, const BoundParams& params,
                   Var watermarked);

struct LossVars {
  Var watermarked;
  Var extracted;
  Var image_term;
  Var mark_term;
  Var total;
};

// mse(embed(images), images) + mse(extract(embed(images)), watermark).
template <class T>
LossVars record_loss(BasicTape<T>& tape, const ModelConfig& config, const BoundParams& params,
                     const BasicTensor<T>& images, const BasicTensor<T>& watermark);

struct LossTerms {
  double total = 0.0;
  double image = 0.0;
  double mark = 0.0;
};

// Inference. Outputs are unclamped; clamp at export time.
Tensor embed(const WatermarkModel& model, const Tensor& images, const Tensor& watermark);
Tensor extract(const WatermarkModel& model, const Tensor& watermarked);

// Forward-only loss; the model is not modified.
LossTerms evaluate_loss(const WatermarkModel& model, const Tensor& images,
                        const Tensor& watermark);

// Forward + backward; gradients are accumulated into model.params.*.grad.
LossTerms loss_and_gradients(WatermarkModel& model, const Tensor& images,
                             const Tensor& watermark);

// Checkpoint file:
//   "NWMK" | u32 version | u32 header length | JSON header | f32 LE blobs
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const WatermarkModel& model, std::int64_t iteration,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  WatermarkModel model;
  std::int64_t iteration = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nwm

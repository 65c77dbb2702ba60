#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nwm/model.hpp"

namespace nwm {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::int64_t iterations = 10000;
  int batch_size = 8;
  double base_lr = 0.001;
  double decay_factor = 0.92;
  std::int64_t decay_every = 400;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int val_batch = 8;
  std::int64_t val_every = 50;
  // Validate at these iteration counts as well (an early reference point for
  // "loss at iteration 10" style comparisons).
  std::vector<std::int64_t> val_also_at = {10};
  std::uint64_t seed = 0;
  // 0 disables periodic checkpoints.
  std::int64_t checkpoint_every = 0;

  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct ImageSet {
  std::vector<Tensor> images;  // each (1, H, W, 3) in [0, 1]
  std::vector<std::filesystem::path> paths;
  std::string split;
  // Files that failed to decode and were left out.
  std::size_t skipped = 0;

  std::size_t size() const { return images.size(); }
};

// Every decodable image in `directory` fitted to the config's canonical
// size. Throws DatasetError if nothing usable is found.
ImageSet load_dataset(const std::filesystem::path& directory, const ModelConfig& config,
                      const std::string& split);

// Staircase decay: base_lr * decay_factor^floor(iteration / decay_every).
double lr_at(std::int64_t iteration, const TrainConfig& config);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerSettings from(const TrainConfig& c) {
    return {c.optimizer, c.adam_beta1, c.adam_beta2, c.adam_epsilon};
  }
};

class OptimizerState {
 public:
  explicit OptimizerState(OptimizerSettings settings = {}) : settings_(settings) {}

  // Updates every parameter from its grad. The parameter list must have the
  // same order and shapes on every call.
  void step(std::span<Parameter* const> params, double lr);

  std::int64_t steps() const { return steps_; }

 private:
  OptimizerSettings settings_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

std::vector<Parameter*> parameter_list(NetworkParams<float>& params);

struct LossRecord {
  std::int64_t iteration = 0;
  double image_loss = 0.0;
  double mark_loss = 0.0;
  double lr = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

class LossCurve {
 public:
  // Throws ParameterError unless iteration exceeds the last one recorded.
  void append(const LossRecord& r);
  const std::vector<LossRecord>& records() const { return records_; }
  // Record at exactly this iteration; throws ParameterError if absent.
  const LossRecord& at(std::int64_t iteration) const;
  bool empty() const { return records_.empty(); }

  // Header `iteration,image_loss,mark_loss,lr`; values printed round-trip exact.
  void write_csv(const std::filesystem::path& path) const;

  friend bool operator==(const LossCurve&, const LossCurve&) = default;

 private:
  std::vector<LossRecord> records_;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_train;
  std::function<void(const LossRecord&)> on_val;
  // Called with the number of completed iterations.
  std::function<void(std::int64_t, const WatermarkModel&)> on_checkpoint;
};

struct TrainResult {
  LossCurve train;
  LossCurve val;
};

// Train records carry the 0-based step index, the loss measured before that
// step's update and the lr it used. Validation records carry the number of
// completed updates. Throws NumericError on a non-finite loss.
TrainResult train(WatermarkModel& model, const ImageSet& train_set, const ImageSet& val_set,
                  const Tensor& watermark, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// The fixed validation batch: the first val_batch images after a seeded
// shuffle, stacked.
Tensor validation_batch(const ImageSet& val_set, const TrainConfig& config);

// Large tensors are allocated and freed every step; keep freed memory in the
// heap instead of returning it to the OS. No-op outside glibc.
void tune_allocator();

}  // namespace nwm

#include "nwm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "nwm/error.hpp"
#include "nwm/image_io.hpp"

namespace nwm {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (iterations < 0) fail("iterations must be >= 0");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (!(base_lr > 0.0)) fail("base_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail("decay_factor must be in (0, 1]");
  if (decay_every <= 0) fail("decay_every must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be positive");
  if (val_batch <= 0) fail("val_batch must be positive");
  if (val_every <= 0) fail("val_every must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"base_lr", c.base_lr},
           {"decay_factor", c.decay_factor},
           {"decay_every", c.decay_every},
           {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_epsilon", c.adam_epsilon},
           {"val_batch", c.val_batch},
           {"val_every", c.val_every},
           {"val_also_at", c.val_also_at},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  try {
    const TrainConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.base_lr = j.value("base_lr", d.base_lr);
    c.decay_factor = j.value("decay_factor", d.decay_factor);
    c.decay_every = j.value("decay_every", d.decay_every);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      c.optimizer = OptimizerKind::adam;
    } else if (opt == "sgd") {
      c.optimizer = OptimizerKind::sgd;
    } else {
      throw ConfigError("unknown optimizer '" + opt + "' (expected adam|sgd)");
    }
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
    c.val_batch = j.value("val_batch", d.val_batch);
    c.val_every = j.value("val_every", d.val_every);
    c.val_also_at = j.value("val_also_at", d.val_also_at);
    c.seed = j.value("seed", d.seed);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid train config: ") + e.what());
  }
}

ImageSet load_dataset(const std::filesystem::path& directory, const ModelConfig& config,
                      const std::string& split) {
  std::vector<std::filesystem::path> files;
  try {
    files = list_images(directory);
  } catch (const IoError& e) {
    throw DatasetError(e.what());
  }
  ImageSet set;
  set.split = split;
  for (const auto& f : files) {
    try {
      set.images.push_back(load_image_fitted(f, config.canonical_height, config.canonical_width));
      set.paths.push_back(f);
    } catch (const IoError&) {
      ++set.skipped;
    }
  }
  if (set.images.empty()) {
    throw DatasetError("no decodable images in " + directory.string() + " (" +
                       std::to_string(set.skipped) + " skipped)");
  }
  return set;
}

double lr_at(std::int64_t iteration, const TrainConfig& config) {
  const std::int64_t steps = std::max<std::int64_t>(iteration, 0) / config.decay_every;
  return config.base_lr * std::pow(config.decay_factor, static_cast<double>(steps));
}

void OptimizerState::step(std::span<Parameter* const> params, double lr) {
  ++steps_;
  if (settings_.kind == OptimizerKind::sgd) {
    for (Parameter* p : params) {
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        p->value[i] = static_cast<float>(p->value[i] - lr * p->grad[i]);
      }
    }
    return;
  }
  if (m_.empty()) {
    for (Parameter* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ParameterError("optimizer: parameter list changed");
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != p.value.size()) throw ParameterError("optimizer: parameter shape changed");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + settings_.epsilon);
      p.value[i] = static_cast<float>(p.value[i] - update);
    }
  }
}

std::vector<Parameter*> parameter_list(NetworkParams<float>& params) {
  std::vector<Parameter*> out;
  params.for_each([&](Parameter& p) { out.push_back(&p); });
  return out;
}

void LossCurve::append(const LossRecord& r) {
  if (!records_.empty() && r.iteration <= records_.back().iteration) {
    throw ParameterError("loss curve iterations must increase (" + std::to_string(r.iteration) +
                         " after " + std::to_string(records_.back().iteration) + ")");
  }
  records_.push_back(r);
}

const LossRecord& LossCurve::at(std::int64_t iteration) const {
  const auto it = std::lower_bound(
      records_.begin(), records_.end(), iteration,
      [](const LossRecord& r, std::int64_t it) { return r.iteration < it; });
  if (it == records_.end() || it->iteration != iteration) {
    throw ParameterError("no loss record at iteration " + std::to_string(iteration));
  }
  return *it;
}

void LossCurve::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "iteration,image_loss,mark_loss,lr\n";
  char line[128];
  for (const auto& r : records_) {
    std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.iteration), r.image_loss, r.mark_loss, r.lr);
    f << line;
  }
  if (!f) throw IoError("failed writing " + path.string());
}

namespace {

// Fisher-Yates on raw engine output; std::shuffle's draws are
// implementation-defined, which would tie results to one standard library.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    pos_ = n;
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_;
};

constexpr std::uint64_t kValSeedSalt = 0x9E3779B97F4A7C15ull;

}  // namespace

Tensor validation_batch(const ImageSet& val_set, const TrainConfig& config) {
  if (val_set.size() == 0) throw DatasetError("validation set is empty");
  std::vector<std::size_t> order(val_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed ^ kValSeedSalt);
  shuffle(order, rng);
  const std::size_t n = std::min<std::size_t>(val_set.size(), config.val_batch);
  std::vector<Tensor> picked;
  for (std::size_t i = 0; i < n; ++i) picked.push_back(val_set.images[order[i]]);
  return stack_batch<float>(picked);
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

TrainResult train(WatermarkModel& model, const ImageSet& train_set, const ImageSet& val_set,
                  const Tensor& watermark, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train_set.size() == 0) throw DatasetError("training set is empty");
  tune_allocator();

  const Tensor val_images = validation_batch(val_set, config);
  EpochSampler sampler(train_set.size(), config.seed);
  OptimizerState optimizer(OptimizerSettings::from(config));
  const std::vector<Parameter*> params = parameter_list(model.params);
  std::vector<std::int64_t> extra = config.val_also_at;
  std::sort(extra.begin(), extra.end());

  TrainResult result;
  std::vector<Tensor> batch(config.batch_size);
  double last_lr = lr_at(0, config);
  for (std::int64_t it = 0; it < config.iterations; ++it) {
    for (auto& b : batch) b = train_set.images[sampler.next()];
    const Tensor images = stack_batch<float>(batch);
    const double lr = lr_at(it, config);
    model.params.zero_grad();
    const LossTerms loss = loss_and_gradients(model, images, watermark);
    if (!std::isfinite(loss.total)) {
      char msg[256];
      std::snprintf(msg, sizeof msg,
                    "non-finite loss at iteration %lld (lr %.6g, image %.6g, mark %.6g)",
                    static_cast<long long>(it), lr, loss.image, loss.mark);
      throw NumericError(msg);
    }
    optimizer.step(params, lr);
    last_lr = lr;

    const LossRecord rec{it, loss.image, loss.mark, lr};
    result.train.append(rec);
    if (hooks.on_train) hooks.on_train(rec);

    const std::int64_t done = it + 1;
    if (done % config.val_every == 0 || done == config.iterations ||
        std::binary_search(extra.begin(), extra.end(), done)) {
      const LossTerms v = evaluate_loss(model, val_images, watermark);
      const LossRecord vrec{done, v.image, v.mark, last_lr};
      result.val.append(vrec);
      if (hooks.on_val) hooks.on_val(vrec);
    }
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 &&
        hooks.on_checkpoint) {
      hooks.on_checkpoint(done, model);
    }
  }
  return result;
}

}  // namespace nwm

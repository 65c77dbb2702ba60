// nwmark: train, apply and inspect the watermarking network.
//
// Exit codes: 0 ok, 2 bad configuration or input, 3 dataset error,
// 4 numeric abort, 5 nothing to do.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nwm/analysis.hpp"
#include "nwm/attacks.hpp"
#include "nwm/error.hpp"
#include "nwm/image_io.hpp"
#include "nwm/metrics.hpp"
#include "nwm/model.hpp"
#include "nwm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kDataset = 3, kNumeric = 4, kEmpty = 5 };

// Thrown when a command has no input to work on.
struct NothingToDo : nwm::Error {
  using nwm::Error::Error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw nwm::ConfigError("cannot read config file " + path);
  try {
    json j = json::parse(f);
    if (!j.is_object()) throw nwm::ConfigError("config file must hold a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw nwm::ConfigError("config file " + path + ": " + e.what());
  }
}

template <class T>
void set_if(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

std::string require_path(const json& paths, const char* key, const char* flag) {
  if (!paths.contains(key) || !paths[key].is_string() || paths[key].get<std::string>().empty()) {
    throw nwm::ConfigError(std::string("missing ") + flag);
  }
  return paths[key].get<std::string>();
}

fs::path prepare_out_dir(const json& config) {
  const fs::path out = require_path(config["paths"], "out", "--out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw nwm::IoError("cannot create output directory " + out.string());
  std::ofstream f(out / "config.json");
  f << config.dump(2) << '\n';
  if (!f) throw nwm::IoError("cannot write " + (out / "config.json").string());
  return out;
}

nwm::Tensor load_watermark(const std::string& path, const nwm::ModelConfig& mc) {
  if (!fs::is_regular_file(path)) throw nwm::ConfigError("watermark file not found: " + path);
  return nwm::prepare_watermark(
      nwm::load_image_fitted(path, mc.canonical_height, mc.canonical_width));
}

nwm::LoadedCheckpoint load_model(const json& paths) {
  return nwm::load_checkpoint(require_path(paths, "checkpoint", "--checkpoint"));
}

std::vector<fs::path> input_files(const json& paths) {
  const std::string in = require_path(paths, "input", "--input");
  if (!fs::exists(in)) throw nwm::ConfigError("input not found: " + in);
  auto files = nwm::list_images(in);
  if (files.empty()) throw NothingToDo("no images in " + in);
  return files;
}

void log_failure(const fs::path& f, const std::exception& e) {
  std::cerr << "skipping " << f.string() << ": " << e.what() << '\n';
}

int finish_batch(std::size_t ok, std::size_t total) {
  std::cerr << ok << " of " << total << " files processed\n";
  if (ok == 0) throw NothingToDo("no file could be processed");
  return kOk;
}

// Parses "x,y,w,h".
std::optional<nwm::ClipRect> parse_rect(const std::string& s) {
  if (s.empty()) return std::nullopt;
  nwm::ClipRect r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(s);
  if (!(in >> r.x >> c1 >> r.y >> c2 >> r.w >> c3 >> r.h) || c1 != ',' || c2 != ',' ||
      c3 != ',') {
    throw nwm::ConfigError("clip rect must be x,y,w,h, got '" + s + "'");
  }
  return r;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// --- train -----------------------------------------------------------------

struct TrainFlags {
  std::optional<std::string> data, val, watermark, optimizer;
  std::optional<std::int64_t> iters, val_every, checkpoint_every;
  std::optional<int> batch, height, width;
  std::optional<double> lr;
  std::optional<std::string> activation;
};

int cmd_train(const Common& common, const TrainFlags& flags) {
  json config = read_config_file(common.config_path);
  json& paths = config["paths"];
  json& model = config["model"];
  json& train = config["train"];
  if (paths.is_null()) paths = json::object();
  if (model.is_null()) model = json::object();
  if (train.is_null()) train = json::object();
  set_if(paths, "data", flags.data);
  set_if(paths, "val", flags.val);
  set_if(paths, "watermark", flags.watermark);
  set_if(paths, "out", common.out);
  set_if(train, "iterations", flags.iters);
  set_if(train, "batch_size", flags.batch);
  set_if(train, "base_lr", flags.lr);
  set_if(train, "optimizer", flags.optimizer);
  set_if(train, "val_every", flags.val_every);
  set_if(train, "checkpoint_every", flags.checkpoint_every);
  set_if(model, "canonical_height", flags.height);
  set_if(model, "canonical_width", flags.width);
  set_if(model, "activation", flags.activation);
  if (common.seed) {
    train["seed"] = *common.seed;
    model["seed"] = *common.seed;
  }

  const auto mc = model.get<nwm::ModelConfig>();
  const auto tc = train.get<nwm::TrainConfig>();
  mc.validate();
  tc.validate();
  const std::string data = require_path(paths, "data", "--data");
  if (!paths.contains("val")) paths["val"] = data;
  const std::string val = paths["val"].get<std::string>();
  const std::string wm_path = require_path(paths, "watermark", "--watermark");
  model = mc;
  train = tc;
  const fs::path out = prepare_out_dir(config);

  const nwm::Tensor watermark = load_watermark(wm_path, mc);
  const nwm::ImageSet train_set = nwm::load_dataset(data, mc, "train");
  const nwm::ImageSet val_set = nwm::load_dataset(val, mc, "val");
  std::cerr << "train: " << train_set.size() << " images (" << train_set.skipped
            << " skipped), val: " << val_set.size() << " images (" << val_set.skipped
            << " skipped)\n";

  nwm::WatermarkModel net = nwm::build_model(mc);
  const auto start = std::chrono::steady_clock::now();
  nwm::TrainHooks hooks;
  hooks.on_val = [&](const nwm::LossRecord& r) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "iter %lld  val image %.6g  mark %.6g  lr %.6g  (%.0f s)\n",
                 static_cast<long long>(r.iteration), r.image_loss, r.mark_loss, r.lr, secs);
  };
  hooks.on_checkpoint = [&](std::int64_t done, const nwm::WatermarkModel& m) {
    fs::create_directories(out / "checkpoints");
    nwm::save_checkpoint(m, done, out / "checkpoints" / ("iter_" + std::to_string(done) + ".nwmk"));
  };
  const nwm::TrainResult result = nwm::train(net, train_set, val_set, watermark, tc, hooks);
  nwm::save_checkpoint(net, tc.iterations, out / "model.nwmk");
  result.train.write_csv(out / "train_loss.csv");
  result.val.write_csv(out / "val_loss.csv");
  std::cerr << "wrote " << (out / "model.nwmk").string() << '\n';
  return kOk;
}

// --- embed / extract -------------------------------------------------------

struct ApplyFlags {
  std::optional<std::string> checkpoint, input, watermark;
  bool raw = false;
};

json apply_config(const Common& common, const ApplyFlags& flags) {
  json config = read_config_file(common.config_path);
  json& paths = config["paths"];
  if (paths.is_null()) paths = json::object();
  set_if(paths, "checkpoint", flags.checkpoint);
  set_if(paths, "input", flags.input);
  set_if(paths, "watermark", flags.watermark);
  set_if(paths, "out", common.out);
  return config;
}

int cmd_embed(const Common& common, const ApplyFlags& flags) {
  json config = apply_config(common, flags);
  const auto ckpt = load_model(config["paths"]);
  const auto& mc = ckpt.model.config;
  const nwm::Tensor wm =
      load_watermark(require_path(config["paths"], "watermark", "--watermark"), mc);
  const auto files = input_files(config["paths"]);
  config["model"] = mc;
  const fs::path out = prepare_out_dir(config);
  std::size_t ok = 0;
  for (const auto& f : files) {
    nwm::Tensor img;
    try {
      img = nwm::load_image_fitted(f, mc.canonical_height, mc.canonical_width);
    } catch (const nwm::IoError& e) {
      log_failure(f, e);
      continue;
    }
    nwm::save_png(nwm::embed(ckpt.model, img, wm), out / (f.stem().string() + "_wm.png"));
    ++ok;
  }
  return finish_batch(ok, files.size());
}

int cmd_extract(const Common& common, const ApplyFlags& flags) {
  json config = apply_config(common, flags);
  config["raw"] = flags.raw || config.value("raw", false);
  const bool raw = config["raw"].get<bool>();
  const auto ckpt = load_model(config["paths"]);
  const auto& mc = ckpt.model.config;
  const auto files = input_files(config["paths"]);
  config["model"] = mc;
  const fs::path out = prepare_out_dir(config);
  const float view_scale = raw ? 1.0f : 1.0f / nwm::kWatermarkPeak;
  std::size_t ok = 0;
  for (const auto& f : files) {
    nwm::Tensor img;
    try {
      img = nwm::load_image(f);
    } catch (const nwm::IoError& e) {
      log_failure(f, e);
      continue;
    }
    if (img.shape().h() != mc.canonical_height || img.shape().w() != mc.canonical_width) {
      throw nwm::ConfigError(f.string() + " is " + std::to_string(img.shape().w()) + "x" +
                             std::to_string(img.shape().h()) + ", model expects " +
                             std::to_string(mc.canonical_width) + "x" +
                             std::to_string(mc.canonical_height));
    }
    nwm::Tensor mark = nwm::extract(ckpt.model, img);
    for (float& v : mark.data()) v *= view_scale;
    nwm::save_png(mark, out / (f.stem().string() + "_extracted.png"));
    ++ok;
  }
  return finish_batch(ok, files.size());
}

// --- attack ----------------------------------------------------------------

struct AttackFlags {
  std::optional<std::string> input, attack, spec, clip;
  std::optional<double> sigma;
};

nwm::AttackSpec resolve_attack(json& config, const AttackFlags& flags,
                               const std::optional<std::uint64_t>& seed) {
  if (flags.spec) {
    try {
      config["attack"] = json::parse(*flags.spec);
    } catch (const json::parse_error& e) {
      throw nwm::ConfigError(std::string("--spec: ") + e.what());
    }
  } else if (flags.attack) {
    config["attack"] = nwm::attack_from_name(*flags.attack);
  }
  if (!config.contains("attack")) throw nwm::ConfigError("missing --attack or --spec");
  auto spec = config["attack"].get<nwm::AttackSpec>();
  if (spec.kind == nwm::AttackKind::clip && flags.clip) spec.rect = parse_rect(*flags.clip);
  if (spec.kind == nwm::AttackKind::noise) {
    if (flags.sigma) spec.sigma = *flags.sigma;
    if (seed) spec.seed = *seed;
  }
  config["attack"] = spec;
  return spec;
}

int cmd_attack(const Common& common, const AttackFlags& flags) {
  json config = read_config_file(common.config_path);
  json& paths = config["paths"];
  if (paths.is_null()) paths = json::object();
  set_if(paths, "input", flags.input);
  set_if(paths, "out", common.out);
  const nwm::AttackSpec spec = resolve_attack(config, flags, common.seed);
  const auto files = input_files(paths);
  const fs::path out = prepare_out_dir(config);
  std::size_t ok = 0;
  for (const auto& f : files) {
    nwm::Tensor img;
    try {
      img = nwm::load_image(f);
    } catch (const nwm::IoError& e) {
      log_failure(f, e);
      continue;
    }
    nwm::save_png(nwm::apply_attack(img, spec), out / (f.stem().string() + "_" + spec.name() + ".png"));
    ++ok;
  }
  return finish_batch(ok, files.size());
}

// --- evaluate --------------------------------------------------------------

struct EvalFlags {
  std::optional<std::string> checkpoint, data, watermark, attacks, clip;
  std::optional<double> sigma;
  bool quantize = false;
};

int cmd_evaluate(const Common& common, const EvalFlags& flags) {
  json config = read_config_file(common.config_path);
  json& paths = config["paths"];
  if (paths.is_null()) paths = json::object();
  set_if(paths, "checkpoint", flags.checkpoint);
  set_if(paths, "data", flags.data);
  set_if(paths, "watermark", flags.watermark);
  set_if(paths, "out", common.out);
  if (flags.quantize) config["quantize"] = true;

  // Attack list: names from --attacks, or specs from the config file.
  std::vector<nwm::AttackSpec> attacks;
  if (flags.attacks || !config.contains("attacks")) {
    for (const auto& name : split_list(flags.attacks.value_or("clip,gaussian,laplacian,noise"))) {
      attacks.push_back(nwm::attack_from_name(name));
    }
  } else {
    attacks = config["attacks"].get<std::vector<nwm::AttackSpec>>();
  }
  for (auto& a : attacks) {
    if (a.kind == nwm::AttackKind::clip && flags.clip) a.rect = parse_rect(*flags.clip);
    if (a.kind == nwm::AttackKind::noise) {
      if (flags.sigma) a.sigma = *flags.sigma;
      if (common.seed) a.seed = *common.seed;
    }
  }

  const auto ckpt = load_model(paths);
  const auto& mc = ckpt.model.config;
  const nwm::Tensor wm = load_watermark(require_path(paths, "watermark", "--watermark"), mc);
  const std::string data = require_path(paths, "data", "--data");
  std::vector<fs::path> files;
  try {
    files = nwm::list_images(data);
  } catch (const nwm::IoError& e) {
    throw nwm::ConfigError(e.what());
  }
  std::vector<nwm::Tensor> images;
  std::vector<std::string> ids;
  for (const auto& f : files) {
    try {
      images.push_back(nwm::load_image_fitted(f, mc.canonical_height, mc.canonical_width));
      ids.push_back(f.filename().string());
    } catch (const nwm::IoError& e) {
      log_failure(f, e);
    }
  }
  if (images.empty()) throw NothingToDo("no decodable images in " + data);

  // Record defaults as resolved (the clip rect depends on the image size).
  for (auto& a : attacks) {
    if (a.kind == nwm::AttackKind::clip && !a.rect) {
      a.rect = nwm::default_clip_rect(images.front().shape());
    }
  }
  config["attacks"] = attacks;
  config["model"] = mc;
  config["quantize"] = config.value("quantize", false);
  const fs::path out = prepare_out_dir(config);

  nwm::EvalOptions opts;
  opts.quantize = config["quantize"].get<bool>();
  const auto reports = nwm::evaluate(ckpt.model, images, ids, wm, attacks, opts);
  nwm::write_reports_jsonl(reports, out / "reports.jsonl");
  nwm::write_psnr_table(reports, out / "psnr_table.csv");
  nwm::write_nc_table(reports, out / "nc_table.csv");
  for (const auto& [name, s] : nwm::summarize(reports)) {
    std::fprintf(stderr, "%-10s psnr %6.2f dB  nc %.4f  nc/nc0 %6.2f%%\n", name.c_str(),
                 s.mean_psnr, s.mean_nc_raw, 100.0 * s.mean_nc_normalized);
  }
  return kOk;
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeFlags {
  std::optional<std::string> checkpoint;
  std::optional<int> clusters, pad;
};

int cmd_analyze(const Common& common, const AnalyzeFlags& flags) {
  json config = read_config_file(common.config_path);
  json& paths = config["paths"];
  json& analysis = config["analysis"];
  if (paths.is_null()) paths = json::object();
  if (analysis.is_null()) analysis = json::object();
  set_if(paths, "checkpoint", flags.checkpoint);
  set_if(paths, "out", common.out);
  set_if(analysis, "clusters", flags.clusters);
  set_if(analysis, "pad", flags.pad);
  if (common.seed) analysis["seed"] = *common.seed;
  nwm::AnalysisOptions opts;
  try {
    opts.clusters = analysis.value("clusters", opts.clusters);
    opts.pad = analysis.value("pad", opts.pad);
    opts.seed = analysis.value("seed", opts.seed);
    opts.max_iters = analysis.value("max_iters", opts.max_iters);
    opts.restarts = analysis.value("restarts", opts.restarts);
  } catch (const json::exception& e) {
    throw nwm::ConfigError(std::string("analysis config: ") + e.what());
  }
  analysis = {{"clusters", opts.clusters},
              {"pad", opts.pad},
              {"seed", opts.seed},
              {"max_iters", opts.max_iters},
              {"restarts", opts.restarts}};
  const auto ckpt = load_model(paths);
  if (opts.pad < ckpt.model.config.kernel_size) {
    throw nwm::ConfigError("--pad must be at least the kernel size");
  }
  const fs::path out = prepare_out_dir(config);
  nwm::analyze_extractor(ckpt.model, out, opts);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural image watermarking: train, embed, extract, attack, evaluate, analyze"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file; flags override it");
    sub->add_option("--seed", common.seed, "Random seed");
    sub->add_option("--out", common.out, "Output directory");
  };

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model on an image directory");
  add_common(train);
  train->add_option("--data", tf.data, "Training image directory");
  train->add_option("--val", tf.val, "Validation image directory (default: --data)");
  train->add_option("--watermark", tf.watermark, "Watermark image");
  train->add_option("--iters", tf.iters, "Training iterations");
  train->add_option("--batch", tf.batch, "Batch size");
  train->add_option("--lr", tf.lr, "Base learning rate");
  train->add_option("--optimizer", tf.optimizer, "adam or sgd");
  train->add_option("--val-every", tf.val_every, "Validation interval");
  train->add_option("--checkpoint-every", tf.checkpoint_every, "Checkpoint interval (0 = off)");
  train->add_option("--height", tf.height, "Canonical image height");
  train->add_option("--width", tf.width, "Canonical image width");
  train->add_option("--activation", tf.activation, "none or tanh");

  ApplyFlags ef;
  auto* embed = app.add_subcommand("embed", "Watermark images with a trained model");
  add_common(embed);
  embed->add_option("--checkpoint", ef.checkpoint, "Model checkpoint");
  embed->add_option("--input", ef.input, "Image file or directory");
  embed->add_option("--watermark", ef.watermark, "Watermark image used in training");

  ApplyFlags xf;
  auto* extract = app.add_subcommand("extract", "Recover watermarks from watermarked images");
  add_common(extract);
  extract->add_option("--checkpoint", xf.checkpoint, "Model checkpoint");
  extract->add_option("--input", xf.input, "Image file or directory");
  extract->add_flag("--raw", xf.raw, "Skip the 255/63 display rescale");

  AttackFlags af;
  auto* attack = app.add_subcommand("attack", "Apply one attack to images");
  add_common(attack);
  attack->add_option("--input", af.input, "Image file or directory");
  attack->add_option("--attack", af.attack, "clip, gaussian, laplacian or noise");
  attack->add_option("--spec", af.spec, "Attack as JSON, e.g. {\"variant\":\"noise\",\"sigma\":0.02}");
  attack->add_option("--clip", af.clip, "Clip rectangle x,y,w,h");
  attack->add_option("--sigma", af.sigma, "Noise standard deviation in [0, 1] units");

  EvalFlags vf;
  auto* evaluate = app.add_subcommand("evaluate", "PSNR and NC under attacks");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", vf.checkpoint, "Model checkpoint");
  evaluate->add_option("--data", vf.data, "Test image directory");
  evaluate->add_option("--watermark", vf.watermark, "Watermark image used in training");
  evaluate->add_option("--attacks", vf.attacks, "Comma-separated attack names");
  evaluate->add_option("--clip", vf.clip, "Clip rectangle x,y,w,h");
  evaluate->add_option("--sigma", vf.sigma, "Noise standard deviation");
  evaluate->add_flag("--quantize", vf.quantize, "Round images to 8 bits before PSNR");

  AnalyzeFlags nf;
  auto* analyze = app.add_subcommand("analyze", "Cluster and plot the extractor's last kernels");
  add_common(analyze);
  analyze->add_option("--checkpoint", nf.checkpoint, "Model checkpoint");
  analyze->add_option("--clusters", nf.clusters, "Number of clusters");
  analyze->add_option("--pad", nf.pad, "Frequency grid size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(common, tf);
    if (*embed) return cmd_embed(common, ef);
    if (*extract) return cmd_extract(common, xf);
    if (*attack) return cmd_attack(common, af);
    if (*evaluate) return cmd_evaluate(common, vf);
    if (*analyze) return cmd_analyze(common, nf);
  } catch (const NothingToDo& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kEmpty;
  } catch (const nwm::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kDataset;
  } catch (const nwm::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const nwm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}

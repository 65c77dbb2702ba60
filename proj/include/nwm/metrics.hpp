#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nwm/attacks.hpp"
#include "nwm/model.hpp"
#include "nwm/tensor.hpp"

namespace nwm {

inline constexpr double kPsnrCap = 99.0;

// PSNR in dB of two same-shape [0, 1] images, on the 0..255 scale and over
// every channel. Identical images give kPsnrCap. With `quantize`, both are
// first rounded to 8-bit levels.
double psnr(const Tensor& a, const Tensor& b, bool quantize = false);

// Cosine similarity over all pixels and channels. Throws NumericError if
// either operand has zero norm.
double nc_raw(const Tensor& w, const Tensor& w_bar);

// raw / nc0. Throws ParameterError unless nc0 is in (0, 1].
double nc_normalized(double raw, double nc0);
double nc_normalized(const Tensor& w, const Tensor& w_bar, double nc0);

// Mean raw NC between the watermark and what the model extracts from each
// clean watermarked image. Throws DatasetError on an empty list.
double estimate_nc0(const WatermarkModel& model, const std::vector<Tensor>& images,
                    const Tensor& watermark);

struct EvalReport {
  std::string image_id;
  double psnr = 0.0;
  double nc_raw = 0.0;
  double nc_normalized = 0.0;
  std::optional<AttackSpec> attack;  // empty for the clean pass
  double nc0_used = 0.0;

  std::string attack_name() const { return attack ? attack->name() : "none"; }
};

void to_json(nlohmann::json& j, const EvalReport& r);

struct EvalOptions {
  bool quantize = false;
};

// For each image: embed, clamp to [0, 1], then for the clean pass and each
// attack extract and score. NC0 is the mean clean raw NC over all images.
// PSNR is measured between the cover and the (attacked) watermarked image.
std::vector<EvalReport> evaluate(const WatermarkModel& model, const std::vector<Tensor>& images,
                                 const std::vector<std::string>& ids, const Tensor& watermark,
                                 const std::vector<AttackSpec>& attacks,
                                 const EvalOptions& options = {});

struct AttackSummary {
  std::size_t count = 0;
  double mean_psnr = 0.0;
  double mean_nc_raw = 0.0;
  double mean_nc_normalized = 0.0;
};

// Keyed by attack_name().
std::map<std::string, AttackSummary> summarize(const std::vector<EvalReport>& reports);

void write_reports_jsonl(const std::vector<EvalReport>& reports,
                         const std::filesystem::path& path);
// One row per image (clean pass PSNR) plus an "average" row.
void write_psnr_table(const std::vector<EvalReport>& reports, const std::filesystem::path& path);
// One column per attack in evaluation order; rows hold mean NC (raw and
// normalized, in percent).
void write_nc_table(const std::vector<EvalReport>& reports, const std::filesystem::path& path);

}  // namespace nwm

#include "nwm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "nwm/error.hpp"

namespace nwm {

namespace {

double level(float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor clamp01(Tensor t) {
  for (float& v : t.data()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, bool quantize) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.empty()) throw ShapeError("psnr: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = quantize ? level(a[i]) - level(b[i])
                              : static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  if (sum == 0.0) return kPsnrCap;
  // (255 d)^2 / 255^2 = d^2, so the 0..255 rescale cancels.
  const double mse = sum / static_cast<double>(a.size());
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double nc_raw(const Tensor& w, const Tensor& w_bar) {
  if (w.shape() != w_bar.shape()) {
    throw ShapeError("nc: shape " + to_string(w.shape()) + " vs " + to_string(w_bar.shape()));
  }
  const double ww = dot(w, w), bb = dot(w_bar, w_bar);
  if (ww == 0.0 || bb == 0.0) throw NumericError("nc: correlation undefined for a zero image");
  return std::clamp(dot(w, w_bar) / (std::sqrt(ww) * std::sqrt(bb)), -1.0, 1.0);
}

double nc_normalized(double raw, double nc0) {
  if (!(nc0 > 0.0 && nc0 <= 1.0)) {
    throw ParameterError("nc0 must be in (0, 1], got " + fmt(nc0));
  }
  return raw / nc0;
}

double nc_normalized(const Tensor& w, const Tensor& w_bar, double nc0) {
  return nc_normalized(nc_raw(w, w_bar), nc0);
}

double estimate_nc0(const WatermarkModel& model, const std::vector<Tensor>& images,
                    const Tensor& watermark) {
  if (images.empty()) throw DatasetError("estimate_nc0: no images");
  double sum = 0.0;
  for (const Tensor& img : images) {
    sum += nc_raw(watermark, extract(model, embed(model, img, watermark)));
  }
  return sum / static_cast<double>(images.size());
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"image", r.image_id},
                     {"attack", r.attack_name()},
                     {"psnr", r.psnr},
                     {"nc_raw", r.nc_raw},
                     {"nc_normalized", r.nc_normalized},
                     {"nc0_used", r.nc0_used}};
  if (r.attack) j["attack_spec"] = *r.attack;
}

std::vector<EvalReport> evaluate(const WatermarkModel& model, const std::vector<Tensor>& images,
                                 const std::vector<std::string>& ids, const Tensor& watermark,
                                 const std::vector<AttackSpec>& attacks,
                                 const EvalOptions& options) {
  if (images.empty()) throw DatasetError("evaluate: no images");
  if (ids.size() != images.size()) throw ParameterError("evaluate: one id per image required");

  struct Pass {
    double psnr, nc;
  };
  std::vector<Pass> clean(images.size());
  std::vector<std::vector<Pass>> attacked(images.size(), std::vector<Pass>(attacks.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor marked = clamp01(embed(model, images[i], watermark));
    clean[i] = {psnr(images[i], marked, options.quantize),
                nc_raw(watermark, extract(model, marked))};
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      const Tensor hit = apply_attack(marked, attacks[a]);
      attacked[i][a] = {psnr(images[i], hit, options.quantize),
                        nc_raw(watermark, extract(model, hit))};
    }
  }

  double nc0 = 0.0;
  for (const Pass& p : clean) nc0 += p.nc;
  nc0 /= static_cast<double>(clean.size());

  std::vector<EvalReport> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back({ids[i], clean[i].psnr, clean[i].nc, nc_normalized(clean[i].nc, nc0),
                   std::nullopt, nc0});
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      const Pass& p = attacked[i][a];
      out.push_back({ids[i], p.psnr, p.nc, nc_normalized(p.nc, nc0), attacks[a], nc0});
    }
  }
  return out;
}

std::map<std::string, AttackSummary> summarize(const std::vector<EvalReport>& reports) {
  std::map<std::string, AttackSummary> out;
  for (const auto& r : reports) {
    AttackSummary& s = out[r.attack_name()];
    ++s.count;
    s.mean_psnr += r.psnr;
    s.mean_nc_raw += r.nc_raw;
    s.mean_nc_normalized += r.nc_normalized;
  }
  for (auto& [name, s] : out) {
    s.mean_psnr /= static_cast<double>(s.count);
    s.mean_nc_raw /= static_cast<double>(s.count);
    s.mean_nc_normalized /= static_cast<double>(s.count);
  }
  return out;
}

void write_reports_jsonl(const std::vector<EvalReport>& reports,
                         const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& r : reports) f << nlohmann::json(r).dump() << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

void write_psnr_table(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "image,psnr\n";
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : reports) {
    if (r.attack) continue;
    f << r.image_id << ',' << fmt(r.psnr) << '\n';
    sum += r.psnr;
    ++n;
  }
  if (n > 0) f << "average," << fmt(sum / static_cast<double>(n)) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

void write_nc_table(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
  std::vector<std::string> order;
  for (const auto& r : reports) {
    const std::string name = r.attack_name();
    if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
  }
  const auto summary = summarize(reports);
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "metric";
  for (const auto& name : order) f << ',' << name;
  f << "\nnc_normalized_percent";
  for (const auto& name : order) f << ',' << fmt(100.0 * summary.at(name).mean_nc_normalized);
  f << "\nnc_raw";
  for (const auto& name : order) f << ',' << fmt(summary.at(name).mean_nc_raw);
  f << "\npsnr";
  for (const auto& name : order) f << ',' << fmt(summary.at(name).mean_psnr);
  f << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace nwm

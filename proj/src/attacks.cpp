#include "nwm/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nwm/error.hpp"

namespace nwm {

using nlohmann::json;

AttackSpec AttackSpec::clip(std::optional<ClipRect> r) {
  AttackSpec a;
  a.kind = AttackKind::clip;
  a.rect = r;
  return a;
}

AttackSpec AttackSpec::gaussian() {
  AttackSpec a;
  a.kind = AttackKind::gaussian;
  return a;
}

AttackSpec AttackSpec::laplacian() {
  AttackSpec a;
  a.kind = AttackKind::laplacian;
  return a;
}

AttackSpec AttackSpec::noise(double sigma, std::uint64_t seed) {
  AttackSpec a;
  a.kind = AttackKind::noise;
  a.sigma = sigma;
  a.seed = seed;
  return a;
}

std::string AttackSpec::name() const {
  switch (kind) {
    case AttackKind::clip: return "clip";
    case AttackKind::gaussian: return "gaussian";
    case AttackKind::laplacian: return "laplacian";
    case AttackKind::noise: return "noise";
  }
  return "?";
}

void to_json(json& j, const AttackSpec& a) {
  j = json{{"variant", a.name()}};
  if (a.kind == AttackKind::clip && a.rect) {
    j["x"] = a.rect->x;
    j["y"] = a.rect->y;
    j["w"] = a.rect->w;
    j["h"] = a.rect->h;
  }
  if (a.kind == AttackKind::noise) {
    j["sigma"] = a.sigma;
    j["seed"] = a.seed;
  }
}

void from_json(const json& j, AttackSpec& a) {
  try {
    a = attack_from_name(j.at("variant").get<std::string>());
    if (a.kind == AttackKind::clip && j.contains("x")) {
      a.rect = ClipRect{j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(),
                        j.at("h").get<int>()};
    }
    if (a.kind == AttackKind::noise) {
      a.sigma = j.value("sigma", a.sigma);
      a.seed = j.value("seed", a.seed);
      if (!(a.sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid attack spec: ") + e.what());
  }
}

AttackSpec attack_from_name(const std::string& name) {
  if (name == "clip") return AttackSpec::clip();
  if (name == "gaussian") return AttackSpec::gaussian();
  if (name == "laplacian") return AttackSpec::laplacian();
  if (name == "noise") return AttackSpec::noise();
  throw ConfigError("unknown attack '" + name + "' (expected clip|gaussian|laplacian|noise)");
}

ClipRect default_clip_rect(const Shape& image) { return {0, 0, image.w() / 2, image.h() / 2}; }

Tensor clip_attack(const Tensor& img, const ClipRect& r) {
  const Shape s = img.shape();
  if (r.w < 0 || r.h < 0 || r.x < 0 || r.y < 0 || r.x + r.w > s.w() || r.y + r.h > s.h()) {
    throw ParameterError("clip rect (" + std::to_string(r.x) + ", " + std::to_string(r.y) + ", " +
                         std::to_string(r.w) + ", " + std::to_string(r.h) +
                         ") outside image " + to_string(s));
  }
  Tensor out = img;
  for (int n = 0; n < s.n(); ++n)
    for (int y = r.y; y < r.y + r.h; ++y)
      for (int x = r.x; x < r.x + r.w; ++x)
        for (int c = 0; c < s.c(); ++c) out.at(n, y, x, c) = 0.0f;
  return out;
}

Tensor filter3x3(const Tensor& img, const Kernel3& k) {
  const Shape s = img.shape();
  Tensor out(s);
  for (int n = 0; n < s.n(); ++n)
    for (int y = 0; y < s.h(); ++y)
      for (int x = 0; x < s.w(); ++x)
        for (int c = 0; c < s.c(); ++c) {
          // Products of a float and a dyadic weight, and their sums, are exact
          // in double, so a constant neighbourhood reproduces itself exactly.
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= s.h()) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = x + dx;
              if (xx < 0 || xx >= s.w()) continue;
              acc += static_cast<double>(k[dy + 1][dx + 1]) * img.at(n, yy, xx, c);
            }
          }
          out.at(n, y, x, c) = static_cast<float>(acc);
        }
  return out;
}

Tensor gaussian_filter(const Tensor& img) { return filter3x3(img, kGaussianKernel); }

Tensor laplacian_filter(const Tensor& img) {
  Tensor out = filter3x3(img, kLaplacianKernel);
  for (float& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Tensor noise_attack(const Tensor& img, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be >= 0");
  if (sigma == 0.0) return img;
  Tensor out(img.shape());
  std::mt19937_64 rng(seed);
  // Box-Muller on 53-bit uniforms, so the stream is the same everywhere.
  auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (std::size_t i = 0; i < img.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double t = kTwoPi * uniform();
    const double z[2] = {r * std::cos(t), r * std::sin(t)};
    for (std::size_t j = 0; j < 2 && i + j < img.size(); ++j) {
      const double v = img[i + j] + sigma * z[j];
      out[i + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

Tensor apply_attack(const Tensor& img, const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::clip: return clip_attack(img, spec.rect.value_or(default_clip_rect(img.shape())));
    case AttackKind::gaussian: return gaussian_filter(img);
    case AttackKind::laplacian: return laplacian_filter(img);
    case AttackKind::noise: return noise_attack(img, spec.sigma, spec.seed);
  }
  throw ParameterError("unknown attack kind");
}

}  // namespace nwm

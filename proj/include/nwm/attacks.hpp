#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "nwm/tensor.hpp"

namespace nwm {

// Zeroed rectangle; coordinates in pixels, (x, y) is the top-left corner.
struct ClipRect {
  int x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const ClipRect&, const ClipRect&) = default;
};

enum class AttackKind { clip, gaussian, laplacian, noise };

struct AttackSpec {
  AttackKind kind = AttackKind::gaussian;
  // Clip only. Absent means the top-left quarter of whatever image it meets.
  std::optional<ClipRect> rect;
  // Noise only; [0, 1] pixel units.
  double sigma = 5.0 / 255.0;
  std::uint64_t seed = 0;

  static AttackSpec clip(std::optional<ClipRect> r = std::nullopt);
  static AttackSpec gaussian();
  static AttackSpec laplacian();
  static AttackSpec noise(double sigma = 5.0 / 255.0, std::uint64_t seed = 0);

  // Short tag: "clip", "gaussian", "laplacian" or "noise".
  std::string name() const;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

// {"variant":"noise","sigma":0.0196,"seed":7}, {"variant":"clip","x":0,...}
void to_json(nlohmann::json& j, const AttackSpec& a);
void from_json(const nlohmann::json& j, AttackSpec& a);

// Parses a tag ("clip", "gaussian", "laplacian", "noise") into the attack
// with default parameters. Throws ConfigError.
AttackSpec attack_from_name(const std::string& name);

using Kernel3 = std::array<std::array<float, 3>, 3>;

// Low-pass kernel: 1/16, 1/8, 1/4 weights.
inline constexpr Kernel3 kGaussianKernel = {{{0.0625f, 0.125f, 0.0625f},
                                             {0.125f, 0.25f, 0.125f},
                                             {0.0625f, 0.125f, 0.0625f}}};
// High-pass (sharpening) kernel; entries sum to 1.
inline constexpr Kernel3 kLaplacianKernel = {{{-0.125f, -0.25f, -0.125f},
                                              {-0.25f, 2.5f, -0.25f},
                                              {-0.125f, -0.25f, -0.125f}}};

ClipRect default_clip_rect(const Shape& image);

// Zeroes `rect` in every channel of every batch entry. Throws ParameterError
// if the rect leaves the image or has negative size.
Tensor clip_attack(const Tensor& img, const ClipRect& rect);

// Per-channel 3x3 correlation with zero padding (the kernels are symmetric,
// so this is also convolution).
Tensor filter3x3(const Tensor& img, const Kernel3& k);
Tensor gaussian_filter(const Tensor& img);
// Clamped to [0, 1].
Tensor laplacian_filter(const Tensor& img);

// clamp(img + N(0, sigma^2), 0, 1) with a seeded generator.
Tensor noise_attack(const Tensor& img, double sigma, std::uint64_t seed);

Tensor apply_attack(const Tensor& img, const AttackSpec& spec);

}  // namespace nwm

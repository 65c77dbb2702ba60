#include <gtest/gtest.h>

#include <cmath>

#include "nwm/attacks.hpp"
#include "nwm/error.hpp"
#include "test_util.hpp"

namespace nwm {
namespace {

using test::bitwise_equal;
using test::random_tensor;

Tensor image(std::uint64_t seed, int h = 12, int w = 10) {
  return random_tensor({1, h, w, 3}, seed, 0.0, 1.0);
}

TEST(Clip, ZeroAreaIsIdentity) {
  const Tensor img = image(1);
  EXPECT_TRUE(bitwise_equal(clip_attack(img, {3, 4, 0, 5}), img));
  EXPECT_TRUE(bitwise_equal(clip_attack(img, {3, 4, 2, 0}), img));
}

TEST(Clip, FullImageZeroes) {
  const Tensor out = clip_attack(image(2), {0, 0, 10, 12});
  for (std::size_t i = 0; i < out.size(); ++i) ASSERT_EQ(out[i], 0.0f);
}

TEST(Clip, DefaultRectIsTopLeftQuarter) {
  const Tensor img = random_tensor({2, 12, 10, 3}, 3, 0.5, 1.0);
  const ClipRect r = default_clip_rect(img.shape());
  EXPECT_EQ(r, (ClipRect{0, 0, 5, 6}));
  const Tensor out = clip_attack(img, r);
  std::size_t zeroed = 0;
  for (int n = 0; n < 2; ++n) {
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 10; ++x) {
        const bool inside = x < 5 && y < 6;
        for (int c = 0; c < 3; ++c) {
          if (inside) {
            ASSERT_EQ(out.at(n, y, x, c), 0.0f);
            ++zeroed;
          } else {
            ASSERT_EQ(out.at(n, y, x, c), img.at(n, y, x, c));
          }
        }
      }
    }
  }
  EXPECT_EQ(zeroed * 4, img.size());
}

TEST(Clip, OutOfBoundsRejected) {
  EXPECT_THROW(clip_attack(image(4), {8, 0, 3, 2}), ParameterError);
  EXPECT_THROW(clip_attack(image(4), {-1, 0, 3, 2}), ParameterError);
  EXPECT_THROW(clip_attack(image(4), {0, 0, -1, 2}), ParameterError);
}

TEST(Clip, Idempotent) {
  const Tensor once = clip_attack(image(5), {2, 3, 4, 4});
  EXPECT_TRUE(bitwise_equal(clip_attack(once, {2, 3, 4, 4}), once));
}

TEST(Kernels, DyadicValuesBitExact) {
  const float g[3][3] = {{0.0625f, 0.125f, 0.0625f}, {0.125f, 0.25f, 0.125f}, {0.0625f, 0.125f, 0.0625f}};
  const float l[3][3] = {{-0.125f, -0.25f, -0.125f}, {-0.25f, 2.5f, -0.25f}, {-0.125f, -0.25f, -0.125f}};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      EXPECT_EQ(std::bit_cast<std::uint32_t>(kGaussianKernel[i][j]), std::bit_cast<std::uint32_t>(g[i][j]));
      EXPECT_EQ(std::bit_cast<std::uint32_t>(kLaplacianKernel[i][j]), std::bit_cast<std::uint32_t>(l[i][j]));
    }
  }
  EXPECT_EQ(kGaussianKernel[0][0], 1.0f / 16.0f);
  EXPECT_EQ(kGaussianKernel[0][1], 1.0f / 8.0f);
  EXPECT_EQ(kGaussianKernel[1][1], 1.0f / 4.0f);
}

TEST(Kernels, UnitSum) {
  double gs = 0.0, ls = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) gs += kGaussianKernel[i][j], ls += kLaplacianKernel[i][j];
  EXPECT_EQ(gs, 1.0);
  EXPECT_EQ(ls, 1.0);
}

TEST(Filters, ConstantInteriorPreserved) {
  for (float c : {0.3f, 0.5f, 0.77f, 1.0f}) {
    const Tensor img({1, 9, 8, 3}, c);
    const Tensor g = gaussian_filter(img), l = laplacian_filter(img);
    for (int y = 1; y < 8; ++y) {
      for (int x = 1; x < 7; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          ASSERT_EQ(g.at(0, y, x, ch), c);
          ASSERT_EQ(l.at(0, y, x, ch), c);
        }
      }
    }
  }
}

TEST(Filters, ImpulseStampsKernel) {
  Tensor img({1, 7, 7, 3});
  for (int c = 0; c < 3; ++c) img.at(0, 3, 3, c) = 1.0f;
  const Tensor g = gaussian_filter(img), l = laplacian_filter(img);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) {
      const bool near = std::abs(y - 3) <= 1 && std::abs(x - 3) <= 1;
      const float gw = near ? kGaussianKernel[y - 2][x - 2] : 0.0f;
      const float lw = near ? std::clamp(kLaplacianKernel[y - 2][x - 2], 0.0f, 1.0f) : 0.0f;
      for (int c = 0; c < 3; ++c) {
        ASSERT_EQ(g.at(0, y, x, c), gw) << y << "," << x;
        ASSERT_EQ(l.at(0, y, x, c), lw) << y << "," << x;
      }
    }
  }
}

TEST(Filters, LinearBeforeClamping) {
  // Mid-range smooth input so the Laplacian never reaches the clamp.
  Tensor img({1, 8, 8, 3});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) img.at(0, y, x, c) = 0.4f + 0.01f * static_cast<float>(x + y + c);
  const Tensor g = gaussian_filter(img), l = laplacian_filter(img);
  for (float a : {0.25f, 0.5f, 1.0f}) {
    Tensor scaled = img;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= a;
    const Tensor gs = gaussian_filter(scaled);
    for (std::size_t i = 0; i < gs.size(); ++i) ASSERT_NEAR(gs[i], a * g[i], 1e-6);
    // Interior only: the zero border pushes edge outputs of the sharpener negative.
    const Tensor ls = laplacian_filter(scaled);
    for (int y = 1; y < 7; ++y)
      for (int x = 1; x < 7; ++x)
        for (int c = 0; c < 3; ++c) ASSERT_NEAR(ls.at(0, y, x, c), a * l.at(0, y, x, c), 1e-6);
  }
}

TEST(Noise, ZeroSigmaIsIdentity) {
  const Tensor img = image(6);
  EXPECT_TRUE(bitwise_equal(noise_attack(img, 0.0, 3), img));
}

TEST(Noise, SeededReproducible) {
  const Tensor img = image(7);
  EXPECT_TRUE(bitwise_equal(noise_attack(img, 0.05, 9), noise_attack(img, 0.05, 9)));
  EXPECT_FALSE(bitwise_equal(noise_attack(img, 0.05, 9), noise_attack(img, 0.05, 10)));
}

TEST(Noise, SampleStdOnMidGray) {
  const Tensor img({1, 64, 64, 3}, 0.5f);
  const double sigma = 5.0 / 255.0;
  const Tensor out = noise_attack(img, sigma, 1);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out[i] - img[i];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(out.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_GE(out.size(), 10000u);
  EXPECT_NEAR(sd, sigma, 0.1 * sigma);
}

TEST(Attacks, RangeAndShapePreserved) {
  const Tensor img = image(8, 16, 16);
  for (const AttackSpec& spec : {AttackSpec::clip(), AttackSpec::gaussian(), AttackSpec::laplacian(),
                                 AttackSpec::noise(0.2, 4)}) {
    const Tensor out = apply_attack(img, spec);
    EXPECT_EQ(out.shape(), img.shape()) << spec.name();
    for (std::size_t i = 0; i < out.size(); ++i) {
      ASSERT_GE(out[i], 0.0f) << spec.name();
      ASSERT_LE(out[i], 1.0f) << spec.name();
    }
    EXPECT_TRUE(bitwise_equal(apply_attack(img, spec), out)) << spec.name();
  }
}

TEST(AttackSpecJson, RoundTripAndNames) {
  const AttackSpec specs[] = {AttackSpec::clip(ClipRect{1, 2, 3, 4}), AttackSpec::clip(),
                              AttackSpec::gaussian(), AttackSpec::laplacian(),
                              AttackSpec::noise(0.0196, 7)};
  for (const auto& s : specs) {
    const nlohmann::json j = s;
    EXPECT_EQ(j.get<AttackSpec>(), s) << j.dump();
    EXPECT_EQ(attack_from_name(s.name()).kind, s.kind);
  }
  const auto noise = nlohmann::json::parse(R"({"variant":"noise","sigma":0.0196,"seed":7})").get<AttackSpec>();
  EXPECT_EQ(noise.kind, AttackKind::noise);
  EXPECT_EQ(noise.sigma, 0.0196);
  EXPECT_EQ(noise.seed, 7u);
  EXPECT_THROW(attack_from_name("jpeg"), ConfigError);
}

}  // namespace
}  // namespace nwm

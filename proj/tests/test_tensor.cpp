#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "conv_kernels.hpp"
#include "nwm/error.hpp"
#include "nwm/ops.hpp"
#include "nwm/tape.hpp"
#include "test_util.hpp"

namespace nwm {
namespace {

using test::random_tensor;

Tensor ones(Shape s) { return Tensor(s, 1.0f); }

TEST(Conv2d, ScalarMultiply) {
  const Tensor y = ops::conv2d(Tensor({1, 1, 1, 1}, 2.0f), Tensor({1, 1, 1, 1}, 3.0f), 1);
  ASSERT_EQ(y.shape(), Shape(1, 1, 1, 1));
  EXPECT_EQ(y[0], 6.0f);
}

TEST(Conv2d, OnesWithZeroPadding) {
  const Tensor y = ops::conv2d(ones({1, 3, 3, 1}), ones({3, 3, 1, 1}), 1);
  const float want[3][3] = {{4, 6, 4}, {6, 9, 6}, {4, 6, 4}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(y.at(0, i, j, 0), want[i][j]) << i << "," << j;
}

TEST(Conv2d, SameShapeRule) {
  EXPECT_EQ(ops::conv2d(ones({1, 4, 4, 1}), ones({3, 3, 1, 2}), 2).shape(), Shape(1, 2, 2, 2));
  EXPECT_EQ(ops::conv2d(ones({2, 5, 7, 1}), ones({5, 5, 1, 1}), 2).shape(), Shape(2, 3, 4, 1));
}

TEST(Conv2d, CrossCorrelationConvention) {
  // An off-center tap reads the neighbour on the same side, without a flip.
  Tensor x({1, 1, 3, 1});
  x[0] = 1.0f, x[1] = 2.0f, x[2] = 3.0f;
  Tensor k({1, 3, 1, 1});
  k[2] = 1.0f;
  const Tensor y = ops::conv2d(x, k, 1);
  EXPECT_EQ(y[0], 2.0f);
  EXPECT_EQ(y[1], 3.0f);
  EXPECT_EQ(y[2], 0.0f);
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(ops::conv2d(ones({1, 4, 4, 2}), ones({3, 3, 1, 1}), 1), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor({1, 0, 4, 1}), ones({3, 3, 1, 1}), 1), ShapeError);
  EXPECT_THROW(ops::conv2d_transpose(ones({1, 2, 2, 3}), ones({1, 1, 1, 2}), 2), ShapeError);
}

TEST(Conv2dTranspose, IdentityStride2Scatters) {
  Tensor x({1, 2, 2, 1});
  for (int i = 0; i < 4; ++i) x[i] = static_cast<float>(i + 1);
  const Tensor y = ops::conv2d_transpose(x, ones({1, 1, 1, 1}), 2);
  ASSERT_EQ(y.shape(), Shape(1, 4, 4, 1));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const float want = (i % 2 == 0 && j % 2 == 0) ? x.at(0, i / 2, j / 2, 0) : 0.0f;
      EXPECT_EQ(y.at(0, i, j, 0), want) << i << "," << j;
    }
  }
}

TEST(Conv2dTranspose, IdentityStride1) {
  const Tensor x = random_tensor({2, 3, 5, 1}, 4);
  EXPECT_TRUE(test::bitwise_equal(ops::conv2d_transpose(x, ones({1, 1, 1, 1}), 1), x));
}

TEST(Conv2dTranspose, ShapeDoubles) {
  EXPECT_EQ(ops::conv2d_transpose(ones({1, 30, 7, 3}), ones({5, 5, 16, 3}), 2).shape(),
            Shape(1, 60, 14, 16));
}

TEST(AvgPool, HandExample) {
  Tensor x({1, 2, 2, 1});
  x[0] = 1, x[1] = 2, x[2] = 3, x[3] = 4;
  const Tensor y = ops::avg_pool(x, 1);
  ASSERT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y[0], 2.5f);
  EXPECT_EQ(y[1], 3.0f);
  EXPECT_EQ(y[2], 3.5f);
  EXPECT_EQ(y[3], 4.0f);
}

TEST(AvgPool, ConstantIsExact) {
  for (int stride : {1, 2}) {
    const Tensor x({2, 7, 5, 3}, 0.3f);
    const Tensor y = ops::avg_pool(x, stride);
    EXPECT_EQ(y.shape(), Shape(2, ops::same_out(7, stride), ops::same_out(5, stride), 3));
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_EQ(y[i], 0.3f);
  }
}

TEST(Blend, Examples) {
  const Tensor a = random_tensor({2, 3, 3, 4}, 1), b = random_tensor({2, 3, 3, 4}, 2);
  const Tensor one({1, 1, 1, 4}, 1.0f), zero({1, 1, 1, 4});
  EXPECT_TRUE(test::bitwise_equal(ops::blend(a, b, one, zero), a));
  EXPECT_TRUE(test::bitwise_equal(ops::blend(a, b, zero, one), b));
  const Tensor y = ops::blend(Tensor({1, 1, 1, 1}, 2.0f), Tensor({1, 1, 1, 1}, 4.0f),
                              Tensor({1, 1, 1, 1}, 0.5f), Tensor({1, 1, 1, 1}, 0.25f));
  EXPECT_EQ(y[0], 2.0f);
  EXPECT_THROW(ops::blend(a, random_tensor({2, 3, 3, 3}, 3), one, zero), ShapeError);
}

TEST(Blend, BatchOneBroadcast) {
  const Tensor a = random_tensor({3, 2, 2, 2}, 5), b = random_tensor({1, 2, 2, 2}, 6);
  const Tensor ws = random_tensor({1, 1, 1, 2}, 7), we = random_tensor({1, 1, 1, 2}, 8);
  EXPECT_TRUE(test::bitwise_equal(ops::blend(a, b, ws, we), ops::blend(a, repeat_batch(b, 3), ws, we)));
}

TEST(Mse, Examples) {
  const Tensor a = random_tensor({1, 2, 2, 1}, 9);
  EXPECT_EQ(ops::mse(a, a), 0.0);
  Tensor p({1, 1, 2, 1}), q({1, 1, 2, 1});
  q[0] = 2.0f;
  EXPECT_EQ(ops::mse(p, q), 2.0);
  const Tensor g = ops::mse_backward(Tensor({1, 1, 1, 1}, 1.0f), Tensor({1, 1, 1, 1}), 1.0);
  EXPECT_EQ(g[0], 2.0f);
  EXPECT_THROW(ops::mse(p, Tensor({1, 2, 1, 1})), ShapeError);
}

TEST(Backward, ScalarSquare) {
  Parameter p("p", Tensor({1, 1, 1, 1}, 3.0f));
  Tape tape;
  const Var loss = tape.mse(tape.parameter(p), tape.constant(Tensor({1, 1, 1, 1})));
  tape.backward(loss);
  EXPECT_EQ(p.grad[0], 6.0f);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  const Var x = tape.input(ones({1, 2, 2, 1}));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Backward, DisjointLossesAdd) {
  const Tensor k0 = random_tensor({3, 3, 2, 2}, 11);
  const Tensor x1 = random_tensor({1, 4, 4, 2}, 12), x2 = random_tensor({1, 4, 4, 2}, 13);
  const Tensor t = random_tensor({1, 4, 4, 2}, 14);
  auto run = [&](bool first, bool second) {
    Parameter k("k", k0);
    Tape tape;
    const Var kv = tape.parameter(k);
    const Var l1 = tape.mse(tape.conv2d(tape.constant(x1), kv, 1), tape.constant(t));
    const Var l2 = tape.mse(tape.avg_pool(tape.conv2d(tape.constant(x2), kv, 1), 1),
                            tape.constant(t));
    tape.backward(first && second ? tape.add(l1, l2) : first ? l1 : l2);
    return k.grad;
  };
  const Tensor both = run(true, true), a = run(true, false), b = run(false, true);
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_NEAR(both[i], a[i] + b[i], 1e-6);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    Parameter k("k", random_tensor({5, 5, 3, 4}, 21));
    Parameter kt("kt", random_tensor({3, 3, 3, 4}, 22));
    Tape tape;
    const Var x = tape.constant(random_tensor({2, 8, 8, 3}, 23));
    const Var y = tape.conv2d_transpose(tape.conv2d(x, tape.parameter(k), 2), tape.parameter(kt), 2);
    tape.backward(tape.mse(y, x));
    return std::pair{k.grad, kt.grad};
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(test::bitwise_equal(a.first, b.first));
  EXPECT_TRUE(test::bitwise_equal(a.second, b.second));
}

// Loss that touches every output element with a distinct weight.
template <class T>
Var weighted_sum(BasicTape<T>& tape, Var y, std::uint64_t seed) {
  const auto target = random_tensor<T>(tape.value(y).shape(), seed);
  return tape.mse(y, tape.constant(target));
}

TEST(GradCheck, BlendIsRoundOff) {
  const std::vector<TensorD> probes = {
      random_tensor<double>({2, 3, 3, 4}, 31), random_tensor<double>({2, 3, 3, 4}, 32),
      random_tensor<double>({1, 1, 1, 4}, 33), random_tensor<double>({1, 1, 1, 4}, 34)};
  const GraphBuilder<double> build = [](TapeD& t, std::span<const Var> v) {
    return weighted_sum(t, t.blend(v[0], v[1], v[2], v[3]), 35);
  };
  // Quadratic loss, so central differences are exact up to rounding.
  EXPECT_LT(grad_check<double>(build, probes, 1e-3), 1e-5);
}

// Float evaluation cannot resolve small gradient entries at this step (the
// loss itself carries ~1e-7 relative rounding), so these run the same
// kernels in double. The float fast paths are compared against the
// reference loops in FastKernels.MatchReference.
TEST(GradCheck, Conv2d) {
  const std::vector<TensorD> probes = {random_tensor<double>({1, 6, 6, 2}, 41), random_tensor<double>({5, 5, 2, 3}, 42)};
  for (int stride : {1, 2}) {
    const GraphBuilder<double> build = [stride](TapeD& t, std::span<const Var> v) {
      return weighted_sum(t, t.conv2d(v[0], v[1], stride), 43);
    };
    EXPECT_LT(grad_check<double>(build, probes, 1e-3), 1e-3) << "stride " << stride;
  }
}

TEST(GradCheck, Conv2dTranspose) {
  const std::vector<TensorD> probes = {random_tensor<double>({1, 3, 4, 3}, 51), random_tensor<double>({5, 5, 2, 3}, 52)};
  for (int stride : {1, 2}) {
    const GraphBuilder<double> build = [stride](TapeD& t, std::span<const Var> v) {
      return weighted_sum(t, t.conv2d_transpose(v[0], v[1], stride), 53);
    };
    EXPECT_LT(grad_check<double>(build, probes, 1e-3), 1e-3) << "stride " << stride;
  }
}

TEST(GradCheck, AvgPool) {
  const TensorD probe = random_tensor<double>({2, 5, 6, 2}, 61);
  for (int stride : {1, 2}) {
    const GraphBuilder<double> build = [stride](TapeD& t, std::span<const Var> v) {
      return weighted_sum(t, t.avg_pool(v[0], stride), 62);
    };
    EXPECT_LT(grad_check<double>(build, probe, 1e-3), 1e-3) << "stride " << stride;
  }
}

TEST(GradCheck, MseFloat) {
  const std::vector<Tensor> probes = {random_tensor({1, 4, 4, 3}, 71), random_tensor({1, 4, 4, 3}, 72)};
  const GraphBuilder<float> build = [](Tape& t, std::span<const Var> v) { return t.mse(v[0], v[1]); };
  EXPECT_LT(grad_check<float>(build, probes, 1e-3), 1e-3);
}

TEST(GradCheck, BlendConv) {
  const std::vector<TensorD> probes = {random_tensor<double>({2, 6, 6, 3}, 81), random_tensor<double>({1, 6, 6, 3}, 82),
                                      random_tensor<double>({1, 1, 1, 3}, 83), random_tensor<double>({1, 1, 1, 3}, 84),
                                      random_tensor<double>({3, 3, 3, 2}, 85)};
  const GraphBuilder<double> build = [](TapeD& t, std::span<const Var> v) {
    return weighted_sum(t, t.blend_conv2d(v[0], v[1], v[2], v[3], v[4], 2), 86);
  };
  EXPECT_LT(grad_check<double>(build, probes, 1e-3), 1e-3);
}

TEST(GradCheck, CompositeConvPool) {
  const std::vector<TensorD> probes = {random_tensor<double>({1, 8, 8, 2}, 91), random_tensor<double>({3, 3, 2, 3}, 92)};
  const GraphBuilder<double> build = [](TapeD& t, std::span<const Var> v) {
    return weighted_sum(t, t.avg_pool(t.conv2d(v[0], v[1], 1), 2), 93);
  };
  EXPECT_LT(grad_check<double>(build, probes, 1e-3), 1e-3);
}

TEST(BlendConv, MatchesUnfused) {
  const Tensor a = random_tensor({3, 10, 10, 4}, 101), b = random_tensor({1, 10, 10, 4}, 102);
  const Tensor ws = random_tensor({1, 1, 1, 4}, 103), we = random_tensor({1, 1, 1, 4}, 104);
  const Tensor k = random_tensor({5, 5, 4, 3}, 105), g = random_tensor({3, 5, 5, 3}, 106);
  const Tensor fused = ops::blend_conv2d(a, b, ws, we, k, 2);
  const Tensor mixed = ops::blend(a, b, ws, we);
  const Tensor plain = ops::conv2d(mixed, k, 2);
  ASSERT_EQ(fused.shape(), plain.shape());
  for (std::size_t i = 0; i < fused.size(); ++i) ASSERT_NEAR(fused[i], plain[i], 1e-5);

  const auto fg = ops::blend_conv2d_backward(g, a, b, ws, we, k, 2, true);
  const Tensor gmix = ops::conv2d_backward_input(g, k, 2, mixed.shape());
  const auto bg = ops::blend_backward(gmix, a, b, ws, we);
  const Tensor gk = ops::conv2d_backward_kernel(mixed, g, 2, k.shape());
  auto near = [](const Tensor& x, const Tensor& y, double tol) {
    ASSERT_EQ(x.shape(), y.shape());
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(x[i], y[i], tol) << i;
  };
  near(fg.a, bg.a, 1e-5);
  near(fg.b, bg.b, 1e-4);
  near(fg.ws, bg.ws, 1e-3);
  near(fg.we, bg.we, 1e-3);
  near(fg.kernel, gk, 1e-3);
}

double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-30});
}

TEST(Properties, AdjointIdentity) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 2 + static_cast<int>(rng() % 6), w = 2 + static_cast<int>(rng() % 6);
    const int ci = 1 + static_cast<int>(rng() % 3), co = 1 + static_cast<int>(rng() % 3);
    const int ks = 1 + 2 * static_cast<int>(rng() % 3);
    const int s = 1 + static_cast<int>(rng() % 2);
    const Tensor x = random_tensor({1, s * h, s * w, ci}, rng());
    const Tensor k = random_tensor({ks, ks, ci, co}, rng());
    const Tensor y = random_tensor({1, h, w, co}, rng());
    EXPECT_LT(relative_gap(dot(ops::conv2d(x, k, s), y), dot(x, ops::conv2d_transpose(y, k, s))),
              1e-4)
        << "trial " << trial;
  }
}

TEST(Properties, Linearity) {
  const double alpha = 0.7, beta = -1.3;
  const Tensor x = random_tensor({2, 6, 6, 3}, 111), y = random_tensor({2, 6, 6, 3}, 112);
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = static_cast<float>(alpha * x[i] + beta * y[i]);
  const Tensor k = random_tensor({3, 3, 3, 2}, 113), kt = random_tensor({3, 3, 2, 3}, 114);
  const Tensor ws = random_tensor({1, 1, 1, 3}, 115), we = random_tensor({1, 1, 1, 3}, 116);
  using F = std::function<Tensor(const Tensor&)>;
  const std::vector<std::pair<const char*, F>> ops_under_test = {
      {"conv2d", [&](const Tensor& t) { return ops::conv2d(t, k, 2); }},
      {"conv2d_transpose", [&](const Tensor& t) { return ops::conv2d_transpose(t, kt, 2); }},
      {"avg_pool", [](const Tensor& t) { return ops::avg_pool(t, 1); }},
      {"blend", [&](const Tensor& t) { return ops::blend(t, Tensor(t.shape()), ws, we); }},
  };
  for (const auto& [name, f] : ops_under_test) {
    const Tensor fm = f(mix), fx = f(x), fy = f(y);
    for (std::size_t i = 0; i < fm.size(); ++i) {
      ASSERT_NEAR(fm[i], alpha * fx[i] + beta * fy[i], 1e-5) << name;
    }
  }
}

// The vectorized float kernels against the reference loops across strides,
// odd sizes and channel counts that do not fill a vector register.
TEST(FastKernels, MatchReference) {
  if (!ops::detail::has_fast_kernels()) GTEST_SKIP() << "built without fast kernels";
  struct Case { Shape x; int k, co, stride; };
  const std::vector<Case> cases = {{{2, 9, 11, 3}, 5, 12, 1},  {{1, 16, 16, 16}, 5, 12, 2},
                                   {{1, 7, 5, 6}, 5, 3, 1},    {{3, 8, 8, 12}, 5, 6, 2},
                                   {{1, 13, 3, 1}, 3, 16, 2},  {{2, 10, 10, 16}, 1, 17, 1},
                                   {{1, 34, 20, 16}, 5, 16, 2}};
  std::uint64_t seed = 200;
  for (const auto& c : cases) {
    const Tensor x = random_tensor(c.x, ++seed);
    const Tensor k = random_tensor({c.k, c.k, c.x.c(), c.co}, ++seed);
    const Shape ys = ops::conv2d_out_shape(c.x, k.shape(), c.stride);
    const Tensor g = random_tensor(ys, ++seed);
    auto all = [&] {
      return std::tuple{ops::conv2d(x, k, c.stride), ops::conv2d_backward_input(g, k, c.stride, c.x),
                        ops::conv2d_backward_kernel(x, g, c.stride, k.shape())};
    };
    const auto fast = all();
    ops::detail::set_fast_kernels_enabled(false);
    const auto ref = all();
    ops::detail::set_fast_kernels_enabled(true);
    auto near = [&](const Tensor& a, const Tensor& b, const char* what) {
      ASSERT_EQ(a.shape(), b.shape()) << what;
      for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_NEAR(a[i], b[i], 1e-4 * (1.0 + std::abs(b[i]))) << what << " " << to_string(c.x);
      }
    };
    near(std::get<0>(fast), std::get<0>(ref), "forward");
    near(std::get<1>(fast), std::get<1>(ref), "backward input");
    near(std::get<2>(fast), std::get<2>(ref), "backward kernel");
  }
}

}  // namespace
}  // namespace nwm

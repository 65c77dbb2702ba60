#include "nwm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#include "conv_kernels.hpp"

namespace nwm::ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void check_spatial(const Shape& x, const char* op) {
  require(x.n() > 0 && x.h() > 0 && x.w() > 0 && x.c() > 0,
          std::string(op) + ": empty input " + to_string(x));
}

void check_kernel(const Shape& k, int stride, const char* op) {
  require(k[0] > 0 && k[1] > 0 && k[2] > 0 && k[3] > 0,
          std::string(op) + ": empty kernel " + to_string(k));
  require(stride > 0, std::string(op) + ": stride must be positive");
}

// Reference loops. Used for every scalar type without a vectorized path.

template <class T>
void conv2d_generic(const BasicTensor<T>& x, const BasicTensor<T>& k, int s,
                    BasicTensor<T>& y) {
  const Shape xs = x.shape(), ks = k.shape(), ys = y.shape();
  const int kh = ks[0], kw = ks[1], ci = ks[2], co = ks[3];
  const int pt = same_pad_before(xs.h(), kh, s);
  const int pl = same_pad_before(xs.w(), kw, s);
  std::vector<T> acc(co);
  for (int n = 0; n < ys.n(); ++n) {
    for (int oy = 0; oy < ys.h(); ++oy) {
      for (int ox = 0; ox < ys.w(); ++ox) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * s + ky - pt;
          if (iy < 0 || iy >= xs.h()) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * s + kx - pl;
            if (ix < 0 || ix >= xs.w()) continue;
            const T* xv = &x.at(n, iy, ix, 0);
            const T* kv = &k.at(ky, kx, 0, 0);
            for (int c = 0; c < ci; ++c) {
              for (int o = 0; o < co; ++o) acc[o] += xv[c] * kv[c * co + o];
            }
          }
        }
        std::copy(acc.begin(), acc.end(), &y.at(n, oy, ox, 0));
      }
    }
  }
}

template <class T>
void conv2d_backward_input_generic(const BasicTensor<T>& g, const BasicTensor<T>& k,
                                   int s, BasicTensor<T>& dx) {
  const Shape xs = dx.shape(), ks = k.shape(), gs = g.shape();
  const int kh = ks[0], kw = ks[1], ci = ks[2], co = ks[3];
  const int pt = same_pad_before(xs.h(), kh, s);
  const int pl = same_pad_before(xs.w(), kw, s);
  std::vector<T> acc(ci);
  for (int n = 0; n < xs.n(); ++n) {
    for (int iy = 0; iy < xs.h(); ++iy) {
      for (int ix = 0; ix < xs.w(); ++ix) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int ky = 0; ky < kh; ++ky) {
          const int ty = iy + pt - ky;
          if (ty < 0 || ty % s != 0 || ty / s >= gs.h()) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int tx = ix + pl - kx;
            if (tx < 0 || tx % s != 0 || tx / s >= gs.w()) continue;
            const T* gv = &g.at(n, ty / s, tx / s, 0);
            const T* kv = &k.at(ky, kx, 0, 0);
            for (int o = 0; o < co; ++o) {
              for (int c = 0; c < ci; ++c) acc[c] += gv[o] * kv[c * co + o];
            }
          }
        }
        std::copy(acc.begin(), acc.end(), &dx.at(n, iy, ix, 0));
      }
    }
  }
}

template <class T>
void conv2d_backward_kernel_generic(const BasicTensor<T>& x, const BasicTensor<T>& g,
                                    int s, BasicTensor<T>& dk) {
  const Shape xs = x.shape(), ks = dk.shape(), gs = g.shape();
  const int kh = ks[0], kw = ks[1], ci = ks[2], co = ks[3];
  const int pt = same_pad_before(xs.h(), kh, s);
  const int pl = same_pad_before(xs.w(), kw, s);
  for (int ky = 0; ky < kh; ++ky) {
    for (int kx = 0; kx < kw; ++kx) {
      T* dkv = &dk.at(ky, kx, 0, 0);
      for (int n = 0; n < gs.n(); ++n) {
        for (int oy = 0; oy < gs.h(); ++oy) {
          const int iy = oy * s + ky - pt;
          if (iy < 0 || iy >= xs.h()) continue;
          for (int ox = 0; ox < gs.w(); ++ox) {
            const int ix = ox * s + kx - pl;
            if (ix < 0 || ix >= xs.w()) continue;
            const T* xv = &x.at(n, iy, ix, 0);
            const T* gv = &g.at(n, oy, ox, 0);
            for (int c = 0; c < ci; ++c) {
              for (int o = 0; o < co; ++o) dkv[c * co + o] += xv[c] * gv[o];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Shape conv2d_out_shape(const Shape& x, const Shape& kernel, int stride) {
  check_spatial(x, "conv2d");
  check_kernel(kernel, stride, "conv2d");
  require(x.c() == kernel[2], "conv2d: input has " + std::to_string(x.c()) +
                                  " channels, kernel expects " + std::to_string(kernel[2]));
  return Shape{x.n(), same_out(x.h(), stride), same_out(x.w(), stride), kernel[3]};
}

Shape conv2d_transpose_out_shape(const Shape& x, const Shape& kernel, int stride) {
  check_spatial(x, "conv2d_transpose");
  check_kernel(kernel, stride, "conv2d_transpose");
  require(x.c() == kernel[3], "conv2d_transpose: input has " + std::to_string(x.c()) +
                                  " channels, kernel expects " + std::to_string(kernel[3]));
  return Shape{x.n(), x.h() * stride, x.w() * stride, kernel[2]};
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride) {
  BasicTensor<T> y(conv2d_out_shape(x.shape(), kernel.shape(), stride));
  if constexpr (std::is_same_v<T, float>) {
    if (detail::has_fast_kernels()) {
      detail::conv2d_forward_f32(x, kernel, stride, y);
      return y;
    }
  }
  conv2d_generic(x, kernel, stride, y);
  return y;
}

template <class T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out,
                                     const BasicTensor<T>& kernel, int stride,
                                     const Shape& in_shape) {
  require(conv2d_out_shape(in_shape, kernel.shape(), stride) == grad_out.shape(),
          "conv2d_backward_input: gradient shape " + to_string(grad_out.shape()) +
              " does not match input shape " + to_string(in_shape));
  BasicTensor<T> dx(in_shape);
  if constexpr (std::is_same_v<T, float>) {
    if (detail::has_fast_kernels()) {
      detail::conv2d_backward_input_f32(grad_out, kernel, stride, dx);
      return dx;
    }
  }
  conv2d_backward_input_generic(grad_out, kernel, stride, dx);
  return dx;
}

template <class T>
BasicTensor<T> conv2d_backward_kernel(const BasicTensor<T>& x,
                                      const BasicTensor<T>& grad_out, int stride,
                                      const Shape& kernel_shape) {
  require(conv2d_out_shape(x.shape(), kernel_shape, stride) == grad_out.shape(),
          "conv2d_backward_kernel: gradient shape mismatch");
  BasicTensor<T> dk(kernel_shape);
  if constexpr (std::is_same_v<T, float>) {
    if (detail::has_fast_kernels()) {
      detail::conv2d_backward_kernel_f32(x, grad_out, stride, dk);
      return dk;
    }
  }
  conv2d_backward_kernel_generic(x, grad_out, stride, dk);
  return dk;
}

template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                                int stride) {
  const Shape out = conv2d_transpose_out_shape(x.shape(), kernel.shape(), stride);
  return conv2d_backward_input(x, kernel, stride, out);
}

template <class T>
BasicTensor<T> conv2d_transpose_backward_input(const BasicTensor<T>& grad_out,
                                               const BasicTensor<T>& kernel, int stride) {
  return conv2d(grad_out, kernel, stride);
}

template <class T>
BasicTensor<T> conv2d_transpose_backward_kernel(const BasicTensor<T>& x,
                                                const BasicTensor<T>& grad_out,
                                                int stride, const Shape& kernel_shape) {
  // <convT(x, k), g> = <x, conv2d(g, k)>, so the roles of x and g swap.
  return conv2d_backward_kernel(grad_out, x, stride, kernel_shape);
}

template <class T>
BasicTensor<T> avg_pool(const BasicTensor<T>& x, int stride) {
  check_spatial(x.shape(), "avg_pool");
  require(stride > 0, "avg_pool: stride must be positive");
  const Shape xs = x.shape();
  const int oh = same_out(xs.h(), stride), ow = same_out(xs.w(), stride);
  const int pt = same_pad_before(xs.h(), 2, stride);
  const int pl = same_pad_before(xs.w(), 2, stride);
  BasicTensor<T> y(Shape{xs.n(), oh, ow, xs.c()});
  const int C = xs.c();
  for (int n = 0; n < xs.n(); ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = std::max(oy * stride - pt, 0);
      const int y1 = std::min(oy * stride - pt + 2, xs.h());
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = std::max(ox * stride - pl, 0);
        const int x1 = std::min(ox * stride - pl + 2, xs.w());
        const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
        T* out = &y.at(n, oy, ox, 0);
        for (int iy = y0; iy < y1; ++iy) {
          for (int ix = x0; ix < x1; ++ix) {
            const T* in = &x.at(n, iy, ix, 0);
            for (int c = 0; c < C; ++c) out[c] += in[c];
          }
        }
        for (int c = 0; c < C; ++c) out[c] *= inv;
      }
    }
  }
  return y;
}

template <class T>
BasicTensor<T> avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& in_shape,
                                 int stride) {
  check_spatial(in_shape, "avg_pool_backward");
  const int oh = same_out(in_shape.h(), stride), ow = same_out(in_shape.w(), stride);
  require(grad_out.shape() == Shape(in_shape.n(), oh, ow, in_shape.c()),
          "avg_pool_backward: gradient shape mismatch");
  const int pt = same_pad_before(in_shape.h(), 2, stride);
  const int pl = same_pad_before(in_shape.w(), 2, stride);
  BasicTensor<T> dx(in_shape);
  const int C = in_shape.c();
  for (int n = 0; n < in_shape.n(); ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = std::max(oy * stride - pt, 0);
      const int y1 = std::min(oy * stride - pt + 2, in_shape.h());
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = std::max(ox * stride - pl, 0);
        const int x1 = std::min(ox * stride - pl + 2, in_shape.w());
        const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
        const T* g = &grad_out.at(n, oy, ox, 0);
        for (int iy = y0; iy < y1; ++iy) {
          for (int ix = x0; ix < x1; ++ix) {
            T* d = &dx.at(n, iy, ix, 0);
            for (int c = 0; c < C; ++c) d[c] += g[c] * inv;
          }
        }
      }
    }
  }
  return dx;
}

namespace {

template <class T>
void check_blend(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicTensor<T>& ws,
                 const BasicTensor<T>& we) {
  const Shape as = a.shape(), bs = b.shape();
  require(as.h() == bs.h() && as.w() == bs.w() && as.c() == bs.c() &&
              (bs.n() == as.n() || bs.n() == 1),
          "blend: operand shapes " + to_string(as) + " and " + to_string(bs) + " differ");
  const Shape wshape{1, 1, 1, as.c()};
  require(ws.shape() == wshape && we.shape() == wshape,
          "blend: weights must be per-channel vectors of length " + std::to_string(as.c()));
}

template <class T>
void blend_backward_image(const T* __restrict g, const T* __restrict a, const T* __restrict b,
                          const T* __restrict ws, const T* __restrict we, std::size_t count,
                          std::size_t C, T* __restrict ga, T* __restrict gb,
                          double* __restrict gws, double* __restrict gwe) {
  for (std::size_t i = 0; i < count; i += C) {
    for (std::size_t c = 0; c < C; ++c) {
      const T gv = g[i + c];
      ga[i + c] = ws[c] * gv;
      gb[i + c] += we[c] * gv;
      gws[c] += static_cast<double>(gv) * a[i + c];
      gwe[c] += static_cast<double>(gv) * b[i + c];
    }
  }
}

}  // namespace

template <class T>
BasicTensor<T> blend(const BasicTensor<T>& a, const BasicTensor<T>& b,
                     const BasicTensor<T>& ws, const BasicTensor<T>& we) {
  check_blend(a, b, ws, we);
  BasicTensor<T> out(a.shape());
  const std::size_t C = a.shape().c();
  const std::size_t per_image = a.size() / a.shape().n();
  const bool broadcast = b.shape().n() != a.shape().n();
  for (int n = 0; n < a.shape().n(); ++n) {
    const T* ap = a.data().data() + n * per_image;
    const T* bp = b.data().data() + (broadcast ? 0 : n * per_image);
    T* op = out.data().data() + n * per_image;
    for (std::size_t i = 0; i < per_image; i += C) {
      for (std::size_t c = 0; c < C; ++c) op[i + c] = ws[c] * ap[i + c] + we[c] * bp[i + c];
    }
  }
  return out;
}

template <class T>
BlendGrads<T> blend_backward(const BasicTensor<T>& g, const BasicTensor<T>& a,
                             const BasicTensor<T>& b, const BasicTensor<T>& ws,
                             const BasicTensor<T>& we) {
  check_blend(a, b, ws, we);
  require(g.shape() == a.shape(), "blend_backward: gradient shape mismatch");
  const std::size_t C = a.shape().c();
  const std::size_t per_image = a.size() / a.shape().n();
  const bool broadcast = b.shape().n() != a.shape().n();
  BlendGrads<T> out{BasicTensor<T>(a.shape()), BasicTensor<T>(b.shape()),
                    BasicTensor<T>(ws.shape()), BasicTensor<T>(we.shape())};
  std::vector<double> gws(C, 0.0), gwe(C, 0.0);
  for (int n = 0; n < a.shape().n(); ++n) {
    const T* gp = g.data().data() + n * per_image;
    const T* ap = a.data().data() + n * per_image;
    const std::size_t boff = broadcast ? 0 : n * per_image;
    const T* bp = b.data().data() + boff;
    T* gbp = out.b.data().data() + boff;
    T* gap = out.a.data().data() + n * per_image;
    blend_backward_image(gp, ap, bp, ws.data().data(), we.data().data(), per_image, C, gap, gbp,
                         gws.data(), gwe.data());
  }
  for (std::size_t c = 0; c < C; ++c) {
    out.ws[c] = static_cast<T>(gws[c]);
    out.we[c] = static_cast<T>(gwe[c]);
  }
  return out;
}

namespace {

// k[ky, kx, c, o] * w[c]
template <class T>
BasicTensor<T> scale_kernel_inputs(const BasicTensor<T>& k, const BasicTensor<T>& w) {
  BasicTensor<T> out(k.shape());
  const std::size_t ci = k.shape()[2], co = k.shape()[3];
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = k[i] * w[(i / co) % ci];
  return out;
}

// Sum over the batch axis, as a batch-1 tensor.
template <class T>
BasicTensor<T> sum_batch(const BasicTensor<T>& x) {
  const Shape s = x.shape();
  BasicTensor<T> out(Shape{1, s.h(), s.w(), s.c()});
  const std::size_t per_image = out.size();
  for (int n = 0; n < s.n(); ++n) {
    const T* src = x.data().data() + n * per_image;
    for (std::size_t i = 0; i < per_image; ++i) out[i] += src[i];
  }
  return out;
}

}  // namespace

template <class T>
BasicTensor<T> blend_conv2d(const BasicTensor<T>& a, const BasicTensor<T>& b,
                            const BasicTensor<T>& ws, const BasicTensor<T>& we,
                            const BasicTensor<T>& kernel, int stride) {
  check_blend(a, b, ws, we);
  BasicTensor<T> out = conv2d(a, scale_kernel_inputs(kernel, ws), stride);
  const BasicTensor<T> mark = conv2d(b, scale_kernel_inputs(kernel, we), stride);
  const std::size_t per_image = mark.size() / mark.shape().n();
  const bool broadcast = b.shape().n() != a.shape().n();
  for (int n = 0; n < out.shape().n(); ++n) {
    T* dst = out.data().data() + n * per_image;
    const T* src = mark.data().data() + (broadcast ? 0 : n * per_image);
    for (std::size_t i = 0; i < per_image; ++i) dst[i] += src[i];
  }
  return out;
}

template <class T>
BlendConvGrads<T> blend_conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& a,
                                        const BasicTensor<T>& b, const BasicTensor<T>& ws,
                                        const BasicTensor<T>& we, const BasicTensor<T>& kernel,
                                        int stride, bool need_a) {
  check_blend(a, b, ws, we);
  const bool broadcast = b.shape().n() != a.shape().n();
  const BasicTensor<T> ks = scale_kernel_inputs(kernel, ws);
  const BasicTensor<T> ke = scale_kernel_inputs(kernel, we);
  const BasicTensor<T> g_mark = broadcast ? sum_batch(grad_out) : grad_out;

  BlendConvGrads<T> out;
  if (need_a) out.a = conv2d_backward_input(grad_out, ks, stride, a.shape());
  out.b = conv2d_backward_input(g_mark, ke, stride, b.shape());
  const BasicTensor<T> dks = conv2d_backward_kernel(a, grad_out, stride, kernel.shape());
  const BasicTensor<T> dke = conv2d_backward_kernel(b, g_mark, stride, kernel.shape());

  const std::size_t ci = kernel.shape()[2], co = kernel.shape()[3];
  out.kernel = BasicTensor<T>(kernel.shape());
  std::vector<double> gws(ci, 0.0), gwe(ci, 0.0);
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    const std::size_t c = (i / co) % ci;
    out.kernel[i] = dks[i] * ws[c] + dke[i] * we[c];
    gws[c] += static_cast<double>(dks[i]) * kernel[i];
    gwe[c] += static_cast<double>(dke[i]) * kernel[i];
  }
  out.ws = BasicTensor<T>(ws.shape());
  out.we = BasicTensor<T>(we.shape());
  for (std::size_t c = 0; c < ci; ++c) {
    out.ws[c] = static_cast<T>(gws[c]);
    out.we[c] = static_cast<T>(gwe[c]);
  }
  return out;
}

template <class T>
double mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "mse: shape " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
  require(a.size() > 0, "mse: empty operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <class T>
BasicTensor<T> mse_backward(const BasicTensor<T>& a, const BasicTensor<T>& b,
                            double upstream) {
  require(a.shape() == b.shape(), "mse_backward: shape mismatch");
  BasicTensor<T> g(a.shape());
  const double scale = 2.0 * upstream / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    g[i] = static_cast<T>(scale * (static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return g;
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

#define NWM_INSTANTIATE_OPS(T)                                                          \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, int);   \
  template BasicTensor<T> conv2d_backward_input(const BasicTensor<T>&,                 \
                                                const BasicTensor<T>&, int, const Shape&); \
  template BasicTensor<T> conv2d_backward_kernel(const BasicTensor<T>&,                \
                                                 const BasicTensor<T>&, int, const Shape&); \
  template BasicTensor<T> conv2d_transpose(const BasicTensor<T>&, const BasicTensor<T>&, \
                                           int);                                        \
  template BasicTensor<T> conv2d_transpose_backward_input(const BasicTensor<T>&,       \
                                                          const BasicTensor<T>&, int); \
  template BasicTensor<T> conv2d_transpose_backward_kernel(                            \
      const BasicTensor<T>&, const BasicTensor<T>&, int, const Shape&);                \
  template BasicTensor<T> avg_pool(const BasicTensor<T>&, int);                        \
  template BasicTensor<T> avg_pool_backward(const BasicTensor<T>&, const Shape&, int); \
  template BasicTensor<T> blend(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BlendGrads<T> blend_backward(const BasicTensor<T>&, const BasicTensor<T>&,  \
                                        const BasicTensor<T>&, const BasicTensor<T>&,  \
                                        const BasicTensor<T>&);                        \
  template BasicTensor<T> blend_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                       const BasicTensor<T>&, const BasicTensor<T>&,   \
                                       const BasicTensor<T>&, int);                    \
  template BlendConvGrads<T> blend_conv2d_backward(                                    \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,             \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, bool); \
  template double mse(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mse_backward(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                       double);                                        \
  template BasicTensor<T> tanh(const BasicTensor<T>&);

NWM_INSTANTIATE_OPS(float)
NWM_INSTANTIATE_OPS(double)

#undef NWM_INSTANTIATE_OPS

}  // namespace nwm::ops

#include "conv_kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <type_traits>
#include <utility>
#include <vector>

#include "nwm/ops.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace nwm::ops::detail {

namespace {
bool g_enabled = true;
}

void set_fast_kernels_enabled(bool enabled) { g_enabled = enabled; }

#if !defined(__AVX512F__)

bool has_fast_kernels() { return false; }
void conv2d_forward_f32(const Tensor&, const Tensor&, int, Tensor&) {}
void conv2d_backward_input_f32(const Tensor&, const Tensor&, int, Tensor&) {}
void conv2d_backward_kernel_f32(const Tensor&, const Tensor&, int, Tensor&) {}

#else

bool has_fast_kernels() { return g_enabled; }

namespace {

constexpr int kLanes = 16;
constexpr int kBlock = 8;
// Output rows per partial sum in the kernel gradient.
constexpr int kRowChunk = 8;

template <int V>
using Const = std::integral_constant<int, V>;

// Channel counts and strides the network uses get compile-time
// specializations; anything else takes the runtime path (Const<0>).
template <class F>
void with_channels(int c, F&& f) {
  switch (c) {
    case 3: f(Const<3>{}); break;
    case 6: f(Const<6>{}); break;
    case 12: f(Const<12>{}); break;
    case 16: f(Const<16>{}); break;
    default: f(Const<0>{}); break;
  }
}

template <class F>
void with_stride(int s, F&& f) {
  switch (s) {
    case 1: f(Const<1>{}); break;
    case 2: f(Const<2>{}); break;
    default: f(Const<0>{}); break;
  }
}

inline __mmask16 tail_mask(int n) {
  return n >= kLanes ? static_cast<__mmask16>(0xFFFF)
                     : static_cast<__mmask16>((1u << n) - 1u);
}

// Rows [row0, row1) of the zero-padded batch entry n, where padded cell
// (py, px) holds x[n, py - top, px - left].
void pad_rows(const Tensor& x, int n, int top, int left, int row0, int row1, int wp,
              std::vector<float>& out) {
  const Shape xs = x.shape();
  const int C = xs.c();
  out.assign(static_cast<std::size_t>(row1 - row0) * wp * C, 0.0f);
  const int px0 = std::max(left, 0);
  const int px1 = std::min(left + xs.w(), wp);
  if (px1 <= px0) return;
  for (int py = std::max(row0, top); py < std::min(row1, top + xs.h()); ++py) {
    std::copy_n(&x.at(n, py - top, px0 - left, 0), static_cast<std::size_t>(px1 - px0) * C,
                &out[(static_cast<std::size_t>(py - row0) * wp + px0) * C]);
  }
}

// Output rows per band; a band pads only the input rows it reads, so the
// padded buffer stays in cache.
constexpr int kBandRows = 8;

struct ForwardArgs {
  std::size_t row_stride;  // floats per padded input row
  int ci, stride, kh, kw, co;
};

template <int B, int CI, int S>
inline void forward_block(const ForwardArgs& a, const float* xrow, const float* kbase,
                          __mmask16 m, float* out) {
  const int ci = CI ? CI : a.ci;
  const int pix = (CI && S) ? CI * S : a.ci * a.stride;
  __m512 acc[B];
  for (int j = 0; j < B; ++j) acc[j] = _mm512_setzero_ps();
  for (int ky = 0; ky < a.kh; ++ky) {
    const float* xr = xrow + ky * a.row_stride;
    for (int kx = 0; kx < a.kw; ++kx) {
      const float* xk = xr + static_cast<std::size_t>(kx) * ci;
      const float* kk = kbase + static_cast<std::size_t>(ky * a.kw + kx) * ci * a.co;
#pragma GCC unroll 16
      for (int c = 0; c < ci; ++c) {
        const __m512 kv = _mm512_maskz_loadu_ps(m, kk + static_cast<std::size_t>(c) * a.co);
#pragma GCC unroll 16
        for (int j = 0; j < B; ++j) {
          acc[j] = _mm512_fmadd_ps(_mm512_set1_ps(xk[j * pix + c]), kv, acc[j]);
        }
      }
    }
  }
  for (int j = 0; j < B; ++j) {
    _mm512_mask_storeu_ps(out + static_cast<std::size_t>(j) * a.co, m, acc[j]);
  }
}

// B output pixels of one row. Each input value is broadcast once and
// multiplied into every output pixel whose window covers it, so the loads per
// FMA drop to about (KW + (B - 1) * S + KW) / (B * KW).
template <int B, int KW, int CI, int S>
inline void forward_block_shared(const ForwardArgs& a, const float* xrow, const float* kbase,
                                 __mmask16 m, float* out) {
  constexpr int NP = (B - 1) * S + KW;
  const int ci = CI ? CI : a.ci;
  __m512 acc[B];
#pragma GCC unroll 32
  for (int j = 0; j < B; ++j) acc[j] = _mm512_setzero_ps();
  for (int ky = 0; ky < a.kh; ++ky) {
    const float* xr = xrow + ky * a.row_stride;
    const float* kr = kbase + static_cast<std::size_t>(ky) * KW * ci * a.co;
    for (int c = 0; c < ci; ++c) {
      __m512 kv[KW];
#pragma GCC unroll 8
      for (int kx = 0; kx < KW; ++kx) {
        kv[kx] = _mm512_maskz_loadu_ps(m, kr + static_cast<std::size_t>(kx * ci + c) * a.co);
      }
#pragma GCC unroll 64
      for (int p = 0; p < NP; ++p) {
        const __m512 xv = _mm512_set1_ps(xr[p * ci + c]);
#pragma GCC unroll 8
        for (int kx = 0; kx < KW; ++kx) {
          const int j = p - kx;
          if (j >= 0 && j % S == 0 && j / S < B) acc[j / S] = _mm512_fmadd_ps(xv, kv[kx], acc[j / S]);
        }
      }
    }
  }
#pragma GCC unroll 32
  for (int j = 0; j < B; ++j) {
    _mm512_mask_storeu_ps(out + static_cast<std::size_t>(j) * a.co, m, acc[j]);
  }
}

constexpr int kSharedBlock = 16;

template <int CI, int S>
void forward_row(const ForwardArgs& a, const float* xrow, const float* kp, int ow,
                 float* yrow) {
  const std::size_t pix = static_cast<std::size_t>(a.stride) * a.ci;
  for (int cc = 0; cc < a.co; cc += kLanes) {
    const __mmask16 m = tail_mask(a.co - cc);
    int ox = 0;
    if constexpr (S != 0) {
      auto shared = [&](auto KW) {
        for (; ox + kSharedBlock <= ow; ox += kSharedBlock) {
          forward_block_shared<kSharedBlock, decltype(KW)::value, CI, S>(
              a, xrow + ox * pix, kp + cc, m, yrow + static_cast<std::size_t>(ox) * a.co + cc);
        }
      };
      if (a.kw == 5) shared(Const<5>{});
      if (a.kw == 3) shared(Const<3>{});
    }
    for (; ox + kBlock <= ow; ox += kBlock) {
      forward_block<kBlock, CI, S>(a, xrow + ox * pix, kp + cc, m,
                                   yrow + static_cast<std::size_t>(ox) * a.co + cc);
    }
    for (; ox < ow; ++ox) {
      forward_block<1, CI, S>(a, xrow + ox * pix, kp + cc, m,
                              yrow + static_cast<std::size_t>(ox) * a.co + cc);
    }
  }
}

struct RowTap {
  int ky;
  int row;  // padded gradient row
};

struct ColTap {
  int kx;
  int offset;  // padded gradient column of block element t = 0
};

struct BackwardInputArgs {
  const float* gp;
  std::size_t grow_stride;
  int cb, kw, ca;
  const float* kt;
  std::size_t out_stride;
};

template <int B, int CB>
inline void backward_input_block(const BackwardInputArgs& a, const std::vector<RowTap>& rows,
                                 const std::vector<ColTap>& cols, int t0, int a0,
                                 __mmask16 m, float* out) {
  const int cb = CB ? CB : a.cb;
  __m512 acc[B];
  for (int j = 0; j < B; ++j) acc[j] = _mm512_setzero_ps();
  for (const RowTap& r : rows) {
    const float* gr = a.gp + static_cast<std::size_t>(r.row) * a.grow_stride;
    for (const ColTap& c : cols) {
      const float* gc = gr + static_cast<std::size_t>(t0 + c.offset) * cb;
      const float* kk = a.kt + static_cast<std::size_t>(r.ky * a.kw + c.kx) * cb * a.ca + a0;
#pragma GCC unroll 16
      for (int b = 0; b < cb; ++b) {
        const __m512 kv = _mm512_maskz_loadu_ps(m, kk + static_cast<std::size_t>(b) * a.ca);
#pragma GCC unroll 16
        for (int j = 0; j < B; ++j) {
          acc[j] = _mm512_fmadd_ps(_mm512_set1_ps(gc[j * cb + b]), kv, acc[j]);
        }
      }
    }
  }
  for (int j = 0; j < B; ++j) _mm512_mask_storeu_ps(out + j * a.out_stride, m, acc[j]);
}

// Same contraction with the column taps sharing broadcasts. kc[i] is the
// kernel tap whose gradient column is o_min + i for block element 0.
template <int B, int NC, int CB>
inline void backward_input_block_shared(const BackwardInputArgs& a,
                                        const std::vector<RowTap>& rows, const int* kc,
                                        int o_min, int t0, int a0, __mmask16 m, float* out) {
  constexpr int NP = B + NC - 1;
  const int cb = CB ? CB : a.cb;
  __m512 acc[B];
#pragma GCC unroll 32
  for (int j = 0; j < B; ++j) acc[j] = _mm512_setzero_ps();
  for (const RowTap& r : rows) {
    const float* gc = a.gp + static_cast<std::size_t>(r.row) * a.grow_stride +
                      static_cast<std::size_t>(t0 + o_min) * cb;
    const float* kr = a.kt + static_cast<std::size_t>(r.ky * a.kw) * cb * a.ca + a0;
    for (int b = 0; b < cb; ++b) {
      __m512 kv[NC];
#pragma GCC unroll 8
      for (int i = 0; i < NC; ++i) {
        kv[i] = _mm512_maskz_loadu_ps(m, kr + (static_cast<std::size_t>(kc[i]) * cb + b) * a.ca);
      }
#pragma GCC unroll 64
      for (int q = 0; q < NP; ++q) {
        const __m512 gv = _mm512_set1_ps(gc[q * cb + b]);
#pragma GCC unroll 8
        for (int i = 0; i < NC; ++i) {
          const int j = q - i;
          if (j >= 0 && j < B) acc[j] = _mm512_fmadd_ps(gv, kv[i], acc[j]);
        }
      }
    }
  }
#pragma GCC unroll 32
  for (int j = 0; j < B; ++j) _mm512_mask_storeu_ps(out + j * a.out_stride, m, acc[j]);
}

// Column taps as consecutive offsets; false if they are not.
bool consecutive_taps(const std::vector<ColTap>& cols, int* kc, int& o_min) {
  if (cols.empty() || cols.size() > 5) return false;
  o_min = cols[0].offset;
  for (const ColTap& c : cols) o_min = std::min(o_min, c.offset);
  bool seen[5] = {};
  for (const ColTap& c : cols) {
    const int i = c.offset - o_min;
    if (i >= static_cast<int>(cols.size()) || seen[i]) return false;
    seen[i] = true;
    kc[i] = c.kx;
  }
  return true;
}

template <int CB>
void backward_input_phase(const BackwardInputArgs& a, const std::vector<RowTap>& rows,
                          const std::vector<ColTap>& cols, int tn, float* out) {
  for (int a0 = 0; a0 < a.ca; a0 += kLanes) {
    const __mmask16 m = tail_mask(a.ca - a0);
    int t0 = 0;
    int kc[5];
    int o_min = 0;
    if (consecutive_taps(cols, kc, o_min)) {
      auto shared = [&](auto NC) {
        for (; t0 + kSharedBlock <= tn; t0 += kSharedBlock) {
          backward_input_block_shared<kSharedBlock, decltype(NC)::value, CB>(
              a, rows, kc, o_min, t0, a0, m, out + t0 * a.out_stride + a0);
        }
      };
      switch (cols.size()) {
        case 1: shared(Const<1>{}); break;
        case 2: shared(Const<2>{}); break;
        case 3: shared(Const<3>{}); break;
        case 4: shared(Const<4>{}); break;
        case 5: shared(Const<5>{}); break;
      }
    }
    for (; t0 + kBlock <= tn; t0 += kBlock) {
      backward_input_block<kBlock, CB>(a, rows, cols, t0, a0, m, out + t0 * a.out_stride + a0);
    }
    for (; t0 < tn; ++t0) {
      backward_input_block<1, CB>(a, rows, cols, t0, a0, m, out + t0 * a.out_stride + a0);
    }
  }
}

// One (ky, kx) tap of the kernel gradient over a chunk of output rows.
struct KernelGradPass {
  const float* xp;
  std::size_t x_row_stride;
  int stride;
  int ca;
  const float* g;  // gradient of batch entry n
  int ow;
  int cb;
  int oy0, oy1;
  int ky, kx;
  float* dst;  // partial buffer for this (ky, kx)
};

// Vector over output channels b, one accumulator per input channel a.
// dst layout [a][b].
template <int G>
void kernel_grad_over_b(const KernelGradPass& p, int a0, int b0, __mmask16 m) {
  __m512 acc[G];
  for (int a = 0; a < G; ++a) acc[a] = _mm512_setzero_ps();
  const std::size_t x_pix = static_cast<std::size_t>(p.stride) * p.ca;
  for (int oy = p.oy0; oy < p.oy1; ++oy) {
    const float* xr = p.xp + static_cast<std::size_t>(oy * p.stride + p.ky) * p.x_row_stride +
                      static_cast<std::size_t>(p.kx) * p.ca + a0;
    const float* gr = p.g + static_cast<std::size_t>(oy) * p.ow * p.cb + b0;
    for (int ox = 0; ox < p.ow; ++ox) {
      const __m512 gv = _mm512_maskz_loadu_ps(m, gr + static_cast<std::size_t>(ox) * p.cb);
      const float* xv = xr + ox * x_pix;
#pragma GCC unroll 16
      for (int a = 0; a < G; ++a) acc[a] = _mm512_fmadd_ps(_mm512_set1_ps(xv[a]), gv, acc[a]);
    }
  }
  for (int a = 0; a < G; ++a) {
    _mm512_mask_storeu_ps(p.dst + static_cast<std::size_t>(a0 + a) * p.cb + b0, m, acc[a]);
  }
}

// Vector over input channels a, one accumulator per output channel b.
// dst layout [b][a].
template <int G>
void kernel_grad_over_a(const KernelGradPass& p, int a0, int b0, __mmask16 m) {
  __m512 acc[G];
  for (int b = 0; b < G; ++b) acc[b] = _mm512_setzero_ps();
  const std::size_t x_pix = static_cast<std::size_t>(p.stride) * p.ca;
  for (int oy = p.oy0; oy < p.oy1; ++oy) {
    const float* xr = p.xp + static_cast<std::size_t>(oy * p.stride + p.ky) * p.x_row_stride +
                      static_cast<std::size_t>(p.kx) * p.ca + a0;
    const float* gr = p.g + static_cast<std::size_t>(oy) * p.ow * p.cb + b0;
    for (int ox = 0; ox < p.ow; ++ox) {
      const __m512 xv = _mm512_maskz_loadu_ps(m, xr + ox * x_pix);
      const float* gv = gr + static_cast<std::size_t>(ox) * p.cb;
#pragma GCC unroll 16
      for (int b = 0; b < G; ++b) acc[b] = _mm512_fmadd_ps(_mm512_set1_ps(gv[b]), xv, acc[b]);
    }
  }
  for (int b = 0; b < G; ++b) {
    _mm512_mask_storeu_ps(p.dst + static_cast<std::size_t>(b0 + b) * p.ca + a0, m, acc[b]);
  }
}

// All KW column taps of one kernel row at once, G output channels b from b0.
// Each x vector is loaded once per pixel and reused by every b.
template <int KW, int G>
void kernel_grad_over_a_row(const KernelGradPass& p, int a0, int b0, __mmask16 m) {
  __m512 acc[KW][G];
#pragma GCC unroll 8
  for (int kx = 0; kx < KW; ++kx)
#pragma GCC unroll 8
    for (int b = 0; b < G; ++b) acc[kx][b] = _mm512_setzero_ps();
  const std::size_t x_pix = static_cast<std::size_t>(p.stride) * p.ca;
  for (int oy = p.oy0; oy < p.oy1; ++oy) {
    const float* xr = p.xp + static_cast<std::size_t>(oy * p.stride + p.ky) * p.x_row_stride + a0;
    const float* gr = p.g + static_cast<std::size_t>(oy) * p.ow * p.cb + b0;
    for (int ox = 0; ox < p.ow; ++ox) {
      const float* xo = xr + ox * x_pix;
      const float* gv = gr + static_cast<std::size_t>(ox) * p.cb;
      __m512 gb[G];
#pragma GCC unroll 8
      for (int b = 0; b < G; ++b) gb[b] = _mm512_set1_ps(gv[b]);
#pragma GCC unroll 8
      for (int kx = 0; kx < KW; ++kx) {
        const __m512 xv = _mm512_maskz_loadu_ps(m, xo + static_cast<std::size_t>(kx) * p.ca);
#pragma GCC unroll 8
        for (int b = 0; b < G; ++b) acc[kx][b] = _mm512_fmadd_ps(gb[b], xv, acc[kx][b]);
      }
    }
  }
  const std::size_t tap = static_cast<std::size_t>(p.ca) * p.cb;
#pragma GCC unroll 8
  for (int kx = 0; kx < KW; ++kx)
#pragma GCC unroll 8
    for (int b = 0; b < G; ++b) {
      _mm512_mask_storeu_ps(p.dst + kx * tap + static_cast<std::size_t>(b0 + b) * p.ca + a0, m,
                            acc[kx][b]);
    }
}

constexpr int kRowGroup = 4;

template <bool OverA, int... Gs>
void dispatch_group(int g, const KernelGradPass& p, int a0, int b0, __mmask16 m,
                    std::integer_sequence<int, Gs...>) {
  if constexpr (OverA) {
    ((g == Gs + 1 ? (kernel_grad_over_a<Gs + 1>(p, a0, b0, m), true) : false) || ...);
  } else {
    ((g == Gs + 1 ? (kernel_grad_over_b<Gs + 1>(p, a0, b0, m), true) : false) || ...);
  }
}

}  // namespace

void conv2d_forward_f32(const Tensor& x, const Tensor& k, int s, Tensor& y) {
  const Shape xs = x.shape(), ks = k.shape(), ys = y.shape();
  const int kh = ks[0], kw = ks[1], ci = ks[2], co = ks[3];
  const int oh = ys.h(), ow = ys.w();
  const int pt = same_pad_before(xs.h(), kh, s);
  const int pl = same_pad_before(xs.w(), kw, s);
  const int wp = (ow - 1) * s + kw;
  const ForwardArgs args{static_cast<std::size_t>(wp) * ci, ci, s, kh, kw, co};
  const float* kp = k.data().data();
  const int bands = (oh + kBandRows - 1) / kBandRows;
  with_channels(ci, [&](auto CI) {
    with_stride(s, [&](auto S) {
#pragma omp parallel
      {
        std::vector<float> xp;
#pragma omp for schedule(static) collapse(2)
        for (int n = 0; n < xs.n(); ++n) {
          for (int band = 0; band < bands; ++band) {
            const int oy0 = band * kBandRows, oy1 = std::min(oh, oy0 + kBandRows);
            const int row0 = oy0 * s;
            pad_rows(x, n, pt, pl, row0, (oy1 - 1) * s + kh, wp, xp);
            for (int oy = oy0; oy < oy1; ++oy) {
              forward_row<decltype(CI)::value, decltype(S)::value>(
                  args, xp.data() + static_cast<std::size_t>(oy * s - row0) * args.row_stride, kp,
                  ow, &y.at(n, oy, 0, 0));
            }
          }
        }
      }
    });
  });
}

void conv2d_backward_input_f32(const Tensor& g, const Tensor& k, int s, Tensor& dx) {
  const Shape xs = dx.shape(), ks = k.shape(), gs = g.shape();
  const int kh = ks[0], kw = ks[1], ca = ks[2], cb = ks[3];
  const int pt = same_pad_before(xs.h(), kh, s);
  const int pl = same_pad_before(xs.w(), kw, s);
  const int P = kh / s + 2, Q = kw / s + 2;
  const int gh = gs.h() + 2 * P, gw = gs.w() + 2 * Q;

  // kt[ky][kx][b][a] = k[ky][kx][a][b], so the output channel is contiguous.
  std::vector<float> kt(k.size());
  for (int ky = 0; ky < kh; ++ky)
    for (int kx = 0; kx < kw; ++kx)
      for (int a = 0; a < ca; ++a)
        for (int b = 0; b < cb; ++b)
          kt[((static_cast<std::size_t>(ky) * kw + kx) * cb + b) * ca + a] = k.at(ky, kx, a, b);

  auto divisible = [s](int t) { return ((t % s) + s) % s == 0; };

  // Padded gradient rows read by input rows [y0, y1).
  auto row_span = [&](int y0, int y1) {
    int lo = gh, hi = 0;
    for (int y = y0; y < y1; ++y) {
      for (int ky = 0; ky < kh; ++ky) {
        const int t = y + pt - ky;
        if (!divisible(t)) continue;
        const int row = t / s + P;
        if (row < 0 || row >= gh) continue;
        lo = std::min(lo, row);
        hi = std::max(hi, row + 1);
      }
    }
    return std::pair{lo, std::max(lo, hi)};
  };

  const int bands = (xs.h() + kBandRows - 1) / kBandRows;
  with_channels(cb, [&](auto CB) {
#pragma omp parallel
    {
      std::vector<float> gp;
      std::vector<RowTap> rows;
      std::vector<ColTap> cols;
#pragma omp for schedule(static) collapse(2)
      for (int n = 0; n < xs.n(); ++n) {
        for (int band = 0; band < bands; ++band) {
          const int y0 = band * kBandRows, y1 = std::min(xs.h(), y0 + kBandRows);
          const auto [row0, row1] = row_span(y0, y1);
          pad_rows(g, n, P, Q, row0, row1, gw, gp);
          const BackwardInputArgs args{gp.data(), static_cast<std::size_t>(gw) * cb, cb, kw, ca,
                                       kt.data(), static_cast<std::size_t>(s) * ca};
          for (int y = y0; y < y1; ++y) {
            rows.clear();
            for (int ky = 0; ky < kh; ++ky) {
              const int t = y + pt - ky;
              if (!divisible(t)) continue;
              const int row = t / s + P;
              if (row < 0 || row >= gh) continue;
              rows.push_back({ky, row - row0});
            }
            for (int px = 0; px < std::min(s, xs.w()); ++px) {
              cols.clear();
              for (int kx = 0; kx < kw; ++kx) {
                const int t = px + pl - kx;
                if (!divisible(t)) continue;
                cols.push_back({kx, t / s + Q});
              }
              const int tn = (xs.w() - px + s - 1) / s;
              backward_input_phase<decltype(CB)::value>(args, rows, cols, tn,
                                                        &dx.at(n, y, px, 0));
            }
          }
        }
      }
    }
  });
}

void conv2d_backward_kernel_f32(const Tensor& x, const Tensor& g, int s, Tensor& dk) {
  const Shape xs = x.shape(), ks = dk.shape(), gs = g.shape();
  const int kh = ks[0], kw = ks[1], ca = ks[2], cb = ks[3];
  const int oh = gs.h(), ow = gs.w();
  const int pt = same_pad_before(xs.h(), kh, s);
  const int pl = same_pad_before(xs.w(), kw, s);
  const int wp = (ow - 1) * s + kw;
  const std::size_t ksize = dk.size();
  const std::size_t tap = static_cast<std::size_t>(ca) * cb;
  const int chunks = (oh + kRowChunk - 1) / kRowChunk;
  // Put the vector lanes on whichever channel axis fills them better.
  const bool row_taps = ca % kLanes == 0 && cb >= kRowGroup && (kw == 3 || kw == 5);
  const bool over_a =
      row_taps || (ca % kLanes == 0 && cb % kLanes != 0) || (ca > cb && cb < kLanes);
  std::vector<float> partial(static_cast<std::size_t>(chunks) * ksize);
  float* out = dk.data().data();
  for (int n = 0; n < xs.n(); ++n) {
    const float* gn = &g.at(n, 0, 0, 0);
#pragma omp parallel
    {
    std::vector<float> xp;
#pragma omp for schedule(static)
    for (int chunk = 0; chunk < chunks; ++chunk) {
      float* dst_chunk = partial.data() + static_cast<std::size_t>(chunk) * ksize;
      const int oy0 = chunk * kRowChunk, oy1 = std::min(oh, oy0 + kRowChunk);
      pad_rows(x, n, pt, pl, oy0 * s, (oy1 - 1) * s + kh, wp, xp);
      for (int ky = 0; ky < kh; ++ky) {
        int bs = 0;
        if (row_taps) {
          const KernelGradPass row{xp.data(), static_cast<std::size_t>(wp) * ca, s, ca,
                                   gn + static_cast<std::size_t>(oy0) * ow * cb, ow, cb, 0,
                                   oy1 - oy0, ky, 0,
                                   dst_chunk + static_cast<std::size_t>(ky * kw) * tap};
          for (; bs + kRowGroup <= cb; bs += kRowGroup) {
            for (int a0 = 0; a0 < ca; a0 += kLanes) {
              if (kw == 5) {
                kernel_grad_over_a_row<5, kRowGroup>(row, a0, bs, tail_mask(ca - a0));
              } else {
                kernel_grad_over_a_row<3, kRowGroup>(row, a0, bs, tail_mask(ca - a0));
              }
            }
          }
        }
        if (bs == cb) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const KernelGradPass pass{xp.data(),
                                    static_cast<std::size_t>(wp) * ca,
                                    s,
                                    ca,
                                    gn + static_cast<std::size_t>(oy0) * ow * cb,
                                    ow,
                                    cb,
                                    0,
                                    oy1 - oy0,
                                    ky,
                                    kx,
                                    dst_chunk + static_cast<std::size_t>(ky * kw + kx) * tap};
          if (over_a) {
            for (int a0 = 0; a0 < ca; a0 += kLanes) {
              const __mmask16 m = tail_mask(ca - a0);
              for (int b0 = bs; b0 < cb; b0 += kLanes) {
                dispatch_group<true>(std::min(kLanes, cb - b0), pass, a0, b0, m,
                                     std::make_integer_sequence<int, kLanes>{});
              }
            }
          } else {
            for (int b0 = 0; b0 < cb; b0 += kLanes) {
              const __mmask16 m = tail_mask(cb - b0);
              for (int a0 = 0; a0 < ca; a0 += kLanes) {
                dispatch_group<false>(std::min(kLanes, ca - a0), pass, a0, b0, m,
                                      std::make_integer_sequence<int, kLanes>{});
              }
            }
          }
        }
      }
    }
    }
    // Fixed-order reduction keeps the result independent of thread count.
    for (int chunk = 0; chunk < chunks; ++chunk) {
      const float* src = partial.data() + static_cast<std::size_t>(chunk) * ksize;
      if (over_a) {
        for (std::size_t t = 0; t < ksize; t += tap) {
          for (int a = 0; a < ca; ++a)
            for (int b = 0; b < cb; ++b) out[t + a * cb + b] += src[t + b * ca + a];
        }
      } else {
        for (std::size_t i = 0; i < ksize; ++i) out[i] += src[i];
      }
    }
  }
}

#endif

}  // namespace nwm::ops::detail

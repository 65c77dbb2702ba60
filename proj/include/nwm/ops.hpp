#pragma once

#include "nwm/tensor.hpp"

// Forward and backward kernels for the operations the watermarking network
// uses. Activations are NHWC; conv kernels are (kh, kw, c_in, c_out) and
// transposed-conv kernels (kh, kw, c_out, c_in). Padding is SAME everywhere
// and no op adds a bias.
//
// Each output element accumulates in the fixed order kernel-row, kernel-col,
// in-channel, so every kernel is bitwise reproducible.
namespace nwm::ops {

// SAME padding: out = ceil(in / stride), padding split with the smaller half
// first.
constexpr int same_out(int in, int stride) { return (in + stride - 1) / stride; }
constexpr int same_pad_before(int in, int window, int stride) {
  const int total = (same_out(in, stride) - 1) * stride + window - in;
  return total > 0 ? total / 2 : 0;
}

Shape conv2d_out_shape(const Shape& x, const Shape& kernel, int stride);
Shape conv2d_transpose_out_shape(const Shape& x, const Shape& kernel, int stride);

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride);

// Adjoint of conv2d with respect to its input: maps a gradient shaped like
// conv2d's output back onto `in_shape`.
template <class T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out,
                                     const BasicTensor<T>& kernel, int stride,
                                     const Shape& in_shape);

template <class T>
BasicTensor<T> conv2d_backward_kernel(const BasicTensor<T>& x,
                                      const BasicTensor<T>& grad_out, int stride,
                                      const Shape& kernel_shape);

// Transposed convolution, defined as the exact adjoint of conv2d from the
// stride-times-larger grid: output spatial dims are stride * input dims.
template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                                int stride);

template <class T>
BasicTensor<T> conv2d_transpose_backward_input(const BasicTensor<T>& grad_out,
                                               const BasicTensor<T>& kernel, int stride);

template <class T>
BasicTensor<T> conv2d_transpose_backward_kernel(const BasicTensor<T>& x,
                                                const BasicTensor<T>& grad_out,
                                                int stride, const Shape& kernel_shape);

// 2x2 average pooling; padded cells are excluded from the divisor.
template <class T>
BasicTensor<T> avg_pool(const BasicTensor<T>& x, int stride);

template <class T>
BasicTensor<T> avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& in_shape,
                                 int stride);

// out[n,h,w,c] = ws[c] * a[n,h,w,c] + we[c] * b[n,h,w,c]. The weights are
// (1, 1, 1, c) tensors. `b` may have batch 1, in which case it is broadcast
// over a's batch.
template <class T>
BasicTensor<T> blend(const BasicTensor<T>& a, const BasicTensor<T>& b,
                     const BasicTensor<T>& ws, const BasicTensor<T>& we);

template <class T>
struct BlendGrads {
  BasicTensor<T> a, b, ws, we;
};

template <class T>
BlendGrads<T> blend_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& a,
                             const BasicTensor<T>& b, const BasicTensor<T>& ws,
                             const BasicTensor<T>& we);

// conv2d(blend(a, b, ws, we), k, stride) without materializing the blend:
// the per-channel weights are folded into two copies of the kernel, and a
// batch-1 `b` is convolved once and added to every image.
template <class T>
BasicTensor<T> blend_conv2d(const BasicTensor<T>& a, const BasicTensor<T>& b,
                            const BasicTensor<T>& ws, const BasicTensor<T>& we,
                            const BasicTensor<T>& kernel, int stride);

template <class T>
struct BlendConvGrads {
  BasicTensor<T> a, b, ws, we, kernel;
};

template <class T>
BlendConvGrads<T> blend_conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& a,
                                        const BasicTensor<T>& b, const BasicTensor<T>& ws,
                                        const BasicTensor<T>& we, const BasicTensor<T>& kernel,
                                        int stride, bool need_a);

// Mean of (a - b)^2 over all elements, accumulated in double.
template <class T>
double mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Gradient of upstream * mse(a, b) with respect to a. The gradient for b is
// its negation.
template <class T>
BasicTensor<T> mse_backward(const BasicTensor<T>& a, const BasicTensor<T>& b,
                            double upstream);

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& x);

}  // namespace nwm::ops

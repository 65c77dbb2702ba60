#pragma once

#include "nwm/tensor.hpp"

// Vectorized float32 convolution kernels. Shapes are validated by the
// callers in ops.cpp; these only compute.
namespace nwm::ops::detail {

// True when the build carries the AVX-512 kernels and they are enabled.
bool has_fast_kernels();

// Test hook: route float convolutions through the reference loops.
void set_fast_kernels_enabled(bool enabled);

void conv2d_forward_f32(const Tensor& x, const Tensor& k, int stride, Tensor& y);
void conv2d_backward_input_f32(const Tensor& g, const Tensor& k, int stride, Tensor& dx);
void conv2d_backward_kernel_f32(const Tensor& x, const Tensor& g, int stride, Tensor& dk);

}  // namespace nwm::ops::detail

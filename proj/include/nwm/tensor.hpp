#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nwm/error.hpp"

namespace nwm {

// Rank-4 shape. Activations read it as (batch, height, width, channels);
// convolution kernels as (kernel_h, kernel_w, in_channels, out_channels).
struct Shape {
  std::array<int, 4> dims{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(int d0, int d1, int d2, int d3) : dims{d0, d1, d2, d3} {}

  constexpr int n() const { return dims[0]; }
  constexpr int h() const { return dims[1]; }
  constexpr int w() const { return dims[2]; }
  constexpr int c() const { return dims[3]; }
  constexpr int operator[](std::size_t i) const { return dims[i]; }

  constexpr std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Dense row-major rank-4 array. Value type; copies are deep.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vector() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int i0, int i1, int i2, int i3) const {
    return ((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) *
               shape_[3] +
           i3;
  }
  T& at(int i0, int i1, int i2, int i3) { return data_[index(i0, i1, i2, i3)]; }
  const T& at(int i0, int i1, int i2, int i3) const {
    return data_[index(i0, i1, i2, i3)];
  }

  void fill(T v);
  bool all_finite() const;

  // Copy of the single batch entry `i` as a (1, h, w, c) tensor.
  BasicTensor slice_batch(int i) const;

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Stacks (1, h, w, c) tensors along the batch axis.
template <class T>
BasicTensor<T> stack_batch(std::span<const BasicTensor<T>> items);

// Repeats a (1, h, w, c) tensor `n` times along the batch axis.
template <class T>
BasicTensor<T> repeat_batch(const BasicTensor<T>& item, int n);

// Sum over all elements of a*b, accumulated in double.
template <class T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace nwm

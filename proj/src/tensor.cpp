#include "nwm/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace nwm {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ", " +
         std::to_string(s[2]) + ", " + std::to_string(s[3]) + ")";
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  for (int d : shape.dims) {
    if (d < 0) throw ShapeError("negative tensor dimension in " + to_string(shape));
  }
  data_.assign(shape.size(), fill);
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape));
  }
}

template <class T>
void BasicTensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <class T>
BasicTensor<T> BasicTensor<T>::slice_batch(int i) const {
  if (i < 0 || i >= shape_.n()) throw ShapeError("batch index out of range");
  const std::size_t per = shape_.size() / shape_.n();
  BasicTensor out(Shape{1, shape_.h(), shape_.w(), shape_.c()});
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(per * i), per,
              out.data_.begin());
  return out;
}

template <class T>
BasicTensor<T> stack_batch(std::span<const BasicTensor<T>> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  const Shape first = items.front().shape();
  int total = 0;
  for (const auto& t : items) {
    const Shape& s = t.shape();
    if (s.h() != first.h() || s.w() != first.w() || s.c() != first.c()) {
      throw ShapeError("stack_batch: mismatched item shape " + to_string(s));
    }
    total += s.n();
  }
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(total) * first.h() * first.w() * first.c());
  for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
  return BasicTensor<T>(Shape{total, first.h(), first.w(), first.c()}, std::move(data));
}

template <class T>
BasicTensor<T> repeat_batch(const BasicTensor<T>& item, int n) {
  if (item.shape().n() != 1) throw ShapeError("repeat_batch expects batch 1");
  std::vector<T> data;
  data.reserve(item.size() * n);
  for (int i = 0; i < n; ++i) data.insert(data.end(), item.data().begin(), item.data().end());
  const Shape s = item.shape();
  return BasicTensor<T>(Shape{n, s.h(), s.w(), s.c()}, std::move(data));
}

template <class T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> stack_batch(std::span<const BasicTensor<float>>);
template BasicTensor<double> stack_batch(std::span<const BasicTensor<double>>);
template BasicTensor<float> repeat_batch(const BasicTensor<float>&, int);
template BasicTensor<double> repeat_batch(const BasicTensor<double>&, int);
template double dot(const BasicTensor<float>&, const BasicTensor<float>&);
template double dot(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace nwm

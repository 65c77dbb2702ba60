#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nwm/tensor.hpp"

namespace nwm {

// A trainable tensor together with its gradient buffer.
template <class T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  BasicParameter() = default;
  BasicParameter(std::string n, BasicTensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = BasicTensor<T>(value.shape()); }
};

using Parameter = BasicParameter<float>;

// Handle to a value recorded on a tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

// Records forward operations in order and replays their backward rules in
// reverse. Not thread-safe; one tape per graph.
template <class T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;

  // Leaf that never receives a gradient.
  Var constant(TensorT value);
  // Leaf whose gradient is kept on the tape (read it back with grad()).
  Var input(TensorT value);
  // Leaf bound to a parameter; backward() accumulates into param.grad. The
  // parameter must outlive the tape.
  Var parameter(BasicParameter<T>& param);

  Var conv2d(Var x, Var kernel, int stride);
  Var conv2d_transpose(Var x, Var kernel, int stride);
  Var avg_pool(Var x, int stride);
  Var blend(Var a, Var b, Var ws, Var we);
  // conv2d(blend(a, b, ws, we), kernel, stride) as one node.
  Var blend_conv2d(Var a, Var b, Var ws, Var we, Var kernel, int stride);
  Var tanh(Var x);
  // Scalar (1, 1, 1, 1) node holding the mean squared error.
  Var mse(Var a, Var b);
  // Sum of two scalar nodes.
  Var add(Var a, Var b);

  const TensorT& value(Var v) const;
  // Gradient of the last backward() loss. Empty for constants, and for
  // interior nodes (their buffers are released during the sweep).
  const TensorT& grad(Var v) const;
  // Double-precision value of a scalar node.
  double scalar(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and runs every backward rule once, newest
  // first. Throws ShapeError unless `loss` is a scalar node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    double scalar = 0.0;
    bool has_scalar = false;
    bool requires_grad = false;
    bool keep_grad = false;
    BasicParameter<T>* param = nullptr;
    std::function<void(BasicTape&, std::size_t)> backward;
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  void accumulate(Var v, const TensorT& g);
  void accumulate(Var v, TensorT&& g);

  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;

// Compares tape gradients against central finite differences for every
// element of every probe. `build` records a scalar loss given leaf handles
// for the probes. Returns max |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-8) over all elements.
template <class T>
using GraphBuilder = std::function<Var(BasicTape<T>&, std::span<const Var>)>;

template <class T>
double grad_check(const GraphBuilder<T>& build, std::span<const BasicTensor<T>> probes,
                  double epsilon);

struct GradCheckOptions {
  double epsilon = 1e-3;
  // Check at most this many elements of each probe, picked at random
  // (0 checks all of them).
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

template <class T>
double grad_check(const GraphBuilder<T>& build, std::span<const BasicTensor<T>> probes,
                  const GradCheckOptions& options);

template <class T>
double grad_check(const GraphBuilder<T>& build, const BasicTensor<T>& probe, double epsilon) {
  return grad_check<T>(build, std::span<const BasicTensor<T>>(&probe, 1), epsilon);
}

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace nwm

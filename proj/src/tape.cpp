#include "nwm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nwm/ops.hpp"

namespace nwm {

template <class T>
Var BasicTape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
typename BasicTape<T>::Node& BasicTape<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw ShapeError("tape: invalid variable handle");
  return nodes_[v.id];
}

template <class T>
const typename BasicTape<T>::Node& BasicTape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw ShapeError("tape: invalid variable handle");
  return nodes_[v.id];
}

template <class T>
void BasicTape<T>::accumulate(Var v, const TensorT& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <class T>
void BasicTape<T>::accumulate(Var v, TensorT&& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <class T>
Var BasicTape<T>::constant(TensorT value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::input(TensorT value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.keep_grad = true;
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::parameter(BasicParameter<T>& param) {
  Node n;
  n.value = param.value;
  n.requires_grad = true;
  n.param = &param;
  n.backward = [](BasicTape& tape, std::size_t self) {
    Node& me = tape.nodes_[self];
    BasicTensor<T>& dst = me.param->grad;
    if (dst.shape() != me.value.shape()) dst = BasicTensor<T>(me.value.shape());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += me.grad[i];
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::conv2d(Var x, Var kernel, int stride) {
  Node n;
  n.value = ops::conv2d(value(x), value(kernel), stride);
  n.requires_grad = needs(x) || needs(kernel);
  n.backward = [x, kernel, stride](BasicTape& tape, std::size_t self) {
    const TensorT& g = tape.nodes_[self].grad;
    const TensorT& xv = tape.nodes_[x.id].value;
    const TensorT& kv = tape.nodes_[kernel.id].value;
    if (tape.needs(x)) tape.accumulate(x, ops::conv2d_backward_input(g, kv, stride, xv.shape()));
    if (tape.needs(kernel)) {
      tape.accumulate(kernel, ops::conv2d_backward_kernel(xv, g, stride, kv.shape()));
    }
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::conv2d_transpose(Var x, Var kernel, int stride) {
  Node n;
  n.value = ops::conv2d_transpose(value(x), value(kernel), stride);
  n.requires_grad = needs(x) || needs(kernel);
  n.backward = [x, kernel, stride](BasicTape& tape, std::size_t self) {
    const TensorT& g = tape.nodes_[self].grad;
    const TensorT& xv = tape.nodes_[x.id].value;
    const TensorT& kv = tape.nodes_[kernel.id].value;
    if (tape.needs(x)) tape.accumulate(x, ops::conv2d_transpose_backward_input(g, kv, stride));
    if (tape.needs(kernel)) {
      tape.accumulate(kernel, ops::conv2d_transpose_backward_kernel(xv, g, stride, kv.shape()));
    }
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::avg_pool(Var x, int stride) {
  Node n;
  n.value = ops::avg_pool(value(x), stride);
  n.requires_grad = needs(x);
  n.backward = [x, stride](BasicTape& tape, std::size_t self) {
    const TensorT& g = tape.nodes_[self].grad;
    tape.accumulate(x, ops::avg_pool_backward(g, tape.nodes_[x.id].value.shape(), stride));
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::blend(Var a, Var b, Var ws, Var we) {
  Node n;
  n.value = ops::blend(value(a), value(b), value(ws), value(we));
  n.requires_grad = needs(a) || needs(b) || needs(ws) || needs(we);
  n.backward = [a, b, ws, we](BasicTape& tape, std::size_t self) {
    auto grads = ops::blend_backward(tape.nodes_[self].grad, tape.nodes_[a.id].value,
                                     tape.nodes_[b.id].value, tape.nodes_[ws.id].value,
                                     tape.nodes_[we.id].value);
    tape.accumulate(a, std::move(grads.a));
    tape.accumulate(b, std::move(grads.b));
    tape.accumulate(ws, std::move(grads.ws));
    tape.accumulate(we, std::move(grads.we));
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::blend_conv2d(Var a, Var b, Var ws, Var we, Var kernel, int stride) {
  Node n;
  n.value = ops::blend_conv2d(value(a), value(b), value(ws), value(we), value(kernel), stride);
  n.requires_grad = needs(a) || needs(b) || needs(ws) || needs(we) || needs(kernel);
  n.backward = [a, b, ws, we, kernel, stride](BasicTape& tape, std::size_t self) {
    auto grads = ops::blend_conv2d_backward(
        tape.nodes_[self].grad, tape.nodes_[a.id].value, tape.nodes_[b.id].value,
        tape.nodes_[ws.id].value, tape.nodes_[we.id].value, tape.nodes_[kernel.id].value, stride,
        tape.needs(a));
    if (tape.needs(a)) tape.accumulate(a, std::move(grads.a));
    tape.accumulate(b, std::move(grads.b));
    tape.accumulate(ws, std::move(grads.ws));
    tape.accumulate(we, std::move(grads.we));
    tape.accumulate(kernel, std::move(grads.kernel));
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::tanh(Var x) {
  Node n;
  n.value = ops::tanh(value(x));
  n.requires_grad = needs(x);
  n.backward = [x](BasicTape& tape, std::size_t self) {
    const Node& me = tape.nodes_[self];
    TensorT dx(me.value.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] = me.grad[i] * (T(1) - me.value[i] * me.value[i]);
    }
    tape.accumulate(x, std::move(dx));
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::mse(Var a, Var b) {
  Node n;
  n.scalar = ops::mse(value(a), value(b));
  n.has_scalar = true;
  n.value = TensorT(Shape{1, 1, 1, 1}, static_cast<T>(n.scalar));
  n.requires_grad = needs(a) || needs(b);
  n.backward = [a, b](BasicTape& tape, std::size_t self) {
    const double upstream = static_cast<double>(tape.nodes_[self].grad[0]);
    const TensorT& av = tape.nodes_[a.id].value;
    const TensorT& bv = tape.nodes_[b.id].value;
    TensorT ga = ops::mse_backward(av, bv, upstream);
    if (tape.needs(b)) {
      TensorT gb(ga.shape());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -ga[i];
      tape.accumulate(b, std::move(gb));
    }
    tape.accumulate(a, std::move(ga));
  };
  return push(std::move(n));
}

template <class T>
Var BasicTape<T>::add(Var a, Var b) {
  const Shape unit{1, 1, 1, 1};
  if (value(a).shape() != unit || value(b).shape() != unit) {
    throw ShapeError("tape add: operands must be scalar nodes");
  }
  Node n;
  n.scalar = scalar(a) + scalar(b);
  n.has_scalar = true;
  n.value = TensorT(unit, static_cast<T>(n.scalar));
  n.requires_grad = needs(a) || needs(b);
  n.backward = [a, b](BasicTape& tape, std::size_t self) {
    const TensorT& g = tape.nodes_[self].grad;
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  };
  return push(std::move(n));
}

template <class T>
const BasicTensor<T>& BasicTape<T>::value(Var v) const {
  return node(v).value;
}

template <class T>
const BasicTensor<T>& BasicTape<T>::grad(Var v) const {
  return node(v).grad;
}

template <class T>
double BasicTape<T>::scalar(Var v) const {
  const Node& n = node(v);
  if (n.value.shape() != Shape{1, 1, 1, 1}) throw ShapeError("tape: not a scalar node");
  return n.has_scalar ? n.scalar : static_cast<double>(n.value[0]);
}

template <class T>
void BasicTape<T>::backward(Var loss) {
  if (node(loss).value.shape() != Shape{1, 1, 1, 1}) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     to_string(node(loss).value.shape()));
  }
  for (Node& n : nodes_) n.grad = TensorT();
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = TensorT(Shape{1, 1, 1, 1}, T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (!n.keep_grad) n.grad = TensorT();
  }
}

template class BasicTape<float>;
template class BasicTape<double>;

template <class T>
double grad_check(const GraphBuilder<T>& build, std::span<const BasicTensor<T>> probes,
                  double epsilon) {
  GradCheckOptions options;
  options.epsilon = epsilon;
  return grad_check(build, probes, options);
}

template <class T>
double grad_check(const GraphBuilder<T>& build, std::span<const BasicTensor<T>> probes,
                  const GradCheckOptions& options) {
  const double epsilon = options.epsilon;
  auto evaluate = [&](const std::vector<BasicTensor<T>>& values, bool with_grad,
                      std::vector<BasicTensor<T>>* grads) {
    BasicTape<T> tape;
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const auto& v : values) vars.push_back(tape.input(v));
    const Var loss = build(tape, vars);
    if (with_grad) {
      tape.backward(loss);
      for (const Var& v : vars) {
        const auto& g = tape.grad(v);
        grads->push_back(g.empty() ? BasicTensor<T>(tape.value(v).shape()) : g);
      }
    }
    return tape.scalar(loss);
  };

  std::vector<BasicTensor<T>> values(probes.begin(), probes.end());
  std::vector<BasicTensor<T>> analytic;
  evaluate(values, true, &analytic);

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (std::size_t p = 0; p < values.size(); ++p) {
    std::vector<std::size_t> picks(values[p].size());
    std::iota(picks.begin(), picks.end(), 0);
    if (options.max_elements > 0 && options.max_elements < picks.size()) {
      for (std::size_t k = 0; k < options.max_elements; ++k) {
        std::swap(picks[k], picks[k + rng() % (picks.size() - k)]);
      }
      picks.resize(options.max_elements);
    }
    for (std::size_t i : picks) {
      const T original = values[p][i];
      // Divide by the step actually taken after rounding to T.
      const T hi = static_cast<T>(original + epsilon);
      const T lo = static_cast<T>(original - epsilon);
      values[p][i] = hi;
      const double up = evaluate(values, false, nullptr);
      values[p][i] = lo;
      const double down = evaluate(values, false, nullptr);
      values[p][i] = original;
      const double numeric =
          (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      const double a = static_cast<double>(analytic[p][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

template double grad_check(const GraphBuilder<float>&, std::span<const BasicTensor<float>>,
                           double);
template double grad_check(const GraphBuilder<double>&, std::span<const BasicTensor<double>>,
                           double);
template double grad_check(const GraphBuilder<float>&, std::span<const BasicTensor<float>>,
                           const GradCheckOptions&);
template double grad_check(const GraphBuilder<double>&, std::span<const BasicTensor<double>>,
                           const GradCheckOptions&);

}  // namespace nwm

#include "mvod/autograd.hpp"

#include <cmath>
#include <span>

namespace mvod {

template <typename T>
typename Tape<T>::Var Tape<T>::push(BasicTensor<T> value, bool requires_grad,
                                    bool produced_by_op,
                                    std::function<void(Tape&, const BasicTensor<T>&)> fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.produced_by_op = produced_by_op;
  if (record_ && requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.owner != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw GradientError("tape: variable does not belong to this tape");
  return nodes_[v.id];
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(BasicTensor<T> value) {
  return push(std::move(value), false, false, nullptr);
}

template <typename T>
typename Tape<T>::Var Tape<T>::parameter(BasicTensor<T> value) {
  return push(std::move(value), record_, false, nullptr);
}

template <typename T>
const BasicTensor<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
BasicTensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var v, const BasicTensor<T>& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    throw ShapeError(shape_mismatch("tape: gradient", g.shape(), n.value.shape()));
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }
}

namespace {

template <typename T>
std::vector<T> as_vector(const BasicTensor<T>& t) {
  return std::vector<T>(t.values().begin(), t.values().end());
}

template <typename T>
BasicTensor<T> as_column(const std::vector<T>& v) {
  return BasicTensor<T>(Shape{static_cast<int>(v.size()), 1, 1, 1}, v);
}

}  // namespace

template <typename T>
typename Tape<T>::Var Tape<T>::conv2d(Var x, Var weights, std::optional<Var> bias,
                                      ConvGeometry geometry) {
  const BasicTensor<T>& w = value(weights);
  std::span<const T> b;
  if (bias) {
    const BasicTensor<T>& bt = value(*bias);
    b = bt.values();
  }
  BasicTensor<T> out = mvod::conv2d(value(x), w, b, geometry);
  const bool rg = needs(x) || needs(weights) || (bias && needs(*bias));
  return push(std::move(out), rg, true,
              [x, weights, bias, geometry](Tape& t, const BasicTensor<T>& g) {
                auto grads = conv2d_backward(t.value(x), t.value(weights), bias.has_value(),
                                             geometry, g);
                t.accumulate(x, grads.input);
                t.accumulate(weights, grads.weights);
                if (bias) t.accumulate(*bias, as_column(grads.bias));
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::batch_norm(Var x, Var gamma, Var beta,
                                          const BnParams<T>& stats) {
  BnParams<T> p = stats;
  p.gamma = as_vector(value(gamma));
  p.beta = as_vector(value(beta));
  BasicTensor<T> out = mvod::batch_norm(value(x), p);
  const bool rg = needs(x) || needs(gamma) || needs(beta);
  return push(std::move(out), rg, true, [x, gamma, beta, p](Tape& t, const BasicTensor<T>& g) {
    auto grads = batch_norm_backward(t.value(x), p, g);
    t.accumulate(x, grads.input);
    t.accumulate(gamma, as_column(grads.gamma));
    t.accumulate(beta, as_column(grads.beta));
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::leaky_relu(Var x, T slope) {
  return push(mvod::leaky_relu(value(x), slope), needs(x), true,
              [x, slope](Tape& t, const BasicTensor<T>& g) {
                t.accumulate(x, leaky_relu_backward(t.value(x), slope, g));
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::relu(Var x) {
  return push(mvod::relu(value(x)), needs(x), true, [x](Tape& t, const BasicTensor<T>& g) {
    t.accumulate(x, relu_backward(t.value(x), g));
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::sigmoid(Var x) {
  Var out = push(mvod::sigmoid(value(x)), needs(x), true, nullptr);
  if (record_ && needs(x)) {
    const int self = out.id;
    nodes_[self].backward = [x, self](Tape& t, const BasicTensor<T>& g) {
      t.accumulate(x, sigmoid_backward(t.nodes_[self].value, g));
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::tanh(Var x) {
  Var out = push(mvod::tanh(value(x)), needs(x), true, nullptr);
  if (record_ && needs(x)) {
    const int self = out.id;
    nodes_[self].backward = [x, self](Tape& t, const BasicTensor<T>& g) {
      t.accumulate(x, tanh_backward(t.nodes_[self].value, g));
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::upsample(Var x, int factor, int crop_h, int crop_w) {
  const Shape in = value(x).shape();
  BasicTensor<T> up = nearest_upsample(value(x), factor);
  if (crop_h > 0 || crop_w > 0)
    up = crop(up, crop_h > 0 ? crop_h : up.h(), crop_w > 0 ? crop_w : up.w());
  return push(std::move(up), needs(x), true, [x, factor, in](Tape& t, const BasicTensor<T>& g) {
    t.accumulate(x, nearest_upsample_backward(g, factor, in));
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::avg_pool(Var x, int factor) {
  const Shape in = value(x).shape();
  return push(mvod::avg_pool(value(x), factor), needs(x), true,
              [x, factor, in](Tape& t, const BasicTensor<T>& g) {
                t.accumulate(x, avg_pool_backward(g, factor, in));
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat(const std::vector<Var>& parts) {
  std::vector<const BasicTensor<T>*> ptrs;
  std::vector<int> channels;
  bool rg = false;
  for (Var p : parts) {
    ptrs.push_back(&value(p));
    channels.push_back(value(p).c());
    rg = rg || needs(p);
  }
  return push(concat_channels(ptrs), rg, true,
              [parts, channels](Tape& t, const BasicTensor<T>& g) {
                auto split = concat_channels_backward(g, channels);
                for (std::size_t i = 0; i < parts.size(); ++i) t.accumulate(parts[i], split[i]);
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
  return push(mvod::add(value(a), value(b)), needs(a) || needs(b), true,
              [a, b](Tape& t, const BasicTensor<T>& g) {
                t.accumulate(a, g);
                t.accumulate(b, g);
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::sub(Var a, Var b) {
  return push(mvod::add(value(a), mvod::scale(value(b), T(-1))), needs(a) || needs(b), true,
              [a, b](Tape& t, const BasicTensor<T>& g) {
                t.accumulate(a, g);
                t.accumulate(b, mvod::scale(g, T(-1)));
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
  return push(mvod::mul(value(a), value(b)), needs(a) || needs(b), true,
              [a, b](Tape& t, const BasicTensor<T>& g) {
                if (t.needs(a)) t.accumulate(a, mvod::mul(g, t.value(b)));
                if (t.needs(b)) t.accumulate(b, mvod::mul(g, t.value(a)));
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale(Var a, T s) {
  return push(mvod::scale(value(a), s), needs(a), true, [a, s](Tape& t, const BasicTensor<T>& g) {
    t.accumulate(a, mvod::scale(g, s));
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::one_minus(Var a) {
  BasicTensor<T> out(value(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) - value(a)[i];
  return push(std::move(out), needs(a), true, [a](Tape& t, const BasicTensor<T>& g) {
    t.accumulate(a, mvod::scale(g, T(-1)));
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::warp(Var feature, Var flow) {
  BasicTensor<T> out = bilinear_warp(value(feature), BasicFlowField<T>(value(flow)));
  return push(std::move(out), needs(feature) || needs(flow), true,
              [feature, flow](Tape& t, const BasicTensor<T>& g) {
                auto grads =
                    bilinear_warp_backward(t.value(feature), BasicFlowField<T>(t.value(flow)), g);
                t.accumulate(feature, grads.feature);
                t.accumulate(flow, grads.flow);
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::epe(Var pred, Var target) {
  const BasicTensor<T>& p = value(pred);
  const BasicTensor<T>& q = value(target);
  if (p.shape() != q.shape() || p.c() != 2)
    throw ShapeError(shape_mismatch("epe", p.shape(), q.shape()));
  const double count = static_cast<double>(p.n()) * p.h() * p.w();
  double acc = 0.0;
  for (int b = 0; b < p.n(); ++b)
    for (int y = 0; y < p.h(); ++y)
      for (int x = 0; x < p.w(); ++x) {
        const double ex = static_cast<double>(p(b, 0, y, x)) - q(b, 0, y, x);
        const double ey = static_cast<double>(p(b, 1, y, x)) - q(b, 1, y, x);
        acc += std::sqrt(ex * ex + ey * ey);
      }
  BasicTensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc / count));
  return push(std::move(out), needs(pred) || needs(target), true,
              [pred, target, count](Tape& t, const BasicTensor<T>& g) {
                const BasicTensor<T>& p = t.value(pred);
                const BasicTensor<T>& q = t.value(target);
                BasicTensor<T> gp(p.shape());
                const double seed = static_cast<double>(g[0]) / count;
                for (int b = 0; b < p.n(); ++b)
                  for (int y = 0; y < p.h(); ++y)
                    for (int x = 0; x < p.w(); ++x) {
                      const double ex = static_cast<double>(p(b, 0, y, x)) - q(b, 0, y, x);
                      const double ey = static_cast<double>(p(b, 1, y, x)) - q(b, 1, y, x);
                      const double norm = std::sqrt(ex * ex + ey * ey);
                      if (norm == 0.0) continue;
                      gp(b, 0, y, x) = static_cast<T>(seed * ex / norm);
                      gp(b, 1, y, x) = static_cast<T>(seed * ey / norm);
                    }
                if (t.needs(target)) t.accumulate(target, mvod::scale(gp, T(-1)));
                t.accumulate(pred, gp);
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::dot(Var a, Var b) {
  const BasicTensor<T>& x = value(a);
  const BasicTensor<T>& y = value(b);
  if (x.shape() != y.shape()) throw ShapeError(shape_mismatch("dot", x.shape(), y.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * y[i];
  return push(BasicTensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(acc)), needs(a) || needs(b), true,
              [a, b](Tape& t, const BasicTensor<T>& g) {
                if (t.needs(a)) t.accumulate(a, mvod::scale(t.value(b), g[0]));
                if (t.needs(b)) t.accumulate(b, mvod::scale(t.value(a), g[0]));
              });
}

template <typename T>
void Tape<T>::backward(Var root) {
  const Node& n = node(root);
  if (n.value.size() != 1)
    throw GradientError("tape: backward without a seed needs a scalar root, got " +
                        n.value.shape().str());
  backward(root, BasicTensor<T>(n.value.shape(), T(1)));
}

template <typename T>
void Tape<T>::backward(Var root, const BasicTensor<T>& seed) {
  const Node& r = node(root);
  if (!record_)
    throw GradientError("tape: gradient requested but the forward pass was not recorded");
  if (!r.produced_by_op || !r.requires_grad)
    throw GradientError("tape: root has no recorded forward op depending on a parameter");
  for (Node& n : nodes_) n.grad = BasicTensor<T>();
  accumulate(root, seed);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    // Copy: the callback may append to other nodes' grads but never to its own.
    const BasicTensor<T> g = n.grad;
    n.backward(*this, g);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mvod

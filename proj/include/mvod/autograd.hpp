#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mvod/grad.hpp"
#include "mvod/ops.hpp"

namespace mvod {

/// Raised when gradients are requested from a tape that did not record the
/// forward pass (or for a value that was never produced on it).
class GradientError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Reverse-mode tape. Every op evaluates its forward kernel immediately and,
/// when recording, remembers how to push the upstream gradient into its
/// inputs using the analytic kernels from grad.hpp.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
    const Tape* owner = nullptr;
    bool valid() const { return id >= 0 && owner != nullptr; }
  };

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(BasicTensor<T> value);
  Var parameter(BasicTensor<T> value);

  const BasicTensor<T>& value(Var v) const;
  /// Gradient accumulated by the last backward(); zeros if none reached v.
  BasicTensor<T> grad(Var v) const;

  // Bias tensors are shaped (out_c, 1, 1, 1).
  Var conv2d(Var x, Var weights, std::optional<Var> bias, ConvGeometry geometry);
  /// Inference-form batch norm with trainable gamma/beta (shaped (c,1,1,1));
  /// mean/var/eps come from `stats` and are constants.
  Var batch_norm(Var x, Var gamma, Var beta, const BnParams<T>& stats);
  Var leaky_relu(Var x, T slope);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var tanh(Var x);
  /// Nearest upsampling by `factor`, optionally cropped to (crop_h, crop_w).
  Var upsample(Var x, int factor, int crop_h = -1, int crop_w = -1);
  Var avg_pool(Var x, int factor);
  Var concat(const std::vector<Var>& parts);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var one_minus(Var a);
  Var warp(Var feature, Var flow);
  /// Mean end-point error between two (n, 2, h, w) fields; scalar output.
  /// Pixels with exactly zero error receive a zero subgradient.
  Var epe(Var pred, Var target);
  /// Sum over all elements of a * b, scalar output. Handy for projecting a
  /// tensor-valued output onto a fixed direction.
  Var dot(Var a, Var b);

  /// Back-propagates from a scalar root (seed 1).
  void backward(Var root);
  /// Back-propagates from an arbitrary root with an explicit seed gradient.
  void backward(Var root, const BasicTensor<T>& seed);

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    bool produced_by_op = false;
    std::function<void(Tape&, const BasicTensor<T>&)> backward;
  };

  const Node& node(Var v) const;
  Var push(BasicTensor<T> value, bool requires_grad, bool produced_by_op,
           std::function<void(Tape&, const BasicTensor<T>&)> fn);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  void accumulate(Var v, const BasicTensor<T>& g);

  bool record_;
  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mvod

#pragma once

#include <vector>

#include "mvod/ops.hpp"

// Analytic backward kernels. Each takes the forward inputs plus the gradient
// of the loss w.r.t. the forward output and returns gradients w.r.t. every
// input and parameter.

namespace mvod {

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  std::vector<T> bias;  // empty when the conv has no bias
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const ConvParams<T>& params,
                             const BasicTensor<T>& grad_out);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             bool has_bias, ConvGeometry geometry,
                             const BasicTensor<T>& grad_out);

template <typename T>
struct BnGrads {
  BasicTensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

/// Running statistics are treated as constants.
template <typename T>
BnGrads<T> batch_norm_backward(const BasicTensor<T>& input, const BnParams<T>& params,
                               const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& input, T slope,
                                   const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out);

/// Takes the forward *output* of sigmoid.
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out);

/// Takes the forward *output* of tanh.
template <typename T>
BasicTensor<T> tanh_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out);

/// Gradient of nearest upsampling by `factor` followed by an optional crop to
/// grad_out's extent. `input_shape` is the pre-upsampling shape.
template <typename T>
BasicTensor<T> nearest_upsample_backward(const BasicTensor<T>& grad_out, int factor,
                                         const Shape& input_shape);

template <typename T>
BasicTensor<T> avg_pool_backward(const BasicTensor<T>& grad_out, int factor,
                                 const Shape& input_shape);

template <typename T>
struct WarpGrads {
  BasicTensor<T> feature;
  BasicTensor<T> flow;  // (n, 2, h, w)
};

template <typename T>
WarpGrads<T> bilinear_warp_backward(const BasicTensor<T>& feature, const BasicFlowField<T>& flow,
                                    const BasicTensor<T>& grad_out);

/// Splits a channel-concatenated gradient back into per-part gradients.
template <typename T>
std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out,
                                                     const std::vector<int>& channels);

}  // namespace mvod

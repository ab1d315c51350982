#pragma once

#include <initializer_list>
#include <optional>
#include <vector>

#include "mvod/tensor.hpp"

namespace mvod {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Convolution filter bank. `weights` has shape (out_c, in_c / groups, kh, kw).
/// An empty `bias` means no bias term.
template <typename T>
struct ConvParams {
  BasicTensor<T> weights;
  std::vector<T> bias;
  ConvGeometry geometry;

  int out_channels() const { return weights.n(); }
  int in_channels() const { return weights.c() * geometry.groups; }
  int kernel_h() const { return weights.h(); }
  int kernel_w() const { return weights.w(); }
};

/// Inference-mode batch normalization statistics and affine terms.
template <typename T>
struct BnParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> mean;
  std::vector<T> var;
  T eps = T(1e-5);

  static BnParams identity(int channels, T eps = T(1e-5));
  int channels() const { return static_cast<int>(gamma.size()); }
};

/// Post-convolution stage of a conv -> batch norm -> activation block.
template <typename T>
struct ConvNorm {
  std::optional<BnParams<T>> bn;
  std::optional<T> leaky_slope;  // nullopt = linear output
};

inline int conv_output_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const ConvParams<T>& params);

/// Same kernel without packaging the filter into ConvParams; `bias` may be empty.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      std::span<const T> bias, ConvGeometry geometry);

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BnParams<T>& params);

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T slope);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& input);

/// conv -> [bn] -> [leaky relu]
template <typename T>
BasicTensor<T> conv_block(const BasicTensor<T>& input, const ConvParams<T>& params,
                          const ConvNorm<T>& norm);

/// 3x3 depthwise conv followed by 1x1 pointwise conv, each with its optional
/// batch norm + activation stage.
template <typename T>
BasicTensor<T> depthwise_separable(const BasicTensor<T>& input,
                                   const ConvParams<T>& dw,
                                   const ConvParams<T>& pw,
                                   const ConvNorm<T>& dw_norm = {},
                                   const ConvNorm<T>& pw_norm = {});

template <typename T>
BasicTensor<T> nearest_upsample_2x(const BasicTensor<T>& input);

/// Nearest-neighbour upsampling by an integer factor.
template <typename T>
BasicTensor<T> nearest_upsample(const BasicTensor<T>& input, int factor);

/// Keeps the top-left (h, w) window.
template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& input, int h, int w);

/// Average pooling with a square window equal to the stride (ceil mode;
/// partial windows average over the pixels they cover).
template <typename T>
BasicTensor<T> avg_pool(const BasicTensor<T>& input, int factor);

/// Bilinear resize with pixel-center alignment; source coordinates are
/// clamped to the grid. Forward only.
template <typename T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& input, int h, int w);

/// output(p) = bilinear sample of `feature` at p + flow(p). Taps outside the
/// grid contribute zero.
template <typename T>
BasicTensor<T> bilinear_warp(const BasicTensor<T>& feature, const BasicFlowField<T>& flow);

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& parts);

template <typename T>
BasicTensor<T> concat_channels(std::initializer_list<const BasicTensor<T>*> parts) {
  return concat_channels<T>(std::vector<const BasicTensor<T>*>(parts));
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s);

/// Stacks batch-1 tensors along the batch axis.
template <typename T>
BasicTensor<T> stack_batch(const std::vector<const BasicTensor<T>*>& parts);

}  // namespace mvod

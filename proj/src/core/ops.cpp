#include "mvod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

#include "mvod/runtime.hpp"

namespace mvod {

template <typename T>
BnParams<T> BnParams<T>::identity(int channels, T eps) {
  BnParams p;
  p.gamma.assign(channels, T(1));
  p.beta.assign(channels, T(0));
  p.mean.assign(channels, T(0));
  p.var.assign(channels, T(1));
  p.eps = eps;
  return p;
}

namespace {

void check_conv(const Shape& in, const Shape& wt, const ConvGeometry& g, std::size_t bias) {
  if (g.groups < 1 || g.stride < 1 || g.padding < 0)
    throw ShapeError("conv2d: invalid geometry");
  if (in.c != wt.c * g.groups || wt.n % g.groups != 0) {
    std::ostringstream os;
    os << "conv2d: input " << in.str() << " incompatible with weights " << wt.str()
       << " (groups " << g.groups << ")";
    throw ShapeError(os.str());
  }
  if (bias != 0 && bias != static_cast<std::size_t>(wt.n))
    throw ShapeError("conv2d: bias length does not match output channels of " + wt.str());
  if (conv_output_dim(in.h, wt.h, g.stride, g.padding) < 1 ||
      conv_output_dim(in.w, wt.w, g.stride, g.padding) < 1)
    throw ShapeError(shape_mismatch("conv2d: empty output", in, wt));
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const ConvParams<T>& params) {
  return conv2d(input, params.weights, std::span<const T>(params.bias), params.geometry);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      std::span<const T> bias, ConvGeometry g) {
  const Shape in = input.shape();
  const Shape wt = weights.shape();
  check_conv(in, wt, g, bias.size());

  const int kh = wt.h, kw = wt.w, s = g.stride, pad = g.padding;
  const int oh = conv_output_dim(in.h, kh, s, pad);
  const int ow = conv_output_dim(in.w, kw, s, pad);
  const int out_c = wt.n;
  const int cin_g = wt.c;
  const int cout_g = out_c / g.groups;
  BasicTensor<T> out(Shape{in.n, out_c, oh, ow});

  // Each (sample, output channel) plane is owned by one task and accumulated
  // in the fixed order (input channel, ky, kx).
  runtime::parallel_for(0, in.n * out_c, [&](int task) {
    const int b = task / out_c;
    const int o = task % out_c;
    const int group = o / cout_g;
    std::vector<double> acc(static_cast<std::size_t>(oh) * ow,
                            bias.empty() ? 0.0 : static_cast<double>(bias[o]));
    for (int ci = 0; ci < cin_g; ++ci) {
      const T* src = input.plane(b, group * cin_g + ci);
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wv = static_cast<double>(weights(o, ci, ky, kx));
          // valid ox: 0 <= ox*s + kx - pad < in.w
          int lo = 0;
          while (lo < ow && lo * s + kx - pad < 0) ++lo;
          int hi = ow;
          while (hi > lo && (hi - 1) * s + kx - pad >= in.w) --hi;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s + ky - pad;
            if (iy < 0 || iy >= in.h) continue;
            const T* row = src + static_cast<std::size_t>(iy) * in.w;
            double* arow = acc.data() + static_cast<std::size_t>(oy) * ow;
            const int base = kx - pad;
            for (int ox = lo; ox < hi; ++ox)
              arow[ox] += wv * static_cast<double>(row[ox * s + base]);
          }
        }
      }
    }
    T* dst = out.plane(b, o);
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i]);
  });
  instrument::add_conv_macs(static_cast<std::uint64_t>(in.n) * out_c * cin_g * kh * kw *
                            static_cast<std::uint64_t>(oh) * ow);
  return out;
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BnParams<T>& p) {
  const Shape s = input.shape();
  if (p.channels() != s.c || p.beta.size() != p.gamma.size() ||
      p.mean.size() != p.gamma.size() || p.var.size() != p.gamma.size()) {
    std::ostringstream os;
    os << "batch_norm: input " << s.str() << " has " << s.c << " channels, params have "
       << p.channels();
    throw ShapeError(os.str());
  }
  BasicTensor<T> out(s);
  const std::size_t plane = s.plane();
  for (int b = 0; b < s.n; ++b) {
    for (int ch = 0; ch < s.c; ++ch) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(p.var[ch]) + p.eps);
      const double g = p.gamma[ch], be = p.beta[ch], mu = p.mean[ch];
      const T* src = input.plane(b, ch);
      T* dst = out.plane(b, ch);
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] = static_cast<T>((static_cast<double>(src[i]) - mu) * inv * g + be);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T slope) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T v = input[i];
    out[i] = v >= T(0) ? v : slope * v;
  }
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(input[i]))));
  return out;
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    out[i] = static_cast<T>(std::tanh(static_cast<double>(input[i])));
  return out;
}

template <typename T>
BasicTensor<T> conv_block(const BasicTensor<T>& input, const ConvParams<T>& params,
                          const ConvNorm<T>& norm) {
  BasicTensor<T> x = conv2d(input, params);
  if (norm.bn) x = batch_norm(x, *norm.bn);
  if (norm.leaky_slope) x = leaky_relu(x, *norm.leaky_slope);
  return x;
}

template <typename T>
BasicTensor<T> depthwise_separable(const BasicTensor<T>& input, const ConvParams<T>& dw,
                                   const ConvParams<T>& pw, const ConvNorm<T>& dw_norm,
                                   const ConvNorm<T>& pw_norm) {
  if (dw.geometry.groups != input.c() || dw.out_channels() != input.c())
    throw ShapeError(shape_mismatch("depthwise_separable: depthwise stage must be grouped per channel",
                                    input.shape(), dw.weights.shape()));
  if (pw.kernel_h() != 1 || pw.kernel_w() != 1 || pw.geometry.groups != 1)
    throw ShapeError("depthwise_separable: pointwise stage must be a dense 1x1 conv, got " +
                     pw.weights.shape().str());
  return conv_block(conv_block(input, dw, dw_norm), pw, pw_norm);
}

template <typename T>
BasicTensor<T> nearest_upsample(const BasicTensor<T>& input, int factor) {
  if (factor < 1) throw ShapeError("nearest_upsample: factor must be >= 1");
  const Shape s = input.shape();
  BasicTensor<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (int b = 0; b < s.n; ++b)
    for (int ch = 0; ch < s.c; ++ch) {
      const T* src = input.plane(b, ch);
      T* dst = out.plane(b, ch);
      const int ow = s.w * factor;
      for (int y = 0; y < s.h * factor; ++y)
        for (int x = 0; x < ow; ++x)
          dst[static_cast<std::size_t>(y) * ow + x] =
              src[static_cast<std::size_t>(y / factor) * s.w + x / factor];
    }
  return out;
}

template <typename T>
BasicTensor<T> nearest_upsample_2x(const BasicTensor<T>& input) {
  return nearest_upsample(input, 2);
}

template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& input, int h, int w) {
  const Shape s = input.shape();
  if (h < 1 || w < 1 || h > s.h || w > s.w)
    throw ShapeError(shape_mismatch("crop", s, Shape{s.n, s.c, h, w}));
  if (h == s.h && w == s.w) return input;
  BasicTensor<T> out(Shape{s.n, s.c, h, w});
  for (int b = 0; b < s.n; ++b)
    for (int ch = 0; ch < s.c; ++ch)
      for (int y = 0; y < h; ++y)
        std::copy_n(input.plane(b, ch) + static_cast<std::size_t>(y) * s.w, w,
                    out.plane(b, ch) + static_cast<std::size_t>(y) * w);
  return out;
}

template <typename T>
BasicTensor<T> avg_pool(const BasicTensor<T>& input, int factor) {
  if (factor < 1) throw ShapeError("avg_pool: factor must be >= 1");
  const Shape s = input.shape();
  const int oh = (s.h + factor - 1) / factor;
  const int ow = (s.w + factor - 1) / factor;
  BasicTensor<T> out(Shape{s.n, s.c, oh, ow});
  for (int b = 0; b < s.n; ++b)
    for (int ch = 0; ch < s.c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          int count = 0;
          for (int y = oy * factor; y < std::min(s.h, (oy + 1) * factor); ++y)
            for (int x = ox * factor; x < std::min(s.w, (ox + 1) * factor); ++x) {
              acc += input(b, ch, y, x);
              ++count;
            }
          out(b, ch, oy, ox) = static_cast<T>(acc / count);
        }
  return out;
}

template <typename T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& input, int h, int w) {
  if (h < 1 || w < 1) throw ShapeError("resize_bilinear: target dims must be >= 1");
  const Shape s = input.shape();
  BasicTensor<T> out(Shape{s.n, s.c, h, w});
  auto taps = [](int dst, int src_len, int dst_len) {
    double src = (dst + 0.5) * static_cast<double>(src_len) / dst_len - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(src_len - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, src_len - 1);
    return std::tuple<int, int, double>{i0, i1, src - i0};
  };
  for (int y = 0; y < h; ++y) {
    const auto [y0, y1, ay] = taps(y, s.h, h);
    for (int x = 0; x < w; ++x) {
      const auto [x0, x1, ax] = taps(x, s.w, w);
      for (int b = 0; b < s.n; ++b)
        for (int ch = 0; ch < s.c; ++ch) {
          const double top = (1 - ax) * input(b, ch, y0, x0) + ax * input(b, ch, y0, x1);
          const double bot = (1 - ax) * input(b, ch, y1, x0) + ax * input(b, ch, y1, x1);
          out(b, ch, y, x) = static_cast<T>((1 - ay) * top + ay * bot);
        }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> bilinear_warp(const BasicTensor<T>& feature, const BasicFlowField<T>& flow) {
  const Shape s = feature.shape();
  if (!s.same_spatial(flow.shape()) || flow.n() != s.n) {
    throw ShapeError(shape_mismatch("bilinear_warp: flow must match feature spatial dims (resample first)",
                                    s, flow.shape()));
  }
  BasicTensor<T> out(s);
  for (int b = 0; b < s.n; ++b) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        const double sx = x + static_cast<double>(flow.dx(b, y, x));
        const double sy = y + static_cast<double>(flow.dy(b, y, x));
        const double fx = std::floor(sx), fy = std::floor(sy);
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const double ax = sx - fx, ay = sy - fy;
        const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
        const int ty[4] = {y0, y0, y0 + 1, y0 + 1};
        const int tx[4] = {x0, x0 + 1, x0, x0 + 1};
        for (int ch = 0; ch < s.c; ++ch) {
          const T* src = feature.plane(b, ch);
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) {
            if (ty[k] < 0 || ty[k] >= s.h || tx[k] < 0 || tx[k] >= s.w) continue;
            acc += wts[k] * static_cast<double>(src[static_cast<std::size_t>(ty[k]) * s.w + tx[k]]);
          }
          out(b, ch, y, x) = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front()->shape();
  int channels = 0;
  for (const auto* p : parts) {
    const Shape s = p->shape();
    if (s.n != first.n || !s.same_spatial(first))
      throw ShapeError(shape_mismatch("concat_channels", first, s));
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (int b = 0; b < first.n; ++b) {
    int base = 0;
    for (const auto* p : parts) {
      std::copy_n(p->plane(b, 0), plane * p->c(), out.plane(b, base));
      base += p->c();
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError(shape_mismatch("add", a.shape(), b.shape()));
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError(shape_mismatch("mul", a.shape(), b.shape()));
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
BasicTensor<T> stack_batch(const std::vector<const BasicTensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("stack_batch: no inputs");
  const Shape first = parts.front()->shape();
  BasicTensor<T> out(Shape{static_cast<int>(parts.size()), first.c, first.h, first.w});
  const std::size_t per = first.numel() / static_cast<std::size_t>(first.n);
  std::size_t at = 0;
  for (const auto* p : parts) {
    if (p->shape() != first || first.n != 1)
      throw ShapeError(shape_mismatch("stack_batch", first, p->shape()));
    std::copy_n(p->data(), per, out.data() + at);
    at += per;
  }
  return out;
}

#define MVOD_INSTANTIATE_OPS(T)                                                              \
  template struct BnParams<T>;                                                               \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const ConvParams<T>&);               \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                 std::span<const T>, ConvGeometry);                          \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BnParams<T>&);             \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                              \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                       \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                    \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                       \
  template BasicTensor<T> conv_block(const BasicTensor<T>&, const ConvParams<T>&,            \
                                     const ConvNorm<T>&);                                    \
  template BasicTensor<T> depthwise_separable(const BasicTensor<T>&, const ConvParams<T>&,   \
                                              const ConvParams<T>&, const ConvNorm<T>&,      \
                                              const ConvNorm<T>&);                           \
  template BasicTensor<T> nearest_upsample_2x(const BasicTensor<T>&);                        \
  template BasicTensor<T> nearest_upsample(const BasicTensor<T>&, int);                      \
  template BasicTensor<T> crop(const BasicTensor<T>&, int, int);                             \
  template BasicTensor<T> avg_pool(const BasicTensor<T>&, int);                              \
  template BasicTensor<T> bilinear_warp(const BasicTensor<T>&, const BasicFlowField<T>&);    \
  template BasicTensor<T> resize_bilinear(const BasicTensor<T>&, int, int);                  \
  template BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>&);        \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> stack_batch(const std::vector<const BasicTensor<T>*>&);

MVOD_INSTANTIATE_OPS(float)
MVOD_INSTANTIATE_OPS(double)

}  // namespace mvod

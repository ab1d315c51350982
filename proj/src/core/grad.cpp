#include "mvod/grad.hpp"

#include <algorithm>
#include <cmath>

namespace mvod {

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const ConvParams<T>& params,
                             const BasicTensor<T>& grad_out) {
  return conv2d_backward(input, params.weights, !params.bias.empty(), params.geometry, grad_out);
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             bool has_bias, ConvGeometry g, const BasicTensor<T>& grad_out) {
  const Shape in = input.shape();
  const Shape wt = weights.shape();
  const int kh = wt.h, kw = wt.w, s = g.stride, pad = g.padding;
  const int oh = conv_output_dim(in.h, kh, s, pad);
  const int ow = conv_output_dim(in.w, kw, s, pad);
  const Shape expect{in.n, wt.n, oh, ow};
  if (grad_out.shape() != expect)
    throw ShapeError(shape_mismatch("conv2d_backward: upstream gradient", grad_out.shape(), expect));
  if (in.c != wt.c * g.groups)
    throw ShapeError(shape_mismatch("conv2d_backward", in, wt));

  const int cin_g = wt.c;
  const int cout_g = wt.n / g.groups;
  std::vector<double> gin(in.numel(), 0.0);
  std::vector<double> gw(wt.numel(), 0.0);
  std::vector<double> gb(has_bias ? wt.n : 0, 0.0);

  for (int b = 0; b < in.n; ++b) {
    for (int o = 0; o < wt.n; ++o) {
      const int group = o / cout_g;
      const T* go = grad_out.plane(b, o);
      if (!gb.empty())
        for (int i = 0; i < oh * ow; ++i) gb[o] += go[i];
      for (int ci = 0; ci < cin_g; ++ci) {
        const int ic = group * cin_g + ci;
        const T* src = input.plane(b, ic);
        double* gsrc = gin.data() + input.offset(b, ic, 0, 0);
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const std::size_t widx = weights.offset(o, ci, ky, kx);
            const double wv = weights[widx];
            double wacc = 0.0;
            int lo = 0;
            while (lo < ow && lo * s + kx - pad < 0) ++lo;
            int hi = ow;
            while (hi > lo && (hi - 1) * s + kx - pad >= in.w) --hi;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * s + ky - pad;
              if (iy < 0 || iy >= in.h) continue;
              const T* grow = go + static_cast<std::size_t>(oy) * ow;
              const T* srow = src + static_cast<std::size_t>(iy) * in.w;
              double* gsrow = gsrc + static_cast<std::size_t>(iy) * in.w;
              for (int ox = lo; ox < hi; ++ox) {
                const int ix = ox * s + kx - pad;
                const double gv = grow[ox];
                wacc += gv * static_cast<double>(srow[ix]);
                gsrow[ix] += gv * wv;
              }
            }
            gw[widx] += wacc;
          }
      }
    }
  }

  ConvGrads<T> r{BasicTensor<T>(in), BasicTensor<T>(wt), {}};
  for (std::size_t i = 0; i < gin.size(); ++i) r.input[i] = static_cast<T>(gin[i]);
  for (std::size_t i = 0; i < gw.size(); ++i) r.weights[i] = static_cast<T>(gw[i]);
  r.bias.reserve(gb.size());
  for (double v : gb) r.bias.push_back(static_cast<T>(v));
  return r;
}

template <typename T>
BnGrads<T> batch_norm_backward(const BasicTensor<T>& input, const BnParams<T>& p,
                               const BasicTensor<T>& grad_out) {
  const Shape s = input.shape();
  if (grad_out.shape() != s) throw ShapeError(shape_mismatch("batch_norm_backward", s, grad_out.shape()));
  if (p.channels() != s.c) throw ShapeError("batch_norm_backward: channel mismatch");
  BnGrads<T> r{BasicTensor<T>(s), std::vector<T>(s.c), std::vector<T>(s.c)};
  const std::size_t plane = s.plane();
  for (int ch = 0; ch < s.c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(p.var[ch]) + p.eps);
    double gg = 0.0, gbeta = 0.0;
    for (int b = 0; b < s.n; ++b) {
      const T* x = input.plane(b, ch);
      const T* go = grad_out.plane(b, ch);
      T* gi = r.input.plane(b, ch);
      for (std::size_t i = 0; i < plane; ++i) {
        gg += go[i] * (static_cast<double>(x[i]) - p.mean[ch]) * inv;
        gbeta += go[i];
        gi[i] = static_cast<T>(go[i] * inv * p.gamma[ch]);
      }
    }
    r.gamma[ch] = static_cast<T>(gg);
    r.beta[ch] = static_cast<T>(gbeta);
  }
  return r;
}

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& input, T slope,
                                   const BasicTensor<T>& grad_out) {
  if (grad_out.shape() != input.shape())
    throw ShapeError(shape_mismatch("leaky_relu_backward", input.shape(), grad_out.shape()));
  BasicTensor<T> r(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    r[i] = input[i] >= T(0) ? grad_out[i] : slope * grad_out[i];
  return r;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  if (grad_out.shape() != input.shape())
    throw ShapeError(shape_mismatch("relu_backward", input.shape(), grad_out.shape()));
  BasicTensor<T> r(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) r[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return r;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out) {
  BasicTensor<T> r(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i)
    r[i] = grad_out[i] * output[i] * (T(1) - output[i]);
  return r;
}

template <typename T>
BasicTensor<T> tanh_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out) {
  BasicTensor<T> r(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i)
    r[i] = grad_out[i] * (T(1) - output[i] * output[i]);
  return r;
}

template <typename T>
BasicTensor<T> nearest_upsample_backward(const BasicTensor<T>& grad_out, int factor,
                                         const Shape& input_shape) {
  const Shape g = grad_out.shape();
  if (g.n != input_shape.n || g.c != input_shape.c || g.h > input_shape.h * factor ||
      g.w > input_shape.w * factor)
    throw ShapeError(shape_mismatch("nearest_upsample_backward", input_shape, g));
  std::vector<double> acc(input_shape.numel(), 0.0);
  for (int b = 0; b < g.n; ++b)
    for (int ch = 0; ch < g.c; ++ch)
      for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
          acc[((static_cast<std::size_t>(b) * g.c + ch) * input_shape.h + y / factor) *
                  input_shape.w +
              x / factor] += grad_out(b, ch, y, x);
  BasicTensor<T> r(input_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) r[i] = static_cast<T>(acc[i]);
  return r;
}

template <typename T>
BasicTensor<T> avg_pool_backward(const BasicTensor<T>& grad_out, int factor,
                                 const Shape& input_shape) {
  BasicTensor<T> r(input_shape);
  const Shape s = input_shape;
  for (int b = 0; b < s.n; ++b)
    for (int ch = 0; ch < s.c; ++ch)
      for (int oy = 0; oy < grad_out.h(); ++oy)
        for (int ox = 0; ox < grad_out.w(); ++ox) {
          const int y1 = std::min(s.h, (oy + 1) * factor);
          const int x1 = std::min(s.w, (ox + 1) * factor);
          const int count = (y1 - oy * factor) * (x1 - ox * factor);
          const T gv = grad_out(b, ch, oy, ox) / static_cast<T>(count);
          for (int y = oy * factor; y < y1; ++y)
            for (int x = ox * factor; x < x1; ++x) r(b, ch, y, x) += gv;
        }
  return r;
}

template <typename T>
WarpGrads<T> bilinear_warp_backward(const BasicTensor<T>& feature, const BasicFlowField<T>& flow,
                                    const BasicTensor<T>& grad_out) {
  const Shape s = feature.shape();
  if (!s.same_spatial(flow.shape()) || flow.n() != s.n)
    throw ShapeError(shape_mismatch("bilinear_warp_backward", s, flow.shape()));
  if (grad_out.shape() != s)
    throw ShapeError(shape_mismatch("bilinear_warp_backward: upstream gradient", s, grad_out.shape()));
  std::vector<double> gf(s.numel(), 0.0);
  BasicTensor<T> gflow(Shape{s.n, 2, s.h, s.w});
  for (int b = 0; b < s.n; ++b)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const double sx = x + static_cast<double>(flow.dx(b, y, x));
        const double sy = y + static_cast<double>(flow.dy(b, y, x));
        const double fx = std::floor(sx), fy = std::floor(sy);
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const double ax = sx - fx, ay = sy - fy;
        const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
        const double dwx[4] = {-(1 - ay), (1 - ay), -ay, ay};
        const double dwy[4] = {-(1 - ax), -ax, (1 - ax), ax};
        const int ty[4] = {y0, y0, y0 + 1, y0 + 1};
        const int tx[4] = {x0, x0 + 1, x0, x0 + 1};
        double gdx = 0.0, gdy = 0.0;
        for (int ch = 0; ch < s.c; ++ch) {
          const double g = grad_out(b, ch, y, x);
          if (g == 0.0) continue;
          for (int k = 0; k < 4; ++k) {
            if (ty[k] < 0 || ty[k] >= s.h || tx[k] < 0 || tx[k] >= s.w) continue;
            const std::size_t at = feature.offset(b, ch, ty[k], tx[k]);
            const double v = feature[at];
            gf[at] += wts[k] * g;
            gdx += dwx[k] * v * g;
            gdy += dwy[k] * v * g;
          }
        }
        gflow(b, 0, y, x) = static_cast<T>(gdx);
        gflow(b, 1, y, x) = static_cast<T>(gdy);
      }
  WarpGrads<T> r{BasicTensor<T>(s), std::move(gflow)};
  for (std::size_t i = 0; i < gf.size(); ++i) r.feature[i] = static_cast<T>(gf[i]);
  return r;
}

template <typename T>
std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out,
                                                     const std::vector<int>& channels) {
  int total = 0;
  for (int c : channels) total += c;
  if (total != grad_out.c()) throw ShapeError("concat_channels_backward: channel split mismatch");
  std::vector<BasicTensor<T>> parts;
  const Shape g = grad_out.shape();
  int base = 0;
  for (int c : channels) {
    BasicTensor<T> p(Shape{g.n, c, g.h, g.w});
    for (int b = 0; b < g.n; ++b)
      std::copy_n(grad_out.plane(b, base), g.plane() * c, p.plane(b, 0));
    parts.push_back(std::move(p));
    base += c;
  }
  return parts;
}

#define MVOD_INSTANTIATE_GRAD(T)                                                              \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const ConvParams<T>&,          \
                                        const BasicTensor<T>&);                               \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, bool,   \
                                        ConvGeometry, const BasicTensor<T>&);                 \
  template BnGrads<T> batch_norm_backward(const BasicTensor<T>&, const BnParams<T>&,          \
                                          const BasicTensor<T>&);                             \
  template BasicTensor<T> leaky_relu_backward(const BasicTensor<T>&, T, const BasicTensor<T>&); \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> tanh_backward(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> nearest_upsample_backward(const BasicTensor<T>&, int, const Shape&); \
  template BasicTensor<T> avg_pool_backward(const BasicTensor<T>&, int, const Shape&);        \
  template WarpGrads<T> bilinear_warp_backward(const BasicTensor<T>&, const BasicFlowField<T>&, \
                                               const BasicTensor<T>&);                        \
  template std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>&,        \
                                                                const std::vector<int>&);

MVOD_INSTANTIATE_GRAD(float)
MVOD_INSTANTIATE_GRAD(double)

}  // namespace mvod

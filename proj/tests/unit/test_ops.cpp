#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "mvod/checks.hpp"
#include "mvod/ops.hpp"
#include "mvod/runtime.hpp"

using namespace mvod;

namespace {

TensorD random_d(Shape s, std::mt19937_64& rng) {
  TensorD t(s);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double max_diff(const TensorD& a, const TensorD& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Conv2d, MatchesScalarReference) {
  std::mt19937_64 rng(3);
  for (int it = 0; it < 40; ++it) {
    const int groups = it % 3 == 0 ? 2 : 1;
    const int cin = groups * (1 + it % 3), cout = groups * (1 + (it / 3) % 3);
    const int k = std::array{1, 3, 5}[it % 3];
    const ConvGeometry g{.stride = 1 + it % 2, .padding = (it / 2) % (k / 2 + 1), .groups = groups};
    const TensorD x = random_d({1 + it % 2, cin, 6 + it % 4, 7}, rng);
    const TensorD w = random_d({cout, cin / groups, k, k}, rng);
    std::vector<double> bias(static_cast<std::size_t>(cout), 0.25);
    const TensorD got = conv2d(x, ConvParams<double>{w, bias, g});
    const TensorD want = checks::ref_conv2d(x, w, bias, g);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(max_diff(got, want), 1e-12) << "instance " << it;
  }
}

TEST(Conv2d, OutputGeometry) {
  EXPECT_EQ(conv_output_dim(384, 3, 2, 1), 192);
  EXPECT_EQ(conv_output_dim(7, 3, 2, 1), 4);
  EXPECT_EQ(conv_output_dim(5, 5, 1, 0), 1);
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor x(Shape{1, 3, 4, 4});
  ConvParams<float> p{Tensor(Shape{2, 2, 3, 3}), {}, {}};
  EXPECT_THROW(conv2d(x, p), ShapeError);
}

TEST(Conv2d, CountsMultiplyAdds) {
  Tensor x(Shape{1, 4, 8, 8}, 1.f);
  ConvParams<float> p{Tensor(Shape{6, 2, 3, 3}, 0.1f), {}, {.stride = 2, .padding = 1, .groups = 2}};
  instrument::MacCountScope scope;
  (void)conv2d(x, p);
  EXPECT_EQ(scope.count(), 1ull * 6 * 2 * 9 * 4 * 4);
}

TEST(DepthwiseSeparable, EqualsTwoConvBlocks) {
  std::mt19937_64 rng(5);
  const TensorD x = random_d({1, 3, 6, 5}, rng);
  ConvParams<double> dw{random_d({3, 1, 3, 3}, rng), {0.1, 0.2, 0.3}, {.stride = 2, .padding = 1, .groups = 3}};
  ConvParams<double> pw{random_d({4, 3, 1, 1}, rng), {}, {}};
  const ConvNorm<double> norm{BnParams<double>::identity(3), 0.1};
  const ConvNorm<double> norm2{BnParams<double>::identity(4), 0.1};
  const TensorD got = depthwise_separable(x, dw, pw, norm, norm2);
  const TensorD want = conv_block(conv_block(x, dw, norm), pw, norm2);
  EXPECT_EQ(got, want);
  EXPECT_EQ(got.shape(), (Shape{1, 4, 3, 3}));
}

TEST(DepthwiseSeparable, RejectsDenseFirstStage) {
  Tensor x(Shape{1, 2, 4, 4});
  ConvParams<float> dense{Tensor(Shape{2, 2, 3, 3}), {}, {.stride = 1, .padding = 1, .groups = 1}};
  ConvParams<float> pw{Tensor(Shape{2, 2, 1, 1}), {}, {}};
  EXPECT_THROW(depthwise_separable(x, dense, pw), ShapeError);
}

TEST(BatchNorm, InferenceForm) {
  Tensor x(Shape{1, 2, 1, 2}, {1.f, 2.f, 3.f, 4.f});
  BnParams<float> p{{2.f, 1.f}, {0.5f, 0.f}, {1.f, 3.f}, {4.f, 1.f}, 0.f};
  const Tensor y = batch_norm(x, p);
  EXPECT_FLOAT_EQ(y(0, 0, 0, 0), 0.5f);
  EXPECT_FLOAT_EQ(y(0, 0, 0, 1), 1.5f);
  EXPECT_FLOAT_EQ(y(0, 1, 0, 0), 0.f);
  EXPECT_FLOAT_EQ(y(0, 1, 0, 1), 1.f);
}

TEST(Activations, Values) {
  Tensor x(Shape{1, 1, 1, 3}, {-2.f, 0.f, 3.f});
  const Tensor l = leaky_relu(x, 0.1f);
  EXPECT_FLOAT_EQ(l[0], -0.2f);
  EXPECT_FLOAT_EQ(l[2], 3.f);
  EXPECT_FLOAT_EQ(relu(x)[0], 0.f);
  EXPECT_FLOAT_EQ(sigmoid(x)[1], 0.5f);
  EXPECT_FLOAT_EQ(mvod::tanh(x)[1], 0.f);
}

TEST(Resampling, UpsampleCropPool) {
  Tensor x(Shape{1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor u = nearest_upsample(x, 2);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 4, 6}));
  EXPECT_EQ(u(0, 0, 3, 5), 6.f);
  EXPECT_EQ(u(0, 0, 1, 2), 2.f);
  const Tensor c = crop(u, 3, 5);
  EXPECT_EQ(c.shape(), (Shape{1, 1, 3, 5}));
  EXPECT_THROW(crop(u, 5, 5), ShapeError);
  // average pooling undoes nearest upsampling
  EXPECT_EQ(avg_pool(u, 2), x);
  // ceil mode: partial windows average what they cover
  const Tensor p = avg_pool(x, 2);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_FLOAT_EQ(p(0, 0, 0, 1), 4.5f);
}

TEST(Resampling, BilinearResize) {
  Tensor x(Shape{1, 2, 5, 7});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i % 11);
  EXPECT_EQ(resize_bilinear(x, 5, 7), x);
  const Tensor flat(Shape{1, 1, 6, 8}, 0.75f);
  const Tensor stretched = resize_bilinear(flat, 13, 3);
  for (float v : stretched.values()) EXPECT_FLOAT_EQ(v, 0.75f);
  // halving a linear ramp lands on pixel-center averages
  TensorD ramp(Shape{1, 1, 1, 8});
  for (int xx = 0; xx < 8; ++xx) ramp(0, 0, 0, xx) = xx;
  const TensorD half = resize_bilinear(ramp, 1, 4);
  for (int xx = 0; xx < 4; ++xx) EXPECT_NEAR(half(0, 0, 0, xx), 2 * xx + 0.5, 1e-12);
}

TEST(Warp, MatchesScalarReference) {
  std::mt19937_64 rng(9);
  for (int it = 0; it < 30; ++it) {
    const TensorD f = random_d({1 + it % 2, 1 + it % 3, 4 + it % 5, 3 + it % 4}, rng);
    TensorD flow = random_d({f.n(), 2, f.h(), f.w()}, rng);
    for (auto& v : flow.values()) v *= 3.5;
    const TensorD got = bilinear_warp(f, FlowFieldD(flow));
    EXPECT_LT(max_diff(got, checks::ref_warp(f, flow)), 1e-12);
  }
}

TEST(Warp, ZeroFlowAndIntegerShiftAreExact) {
  EXPECT_TRUE(checks::warp_zero_flow_identity(50, 1).passed());
  EXPECT_TRUE(checks::warp_integer_shift(50, 2).passed());
}

TEST(Warp, RejectsMismatchedFlow) {
  Tensor f(Shape{1, 3, 4, 4});
  EXPECT_THROW(bilinear_warp(f, FlowField::zeros(1, 4, 5)), ShapeError);
  EXPECT_THROW(bilinear_warp(f, FlowField::zeros(2, 4, 4)), ShapeError);
}

TEST(Elementwise, ConcatAddMulScale) {
  Tensor a(Shape{1, 1, 2, 2}, 1.f), b(Shape{1, 2, 2, 2}, 2.f);
  const Tensor c = concat_channels<float>({&a, &b});
  EXPECT_EQ(c.shape(), (Shape{1, 3, 2, 2}));
  EXPECT_EQ(c(0, 0, 1, 1), 1.f);
  EXPECT_EQ(c(0, 2, 0, 0), 2.f);
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_EQ(add(a, a)[3], 2.f);
  EXPECT_EQ(mul(b, b)[0], 4.f);
  EXPECT_EQ(scale(a, 3.f)[2], 3.f);
  Tensor d(Shape{1, 1, 3, 2});
  EXPECT_THROW(concat_channels<float>({&a, &d}), ShapeError);
}

TEST(Elementwise, StackBatch) {
  Tensor a(Shape{1, 2, 2, 2}, 1.f), b(Shape{1, 2, 2, 2}, 2.f);
  const Tensor s = stack_batch<float>({&a, &b});
  EXPECT_EQ(s.shape(), (Shape{2, 2, 2, 2}));
  EXPECT_EQ(s.slice_batch(1), b);
}

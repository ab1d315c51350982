#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "mvod/autograd.hpp"
#include "mvod/checks.hpp"

using namespace mvod;
using checks::numeric_gradient;
using checks::relative_error;

namespace {

using Var = Tape<double>::Var;
using UnaryOp = std::function<Var(Tape<double>&, Var)>;

TensorD random_d(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  TensorD t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Projects op(x) onto a fixed random direction and compares the tape
// gradient with central differences.
double unary_error(const UnaryOp& op, const TensorD& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tape<double> probe(false);
  const TensorD dir = random_d(probe.value(op(probe, probe.constant(x))).shape(), rng);

  Tape<double> tape;
  const Var xv = tape.parameter(x);
  const Var loss = tape.dot(op(tape, xv), tape.constant(dir));
  tape.backward(loss);
  const TensorD analytic = tape.grad(xv);

  const auto f = [&](const TensorD& in) {
    Tape<double> t(false);
    return t.value(t.dot(op(t, t.constant(in)), t.constant(dir)))[0];
  };
  return relative_error(analytic, numeric_gradient(f, x));
}

}  // namespace

TEST(GradCheck, KernelSuites) {
  for (const auto& s : {checks::grad_check_conv2d(4, 1), checks::grad_check_depthwise_separable(3, 2),
                        checks::grad_check_warp_feature(4, 3), checks::grad_check_warp_flow(4, 4),
                        checks::grad_check_gru(2, 5), checks::grad_check_epe(4, 6)}) {
    EXPECT_GT(s.instances, 0) << s.op;
    EXPECT_LT(s.max_rel_error, 1e-6) << s.op << " worst " << s.worst;
  }
}

TEST(GradCheck, PointwiseAndResampling) {
  std::mt19937_64 rng(11);
  const TensorD x = random_d({2, 3, 5, 4}, rng);
  // keep leaky relu inputs away from the kink
  TensorD off = x;
  for (auto& v : off.values()) v += v >= 0 ? 0.05 : -0.05;

  EXPECT_LT(unary_error([](Tape<double>& t, Var v) { return t.sigmoid(v); }, x, 1), 1e-7);
  EXPECT_LT(unary_error([](Tape<double>& t, Var v) { return t.tanh(v); }, x, 2), 1e-7);
  EXPECT_LT(unary_error([](Tape<double>& t, Var v) { return t.leaky_relu(v, 0.1); }, off, 3), 1e-7);
  EXPECT_LT(unary_error([](Tape<double>& t, Var v) { return t.one_minus(t.mul(v, v)); }, x, 4), 1e-7);
  EXPECT_LT(unary_error([](Tape<double>& t, Var v) { return t.upsample(v, 2, 9, 7); }, x, 5), 1e-7);
  EXPECT_LT(unary_error([](Tape<double>& t, Var v) { return t.avg_pool(v, 2); }, x, 6), 1e-7);
  EXPECT_LT(unary_error([](Tape<double>& t, Var v) { return t.concat({v, t.scale(v, 2.0)}); }, x, 7),
            1e-7);
}

TEST(GradCheck, BatchNormGammaBeta) {
  std::mt19937_64 rng(12);
  const TensorD x = random_d({1, 3, 4, 4}, rng);
  BnParams<double> stats = BnParams<double>::identity(3);
  stats.mean = {0.1, -0.2, 0.3};
  stats.var = {0.5, 2.0, 1.5};
  const TensorD gamma = random_d({3, 1, 1, 1}, rng, 0.5, 1.5);
  const TensorD beta = random_d({3, 1, 1, 1}, rng);
  const TensorD dir = random_d({1, 3, 4, 4}, rng);

  Tape<double> tape;
  const Var xv = tape.parameter(x), gv = tape.parameter(gamma), bv = tape.parameter(beta);
  tape.backward(tape.dot(tape.batch_norm(xv, gv, bv, stats), tape.constant(dir)));

  const auto loss = [&](const TensorD& xx, const TensorD& gg, const TensorD& bb) {
    Tape<double> t(false);
    return t.value(t.dot(t.batch_norm(t.constant(xx), t.constant(gg), t.constant(bb), stats),
                         t.constant(dir)))[0];
  };
  EXPECT_LT(relative_error(tape.grad(xv),
                           numeric_gradient([&](const TensorD& v) { return loss(v, gamma, beta); }, x)),
            1e-7);
  EXPECT_LT(relative_error(tape.grad(gv),
                           numeric_gradient([&](const TensorD& v) { return loss(x, v, beta); }, gamma)),
            1e-7);
  EXPECT_LT(relative_error(tape.grad(bv),
                           numeric_gradient([&](const TensorD& v) { return loss(x, gamma, v); }, beta)),
            1e-7);
}

TEST(Tape, GradientAccumulatesAcrossUses) {
  Tape<double> tape;
  const Var x = tape.parameter(TensorD(Shape{1, 1, 1, 2}, {2.0, -3.0}));
  // d/dx sum(x*x + 3x) = 2x + 3
  const Var y = tape.add(tape.mul(x, x), tape.scale(x, 3.0));
  tape.backward(tape.dot(y, tape.constant(TensorD(Shape{1, 1, 1, 2}, 1.0))));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 7.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], -3.0);
}

TEST(Tape, NonRecordingTapeRefusesBackward) {
  Tape<double> tape(false);
  const Var x = tape.parameter(TensorD(Shape{1, 1, 1, 1}, 1.0));
  const Var y = tape.dot(x, x);
  EXPECT_THROW(tape.backward(y), GradientError);
}

TEST(Tape, ConstantsGetZeroGradient) {
  Tape<double> tape;
  const Var c = tape.constant(TensorD(Shape{1, 1, 2, 2}, 1.0));
  const Var p = tape.parameter(TensorD(Shape{1, 1, 2, 2}, 2.0));
  tape.backward(tape.dot(c, p));
  const TensorD gc = tape.grad(c), gp = tape.grad(p);
  for (double v : gc.values()) EXPECT_EQ(v, 0.0);
  for (double v : gp.values()) EXPECT_EQ(v, 1.0);
}

TEST(NumericGradient, QuadraticIsExact) {
  const TensorD x(Shape{1, 1, 1, 3}, {1.0, -2.0, 0.5});
  const TensorD g = numeric_gradient(
      [](const TensorD& v) {
        double s = 0;
        for (double e : v.values()) s += e * e;
        return s;
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], 2 * x[i], 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(g, g), 0.0);
}

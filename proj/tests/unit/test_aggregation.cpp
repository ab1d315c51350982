#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mvod/aggregation.hpp"
#include "mvod/checks.hpp"

using namespace mvod;

namespace {

Tensor random_t(Shape s, std::uint64_t seed, float lo = -1, float hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST(Gru, ZeroGatesAverageWithZeroCandidate) {
  // all-zero parameters: z = r = 0.5, candidate = relu(0) = 0
  const GruParams<float> p = GruParams<float>::zeros(4);
  const Tensor cur = random_t({1, 4, 5, 6}, 1), prev = random_t({1, 4, 5, 6}, 2);
  const Tensor out = flow_guided_gru(cur, prev, FlowField::zeros(1, 5, 6), p);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_FLOAT_EQ(out[i], 0.5f * prev[i]);
}

TEST(Gru, WarpsPreviousStateByFlow) {
  std::mt19937_64 rng(3);
  const auto p = GruParams<double>::random(3, rng, 0.2, 0.1);
  const TensorD cur = random_t({1, 3, 6, 7}, 4).cast<double>();
  const TensorD prev = random_t({1, 3, 6, 7}, 5).cast<double>();
  TensorD flow(Shape{1, 2, 6, 7});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) flow(0, 0, y, x) = 0.3 * x - 1.1, flow(0, 1, y, x) = 0.7;
  const auto trace = flow_guided_gru_trace(cur, prev, FlowFieldD(flow), p);
  EXPECT_LT(max_abs_diff(trace.warped, checks::ref_warp(prev, flow)), 1e-12);
  EXPECT_LT(max_abs_diff(trace.output, checks::ref_gru(cur, prev, flow, p)), 1e-10);
}

TEST(Gru, GatesInUnitIntervalAndOutputConvex) {
  EXPECT_TRUE(checks::gru_gate_and_convexity(30, 7).passed());
  EXPECT_TRUE(checks::gru_matches_reference(10, 8).passed());
}

TEST(Gru, ValidateRejectsBadKernels) {
  auto p = GruParams<float>::zeros(4);
  EXPECT_NO_THROW(p.validate());
  p.uh = Tensor(Shape{4, 4, 1, 1});
  EXPECT_THROW(p.validate(), ShapeError);
  auto q = GruParams<float>::zeros(4);
  q.br.pop_back();
  EXPECT_THROW(q.validate(), ShapeError);
}

TEST(Aggregator, FirstStepStartsFromCurrentFeature) {
  const AggregatorConfig cfg{.feature_width = 8, .gru_width = 8, .layers = 1};
  const Aggregator agg = Aggregator::from_params(cfg, init_aggregator(cfg, 2));
  const Tensor f = random_t({1, 8, 4, 5}, 6);
  const auto first = agg.step(f, nullptr, nullptr);
  EXPECT_EQ(first.features, f);
  EXPECT_EQ(first.state, f);
  const FlowField zero = FlowField::zeros(1, 4, 5);
  const auto second = agg.step(f, &first.state, &zero);
  EXPECT_EQ(second.features, flow_guided_gru(f, f, zero, agg.cells[0]));
  EXPECT_THROW(agg.step(f, &first.state, nullptr), std::invalid_argument);
}

TEST(Aggregator, ProjectionWhenWidthsDiffer) {
  const AggregatorConfig cfg{.feature_width = 8, .gru_width = 16, .layers = 2};
  const ParamStore store = init_aggregator(cfg, 2);
  const Aggregator agg = Aggregator::from_params(cfg, store);
  ASSERT_TRUE(agg.in_proj && agg.out_proj);
  EXPECT_EQ(agg.cells.size(), 2u);
  const Tensor f = random_t({1, 8, 4, 4}, 1);
  const auto r = agg.step(f, nullptr, nullptr);
  EXPECT_EQ(r.state.c(), 16);
  EXPECT_EQ(r.features.c(), 8);
  const FlowField flow = FlowField::zeros(1, 4, 4);
  EXPECT_EQ(agg.step(f, &r.state, &flow).features.shape(), f.shape());
  EXPECT_THROW(agg.step(f, &f, &flow), ShapeError);

  ParamStore round;
  agg.to_params(round);
  EXPECT_EQ(round.size(), store.size());
  EXPECT_NO_THROW(validate_params(build_gru_graph(cfg),
                                  {{"feat", 8}, {"prev", 16}, {"gru_flow", 2}}, round));
}

TEST(WeightedAverage, WeightsSumToOne) {
  const Tensor a = random_t({1, 5, 3, 4}, 1), b = random_t({1, 5, 3, 4}, 2);
  const auto w = similarity_weights(a, b);
  for (std::size_t i = 0; i < w.prev.size(); ++i) {
    EXPECT_NEAR(w.prev[i] + w.cur[i], 1.f, 1e-6);
    EXPECT_GT(w.prev[i], 0.f);
  }
  // identical features: cos = 1, equal weights
  const auto same = similarity_weights(a, a);
  EXPECT_NEAR(same.prev[3], 0.5f, 1e-6);
}

TEST(WeightedAverage, CosineSimilarity) {
  Tensor a(Shape{1, 2, 1, 3}, {1, 0, 0, 0, 1, 0});
  Tensor b(Shape{1, 2, 1, 3}, {2, 1, 0, 0, -1, 0});
  const Tensor c = cosine_similarity(a, b);
  EXPECT_FLOAT_EQ(c[0], 1.f);
  EXPECT_FLOAT_EQ(c[1], -std::sqrt(0.5f));
  EXPECT_FLOAT_EQ(c[2], 0.f);  // zero vectors
}

TEST(WeightedAverage, MaskFallsBackToCurrent) {
  const Tensor cur = random_t({1, 3, 4, 4}, 1), prev = random_t({1, 3, 4, 4}, 2);
  const Tensor mask(Shape{1, 1, 4, 4}, 0.f);
  const Tensor out = recursive_weighted_aggregate(cur, prev, FlowField::zeros(1, 4, 4), &mask);
  EXPECT_LT(max_abs_diff(out, cur), 1e-6);
  // identical inputs are a fixed point
  EXPECT_LT(max_abs_diff(recursive_weighted_aggregate(cur, cur, FlowField::zeros(1, 4, 4)), cur),
            1e-6);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "mvod/analyzer.hpp"
#include "mvod/light_flow.hpp"

using namespace mvod;

namespace {

LayerSpec conv_layer(int out, int k, int s, bool dw = false) {
  LayerSpec l;
  l.name = "c";
  l.kind = LayerKind::Conv;
  l.inputs = {"x"};
  l.out_channels = out;
  l.kernel = k;
  l.stride = s;
  l.padding = k / 2;
  l.depthwise = dw;
  return l;
}

}  // namespace

TEST(CountLayer, PointwiseConv) {
  const LayerCost c = count_layer(conv_layer(32, 1, 1), {Shape{1, 6, 192, 256}});
  EXPECT_EQ(c.params, 6u * 32u + 32u);
  EXPECT_EQ(c.flops, 2ull * 256 * 192 * 32 * 6);
  EXPECT_EQ(c.output, (Shape{1, 32, 192, 256}));
}

TEST(CountLayer, DepthwiseStrided) {
  LayerSpec l = conv_layer(32, 3, 2, true);
  l.bias = false;
  const LayerCost c = count_layer(l, {Shape{1, 32, 96, 128}});
  EXPECT_EQ(c.output, (Shape{1, 32, 48, 64}));
  EXPECT_EQ(c.params, 32u * 9u);
  EXPECT_EQ(c.flops, 2ull * 32 * 9 * 48 * 64);  // about 1.77M
}

TEST(CountLayer, BatchNormParamsAndElementwiseSwitch) {
  LayerSpec l = conv_layer(8, 3, 1);
  l.batch_norm = true;
  l.activation = Activation::LeakyRelu;
  const LayerCost base = count_layer(l, {Shape{1, 4, 10, 10}});
  EXPECT_EQ(base.params, 8u * 4u * 9u + 8u + 4u * 8u);
  EXPECT_EQ(base.flops, 2ull * 8 * 4 * 9 * 100);
  const LayerCost with = count_layer(l, {Shape{1, 4, 10, 10}}, {.include_elementwise = true});
  EXPECT_GT(with.flops, base.flops);

  LayerSpec act;
  act.name = "a";
  act.kind = LayerKind::Activation;
  act.inputs = {"x"};
  act.activation = Activation::Relu;
  EXPECT_EQ(count_layer(act, {Shape{1, 4, 10, 10}}).flops, 0u);
  EXPECT_GT(count_layer(act, {Shape{1, 4, 10, 10}}, {.include_elementwise = true}).flops, 0u);
}

TEST(CountNetwork, EmptyGraphAndTotals) {
  const CostReport empty = count_network(NetworkGraph("empty"), {});
  EXPECT_EQ(empty.params, 0u);
  EXPECT_EQ(empty.flops, 0u);
  EXPECT_THROW(speedup_ratio(empty, empty), std::domain_error);

  const LightFlowSpec spec = build_light_flow(0.5);
  const CostReport r = count_network(spec.graph, {{spec.input, Shape{1, 6, 384, 512}}});
  std::uint64_t p = 0, f = 0;
  for (const auto& l : r.layers) p += l.params, f += l.flops;
  EXPECT_EQ(p, r.params);
  EXPECT_EQ(f, r.flops);
  EXPECT_DOUBLE_EQ(speedup_ratio(r, r), 1.0);
}

TEST(CountNetwork, ParamsMatchInitializedStore) {
  const LightFlowSpec spec = build_light_flow(0.75);
  const CostReport r = count_network(spec.graph, {{spec.input, Shape{1, 6, 64, 64}}});
  EXPECT_EQ(r.params, init_light_flow(spec, 1).scalar_count());
}

TEST(CountNetwork, FlopsScaleWithInputArea) {
  const LightFlowSpec spec = build_light_flow(1.0);
  const auto a = count_network(spec.graph, {{spec.input, Shape{1, 6, 384, 512}}});
  const auto b = count_network(spec.graph, {{spec.input, Shape{1, 6, 192, 256}}});
  EXPECT_NEAR(static_cast<double>(a.flops) / static_cast<double>(b.flops), 4.0, 1e-9);
  EXPECT_EQ(a.params, b.params);
}

TEST(Monotonicity, WidthMultipliers) {
  double prev_p = 0, prev_f = 0;
  for (double beta : {0.25, 0.5, 0.75, 1.0}) {
    const LightFlowSpec spec = build_light_flow(beta);
    const auto r = count_network(spec.graph, {{spec.input, Shape{1, 6, 384, 512}}});
    EXPECT_GT(static_cast<double>(r.params), prev_p);
    EXPECT_GT(static_cast<double>(r.flops), prev_f);
    prev_p = static_cast<double>(r.params), prev_f = static_cast<double>(r.flops);
  }
  prev_p = prev_f = 0;
  for (double alpha : {0.25, 0.5, 0.75, 1.0}) {
    const SystemCost c = amortized_cost({.alpha = alpha, .beta = 0.5});
    EXPECT_GT(static_cast<double>(c.params), prev_p);
    EXPECT_GT(c.per_frame_flops, prev_f);
    prev_p = static_cast<double>(c.params), prev_f = c.per_frame_flops;
  }
}

TEST(Amortized, AverageOverKeyInterval) {
  const SystemCost c = amortized_cost({.alpha = 0.5, .beta = 0.5, .key_interval = 7});
  EXPECT_NEAR(c.per_frame_flops,
              (static_cast<double>(c.key.flops) + 6.0 * static_cast<double>(c.nonkey.flops)) / 7.0,
              1e-6);
  EXPECT_EQ(c.feature_height, 14);
  EXPECT_EQ(c.feature_width, 25);
  EXPECT_EQ(c.flow_height, 112);
  EXPECT_EQ(c.flow_width, 200);
  EXPECT_LT(c.nonkey.flops, c.key.flops);
}

TEST(Amortized, LongerIntervalsAreCheaper) {
  double prev = 1e30;
  for (int l = 1; l <= 20; ++l) {
    const double f = amortized_cost({.alpha = 1.0, .beta = 1.0, .key_interval = l}).per_frame_flops;
    EXPECT_LT(f, prev) << "l=" << l;
    prev = f;
  }
}

TEST(Amortized, WithoutFlowEveryFrameIsKey) {
  const SystemCost c = amortized_cost({.alpha = 1.0, .key_interval = 10, .use_flow = false});
  const SystemCost single = single_frame_cost(1.0);
  EXPECT_DOUBLE_EQ(c.per_frame_flops, single.per_frame_flops);
  EXPECT_THROW(amortized_cost({.height = 220}), std::invalid_argument);
  EXPECT_THROW(amortized_cost({.alpha = 0.0}), std::invalid_argument);
  EXPECT_THROW(amortized_cost({.key_interval = 0}), std::invalid_argument);
}

TEST(Amortized, GruParamsDependOnWidthNotInterval) {
  const auto base = amortized_cost({.alpha = 1.0, .beta = 1.0});
  const auto no_gru = amortized_cost({.alpha = 1.0, .beta = 1.0, .use_gru = false});
  EXPECT_EQ(base.params - no_gru.params, 3u * 2u * 128u * 128u * 9u + 3u * 128u);
  EXPECT_EQ(amortized_cost({.alpha = 1.0, .beta = 1.0, .key_interval = 3}).params, base.params);
}

TEST(Transcription, ParsesAndScales) {
  const std::string text =
      "# tiny\n"
      "input x - out=6 fixed\n"
      "conv a x out=16 k=3 s=2 p=1 bn=1 act=leaky\n"
      "conv b a out=2 k=1 fixed\n";
  const NetworkGraph g = parse_graph_transcription(text, 0.5);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g.at("a").out_channels, 8);
  EXPECT_EQ(g.at("b").out_channels, 2);
  EXPECT_EQ(g.at("x").out_channels, 6);
  EXPECT_TRUE(g.at("a").batch_norm);
  EXPECT_EQ(g.at("a").activation, Activation::LeakyRelu);
}

TEST(Transcription, Errors) {
  EXPECT_THROW(parse_graph_transcription("conv a missing out=3\n"), std::invalid_argument);
  EXPECT_THROW(parse_graph_transcription("frobnicate a -\n"), std::invalid_argument);
  EXPECT_THROW(parse_graph_transcription("input x - out=abc\n"), std::invalid_argument);
  EXPECT_THROW(parse_graph_transcription("input x - colour=red\n"), std::invalid_argument);
  EXPECT_THROW(parse_graph_transcription("conv\n"), std::invalid_argument);
}

TEST(FlowNet, HeavierThanLightFlow) {
  const auto fn = count_network(build_flownet(), {{"images", Shape{1, 6, 384, 512}}});
  const LightFlowSpec lf = build_light_flow(1.0);
  const auto r = count_network(lf.graph, {{lf.input, Shape{1, 6, 384, 512}}});
  EXPECT_GT(speedup_ratio(fn, r), 10.0);
  EXPECT_GT(fn.params, r.params);
}

TEST(Emitters, TableAndCsv) {
  const LightFlowSpec spec = build_light_flow(0.5);
  const auto r = count_network(spec.graph, {{spec.input, Shape{1, 6, 64, 64}}});
  std::ostringstream table, csv;
  print_report_table(table, r);
  print_report_csv(csv, r);
  EXPECT_NE(table.str().find("Conv16"), std::string::npos);
  const std::string s = csv.str();
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), r.layers.size() + 2);  // header and total row
  EXPECT_EQ(format_millions(2571234), "2.571M");
  EXPECT_EQ(format_billions(8.23e8), "0.823B");
}

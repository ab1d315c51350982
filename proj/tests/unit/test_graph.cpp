#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "mvod/executor.hpp"
#include "mvod/graph.hpp"
#include "mvod/params.hpp"
#include "mvod/tensor_io.hpp"

using namespace mvod;

namespace {

LayerSpec input(const std::string& name, int c) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Input;
  l.out_channels = c;
  return l;
}

LayerSpec conv(const std::string& name, const std::string& from, int out, int k, int s,
               bool dw = false) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Conv;
  l.inputs = {from};
  l.out_channels = out;
  l.kernel = k;
  l.stride = s;
  l.padding = k / 2;
  l.depthwise = dw;
  l.batch_norm = true;
  l.activation = Activation::LeakyRelu;
  return l;
}

NetworkGraph small_net() {
  NetworkGraph g("small");
  g.add(input("x", 3));
  g.add(conv("a_dw", "x", 3, 3, 2, true));
  g.add(conv("a", "a_dw", 8, 1, 1));
  LayerSpec up;
  up.name = "up";
  up.kind = LayerKind::Upsample;
  up.inputs = {"a", "x"};
  g.add(up);
  LayerSpec cat;
  cat.name = "cat";
  cat.kind = LayerKind::Concat;
  cat.inputs = {"up", "x"};
  g.add(cat);
  return g;
}

}  // namespace

TEST(Graph, ShapeInference) {
  const auto shapes = infer_shapes(small_net(), {{"x", Shape{1, 3, 9, 12}}});
  EXPECT_EQ(shapes.at("a_dw"), (Shape{1, 3, 5, 6}));
  EXPECT_EQ(shapes.at("a"), (Shape{1, 8, 5, 6}));
  EXPECT_EQ(shapes.at("up"), (Shape{1, 8, 9, 12}));  // cropped to the reference
  EXPECT_EQ(shapes.at("cat"), (Shape{1, 11, 9, 12}));
}

TEST(Graph, RejectsBadConstruction) {
  NetworkGraph g;
  g.add(input("x", 3));
  EXPECT_THROW(g.add(input("x", 3)), std::invalid_argument);
  EXPECT_THROW(g.add(conv("c", "missing", 4, 3, 1)), std::invalid_argument);
  LayerSpec unnamed;
  EXPECT_THROW(g.add(unnamed), std::invalid_argument);
  EXPECT_THROW(g.at("nope"), std::out_of_range);
  EXPECT_THROW(layer_kind_from_string("Blah"), std::invalid_argument);
  EXPECT_EQ(layer_kind_from_string(to_string(LayerKind::PsRoi)), LayerKind::PsRoi);
}

TEST(Graph, ShapeErrorsNameTheLayer) {
  NetworkGraph g;
  g.add(input("x", 3));
  g.add(conv("big", "x", 4, 7, 1)).padding = 0;
  try {
    infer_shapes(g, {{"x", Shape{1, 3, 2, 2}}});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("big"), std::string::npos);
  }
  EXPECT_THROW(infer_shapes(g, {{"x", Shape{1, 5, 16, 16}}}), ShapeError);
  EXPECT_THROW(infer_shapes(g, {}), ShapeError);

  NetworkGraph add;
  add.add(input("a", 2));
  add.add(input("b", 3));
  LayerSpec s;
  s.name = "sum";
  s.kind = LayerKind::Add;
  s.inputs = {"a", "b"};
  add.add(s);
  EXPECT_THROW(infer_shapes(add, {{"a", Shape{1, 2, 4, 4}}, {"b", Shape{1, 3, 4, 4}}}), ShapeError);
}

TEST(Graph, ScaledChannels) {
  EXPECT_EQ(scaled_channels(32, 1.0), 32);
  EXPECT_EQ(scaled_channels(33, 1.0), 33);
  EXPECT_EQ(scaled_channels(64, 0.5), 32);
  EXPECT_EQ(scaled_channels(1024, 0.75), 768);
  EXPECT_EQ(scaled_channels(6, 0.5), 8);
  EXPECT_EQ(scaled_channels(90, 0.5), 46);  // 45 rounds to an even count
  for (double m : {0.25, 0.5, 0.75}) {
    for (int c = 8; c <= 1024; c += 24) EXPECT_EQ(scaled_channels(c, m) % 2, 0);
  }
  EXPECT_THROW(scaled_channels(32, 0.0), std::invalid_argument);
  EXPECT_THROW(scaled_channels(32, 1.5), std::invalid_argument);
}

TEST(Params, InitCoversEverySlot) {
  std::mt19937_64 rng(1);
  const NetworkGraph g = small_net();
  const ParamStore p = init_params(g, {{"x", 3}}, rng);
  const auto shapes = param_shapes(g, {{"x", 3}});
  ASSERT_EQ(p.size(), shapes.size());
  for (const auto& [name, s] : shapes) EXPECT_EQ(p.at(name).shape(), s) << name;
  EXPECT_EQ(p.at("a_dw/weight").shape(), (Shape{3, 1, 3, 3}));
  EXPECT_EQ(p.at("a/weight").shape(), (Shape{8, 3, 1, 1}));
  for (float v : p.at("a/bn_var").values()) EXPECT_EQ(v, 1.f);
  const float bound = std::sqrt(6.f / 3.f);
  for (float v : p.at("a/weight").values()) EXPECT_LE(std::abs(v), bound);
  EXPECT_NO_THROW(validate_params(g, {{"x", 3}}, p));
}

TEST(Params, ValidateReportsMissingAndMisshaped) {
  std::mt19937_64 rng(1);
  const NetworkGraph g = small_net();
  ParamStore p = init_params(g, {{"x", 3}}, rng);
  ParamStore bad = p;
  bad.at("a/weight") = Tensor(Shape{8, 2, 1, 1});
  EXPECT_THROW(validate_params(g, {{"x", 3}}, bad), std::invalid_argument);
  EXPECT_THROW(validate_params(g, {{"x", 3}}, p.extract("a/")), std::invalid_argument);
}

TEST(Params, ExtractMergeCast) {
  ParamStore s;
  s.set("flow/a/weight", Tensor(Shape{1, 1, 1, 2}, 1.f));
  s.set("det/b/weight", Tensor(Shape{1, 1, 1, 3}, 2.f));
  const ParamStore flow = s.extract("flow/");
  ASSERT_EQ(flow.size(), 1u);
  EXPECT_TRUE(flow.contains("a/weight"));
  ParamStore merged;
  merged.merge(flow, "x/");
  EXPECT_TRUE(merged.contains("x/a/weight"));
  EXPECT_EQ(s.scalar_count(), 5u);
  EXPECT_EQ(s.cast<double>().at("det/b/weight")[2], 2.0);
  EXPECT_THROW(s.at("none"), std::out_of_range);
}

TEST(Checkpoint, RoundTrip) {
  std::mt19937_64 rng(4);
  const ParamStore p = init_params(small_net(), {{"x", 3}}, rng);
  const auto path = std::filesystem::temp_directory_path() / "mvod_ckpt_roundtrip.bin";
  save_checkpoint(path, p);
  const ParamStore q = load_checkpoint(path);
  ASSERT_EQ(q.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(q.entries()[i].first, p.entries()[i].first);
    EXPECT_EQ(q.entries()[i].second, p.entries()[i].second);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto path = std::filesystem::temp_directory_path() / "mvod_ckpt_corrupt.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPT and some bytes";
  }
  EXPECT_THROW(load_checkpoint(path), FormatError);

  std::mt19937_64 rng(4);
  save_checkpoint(path, init_params(small_net(), {{"x", 3}}, rng));
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 7);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Executor, MatchesDirectKernels) {
  std::mt19937_64 rng(2);
  const NetworkGraph g = small_net();
  const ParamStore p = init_params(g, {{"x", 3}}, rng);
  Tensor x(Shape{1, 3, 8, 10});
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& v : x.values()) v = u(rng);

  Tape<float> tape(false);
  const auto run = run_graph(tape, g, p, {{"x", tape.constant(x)}});
  const Tensor& out = tape.value(run.outputs.at("a"));

  const auto bn = [&](const std::string& l) {
    BnParams<float> b;
    b.gamma = p.at(l + "/bn_gamma").storage();
    b.beta = p.at(l + "/bn_beta").storage();
    b.mean = p.at(l + "/bn_mean").storage();
    b.var = p.at(l + "/bn_var").storage();
    return b;
  };
  const ConvParams<float> dw{p.at("a_dw/weight"), p.at("a_dw/bias").storage(), {2, 1, 3}};
  const ConvParams<float> pw{p.at("a/weight"), p.at("a/bias").storage(), {1, 0, 1}};
  const Tensor want = depthwise_separable(x, dw, pw, ConvNorm<float>{bn("a_dw"), 0.1f},
                                          ConvNorm<float>{bn("a"), 0.1f});
  ASSERT_EQ(out.shape(), want.shape());
  EXPECT_LT(max_abs_diff(out, want), 1e-5);
  EXPECT_EQ(tape.value(run.outputs.at("cat")).shape(), (Shape{1, 11, 8, 10}));
}

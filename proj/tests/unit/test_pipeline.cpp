#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mvod/pipeline.hpp"
#include "mvod/tensor_io.hpp"

using namespace mvod;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() /
            ("mvod_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Tensor texture(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  Tensor t(Shape{1, 3, h, w});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

PipelineConfig small_config(int l) {
  PipelineConfig cfg;
  cfg.key_interval = l;
  cfg.alpha = 0.25;
  cfg.beta = 0.25;
  cfg.frames.shorter_side = 64;
  cfg.detector.score_threshold = 0.0;
  cfg.detector.max_detections = 20;
  cfg.seed = 3;
  return cfg;
}

std::vector<FrameResult> run_frames(const std::vector<Tensor>& raw, const PipelineConfig& cfg,
                                    const PipelineNets& nets) {
  PipelineState state;
  std::vector<FrameResult> out;
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.push_back(process_frame(state, prepare_frame(raw[i], static_cast<int>(i), cfg.frames), nets, cfg));
  return out;
}

}  // namespace

TEST(Schedule, KeyFrames) {
  EXPECT_TRUE(is_key_frame(0, 10));
  EXPECT_FALSE(is_key_frame(9, 10));
  EXPECT_TRUE(is_key_frame(10, 10));
  for (int i = 0; i < 7; ++i) EXPECT_TRUE(is_key_frame(i, 1));
  EXPECT_THROW(is_key_frame(3, 0), std::invalid_argument);
  EXPECT_THROW(is_key_frame(-1, 4), std::invalid_argument);
}

TEST(Frames, ResizeAndPad) {
  EXPECT_EQ(resized_dims(480, 640, 224), (std::pair<int, int>{224, 299}));
  EXPECT_EQ(resized_dims(640, 480, 224), (std::pair<int, int>{299, 224}));
  EXPECT_EQ(padded_dim(299, 16), 304);
  EXPECT_EQ(padded_dim(224, 16), 224);

  const Frame f = prepare_frame(Tensor(Shape{1, 3, 48, 64}, 0.75f), 4, {.shorter_side = 24});
  EXPECT_EQ(f.index, 4);
  EXPECT_EQ(f.content_h, 24);
  EXPECT_EQ(f.content_w, 32);
  EXPECT_EQ(f.image.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_DOUBLE_EQ(f.scale, 0.5);
  EXPECT_FLOAT_EQ(f.image(0, 1, 10, 10), 1.f);  // (0.75 - 0.5) / 0.25
  EXPECT_FLOAT_EQ(f.image(0, 1, 30, 10), 0.f);  // padding
}

TEST(Frames, ImageRoundTrip) {
  TempDir dir("img");
  Tensor t(Shape{1, 3, 5, 7});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i % 256) / 255.f;
  write_ppm(dir.path() / "a.ppm", t);
  const Tensor back = read_image(dir.path() / "a.ppm");
  EXPECT_LT(max_abs_diff(back, t), 1e-6);
  {
    std::ofstream os(dir.path() / "b.ppm");
    os << "P3\n# c\n2 1\n255\n255 0 0  0 0 255\n";
  }
  const Tensor p3 = read_image(dir.path() / "b.ppm");
  EXPECT_EQ(p3.shape(), (Shape{1, 3, 1, 2}));
  EXPECT_FLOAT_EQ(p3(0, 0, 0, 0), 1.f);
  EXPECT_FLOAT_EQ(p3(0, 2, 0, 1), 1.f);
  {
    std::ofstream os(dir.path() / "c.ppm");
    os << "P6\n4 4\n255\nab";
  }
  EXPECT_THROW(read_image(dir.path() / "c.ppm"), FormatError);
  EXPECT_THROW(read_image(dir.path() / "missing.png"), FormatError);
}

TEST(FrameSequence, EmptyDirectoryYieldsNothing) {
  TempDir dir("empty");
  FrameSequence seq(dir.path());
  EXPECT_EQ(seq.size_hint(), 0);
  EXPECT_FALSE(seq.next().has_value());
  EXPECT_THROW(FrameSequence(dir.path() / "nope"), FormatError);
}

TEST(FrameSequence, NumericOrder) {
  TempDir dir("order");
  for (int i : {10, 2, 1}) {
    Tensor t(Shape{1, 3, 4, 6}, static_cast<float>(i) / 20.f);
    write_ppm(dir.path() / ("frame" + std::to_string(i) + ".ppm"), t);
  }
  FrameSequence seq(dir.path(), {.shorter_side = 0, .mean = 0.f, .std = 1.f});
  EXPECT_EQ(seq.size_hint(), 3);
  std::vector<float> seen;
  while (auto f = seq.next()) seen.push_back(f->image(0, 0, 0, 0));
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_NEAR(seen[0], 1.f / 20.f, 3e-3);
  EXPECT_NEAR(seen[1], 2.f / 20.f, 3e-3);
  EXPECT_NEAR(seen[2], 10.f / 20.f, 3e-3);
}

TEST(FrameSequence, InconsistentSizesRejected) {
  TempDir dir("sizes");
  write_ppm(dir.path() / "0.ppm", Tensor(Shape{1, 3, 4, 6}, 0.5f));
  write_ppm(dir.path() / "1.ppm", Tensor(Shape{1, 3, 5, 6}, 0.5f));
  FrameSequence seq(dir.path());
  EXPECT_TRUE(seq.next().has_value());
  EXPECT_THROW(seq.next(), FormatError);
}

TEST(FrameSequence, TensorStream) {
  TempDir dir("stream");
  {
    std::ofstream os(dir.path() / "v.tnsr", std::ios::binary);
    for (int i = 0; i < 3; ++i) write_tensor(os, texture(16, 16, i));
  }
  FrameSequence seq(dir.path() / "v.tnsr", {.shorter_side = 0});
  EXPECT_EQ(seq.size_hint(), -1);
  int n = 0;
  while (seq.next()) ++n;
  EXPECT_EQ(n, 3);
}

TEST(Config, ParseAndValidate) {
  const PipelineConfig c = parse_pipeline_config(
      "l = 5\nalpha = 0.5\nbeta=0.75\nshorter_side = 112\nuse_gru = false\nscore_threshold = 0.3\n");
  EXPECT_EQ(c.key_interval, 5);
  EXPECT_DOUBLE_EQ(c.alpha, 0.5);
  EXPECT_DOUBLE_EQ(c.beta, 0.75);
  EXPECT_EQ(c.frames.shorter_side, 112);
  EXPECT_FALSE(c.use_gru);
  EXPECT_DOUBLE_EQ(c.detector.score_threshold, 0.3);
  EXPECT_DOUBLE_EQ(c.detector_config().alpha, 0.5);
  EXPECT_THROW(parse_pipeline_config("unknown_key = 1"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config("l = 0").validate(), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config("alpha = 1.5").validate(), std::invalid_argument);
}

TEST(Pipeline, TwentyFramesTwoKeys) {
  const PipelineConfig cfg = small_config(10);
  const PipelineNets nets = PipelineNets::random(cfg);
  std::vector<Tensor> raw;
  for (int i = 0; i < 20; ++i) raw.push_back(texture(64, 80, i));
  const auto results = run_frames(raw, cfg, nets);
  int keys = 0;
  for (const auto& r : results) keys += r.is_key;
  EXPECT_EQ(keys, 2);
  EXPECT_TRUE(results[0].is_key && results[10].is_key);
}

TEST(Pipeline, StaticVideoPropagatesKeyDetectionsExactly) {
  const PipelineConfig cfg = small_config(5);
  const PipelineNets nets = PipelineNets::random(cfg);
  const std::vector<Tensor> raw(7, texture(64, 80, 1));
  const auto results = run_frames(raw, cfg, nets);
  ASSERT_FALSE(results[0].detections.empty());
  for (int i = 1; i < 5; ++i) EXPECT_EQ(results[i].detections, results[0].detections) << i;
  EXPECT_EQ(results[6].detections, results[5].detections);
}

TEST(Pipeline, Deterministic) {
  const PipelineConfig cfg = small_config(3);
  std::vector<Tensor> raw;
  for (int i = 0; i < 5; ++i) raw.push_back(texture(64, 64, 10 + i));
  const auto a = run_frames(raw, cfg, PipelineNets::random(cfg));
  const auto b = run_frames(raw, cfg, PipelineNets::random(cfg));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].detections, b[i].detections);
}

TEST(Pipeline, EveryFrameKeyMatchesPerFrameDetectorWithGru) {
  const PipelineConfig cfg = small_config(1);
  const PipelineNets nets = PipelineNets::random(cfg);
  std::vector<Tensor> raw;
  for (int i = 0; i < 4; ++i) raw.push_back(texture(64, 64, 20 + i));
  const auto results = run_frames(raw, cfg, nets);

  // straight composition of the components
  Tensor prev_half, prev_state;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const Frame fr = prepare_frame(raw[i], static_cast<int>(i), cfg.frames);
    const Tensor f = extract_features(fr.image, nets.detector, nets.detector_params);
    const Tensor half = resize_bilinear(fr.image, fr.image.h() / 2, fr.image.w() / 2);
    Aggregator::Result agg;
    if (i == 0) {
      agg = nets.aggregator.step(f, nullptr, nullptr);
    } else {
      const FlowField m = resample_flow(predict_flow(prev_half, half, nets.flow, nets.flow_params),
                                        f.h(), f.w());
      agg = nets.aggregator.step(f, &prev_state, &m);
    }
    const auto dets = detect(agg.features, fr.content_w, fr.content_h, nets.detector,
                             nets.detector_params);
    EXPECT_TRUE(results[i].is_key);
    EXPECT_EQ(results[i].detections, dets) << i;
    prev_half = half;
    prev_state = agg.state;
  }
}

TEST(Pipeline, ShapeDriftRejected) {
  const PipelineConfig cfg = small_config(2);
  const PipelineNets nets = PipelineNets::random(cfg);
  PipelineState state;
  process_frame(state, prepare_frame(texture(64, 64, 1), 0, cfg.frames), nets, cfg);
  EXPECT_THROW(process_frame(state, prepare_frame(texture(64, 96, 1), 1, cfg.frames), nets, cfg),
               ShapeError);
}

TEST(Pipeline, CheckpointRoundTrip) {
  const PipelineConfig cfg = small_config(2);
  const PipelineNets nets = PipelineNets::random(cfg);
  const PipelineNets back = PipelineNets::from_params(cfg, nets.to_params());
  const std::vector<Tensor> raw{texture(64, 64, 1), texture(64, 64, 2), texture(64, 64, 3)};
  const auto a = run_frames(raw, cfg, nets), b = run_frames(raw, cfg, back);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].detections, b[i].detections);
  ParamStore partial = nets.to_params().extract("flow/");
  EXPECT_THROW(PipelineNets::from_params(cfg, partial), std::exception);
}

TEST(Pipeline, RunVideoSummaryMatchesAnalyzer) {
  TempDir dir("video");
  for (int i = 0; i < 8; ++i) write_ppm(dir.path() / (std::to_string(i) + ".ppm"), texture(64, 80, i));
  const PipelineConfig cfg = small_config(4);
  FrameSequence seq(dir.path(), cfg.frames);
  std::ostringstream sink;
  const RunSummary s = run_video(cfg, seq, PipelineNets::random(cfg), sink);
  EXPECT_EQ(s.frames, 8);
  EXPECT_EQ(s.key_frames, 2);
  EXPECT_EQ(s.height, 64);
  EXPECT_EQ(s.width, 80);
  const SystemCost cost = amortized_cost(cfg.system_config(64, 80));
  EXPECT_NEAR(s.avg_flops / cost.per_frame_flops, 1.0, 1e-3);
  EXPECT_EQ(s.params, cost.params);

  std::istringstream lines(sink.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    int idx = -1, key = -1;
    fields >> idx >> key;
    EXPECT_EQ(idx, n);
    EXPECT_EQ(key, n % 4 == 0 ? 1 : 0);
    int count = 0;
    double v;
    while (fields >> v) ++count;
    EXPECT_EQ(count % 6, 0);
    ++n;
  }
  EXPECT_EQ(n, 8);

  std::ostringstream summary;
  write_summary(summary, s, cfg);
  EXPECT_NE(summary.str().find("key_frames = 2"), std::string::npos);
  EXPECT_EQ(summary_csv_header(), "alpha,beta,l,avg_flops,fps");
  EXPECT_EQ(summary_csv_row(s, cfg).rfind("0.25,0.25,4,", 0), 0u);
}

TEST(Pipeline, FormatRecord) {
  FrameResult r{3, false, {{2, 0.5f, {1, 2, 3.456, 4}}}};
  EXPECT_EQ(format_record(r), "3 0 2 0.5000 1.00 2.00 3.46 4.00");
  EXPECT_EQ(format_record({0, true, {}}), "0 1");
}

#include "mvod/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "mvod/ops.hpp"

namespace mvod {

void PipelineConfig::validate() const {
  if (key_interval < 1) throw std::invalid_argument("key frame duration l must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in (0, 1]");
  if (gru_layers < 1) throw std::invalid_argument("gru_layers must be >= 1");
  if (gru_width < 0) throw std::invalid_argument("gru_width must be >= 0");
  if (frames.pad_multiple % DetectorSpec::kStride != 0)
    throw std::invalid_argument("frame padding must be a multiple of 16");
}

DetectorConfig PipelineConfig::detector_config() const {
  DetectorConfig d = detector;
  d.alpha = alpha;
  return d;
}

AggregatorConfig PipelineConfig::aggregator_config(int feature_width) const {
  AggregatorConfig a;
  a.feature_width = feature_width;
  a.gru_width = gru_width > 0 ? gru_width : feature_width;
  a.layers = gru_layers;
  return a;
}

SystemConfig PipelineConfig::system_config(int height, int width) const {
  SystemConfig s;
  s.alpha = alpha;
  s.beta = beta;
  s.key_interval = key_interval;
  s.height = height;
  s.width = width;
  s.use_flow = true;
  s.use_gru = use_gru;
  s.scale_interface = detector.scale_interface;
  s.gru_width = gru_width;
  s.gru_layers = gru_layers;
  return s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  if constexpr (std::is_same_v<T, bool>) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
  } else if ((is >> out) && is.eof()) {
    return out;
  }
  throw std::invalid_argument("config: bad value '" + v + "' for " + key);
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text, PipelineConfig cfg) {
  std::istringstream in(text);
  std::string line, rest;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = line;
    if (auto hash = body.find('#'); hash != std::string::npos) body.resize(hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq)), v = trim(body.substr(eq + 1));
    if (key == "l" || key == "key_interval") cfg.key_interval = parse_value<int>(key, v);
    else if (key == "alpha") cfg.alpha = cfg.detector.alpha = parse_value<double>(key, v);
    else if (key == "beta") cfg.beta = parse_value<double>(key, v);
    else if (key == "shorter_side") cfg.frames.shorter_side = parse_value<int>(key, v);
    else if (key == "mean") cfg.frames.mean = parse_value<float>(key, v);
    else if (key == "std") cfg.frames.std = parse_value<float>(key, v);
    else if (key == "use_gru") cfg.use_gru = parse_value<bool>(key, v);
    else if (key == "gru_width") cfg.gru_width = parse_value<int>(key, v);
    else if (key == "gru_layers") cfg.gru_layers = parse_value<int>(key, v);
    else if (key == "seed") cfg.seed = parse_value<std::uint64_t>(key, v);
    else rest += body + "\n";
  }
  cfg.detector = parse_detector_config(rest, cfg.detector);
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str(), base);
}

PipelineNets PipelineNets::random(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineNets n;
  n.flow = build_light_flow(cfg.beta);
  n.flow_params = init_light_flow(n.flow, cfg.seed);
  n.detector = build_detector(cfg.detector_config());
  n.detector_params = init_detector(n.detector, cfg.seed + 1);
  const auto acfg = cfg.aggregator_config(n.detector.feature_channels);
  n.aggregator = Aggregator::from_params(acfg, init_aggregator(acfg, cfg.seed + 2));
  return n;
}

PipelineNets PipelineNets::from_params(const PipelineConfig& cfg, const ParamStore& store) {
  cfg.validate();
  PipelineNets n;
  n.flow = build_light_flow(cfg.beta);
  n.flow_params = store.extract("flow/");
  validate_params(n.flow.graph, n.flow.input_channels(), n.flow_params);
  n.detector = build_detector(cfg.detector_config());
  n.detector_params = store.extract("detector/");
  validate_detector_params(n.detector, n.detector_params);
  n.aggregator = Aggregator::from_params(cfg.aggregator_config(n.detector.feature_channels),
                                         store.extract("gru/"));
  return n;
}

ParamStore PipelineNets::to_params() const {
  ParamStore out;
  out.merge(flow_params, "flow/");
  out.merge(detector_params, "detector/");
  ParamStore g;
  aggregator.to_params(g);
  out.merge(g, "gru/");
  return out;
}

bool is_key_frame(int index, int key_interval) {
  if (index < 0) throw std::invalid_argument("frame index must be >= 0");
  if (key_interval < 1) throw std::invalid_argument("key frame duration l must be >= 1");
  return index % key_interval == 0;
}

Tensor flow_input(const Tensor& frame) {
  if (frame.h() % 2 || frame.w() % 2)
    throw ShapeError("flow input: frame " + frame.shape().str() + " has odd dimensions");
  return resize_bilinear(frame, frame.h() / 2, frame.w() / 2);
}

FlowField feature_flow(const Tensor& key_flow_input, const Tensor& target_flow_input,
                       const PipelineNets& nets, int feat_h, int feat_w) {
  const FlowField f = predict_flow(key_flow_input, target_flow_input, nets.flow, nets.flow_params);
  return resample_flow(f, feat_h, feat_w);
}

FrameResult process_frame(PipelineState& state, const Tensor& frame, const PipelineNets& nets,
                          const PipelineConfig& cfg, double image_w, double image_h) {
  if (frame.n() != 1 || frame.c() != 3)
    throw ShapeError("pipeline: expected a (1, 3, h, w) frame, got " + frame.shape().str());
  if (state.initialized && !(frame.shape() == state.frame_shape))
    throw ShapeError(shape_mismatch("pipeline: frame shape drift", state.frame_shape, frame.shape()));
  if (image_w <= 0) image_w = frame.w();
  if (image_h <= 0) image_h = frame.h();

  FrameResult r;
  r.index = state.next_index;
  r.is_key = is_key_frame(r.index, cfg.key_interval);
  if (!r.is_key && !state.initialized)
    throw std::logic_error("pipeline: non-key frame before any key frame");

  const Tensor half = flow_input(frame);
  if (r.is_key) {
    const Tensor f = extract_features(frame, nets.detector, nets.detector_params);
    Aggregator::Result agg;
    if (state.initialized && cfg.use_gru) {
      const FlowField m = feature_flow(state.key_flow_input, half, nets, f.h(), f.w());
      agg = nets.aggregator.step(f, &state.key_state, &m);
    } else if (cfg.use_gru) {
      agg = nets.aggregator.step(f, nullptr, nullptr);
    } else {
      agg = {f, f};
    }
    HeadMaps maps = compute_head_maps(agg.features, nets.detector, nets.detector_params);
    r.detections = detect_from_maps(maps, image_w, image_h, nets.detector, nets.detector_params);
    state.key_flow_input = half;
    state.key_state = std::move(agg.state);
    state.key_features = std::move(agg.features);
    state.key_maps = std::move(maps);
    state.key_index = r.index;
    state.frame_shape = frame.shape();
    state.initialized = true;
  } else {
    const Tensor& cached = state.key_maps.rpn_conv;
    const FlowField m = feature_flow(state.key_flow_input, half, nets, cached.h(), cached.w());
    const HeadMaps warped{bilinear_warp(state.key_maps.rpn_conv, m),
                          bilinear_warp(state.key_maps.lh_maps, m)};
    r.detections = detect_from_maps(warped, image_w, image_h, nets.detector, nets.detector_params);
  }
  ++state.next_index;
  return r;
}

FrameResult process_frame(PipelineState& state, const Frame& frame, const PipelineNets& nets,
                          const PipelineConfig& cfg) {
  return process_frame(state, frame.image, nets, cfg, frame.content_w, frame.content_h);
}

std::string format_record(const FrameResult& r) {
  std::ostringstream os;
  os << r.index << ' ' << (r.is_key ? 1 : 0);
  char buf[128];
  for (const auto& d : r.detections) {
    std::snprintf(buf, sizeof buf, " %d %.4f %.2f %.2f %.2f %.2f", d.class_id, static_cast<double>(d.score),
                  d.box.x1, d.box.y1, d.box.x2, d.box.y2);
    os << buf;
  }
  return os.str();
}

void write_summary(std::ostream& os, const RunSummary& s, const PipelineConfig& cfg) {
  os << "frames = " << s.frames << "\n"
     << "key_frames = " << s.key_frames << "\n"
     << "l = " << cfg.key_interval << "\n"
     << "alpha = " << cfg.alpha << "\n"
     << "beta = " << cfg.beta << "\n"
     << "input = " << s.width << "x" << s.height << "\n"
     << "scale = " << std::setprecision(6) << s.scale << "\n"
     << "params = " << s.params << "\n"
     << "key_flops = " << std::fixed << std::setprecision(0) << s.key_flops << "\n"
     << "nonkey_flops = " << s.nonkey_flops << "\n"
     << "total_flops = " << s.total_flops << "\n"
     << "avg_flops = " << s.avg_flops << "\n"
     << std::setprecision(4) << "wall_seconds = " << s.wall_seconds << "\n"
     << "fps = " << s.fps() << "\n";
  os.unsetf(std::ios::fixed);
}

std::string summary_csv_header() { return "alpha,beta,l,avg_flops,fps"; }

std::string summary_csv_row(const RunSummary& s, const PipelineConfig& cfg) {
  std::ostringstream os;
  os << cfg.alpha << ',' << cfg.beta << ',' << cfg.key_interval << ',' << std::fixed
     << std::setprecision(0) << s.avg_flops << ',' << std::setprecision(4) << s.fps();
  return os.str();
}

RunSummary run_video(const PipelineConfig& cfg, FrameSequence& source, const PipelineNets& nets,
                     std::ostream& sink) {
  cfg.validate();
  RunSummary s;
  PipelineState state;
  const auto t0 = std::chrono::steady_clock::now();
  while (auto frame = source.next()) {
    if (s.frames == 0) {
      s.height = frame->image.h();
      s.width = frame->image.w();
      s.scale = frame->scale;
      const SystemCost cost = amortized_cost(cfg.system_config(s.height, s.width));
      s.key_flops = static_cast<double>(cost.key.flops);
      s.nonkey_flops = static_cast<double>(cost.nonkey.flops);
      s.params = cost.params;
    }
    const FrameResult r = process_frame(state, *frame, nets, cfg);
    sink << format_record(r) << '\n';
    ++s.frames;
    if (r.is_key) ++s.key_frames;
    s.total_flops += r.is_key ? s.key_flops : s.nonkey_flops;
  }
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s.avg_flops = s.frames ? s.total_flops / s.frames : 0.0;
  return s;
}

}  // namespace mvod

#include "mvod/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "mvod/autograd.hpp"
#include "mvod/executor.hpp"
#include "mvod/ops.hpp"

namespace mvod {

// ---- config -----------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return d;
}

int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw std::invalid_argument("config: '" + key + "' expects an integer");
  return static_cast<int>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

DetectorConfig parse_detector_config(const std::string& text, DetectorConfig cfg) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "alpha") cfg.alpha = to_double(key, v);
    else if (key == "scale_interface") cfg.scale_interface = to_bool(key, v);
    else if (key == "num_classes") cfg.num_classes = to_int(key, v);
    else if (key == "hidden_units") cfg.hidden_units = to_int(key, v);
    else if (key == "pre_nms_top_n") cfg.pre_nms_top_n = to_int(key, v);
    else if (key == "post_nms_top_n") cfg.post_nms_top_n = to_int(key, v);
    else if (key == "rpn_nms_iou") cfg.rpn_nms_iou = to_double(key, v);
    else if (key == "nms_iou") cfg.nms_iou = to_double(key, v);
    else if (key == "score_threshold") cfg.score_threshold = to_double(key, v);
    else if (key == "max_detections") cfg.max_detections = to_int(key, v);
    else if (key == "min_box_size") cfg.min_box_size = to_double(key, v);
    else if (key == "roi_samples") cfg.roi_samples = to_int(key, v);
    else throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  if (!(cfg.alpha > 0 && cfg.alpha <= 1)) throw std::invalid_argument("config: alpha must be in (0, 1]");
  if (cfg.num_classes < 1 || cfg.pre_nms_top_n < 1 || cfg.post_nms_top_n < 1 ||
      cfg.max_detections < 0 || cfg.roi_samples < 1 || cfg.hidden_units < 1)
    throw std::invalid_argument("config: counts must be positive");
  for (double t : {cfg.rpn_nms_iou, cfg.nms_iou, cfg.score_threshold})
    if (t < 0 || t > 1) throw std::invalid_argument("config: thresholds must be in [0, 1]");
  return cfg;
}

DetectorConfig load_detector_config(const std::filesystem::path& path, DetectorConfig base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_detector_config(ss.str(), base);
}

std::string format_detector_config(const DetectorConfig& c) {
  std::ostringstream os;
  os << "alpha = " << c.alpha << "\n"
     << "scale_interface = " << (c.scale_interface ? "true" : "false") << "\n"
     << "num_classes = " << c.num_classes << "\n"
     << "hidden_units = " << c.hidden_units << "\n"
     << "pre_nms_top_n = " << c.pre_nms_top_n << "\n"
     << "post_nms_top_n = " << c.post_nms_top_n << "\n"
     << "rpn_nms_iou = " << c.rpn_nms_iou << "\n"
     << "nms_iou = " << c.nms_iou << "\n"
     << "score_threshold = " << c.score_threshold << "\n"
     << "max_detections = " << c.max_detections << "\n"
     << "min_box_size = " << c.min_box_size << "\n"
     << "roi_samples = " << c.roi_samples << "\n";
  return os.str();
}

std::vector<std::string> load_class_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open class list " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

// ---- network description ----------------------------------------------

DetectorSpec build_detector(const DetectorConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0))
    throw std::invalid_argument("detector: alpha must be in (0, 1], got " + std::to_string(cfg.alpha));
  DetectorSpec spec;
  spec.config = cfg;
  auto c = [&](int ch) { return scaled_channels(ch, cfg.alpha); };
  spec.feature_channels = cfg.scale_interface ? c(cfg.interface_channels) : cfg.interface_channels;
  spec.rpn_channels = c(cfg.rpn_channels);
  spec.hidden_units = c(cfg.hidden_units);

  NetworkGraph& b = spec.backbone;
  b = NetworkGraph("backbone");
  b.add({.name = "image", .kind = LayerKind::Input, .out_channels = 3});
  b.add({.name = "conv1", .kind = LayerKind::Conv, .inputs = {"image"}, .out_channels = c(32),
         .kernel = 3, .stride = 2, .padding = 1, .batch_norm = true, .activation = Activation::Relu});
  const std::pair<int, int> blocks[] = {{64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1},
                                        {512, 2}, {512, 1}, {512, 1}, {512, 1}, {512, 1},
                                        {512, 1}, {1024, 2}, {1024, 1}};
  std::string prev = "conv1";
  for (int i = 0; i < 13; ++i) {
    const std::string name = "block" + std::to_string(i);
    b.add({.name = name + "_dw", .kind = LayerKind::Conv, .inputs = {prev}, .kernel = 3,
           .stride = blocks[i].second, .padding = 1, .depthwise = true, .batch_norm = true,
           .activation = Activation::Relu});
    b.add({.name = name, .kind = LayerKind::Conv, .inputs = {name + "_dw"},
           .out_channels = c(blocks[i].first), .batch_norm = true, .activation = Activation::Relu});
    prev = name;
  }
  // block10 is the last stride-16 map, block12 the stride-32 one
  b.add({.name = "fuse_s32", .kind = LayerKind::Conv, .inputs = {"block12"},
         .out_channels = spec.feature_channels, .kernel = 3, .padding = 1});
  b.add({.name = "fuse_s32_up", .kind = LayerKind::Upsample, .inputs = {"fuse_s32", "block10"}});
  b.add({.name = "fuse_s16", .kind = LayerKind::Conv, .inputs = {"block10"},
         .out_channels = spec.feature_channels});
  b.add({.name = "feature", .kind = LayerKind::Add, .inputs = {"fuse_s32_up", "fuse_s16"}});

  NetworkGraph& r = spec.rpn_trunk;
  r = NetworkGraph("rpn_trunk");
  r.add({.name = "feature", .kind = LayerKind::Input, .out_channels = spec.feature_channels});
  r.add({.name = "rpn_dw", .kind = LayerKind::Conv, .inputs = {"feature"}, .kernel = 3,
         .padding = 1, .depthwise = true, .activation = Activation::Relu});
  r.add({.name = "rpn_conv", .kind = LayerKind::Conv, .inputs = {"rpn_dw"},
         .out_channels = spec.rpn_channels, .activation = Activation::Relu});

  NetworkGraph& h = spec.rpn_head;
  h = NetworkGraph("rpn_head");
  h.add({.name = "rpn_conv", .kind = LayerKind::Input, .out_channels = spec.rpn_channels});
  h.add({.name = "rpn_cls", .kind = LayerKind::Conv, .inputs = {"rpn_conv"},
         .out_channels = DetectorSpec::kAnchorsPerPosition, .activation = Activation::Sigmoid});
  h.add({.name = "rpn_bbox", .kind = LayerKind::Conv, .inputs = {"rpn_conv"},
         .out_channels = 4 * DetectorSpec::kAnchorsPerPosition});

  NetworkGraph& l = spec.lighthead;
  l = NetworkGraph("lighthead");
  l.add({.name = "feature", .kind = LayerKind::Input, .out_channels = spec.feature_channels});
  l.add({.name = "lh_maps", .kind = LayerKind::Conv, .inputs = {"feature"},
         .out_channels = cfg.lighthead_channels});

  NetworkGraph& rc = spec.rcnn;
  rc = NetworkGraph("rcnn");
  rc.add({.name = "lh_maps", .kind = LayerKind::Input, .out_channels = cfg.lighthead_channels});
  rc.add({.name = "psroi", .kind = LayerKind::PsRoi, .inputs = {"lh_maps"}, .per_roi = true,
          .roi_bins = cfg.roi_bins});
  rc.add({.name = "fc_hidden", .kind = LayerKind::FullyConnected, .inputs = {"psroi"},
          .out_channels = spec.hidden_units, .activation = Activation::Relu, .per_roi = true});
  rc.add({.name = "cls_score", .kind = LayerKind::FullyConnected, .inputs = {"fc_hidden"},
          .out_channels = cfg.num_classes + 1, .per_roi = true});
  rc.add({.name = "cls_prob", .kind = LayerKind::Softmax, .inputs = {"cls_score"}, .per_roi = true});
  rc.add({.name = "bbox_pred", .kind = LayerKind::FullyConnected, .inputs = {"fc_hidden"},
          .out_channels = 4, .per_roi = true});
  return spec;
}

NetworkGraph DetectorSpec::combined() const {
  NetworkGraph g("detector");
  g.append(backbone);
  g.append(rpn_trunk);
  g.append(lighthead);
  g.append(rpn_head);
  g.append(rcnn);
  return g;
}

ParamStore init_detector(const DetectorSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_params(spec.combined(), {}, rng);
}

void validate_detector_params(const DetectorSpec& spec, const ParamStore& params) {
  validate_params(spec.combined(), {}, params);
}

// ---- feature extraction ----------------------------------------------------

BackboneOutput extract_features_detailed(const Tensor& image, const DetectorSpec& spec,
                                         const ParamStore& params) {
  if (image.c() != 3) throw ShapeError("extract_features: expected 3 channels, got " + image.shape().str());
  const int k = DetectorSpec::kStride;
  if (image.h() % k != 0 || image.w() % k != 0) {
    const int ph = (k - image.h() % k) % k, pw = (k - image.w() % k) % k;
    throw ShapeError("extract_features: image " + image.shape().str() +
                     " must have dims divisible by 16; pad by " + std::to_string(ph) + " rows and " +
                     std::to_string(pw) + " columns");
  }
  Tape<float> tape(false);
  auto run = run_graph(tape, spec.backbone, params, {{"image", tape.constant(image)}});
  return {tape.value(run.outputs.at("fuse_s32_up")), tape.value(run.outputs.at("fuse_s16")),
          tape.value(run.outputs.at("feature"))};
}

Tensor extract_features(const Tensor& image, const DetectorSpec& spec, const ParamStore& params) {
  return extract_features_detailed(image, spec, params).features;
}

// ---- anchors and boxes -----------------------------------------------------

std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride) {
  if (feat_h < 1 || feat_w < 1 || stride < 1) throw std::invalid_argument("generate_anchors: bad dims");
  static constexpr double kRatios[] = {0.5, 1.0, 2.0};  // w : h
  static constexpr double kScales[] = {32.0, 64.0, 128.0, 256.0};
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * 12);
  for (int y = 0; y < feat_h; ++y)
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
      for (double ratio : kRatios)
        for (double scale : kScales) {
          const double w = std::sqrt(scale * scale * ratio);
          const double h = w / ratio;
          anchors.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
    }
  return anchors;
}

namespace {
// exp() argument cap for width/height deltas
const double kDeltaClip = std::log(1000.0 / 16.0);
}  // namespace

Box decode_box(const Box& a, const Delta& d) {
  const double w = a.width(), h = a.height();
  const double cx = a.x1 + 0.5 * w + d[0] * w;
  const double cy = a.y1 + 0.5 * h + d[1] * h;
  const double nw = w * std::exp(std::min(d[2], kDeltaClip));
  const double nh = h * std::exp(std::min(d[3], kDeltaClip));
  return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

Delta encode_box(const Box& b, const Box& a) {
  const double aw = a.width(), ah = a.height();
  const double bw = b.width(), bh = b.height();
  if (aw <= 0 || ah <= 0 || bw <= 0 || bh <= 0) throw std::invalid_argument("encode_box: empty box");
  return {((b.x1 + 0.5 * bw) - (a.x1 + 0.5 * aw)) / aw, ((b.y1 + 0.5 * bh) - (a.y1 + 0.5 * ah)) / ah,
          std::log(bw / aw), std::log(bh / ah)};
}

std::vector<Box> decode_boxes(const std::vector<Box>& anchors, const std::vector<Delta>& deltas) {
  if (anchors.size() != deltas.size())
    throw std::invalid_argument("decode_boxes: " + std::to_string(anchors.size()) + " anchors vs " +
                                std::to_string(deltas.size()) + " deltas");
  std::vector<Box> out(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) out[i] = decode_box(anchors[i], deltas[i]);
  return out;
}

Box clip_box(const Box& b, double image_w, double image_h) {
  return {std::clamp(b.x1, 0.0, image_w), std::clamp(b.y1, 0.0, image_h),
          std::clamp(b.x2, 0.0, image_w), std::clamp(b.y2, 0.0, image_h)};
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores,
                     double iou_thresh) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: boxes and scores differ in length");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<char> dropped(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int cur = order[i];
    if (dropped[cur]) continue;
    keep.push_back(cur);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int other = order[j];
      if (!dropped[other] && iou(boxes[cur], boxes[other]) > iou_thresh) dropped[other] = 1;
    }
  }
  return keep;
}

// ---- heads ---------------------------------------------------------------

HeadMaps compute_head_maps(const Tensor& features, const DetectorSpec& spec, const ParamStore& params) {
  Tape<float> tape(false);
  auto f = tape.constant(features);
  auto rpn = run_graph(tape, spec.rpn_trunk, params, {{"feature", f}});
  auto lh = run_graph(tape, spec.lighthead, params, {{"feature", f}});
  return {tape.value(rpn.outputs.at("rpn_conv")), tape.value(lh.outputs.at("lh_maps"))};
}

RpnOutput rpn_predict(const Tensor& rpn_conv, const DetectorSpec& spec, const ParamStore& params) {
  Tape<float> tape(false);
  auto run = run_graph(tape, spec.rpn_head, params, {{"rpn_conv", tape.constant(rpn_conv)}});
  return {tape.value(run.outputs.at("rpn_cls")), tape.value(run.outputs.at("rpn_bbox"))};
}

RpnOutput rpn_forward(const Tensor& features, const DetectorSpec& spec, const ParamStore& params) {
  return rpn_predict(compute_head_maps(features, spec, params).rpn_conv, spec, params);
}

std::vector<float> flatten_scores(const Tensor& scores) {
  const int a = DetectorSpec::kAnchorsPerPosition;
  if (scores.n() != 1 || scores.c() != a) throw ShapeError("flatten_scores: expected (1, 12, h, w), got " + scores.shape().str());
  std::vector<float> out;
  out.reserve(scores.size());
  for (int y = 0; y < scores.h(); ++y)
    for (int x = 0; x < scores.w(); ++x)
      for (int k = 0; k < a; ++k) out.push_back(scores(0, k, y, x));
  return out;
}

std::vector<Delta> flatten_deltas(const Tensor& deltas) {
  const int a = DetectorSpec::kAnchorsPerPosition;
  if (deltas.n() != 1 || deltas.c() != 4 * a) throw ShapeError("flatten_deltas: expected (1, 48, h, w), got " + deltas.shape().str());
  std::vector<Delta> out;
  out.reserve(deltas.size() / 4);
  for (int y = 0; y < deltas.h(); ++y)
    for (int x = 0; x < deltas.w(); ++x)
      for (int k = 0; k < a; ++k)
        out.push_back({deltas(0, 4 * k, y, x), deltas(0, 4 * k + 1, y, x), deltas(0, 4 * k + 2, y, x),
                       deltas(0, 4 * k + 3, y, x)});
  return out;
}

template <typename T>
BasicTensor<T> psroi_warp(const BasicTensor<T>& maps, const std::vector<Box>& rois, double image_w,
                          double image_h, int bins, int samples, int stride) {
  if (bins < 1 || samples < 1) throw std::invalid_argument("psroi_warp: bins and samples must be positive");
  const int groups_total = bins * bins;
  if (maps.n() != 1 || maps.c() % groups_total != 0)
    throw ShapeError("psroi_warp: score maps " + maps.shape().str() + " not divisible into " +
                     std::to_string(groups_total) + " channel groups");
  const int dim = maps.c() / groups_total;
  const int H = maps.h(), W = maps.w();
  if (rois.empty()) return BasicTensor<T>{};
  BasicTensor<T> out(Shape{static_cast<int>(rois.size()), dim, bins, bins});

  auto sample = [&](int ch, double y, double x) {
    y = std::clamp(y, 0.0, H - 1.0);
    x = std::clamp(x, 0.0, W - 1.0);
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double ay = y - y0, ax = x - x0;
    return (1 - ay) * ((1 - ax) * maps(0, ch, y0, x0) + ax * maps(0, ch, y0, x1)) +
           ay * ((1 - ax) * maps(0, ch, y1, x0) + ax * maps(0, ch, y1, x1));
  };

  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Box b = clip_box(rois[r], image_w, image_h);
    if (b.area() <= 0)
      throw std::invalid_argument("psroi_warp: region " + std::to_string(r) + " has zero area after clipping");
    // image pixels -> feature grid, pixel-center convention
    const double fx1 = b.x1 / stride - 0.5, fy1 = b.y1 / stride - 0.5;
    const double bw = (b.x2 - b.x1) / stride / bins, bh = (b.y2 - b.y1) / stride / bins;
    for (int i = 0; i < bins; ++i)
      for (int j = 0; j < bins; ++j) {
        const int base = (i * bins + j) * dim;
        for (int k = 0; k < dim; ++k) {
          double acc = 0.0;
          for (int sy = 0; sy < samples; ++sy)
            for (int sx = 0; sx < samples; ++sx)
              acc += sample(base + k, fy1 + (i + (sy + 0.5) / samples) * bh,
                            fx1 + (j + (sx + 0.5) / samples) * bw);
          out(static_cast<int>(r), k, i, j) = static_cast<T>(acc / (samples * samples));
        }
      }
  }
  return out;
}

template Tensor psroi_warp(const Tensor&, const std::vector<Box>&, double, double, int, int, int);
template TensorD psroi_warp(const TensorD&, const std::vector<Box>&, double, double, int, int, int);

namespace {

// y = W x + b for every row of `x` (R, in); W stored (out, in, 1, 1).
std::vector<double> fully_connected(const std::vector<double>& x, int rows, const Tensor& w,
                                    const Tensor* b) {
  const int out = w.n(), in = w.c();
  if (static_cast<int>(x.size()) != rows * in)
    throw ShapeError("fully_connected: input width does not match weights " + w.shape().str());
  std::vector<double> y(static_cast<std::size_t>(rows) * out);
  for (int r = 0; r < rows; ++r)
    for (int o = 0; o < out; ++o) {
      double acc = b ? (*b)[o] : 0.0;
      const float* wr = w.data() + static_cast<std::size_t>(o) * in;
      const double* xr = x.data() + static_cast<std::size_t>(r) * in;
      for (int i = 0; i < in; ++i) acc += wr[i] * xr[i];
      y[static_cast<std::size_t>(r) * out + o] = acc;
    }
  return y;
}

}  // namespace

RcnnOutput rcnn_head(const Tensor& roi_feats, const DetectorSpec& spec, const ParamStore& params) {
  const int rows = roi_feats.n();
  const int classes = spec.config.num_classes + 1;
  if (rows == 0 || roi_feats.size() == 0) return {Tensor{}, Tensor{}};
  RcnnOutput out{Tensor(Shape{rows, classes, 1, 1}), Tensor(Shape{rows, 4, 1, 1})};
  std::vector<double> x(roi_feats.data(), roi_feats.data() + roi_feats.size());
  auto hidden = fully_connected(x, rows, params.at("fc_hidden/weight"), params.find("fc_hidden/bias"));
  for (auto& v : hidden) v = std::max(v, 0.0);
  const auto logits = fully_connected(hidden, rows, params.at("cls_score/weight"), params.find("cls_score/bias"));
  const auto deltas = fully_connected(hidden, rows, params.at("bbox_pred/weight"), params.find("bbox_pred/bias"));
  for (int r = 0; r < rows; ++r) {
    const double* l = logits.data() + static_cast<std::size_t>(r) * classes;
    const double m = *std::max_element(l, l + classes);
    double z = 0.0;
    for (int c = 0; c < classes; ++c) z += std::exp(l[c] - m);
    for (int c = 0; c < classes; ++c) out.probs(r, c, 0, 0) = static_cast<float>(std::exp(l[c] - m) / z);
    for (int k = 0; k < 4; ++k) out.deltas(r, k, 0, 0) = static_cast<float>(deltas[static_cast<std::size_t>(r) * 4 + k]);
  }
  return out;
}

Proposals propose(const RpnOutput& rpn, double image_w, double image_h, const DetectorSpec& spec) {
  const auto& cfg = spec.config;
  const auto anchors = generate_anchors(rpn.scores.h(), rpn.scores.w(), DetectorSpec::kStride);
  const auto scores = flatten_scores(rpn.scores);
  const auto boxes = decode_boxes(anchors, flatten_deltas(rpn.deltas));

  std::vector<int> valid;
  std::vector<Box> clipped(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    clipped[i] = clip_box(boxes[i], image_w, image_h);
    if (clipped[i].width() >= cfg.min_box_size && clipped[i].height() >= cfg.min_box_size)
      valid.push_back(static_cast<int>(i));
  }
  std::stable_sort(valid.begin(), valid.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  if (static_cast<int>(valid.size()) > cfg.pre_nms_top_n) valid.resize(cfg.pre_nms_top_n);

  std::vector<Box> cand;
  std::vector<float> cand_scores;
  for (int i : valid) {
    cand.push_back(clipped[i]);
    cand_scores.push_back(scores[i]);
  }
  auto keep = nms(cand, cand_scores, cfg.rpn_nms_iou);
  if (static_cast<int>(keep.size()) > cfg.post_nms_top_n) keep.resize(cfg.post_nms_top_n);
  Proposals p;
  for (int k : keep) {
    p.boxes.push_back(cand[k]);
    p.scores.push_back(cand_scores[k]);
  }
  return p;
}

std::vector<Detection> detect_from_maps(const HeadMaps& maps, double image_w, double image_h,
                                        const DetectorSpec& spec, const ParamStore& params) {
  const auto& cfg = spec.config;
  if (!maps.rpn_conv.shape().same_spatial(maps.lh_maps.shape()))
    throw ShapeError(shape_mismatch("detect: cached maps disagree", maps.rpn_conv.shape(), maps.lh_maps.shape()));
  const Proposals props = propose(rpn_predict(maps.rpn_conv, spec, params), image_w, image_h, spec);
  if (props.boxes.empty()) return {};

  const Tensor feats = psroi_warp(maps.lh_maps, props.boxes, image_w, image_h, cfg.roi_bins,
                                  cfg.roi_samples, DetectorSpec::kStride);
  const RcnnOutput head = rcnn_head(feats, spec, params);

  const int rois = static_cast<int>(props.boxes.size());
  std::vector<Box> refined(rois);
  std::vector<char> usable(rois, 0);
  for (int r = 0; r < rois; ++r) {
    const Delta d{head.deltas(r, 0, 0, 0), head.deltas(r, 1, 0, 0), head.deltas(r, 2, 0, 0),
                  head.deltas(r, 3, 0, 0)};
    refined[r] = clip_box(decode_box(props.boxes[r], d), image_w, image_h);
    usable[r] = refined[r].width() >= cfg.min_box_size && refined[r].height() >= cfg.min_box_size;
  }

  std::vector<Detection> dets;
  for (int c = 1; c <= cfg.num_classes; ++c) {
    std::vector<Box> boxes;
    std::vector<float> scores;
    for (int r = 0; r < rois; ++r) {
      const float s = head.probs(r, c, 0, 0);
      if (usable[r] && s > cfg.score_threshold) {
        boxes.push_back(refined[r]);
        scores.push_back(s);
      }
    }
    for (int k : nms(boxes, scores, cfg.nms_iou)) dets.push_back({c - 1, scores[k], boxes[k]});
  }
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.box.x1, a.box.y1, a.box.x2, a.box.y2, a.class_id) <
           std::tie(b.box.x1, b.box.y1, b.box.x2, b.box.y2, b.class_id);
  });
  const int cap = std::min(cfg.max_detections, cfg.post_nms_top_n);
  if (static_cast<int>(dets.size()) > cap) dets.resize(cap);
  return dets;
}

std::vector<Detection> detect(const Tensor& features, double image_w, double image_h,
                              const DetectorSpec& spec, const ParamStore& params) {
  if (features.n() != 1) throw ShapeError("detect: expects a single image, got " + features.shape().str());
  return detect_from_maps(compute_head_maps(features, spec, params), image_w, image_h, spec, params);
}

}  // namespace mvod

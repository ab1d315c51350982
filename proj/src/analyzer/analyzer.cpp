#include "mvod/analyzer.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mvod/aggregation.hpp"
#include "mvod/detector.hpp"
#include "mvod/light_flow.hpp"

namespace mvod {

namespace {

constexpr std::uint64_t kBilinearOps = 14;  // 4 loads, 4 weights, 3 madds per output value
constexpr std::uint64_t kRoiSamples = 4;    // 2 x 2 per bin

bool has_filter(LayerKind k) {
  return k == LayerKind::Conv || k == LayerKind::Deconv || k == LayerKind::FullyConnected;
}

LayerCost cost_with_shapes(const LayerSpec& l, const std::vector<Shape>& ins, const Shape& out,
                           const CountOptions& opts) {
  LayerCost c{.name = l.name, .kind = l.kind, .output = out};
  const auto elems = static_cast<std::uint64_t>(out.numel());
  const auto rois = static_cast<std::uint64_t>(std::max(0, opts.rois_per_frame));
  const std::uint64_t reps = l.per_roi ? rois : 1;
  const auto oc = static_cast<std::uint64_t>(out.c);
  const Shape in = ins.empty() ? Shape{} : ins.front();

  switch (l.kind) {
    case LayerKind::Input:
    case LayerKind::Concat:
      break;
    case LayerKind::Conv: {
      const int groups = l.depthwise ? in.c : l.groups;
      const auto k2 = static_cast<std::uint64_t>(l.kernel) * l.kernel;
      const std::uint64_t w = oc * static_cast<std::uint64_t>(in.c / groups) * k2;
      c.params = w;
      c.flops = 2 * static_cast<std::uint64_t>(out.n) * out.plane() * w;
      break;
    }
    case LayerKind::Deconv: {
      // counted as a k x k convolution over the (upsampled) output grid
      const auto k2 = static_cast<std::uint64_t>(l.kernel) * l.kernel;
      const std::uint64_t w = static_cast<std::uint64_t>(in.c) * oc * k2;
      c.params = w;
      c.flops = 2 * static_cast<std::uint64_t>(out.n) * out.plane() * w;
      break;
    }
    case LayerKind::FullyConnected: {
      const std::uint64_t w = oc * static_cast<std::uint64_t>(in.c) * in.h * in.w;
      c.params = w;
      c.flops = 2 * w * (l.per_roi ? rois : static_cast<std::uint64_t>(in.n));
      break;
    }
    case LayerKind::BatchNorm:
      c.params = 4 * oc;
      if (opts.include_elementwise) c.flops = 2 * elems;
      break;
    case LayerKind::Warp:
      c.flops = static_cast<std::uint64_t>(l.ops_per_element) * elems;
      break;
    case LayerKind::PsRoi:
      c.flops = reps * elems * kRoiSamples * kBilinearOps;
      break;
    case LayerKind::Elementwise:
      if (opts.include_elementwise) c.flops = static_cast<std::uint64_t>(l.ops_per_element) * elems;
      break;
    case LayerKind::Activation:
    case LayerKind::Upsample:
    case LayerKind::Pool:
    case LayerKind::Softmax:
    case LayerKind::Add:
    case LayerKind::FlowFusion:
      if (opts.include_elementwise) c.flops = reps * elems;
      break;
  }
  if (has_filter(l.kind)) {
    if (l.bias) c.params += oc;
    if (l.batch_norm) {
      c.params += 4 * oc;
      if (opts.include_elementwise) c.flops += 2 * elems;
    }
    if (l.activation != Activation::None && opts.include_elementwise) c.flops += elems;
  }
  return c;
}

}  // namespace

void CostReport::add(LayerCost cost) {
  params += cost.params;
  flops += cost.flops;
  layers.push_back(std::move(cost));
}

void CostReport::append(const CostReport& other, const std::string& prefix) {
  for (auto l : other.layers) {
    l.name = prefix + l.name;
    add(std::move(l));
  }
}

std::uint64_t CostReport::conv_macs() const {
  std::uint64_t m = 0;
  for (const auto& l : layers)
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Deconv) m += l.flops / 2;
  return m;
}

LayerCost count_layer(const LayerSpec& layer, const std::vector<Shape>& input_shapes,
                      const CountOptions& opts) {
  if (layer.kind == LayerKind::Input) {
    const Shape s = input_shapes.empty() ? Shape{1, layer.out_channels, 1, 1} : input_shapes.front();
    return {.name = layer.name, .kind = layer.kind, .output = s};
  }
  if (input_shapes.size() != layer.inputs.size())
    throw std::invalid_argument("count_layer: layer '" + layer.name + "' takes " +
                                std::to_string(layer.inputs.size()) + " inputs, got " +
                                std::to_string(input_shapes.size()));
  NetworkGraph g("layer");
  std::map<std::string, Shape> in;
  for (std::size_t i = 0; i < layer.inputs.size(); ++i) {
    if (g.contains(layer.inputs[i])) continue;
    g.add({.name = layer.inputs[i], .kind = LayerKind::Input, .out_channels = input_shapes[i].c});
    in[layer.inputs[i]] = input_shapes[i];
  }
  g.add(layer);
  const auto shapes = infer_shapes(g, in);
  return cost_with_shapes(layer, input_shapes, shapes.at(layer.name), opts);
}

CostReport count_network(const NetworkGraph& graph, const std::map<std::string, Shape>& inputs,
                         const CountOptions& opts) {
  const auto shapes = infer_shapes(graph, inputs);
  CostReport r;
  r.network = graph.name();
  for (const auto& l : graph.layers()) {
    std::vector<Shape> ins;
    for (const auto& i : l.inputs) ins.push_back(shapes.at(i));
    r.add(cost_with_shapes(l, ins, shapes.at(l.name), opts));
  }
  return r;
}

double speedup_ratio(const CostReport& a, const CostReport& b) {
  if (b.flops == 0) throw std::domain_error("speedup_ratio: '" + b.network + "' has zero FLOPs");
  return static_cast<double>(a.flops) / static_cast<double>(b.flops);
}

// ---- transcription -------------------------------------------------------------

namespace {

bool parse_bool(const std::string& v, int line) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("line " + std::to_string(line) + ": bad boolean '" + v + "'");
}

int parse_int(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("line " + std::to_string(line) + ": bad integer '" + v + "'");
}

Activation parse_activation(const std::string& v, int line) {
  if (v == "none") return Activation::None;
  if (v == "relu") return Activation::Relu;
  if (v == "leaky") return Activation::LeakyRelu;
  if (v == "sigmoid") return Activation::Sigmoid;
  if (v == "tanh") return Activation::Tanh;
  throw std::invalid_argument("line " + std::to_string(line) + ": unknown activation '" + v + "'");
}

}  // namespace

NetworkGraph parse_graph_transcription(const std::string& text, double channel_mult,
                                       const std::string& name) {
  NetworkGraph g(name);
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    std::istringstream ls(raw);
    std::string kind, lname, inputs;
    if (!(ls >> kind)) continue;
    if (!(ls >> lname >> inputs))
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected '<kind> <name> <inputs>'");
    LayerSpec l;
    l.name = lname;
    try {
      l.kind = layer_kind_from_string(kind);
    } catch (const std::exception&) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": unknown layer kind '" + kind + "'");
    }
    if (inputs != "-") {
      std::stringstream ss(inputs);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) l.inputs.push_back(item);
    }
    bool fixed = false;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      const std::string key = tok.substr(0, eq);
      const std::string val = eq == std::string::npos ? "1" : tok.substr(eq + 1);
      if (key == "out") l.out_channels = parse_int(val, lineno);
      else if (key == "k") l.kernel = parse_int(val, lineno);
      else if (key == "s") l.stride = parse_int(val, lineno);
      else if (key == "p") l.padding = parse_int(val, lineno);
      else if (key == "groups") l.groups = parse_int(val, lineno);
      else if (key == "dw") l.depthwise = parse_bool(val, lineno);
      else if (key == "bias") l.bias = parse_bool(val, lineno);
      else if (key == "bn") l.batch_norm = parse_bool(val, lineno);
      else if (key == "act") l.activation = parse_activation(val, lineno);
      else if (key == "factor") l.factor = parse_int(val, lineno);
      else if (key == "ops") l.ops_per_element = parse_int(val, lineno);
      else if (key == "per_roi") l.per_roi = parse_bool(val, lineno);
      else if (key == "bins") l.roi_bins = parse_int(val, lineno);
      else if (key == "fixed") fixed = parse_bool(val, lineno);
      else
        throw std::invalid_argument("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!fixed && l.out_channels > 0 && l.kind != LayerKind::Input)
      l.out_channels = scaled_channels(l.out_channels, channel_mult);
    g.add(std::move(l));
  }
  return g;
}

const std::string& flownet_s_transcription() {
  static const std::string text = R"(# FlowNetS, two RGB frames stacked
input images - out=6 fixed
conv conv1 images out=64 k=7 s=2 p=3 act=leaky
conv conv2 conv1 out=128 k=5 s=2 p=2 act=leaky
conv conv3 conv2 out=256 k=5 s=2 p=2 act=leaky
conv conv3_1 conv3 out=256 k=3 p=1 act=leaky
conv conv4 conv3_1 out=512 k=3 s=2 p=1 act=leaky
conv conv4_1 conv4 out=512 k=3 p=1 act=leaky
conv conv5 conv4_1 out=512 k=3 s=2 p=1 act=leaky
conv conv5_1 conv5 out=512 k=3 p=1 act=leaky
conv conv6 conv5_1 out=1024 k=3 s=2 p=1 act=leaky
conv conv6_1 conv6 out=1024 k=3 p=1 act=leaky
conv predict_flow6 conv6_1 out=2 k=3 p=1 fixed
deconv deconv5 conv6_1 out=512 k=4 s=2 p=1 act=leaky
deconv upflow6 predict_flow6 out=2 k=4 s=2 p=1 fixed
concat concat5 conv5_1,deconv5,upflow6
conv predict_flow5 concat5 out=2 k=3 p=1 fixed
deconv deconv4 concat5 out=256 k=4 s=2 p=1 act=leaky
deconv upflow5 predict_flow5 out=2 k=4 s=2 p=1 fixed
concat concat4 conv4_1,deconv4,upflow5
conv predict_flow4 concat4 out=2 k=3 p=1 fixed
deconv deconv3 concat4 out=128 k=4 s=2 p=1 act=leaky
deconv upflow4 predict_flow4 out=2 k=4 s=2 p=1 fixed
concat concat3 conv3_1,deconv3,upflow4
conv predict_flow3 concat3 out=2 k=3 p=1 fixed
deconv deconv2 concat3 out=64 k=4 s=2 p=1 act=leaky
deconv upflow3 predict_flow3 out=2 k=4 s=2 p=1 fixed
concat concat2 conv2,deconv2,upflow3
conv predict_flow2 concat2 out=2 k=3 p=1 fixed
)";
  return text;
}

NetworkGraph build_flownet(double channel_mult) {
  return parse_graph_transcription(flownet_s_transcription(), channel_mult,
                                   channel_mult == 1.0 ? "flownet" : "flownet_x" + std::to_string(channel_mult));
}

// ---- system model --------------------------------------------------------------

SystemCost amortized_cost(const SystemConfig& cfg) {
  if (cfg.key_interval < 1) throw std::invalid_argument("key interval must be >= 1");
  if (cfg.height <= 0 || cfg.width <= 0 || cfg.height % 16 || cfg.width % 16)
    throw std::invalid_argument("system input " + std::to_string(cfg.height) + "x" +
                                std::to_string(cfg.width) + " must be a positive multiple of 16");
  if (cfg.gru_layers < 1) throw std::invalid_argument("gru_layers must be >= 1");
  const CountOptions& opts = cfg.counting;

  DetectorConfig dc;
  dc.alpha = cfg.alpha;
  dc.scale_interface = cfg.scale_interface;
  const DetectorSpec det = build_detector(dc);

  SystemCost out;
  const auto bb = count_network(det.backbone, {{"image", {1, 3, cfg.height, cfg.width}}}, opts);
  const Shape feat = bb.layers.back().output;
  out.feature_height = feat.h;
  out.feature_width = feat.w;
  const auto trunk = count_network(det.rpn_trunk, {{"feature", feat}}, opts);
  const auto lh = count_network(det.lighthead, {{"feature", feat}}, opts);
  const Shape rpn_shape = trunk.layers.back().output;
  const Shape lh_shape = lh.layers.back().output;
  const auto head = count_network(det.rpn_head, {{"rpn_conv", rpn_shape}}, opts);
  const auto rcnn = count_network(det.rcnn, {{"lh_maps", lh_shape}}, opts);

  const bool gru = cfg.use_flow && cfg.use_gru;
  CostReport flow, agg;
  if (cfg.use_flow) {
    const auto lf = build_light_flow(cfg.beta);
    out.flow_height = cfg.height / 2;
    out.flow_width = cfg.width / 2;
    flow = count_network(lf.graph, {{lf.input, {1, 6, out.flow_height, out.flow_width}}}, opts);
  }
  if (gru) {
    AggregatorConfig ac;
    ac.feature_width = feat.c;
    ac.gru_width = cfg.gru_width > 0 ? cfg.gru_width : feat.c;
    ac.layers = cfg.gru_layers;
    agg = count_network(build_gru_graph(ac),
                        {{"feat", feat},
                         {"prev", {1, ac.gru_width, feat.h, feat.w}},
                         {"gru_flow", {1, 2, feat.h, feat.w}}},
                        opts);
  }

  out.key.network = "key_frame";
  if (gru && cfg.flow_on_key) out.key.append(flow, "flow/");
  out.key.append(bb, "backbone/");
  if (gru) out.key.append(agg, "gru/");
  out.key.append(trunk, "rpn/");
  out.key.append(lh, "lighthead/");
  out.key.append(head, "rpn/");
  out.key.append(rcnn, "rcnn/");

  out.params = bb.params + trunk.params + lh.params + head.params + rcnn.params + agg.params;
  if (cfg.use_flow) {
    out.params += flow.params;
    out.nonkey.network = "non_key_frame";
    out.nonkey.append(flow, "flow/");
    for (const auto& [name, s] : {std::pair{"rpn_conv", rpn_shape}, std::pair{"lh_maps", lh_shape}}) {
      LayerSpec w{.name = std::string("warp_") + name, .kind = LayerKind::Warp,
                  .inputs = {name}, .ops_per_element = static_cast<int>(kBilinearOps)};
      out.nonkey.add(count_layer(w, {s}, opts));
    }
    out.nonkey.append(head, "rpn/");
    out.nonkey.append(rcnn, "rcnn/");
    const double l = cfg.key_interval;
    out.per_frame_flops = (static_cast<double>(out.key.flops) + (l - 1) * static_cast<double>(out.nonkey.flops)) / l;
  } else {
    out.per_frame_flops = static_cast<double>(out.key.flops);
  }

  std::ostringstream os;
  auto put = [&](const char* k, auto v) {
    os.str("");
    os << v;
    out.key.config[k] = os.str();
    out.nonkey.config[k] = os.str();
  };
  put("alpha", cfg.alpha);
  put("beta", cfg.beta);
  put("l", cfg.key_interval);
  put("input", std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  put("flow", cfg.use_flow ? "yes" : "no");
  put("gru", gru ? "yes" : "no");
  return out;
}

SystemCost single_frame_cost(double alpha, int height, int width, bool scale_interface,
                             const CountOptions& counting) {
  SystemConfig c;
  c.alpha = alpha;
  c.height = height;
  c.width = width;
  c.use_flow = false;
  c.use_gru = false;
  c.key_interval = 1;
  c.scale_interface = scale_interface;
  c.counting = counting;
  return amortized_cost(c);
}

// ---- emitters -------------------------------------------------------------------

std::string format_millions(std::uint64_t v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << static_cast<double>(v) / 1e6 << "M";
  return os.str();
}

std::string format_billions(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v / 1e9 << "B";
  return os.str();
}

void print_report_table(std::ostream& os, const CostReport& report) {
  os << "network: " << report.network << "\n";
  for (const auto& [k, v] : report.config) os << "  " << k << " = " << v << "\n";
  os << std::left << std::setw(36) << "layer" << std::setw(10) << "kind" << std::setw(22) << "output"
     << std::right << std::setw(14) << "params" << std::setw(18) << "flops" << "\n";
  for (const auto& l : report.layers)
    os << std::left << std::setw(36) << l.name << std::setw(10) << to_string(l.kind) << std::setw(22)
       << l.output.str() << std::right << std::setw(14) << l.params << std::setw(18) << l.flops << "\n";
  os << "total params " << report.params << " (" << format_millions(report.params) << "), flops "
     << report.flops << " (" << format_billions(static_cast<double>(report.flops)) << ")\n";
}

void print_report_csv(std::ostream& os, const CostReport& report) {
  os << "layer,kind,n,c,h,w,params,flops\n";
  for (const auto& l : report.layers)
    os << l.name << ',' << to_string(l.kind) << ',' << l.output.n << ',' << l.output.c << ','
       << l.output.h << ',' << l.output.w << ',' << l.params << ',' << l.flops << "\n";
  os << "total,,,,,," << report.params << ',' << report.flops << "\n";
}

}  // namespace mvod

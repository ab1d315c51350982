#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mvod/graph.hpp"
#include "mvod/tensor.hpp"

namespace mvod {

struct CountOptions {
  bool include_elementwise = false;  // BN, activations, upsampling, adds, gates
  int rois_per_frame = 0;            // per-region layers are charged this many times
};

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // a multiply-add counts as 2
  Shape output;
};

struct CostReport {
  std::string network;
  std::vector<LayerCost> layers;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::map<std::string, std::string> config;

  void add(LayerCost cost);
  /// Appends all layers of `other`, prefixing their names.
  void append(const CostReport& other, const std::string& prefix);
  /// Sum of conv / deconv multiply-adds (flops / 2 of those layers).
  std::uint64_t conv_macs() const;
};

/// Cost of one layer given the shapes of its inputs (in `layer.inputs` order).
/// Conv params = out * in / groups * k^2 (+ out bias, + 4 * out batch norm).
LayerCost count_layer(const LayerSpec& layer, const std::vector<Shape>& input_shapes,
                      const CountOptions& opts = {});

CostReport count_network(const NetworkGraph& graph, const std::map<std::string, Shape>& inputs,
                         const CountOptions& opts = {});

/// a.flops / b.flops; throws std::domain_error when b has zero FLOPs.
double speedup_ratio(const CostReport& a, const CostReport& b);

// ---- analyzer-only graphs ----------------------------------------------------

/// Line format: `<kind> <name> <inputs|-> [key=value ...]` with keys
/// out, k, s, p, groups, dw, bias, bn, act, factor, ops, fixed. Inputs are
/// comma separated. Output channels are multiplied by `channel_mult` unless
/// the line carries `fixed`. `#` starts a comment.
NetworkGraph parse_graph_transcription(const std::string& text, double channel_mult = 1.0,
                                       const std::string& name = "transcribed");

/// FlowNetS (encoder + refinement decoder) as published, input "images" with 6 channels.
const std::string& flownet_s_transcription();
NetworkGraph build_flownet(double channel_mult = 1.0);

// ---- whole-system model -----------------------------------------------------

struct SystemConfig {
  double alpha = 1.0;
  double beta = 1.0;
  int key_interval = 10;  // l
  int height = 224;       // detection input (multiple of 16)
  int width = 400;
  bool use_flow = true;   // false: every frame runs the full detector
  bool use_gru = true;
  bool scale_interface = true;
  int gru_width = 0;      // 0 = feature width
  int gru_layers = 1;
  bool flow_on_key = true;  // key frames also run flow between successive keys
  CountOptions counting;
};

struct SystemCost {
  CostReport key;     // per key frame
  CostReport nonkey;  // per propagated frame
  std::uint64_t params = 0;  // every distinct parameter of the system
  double per_frame_flops = 0.0;
  int flow_height = 0, flow_width = 0;
  int feature_height = 0, feature_width = 0;
};

/// per_frame = (key + (l - 1) * nonkey) / l. Without flow every frame is a
/// key frame and l only labels the configuration.
SystemCost amortized_cost(const SystemConfig& cfg);

/// Single-image detector (no flow, no aggregation).
SystemCost single_frame_cost(double alpha, int height = 224, int width = 400,
                             bool scale_interface = true, const CountOptions& counting = {});

// ---- emitters ----------------------------------------------------------------

void print_report_table(std::ostream& os, const CostReport& report);
void print_report_csv(std::ostream& os, const CostReport& report);
/// "12.3M"-style formatting: params in millions, FLOPs in billions.
std::string format_millions(std::uint64_t v, int digits = 3);
std::string format_billions(double v, int digits = 3);

}  // namespace mvod

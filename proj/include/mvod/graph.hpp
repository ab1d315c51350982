#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvod/tensor.hpp"

namespace mvod {

enum class LayerKind {
  Input,
  Conv,            // dense or grouped/depthwise 2-D convolution
  Deconv,          // transposed convolution, output = 2x input (analyzer only)
  FullyConnected,  // applied per region when `per_roi`
  BatchNorm,
  Activation,
  Upsample,        // nearest neighbour, optional crop to a reference input
  Concat,
  Add,
  Warp,            // bilinear warp by a flow field
  Pool,            // average pool, window = stride = factor
  Softmax,
  PsRoi,           // position-sensitive RoI warping
  Elementwise,     // generic per-element op (gates, products)
  FlowFusion,      // multi-resolution flow averaging
};

enum class Activation { None, Relu, LeakyRelu, Sigmoid, Tanh };

const char* to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

/// One node of a network description. Used both to execute a network and to
/// count its cost, so every executable layer carries full filter geometry.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::vector<std::string> inputs;
  int out_channels = 0;  // Conv/Deconv/FullyConnected; channel count for Input
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool depthwise = false;  // groups = out_channels = input channels
  bool bias = true;
  bool batch_norm = false;
  Activation activation = Activation::None;
  float leaky_slope = 0.1f;
  int factor = 2;          // Upsample / Pool
  bool per_roi = false;    // FullyConnected / PsRoi run once per region
  int roi_bins = 7;        // PsRoi
  bool scale_magnitudes = true;  // FlowFusion
  int ops_per_element = 1;       // Elementwise / Warp cost weight
};

class NetworkGraph {
 public:
  NetworkGraph() = default;
  explicit NetworkGraph(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  LayerSpec& add(LayerSpec layer);
  const std::vector<LayerSpec>& layers() const { return layers_; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const LayerSpec& at(const std::string& name) const;
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  /// Appends every layer of `other` (names must not collide).
  void append(const NetworkGraph& other);

 private:
  std::string name_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, std::size_t> index_;
};

/// Per-layer output shapes given the shapes of the Input layers (keyed by
/// input layer name). Per-region layers report the shape for one region.
/// Throws ShapeError naming the layer on any conflict.
std::map<std::string, Shape> infer_shapes(const NetworkGraph& graph,
                                          const std::map<std::string, Shape>& inputs);

/// Channel count under a width multiplier: exact at 1.0, otherwise
/// round(mult * c) to the nearest even integer with a floor of 8.
int scaled_channels(int channels, double mult);

/// Input channel count seen by a layer (first input's channels).
int layer_input_channels(const LayerSpec& layer, const std::map<std::string, Shape>& shapes);

}  // namespace mvod

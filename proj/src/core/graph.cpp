#include "mvod/graph.hpp"

#include "mvod/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace mvod {

namespace {

constexpr std::array<std::pair<LayerKind, const char*>, 15> kKindNames{{
    {LayerKind::Input, "input"},
    {LayerKind::Conv, "conv"},
    {LayerKind::Deconv, "deconv"},
    {LayerKind::FullyConnected, "fc"},
    {LayerKind::BatchNorm, "bn"},
    {LayerKind::Activation, "act"},
    {LayerKind::Upsample, "upsample"},
    {LayerKind::Concat, "concat"},
    {LayerKind::Add, "add"},
    {LayerKind::Warp, "warp"},
    {LayerKind::Pool, "pool"},
    {LayerKind::Softmax, "softmax"},
    {LayerKind::PsRoi, "psroi"},
    {LayerKind::Elementwise, "eltwise"},
    {LayerKind::FlowFusion, "flow_fusion"},
}};

ShapeError layer_error(const LayerSpec& l, const std::string& what) {
  return ShapeError("layer '" + l.name + "' (" + to_string(l.kind) + "): " + what);
}

}  // namespace

const char* to_string(LayerKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kKindNames)
    if (s == name) return kind;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

LayerSpec& NetworkGraph::add(LayerSpec layer) {
  if (layer.name.empty()) throw std::invalid_argument("layer without a name");
  if (contains(layer.name)) throw std::invalid_argument("duplicate layer name '" + layer.name + "'");
  for (const auto& in : layer.inputs)
    if (!contains(in))
      throw std::invalid_argument("layer '" + layer.name + "' refers to unknown input '" + in + "'");
  index_[layer.name] = layers_.size();
  layers_.push_back(std::move(layer));
  return layers_.back();
}

const LayerSpec& NetworkGraph::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no layer named '" + name + "'");
  return layers_[it->second];
}

void NetworkGraph::append(const NetworkGraph& other) {
  for (const auto& l : other.layers()) {
    if (l.kind == LayerKind::Input && contains(l.name)) continue;  // shared input
    add(l);
  }
}

int scaled_channels(int channels, double mult) {
  if (!(mult > 0.0 && mult <= 1.0)) throw std::invalid_argument("width multiplier must be in (0, 1]");
  if (mult == 1.0) return channels;
  const int even = 2 * static_cast<int>(std::lround(mult * channels / 2.0));
  return std::max(even, 8);
}

int layer_input_channels(const LayerSpec& layer, const std::map<std::string, Shape>& shapes) {
  if (layer.inputs.empty()) return layer.out_channels;
  return shapes.at(layer.inputs.front()).c;
}

std::map<std::string, Shape> infer_shapes(const NetworkGraph& graph,
                                          const std::map<std::string, Shape>& inputs) {
  std::map<std::string, Shape> shapes;
  for (const auto& l : graph.layers()) {
    std::vector<Shape> in;
    for (const auto& name : l.inputs) in.push_back(shapes.at(name));
    auto need_inputs = [&](std::size_t k) {
      if (in.size() < k)
        throw layer_error(l, "expects " + std::to_string(k) + " input(s), has " +
                                 std::to_string(in.size()));
    };
    Shape out;
    switch (l.kind) {
      case LayerKind::Input: {
        auto it = inputs.find(l.name);
        if (it == inputs.end()) throw layer_error(l, "no shape supplied for input");
        out = it->second;
        if (l.out_channels > 0 && out.c != l.out_channels)
          throw layer_error(l, "expects " + std::to_string(l.out_channels) + " channels, got " +
                                   out.str());
        break;
      }
      case LayerKind::Conv: {
        need_inputs(1);
        const Shape& x = in[0];
        const int oc = l.depthwise ? x.c : l.out_channels;
        const int groups = l.depthwise ? x.c : l.groups;
        if (oc <= 0) throw layer_error(l, "non-positive output channels");
        if (groups <= 0 || x.c % groups != 0 || oc % groups != 0)
          throw layer_error(l, "channels not divisible by groups");
        const int oh = conv_output_dim(x.h, l.kernel, l.stride, l.padding);
        const int ow = conv_output_dim(x.w, l.kernel, l.stride, l.padding);
        if (oh <= 0 || ow <= 0) throw layer_error(l, "input " + x.str() + " too small");
        out = {x.n, oc, oh, ow};
        break;
      }
      case LayerKind::Deconv:
        need_inputs(1);
        out = {in[0].n, l.out_channels, in[0].h * l.stride, in[0].w * l.stride};
        break;
      case LayerKind::FullyConnected: {
        need_inputs(1);
        out = {in[0].n, l.out_channels, 1, 1};
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::Activation:
      case LayerKind::Softmax:
        need_inputs(1);
        out = in[0];
        break;
      case LayerKind::Elementwise: {
        need_inputs(1);
        for (std::size_t i = 1; i < in.size(); ++i)
          if (!(in[i] == in[0])) throw layer_error(l, shape_mismatch("eltwise", in[0], in[i]));
        out = in[0];
        break;
      }
      case LayerKind::Upsample: {
        need_inputs(1);
        out = {in[0].n, in[0].c, in[0].h * l.factor, in[0].w * l.factor};
        if (in.size() > 1) {
          if (in[1].h > out.h || in[1].w > out.w)
            throw layer_error(l, "reference " + in[1].str() + " larger than upsampled " + out.str());
          out.h = in[1].h;
          out.w = in[1].w;
        }
        break;
      }
      case LayerKind::Pool: {
        need_inputs(1);
        out = {in[0].n, in[0].c, (in[0].h + l.factor - 1) / l.factor,
               (in[0].w + l.factor - 1) / l.factor};
        break;
      }
      case LayerKind::Concat: {
        need_inputs(1);
        out = in[0];
        for (std::size_t i = 1; i < in.size(); ++i) {
          if (in[i].n != out.n || in[i].h != out.h || in[i].w != out.w)
            throw layer_error(l, "cannot concat " + in[0].str() + " with " + in[i].str());
          out.c += in[i].c;
        }
        break;
      }
      case LayerKind::Add: {
        need_inputs(2);
        for (std::size_t i = 1; i < in.size(); ++i)
          if (!(in[i] == in[0]))
            throw layer_error(l, "cannot add " + in[0].str() + " and " + in[i].str());
        out = in[0];
        break;
      }
      case LayerKind::Warp: {
        need_inputs(1);
        if (in.size() > 1) {
          if (in[1].c != 2) throw layer_error(l, "flow must have 2 channels, got " + in[1].str());
          if (!in[0].same_spatial(in[1]))
            throw layer_error(l, "feature " + in[0].str() + " vs flow " + in[1].str());
        }
        out = in[0];
        break;
      }
      case LayerKind::PsRoi: {
        need_inputs(1);
        const int bins = l.roi_bins * l.roi_bins;
        if (in[0].c % bins != 0)
          throw layer_error(l, std::to_string(in[0].c) + " channels not divisible by " +
                                   std::to_string(bins) + " bins");
        out = {1, in[0].c / bins, l.roi_bins, l.roi_bins};
        break;
      }
      case LayerKind::FlowFusion: {
        need_inputs(1);
        out = in.back();
        for (const auto& s : in)
          if (s.c != 2) throw layer_error(l, "predictor " + s.str() + " is not a 2-channel field");
        break;
      }
    }
    shapes[l.name] = out;
  }
  return shapes;
}

}  // namespace mvod

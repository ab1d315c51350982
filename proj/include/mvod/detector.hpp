#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvod/graph.hpp"
#include "mvod/params.hpp"
#include "mvod/tensor.hpp"

namespace mvod {

struct DetectorConfig {
  double alpha = 1.0;
  bool scale_interface = true;  // scale the 128-d fusion maps by alpha
  int num_classes = 30;         // foreground classes; scores add a background slot
  int interface_channels = 128;
  int rpn_channels = 256;       // scaled by alpha
  int lighthead_channels = 490; // 10 x 7 x 7, never scaled
  int hidden_units = 2048;      // scaled by alpha
  int roi_bins = 7;
  int roi_samples = 2;          // per bin and axis
  int pre_nms_top_n = 1000;
  int post_nms_top_n = 300;
  double rpn_nms_iou = 0.7;
  double nms_iou = 0.3;
  double score_threshold = 0.05;
  int max_detections = 100;
  double min_box_size = 1.0;
};

/// Applies `key = value` lines (# comments allowed) on top of `base`.
/// Throws std::invalid_argument on unknown keys or malformed values.
DetectorConfig parse_detector_config(const std::string& text, DetectorConfig base = {});
DetectorConfig load_detector_config(const std::filesystem::path& path, DetectorConfig base = {});
std::string format_detector_config(const DetectorConfig& cfg);

/// One class name per non-empty line.
std::vector<std::string> load_class_names(const std::filesystem::path& path);

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);

struct Detection {
  int class_id = 0;  // 0 .. num_classes-1
  float score = 0.f;
  Box box;
  bool operator==(const Detection&) const = default;
};

struct DetectorSpec {
  DetectorConfig config;
  NetworkGraph backbone;   // "image" -> "feature" (stride 16)
  NetworkGraph rpn_trunk;  // "feature" -> "rpn_conv" (cached on key frames)
  NetworkGraph rpn_head;   // "rpn_conv" -> "rpn_cls", "rpn_bbox"
  NetworkGraph lighthead;  // "feature" -> "lh_maps" (cached on key frames)
  NetworkGraph rcnn;       // "lh_maps" -> per-region "psroi" -> "fc_hidden" -> "cls_score", "bbox_pred"
  int feature_channels = 0;
  int rpn_channels = 0;
  int hidden_units = 0;

  static constexpr int kAnchorsPerPosition = 12;
  static constexpr int kStride = 16;
  /// Every detector graph in execution order, sharing tensor names.
  NetworkGraph combined() const;
};

DetectorSpec build_detector(const DetectorConfig& cfg);
ParamStore init_detector(const DetectorSpec& spec, std::uint64_t seed);
void validate_detector_params(const DetectorSpec& spec, const ParamStore& params);

struct BackboneOutput {
  Tensor stride32_branch;  // upsampled, cropped 3x3 branch
  Tensor stride16_branch;  // 1x1 branch
  Tensor features;         // their sum
};

/// Image dims must be multiples of 16; the error message names the padding needed.
BackboneOutput extract_features_detailed(const Tensor& image, const DetectorSpec& spec,
                                         const ParamStore& params);
Tensor extract_features(const Tensor& image, const DetectorSpec& spec, const ParamStore& params);

// ---- anchors, boxes, nms ------------------------------------------------

/// Ordered by position (row-major), then ratio {1:2, 1:1, 2:1}, then scale
/// {32, 64, 128, 256}^2. Centers at (x + 0.5) * stride.
std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride = 16);

using Delta = std::array<double, 4>;  // dx, dy, dw, dh

Box decode_box(const Box& anchor, const Delta& d);
Delta encode_box(const Box& box, const Box& anchor);
std::vector<Box> decode_boxes(const std::vector<Box>& anchors, const std::vector<Delta>& deltas);
Box clip_box(const Box& b, double image_w, double image_h);

/// Greedy suppression in descending score order (ties: lower index first).
/// A box is dropped when its IoU with a kept box exceeds `iou_thresh`.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores,
                     double iou_thresh);

// ---- heads ----------------------------------------------------------------

struct HeadMaps {
  Tensor rpn_conv;  // (1, 256a, h, w)
  Tensor lh_maps;   // (1, 490, h, w)
};

struct RpnOutput {
  Tensor scores;  // (1, 12, h, w) objectness after sigmoid
  Tensor deltas;  // (1, 48, h, w)
};

HeadMaps compute_head_maps(const Tensor& features, const DetectorSpec& spec, const ParamStore& params);
RpnOutput rpn_predict(const Tensor& rpn_conv, const DetectorSpec& spec, const ParamStore& params);
RpnOutput rpn_forward(const Tensor& features, const DetectorSpec& spec, const ParamStore& params);

/// Flattens RPN outputs in anchor order.
std::vector<float> flatten_scores(const Tensor& scores);
std::vector<Delta> flatten_deltas(const Tensor& deltas);

/// Position-sensitive RoI warping. `score_maps` is (1, groups * bins^2, H, W);
/// bin (i, j) of a region reads channels [(i*bins + j) * groups, +groups).
/// Regions are in image pixels and are clipped to the image first; a region
/// with zero area after clipping throws std::invalid_argument.
/// Returns (R, groups, bins, bins), or an empty tensor when there are no regions.
template <typename T>
BasicTensor<T> psroi_warp(const BasicTensor<T>& score_maps, const std::vector<Box>& rois,
                          double image_w, double image_h, int bins = 7, int samples = 2,
                          int stride = 16);

extern template Tensor psroi_warp(const Tensor&, const std::vector<Box>&, double, double, int, int, int);
extern template TensorD psroi_warp(const TensorD&, const std::vector<Box>&, double, double, int, int, int);

struct RcnnOutput {
  Tensor probs;   // (R, num_classes + 1, 1, 1), softmax, background at 0
  Tensor deltas;  // (R, 4, 1, 1)
};

RcnnOutput rcnn_head(const Tensor& roi_feats, const DetectorSpec& spec, const ParamStore& params);

struct Proposals {
  std::vector<Box> boxes;
  std::vector<float> scores;
};

Proposals propose(const RpnOutput& rpn, double image_w, double image_h, const DetectorSpec& spec);

/// Everything after the cached maps: RPN prediction convs, proposals,
/// PSRoI warping, R-CNN and per-class NMS.
std::vector<Detection> detect_from_maps(const HeadMaps& maps, double image_w, double image_h,
                                        const DetectorSpec& spec, const ParamStore& params);
std::vector<Detection> detect(const Tensor& features, double image_w, double image_h,
                              const DetectorSpec& spec, const ParamStore& params);

}  // namespace mvod

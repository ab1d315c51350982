#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvod/aggregation.hpp"
#include "mvod/analyzer.hpp"
#include "mvod/detector.hpp"
#include "mvod/light_flow.hpp"
#include "mvod/params.hpp"
#include "mvod/tensor.hpp"

namespace mvod {

// ---- frame ingestion ---------------------------------------------------------

/// Decodes an 8-bit PNG (via libpng) or binary/ASCII PPM into (1, 3, h, w) in [0, 1].
Tensor read_image(const std::filesystem::path& path);
/// Writes (1, 3, h, w) in [0, 1] as binary PPM (P6).
void write_ppm(const std::filesystem::path& path, const Tensor& image);

struct FrameOptions {
  int shorter_side = 224;  // 0 keeps the source size
  float mean = 0.5f;       // standardization after scaling to [0, 1]
  float std = 0.25f;
  int pad_multiple = 16;
};

struct Frame {
  int index = 0;
  Tensor image;           // (1, 3, H, W), standardized, zero padded
  int source_h = 0, source_w = 0;
  int content_h = 0, content_w = 0;  // resized size before padding
  double scale = 1.0;     // content / source
};

/// Resize (aspect kept, shorter side), standardize, pad bottom/right with zeros.
Frame prepare_frame(const Tensor& raw, int index, const FrameOptions& opts);

/// Resized size for a source size: the shorter side becomes `shorter_side`,
/// the other side is rounded to nearest.
std::pair<int, int> resized_dims(int h, int w, int shorter_side);
int padded_dim(int v, int multiple);

/// Frames in index order from a directory of numbered .png / .ppm files or a
/// raw tensor stream file (TNSR records of (1, 3, h, w) in [0, 1]).
/// Files are read lazily; a frame whose source size differs from the first
/// one is rejected with FormatError.
class FrameSequence {
 public:
  FrameSequence(const std::filesystem::path& source, FrameOptions opts = {});
  ~FrameSequence();
  FrameSequence(FrameSequence&&) noexcept;
  FrameSequence& operator=(FrameSequence&&) noexcept;

  std::optional<Frame> next();
  /// Number of frames when known up front (directory sources), else -1.
  int size_hint() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

FrameSequence load_frame_sequence(const std::filesystem::path& source, FrameOptions opts = {});

// ---- networks ------------------------------------------------------------------

struct PipelineConfig {
  int key_interval = 10;  // l
  double alpha = 1.0;
  double beta = 1.0;
  FrameOptions frames;
  DetectorConfig detector;  // alpha is taken from `alpha`
  bool use_gru = true;
  int gru_width = 0;  // 0 = feature width
  int gru_layers = 1;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless l >= 1 and alpha, beta in (0, 1].
  void validate() const;
  DetectorConfig detector_config() const;
  AggregatorConfig aggregator_config(int feature_width) const;
  SystemConfig system_config(int height, int width) const;
};

/// key = value lines: l, alpha, beta, shorter_side, mean, std, use_gru,
/// gru_width, gru_layers, seed, plus any detector key. # starts a comment.
PipelineConfig parse_pipeline_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {});

struct PipelineNets {
  LightFlowSpec flow;
  ParamStore flow_params;
  DetectorSpec detector;
  ParamStore detector_params;
  Aggregator aggregator;

  /// Fresh weights from `cfg.seed`. The flow predictors start at zero, so
  /// the untrained flow network outputs zero flow everywhere.
  static PipelineNets random(const PipelineConfig& cfg);
  /// Parameters under the prefixes "flow/", "detector/", "gru/".
  static PipelineNets from_params(const PipelineConfig& cfg, const ParamStore& store);
  ParamStore to_params() const;
};

// ---- scheduler -----------------------------------------------------------------

bool is_key_frame(int index, int key_interval);

struct PipelineState {
  bool initialized = false;
  int next_index = 0;
  Shape frame_shape;
  Tensor key_flow_input;  // half-resolution key frame
  Tensor key_state;       // aggregated key feature at GRU width
  Tensor key_features;    // aggregated key feature at feature width
  HeadMaps key_maps;      // cached 256a-d RPN and 490-d Light-Head maps
  int key_index = -1;
};

struct FrameResult {
  int index = 0;
  bool is_key = false;
  std::vector<Detection> detections;
};

/// Half-resolution flow input for a prepared frame.
Tensor flow_input(const Tensor& frame);

/// Flow for warping key-frame maps to `target` on the feature grid.
FlowField feature_flow(const Tensor& key_flow_input, const Tensor& target_flow_input,
                       const PipelineNets& nets, int feat_h, int feat_w);

/// Processes the next frame of the stream (index = state.next_index).
/// Throws ShapeError when the frame shape differs from the stream's.
/// Boxes are clipped to `image_w` x `image_h` (the unpadded content), or to
/// the full tensor when those are 0.
FrameResult process_frame(PipelineState& state, const Tensor& frame, const PipelineNets& nets,
                          const PipelineConfig& cfg, double image_w = 0, double image_h = 0);
FrameResult process_frame(PipelineState& state, const Frame& frame, const PipelineNets& nets,
                          const PipelineConfig& cfg);

// ---- driver --------------------------------------------------------------------

struct RunSummary {
  int frames = 0;
  int key_frames = 0;
  int height = 0, width = 0;  // padded detection input
  double scale = 1.0;
  double key_flops = 0.0, nonkey_flops = 0.0;  // analyzer costs per frame type
  double total_flops = 0.0;
  double avg_flops = 0.0;
  std::uint64_t params = 0;
  double wall_seconds = 0.0;
  double fps() const { return wall_seconds > 0 ? frames / wall_seconds : 0.0; }
};

/// "frame_index is_key [class_id score x1 y1 x2 y2]..." on one line.
std::string format_record(const FrameResult& r);
void write_summary(std::ostream& os, const RunSummary& s, const PipelineConfig& cfg);
std::string summary_csv_header();
std::string summary_csv_row(const RunSummary& s, const PipelineConfig& cfg);

RunSummary run_video(const PipelineConfig& cfg, FrameSequence& source, const PipelineNets& nets,
                     std::ostream& sink);

}  // namespace mvod

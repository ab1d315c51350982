#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mvod/graph.hpp"
#include "mvod/params.hpp"
#include "mvod/tensor.hpp"

namespace mvod {

struct LightFlowSpec {
  double beta = 1.0;
  NetworkGraph graph;
  std::string input = "images";
  std::vector<std::string> predictors;  // Conv12 .. Conv16, coarsest first
  std::string fused = "fused";
  bool scale_magnitudes = true;

  std::map<std::string, int> input_channels() const { return {{input, 6}}; }
};

/// Builds the network with every non-predictor width scaled by `beta`.
LightFlowSpec build_light_flow(double beta, bool scale_magnitudes = true);

/// He-uniform weights, identity batch norm; predictor pointwise layers start
/// at zero so the untrained network outputs zero flow.
ParamStore init_light_flow(const LightFlowSpec& spec, std::uint64_t seed);

struct FlowPrediction {
  FlowField fused;
  std::vector<FlowField> taps;  // raw predictor outputs, coarsest first
};

/// Flow from `target` back into `reference`: fused(p) is the displacement
/// such that reference(p + fused(p)) matches target(p), in pixels of the
/// stride-4 output grid. Frames are (n, 3, h, w).
FlowPrediction predict_flow_detailed(const Tensor& reference, const Tensor& target,
                                     const LightFlowSpec& spec, const ParamStore& params);
FlowField predict_flow(const Tensor& reference, const Tensor& target, const LightFlowSpec& spec,
                       const ParamStore& params);

/// Averages dyadic predictions (coarsest first) on the finest grid.
FlowField fuse_multiresolution(const std::vector<FlowField>& preds, bool scale_magnitudes = true);

/// Bilinear resize (pixel-center alignment) with displacements rescaled into
/// target-grid pixels.
FlowField resample_flow(const FlowField& flow, int target_h, int target_w);

/// Average-pools a dense flow by `factor` and divides displacements by it.
FlowField downsample_flow(const FlowField& flow, int factor);

template <typename T>
struct EpeResult {
  double value = 0.0;
  BasicTensor<T> grad;  // d value / d pred
};

template <typename T>
EpeResult<T> epe_loss(const BasicFlowField<T>& pred, const BasicFlowField<T>& gt);

// ---- toy training --------------------------------------------------------

struct SyntheticPair {
  Tensor frame_a;  // (1, 3, h, w), values in [0, 1]
  Tensor frame_b;
  FlowField flow;  // (1, 2, h, w): frame_b(p) = frame_a(p + flow(p))
};

struct SyntheticConfig {
  int height = 64;
  int width = 64;
  int count = 256;
  double max_shift = 8.0;
  int patches = 0;  // extra patches with their own translation
  std::uint64_t seed = 0;
};

/// Textured frames (sum of smooth noise octaves) under a random global
/// translation, optionally with independently moving square patches.
std::vector<SyntheticPair> make_synthetic_pairs(const SyntheticConfig& cfg);

struct TrainConfig {
  int iterations = 500;
  int batch = 32;
  double learning_rate = 1e-3;
  double weight_decay = 4e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  float input_mean = 0.5f;
  float input_std = 0.25f;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ParamStore params;
  double initial_epe = 0.0;  // over the full dataset, before any update
  double final_epe = 0.0;    // over the full dataset, after training
  std::vector<double> epoch_epe;  // mean training-batch EPE per epoch
  int iterations = 0;
};

using TrainProgress = std::function<void(int iteration, double batch_epe)>;

/// Adam with L2 weight decay on conv weights. The loss is EPE on the fused
/// prediction against ground truth brought down to the fused grid.
TrainResult train_toy(const LightFlowSpec& spec, ParamStore params,
                      const std::vector<SyntheticPair>& data, const TrainConfig& cfg,
                      const TrainProgress& progress = {});

/// Mean EPE of `params` over `data` (fused grid).
double evaluate_epe(const LightFlowSpec& spec, const ParamStore& params,
                    const std::vector<SyntheticPair>& data, const TrainConfig& cfg);

/// (x - mean) / std, elementwise.
Tensor standardize(const Tensor& frames, float mean, float std);

}  // namespace mvod

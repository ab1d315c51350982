#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvod/autograd.hpp"
#include "mvod/graph.hpp"
#include "mvod/params.hpp"
#include "mvod/tensor.hpp"

namespace mvod {

enum class GruCandidate { Relu, Tanh };

/// One flow-guided GRU cell. Kernels are (d, d, 3, 3); the biases ride on
/// the W convolutions, the U convolutions have none.
template <typename T>
struct GruParams {
  BasicTensor<T> wz, uz, wr, ur, wh, uh;
  std::vector<T> bz, br, bh;
  GruCandidate candidate = GruCandidate::Relu;

  int width() const { return wz.n(); }
  /// Throws ShapeError unless every kernel is (d, d, 3, 3) and biases have d entries.
  void validate() const;

  static GruParams zeros(int width);
  /// Uniform weights in [-scale, scale] and biases in [-bias_scale, bias_scale].
  static GruParams random(int width, std::mt19937_64& rng, double scale, double bias_scale);

  template <typename U>
  GruParams<U> cast() const {
    auto v = [](const std::vector<T>& x) { return std::vector<U>(x.begin(), x.end()); };
    return {wz.template cast<U>(), uz.template cast<U>(), wr.template cast<U>(),
            ur.template cast<U>(),  wh.template cast<U>(), uh.template cast<U>(),
            v(bz), v(br), v(bh), candidate};
  }
};

/// Intermediate maps of one cell evaluation.
template <typename T>
struct GruTrace {
  BasicTensor<T> warped;     // warp(f_prev_agg, flow)
  BasicTensor<T> z;          // update gate
  BasicTensor<T> r;          // reset gate
  BasicTensor<T> candidate;
  BasicTensor<T> output;
};

template <typename T>
GruTrace<T> flow_guided_gru_trace(const BasicTensor<T>& f_cur, const BasicTensor<T>& f_prev_agg,
                                  const BasicFlowField<T>& flow, const GruParams<T>& params);

template <typename T>
BasicTensor<T> flow_guided_gru(const BasicTensor<T>& f_cur, const BasicTensor<T>& f_prev_agg,
                               const BasicFlowField<T>& flow, const GruParams<T>& params);

/// Tape variables for one cell's parameters.
template <typename T>
struct GruVars {
  using Var = typename Tape<T>::Var;
  Var wz, uz, wr, ur, wh, uh, bz, br, bh;  // biases shaped (d, 1, 1, 1)
  GruCandidate candidate = GruCandidate::Relu;
};

template <typename T>
GruVars<T> gru_parameters(Tape<T>& tape, const GruParams<T>& params, bool trainable);

/// Differentiable cell: gradients reach f_cur, f_prev_agg, flow and all parameters.
template <typename T>
typename Tape<T>::Var flow_guided_gru(Tape<T>& tape, typename Tape<T>::Var f_cur,
                                      typename Tape<T>::Var f_prev_agg,
                                      typename Tape<T>::Var flow, const GruVars<T>& params);

// ---- aggregation module (cells + optional width projection) -------------

struct AggregatorConfig {
  int feature_width = 128;
  int gru_width = 128;  // != feature_width wraps the cells in 1x1 projections
  int layers = 1;       // stacked cells sharing the same flow
  GruCandidate candidate = GruCandidate::Relu;
};

/// Cost/parameter description of the aggregation module. Layer names are
/// "gru<i>_Wz" etc. When the GRU is wider than the features, "gru_in"
/// projects the current feature up and "gru_out" projects the aggregated
/// state back down; the recurrent state then lives at GRU width.
/// Inputs: "feat" (feature width), "prev" (GRU width), "gru_flow".
NetworkGraph build_gru_graph(const AggregatorConfig& cfg);

struct Aggregator {
  AggregatorConfig config;
  std::vector<GruParams<float>> cells;
  std::optional<ConvParams<float>> in_proj;   // feature -> gru width
  std::optional<ConvParams<float>> out_proj;  // gru width -> feature

  /// Reads parameters from `store` using the build_gru_graph names.
  static Aggregator from_params(const AggregatorConfig& cfg, const ParamStore& store);
  /// Writes parameters into a store, with the build_gru_graph names.
  void to_params(ParamStore& store) const;

  int state_width() const { return config.gru_width; }

  struct Result {
    Tensor state;     // recurrent state at GRU width
    Tensor features;  // aggregated features at feature width
  };
  /// One key-frame update. Without a previous state the recursion starts
  /// from the current feature itself.
  Result step(const Tensor& f_cur, const Tensor* prev_state, const FlowField* flow) const;
};

/// Small-magnitude random parameters: uniform in +-sqrt(1 / fan_in) for
/// kernels, zero biases.
ParamStore init_aggregator(const AggregatorConfig& cfg, std::uint64_t seed);

// ---- weighted-average baseline ------------------------------------------

struct AggregationWeights {
  Tensor prev;  // (n, 1, h, w)
  Tensor cur;   // (n, 1, h, w)
};

/// Per-position cosine similarity of channel vectors; 0 where either vector is zero.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// Softmax over the two sources of [cos(propagated, reference), 1].
AggregationWeights similarity_weights(const Tensor& propagated, const Tensor& reference);

/// w_prev * warp(f_prev_agg) + w_cur * f_cur. Where `prev_mask` is 0 the
/// previous feature is ignored (w_prev = 0, w_cur = 1).
Tensor recursive_weighted_aggregate(const Tensor& f_cur, const Tensor& f_prev_agg,
                                    const FlowField& flow, const Tensor* prev_mask = nullptr);

}  // namespace mvod

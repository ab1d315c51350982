#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvod/autograd.hpp"
#include "mvod/graph.hpp"
#include "mvod/params.hpp"

namespace mvod {

template <typename T>
struct GraphRun {
  using Var = typename Tape<T>::Var;
  std::map<std::string, Var> outputs;  // every executed layer
  std::map<std::string, Var> params;   // trainable slots (weights, biases, bn gamma/beta)
};

/// Executes `graph` on `tape`. Supported kinds: Input, Conv (with optional
/// batch norm and activation), Activation, Upsample, Pool, Concat, Add, Warp
/// and FlowFusion. Parameters are registered as tape parameters when
/// `trainable`, otherwise as constants.
template <typename T>
GraphRun<T> run_graph(Tape<T>& tape, const NetworkGraph& graph, const BasicParamStore<T>& store,
                      const std::map<std::string, typename Tape<T>::Var>& inputs,
                      bool trainable = false);

/// Multi-resolution flow fusion on the tape. `preds` are ordered coarsest
/// first, each level twice the resolution of the previous one. Every field is
/// nearest-upsampled to the last one's grid (cropping any overhang) and, when
/// `scale_magnitudes`, multiplied by its upsampling factor before averaging.
template <typename T>
typename Tape<T>::Var fuse_flows(Tape<T>& tape, const std::vector<typename Tape<T>::Var>& preds,
                                 bool scale_magnitudes);

extern template GraphRun<float> run_graph(Tape<float>&, const NetworkGraph&,
                                          const BasicParamStore<float>&,
                                          const std::map<std::string, Tape<float>::Var>&, bool);
extern template GraphRun<double> run_graph(Tape<double>&, const NetworkGraph&,
                                           const BasicParamStore<double>&,
                                           const std::map<std::string, Tape<double>::Var>&, bool);
extern template Tape<float>::Var fuse_flows(Tape<float>&, const std::vector<Tape<float>::Var>&,
                                            bool);
extern template Tape<double>::Var fuse_flows(Tape<double>&, const std::vector<Tape<double>::Var>&,
                                             bool);

}  // namespace mvod

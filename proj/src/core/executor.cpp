#include "mvod/executor.hpp"

#include <stdexcept>

namespace mvod {

namespace {

template <typename T>
std::vector<T> column(const BasicTensor<T>& t) {
  return {t.data(), t.data() + t.size()};
}

}  // namespace

template <typename T>
typename Tape<T>::Var fuse_flows(Tape<T>& tape, const std::vector<typename Tape<T>::Var>& preds,
                                 bool scale_magnitudes) {
  using Var = typename Tape<T>::Var;
  if (preds.empty()) throw std::invalid_argument("fuse_flows: empty prediction list");
  const Shape target = tape.value(preds.back()).shape();
  const int k = static_cast<int>(preds.size());
  Var sum{};
  for (int i = 0; i < k; ++i) {
    const Shape s = tape.value(preds[i]).shape();
    if (s.c != 2) throw ShapeError("fuse_flows: prediction " + s.str() + " is not a flow field");
    const int factor = 1 << (k - 1 - i);
    if (s.h * factor < target.h || s.w * factor < target.w || s.n != target.n)
      throw ShapeError("fuse_flows: prediction " + s.str() + " does not cover " + target.str() +
                       " at factor " + std::to_string(factor));
    Var v = preds[i];
    if (factor > 1) {
      v = tape.upsample(v, factor, target.h, target.w);
      if (scale_magnitudes) v = tape.scale(v, static_cast<T>(factor));
    } else if (!(s == target)) {
      throw ShapeError("fuse_flows: finest prediction " + s.str() + " vs " + target.str());
    }
    sum = i == 0 ? v : tape.add(sum, v);
  }
  return k == 1 ? sum : tape.scale(sum, T(1) / static_cast<T>(k));
}

template <typename T>
GraphRun<T> run_graph(Tape<T>& tape, const NetworkGraph& graph, const BasicParamStore<T>& store,
                      const std::map<std::string, typename Tape<T>::Var>& inputs, bool trainable) {
  using Var = typename Tape<T>::Var;
  GraphRun<T> run;
  auto bind = [&](const std::string& name) -> Var {
    auto it = run.params.find(name);
    if (it != run.params.end()) return it->second;
    const BasicTensor<T>& value = store.at(name);
    Var v = trainable ? tape.parameter(value) : tape.constant(value);
    run.params.emplace(name, v);
    return v;
  };
  auto activate = [&](Var x, const LayerSpec& l) -> Var {
    switch (l.activation) {
      case Activation::None: return x;
      case Activation::Relu: return tape.relu(x);
      case Activation::LeakyRelu: return tape.leaky_relu(x, static_cast<T>(l.leaky_slope));
      case Activation::Sigmoid: return tape.sigmoid(x);
      case Activation::Tanh: return tape.tanh(x);
    }
    return x;
  };
  auto normalize = [&](Var x, const LayerSpec& l) -> Var {
    BnParams<T> stats;
    stats.gamma = column(store.at(param_name(l.name, "bn_gamma")));
    stats.beta = column(store.at(param_name(l.name, "bn_beta")));
    stats.mean = column(store.at(param_name(l.name, "bn_mean")));
    stats.var = column(store.at(param_name(l.name, "bn_var")));
    return tape.batch_norm(x, bind(param_name(l.name, "bn_gamma")),
                           bind(param_name(l.name, "bn_beta")), stats);
  };

  for (const auto& l : graph.layers()) {
    std::vector<Var> in;
    for (const auto& name : l.inputs) in.push_back(run.outputs.at(name));
    Var out{};
    switch (l.kind) {
      case LayerKind::Input: {
        auto it = inputs.find(l.name);
        if (it == inputs.end()) throw std::invalid_argument("run_graph: no value for input '" + l.name + "'");
        out = it->second;
        const int c = tape.value(out).c();
        if (l.out_channels > 0 && c != l.out_channels)
          throw ShapeError("input '" + l.name + "' expects " + std::to_string(l.out_channels) +
                           " channels, got " + tape.value(out).shape().str());
        break;
      }
      case LayerKind::Conv: {
        const int in_c = tape.value(in.at(0)).c();
        ConvGeometry geo{l.stride, l.padding, l.depthwise ? in_c : l.groups};
        std::optional<Var> bias;
        if (l.bias) bias = bind(param_name(l.name, "bias"));
        out = tape.conv2d(in[0], bind(param_name(l.name, "weight")), bias, geo);
        if (l.batch_norm) out = normalize(out, l);
        out = activate(out, l);
        break;
      }
      case LayerKind::BatchNorm:
        out = normalize(in.at(0), l);
        break;
      case LayerKind::Activation:
        out = activate(in.at(0), l);
        break;
      case LayerKind::Upsample: {
        int ch = -1, cw = -1;
        if (in.size() > 1) {
          ch = tape.value(in[1]).h();
          cw = tape.value(in[1]).w();
        }
        out = tape.upsample(in.at(0), l.factor, ch, cw);
        break;
      }
      case LayerKind::Pool:
        out = tape.avg_pool(in.at(0), l.factor);
        break;
      case LayerKind::Concat:
        out = tape.concat(in);
        break;
      case LayerKind::Add:
        out = in.at(0);
        for (std::size_t i = 1; i < in.size(); ++i) out = tape.add(out, in[i]);
        break;
      case LayerKind::Warp:
        if (in.size() != 2) throw std::invalid_argument("warp layer '" + l.name + "' needs feature and flow");
        out = tape.warp(in[0], in[1]);
        break;
      case LayerKind::FlowFusion:
        out = fuse_flows(tape, in, l.scale_magnitudes);
        break;
      default:
        throw std::invalid_argument(std::string("run_graph: layer kind '") + to_string(l.kind) +
                                    "' is not executable (layer '" + l.name + "')");
    }
    run.outputs[l.name] = out;
  }
  return run;
}

template GraphRun<float> run_graph(Tape<float>&, const NetworkGraph&, const BasicParamStore<float>&,
                                   const std::map<std::string, Tape<float>::Var>&, bool);
template GraphRun<double> run_graph(Tape<double>&, const NetworkGraph&,
                                    const BasicParamStore<double>&,
                                    const std::map<std::string, Tape<double>::Var>&, bool);
template Tape<float>::Var fuse_flows(Tape<float>&, const std::vector<Tape<float>::Var>&, bool);
template Tape<double>::Var fuse_flows(Tape<double>&, const std::vector<Tape<double>::Var>&, bool);

}  // namespace mvod

#include "mvod/light_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mvod/autograd.hpp"
#include "mvod/executor.hpp"
#include "mvod/ops.hpp"

namespace mvod {

namespace {

void add_dw_block(NetworkGraph& g, const std::string& name, const std::string& input, int out_c,
                  int stride, bool predictor = false) {
  g.add({.name = name + "_dw",
         .kind = LayerKind::Conv,
         .inputs = {input},
         .kernel = 3,
         .stride = stride,
         .padding = 1,
         .depthwise = true,
         .batch_norm = true,
         .activation = Activation::LeakyRelu});
  g.add({.name = name,
         .kind = LayerKind::Conv,
         .inputs = {name + "_dw"},
         .out_channels = out_c,
         .batch_norm = !predictor,
         .activation = predictor ? Activation::None : Activation::LeakyRelu});
}

}  // namespace

LightFlowSpec build_light_flow(double beta, bool scale_magnitudes) {
  if (!(beta > 0.0 && beta <= 1.0))
    throw std::invalid_argument("light flow: beta must be in (0, 1], got " + std::to_string(beta));
  LightFlowSpec spec;
  spec.beta = beta;
  spec.scale_magnitudes = scale_magnitudes;
  spec.graph = NetworkGraph("light_flow");
  auto c = [beta](int ch) { return scaled_channels(ch, beta); };
  NetworkGraph& g = spec.graph;

  g.add({.name = spec.input, .kind = LayerKind::Input, .out_channels = 6});
  add_dw_block(g, "Conv1", spec.input, c(32), 2);
  add_dw_block(g, "Conv2", "Conv1", c(64), 2);
  add_dw_block(g, "Conv3", "Conv2", c(128), 2);
  add_dw_block(g, "Conv4a", "Conv3", c(256), 2);
  add_dw_block(g, "Conv4b", "Conv4a", c(256), 1);
  add_dw_block(g, "Conv5a", "Conv4b", c(512), 2);
  add_dw_block(g, "Conv5b", "Conv5a", c(512), 1);
  add_dw_block(g, "Conv6a", "Conv5b", c(1024), 2);
  add_dw_block(g, "Conv6b", "Conv6a", c(1024), 1);
  add_dw_block(g, "Conv7", "Conv6b", c(256), 1);

  // decoder: upsample, concat with the encoder skip, depthwise separable conv
  const struct {
    const char* name;
    const char* from;
    const char* skip;
    int out;
  } decoder[] = {{"Conv8", "Conv7", "Conv5b", 128},
                 {"Conv9", "Conv8", "Conv4b", 64},
                 {"Conv10", "Conv9", "Conv3", 32},
                 {"Conv11", "Conv10", "Conv2", 16}};
  for (const auto& d : decoder) {
    const std::string up = std::string(d.from) + "_up";
    const std::string cat = std::string(d.name) + "_in";
    g.add({.name = up, .kind = LayerKind::Upsample, .inputs = {d.from, d.skip}});
    g.add({.name = cat, .kind = LayerKind::Concat, .inputs = {up, d.skip}});
    add_dw_block(g, d.name, cat, c(d.out), 1);
  }

  const std::pair<const char*, const char*> preds[] = {
      {"Conv12", "Conv7"}, {"Conv13", "Conv8"}, {"Conv14", "Conv9"}, {"Conv15", "Conv10"},
      {"Conv16", "Conv11"}};
  for (const auto& [name, from] : preds) {
    add_dw_block(g, name, from, 2, 1, true);
    spec.predictors.emplace_back(name);
  }
  g.add({.name = spec.fused,
         .kind = LayerKind::FlowFusion,
         .inputs = spec.predictors,
         .scale_magnitudes = scale_magnitudes});
  return spec;
}

ParamStore init_light_flow(const LightFlowSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store = init_params(spec.graph, spec.input_channels(), rng);
  for (const auto& p : spec.predictors) {
    store.at(param_name(p, "weight")).fill(0.f);
    store.at(param_name(p, "bias")).fill(0.f);
  }
  return store;
}

FlowPrediction predict_flow_detailed(const Tensor& reference, const Tensor& target,
                                     const LightFlowSpec& spec, const ParamStore& params) {
  if (!(reference.shape() == target.shape()))
    throw ShapeError(shape_mismatch("predict_flow: frames differ", reference.shape(), target.shape()));
  if (reference.c() != 3)
    throw ShapeError("predict_flow: frames must have 3 channels, got " + reference.shape().str());
  Tape<float> tape(false);
  auto x = tape.constant(concat_channels<float>({&reference, &target}));
  auto run = run_graph(tape, spec.graph, params, {{spec.input, x}});
  FlowPrediction out{FlowField(tape.value(run.outputs.at(spec.fused))), {}};
  for (const auto& p : spec.predictors) out.taps.emplace_back(tape.value(run.outputs.at(p)));
  return out;
}

FlowField predict_flow(const Tensor& reference, const Tensor& target, const LightFlowSpec& spec,
                       const ParamStore& params) {
  return predict_flow_detailed(reference, target, spec, params).fused;
}

FlowField fuse_multiresolution(const std::vector<FlowField>& preds, bool scale_magnitudes) {
  if (preds.empty()) throw std::invalid_argument("fuse_multiresolution: empty prediction list");
  Tape<float> tape(false);
  std::vector<Tape<float>::Var> vars;
  for (const auto& p : preds) vars.push_back(tape.constant(p.tensor()));
  return FlowField(tape.value(fuse_flows(tape, vars, scale_magnitudes)));
}

FlowField resample_flow(const FlowField& flow, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1)
    throw std::invalid_argument("resample_flow: target dims must be positive");
  const Shape s = flow.shape();
  Tensor out = resize_bilinear(flow.tensor(), target_h, target_w);
  const double sx = static_cast<double>(target_w) / s.w;
  const double sy = static_cast<double>(target_h) / s.h;
  const std::size_t plane = static_cast<std::size_t>(target_h) * target_w;
  for (int b = 0; b < s.n; ++b) {
    float* px = out.plane(b, 0);
    float* py = out.plane(b, 1);
    for (std::size_t i = 0; i < plane; ++i) {
      px[i] = static_cast<float>(px[i] * sx);
      py[i] = static_cast<float>(py[i] * sy);
    }
  }
  return FlowField(std::move(out));
}

FlowField downsample_flow(const FlowField& flow, int factor) {
  return FlowField(scale(avg_pool(flow.tensor(), factor), 1.f / static_cast<float>(factor)));
}

template <typename T>
EpeResult<T> epe_loss(const BasicFlowField<T>& pred, const BasicFlowField<T>& gt) {
  if (!(pred.shape() == gt.shape()))
    throw ShapeError(shape_mismatch("epe_loss", pred.shape(), gt.shape()));
  const Shape s = pred.shape();
  const double count = static_cast<double>(s.n) * s.h * s.w;
  EpeResult<T> r{0.0, BasicTensor<T>(s)};
  double total = 0.0;
  for (int b = 0; b < s.n; ++b)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const double ex = static_cast<double>(pred.dx(b, y, x)) - gt.dx(b, y, x);
        const double ey = static_cast<double>(pred.dy(b, y, x)) - gt.dy(b, y, x);
        const double norm = std::sqrt(ex * ex + ey * ey);
        total += norm;
        if (norm > 0.0) {
          r.grad(b, 0, y, x) = static_cast<T>(ex / norm / count);
          r.grad(b, 1, y, x) = static_cast<T>(ey / norm / count);
        }
      }
  r.value = total / count;
  return r;
}

template EpeResult<float> epe_loss(const FlowField&, const FlowField&);
template EpeResult<double> epe_loss(const FlowFieldD&, const FlowFieldD&);

// ---- synthetic data ------------------------------------------------------

namespace {

double sample_plane(const std::vector<double>& plane, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double ay = y - y0;
  const double ax = x - x0;
  auto at = [&](int yy, int xx) { return plane[static_cast<std::size_t>(yy) * w + xx]; };
  return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) +
         ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
}

// Smooth noise in [0, 1]: mean of bilinearly upsampled uniform grids.
std::vector<double> texture(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  const int scales[] = {4, 8, 16};
  for (int s : scales) {
    const int gh = h / s + 2;
    const int gw = w / s + 2;
    std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
    for (auto& v : grid) v = u(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[static_cast<std::size_t>(y) * w + x] +=
            sample_plane(grid, gh, gw, static_cast<double>(y) / s, static_cast<double>(x) / s) / 3.0;
  }
  return out;
}

}  // namespace

std::vector<SyntheticPair> make_synthetic_pairs(const SyntheticConfig& cfg) {
  if (cfg.height < 1 || cfg.width < 1 || cfg.count < 0)
    throw std::invalid_argument("synthetic pairs: bad dimensions");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> shift(-cfg.max_shift, cfg.max_shift);
  const int pad = static_cast<int>(std::ceil(cfg.max_shift)) + 2;
  const int ch = cfg.height + 2 * pad;
  const int cw = cfg.width + 2 * pad;

  std::vector<SyntheticPair> pairs;
  pairs.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) {
    std::vector<std::vector<double>> canvas;
    for (int c = 0; c < 3; ++c) canvas.push_back(texture(ch, cw, rng));

    // per-pixel displacement: global translation overridden inside patches
    FlowField flow = FlowField::zeros(1, cfg.height, cfg.width);
    const double tx = shift(rng);
    const double ty = shift(rng);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        flow.tensor()(0, 0, y, x) = static_cast<float>(tx);
        flow.tensor()(0, 1, y, x) = static_cast<float>(ty);
      }
    const int side = std::max(4, std::min(cfg.height, cfg.width) / 4);
    for (int p = 0; p < cfg.patches; ++p) {
      std::uniform_int_distribution<int> py(0, cfg.height - side);
      std::uniform_int_distribution<int> px(0, cfg.width - side);
      const int y0 = py(rng), x0 = px(rng);
      const double ptx = shift(rng), pty = shift(rng);
      for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) {
          flow.tensor()(0, 0, y, x) = static_cast<float>(ptx);
          flow.tensor()(0, 1, y, x) = static_cast<float>(pty);
        }
    }

    SyntheticPair pair{Tensor(Shape{1, 3, cfg.height, cfg.width}),
                       Tensor(Shape{1, 3, cfg.height, cfg.width}), flow};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          const auto& plane = canvas[c];
          pair.frame_a(0, c, y, x) = static_cast<float>(plane[static_cast<std::size_t>(y + pad) * cw + x + pad]);
          pair.frame_b(0, c, y, x) = static_cast<float>(
              sample_plane(plane, ch, cw, y + pad + flow.dy(0, y, x), x + pad + flow.dx(0, y, x)));
        }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

Tensor standardize(const Tensor& frames, float mean, float std) {
  if (!(std > 0.f)) throw std::invalid_argument("standardize: std must be positive");
  Tensor out = frames;
  for (float& v : out.values()) v = (v - mean) / std;
  return out;
}

// ---- training ------------------------------------------------------------

namespace {

struct Batch {
  Tensor input;  // (n, 6, h, w)
  Tensor gt;     // (n, 2, h/4, w/4)
};

Batch make_batch(const std::vector<SyntheticPair>& data, const std::vector<int>& idx,
                 const TrainConfig& cfg) {
  std::vector<Tensor> inputs, gts;
  for (int i : idx) {
    const Tensor a = standardize(data[i].frame_a, cfg.input_mean, cfg.input_std);
    const Tensor b = standardize(data[i].frame_b, cfg.input_mean, cfg.input_std);
    inputs.push_back(concat_channels<float>({&a, &b}));
    gts.push_back(downsample_flow(data[i].flow, 4).tensor());
  }
  std::vector<const Tensor*> ip, gp;
  for (const auto& t : inputs) ip.push_back(&t);
  for (const auto& t : gts) gp.push_back(&t);
  return {stack_batch(ip), stack_batch(gp)};
}

}  // namespace

double evaluate_epe(const LightFlowSpec& spec, const ParamStore& params,
                    const std::vector<SyntheticPair>& data, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("evaluate_epe: empty dataset");
  double total = 0.0;
  const int bs = std::max(1, cfg.batch);
  for (std::size_t start = 0; start < data.size(); start += bs) {
    std::vector<int> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + bs); ++i)
      idx.push_back(static_cast<int>(i));
    Batch batch = make_batch(data, idx, cfg);
    Tape<float> tape(false);
    auto run = run_graph(tape, spec.graph, params, {{spec.input, tape.constant(batch.input)}});
    const FlowField pred(tape.value(run.outputs.at(spec.fused)));
    total += epe_loss(pred, FlowField(batch.gt)).value * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

TrainResult train_toy(const LightFlowSpec& spec, ParamStore params,
                      const std::vector<SyntheticPair>& data, const TrainConfig& cfg,
                      const TrainProgress& progress) {
  if (data.empty()) throw std::invalid_argument("train_toy: empty dataset");
  if (cfg.iterations < 0 || cfg.batch < 1) throw std::invalid_argument("train_toy: bad config");

  TrainResult result;
  result.initial_epe = evaluate_epe(spec, params, data, cfg);

  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments;
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle on the first batch
  double epoch_sum = 0.0;
  int epoch_batches = 0;

  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<int> idx;
    while (static_cast<int>(idx.size()) < cfg.batch) {
      if (cursor == order.size()) {
        if (epoch_batches > 0) {
          result.epoch_epe.push_back(epoch_sum / epoch_batches);
          epoch_sum = 0.0;
          epoch_batches = 0;
        }
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    Batch batch = make_batch(data, idx, cfg);

    Tape<float> tape;
    auto run = run_graph(tape, spec.graph, params, {{spec.input, tape.constant(batch.input)}},
                         /*trainable=*/true);
    auto loss = tape.epe(run.outputs.at(spec.fused), tape.constant(batch.gt));
    tape.backward(loss);
    const double batch_epe = tape.value(loss)[0];
    epoch_sum += batch_epe;
    ++epoch_batches;

    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, it);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, it);
    for (const auto& [name, var] : run.params) {
      Tensor& w = params.at(name);
      const Tensor g = tape.grad(var);
      const bool decay = name.size() > 7 && name.compare(name.size() - 7, 7, "/weight") == 0;
      Moments& mo = moments[name];
      if (mo.m.empty()) {
        mo.m.assign(w.size(), 0.0);
        mo.v.assign(w.size(), 0.0);
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i];
        if (decay) gi += cfg.weight_decay * w[i];
        mo.m[i] = cfg.adam_beta1 * mo.m[i] + (1 - cfg.adam_beta1) * gi;
        mo.v[i] = cfg.adam_beta2 * mo.v[i] + (1 - cfg.adam_beta2) * gi * gi;
        const double step = cfg.learning_rate * (mo.m[i] / bc1) / (std::sqrt(mo.v[i] / bc2) + cfg.adam_eps);
        w[i] -= static_cast<float>(step);
      }
    }
    if (progress) progress(it, batch_epe);
  }
  if (epoch_batches > 0) result.epoch_epe.push_back(epoch_sum / epoch_batches);

  result.final_epe = cfg.iterations == 0 ? result.initial_epe : evaluate_epe(spec, params, data, cfg);
  result.iterations = cfg.iterations;
  result.params = std::move(params);
  return result;
}

}  // namespace mvod

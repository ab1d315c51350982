#include "mvod/aggregation.hpp"

#include <cmath>
#include <stdexcept>

#include "mvod/ops.hpp"

namespace mvod {

namespace {

template <typename T>
BasicTensor<T> bias_column(const std::vector<T>& b) {
  return BasicTensor<T>(Shape{static_cast<int>(b.size()), 1, 1, 1}, b);
}

template <typename T>
struct CellVars {
  typename Tape<T>::Var warped, z, r, candidate, output;
};

template <typename T>
CellVars<T> run_cell(Tape<T>& tape, typename Tape<T>::Var f_cur, typename Tape<T>::Var f_prev,
                     typename Tape<T>::Var flow, const GruVars<T>& p) {
  const Shape a = tape.value(f_cur).shape();
  const Shape b = tape.value(f_prev).shape();
  if (!(a == b)) throw ShapeError(shape_mismatch("flow_guided_gru: f_cur vs f_prev_agg", a, b));
  const Shape fs = tape.value(flow).shape();
  if (fs.c != 2 || fs.n != a.n || !fs.same_spatial(a))
    throw ShapeError(shape_mismatch("flow_guided_gru: flow must match feature grid", a, fs));
  const ConvGeometry same{1, 1, 1};
  CellVars<T> c;
  c.warped = tape.warp(f_prev, flow);
  c.z = tape.sigmoid(tape.add(tape.conv2d(f_cur, p.wz, p.bz, same),
                              tape.conv2d(c.warped, p.uz, std::nullopt, same)));
  c.r = tape.sigmoid(tape.add(tape.conv2d(f_cur, p.wr, p.br, same),
                              tape.conv2d(c.warped, p.ur, std::nullopt, same)));
  auto pre = tape.add(tape.conv2d(f_cur, p.wh, p.bh, same),
                      tape.conv2d(tape.mul(c.r, c.warped), p.uh, std::nullopt, same));
  c.candidate = p.candidate == GruCandidate::Relu ? tape.relu(pre) : tape.tanh(pre);
  c.output = tape.add(tape.mul(tape.one_minus(c.z), c.warped), tape.mul(c.z, c.candidate));
  return c;
}

}  // namespace

template <typename T>
void GruParams<T>::validate() const {
  const int d = width();
  const Shape k{d, d, 3, 3};
  for (const auto* t : {&wz, &uz, &wr, &ur, &wh, &uh})
    if (!(t->shape() == k))
      throw ShapeError("gru kernel " + t->shape().str() + " expected " + k.str());
  for (const auto* b : {&bz, &br, &bh})
    if (static_cast<int>(b->size()) != d)
      throw ShapeError("gru bias has " + std::to_string(b->size()) + " entries, expected " +
                       std::to_string(d));
}

template <typename T>
GruParams<T> GruParams<T>::zeros(int width) {
  const Shape k{width, width, 3, 3};
  GruParams p;
  p.wz = p.uz = p.wr = p.ur = p.wh = p.uh = BasicTensor<T>(k);
  p.bz.assign(width, T(0));
  p.br = p.bh = p.bz;
  return p;
}

template <typename T>
GruParams<T> GruParams<T>::random(int width, std::mt19937_64& rng, double scale, double bias_scale) {
  GruParams p = zeros(width);
  std::uniform_real_distribution<double> w(-scale, scale);
  std::uniform_real_distribution<double> b(-bias_scale, bias_scale);
  for (auto* t : {&p.wz, &p.uz, &p.wr, &p.ur, &p.wh, &p.uh})
    for (auto& v : t->values()) v = static_cast<T>(w(rng));
  for (auto* v : {&p.bz, &p.br, &p.bh})
    for (auto& x : *v) x = static_cast<T>(b(rng));
  return p;
}

template struct GruParams<float>;
template struct GruParams<double>;

template <typename T>
GruVars<T> gru_parameters(Tape<T>& tape, const GruParams<T>& p, bool trainable) {
  p.validate();
  auto reg = [&](BasicTensor<T> t) { return trainable ? tape.parameter(std::move(t)) : tape.constant(std::move(t)); };
  GruVars<T> v;
  v.wz = reg(p.wz);
  v.uz = reg(p.uz);
  v.wr = reg(p.wr);
  v.ur = reg(p.ur);
  v.wh = reg(p.wh);
  v.uh = reg(p.uh);
  v.bz = reg(bias_column(p.bz));
  v.br = reg(bias_column(p.br));
  v.bh = reg(bias_column(p.bh));
  v.candidate = p.candidate;
  return v;
}

template <typename T>
typename Tape<T>::Var flow_guided_gru(Tape<T>& tape, typename Tape<T>::Var f_cur,
                                      typename Tape<T>::Var f_prev_agg,
                                      typename Tape<T>::Var flow, const GruVars<T>& params) {
  return run_cell(tape, f_cur, f_prev_agg, flow, params).output;
}

template <typename T>
GruTrace<T> flow_guided_gru_trace(const BasicTensor<T>& f_cur, const BasicTensor<T>& f_prev_agg,
                                  const BasicFlowField<T>& flow, const GruParams<T>& params) {
  if (f_cur.c() != params.width())
    throw ShapeError("flow_guided_gru: feature has " + std::to_string(f_cur.c()) +
                     " channels, cell width is " + std::to_string(params.width()));
  Tape<T> tape(false);
  auto vars = gru_parameters(tape, params, false);
  auto c = run_cell(tape, tape.constant(f_cur), tape.constant(f_prev_agg),
                    tape.constant(flow.tensor()), vars);
  return {tape.value(c.warped), tape.value(c.z), tape.value(c.r), tape.value(c.candidate),
          tape.value(c.output)};
}

template <typename T>
BasicTensor<T> flow_guided_gru(const BasicTensor<T>& f_cur, const BasicTensor<T>& f_prev_agg,
                               const BasicFlowField<T>& flow, const GruParams<T>& params) {
  return flow_guided_gru_trace(f_cur, f_prev_agg, flow, params).output;
}

#define MVOD_INSTANTIATE_GRU(T)                                                              \
  template GruVars<T> gru_parameters(Tape<T>&, const GruParams<T>&, bool);                   \
  template Tape<T>::Var flow_guided_gru(Tape<T>&, Tape<T>::Var, Tape<T>::Var, Tape<T>::Var,  \
                                        const GruVars<T>&);                                  \
  template GruTrace<T> flow_guided_gru_trace(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                             const BasicFlowField<T>&, const GruParams<T>&); \
  template BasicTensor<T> flow_guided_gru(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                          const BasicFlowField<T>&, const GruParams<T>&);

MVOD_INSTANTIATE_GRU(float)
MVOD_INSTANTIATE_GRU(double)

// ---- aggregation module -------------------------------------------------

namespace {

void check_config(const AggregatorConfig& cfg) {
  if (cfg.feature_width < 1 || cfg.gru_width < 1 || cfg.layers < 1)
    throw std::invalid_argument("aggregator: widths and layer count must be positive");
}

std::string cell_name(int i, const char* part) { return "gru" + std::to_string(i) + "_" + part; }

}  // namespace

NetworkGraph build_gru_graph(const AggregatorConfig& cfg) {
  check_config(cfg);
  const bool project = cfg.gru_width != cfg.feature_width;
  const int d = cfg.gru_width;
  NetworkGraph g("gru");
  g.add({.name = "feat", .kind = LayerKind::Input, .out_channels = cfg.feature_width});
  g.add({.name = "prev", .kind = LayerKind::Input, .out_channels = d});
  g.add({.name = "gru_flow", .kind = LayerKind::Input, .out_channels = 2});
  std::string x = "feat";
  if (project) {
    g.add({.name = "gru_in", .kind = LayerKind::Conv, .inputs = {"feat"}, .out_channels = d});
    x = "gru_in";
  }
  for (int i = 0; i < cfg.layers; ++i) {
    auto conv = [&](const char* part, const std::string& in, bool bias) {
      g.add({.name = cell_name(i, part),
             .kind = LayerKind::Conv,
             .inputs = {in},
             .out_channels = d,
             .kernel = 3,
             .padding = 1,
             .bias = bias});
    };
    auto elt = [&](const char* part, std::vector<std::string> in, int ops) {
      g.add({.name = cell_name(i, part), .kind = LayerKind::Elementwise, .inputs = std::move(in),
             .ops_per_element = ops});
    };
    const std::string warped = cell_name(i, "warp");
    g.add({.name = warped, .kind = LayerKind::Warp, .inputs = {"prev", "gru_flow"},
           .ops_per_element = 14});
    conv("Wz", x, true);
    conv("Uz", warped, false);
    elt("z", {cell_name(i, "Wz"), cell_name(i, "Uz")}, 2);
    conv("Wr", x, true);
    conv("Ur", warped, false);
    elt("r", {cell_name(i, "Wr"), cell_name(i, "Ur")}, 2);
    elt("rh", {cell_name(i, "r"), warped}, 1);
    conv("Wh", x, true);
    conv("Uh", cell_name(i, "rh"), false);
    elt("cand", {cell_name(i, "Wh"), cell_name(i, "Uh")}, 2);
    elt("out", {cell_name(i, "z"), warped, cell_name(i, "cand")}, 4);
    x = cell_name(i, "out");
  }
  if (project)
    g.add({.name = "gru_out", .kind = LayerKind::Conv, .inputs = {x}, .out_channels = cfg.feature_width});
  return g;
}

namespace {

std::vector<float> as_vector(const Tensor& t) { return {t.data(), t.data() + t.size()}; }

ConvParams<float> read_conv(const ParamStore& store, const std::string& layer, ConvGeometry geo) {
  ConvParams<float> p{store.at(param_name(layer, "weight")), {}, geo};
  if (const Tensor* b = store.find(param_name(layer, "bias"))) p.bias = as_vector(*b);
  return p;
}

}  // namespace

Aggregator Aggregator::from_params(const AggregatorConfig& cfg, const ParamStore& store) {
  check_config(cfg);
  validate_params(build_gru_graph(cfg), {}, store);
  Aggregator a;
  a.config = cfg;
  if (cfg.gru_width != cfg.feature_width) {
    a.in_proj = read_conv(store, "gru_in", {});
    a.out_proj = read_conv(store, "gru_out", {});
  }
  for (int i = 0; i < cfg.layers; ++i) {
    GruParams<float> p;
    p.wz = store.at(param_name(cell_name(i, "Wz"), "weight"));
    p.uz = store.at(param_name(cell_name(i, "Uz"), "weight"));
    p.wr = store.at(param_name(cell_name(i, "Wr"), "weight"));
    p.ur = store.at(param_name(cell_name(i, "Ur"), "weight"));
    p.wh = store.at(param_name(cell_name(i, "Wh"), "weight"));
    p.uh = store.at(param_name(cell_name(i, "Uh"), "weight"));
    p.bz = as_vector(store.at(param_name(cell_name(i, "Wz"), "bias")));
    p.br = as_vector(store.at(param_name(cell_name(i, "Wr"), "bias")));
    p.bh = as_vector(store.at(param_name(cell_name(i, "Wh"), "bias")));
    p.candidate = cfg.candidate;
    p.validate();
    a.cells.push_back(std::move(p));
  }
  return a;
}

void Aggregator::to_params(ParamStore& store) const {
  auto put_conv = [&](const std::string& layer, const ConvParams<float>& c) {
    store.set(param_name(layer, "weight"), c.weights);
    if (!c.bias.empty()) store.set(param_name(layer, "bias"), bias_column(c.bias));
  };
  if (in_proj) put_conv("gru_in", *in_proj);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& p = cells[i];
    const int k = static_cast<int>(i);
    store.set(param_name(cell_name(k, "Wz"), "weight"), p.wz);
    store.set(param_name(cell_name(k, "Wz"), "bias"), bias_column(p.bz));
    store.set(param_name(cell_name(k, "Uz"), "weight"), p.uz);
    store.set(param_name(cell_name(k, "Wr"), "weight"), p.wr);
    store.set(param_name(cell_name(k, "Wr"), "bias"), bias_column(p.br));
    store.set(param_name(cell_name(k, "Ur"), "weight"), p.ur);
    store.set(param_name(cell_name(k, "Wh"), "weight"), p.wh);
    store.set(param_name(cell_name(k, "Wh"), "bias"), bias_column(p.bh));
    store.set(param_name(cell_name(k, "Uh"), "weight"), p.uh);
  }
  if (out_proj) put_conv("gru_out", *out_proj);
}

Aggregator::Result Aggregator::step(const Tensor& f_cur, const Tensor* prev_state,
                                    const FlowField* flow) const {
  if (f_cur.c() != config.feature_width)
    throw ShapeError("aggregator: feature has " + std::to_string(f_cur.c()) +
                     " channels, expected " + std::to_string(config.feature_width));
  Tensor x = in_proj ? conv2d(f_cur, *in_proj) : f_cur;
  if (!prev_state) return {x, f_cur};
  if (!flow) throw std::invalid_argument("aggregator: previous state given without a flow");
  Tensor h = x;
  for (const auto& cell : cells) h = flow_guided_gru(h, *prev_state, *flow, cell);
  Tensor features = out_proj ? conv2d(h, *out_proj) : h;
  return {std::move(h), std::move(features)};
}

ParamStore init_aggregator(const AggregatorConfig& cfg, std::uint64_t seed) {
  const NetworkGraph g = build_gru_graph(cfg);
  std::mt19937_64 rng(seed);
  ParamStore store;
  for (const auto& [name, shape] : param_shapes(g, {})) {
    Tensor t(shape);
    if (name.ends_with("/weight")) {
      const double bound = std::sqrt(1.0 / (shape.c * shape.h * shape.w));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : t.values()) v = static_cast<float>(u(rng));
    }
    store.set(name, std::move(t));
  }
  return store;
}

// ---- weighted-average baseline ------------------------------------------

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw ShapeError(shape_mismatch("cosine_similarity", a.shape(), b.shape()));
  const Shape s = a.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int c = 0; c < s.c; ++c) {
          const double va = a(n, c, y, x), vb = b(n, c, y, x);
          dot += va * vb;
          na += va * va;
          nb += vb * vb;
        }
        out(n, 0, y, x) = (na > 0.0 && nb > 0.0)
                              ? static_cast<float>(dot / (std::sqrt(na) * std::sqrt(nb)))
                              : 0.f;
      }
  return out;
}

AggregationWeights similarity_weights(const Tensor& propagated, const Tensor& reference) {
  const Tensor cos = cosine_similarity(propagated, reference);
  AggregationWeights w{Tensor(cos.shape()), Tensor(cos.shape())};
  for (std::size_t i = 0; i < cos.size(); ++i) {
    // softmax over [cos, 1], shifted by the max for stability
    const double sp = static_cast<double>(cos[i]);
    const double m = std::max(sp, 1.0);
    const double ep = std::exp(sp - m), ec = std::exp(1.0 - m);
    w.prev[i] = static_cast<float>(ep / (ep + ec));
    w.cur[i] = static_cast<float>(ec / (ep + ec));
  }
  return w;
}

Tensor recursive_weighted_aggregate(const Tensor& f_cur, const Tensor& f_prev_agg,
                                    const FlowField& flow, const Tensor* prev_mask) {
  if (!(f_cur.shape() == f_prev_agg.shape()))
    throw ShapeError(shape_mismatch("recursive_weighted_aggregate", f_cur.shape(), f_prev_agg.shape()));
  const Tensor warped = bilinear_warp(f_prev_agg, flow);
  AggregationWeights w = similarity_weights(warped, f_cur);
  if (prev_mask) {
    if (!(prev_mask->shape() == w.prev.shape()))
      throw ShapeError(shape_mismatch("recursive_weighted_aggregate: mask", w.prev.shape(), prev_mask->shape()));
    for (std::size_t i = 0; i < w.prev.size(); ++i)
      if ((*prev_mask)[i] == 0.f) {
        w.prev[i] = 0.f;
        w.cur[i] = 1.f;
      }
  }
  const Shape s = f_cur.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const double wp = w.prev(n, 0, y, x), wc = w.cur(n, 0, y, x);
          out(n, c, y, x) = static_cast<float>(wp * warped(n, c, y, x) + wc * f_cur(n, c, y, x));
        }
  return out;
}

}  // namespace mvod

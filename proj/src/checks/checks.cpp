#include "mvod/checks.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "mvod/analyzer.hpp"
#include "mvod/autograd.hpp"
#include "mvod/grad.hpp"
#include "mvod/light_flow.hpp"
#include "mvod/runtime.hpp"

namespace mvod::checks {

namespace {

using Rng = std::mt19937_64;

TensorD random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::vector<double> random_vec(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

int rand_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Flow whose sample points stay clear of integer grid lines, where bilinear
// sampling has kinks.
TensorD smooth_flow(int n, int h, int w, Rng& rng, double range) {
  TensorD f({n, 2, h, w});
  std::uniform_real_distribution<double> whole(-range, range), frac(0.15, 0.85);
  for (auto& v : f.values()) v = std::floor(whole(rng)) + frac(rng);
  return f;
}

double dotd(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

TensorD vec_tensor(const std::vector<double>& v) {
  return TensorD({static_cast<int>(v.size()), 1, 1, 1}, v);
}

std::vector<double> tensor_vec(const TensorD& t) { return {t.values().begin(), t.values().end()}; }

void track(GradStats& s, const std::string& what, const TensorD& a, const TensorD& n) {
  const double e = relative_error(a, n);
  if (e >= s.max_rel_error) {
    s.max_rel_error = e;
    s.worst = what;
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

}  // namespace

double relative_error(const TensorD& analytic, const TensorD& numeric) {
  if (!(analytic.shape() == numeric.shape()))
    throw ShapeError(shape_mismatch("relative_error", analytic.shape(), numeric.shape()));
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic.values()[i] - numeric.values()[i]));
    scale = std::max(scale, std::abs(numeric.values()[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

TensorD numeric_gradient(const std::function<double(const TensorD&)>& f, const TensorD& x, double eps) {
  TensorD g(x.shape());
  TensorD probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    probe.values()[i] = v + eps;
    const double up = f(probe);
    probe.values()[i] = v - eps;
    const double down = f(probe);
    probe.values()[i] = v;
    g.values()[i] = (up - down) / (2 * eps);
  }
  return g;
}

// ---- gradient checks ----------------------------------------------------------

GradStats grad_check_conv2d(int instances, std::uint64_t seed) {
  GradStats s{.op = "conv2d"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int groups = rand_int(rng, 0, 2) == 0 ? 2 : 1;
    const int cin = groups * rand_int(rng, 1, 3), cout = groups * rand_int(rng, 1, 3);
    const int k = std::array{1, 3, 5}[rand_int(rng, 0, 2)];
    ConvGeometry g{.stride = rand_int(rng, 1, 2), .padding = rand_int(rng, 0, k / 2), .groups = groups};
    const int h = rand_int(rng, k, k + 4), w = rand_int(rng, k, k + 4);
    TensorD x = random_tensor({rand_int(rng, 1, 2), cin, h, w}, rng);
    ConvParams<double> p{random_tensor({cout, cin / groups, k, k}, rng), random_vec(cout, rng), g};
    const TensorD out = conv2d(x, p);
    const TensorD dir = random_tensor(out.shape(), rng);
    const auto grads = conv2d_backward(x, p, dir);

    track(s, "input", grads.input, numeric_gradient([&](const TensorD& v) { return dotd(conv2d(v, p), dir); }, x));
    track(s, "weights", grads.weights, numeric_gradient([&](const TensorD& v) {
            ConvParams<double> q = p;
            q.weights = v;
            return dotd(conv2d(x, q), dir);
          }, p.weights));
    track(s, "bias", vec_tensor(grads.bias), numeric_gradient([&](const TensorD& v) {
            ConvParams<double> q = p;
            q.bias = tensor_vec(v);
            return dotd(conv2d(x, q), dir);
          }, vec_tensor(p.bias)));
    ++s.instances;
  }
  return s;
}

GradStats grad_check_depthwise_separable(int instances, std::uint64_t seed) {
  GradStats s{.op = "depthwise_separable"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int c = rand_int(rng, 1, 4), cout = rand_int(rng, 1, 4);
    const int stride = rand_int(rng, 1, 2);
    const double slope = 0.1;
    TensorD x = random_tensor({1, c, rand_int(rng, 3, 7), rand_int(rng, 3, 7)}, rng);
    TensorD wdw = random_tensor({c, 1, 3, 3}, rng), wpw = random_tensor({cout, c, 1, 1}, rng);
    auto bdw = random_vec(c, rng), bpw = random_vec(cout, rng);
    auto make_bn = [&](int n) {
      BnParams<double> b;
      b.gamma = random_vec(n, rng, 0.5, 1.5);
      b.beta = random_vec(n, rng, -0.5, 0.5);
      b.mean = random_vec(n, rng, -0.3, 0.3);
      b.var = random_vec(n, rng, 0.5, 2.0);
      return b;
    };
    BnParams<double> bn1 = make_bn(c), bn2 = make_bn(cout);
    const ConvGeometry gdw{.stride = stride, .padding = 1, .groups = c};

    auto forward = [&](const TensorD& xi, const TensorD& w1, const std::vector<double>& b1,
                       const TensorD& w2, const std::vector<double>& b2, const BnParams<double>& n1,
                       const BnParams<double>& n2) {
      return depthwise_separable<double>(xi, {w1, b1, gdw}, {w2, b2, {}}, {n1, slope}, {n2, slope});
    };
    const TensorD out = forward(x, wdw, bdw, wpw, bpw, bn1, bn2);
    const TensorD dir = random_tensor(out.shape(), rng);

    Tape<double> tape;
    auto vx = tape.parameter(x), v1 = tape.parameter(wdw), vb1 = tape.parameter(vec_tensor(bdw));
    auto v2 = tape.parameter(wpw), vb2 = tape.parameter(vec_tensor(bpw));
    auto g1 = tape.parameter(vec_tensor(bn1.gamma)), be1 = tape.parameter(vec_tensor(bn1.beta));
    auto g2 = tape.parameter(vec_tensor(bn2.gamma)), be2 = tape.parameter(vec_tensor(bn2.beta));
    auto y = tape.leaky_relu(tape.batch_norm(tape.conv2d(vx, v1, vb1, gdw), g1, be1, bn1), slope);
    y = tape.leaky_relu(tape.batch_norm(tape.conv2d(y, v2, vb2, {}), g2, be2, bn2), slope);
    tape.backward(tape.dot(y, tape.constant(dir)));

    auto loss = [&](auto&&... a) { return dotd(forward(a...), dir); };
    track(s, "input", tape.grad(vx), numeric_gradient([&](const TensorD& v) { return loss(v, wdw, bdw, wpw, bpw, bn1, bn2); }, x));
    track(s, "dw weights", tape.grad(v1), numeric_gradient([&](const TensorD& v) { return loss(x, v, bdw, wpw, bpw, bn1, bn2); }, wdw));
    track(s, "dw bias", tape.grad(vb1), numeric_gradient([&](const TensorD& v) { return loss(x, wdw, tensor_vec(v), wpw, bpw, bn1, bn2); }, vec_tensor(bdw)));
    track(s, "pw weights", tape.grad(v2), numeric_gradient([&](const TensorD& v) { return loss(x, wdw, bdw, v, bpw, bn1, bn2); }, wpw));
    track(s, "pw bias", tape.grad(vb2), numeric_gradient([&](const TensorD& v) { return loss(x, wdw, bdw, wpw, tensor_vec(v), bn1, bn2); }, vec_tensor(bpw)));
    track(s, "dw gamma", tape.grad(g1), numeric_gradient([&](const TensorD& v) {
            auto n = bn1; n.gamma = tensor_vec(v); return loss(x, wdw, bdw, wpw, bpw, n, bn2); }, vec_tensor(bn1.gamma)));
    track(s, "dw beta", tape.grad(be1), numeric_gradient([&](const TensorD& v) {
            auto n = bn1; n.beta = tensor_vec(v); return loss(x, wdw, bdw, wpw, bpw, n, bn2); }, vec_tensor(bn1.beta)));
    track(s, "pw gamma", tape.grad(g2), numeric_gradient([&](const TensorD& v) {
            auto n = bn2; n.gamma = tensor_vec(v); return loss(x, wdw, bdw, wpw, bpw, bn1, n); }, vec_tensor(bn2.gamma)));
    track(s, "pw beta", tape.grad(be2), numeric_gradient([&](const TensorD& v) {
            auto n = bn2; n.beta = tensor_vec(v); return loss(x, wdw, bdw, wpw, bpw, bn1, n); }, vec_tensor(bn2.beta)));
    ++s.instances;
  }
  return s;
}

namespace {

struct WarpCase {
  TensorD feature, flow, dir;
};

WarpCase warp_case(Rng& rng) {
  const int n = rand_int(rng, 1, 2), c = rand_int(rng, 1, 3), h = rand_int(rng, 3, 7), w = rand_int(rng, 3, 7);
  WarpCase wc;
  wc.feature = random_tensor({n, c, h, w}, rng);
  wc.flow = smooth_flow(n, h, w, rng, 2.0);
  wc.dir = random_tensor({n, c, h, w}, rng);
  return wc;
}

}  // namespace

GradStats grad_check_warp_feature(int instances, std::uint64_t seed) {
  GradStats s{.op = "bilinear_warp/feature"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const WarpCase wc = warp_case(rng);
    const FlowFieldD flow(wc.flow);
    const auto g = bilinear_warp_backward(wc.feature, flow, wc.dir);
    track(s, "feature", g.feature, numeric_gradient([&](const TensorD& v) {
            return dotd(bilinear_warp(v, flow), wc.dir); }, wc.feature));
    ++s.instances;
  }
  return s;
}

GradStats grad_check_warp_flow(int instances, std::uint64_t seed) {
  GradStats s{.op = "bilinear_warp/flow"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const WarpCase wc = warp_case(rng);
    const auto g = bilinear_warp_backward(wc.feature, FlowFieldD(wc.flow), wc.dir);
    track(s, "flow", g.flow, numeric_gradient([&](const TensorD& v) {
            return dotd(bilinear_warp(wc.feature, FlowFieldD(v)), wc.dir); }, wc.flow));
    ++s.instances;
  }
  return s;
}

GradStats grad_check_gru(int instances, std::uint64_t seed) {
  GradStats s{.op = "flow_guided_gru"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int d = rand_int(rng, 1, 3), h = rand_int(rng, 3, 5), w = rand_int(rng, 3, 5);
    auto p = GruParams<double>::random(d, rng, 0.5, 0.3);
    if (it % 4 == 3) p.candidate = GruCandidate::Tanh;
    const TensorD fc = random_tensor({1, d, h, w}, rng), fp = random_tensor({1, d, h, w}, rng);
    const TensorD fl = smooth_flow(1, h, w, rng, 1.5);
    const TensorD dir = random_tensor({1, d, h, w}, rng);

    Tape<double> tape;
    auto vars = gru_parameters(tape, p, true);
    auto vc = tape.parameter(fc), vp = tape.parameter(fp), vf = tape.parameter(fl);
    auto out = flow_guided_gru(tape, vc, vp, vf, vars);
    tape.backward(tape.dot(out, tape.constant(dir)));

    auto loss = [&](const TensorD& c, const TensorD& pr, const TensorD& f, const GruParams<double>& q) {
      return dotd(flow_guided_gru(c, pr, FlowFieldD(f), q), dir);
    };
    track(s, "f_cur", tape.grad(vc), numeric_gradient([&](const TensorD& v) { return loss(v, fp, fl, p); }, fc));
    track(s, "f_prev", tape.grad(vp), numeric_gradient([&](const TensorD& v) { return loss(fc, v, fl, p); }, fp));
    track(s, "flow", tape.grad(vf), numeric_gradient([&](const TensorD& v) { return loss(fc, fp, v, p); }, fl));
    const std::pair<const char*, std::pair<TensorD GruParams<double>::*, typename Tape<double>::Var GruVars<double>::*>> kernels[] = {
        {"Wz", {&GruParams<double>::wz, &GruVars<double>::wz}}, {"Uz", {&GruParams<double>::uz, &GruVars<double>::uz}},
        {"Wr", {&GruParams<double>::wr, &GruVars<double>::wr}}, {"Ur", {&GruParams<double>::ur, &GruVars<double>::ur}},
        {"Wh", {&GruParams<double>::wh, &GruVars<double>::wh}}, {"Uh", {&GruParams<double>::uh, &GruVars<double>::uh}}};
    for (const auto& [name, m] : kernels) {
      track(s, name, tape.grad(vars.*(m.second)), numeric_gradient([&](const TensorD& v) {
              auto q = p; q.*(m.first) = v; return loss(fc, fp, fl, q); }, p.*(m.first)));
    }
    const std::pair<const char*, std::pair<std::vector<double> GruParams<double>::*, typename Tape<double>::Var GruVars<double>::*>> biases[] = {
        {"bz", {&GruParams<double>::bz, &GruVars<double>::bz}},
        {"br", {&GruParams<double>::br, &GruVars<double>::br}},
        {"bh", {&GruParams<double>::bh, &GruVars<double>::bh}}};
    for (const auto& [name, m] : biases) {
      track(s, name, tape.grad(vars.*(m.second)), numeric_gradient([&](const TensorD& v) {
              auto q = p; q.*(m.first) = tensor_vec(v); return loss(fc, fp, fl, q); }, vec_tensor(p.*(m.first))));
    }
    ++s.instances;
  }
  return s;
}

GradStats grad_check_epe(int instances, std::uint64_t seed) {
  GradStats s{.op = "epe_loss"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const Shape sh{rand_int(rng, 1, 3), 2, rand_int(rng, 2, 6), rand_int(rng, 2, 6)};
    const TensorD pred = random_tensor(sh, rng, -3, 3), gt = random_tensor(sh, rng, -3, 3);
    const auto r = epe_loss(FlowFieldD(pred), FlowFieldD(gt));
    track(s, "pred", r.grad, numeric_gradient([&](const TensorD& v) {
            return epe_loss(FlowFieldD(v), FlowFieldD(gt)).value; }, pred));
    ++s.instances;
  }
  return s;
}

// ---- scalar references ------------------------------------------------------------

TensorD ref_conv2d(const TensorD& x, const TensorD& wt, const std::vector<double>& bias, ConvGeometry g) {
  const int n = x.n(), cin = x.c(), h = x.h(), w = x.w();
  const int cout = wt.n(), kh = wt.h(), kw = wt.w();
  const int cg = cin / g.groups, og = cout / g.groups;
  const int oh = (h + 2 * g.padding - kh) / g.stride + 1, ow = (w + 2 * g.padding - kw) / g.stride + 1;
  TensorD out({n, cout, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < cout; ++o) {
      const int grp = o / og;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int ci = 0; ci < cg; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = y * g.stride - g.padding + ky, ix = xx * g.stride - g.padding + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += wt(o, ci, ky, kx) * x(b, grp * cg + ci, iy, ix);
              }
          out(b, o, y, xx) = acc;
        }
    }
  return out;
}

TensorD ref_warp(const TensorD& f, const TensorD& flow) {
  TensorD out(f.shape());
  auto at = [&](int b, int c, int y, int x) {
    return (y < 0 || y >= f.h() || x < 0 || x >= f.w()) ? 0.0 : f(b, c, y, x);
  };
  for (int b = 0; b < f.n(); ++b)
    for (int y = 0; y < f.h(); ++y)
      for (int x = 0; x < f.w(); ++x) {
        const double sx = x + flow(b, 0, y, x), sy = y + flow(b, 1, y, x);
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double ax = sx - x0, ay = sy - y0;
        for (int c = 0; c < f.c(); ++c)
          out(b, c, y, x) = (1 - ay) * (1 - ax) * at(b, c, y0, x0) + (1 - ay) * ax * at(b, c, y0, x0 + 1) +
                            ay * (1 - ax) * at(b, c, y0 + 1, x0) + ay * ax * at(b, c, y0 + 1, x0 + 1);
      }
  return out;
}

TensorD ref_gru(const TensorD& fc, const TensorD& fp, const TensorD& flow, const GruParams<double>& p) {
  const ConvGeometry g{.stride = 1, .padding = 1, .groups = 1};
  const TensorD hw = ref_warp(fp, flow);
  const TensorD az = ref_conv2d(fc, p.wz, p.bz, g), bz = ref_conv2d(hw, p.uz, {}, g);
  const TensorD ar = ref_conv2d(fc, p.wr, p.br, g), br = ref_conv2d(hw, p.ur, {}, g);
  TensorD z(fc.shape()), r(fc.shape()), rh(fc.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.values()[i] = 1.0 / (1.0 + std::exp(-(az.values()[i] + bz.values()[i])));
    r.values()[i] = 1.0 / (1.0 + std::exp(-(ar.values()[i] + br.values()[i])));
    rh.values()[i] = r.values()[i] * hw.values()[i];
  }
  const TensorD ah = ref_conv2d(fc, p.wh, p.bh, g), bh = ref_conv2d(rh, p.uh, {}, g);
  TensorD out(fc.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double pre = ah.values()[i] + bh.values()[i];
    const double cand = p.candidate == GruCandidate::Relu ? std::max(0.0, pre) : std::tanh(pre);
    out.values()[i] = (1 - z.values()[i]) * hw.values()[i] + z.values()[i] * cand;
  }
  return out;
}

TensorD ref_psroi(const TensorD& maps, const std::vector<Box>& rois, double image_w, double image_h,
                  int bins, int samples, int stride) {
  const int dim = maps.c() / (bins * bins);
  const int H = maps.h(), W = maps.w();
  TensorD out({static_cast<int>(rois.size()), dim, bins, bins});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const double x1 = std::clamp(rois[r].x1, 0.0, image_w), x2 = std::clamp(rois[r].x2, 0.0, image_w);
    const double y1 = std::clamp(rois[r].y1, 0.0, image_h), y2 = std::clamp(rois[r].y2, 0.0, image_h);
    for (int i = 0; i < bins; ++i)
      for (int j = 0; j < bins; ++j)
        for (int k = 0; k < dim; ++k) {
          const int ch = (i * bins + j) * dim + k;
          double sum = 0.0;
          for (int sy = 0; sy < samples; ++sy)
            for (int sx = 0; sx < samples; ++sx) {
              // sample point in image pixels, then onto the feature grid
              const double px = x1 + (x2 - x1) * (j + (sx + 0.5) / samples) / bins;
              const double py = y1 + (y2 - y1) * (i + (sy + 0.5) / samples) / bins;
              const double fx = std::min(std::max(px / stride - 0.5, 0.0), W - 1.0);
              const double fy = std::min(std::max(py / stride - 0.5, 0.0), H - 1.0);
              const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
              const int xb = x0 + 1 < W ? x0 + 1 : x0, yb = y0 + 1 < H ? y0 + 1 : y0;
              const double ax = fx - x0, ay = fy - y0;
              sum += maps(0, ch, y0, x0) * (1 - ax) * (1 - ay) + maps(0, ch, y0, xb) * ax * (1 - ay) +
                     maps(0, ch, yb, x0) * (1 - ax) * ay + maps(0, ch, yb, xb) * ax * ay;
            }
          out(static_cast<int>(r), k, i, j) = sum / (samples * samples);
        }
  }
  return out;
}

double ref_iou(const Box& a, const Box& b) {
  const double area_a = std::max(0.0, a.x2 - a.x1) * std::max(0.0, a.y2 - a.y1);
  const double area_b = std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (area_a + area_b - inter);
}

std::vector<int> ref_nms(const std::vector<Box>& boxes, const std::vector<float>& scores, double thresh) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<int> keep;
  while (true) {
    int best = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)])) best = static_cast<int>(i);
    if (best < 0) break;
    keep.push_back(best);
    alive[static_cast<std::size_t>(best)] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && ref_iou(boxes[static_cast<std::size_t>(best)], boxes[i]) > thresh) alive[i] = false;
  }
  return keep;
}

// ---- property suites ----------------------------------------------------------------

namespace {

void fail(PropertyStats& s, const std::string& what) {
  if (s.failures++ == 0) s.first_failure = what;
}

}  // namespace

PropertyStats warp_zero_flow_identity(int instances, std::uint64_t seed) {
  PropertyStats s{.name = "warp zero-flow identity"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const Shape sh{rand_int(rng, 1, 2), rand_int(rng, 1, 8), rand_int(rng, 1, 12), rand_int(rng, 1, 12)};
    Tensor f(sh);
    std::normal_distribution<float> nd(0.f, 3.f);
    for (auto& v : f.values()) v = nd(rng);
    const Tensor out = bilinear_warp(f, FlowField::zeros(sh.n, sh.h, sh.w));
    if (!(out.shape() == sh) || !std::equal(out.values().begin(), out.values().end(), f.values().begin()))
      fail(s, "instance " + std::to_string(it) + " " + sh.str());
    ++s.instances;
  }
  return s;
}

PropertyStats warp_integer_shift(int instances, std::uint64_t seed) {
  PropertyStats s{.name = "warp integer shift"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const Shape sh{1, rand_int(rng, 1, 6), rand_int(rng, 2, 12), rand_int(rng, 2, 12)};
    Tensor f(sh);
    std::normal_distribution<float> nd(0.f, 3.f);
    for (auto& v : f.values()) v = nd(rng);
    // per-pixel integer displacements, some pointing off the grid
    FlowField flow = FlowField::zeros(1, sh.h, sh.w);
    for (int y = 0; y < sh.h; ++y)
      for (int x = 0; x < sh.w; ++x) {
        flow.tensor()(0, 0, y, x) = static_cast<float>(rand_int(rng, -4, 4));
        flow.tensor()(0, 1, y, x) = static_cast<float>(rand_int(rng, -4, 4));
      }
    const Tensor out = bilinear_warp(f, flow);
    bool ok = true;
    for (int c = 0; c < sh.c && ok; ++c)
      for (int y = 0; y < sh.h && ok; ++y)
        for (int x = 0; x < sh.w && ok; ++x) {
          const int sy = y + static_cast<int>(flow.dy(0, y, x)), sx = x + static_cast<int>(flow.dx(0, y, x));
          const float want = (sy >= 0 && sy < sh.h && sx >= 0 && sx < sh.w) ? f(0, c, sy, sx) : 0.f;
          if (out(0, c, y, x) != want) ok = false;
        }
    if (!ok) fail(s, "instance " + std::to_string(it) + " " + sh.str());
    ++s.instances;
  }
  return s;
}

PropertyStats gru_gate_and_convexity(int instances, std::uint64_t seed) {
  PropertyStats s{.name = "gru gates and convex combination"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int d = rand_int(rng, 1, 6), h = rand_int(rng, 2, 8), w = rand_int(rng, 2, 8);
    auto p = GruParams<double>::random(d, rng, 1.5, 1.0);
    if (it % 2) p.candidate = GruCandidate::Tanh;
    const TensorD fc = random_tensor({1, d, h, w}, rng, -4, 4), fp = random_tensor({1, d, h, w}, rng, -4, 4);
    const TensorD fl = random_tensor({1, 2, h, w}, rng, -3, 3);
    const auto t = flow_guided_gru_trace(fc, fp, FlowFieldD(fl), p);
    bool ok = true;
    for (std::size_t i = 0; i < t.output.size(); ++i) {
      const double z = t.z.values()[i], r = t.r.values()[i];
      if (!(z >= 0.0 && z <= 1.0 && r >= 0.0 && r <= 1.0)) ok = false;
      const double a = t.warped.values()[i], b = t.candidate.values()[i], o = t.output.values()[i];
      const double slack = 1e-12 * (std::abs(a) + std::abs(b));
      if (o < std::min(a, b) - slack || o > std::max(a, b) + slack) {
        ok = false;
        s.max_error = std::max(s.max_error, std::max(std::min(a, b) - o, o - std::max(a, b)));
      }
    }
    if (!ok) fail(s, "instance " + std::to_string(it));
    ++s.instances;
  }
  return s;
}

PropertyStats nms_matches_reference(int trials, int max_boxes, std::uint64_t seed) {
  PropertyStats s{.name = "nms vs brute force"};
  Rng rng(seed);
  for (int it = 0; it < trials; ++it) {
    const int n = it == 0 ? 0 : rand_int(rng, 1, max_boxes);
    // coarse coordinates and scores: plenty of overlaps and exact ties
    const int extent = rand_int(rng, 20, 200);
    std::vector<Box> boxes;
    std::vector<float> scores;
    for (int i = 0; i < n; ++i) {
      const double x1 = rand_int(rng, 0, extent), y1 = rand_int(rng, 0, extent);
      boxes.push_back({x1, y1, x1 + rand_int(rng, 1, 60), y1 + rand_int(rng, 1, 60)});
      scores.push_back(static_cast<float>(rand_int(rng, 0, 20)) / 20.f);
    }
    const double thresh = std::array{0.3, 0.5, 0.7, 0.0, 0.9}[static_cast<std::size_t>(it % 5)];
    if (nms(boxes, scores, thresh) != ref_nms(boxes, scores, thresh))
      fail(s, "trial " + std::to_string(it) + " n=" + std::to_string(n));
    ++s.instances;
  }
  return s;
}

PropertyStats psroi_matches_reference(int instances, std::uint64_t seed, double tol) {
  PropertyStats s{.name = "psroi_warp vs scalar reference"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int bins = rand_int(rng, 1, 4), dim = rand_int(rng, 1, 3), samples = rand_int(rng, 1, 3);
    const int stride = std::array{4, 8, 16}[static_cast<std::size_t>(rand_int(rng, 0, 2))];
    const int H = rand_int(rng, 2, 9), W = rand_int(rng, 2, 9);
    const double iw = W * stride, ih = H * stride;
    const TensorD maps = random_tensor({1, bins * bins * dim, H, W}, rng);
    std::vector<Box> rois;
    std::uniform_real_distribution<double> ux(-10, iw + 10), uy(-10, ih + 10);
    while (static_cast<int>(rois.size()) < rand_int(rng, 1, 6)) {
      Box b{ux(rng), uy(rng), ux(rng), uy(rng)};
      if (b.x2 < b.x1) std::swap(b.x1, b.x2);
      if (b.y2 < b.y1) std::swap(b.y1, b.y2);
      if (clip_box(b, iw, ih).area() > 1e-3) rois.push_back(b);
    }
    const TensorD got = psroi_warp(maps, rois, iw, ih, bins, samples, stride);
    const TensorD want = ref_psroi(maps, rois, iw, ih, bins, samples, stride);
    double err = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got.values()[i] - want.values()[i]));
    s.max_error = std::max(s.max_error, err);
    if (!(got.shape() == want.shape()) || err >= tol) fail(s, "instance " + std::to_string(it));
    ++s.instances;
  }
  return s;
}

PropertyStats gru_matches_reference(int instances, std::uint64_t seed, double tol) {
  PropertyStats s{.name = "flow_guided_gru vs scalar reference"};
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int d = rand_int(rng, 1, 5), h = rand_int(rng, 2, 7), w = rand_int(rng, 2, 7);
    auto p = GruParams<double>::random(d, rng, 0.8, 0.5);
    if (it % 3 == 2) p.candidate = GruCandidate::Tanh;
    const TensorD fc = random_tensor({1, d, h, w}, rng), fp = random_tensor({1, d, h, w}, rng);
    const TensorD fl = random_tensor({1, 2, h, w}, rng, -2.5, 2.5);
    const TensorD got = flow_guided_gru(fc, fp, FlowFieldD(fl), p);
    const TensorD want = ref_gru(fc, fp, fl, p);
    double err = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got.values()[i] - want.values()[i]));
    s.max_error = std::max(s.max_error, err);
    if (err >= tol) fail(s, "instance " + std::to_string(it));
    ++s.instances;
  }
  return s;
}

// ---- executed vs counted multiply-adds ----------------------------------------------

namespace {

Tensor random_frame(int h, int w, Rng& rng) {
  Tensor t({1, 3, h, w});
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

MacCheck mac_check_light_flow(double beta, int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  const auto spec = build_light_flow(beta);
  const auto params = init_light_flow(spec, seed);
  const Tensor a = random_frame(height, width, rng), b = random_frame(height, width, rng);
  MacCheck m{.network = "light_flow"};
  {
    instrument::MacCountScope scope;
    (void)predict_flow(a, b, spec, params);
    m.executed = scope.count();
  }
  m.analyzed = count_network(spec.graph, {{spec.input, {1, 6, height, width}}}).conv_macs();
  return m;
}

MacCheck mac_check_backbone(double alpha, int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  DetectorConfig cfg;
  cfg.alpha = alpha;
  const auto spec = build_detector(cfg);
  const auto params = init_detector(spec, seed);
  const Tensor img = random_frame(height, width, rng);
  MacCheck m{.network = "backbone"};
  {
    instrument::MacCountScope scope;
    (void)extract_features(img, spec, params);
    m.executed = scope.count();
  }
  m.analyzed = count_network(spec.backbone, {{"image", {1, 3, height, width}}}).conv_macs();
  return m;
}

MacCheck mac_check_gru(int feature_width, int gru_width, int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  AggregatorConfig cfg;
  cfg.feature_width = feature_width;
  cfg.gru_width = gru_width;
  const auto agg = Aggregator::from_params(cfg, init_aggregator(cfg, seed));
  Tensor f({1, feature_width, height, width}), prev({1, gru_width, height, width});
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : f.values()) v = u(rng);
  for (auto& v : prev.values()) v = u(rng);
  FlowField flow = FlowField::zeros(1, height, width);
  for (auto& v : flow.tensor().values()) v = 2.f * u(rng);
  MacCheck m{.network = "gru"};
  {
    instrument::MacCountScope scope;
    (void)agg.step(f, &prev, &flow);
    m.executed = scope.count();
  }
  m.analyzed = count_network(build_gru_graph(cfg), {{"feat", f.shape()},
                                                    {"prev", prev.shape()},
                                                    {"gru_flow", flow.shape()}})
                   .conv_macs();
  return m;
}

// ---- driver ----------------------------------------------------------------------------

std::vector<SuiteLine> run_selftest(int instances, std::uint64_t seed) {
  std::vector<SuiteLine> out;
  auto grad = [&](const GradStats& g) {
    out.push_back({"gradient " + g.op, g.instances >= instances && g.max_rel_error < 1e-4,
                   std::to_string(g.instances) + " instances, max rel error " + fmt(g.max_rel_error) +
                       " (" + g.worst + ")"});
  };
  grad(grad_check_conv2d(instances, seed + 1));
  grad(grad_check_depthwise_separable(instances, seed + 2));
  grad(grad_check_warp_feature(instances, seed + 3));
  grad(grad_check_warp_flow(instances, seed + 4));
  grad(grad_check_gru(instances, seed + 5));
  grad(grad_check_epe(instances, seed + 6));

  auto prop = [&](const PropertyStats& p) {
    std::string d = std::to_string(p.instances) + " instances, " + std::to_string(p.failures) + " failures";
    if (p.max_error > 0) d += ", max error " + fmt(p.max_error);
    if (!p.first_failure.empty()) d += ", first: " + p.first_failure;
    out.push_back({p.name, p.passed(), d});
  };
  prop(warp_zero_flow_identity(100, seed + 7));
  prop(warp_integer_shift(100, seed + 8));
  prop(gru_gate_and_convexity(100, seed + 9));
  prop(nms_matches_reference(100, 500, seed + 10));
  prop(psroi_matches_reference(100, seed + 11));
  prop(gru_matches_reference(100, seed + 12));

  for (const auto& m : {mac_check_light_flow(0.5, 64, 96, seed), mac_check_backbone(0.5, 64, 96, seed),
                        mac_check_gru(16, 24, 6, 7, seed)})
    out.push_back({"mac count " + m.network, m.passed(),
                   "executed " + std::to_string(m.executed) + ", analyzer " + std::to_string(m.analyzed)});
  return out;
}

void print_suite(std::ostream& os, const std::vector<SuiteLine>& lines) {
  for (const auto& l : lines) os << (l.passed ? "PASS " : "FAIL ") << l.name << ": " << l.detail << "\n";
}

}  // namespace mvod::checks

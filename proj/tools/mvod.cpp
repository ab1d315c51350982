// mvod: cost analysis, video inference, toy flow training, sweeps and self checks.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mvod/analyzer.hpp"
#include "mvod/checks.hpp"
#include "mvod/light_flow.hpp"
#include "mvod/pipeline.hpp"
#include "mvod/runtime.hpp"

using namespace mvod;

namespace {

struct Dims {
  int width = 0, height = 0;
};

Dims parse_dims(const std::string& s) {
  const auto x = s.find_first_of("xX");
  Dims d;
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    std::size_t p1 = 0, p2 = 0;
    d.width = std::stoi(s.substr(0, x), &p1);
    d.height = std::stoi(s.substr(x + 1), &p2);
    if (p1 != x || p2 != s.size() - x - 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw CLI::ValidationError("--input", "expected WIDTHxHEIGHT, got '" + s + "'");
  }
  if (d.width <= 0 || d.height <= 0) throw CLI::ValidationError("--input", "dimensions must be positive");
  return d;
}

const auto kUnitInterval = CLI::Validator(
    [](std::string& s) -> std::string {
      double v = 0;
      try {
        v = std::stod(s);
      } catch (const std::exception&) {
        return "not a number: " + s;
      }
      return (v > 0.0 && v <= 1.0) ? "" : "must lie in (0, 1]";
    },
    "(0,1]");

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    // a:b expands to the integers a..b
    if (auto c = item.find(':'); c != std::string::npos) {
      const int a = std::stoi(item.substr(0, c)), b = std::stoi(item.substr(c + 1));
      for (int v = a; v <= b; ++v) out.push_back(v);
      continue;
    }
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw CLI::ValidationError(what, "bad list entry '" + item + "'");
    }
  }
  if (out.empty()) throw CLI::ValidationError(what, "empty list");
  return out;
}

void print_totals(std::ostream& os, const char* label, const CostReport& r) {
  os << label << ": params " << r.params << " (" << format_millions(r.params) << "), flops " << r.flops
     << " (" << format_billions(static_cast<double>(r.flops)) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mobile video object detection: cost analysis, inference and checks"};
  app.require_subcommand(1);
  int threads = 0;
  std::string config_path;
  app.add_option("--threads", threads, "kernel worker threads (default: MVOD_NUM_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_option("--config", config_path, "key = value file with pipeline / detector settings")
      ->check(CLI::ExistingFile);

  // shared system knobs
  double alpha = 1.0, beta = 1.0;
  int key_interval = 10;

  // ---- analyze ----
  auto* analyze = app.add_subcommand("analyze", "parameter and FLOP counts");
  std::string net = "system", input;
  bool no_flow = false, no_gru = false, unscaled = false, elementwise = false, csv = false, totals_only = false;
  int rois = 0, gru_width = 0, gru_layers = 1;
  analyze->add_option("--net", net, "light-flow | flownet | flownet-half | system | detector | gru")
      ->check(CLI::IsMember({"light-flow", "flownet", "flownet-half", "system", "detector", "gru"}));
  auto* a_alpha = analyze->add_option("--alpha", alpha, "recognition width multiplier")->check(kUnitInterval);
  auto* a_beta = analyze->add_option("--beta", beta, "flow width multiplier")->check(kUnitInterval);
  auto* a_l = analyze->add_option("--l", key_interval, "key frame duration")->check(CLI::PositiveNumber);
  analyze->add_option("--input", input, "WIDTHxHEIGHT (default 512x384 for flow nets, 400x224 otherwise)");
  analyze->add_flag("--no-flow", no_flow, "every frame runs the full detector");
  analyze->add_flag("--no-gru", no_gru, "no aggregation on key frames");
  analyze->add_flag("--unscaled-interface", unscaled, "keep the 128-d fusion maps at 128 for every alpha");
  analyze->add_flag("--include-elementwise", elementwise, "count BN, activations, upsampling and gates");
  analyze->add_option("--rois", rois, "regions per frame charged to per-region layers")->check(CLI::NonNegativeNumber);
  auto* a_gw = analyze->add_option("--gru-width", gru_width, "GRU width (0 = feature width)")->check(CLI::NonNegativeNumber);
  auto* a_gl = analyze->add_option("--gru-layers", gru_layers, "stacked GRU cells")->check(CLI::PositiveNumber);
  analyze->add_flag("--csv", csv, "per-layer CSV instead of the table");
  analyze->add_flag("--totals-only", totals_only, "skip the per-layer listing");

  // ---- run ----
  auto* run = app.add_subcommand("run", "detect objects in a frame sequence");
  std::string run_input, run_output = "-", checkpoint, flow_checkpoint, save_ckpt, summary_csv;
  bool random_weights = false;
  std::uint64_t seed = 0;
  int shorter_side = 224;
  double score_threshold = -1;
  run->add_option("--input", run_input, "directory of numbered PNG/PPM frames or a tensor stream")->required();
  run->add_option("--output", run_output, "detection records (default stdout)");
  auto* r_ckpt = run->add_option("--checkpoint", checkpoint, "full system checkpoint")->check(CLI::ExistingFile);
  auto* r_rand = run->add_flag("--random-weights", random_weights, "initialize every network from --seed");
  r_ckpt->excludes(r_rand);
  run->add_option("--flow-checkpoint", flow_checkpoint, "Light Flow weights (e.g. from train-flow)")
      ->check(CLI::ExistingFile);
  auto* r_seed = run->add_option("--seed", seed, "weight seed");
  auto* r_alpha = run->add_option("--alpha", alpha)->check(kUnitInterval);
  auto* r_beta = run->add_option("--beta", beta)->check(kUnitInterval);
  auto* r_l = run->add_option("--l", key_interval, "key frame duration")->check(CLI::PositiveNumber);
  auto* r_side = run->add_option("--shorter-side", shorter_side, "resize target, 0 keeps the source size")
                     ->check(CLI::NonNegativeNumber);
  auto* r_thr = run->add_option("--score-threshold", score_threshold)->check(CLI::Range(0.0, 1.0));
  auto* r_nogru = run->add_flag("--no-gru", no_gru, "skip aggregation on key frames");
  run->add_option("--save-checkpoint", save_ckpt, "write the weights used");
  run->add_option("--summary-csv", summary_csv, "append a CSV summary row");

  // ---- train-flow ----
  auto* train = app.add_subcommand("train-flow", "train Light Flow on synthetic translation pairs");
  double t_beta = 0.25;
  SyntheticConfig syn;
  TrainConfig tc;
  int log_every = 50;
  std::string t_out;
  train->add_option("--beta", t_beta)->check(kUnitInterval);
  train->add_option("--size", syn.height, "square frame size")->check(CLI::Range(16, 1024));
  train->add_option("--pairs", syn.count)->check(CLI::PositiveNumber);
  train->add_option("--max-shift", syn.max_shift)->check(CLI::PositiveNumber);
  train->add_option("--patches", syn.patches, "independently moving patches per pair")->check(CLI::NonNegativeNumber);
  train->add_option("--iterations", tc.iterations)->check(CLI::PositiveNumber);
  train->add_option("--batch", tc.batch)->check(CLI::PositiveNumber);
  train->add_option("--lr", tc.learning_rate)->check(CLI::PositiveNumber);
  train->add_option("--weight-decay", tc.weight_decay)->check(CLI::NonNegativeNumber);
  train->add_option("--seed", tc.seed);
  train->add_option("--log-every", log_every)->check(CLI::NonNegativeNumber);
  train->add_option("--output", t_out, "checkpoint path for the trained weights");

  // ---- sweep ----
  auto* sweep = app.add_subcommand("sweep", "CSV of costs over a configuration grid");
  std::string s_alpha = "1.0,0.75,0.5", s_beta = "1.0,0.75,0.5", s_l = "10", s_input = "400x224";
  bool s_unscaled = false, s_nogru = false;
  sweep->add_option("--alpha", s_alpha, "comma list");
  sweep->add_option("--beta", s_beta, "comma list");
  sweep->add_option("--l", s_l, "comma list, a:b for a range");
  sweep->add_option("--input", s_input, "comma list of WIDTHxHEIGHT");
  sweep->add_flag("--unscaled-interface", s_unscaled);
  sweep->add_flag("--no-gru", s_nogru);

  // ---- selftest ----
  auto* selftest = app.add_subcommand("selftest", "gradient checks, invariants and oracle comparisons");
  int instances = 20;
  std::uint64_t st_seed = 0;
  selftest->add_option("--instances", instances, "random instances per gradient check")->check(CLI::PositiveNumber);
  selftest->add_option("--seed", st_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (threads > 0) runtime::set_thread_count(threads);
    PipelineConfig base;
    if (!config_path.empty()) base = load_pipeline_config(config_path, base);

    if (*analyze) {
      if (!a_alpha->count()) alpha = base.alpha;
      if (!a_beta->count()) beta = base.beta;
      if (!a_l->count()) key_interval = base.key_interval;
      if (!a_gw->count()) gru_width = base.gru_width;
      if (!a_gl->count()) gru_layers = base.gru_layers;
      if (!config_path.empty() && !base.use_gru) no_gru = true;
      const bool flow_net = net == "light-flow" || net == "flownet" || net == "flownet-half";
      const Dims d = parse_dims(!input.empty() ? input : flow_net ? "512x384" : "400x224");
      CountOptions opts{.include_elementwise = elementwise, .rois_per_frame = rois};
      auto emit = [&](const CostReport& r) {
        if (csv) print_report_csv(std::cout, r);
        else if (!totals_only) print_report_table(std::cout, r);
      };

      if (flow_net) {
        NetworkGraph g = net == "light-flow" ? build_light_flow(beta).graph
                         : net == "flownet"  ? build_flownet(1.0)
                                             : build_flownet(0.5);
        CostReport r = count_network(g, {{"images", {1, 6, d.height, d.width}}}, opts);
        r.config["input"] = std::to_string(d.width) + "x" + std::to_string(d.height);
        if (net == "light-flow") r.config["beta"] = std::to_string(beta);
        emit(r);
        if (!csv) print_totals(std::cout, "total", r);
        if (!csv && net != "light-flow") {
          const auto lf = count_network(build_light_flow(1.0).graph, {{"images", {1, 6, d.height, d.width}}}, opts);
          std::cout << "speedup over Light Flow (beta 1.0): " << std::fixed << std::setprecision(2)
                    << speedup_ratio(r, lf) << "x\n";
        }
        return 0;
      }
      if (net == "detector" || net == "gru") {
        DetectorConfig dc;
        dc.alpha = alpha;
        dc.scale_interface = !unscaled;
        const auto det = build_detector(dc);
        const auto bb = count_network(det.backbone, {{"image", {1, 3, d.height, d.width}}}, opts);
        const Shape feat = bb.layers.back().output;
        CostReport r;
        if (net == "detector") {
          r.network = "detector";
          r.append(bb, "backbone/");
          const auto trunk = count_network(det.rpn_trunk, {{"feature", feat}}, opts);
          const auto lh = count_network(det.lighthead, {{"feature", feat}}, opts);
          r.append(trunk, "rpn/");
          r.append(lh, "lighthead/");
          r.append(count_network(det.rpn_head, {{"rpn_conv", trunk.layers.back().output}}, opts), "rpn/");
          r.append(count_network(det.rcnn, {{"lh_maps", lh.layers.back().output}}, opts), "rcnn/");
        } else {
          AggregatorConfig ac;
          ac.feature_width = feat.c;
          ac.gru_width = gru_width > 0 ? gru_width : feat.c;
          ac.layers = gru_layers;
          r = count_network(build_gru_graph(ac), {{"feat", feat},
                                                  {"prev", {1, ac.gru_width, feat.h, feat.w}},
                                                  {"gru_flow", {1, 2, feat.h, feat.w}}},
                            opts);
        }
        emit(r);
        if (!csv) print_totals(std::cout, "total", r);
        return 0;
      }
      // system
      if (d.height % 16 || d.width % 16)
        throw std::invalid_argument("system input must be a multiple of 16 in both dimensions");
      SystemConfig sc;
      sc.alpha = alpha;
      sc.beta = beta;
      sc.key_interval = key_interval;
      sc.height = d.height;
      sc.width = d.width;
      sc.use_flow = !no_flow;
      sc.use_gru = !no_gru;
      sc.scale_interface = !unscaled;
      sc.gru_width = gru_width;
      sc.gru_layers = gru_layers;
      sc.counting = opts;
      const SystemCost cost = amortized_cost(sc);
      emit(cost.key);
      if (sc.use_flow) emit(cost.nonkey);
      if (!csv) {
        print_totals(std::cout, "key frame", cost.key);
        if (sc.use_flow) print_totals(std::cout, "non-key frame", cost.nonkey);
        std::cout << "system params " << cost.params << " (" << format_millions(cost.params) << ")\n"
                  << "per-frame flops " << std::fixed << std::setprecision(0) << cost.per_frame_flops << " ("
                  << format_billions(cost.per_frame_flops) << ")\n";
      }
      return 0;
    }

    if (*run) {
      PipelineConfig cfg = base;
      if (r_alpha->count()) cfg.alpha = alpha;
      if (r_beta->count()) cfg.beta = beta;
      if (r_l->count()) cfg.key_interval = key_interval;
      if (r_side->count()) cfg.frames.shorter_side = shorter_side;
      if (r_thr->count()) cfg.detector.score_threshold = score_threshold;
      if (r_seed->count()) cfg.seed = seed;
      if (r_nogru->count()) cfg.use_gru = false;
      cfg.validate();
      if (checkpoint.empty() && !random_weights)
        throw std::invalid_argument("run needs --checkpoint or --random-weights");
      PipelineNets nets = checkpoint.empty() ? PipelineNets::random(cfg)
                                             : PipelineNets::from_params(cfg, load_checkpoint(checkpoint));
      if (!flow_checkpoint.empty()) {
        ParamStore fp = load_checkpoint(flow_checkpoint);
        validate_params(nets.flow.graph, nets.flow.input_channels(), fp);
        nets.flow_params = std::move(fp);
      }
      if (!save_ckpt.empty()) save_checkpoint(save_ckpt, nets.to_params());

      FrameSequence frames = load_frame_sequence(run_input, cfg.frames);
      std::ofstream file;
      std::ostream* sink = &std::cout;
      if (run_output != "-") {
        file.open(run_output);
        if (!file) throw std::runtime_error("cannot open " + run_output + " for writing");
        sink = &file;
      }
      const RunSummary s = run_video(cfg, frames, nets, *sink);
      std::ostream& log = run_output == "-" ? std::cerr : std::cout;
      write_summary(log, s, cfg);
      if (!summary_csv.empty()) {
        const bool fresh = !std::filesystem::exists(summary_csv);
        std::ofstream c(summary_csv, std::ios::app);
        if (!c) throw std::runtime_error("cannot open " + summary_csv);
        if (fresh) c << summary_csv_header() << "\n";
        c << summary_csv_row(s, cfg) << "\n";
      }
      return 0;
    }

    if (*train) {
      syn.width = syn.height;
      syn.seed = tc.seed;
      const auto spec = build_light_flow(t_beta);
      const auto data = make_synthetic_pairs(syn);
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult r = train_toy(spec, init_light_flow(spec, tc.seed), data, tc, [&](int it, double epe) {
        if (log_every > 0 && (it + 1) % log_every == 0)
          std::cout << "iter " << it + 1 << " batch_epe " << std::fixed << std::setprecision(4) << epe << "\n";
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << std::fixed << std::setprecision(4) << "initial_epe = " << r.initial_epe << "\n"
                << "final_epe = " << r.final_epe << "\n"
                << "ratio = " << r.final_epe / r.initial_epe << "\n"
                << "iterations = " << r.iterations << "\n"
                << std::setprecision(1) << "seconds = " << secs << "\n";
      if (!t_out.empty()) save_checkpoint(t_out, r.params);
      return 0;
    }

    if (*sweep) {
      std::cout << "alpha,beta,l,width,height,params,key_flops,nonkey_flops,avg_flops\n";
      std::vector<Dims> dims;
      std::stringstream ss(s_input);
      for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) dims.push_back(parse_dims(item));
      for (const Dims& d : dims)
        for (double a : parse_list(s_alpha, "--alpha"))
          for (double b : parse_list(s_beta, "--beta"))
            for (double l : parse_list(s_l, "--l")) {
              if (!(a > 0 && a <= 1) || !(b > 0 && b <= 1) || l < 1)
                throw std::invalid_argument("sweep: alpha, beta must lie in (0, 1] and l >= 1");
              SystemConfig sc;
              sc.alpha = a;
              sc.beta = b;
              sc.key_interval = static_cast<int>(l);
              sc.width = d.width;
              sc.height = d.height;
              sc.scale_interface = !s_unscaled;
              sc.use_gru = !s_nogru;
              const auto c = amortized_cost(sc);
              std::cout << a << ',' << b << ',' << sc.key_interval << ',' << d.width << ',' << d.height << ','
                        << c.params << ',' << c.key.flops << ',' << c.nonkey.flops << ',' << std::fixed
                        << std::setprecision(1) << c.per_frame_flops << std::defaultfloat << "\n";
            }
      return 0;
    }

    if (*selftest) {
      const auto lines = checks::run_selftest(instances, st_seed);
      checks::print_suite(std::cout, lines);
      bool ok = true;
      for (const auto& l : lines) ok = ok && l.passed;
      std::cout << (ok ? "selftest passed" : "selftest FAILED") << "\n";
      return ok ? 0 : 1;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

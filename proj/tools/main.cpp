// Command-line surface for the kernel library: configuration counting,
// scaling benchmarks, gradient certification, a synthetic end-to-end training
// demo, attention-density map emission and the Fréchet metric.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vana/attention.hpp"
#include "vana/demo.hpp"
#include "vana/gradsuite.hpp"
#include "vana/metrics.hpp"
#include "vana/nbhd.hpp"
#include "vana/rollout.hpp"
#include "vana/runtime.hpp"

namespace {

// Stable shortest-roundtrip formatting so reruns are byte-identical.
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<vana::NeighborhoodSpec> per_head_specs(const vana::HydraConfig& config) {
  std::vector<vana::NeighborhoodSpec> specs;
  for (const auto& g : config.groups)
    for (int h = 0; h < g.heads; ++h) specs.push_back(g.spec);
  return specs;
}

int cmd_configs(const std::vector<int>& resolutions, const std::string& layout_path) {
  try {
    for (int r : resolutions)
      std::cout << "resolution " << r << ": configs " << vana::count_head_configs(r) << "\n";
    if (!layout_path.empty()) {
      const vana::ArchLayout layout = vana::parse_layout_file(layout_path);
      for (const auto& level : layout.levels)
        std::cout << "level " << level.resolution << " (" << level.heads
                  << " heads): configs " << vana::count_head_configs(level.resolution) << "\n";
      std::cout << "layout total: "
                << vana::count_arch_configs(layout.levels, layout.transformers_per_level)
                << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "configs: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

struct BenchArgs {
  std::string kind = "na";
  std::vector<int> size = {16, 16};
  int d_model = 32;
  int heads = 1;
  int kernel = 3;
  int dilation = 1;
  std::string hydra;
  int repeats = 3;
  std::string csv;
};

int cmd_bench(const BenchArgs& args) {
  using Clock = std::chrono::steady_clock;
  try {
    const std::int64_t H = args.size.at(0), W = args.size.at(1);
    const std::int64_t n = H * W;
    vana::Rng rng(0);

    vana::HydraConfig config;
    vana::CostEstimate cost;
    if (args.kind == "dense") {
      config.groups = {{args.heads, {1, 1}}};
      cost = vana::mha_dense_cost(n, args.d_model, args.heads);
    } else if (args.kind == "na") {
      config.groups = {{args.heads, {args.kernel, args.dilation}}};
      config.groups[0].spec.require_valid(H);
      config.groups[0].spec.require_valid(W);
      cost = vana::na_cost(n, args.d_model, args.heads, args.kernel);
    } else if (args.kind == "hydra") {
      if (args.hydra.empty()) throw vana::ValueError("bench: --kind hydra needs --hydra spec");
      config = vana::parse_hydra_spec(args.hydra);
      for (const auto& g : config.groups) {
        g.spec.require_valid(H);
        g.spec.require_valid(W);
      }
      cost = vana::hydra_cost(n, args.d_model, config);
    } else {
      throw vana::ValueError("bench: unknown kind '" + args.kind + "'");
    }
    if (args.d_model % config.total_heads() != 0)
      throw vana::ValueError("bench: d_model not divisible by head count");

    // Benchmarks run in 32-bit; numeric verification lives in the test suite.
    using T = float;
    vana::AttentionParams<T> params =
        vana::init_attention_params<T>(args.d_model, config, rng, T(0.05));
    std::vector<std::int64_t> times;
    if (args.kind == "dense") {
      const vana::Tensor<T> x = vana::randn<T>({n, args.d_model}, rng, T(0.5));
      for (int r = 0; r < std::max(1, args.repeats); ++r) {
        const auto t0 = Clock::now();
        const auto out = vana::mha_dense(x, params, args.heads);
        times.push_back(
            std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
        if (out.y.size() != x.size()) throw std::runtime_error("bench: bad output");
      }
    } else {
      const vana::Tensor<T> x = vana::randn<T>({H, W, args.d_model}, rng, T(0.5));
      for (int r = 0; r < std::max(1, args.repeats); ++r) {
        const auto t0 = Clock::now();
        const auto out = vana::hydra_forward_2d(x, params, config);
        times.push_back(
            std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
        if (out.y.size() != x.size()) throw std::runtime_error("bench: bad output");
      }
    }
    std::sort(times.begin(), times.end());
    const std::int64_t median = times[times.size() / 2];

    const int csv_k = args.kind == "na" ? args.kernel : 0;
    const int csv_d = args.kind == "na" ? args.dilation : 0;
    const bool fresh = !std::filesystem::exists(args.csv) ||
                       std::filesystem::file_size(args.csv) == 0;
    std::ofstream out(args.csv, std::ios::app);
    if (!out) throw std::runtime_error("bench: cannot open " + args.csv);
    if (fresh) out << "kind,H,W,d_model,heads,k,d,time_ns,macs,attn_state\n";
    out << args.kind << ',' << H << ',' << W << ',' << args.d_model << ','
        << config.total_heads() << ',' << csv_k << ',' << csv_d << ',' << median << ','
        << cost.macs << ',' << cost.attn_state << "\n";
    std::cout << args.kind << " " << H << "x" << W << " d_model=" << args.d_model
              << " heads=" << config.total_heads() << ": median " << median
              << " ns, macs=" << cost.macs << ", attn_state=" << cost.attn_state << "\n";
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int cases, bool sabotage) {
  vana::GradSuiteOptions options;
  options.seed = seed;
  options.cases = cases;
  options.sabotage = sabotage;
  const auto reports = vana::run_gradcheck_suite(options);
  for (const auto& r : reports) {
    std::cout << r.op << ": max_rel_error=" << fmt_double(r.report.max_rel_error) << " worst=(";
    for (std::size_t i = 0; i < r.report.worst_index.size(); ++i)
      std::cout << (i ? "," : "") << r.report.worst_index[i];
    std::cout << ") " << (r.report.passed ? "PASS" : "FAIL") << "\n";
  }
  if (!vana::all_passed(reports)) {
    std::cerr << "gradcheck: analytic gradients disagree with finite differences\n";
    return 1;
  }
  return 0;
}

int cmd_toytrain(std::uint64_t seed, int steps, const std::string& hydra_spec,
                 const std::string& out_path) {
  vana::HydraConfig config;
  try {
    config = vana::parse_hydra_spec(hydra_spec);
  } catch (const std::exception& e) {
    std::cerr << "toytrain: " << e.what() << "\n";
    return 2;
  }
  try {
    const std::uint64_t mix = seed * 0x9E3779B97F4A7C15ull;
    const vana::StripesDataset train = vana::StripesDataset::make(256, mix + 1);
    const vana::StripesDataset test = vana::StripesDataset::make(64, mix + 2);
    vana::DemoModel model = vana::DemoModel::init(vana::make_demo_config(config), mix + 3);

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("toytrain: cannot open " + out_path);
    out << "step,loss,accuracy\n";
    constexpr double lr = 0.05;
    double first_loss = 0, last_loss = 0, last_acc = 0;
    for (int step = 0; step <= steps; ++step) {
      vana::DemoModel::Gradients grads = model.zero_gradients();
      const double loss = model.batch_loss_and_gradients(train.samples, grads);
      const double acc = model.accuracy(test.samples);
      out << step << ',' << fmt_double(loss) << ',' << fmt_double(acc) << "\n";
      if (step == 0) first_loss = loss;
      last_loss = loss;
      last_acc = acc;
      if (step < steps) model.apply_sgd(grads, lr);
    }
    std::cout << "toytrain: steps=" << steps << " initial_loss=" << fmt_double(first_loss)
              << " final_loss=" << fmt_double(last_loss)
              << " test_accuracy=" << fmt_double(last_acc) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "toytrain: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_rollout(std::uint64_t seed, const std::string& outdir) {
  try {
    const std::uint64_t mix = seed * 0x9E3779B97F4A7C15ull;
    // Two-group layer: 7x7 windows at dilation 1 and at dilation 2, so the
    // emitted maps contrast local and spread-out receptive fields.
    const vana::HydraConfig config = vana::parse_hydra_spec("7x1:2,7x2:2");
    vana::DemoModel model =
        vana::DemoModel::init(vana::make_demo_config(config, 8, 32), mix + 1);
    const vana::Tensor<double> image = vana::make_structured_image(32, mix + 2);
    const vana::DemoModel::Forward fwd = model.forward(image);

    std::filesystem::create_directories(outdir);
    const auto specs = per_head_specs(config);
    int files = 0;
    for (std::size_t block = 0; block < fwd.block_attn.size(); ++block)
      for (std::size_t head = 0; head < specs.size(); ++head) {
        const vana::DensityMap map =
            vana::accumulate_density(fwd.block_attn[block].probs[head], specs[head],
                                     static_cast<int>(block), static_cast<int>(head));
        const std::filesystem::path path =
            std::filesystem::path(outdir) /
            ("attn_b" + std::to_string(block) + "_h" + std::to_string(head) + ".pgm");
        vana::write_pgm(map, path);
        std::cout << path.string() << "\n";
        ++files;
      }
    std::cout << "rollout: wrote " << files << " maps\n";
  } catch (const std::exception& e) {
    std::cerr << "rollout: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cmd_frechet(const std::string& path_a, const std::string& path_b) {
  try {
    const vana::GaussianMoments a = vana::gaussian_moments(vana::read_csv_matrix(path_a));
    const vana::GaussianMoments b = vana::gaussian_moments(vana::read_csv_matrix(path_b));
    std::cout << fmt_double(vana::frechet_gaussian(a, b)) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "frechet: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neighborhood-attention kernel benchmarks and demos"};
  app.require_subcommand(1);

  int threads = vana::hardware_threads();
  app.add_option("--threads", threads, "Worker threads (1 = deterministic sequential mode)")
      ->capture_default_str();

  auto* configs = app.add_subcommand("configs", "Count legal (kernel, dilation) configurations");
  std::vector<int> resolutions;
  std::string layout_path;
  configs->add_option("--resolution", resolutions, "Feature-map resolution(s)");
  configs->add_option("--layout", layout_path, "Layout file (level = <resolution> <heads>)");

  auto* bench = app.add_subcommand("bench", "Time one attention configuration, append a CSV row");
  BenchArgs bench_args;
  bench->add_option("--kind", bench_args.kind, "dense|na|hydra")->required();
  bench->add_option("--size", bench_args.size, "Feature map extents H W")->expected(2);
  bench->add_option("--dmodel", bench_args.d_model, "Embedding dimension");
  bench->add_option("--heads", bench_args.heads, "Head count (dense/na)");
  bench->add_option("--kernel", bench_args.kernel, "Window size (na)");
  bench->add_option("--dilation", bench_args.dilation, "Window dilation (na)");
  bench->add_option("--hydra", bench_args.hydra, "Head groups KxD:HEADS,... (hydra)");
  bench->add_option("--repeats", bench_args.repeats, "Timing repeats (median reported)");
  bench->add_option("--csv", bench_args.csv, "Output CSV path")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Certify analytic gradients");
  std::uint64_t gc_seed = 0;
  int gc_cases = 20;
  bool gc_sabotage = false;
  gradcheck->add_option("--seed", gc_seed, "Suite seed");
  gradcheck->add_option("--cases", gc_cases, "Randomized instances per operation");
  gradcheck->add_flag("--sabotage", gc_sabotage)->group("");  // negative-control hook

  auto* toytrain = app.add_subcommand("toytrain", "Train the stripes classifier end to end");
  std::uint64_t tt_seed = 0;
  int tt_steps = 200;
  std::string tt_hydra = "7x1:2,3x1:2";
  std::string tt_out = "metrics.csv";
  toytrain->add_option("--seed", tt_seed, "Dataset/model seed");
  toytrain->add_option("--steps", tt_steps, "Gradient-descent steps");
  toytrain->add_option("--hydra", tt_hydra, "Head groups KxD:HEADS,...");
  toytrain->add_option("--out", tt_out, "Metrics CSV path");

  auto* rollout = app.add_subcommand("rollout", "Emit per-head attention density maps as PGM");
  std::uint64_t ro_seed = 0;
  std::string ro_outdir;
  rollout->add_option("--seed", ro_seed, "Model/input seed");
  rollout->add_option("--outdir", ro_outdir, "Output directory")->required();

  auto* frechet = app.add_subcommand("frechet", "Fréchet distance between feature CSVs");
  std::string fr_a, fr_b;
  frechet->add_option("--a", fr_a, "First feature CSV (rows = samples)")->required();
  frechet->add_option("--b", fr_b, "Second feature CSV")->required();

  CLI11_PARSE(app, argc, argv);
  vana::set_threads(threads);

  if (configs->parsed()) {
    if (resolutions.empty() && layout_path.empty()) {
      std::cerr << "configs: need --resolution or --layout\n";
      return 2;
    }
    return cmd_configs(resolutions, layout_path);
  }
  if (bench->parsed()) return cmd_bench(bench_args);
  if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_cases, gc_sabotage);
  if (toytrain->parsed()) return cmd_toytrain(tt_seed, tt_steps, tt_hydra, tt_out);
  if (rollout->parsed()) return cmd_rollout(ro_seed, ro_outdir);
  if (frechet->parsed()) return cmd_frechet(fr_a, fr_b);
  return 0;
}

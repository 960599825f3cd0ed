#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hmer/eval.hpp"
#include "hmer/heuristics.hpp"
#include "hmer/selftest.hpp"
#include "hmer/threading.hpp"
#include "hmer/training.hpp"

namespace fs = std::filesystem;
using namespace hmer;

namespace {

SubTask task_from_string(const std::string& s) {
  if (s == "full") return SubTask::Full;
  if (s == "pick") return SubTask::Pick;
  if (s == "place") return SubTask::Place;
  throw std::runtime_error("unknown task: " + s);
}

// "method=path" pairs from the command line.
std::vector<std::pair<std::string, std::string>> parse_kv(const std::vector<std::string>& raw) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : raw) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::runtime_error("expected key=value, got: " + s);
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

void print_metrics(const std::string& name, const EvalMetrics& m) {
  std::printf("%-12s success %.3f [%.3f, %.3f]  collisions %.3f  timeouts %.3f", name.c_str(),
              m.success_rate, m.success_ci.lo, m.success_ci.hi, m.collision_rate, m.timeout_rate);
  if (m.mean_cycle_time)
    std::printf("  cycle %.1fs", *m.mean_cycle_time);
  else
    std::printf("  cycle N/A");
  if (m.mean_placement_error)
    std::printf("  error %.4fm\n", *m.mean_placement_error);
  else
    std::printf("  error N/A\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hmer — heterogeneous multi-expert forklift material handling"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  uint64_t seed = 42;
  int threads = 0;
  app.add_option("--config", config_path, "config JSON file (defaults baked in)");
  app.add_option("--seed", seed, "master random seed", true);
  app.add_option("--out-dir", out_dir, "output directory", true);
  app.add_option("--threads", threads, "worker threads (0 = hardware)");

  auto* demo = app.add_subcommand("demo-gen", "generate heuristic demonstrations");
  int demo_n = 2000;
  std::string demo_out = "demos.jsonl";
  demo->add_option("--n", demo_n, "episodes to keep", true);
  demo->add_option("--out", demo_out, "dataset path", true);

  auto* bc = app.add_subcommand("train-bc", "behavioral-cloning phase");
  std::string bc_mode = "experts";
  std::string bc_demos;
  bc->add_option("--mode", bc_mode, "experts|flat", true)
      ->check(CLI::IsMember({"experts", "flat"}));
  bc->add_option("--demos", bc_demos, "demonstration dataset")->required();

  auto* ppo = app.add_subcommand("train-ppo", "PPO refinement phase");
  std::string ppo_mode = "hmer";
  std::string ppo_init;
  std::string ppo_task = "full";
  long ppo_steps = 0;
  ppo->add_option("--mode", ppo_mode, "hmer|hrl|seq-hybrid", true)
      ->check(CLI::IsMember({"hmer", "hrl", "seq-hybrid"}));
  ppo->add_option("--init", ppo_init, "checkpoint manifest to warm-start from");
  ppo->add_option("--task", ppo_task, "full|pick|place", true)
      ->check(CLI::IsMember({"full", "pick", "place"}));
  ppo->add_option("--steps", ppo_steps, "total environment steps (0 = config)");

  auto* ev = app.add_subcommand("eval", "evaluate one method");
  std::string ev_method = "rule-based";
  std::string ev_manifest;
  int ev_n = 0;
  double ev_clamp_prob = 1.0;
  ev->add_option("--method", ev_method, "flat-bc|rule-based|hbc|hrl|seq-hybrid|hmer", true);
  ev->add_option("--manifest", ev_manifest, "checkpoint manifest");
  ev->add_option("--n", ev_n, "episodes (0 = config default)");
  ev->add_option("--clamp-prob", ev_clamp_prob, "first-attempt clamp success probability", true);

  auto* cmp = app.add_subcommand("compare", "paired multi-method comparison table");
  std::vector<std::string> cmp_manifests;
  std::vector<std::string> cmp_methods;
  int cmp_n = 0;
  double cmp_clamp_prob = 1.0;
  cmp->add_option("--manifest", cmp_manifests, "method=manifest.json (repeatable)");
  cmp->add_option("--methods", cmp_methods, "methods to include (default: all six)");
  cmp->add_option("--n", cmp_n, "episodes per method (0 = config default)");
  cmp->add_option("--clamp-prob", cmp_clamp_prob, "first-attempt clamp success probability", true);

  auto* plot = app.add_subcommand("plot-data", "emit CSVs for figures");
  std::vector<std::string> plot_curves;
  std::string plot_cdf_from;
  plot->add_option("--curves", plot_curves, "method=metrics.csv (repeatable)");
  plot->add_option("--cdf-from", plot_cdf_from, "per-episode CSV to build the error CDF from");

  app.add_subcommand("selftest", "run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    set_thread_count(threads);
    const Config cfg = config_path.empty() ? default_config() : load_config(config_path);
    fs::create_directories(out_dir);

    if (demo->parsed()) {
      Config c = cfg;
      c.env.subtask = SubTask::Full;
      const Sim sim(c.env);
      const auto demos = generate_demonstrations(sim, c, demo_n, seed);
      write_demonstrations(demos, cfg, seed, demo_out);
      std::printf("wrote %zu demonstrations to %s\n", demos.size(), demo_out.c_str());
    } else if (bc->parsed()) {
      train_bc(cfg, bc_demos, bc_mode, out_dir, seed);
      std::printf("BC checkpoints in %s (manifest.json)\n", out_dir.c_str());
    } else if (ppo->parsed()) {
      const long steps = ppo_steps > 0 ? ppo_steps : cfg.ppo.total_steps;
      const auto res = train_ppo(cfg, ppo_mode, task_from_string(ppo_task), ppo_init, steps, seed,
                                 out_dir);
      if (!res.eval_curve.empty())
        std::printf("final eval success %.3f at %ld steps; outputs in %s\n",
                    res.eval_curve.back().second, res.eval_curve.back().first, out_dir.c_str());
    } else if (ev->parsed()) {
      MethodSpec spec;
      spec.method = method_from_name(ev_method);
      spec.manifest = ev_manifest;
      EvalOptions opts;
      opts.first_clamp_success_prob = ev_clamp_prob;
      const int n = ev_n > 0 ? ev_n : cfg.eval.n_episodes;
      const auto rows = compare(cfg, {spec}, n, seed, out_dir, opts);
      print_metrics(ev_method, rows[0].metrics);
    } else if (cmp->parsed()) {
      std::vector<std::string> names = cmp_methods;
      if (names.empty())
        names = {"flat-bc", "rule-based", "hbc", "hrl", "seq-hybrid", "hmer"};
      const auto manifests = parse_kv(cmp_manifests);
      std::vector<MethodSpec> specs;
      for (const auto& nm : names) {
        MethodSpec spec;
        spec.method = method_from_name(nm);
        for (const auto& [k, v] : manifests) {
          if (k == nm) spec.manifest = v;
        }
        specs.push_back(spec);
      }
      EvalOptions opts;
      opts.first_clamp_success_prob = cmp_clamp_prob;
      const int n = cmp_n > 0 ? cmp_n : cfg.eval.n_episodes;
      const auto rows = compare(cfg, specs, n, seed, out_dir, opts);
      for (const auto& r : rows) print_metrics(method_name(r.method), r.metrics);
      std::printf("table: %s/comparison.csv\n", out_dir.c_str());
    } else if (plot->parsed()) {
      if (!plot_cdf_from.empty()) {
        std::ifstream f(plot_cdf_from);
        if (!f) throw EvalError("cannot open " + plot_cdf_from);
        std::string line;
        std::getline(f, line);
        std::vector<double> errors;
        while (std::getline(f, line)) {
          // seed,outcome,steps,cycle_time,placement_error,retries
          std::vector<std::string> cells;
          size_t pos = 0;
          while (true) {
            const auto c = line.find(',', pos);
            cells.push_back(line.substr(pos, c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
          }
          if (cells.size() >= 5 && cells[4] != "N/A") errors.push_back(std::stod(cells[4]));
        }
        const auto cdf = emit_error_cdf(errors, out_dir + "/error_cdf.csv");
        std::printf("error CDF (%zu successes, %.1f%% under 2 cm): %s/error_cdf.csv\n",
                    cdf.points.size(), 100.0 * cdf.frac_under_2cm, out_dir.c_str());
      }
      if (!plot_curves.empty()) {
        const auto curves = parse_kv(plot_curves);
        emit_training_curve(curves, out_dir + "/training_curves.csv");
        std::printf("training curves: %s/training_curves.csv\n", out_dir.c_str());
      }
      if (plot_cdf_from.empty() && plot_curves.empty())
        throw std::runtime_error("plot-data: nothing to do (--cdf-from / --curves)");
    } else {  // selftest
      return run_selftest(cfg, seed) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include "hmer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "hmer/heuristics.hpp"
#include "hmer/threading.hpp"
#include "hmer/training.hpp"
#include "json.hpp"

namespace hmer {

using nlohmann::json;
namespace fs = std::filesystem;

const char* method_name(Method m) {
  switch (m) {
    case Method::FlatBC: return "flat-bc";
    case Method::RuleBased: return "rule-based";
    case Method::HBC: return "hbc";
    case Method::HRL: return "hrl";
    case Method::SeqHybrid: return "seq-hybrid";
    case Method::HMER: return "hmer";
  }
  return "?";
}

Method method_from_name(const std::string& s) {
  for (const Method m : {Method::FlatBC, Method::RuleBased, Method::HBC, Method::HRL,
                         Method::SeqHybrid, Method::HMER}) {
    if (s == method_name(m)) return m;
  }
  throw EvalError("unknown method: " + s);
}

namespace {

uint64_t episode_seed(uint64_t master, int i) { return mix_seed(master, 100000 + i); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "N/A"; }

// Per-worker policy stack for one method.
struct MethodPolicies {
  std::unique_ptr<HeuristicExperts> heuristics;
  std::vector<std::unique_ptr<NetExpert>> adapters;
  PolicyBundle bundle;
};

struct LoadedNets {
  std::map<ExpertKind, PolicyNet> nets;
};

LoadedNets load_nets(const Config& cfg, const MethodSpec& spec) {
  LoadedNets out;
  if (spec.method == Method::RuleBased) return out;
  if (spec.manifest.empty())
    throw EvalError(std::string("method ") + method_name(spec.method) + " requires a manifest");
  const auto entries = read_manifest(spec.manifest);
  const std::vector<ExpertKind> wanted =
      spec.method == Method::FlatBC
          ? std::vector<ExpertKind>{ExpertKind::Flat}
          : std::vector<ExpertKind>{ExpertKind::Navigation, ExpertKind::Picking,
                                    ExpertKind::Placing};
  for (const ExpertKind k : wanted) {
    std::string path;
    for (const auto& [mk, p] : entries) {
      if (mk == k) path = p;
    }
    if (path.empty())
      throw EvalError(std::string("manifest missing checkpoint for ") + expert_name(k));
    out.nets.emplace(k, PolicyNet::build(k, cfg));
    out.nets.at(k).load(path);
  }
  return out;
}

MethodPolicies make_policies(const Sim& sim, const Config& cfg, const MethodSpec& spec,
                             LoadedNets& nets) {
  MethodPolicies p;
  if (spec.method == Method::RuleBased) {
    p.heuristics = std::make_unique<HeuristicExperts>(sim, cfg);
    p.bundle = p.heuristics->bundle();
    return p;
  }
  for (auto& [kind, net] : nets.nets) {
    p.adapters.push_back(std::make_unique<NetExpert>(net, sim, cfg));
    p.bundle[kind] = p.adapters.back().get();
  }
  return p;
}

Ci bootstrap_ci(const std::vector<double>& xs, Rng& rng, int samples) {
  if (xs.empty()) return {};
  std::vector<double> means;
  means.reserve(samples);
  for (int b = 0; b < samples; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += xs[rng.uniform_int(xs.size())];
    means.push_back(s / xs.size());
  }
  std::sort(means.begin(), means.end());
  const auto at = [&](double q) {
    const std::size_t i = std::min(means.size() - 1,
                                   static_cast<std::size_t>(q * (means.size() - 1) + 0.5));
    return means[i];
  };
  return {at(0.025), at(0.975)};
}

}  // namespace

uint64_t seed_list_hash(uint64_t master_seed, int n_episodes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (int i = 0; i < n_episodes; ++i) {
    uint64_t s = episode_seed(master_seed, i);
    for (int b = 0; b < 8; ++b) {
      h ^= (s >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

EvalMetrics evaluate(const Config& cfg, const MethodSpec& spec, int n_episodes, uint64_t seed,
                     const EvalOptions& opts) {
  if (n_episodes <= 0) throw EvalError("evaluate: n_episodes must be positive");
  Config full_cfg = cfg;
  full_cfg.env.subtask = SubTask::Full;
  const Sim sim(full_cfg.env);
  LoadedNets nets = load_nets(full_cfg, spec);

  // One policy stack per worker; episodes merge in seed order.
  const int workers = thread_count();
  std::vector<MethodPolicies> stacks;
  stacks.reserve(workers);
  for (int wkr = 0; wkr < workers; ++wkr)
    stacks.push_back(make_policies(sim, full_cfg, spec, nets));

  EvalMetrics m;
  m.episodes.resize(n_episodes);
  parallel_for(n_episodes, [&](std::size_t i, int worker) {
    EpisodeOptions eo;
    eo.mode = spec.exec_mode();
    eo.deterministic = true;
    eo.first_clamp_success_prob = opts.first_clamp_success_prob;
    const uint64_t es = episode_seed(seed, static_cast<int>(i));
    const EpisodeTrace tr = run_episode(sim, full_cfg, stacks[worker].bundle, eo, es);
    EpisodeRecord rec;
    rec.seed = es;
    rec.outcome = tr.outcome;
    rec.steps = tr.total_steps;
    rec.cycle_time = tr.cycle_time;
    rec.placement_error = tr.placement_error;
    rec.retries = tr.retries;
    m.episodes[i] = rec;
  });

  std::vector<double> succ, cycles, errors;
  int n_succ = 0, n_coll = 0, n_tout = 0;
  for (const auto& r : m.episodes) {
    succ.push_back(r.outcome == Outcome::Success ? 1.0 : 0.0);
    switch (r.outcome) {
      case Outcome::Success:
        n_succ += 1;
        cycles.push_back(r.cycle_time);
        if (r.placement_error) errors.push_back(*r.placement_error);
        break;
      case Outcome::Collision: n_coll += 1; break;
      case Outcome::Timeout: n_tout += 1; break;
    }
  }
  m.success_rate = static_cast<double>(n_succ) / n_episodes;
  m.collision_rate = static_cast<double>(n_coll) / n_episodes;
  m.timeout_rate = static_cast<double>(n_tout) / n_episodes;
  if (!cycles.empty()) {
    m.mean_cycle_time = std::accumulate(cycles.begin(), cycles.end(), 0.0) / cycles.size();
  }
  if (!errors.empty()) {
    m.mean_placement_error =
        std::accumulate(errors.begin(), errors.end(), 0.0) / errors.size();
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    m.median_placement_error = sorted.size() % 2 == 1
                                   ? sorted[sorted.size() / 2]
                                   : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  }
  Rng boot(mix_seed(seed, 0xC1));
  m.success_ci = bootstrap_ci(succ, boot, cfg.eval.bootstrap_samples);
  m.cycle_ci = bootstrap_ci(cycles, boot, cfg.eval.bootstrap_samples);
  m.error_ci = bootstrap_ci(errors, boot, cfg.eval.bootstrap_samples);
  return m;
}

std::vector<CompareRow> compare(const Config& cfg, const std::vector<MethodSpec>& methods,
                                int n_episodes, uint64_t seed, const std::string& out_dir,
                                const EvalOptions& opts) {
  fs::create_directories(out_dir);
  std::vector<CompareRow> rows;
  for (const auto& spec : methods) {
    CompareRow row;
    row.method = spec.method;
    row.metrics = evaluate(cfg, spec, n_episodes, seed, opts);
    rows.push_back(std::move(row));
  }

  const uint64_t shash = seed_list_hash(seed, n_episodes);
  char shex[17];
  std::snprintf(shex, sizeof(shex), "%016llx", static_cast<unsigned long long>(shash));

  std::ofstream f(out_dir + "/comparison.csv");
  f << "method,success_rate,success_lo,success_hi,mean_cycle_time,cycle_lo,cycle_hi,"
       "mean_placement_error,median_placement_error,error_lo,error_hi,collision_rate,"
       "timeout_rate,n_episodes,seed_hash\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    f << method_name(r.method) << "," << fmt(m.success_rate) << "," << fmt(m.success_ci.lo) << ","
      << fmt(m.success_ci.hi) << "," << fmt_opt(m.mean_cycle_time) << ","
      << (m.mean_cycle_time ? fmt(m.cycle_ci.lo) : "N/A") << ","
      << (m.mean_cycle_time ? fmt(m.cycle_ci.hi) : "N/A") << ","
      << fmt_opt(m.mean_placement_error) << "," << fmt_opt(m.median_placement_error) << ","
      << (m.mean_placement_error ? fmt(m.error_ci.lo) : "N/A") << ","
      << (m.mean_placement_error ? fmt(m.error_ci.hi) : "N/A") << "," << fmt(m.collision_rate)
      << "," << fmt(m.timeout_rate) << "," << n_episodes << "," << shex << "\n";
  }
  f.close();

  for (const auto& r : rows) {
    std::ofstream ef(out_dir + "/episodes_" + method_name(r.method) + ".csv");
    ef << "seed,outcome,steps,cycle_time,placement_error,retries\n";
    for (const auto& e : r.metrics.episodes) {
      ef << e.seed << "," << outcome_name(e.outcome) << "," << e.steps << "," << fmt(e.cycle_time)
         << "," << (e.placement_error ? fmt(*e.placement_error) : "N/A") << "," << e.retries
         << "\n";
    }
  }

  json meta;
  meta["revision"] = "hmer-0.1.0";
  meta["config_hash"] = config_hash(cfg);
  meta["seed"] = seed;
  meta["n_episodes"] = n_episodes;
  meta["episode_seeds_hash"] = std::string(shex);
  meta["methods"] = json::array();
  for (const auto& s : methods) meta["methods"].push_back(method_name(s.method));
  std::ofstream mf(out_dir + "/metadata.json");
  mf << meta.dump(2) << "\n";
  return rows;
}

ErrorCdf emit_error_cdf(const std::vector<double>& errors, const std::string& path) {
  if (errors.empty()) throw EvalError("emit_error_cdf: no successful episodes");
  ErrorCdf cdf;
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cdf.points.emplace_back(sorted[i], static_cast<double>(i + 1) / sorted.size());
  }
  std::size_t under = 0;
  for (const double e : sorted) {
    if (e < 0.02) under += 1;
  }
  cdf.frac_under_2cm = static_cast<double>(under) / sorted.size();
  if (!path.empty()) {
    std::ofstream f(path);
    f << "summary,frac_under_2cm," << fmt(cdf.frac_under_2cm) << "\n";
    f << "error_m,cum_frac\n";
    for (const auto& [e, c] : cdf.points) f << fmt(e) << "," << fmt(c) << "\n";
  }
  return cdf;
}

std::vector<std::pair<long, double>> read_eval_curve(const std::string& metrics_csv) {
  std::ifstream f(metrics_csv);
  if (!f) throw EvalError("cannot open metrics log: " + metrics_csv);
  std::vector<std::pair<long, double>> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    // step,expert,...,eval_success — keep eval rows only
    const auto first_comma = line.find(',');
    if (first_comma == std::string::npos) continue;
    const auto second_comma = line.find(',', first_comma + 1);
    const std::string expert = line.substr(first_comma + 1, second_comma - first_comma - 1);
    if (expert != "eval") continue;
    const auto last_comma = line.rfind(',');
    out.emplace_back(std::stol(line.substr(0, first_comma)),
                     std::stod(line.substr(last_comma + 1)));
  }
  if (out.empty()) throw EvalError("metrics log has no eval rows: " + metrics_csv);
  return out;
}

TrainingCurves emit_training_curve(const std::vector<std::pair<std::string, std::string>>& logs,
                                   const std::string& path, int grid_points) {
  if (logs.empty()) throw EvalError("emit_training_curve: no logs");
  TrainingCurves tc;
  std::vector<std::vector<std::pair<long, double>>> curves;
  long max_step = 0;
  for (const auto& [name, file] : logs) {
    tc.methods.push_back(name);
    curves.push_back(read_eval_curve(file));
    max_step = std::max(max_step, curves.back().back().first);
  }
  const int n = std::max(2, grid_points);
  for (int i = 0; i < n; ++i)
    tc.grid.push_back(static_cast<long>(std::llround(static_cast<double>(max_step) * i / (n - 1))));

  auto interp = [](const std::vector<std::pair<long, double>>& c, long x) {
    if (x <= c.front().first) return c.front().second;
    if (x >= c.back().first) return c.back().second;
    for (std::size_t i = 1; i < c.size(); ++i) {
      if (x <= c[i].first) {
        const double t = static_cast<double>(x - c[i - 1].first) /
                         static_cast<double>(c[i].first - c[i - 1].first);
        return c[i - 1].second + t * (c[i].second - c[i - 1].second);
      }
    }
    return c.back().second;
  };

  for (const auto& c : curves) {
    std::vector<double> vals;
    for (const long x : tc.grid) vals.push_back(interp(c, x));
    double auc = 0.0;
    for (std::size_t i = 1; i < vals.size(); ++i) {
      auc += 0.5 * (vals[i] + vals[i - 1]) *
             static_cast<double>(tc.grid[i] - tc.grid[i - 1]);
    }
    tc.values.push_back(std::move(vals));
    tc.auc.push_back(auc);
  }

  std::optional<std::size_t> hmer_i, hrl_i;
  for (std::size_t i = 0; i < tc.methods.size(); ++i) {
    if (tc.methods[i] == "hmer") hmer_i = i;
    if (tc.methods[i] == "hrl") hrl_i = i;
  }
  if (hmer_i && hrl_i && tc.auc[*hrl_i] > 0.0)
    tc.hmer_vs_hrl_auc_ratio = tc.auc[*hmer_i] / tc.auc[*hrl_i];

  if (!path.empty()) {
    std::ofstream f(path);
    f << "step";
    for (const auto& m : tc.methods) f << "," << m;
    f << "\n";
    for (std::size_t i = 0; i < tc.grid.size(); ++i) {
      f << tc.grid[i];
      for (const auto& vals : tc.values) f << "," << fmt(vals[i]);
      f << "\n";
    }
    f << "auc";
    for (const double a : tc.auc) f << "," << fmt(a);
    f << "\n";
    if (tc.hmer_vs_hrl_auc_ratio) f << "auc_ratio_hmer_vs_hrl," << fmt(*tc.hmer_vs_hrl_auc_ratio) << "\n";
  }
  return tc;
}

}  // namespace hmer

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hmer/config.hpp"
#include "hmer/planner.hpp"

namespace hmer {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Method { FlatBC, RuleBased, HBC, HRL, SeqHybrid, HMER };

const char* method_name(Method m);
Method method_from_name(const std::string& s);

struct MethodSpec {
  Method method = Method::RuleBased;
  std::string manifest;  // checkpoint manifest (unused for RuleBased)

  // SeqHybrid binds the open-loop schedule; every other method runs under the
  // planner (RuleBased drives the planner over the heuristic controllers).
  ExecMode exec_mode() const {
    return method == Method::SeqHybrid ? ExecMode::FixedSequence : ExecMode::Planner;
  }
};

struct Ci {
  double lo = 0.0;
  double hi = 0.0;
};

struct EpisodeRecord {
  uint64_t seed = 0;
  Outcome outcome = Outcome::Timeout;
  long steps = 0;
  double cycle_time = 0.0;
  std::optional<double> placement_error;
  int retries = 0;
};

struct EvalMetrics {
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double timeout_rate = 0.0;
  // Success-only statistics; empty optionals when nothing succeeded ("N/A").
  std::optional<double> mean_cycle_time;
  std::optional<double> mean_placement_error;
  std::optional<double> median_placement_error;
  Ci success_ci, cycle_ci, error_ci;
  std::vector<EpisodeRecord> episodes;
};

struct EvalOptions {
  double first_clamp_success_prob = 1.0;
};

// Runs n seeded deterministic episodes (mean actions) and aggregates metrics
// with 95% bootstrap confidence intervals.
EvalMetrics evaluate(const Config& cfg, const MethodSpec& method, int n_episodes, uint64_t seed,
                     const EvalOptions& opts = {});

struct CompareRow {
  Method method = Method::RuleBased;
  EvalMetrics metrics;
};

// Paired comparison: every method consumes the identical episode seed list.
// Writes comparison.csv, per-method episode CSVs and metadata.json to out_dir.
std::vector<CompareRow> compare(const Config& cfg, const std::vector<MethodSpec>& methods,
                                int n_episodes, uint64_t seed, const std::string& out_dir,
                                const EvalOptions& opts = {});

// Empirical CDF of placement errors; writes a summary line with the fraction
// under 2 cm, then (error, cumulative fraction) rows.
struct ErrorCdf {
  std::vector<std::pair<double, double>> points;
  double frac_under_2cm = 0.0;
};
ErrorCdf emit_error_cdf(const std::vector<double>& errors, const std::string& path);

// Overlays training curves (eval rows of training metrics CSVs) on a common
// step grid; linear interpolation, endpoint-preserving. Emits per-method AUC
// fields and, when both are present, the hmer/hrl AUC ratio.
struct TrainingCurves {
  std::vector<long> grid;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> values;  // [method][grid]
  std::vector<double> auc;
  std::optional<double> hmer_vs_hrl_auc_ratio;
};
TrainingCurves emit_training_curve(const std::vector<std::pair<std::string, std::string>>& logs,
                                   const std::string& path, int grid_points = 50);

// Parses the (step, success) eval rows out of a training metrics CSV.
std::vector<std::pair<long, double>> read_eval_curve(const std::string& metrics_csv);

uint64_t seed_list_hash(uint64_t master_seed, int n_episodes);

}  // namespace hmer

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hmer/config.hpp"
#include "hmer/policy.hpp"
#include "hmer/rewards.hpp"
#include "hmer/sim.hpp"

namespace hmer {

struct PlannerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// High-level semantic predicate vector driving the task FSM.
struct SemanticState {
  bool at_transfer_zone = false;
  bool cargo_clamped = false;
  bool at_goal_zone = false;
  bool placed_ok = false;
  bool collided = false;
  bool timed_out = false;
  bool clamp_failed = false;

  static constexpr int kBits = 7;
  static SemanticState from_bits(unsigned bits);
};

enum class PlannerPhase { Departure, SearchPick, Transport, Placement, Done, Abort };

const char* phase_name(PlannerPhase p);
bool phase_absorbing(PlannerPhase p);

struct PlannerStatus {
  PlannerPhase phase = PlannerPhase::Departure;
  int retry_count = 0;
};

// Expert bound to each non-absorbing phase (the masking map).
ExpertKind active_expert(PlannerPhase phase);

SemanticState evaluate_predicates(const WorldState& w, const StepEvents& ev);

// One FSM step; throws PlannerError when called on Done/Abort.
std::pair<PlannerStatus, ExpertKind> transition(const PlannerStatus& status,
                                                const SemanticState& s, int max_retries);

// True exactly when the current phase terminates this step (including the
// SearchPick self-restart on a failed clamp).
bool termination_check(const PlannerStatus& status, const SemanticState& s, int max_retries);

// Goal pose the active phase steers toward.
Pose2D active_goal(PlannerPhase phase, const WorldState& w);

// Phase-conditioned raw reward for one transition; prev_ego is the ego state
// against the phase goal before the step.
double phase_reward(const Sim& sim, const Config& cfg, const RewardConfig& rw, PlannerPhase phase,
                    const EgoState& prev_ego, const WorldState& w, const StepEvents& ev,
                    const Pose2D& goal);

// ---- episode execution -------------------------------------------------------

// Policy surface shared by learned experts and rule-based controllers.
class ExpertPolicy {
 public:
  virtual ~ExpertPolicy() = default;
  virtual Action act(const WorldState& w, const Pose2D& goal, Rng& rng, bool deterministic) = 0;
  // Called when the expert takes over a phase (also on retry re-approach).
  virtual void on_phase_start(const WorldState& w, const Pose2D& goal) {}
};

using PolicyBundle = std::map<ExpertKind, ExpertPolicy*>;

enum class ExecMode { Planner, FixedSequence };
enum class Outcome { Success, Collision, Timeout };

const char* outcome_name(Outcome o);

struct TraceStep {
  long step = 0;
  PlannerPhase phase = PlannerPhase::Departure;
  ExpertKind expert = ExpertKind::Navigation;
  Action action;
  double reward = 0.0;
  StepEvents events;
};

struct EpisodeTrace {
  std::vector<TraceStep> steps;
  Outcome outcome = Outcome::Timeout;
  std::string abort_reason;            // collision | timeout | retries | ""
  long total_steps = 0;
  double cycle_time = 0.0;             // steps * dt
  int retries = 0;
  std::optional<double> placement_error;    // Euclidean, on success
  std::optional<double> placement_d_target; // combined metric, on success
  uint64_t seed = 0;
};

struct EpisodeOptions {
  ExecMode mode = ExecMode::Planner;
  bool deterministic = true;
  double first_clamp_success_prob = 1.0;
  bool keep_steps = false;             // retain per-step trace records
  std::string trace_path;              // JSONL dump when non-empty
  // Invoked with the pre-step world each step (demo recording).
  std::function<void(const WorldState&, PlannerPhase, ExpertKind, const Action&,
                     const StepEvents&)>
      step_callback;
};

// Runs one full-task episode under the planner or the open-loop schedule.
EpisodeTrace run_episode(const Sim& sim, const Config& cfg, const PolicyBundle& experts,
                         const EpisodeOptions& opts, uint64_t seed);

void write_trace_jsonl(const EpisodeTrace& trace, const std::string& path);

}  // namespace hmer

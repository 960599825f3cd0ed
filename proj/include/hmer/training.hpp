#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hmer/heuristics.hpp"
#include "hmer/planner.hpp"
#include "hmer/policy.hpp"
#include "hmer/rewards.hpp"

namespace hmer {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Linear decay from lr0 to zero over `total` steps.
double lr_schedule(long step, long total, double lr0);

// GAE over one contiguous segment: delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t,
// advantages are the (gamma*lambda)-discounted sums of deltas with done cuts,
// returns = advantages + values. `bootstrap` stands in for V_n.
void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<uint8_t>& dones, double bootstrap, double gamma, double lambda,
                 std::vector<double>* advantages, std::vector<double>* returns);

// ---- behavioral cloning --------------------------------------------------------

// Compactly stored (observation, expert action) pair; modalities are kept in
// reduced precision and widened on use.
struct BcSample {
  std::vector<float> lidar;     // normalized ranges
  std::vector<uint8_t> image;   // binary cells
  std::vector<double> vec;
  std::vector<double> target;   // continuous action target
  bool trigger = false;
};

ObsVec bc_obs(const BcSample& s);

// Materializes the expert-tagged portion of a demo set into BC samples
// (Flat consumes every step).
std::vector<BcSample> build_bc_dataset(const Sim& sim, const Config& cfg,
                                       const std::vector<Demonstration>& demos, ExpertKind kind);

// Adam minimization of the action NLL for exactly h.epochs epochs; returns the
// per-epoch mean NLL history.
std::vector<double> bc_train(PolicyNet& net, const std::vector<BcSample>& data, const BCHyper& h,
                             uint64_t seed);

// ---- PPO -----------------------------------------------------------------------

struct Transition {
  ObsVec obs;
  std::vector<double> raw;  // pre-clip continuous sample
  bool clamp = false;
  double logp = 0.0;
  double value = 0.0;
  double reward = 0.0;      // normalized
};

struct Segment {
  std::vector<Transition> steps;
  double bootstrap = 0.0;  // value estimate past the last step (0 at boundaries)
};

struct RolloutBuffer {
  std::vector<Segment> segments;
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.steps.size();
    return n;
  }
  void clear() { segments.clear(); }
};

// Per-sample clipped-surrogate pieces (exposed for the oracle tests).
struct PpoSampleLoss {
  double surrogate = 0.0;   // min(r*A, clip(r)*A)
  double ratio = 0.0;
  bool clipped = false;
};
PpoSampleLoss ppo_surrogate(double logp_new, double logp_old, double advantage, double clip_eps);

struct PpoDiag {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  // First minibatch of the first epoch (on-policy identity checks).
  double first_ratio_mean = 0.0;
  double first_clip_frac = 0.0;
};

// Runs h.epochs of minibatch updates on this expert's buffer. Advantages are
// standardized across the buffer. `policy_coef` scales the surrogate term
// (0 isolates the value head). Throws TrainError on a non-finite loss.
PpoDiag ppo_update(PolicyNet& net, const RolloutBuffer& buf, const PPOHyper& h, double lr,
                   uint64_t seed, double policy_coef = 1.0);

// ---- rollout collection ----------------------------------------------------------

struct ExpertSlot {
  PolicyNet* net = nullptr;
  RunningStats stats;
  RolloutBuffer buffer;
};

// Synchronous vectorized stepping. Environments persist across collect()
// calls; transitions land in their active expert's buffer normalized by that
// expert's RunningStats; phase switches and terminals close segments with a
// zero bootstrap, truncation bootstraps with the expert's value estimate.
class RolloutCollector {
 public:
  RolloutCollector(const Config& cfg, SubTask task, int n_env, uint64_t seed,
                   const RewardConfig& reward_cfg);

  void collect(std::map<ExpertKind, ExpertSlot*>& experts, long steps_per_env);
  long total_env_steps() const { return total_steps_; }
  const Sim& sim() const { return sim_; }

 private:
  struct EnvSlot {
    WorldState w;
    Rng rng;
    PlannerStatus status;
    ExpertKind expert = ExpertKind::Navigation;
    StepEvents ev;
    EgoState prev_ego;
    long episode = 0;
    int open_segment = -1;  // index into the active expert's buffer
    ExpertKind open_expert = ExpertKind::Navigation;
  };

  void reset_env(int i);
  void close_segment(std::map<ExpertKind, ExpertSlot*>& experts, EnvSlot& e, double bootstrap);

  Config cfg_;
  RewardConfig reward_cfg_;
  SubTask task_;
  Sim sim_;
  uint64_t seed_ = 0;
  long total_steps_ = 0;
  std::vector<EnvSlot> envs_;
  std::map<ExpertKind, std::vector<PolicyNet::Ws>> ws_;  // [expert][env]
};

// ---- episode-level helpers -------------------------------------------------------

struct SubtaskResult {
  bool success = false;
  double final_error = 0.0;     // Euclidean cargo error at release (place task)
  double final_d_target = 0.0;  // combined metric at release
  long steps = 0;
};

// One deterministic-or-sampled sub-task episode under any policy surface.
SubtaskResult run_subtask_episode(const Sim& sim, const Config& cfg, ExpertPolicy& policy,
                                  SubTask task, uint64_t seed, bool deterministic = true);

// Learned-expert adapter onto the planner-facing policy surface.
class NetExpert : public ExpertPolicy {
 public:
  NetExpert(PolicyNet& net, const Sim& sim, const Config& cfg)
      : net_(net), builder_(sim, cfg), ws_(net.make_ws()) {}
  Action act(const WorldState& w, const Pose2D& goal, Rng& rng, bool deterministic) override;

 private:
  PolicyNet& net_;
  ObsBuilder builder_;
  PolicyNet::Ws ws_;
};

// ---- pipelines -------------------------------------------------------------------

// mode "experts": BC for the three modality experts; "flat": the monolithic
// baseline. Writes checkpoints, a manifest and a loss-history CSV to out_dir.
void train_bc(const Config& cfg, const std::string& demos_path, const std::string& mode,
              const std::string& out_dir, uint64_t seed);

struct PpoRunResult {
  std::vector<std::pair<long, double>> eval_curve;  // (env step, success rate)
};

// mode: hmer (init from manifest) | hrl (random init) | seq-hybrid (trained
// like hmer; the open-loop execution difference applies at evaluation).
PpoRunResult train_ppo(const Config& cfg, const std::string& mode, SubTask task,
                       const std::string& init_manifest, long total_steps, uint64_t seed,
                       const std::string& out_dir);

// Deterministic sub-task success rate / error statistics over seeded episodes.
struct SubtaskEval {
  double success_rate = 0.0;
  double mean_error = 0.0;       // over successes
  double frac_under_2cm = 0.0;   // over successes
  std::vector<SubtaskResult> episodes;
};
SubtaskEval evaluate_subtask(const Sim& sim, const Config& cfg, ExpertPolicy& policy, SubTask task,
                             int episodes, uint64_t seed);

}  // namespace hmer

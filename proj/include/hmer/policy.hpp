#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hmer/config.hpp"
#include "hmer/nn.hpp"
#include "hmer/sim.hpp"

namespace hmer {

enum class ExpertKind { Navigation, Picking, Placing, Flat };

const char* expert_name(ExpertKind k);
ExpertKind expert_from_name(const std::string& s);

// Normalized observation slabs for one policy evaluation. Unused modalities
// stay empty; the layout is fixed by the net's ObsSpec.
struct ObsVec {
  std::vector<double> lidar;  // scan / r_max
  std::vector<double> image;  // 3*S*S binary cells
  std::vector<double> vec;    // trailing dense features (ego / pose error)
};

// Builds the normalized input slabs each expert consumes.
class ObsBuilder {
 public:
  ObsBuilder(const Sim& sim, const Config& cfg) : sim_(sim), cfg_(cfg) {}

  ObsVec build(ExpertKind kind, const WorldState& w, const Pose2D& goal) const;

  // Dense feature vectors (exposed for demo serialization).
  std::vector<double> nav_vec(const WorldState& w, const Pose2D& goal) const;
  std::vector<double> pick_vec(const WorldState& w) const;
  std::vector<double> place_vec(const WorldState& w, const Pose2D& goal) const;
  std::vector<double> flat_vec(const WorldState& w, const Pose2D& goal) const;

 private:
  const Sim& sim_;
  const Config& cfg_;
};

// Actor-critic with a modality-specific encoder, tanh-bounded Gaussian mean
// head, optional Bernoulli clamp head and a state-independent log-std.
class PolicyNet {
 public:
  struct ObsSpec {
    std::size_t lidar = 0;  // beams
    std::size_t image = 0;  // 3*S*S
    std::size_t vec = 0;
  };

  struct Ws {
    std::vector<double> scratch;          // pre-activation buffer
    std::vector<double> l1, l2, l3;       // lidar conv activations (post-tanh)
    std::vector<double> i1, i2, i3;       // image conv activations
    std::vector<double> enc_in;           // concatenated encoder output + vec
    std::vector<double> e1, e2;           // dense encoder activations (placing)
    std::vector<double> a1, a2, v1, v2;   // head activations
    std::vector<double> mean_raw;         // pre-tanh mean
    std::vector<double> mean;
    double clamp_logit = 0.0;
    double value = 0.0;
    // backward scratch
    std::vector<double> g_enc, g_a, g_b, g_big1, g_big2;
  };

  struct Out {
    const double* mean = nullptr;
    double clamp_logit = 0.0;
    double value = 0.0;
  };

  static PolicyNet build(ExpertKind kind, const Config& cfg);

  void init_params(Rng& rng);
  Ws make_ws() const;

  Out forward(const ObsVec& obs, Ws& ws) const;
  // Upstream grads wrt mean / clamp logit / value; log-std grads are
  // accumulated by the caller directly on the log_std slice.
  void backward(const ObsVec& obs, Ws& ws, const double* gmean, double gclamp, double gvalue,
                GradBuffer& g) const;

  const double* log_std(const ParamStore& store) const { return store.ptr(log_std_slice); }
  std::size_t log_std_offset() const { return ps.slice(log_std_slice).offset; }

  void save(const std::string& path, long step) const;
  // Restores parameters and Adam state; throws NnError on arch mismatch.
  long load(const std::string& path);

  ExpertKind kind = ExpertKind::Navigation;
  ObsSpec obs_spec;
  std::size_t act_dim = 0;
  bool has_clamp = false;
  std::vector<double> bounds;  // per continuous dim
  ParamStore ps;
  AdamState adam;

 private:
  // encoder
  bool use_lidar_ = false, use_image_ = false, use_dense_enc_ = false;
  Conv1D lc1_, lc2_, lc3_;
  Conv2D ic1_, ic2_, ic3_;
  Dense enc1_, enc2_;
  std::size_t enc_out_ = 0;  // actor/critic input width
  // heads
  Dense a1_, a2_, a_mu_, a_clamp_;
  Dense v1_, v2_, v_out_;
  std::size_t log_std_slice = 0;
  int hidden_ = 0;
};

struct SampledAction {
  Action action;                 // executed (clipped) control
  std::vector<double> raw;       // pre-clip continuous sample
  bool clamp = false;
  double logp = 0.0;
  double value = 0.0;
};

// Draws an action from the policy head outputs. Deterministic mode takes the
// mean and thresholds the clamp probability at 0.5.
SampledAction sample_action(const PolicyNet& net, const PolicyNet::Out& out, Rng& rng,
                            bool deterministic);

// Joint log-prob of a stored raw action under the current head outputs.
double action_logprob(const PolicyNet& net, const PolicyNet::Out& out,
                      const std::vector<double>& raw, bool clamp);
double action_entropy(const PolicyNet& net, const PolicyNet::Out& out);

Action to_env_action(const PolicyNet& net, const double* raw, bool clamp);

// Checkpoint manifest: ExpertKind name -> checkpoint path.
void write_manifest(const std::string& path,
                    const std::vector<std::pair<ExpertKind, std::string>>& entries);
std::vector<std::pair<ExpertKind, std::string>> read_manifest(const std::string& path);

}  // namespace hmer

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmer/geometry.hpp"

namespace hmer {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
};

struct ZoneSpec {
  Pose2D pose;
  double tolerance = 0.5;
};

struct ForkliftSpec {
  double length = 1.1;       // footprint, meters
  double width = 0.7;
  double fork_offset = 0.75; // fork tip ahead of the body center
  double v_max = 1.5;        // m/s
  double omega_max = 1.5;    // rad/s
  double hdot_max = 0.25;    // m/s
  double h_max = 0.8;        // meters
};

struct ClampSpec {
  double d_clamp = 0.15;       // fork tip to cargo center, inclusive
  double theta_clamp = 0.15;   // |bearing to cargo|, inclusive
  double h_center = 0.10;      // cargo clamp height
  double h_band = 0.05;        // inclusive band around h_center
};

struct LidarSpec {
  int n_scan = 360;
  double r_max = 10.0;
};

struct ImageSpec {
  int size = 32;        // H = W
  double window = 4.8;  // side of the egocentric window, meters
  // Vehicle anchor row fraction (0 = top). Heading points up in the image.
  double anchor_row_frac = 0.6875;
};

struct DynObstacleSpec {
  int count = 2;
  double radius = 0.4;
  double speed = 0.3;
  Aabb region{4.0, 8.0, 16.0, 12.0};
};

struct RandomizationSpec {
  Range cargo_mass{20.0, 100.0};
  Range friction{0.92, 1.08};
  double layout_jitter = 0.4;  // uniform +-jitter on zone/cargo centers
};

// Which episode the simulator sets up. Full is the complete material-handling
// cycle; the sub-tasks start inside a single phase for per-expert training.
enum class SubTask { Full, Pick, Place };

struct EnvConfig {
  double arena_w = 20.0;
  double arena_h = 20.0;
  double wall_thickness = 0.2;
  double control_dt = 0.1;
  int t_max = 2000;
  int t_max_pick = 400;
  int t_max_place = 150;

  ForkliftSpec forklift;
  ClampSpec clamp;
  LidarSpec lidar;
  ImageSpec image;
  DynObstacleSpec dyn;
  RandomizationSpec rand;

  ZoneSpec start_zone{{2.5, 2.5, 0.0}, 0.5};
  ZoneSpec transfer_zone{{15.0, 3.5, 1.5707963267948966}, 0.5};
  ZoneSpec goal_slot{{16.0, 16.0, 1.5707963267948966}, 0.5};
  double place_tolerance = 0.02;

  Vec2 cargo_spawn_center{15.0, 5.8};
  double cargo_spawn_radius = 1.2;
  double cargo_half_len = 0.3;
  double cargo_half_wid = 0.2;

  std::vector<Aabb> racks{{8.0, 6.0, 12.0, 6.8}, {8.0, 13.0, 12.0, 13.8}};

  SubTask subtask = SubTask::Full;
  std::string trajectory_dump;  // JSONL path; empty disables

  void validate() const;
};

struct RewardConfig {
  double lambda_prec = 1.0;
  double eps_stab = 0.05;
  double r_success = 50.0;
  double w_ang = 0.5;
  double w_prog = 10.0;
  double w_smooth = 0.1;
  double w_coll = 100.0;
  double w_time = 0.01;
  double w_dist = 0.5;
  double w_align = 0.2;
  double pick_bonus = 50.0;
  double clamp_fail_penalty = 5.0;
  // {variance_only, mean_var, off}; variance-only keeps sparse-bonus signs.
  std::string norm_mode = "variance_only";

  void validate() const;
};

struct PlannerConfig {
  int max_retries = 3;
};

struct NetConfig {
  std::array<int, 3> lidar_kernels{8, 4, 3};
  std::array<int, 3> lidar_strides{4, 2, 1};
  std::array<int, 3> lidar_channels{4, 8, 8};
  // Image stack is picked by image size: the 84x84 configuration is the
  // conventional NatureCNN; the desk-scale 32x32 one is scaled to fit.
  std::array<int, 3> img_kernels{4, 4, 3};
  std::array<int, 3> img_strides{2, 2, 1};
  std::array<int, 3> img_channels{4, 8, 8};
  int hidden = 256;          // two hidden layers of this width per head
  double init_log_std = -0.5;
  double clamp_logit_bias = -2.0;
};

struct BCHyper {
  double lr = 1e-3;
  int epochs = 50;
  int minibatch = 64;
};

struct PPOHyper {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double entropy_coef = 0.01;   // c2
  double value_coef = 0.5;      // c1
  int batch = 2048;             // transitions per update across envs
  int minibatch = 256;
  int epochs = 10;
  double lr = 1e-4;             // annealed linearly to zero
  int n_env = 8;
  long total_steps = 500000;
  long eval_interval = 20000;
  int eval_episodes = 50;
  // Placement sub-task reward overrides (see docs): keeps Eq-form but makes
  // release-and-refine the optimum instead of reward farming.
  double place_train_r_success = 1700.0;
};

struct EvalConfig {
  int n_episodes = 200;
  int bootstrap_samples = 1000;
};

struct Config {
  EnvConfig env;
  RewardConfig rewards;
  PlannerConfig planner;
  NetConfig net;
  BCHyper bc;
  PPOHyper ppo;
  EvalConfig eval;

  void validate() const;
};

Config default_config();
Config load_config(const std::string& path);
void save_config(const Config& cfg, const std::string& path);
std::string config_to_json(const Config& cfg);
Config config_from_json(const std::string& json_text);

// FNV-1a over the canonical JSON dump; echoed into run metadata.
std::string config_hash(const Config& cfg);

}  // namespace hmer

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hmer/config.hpp"
#include "hmer/geometry.hpp"
#include "hmer/rng.hpp"

namespace hmer {

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ForkliftState {
  Pose2D pose;
  double v = 0.0;       // executed linear velocity, m/s
  double omega = 0.0;   // executed angular velocity, rad/s
  double h = 0.0;       // fork height in [0, h_max]
  bool clamped = false;
  std::optional<int> carrying;  // cargo id
};

struct Action {
  double v_cmd = 0.0;
  double omega_cmd = 0.0;
  double h_dot = 0.0;
  bool clamp_trigger = false;
};

struct Cargo {
  int id = 0;
  Pose2D pose;
  double mass = 0.0;
};

struct DynObstacle {
  Vec2 pos;
  Vec2 vel;
  double radius = 0.0;
};

struct EnvParams {
  double cargo_mass = 0.0;
  double friction_coeff = 1.0;
  uint64_t obstacle_seed = 0;
  Vec2 transfer_offset;
  Vec2 goal_offset;
  Vec2 cargo_offset;
};

struct StepEvents {
  bool collided = false;
  bool clamp_succeeded = false;
  bool clamp_failed = false;
  bool placed = false;
  bool timed_out = false;

  bool terminal() const { return collided || placed || timed_out; }
};

struct LidarScan {
  std::vector<double> ranges;  // n_scan values in [0, r_max]
};

struct SemanticImage {
  int size = 0;                 // H = W
  std::vector<double> data;     // [channel][row][col], 3 channels, values in {0,1}
  double& at(int c, int r, int col) { return data[(c * size + r) * size + col]; }
  double at(int c, int r, int col) const { return data[(c * size + r) * size + col]; }
};

struct EgoState {
  double v = 0.0;
  double omega = 0.0;
  double h = 0.0;
  double goal_dist = 0.0;
  double goal_bearing = 0.0;  // (-pi, pi], left positive
};

struct WorldState {
  ForkliftState forklift;
  std::vector<Cargo> cargo;
  std::vector<Aabb> racks;              // includes arena walls
  std::vector<DynObstacle> dyn_obstacles;
  ZoneSpec start_zone, transfer_zone, goal_slot;
  long t = 0;
  EnvParams params;
  bool terminal = false;
  // Pose of the carried cargo in the fork frame, captured at clamp time.
  Pose2D carried_rel;
  // Fault injection (acceptance 7): probability that the first clamp attempt
  // of an episode succeeds given alignment. 1 = no perturbation.
  double first_clamp_success_prob = 1.0;
  long clamp_attempts = 0;
  Rng rng;  // drives stochastic fault injection only; dynamics are deterministic
};

// Simulator facade bound to one EnvConfig. Stateless between calls except for
// the optional trajectory dump stream.
class Sim {
 public:
  explicit Sim(const EnvConfig& cfg);

  const EnvConfig& config() const { return cfg_; }

  WorldState reset(uint64_t seed) const;

  // Advances one control period. Throws SimError on a terminal state.
  StepEvents step(WorldState& state, const Action& a) const;

  // Clamp attempt; mutates the state on success. Returns (succeeded, failed).
  std::pair<bool, bool> try_clamp(WorldState& state) const;

  LidarScan raycast_lidar(const WorldState& state) const;
  SemanticImage render_semantic_image(const WorldState& state) const;
  EgoState ego_state(const WorldState& state, const Pose2D& goal) const;

  // Bundled sensor sweep against the active phase goal.
  struct Observation {
    LidarScan lidar;
    SemanticImage image;
    EgoState ego;
  };
  Observation observe(const WorldState& state, const Pose2D& goal) const {
    return {raycast_lidar(state), render_semantic_image(state), ego_state(state, goal)};
  }

  // Forklift footprint and fork-tip position.
  Obb footprint(const ForkliftState& f) const;
  Vec2 fork_tip(const ForkliftState& f) const;
  Obb cargo_obb(const Cargo& c) const;
  // World pose of the carried cargo for a given forklift state.
  Pose2D carried_cargo_pose(const ForkliftState& f, const Pose2D& rel) const;

  bool collides(const WorldState& state, const ForkliftState& f) const;

  // Static geometry: configured racks plus the four arena walls.
  std::vector<Aabb> world_racks() const;

  // Clamp feasibility against cargo `c` (bearing, distance and height bands).
  bool clamp_aligned(const WorldState& state, const Cargo& c) const;

  int time_limit(const WorldState& state) const;

  void write_snapshot(const WorldState& state, const std::string& path) const;

 private:
  EnvConfig cfg_;

  void integrate_obstacles(WorldState& state) const;
  std::optional<double> cast_ray(const WorldState& state, const Vec2& origin, const Vec2& dir) const;
};

// JSON (de)serialization of full world snapshots (trajectory dump + demos).
std::string world_to_json(const WorldState& s);

}  // namespace hmer

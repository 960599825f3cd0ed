#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hmer/planner.hpp"
#include "hmer/sim.hpp"

namespace hmer {

struct HeuristicError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GridCell {
  int x = 0;
  int y = 0;
  bool operator==(const GridCell&) const = default;
};

struct OccupancyGrid {
  double resolution = 0.1;
  int width = 0;
  int height = 0;
  std::vector<uint8_t> occupied;

  bool at(int x, int y) const { return occupied[static_cast<size_t>(y) * width + x]; }
  bool in_bounds(const GridCell& c) const {
    return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height;
  }
  GridCell to_cell(const Vec2& p) const {
    return {static_cast<int>(p.x / resolution), static_cast<int>(p.y / resolution)};
  }
  Vec2 to_world(const GridCell& c) const {
    return {(c.x + 0.5) * resolution, (c.y + 0.5) * resolution};
  }
};

// Rasterizes rack geometry inflated by the forklift circumradius (plus margin).
OccupancyGrid build_grid(const std::vector<Aabb>& racks, double arena_w, double arena_h,
                         double inflation, double resolution = 0.1);

// Optimal 8-connected path (octile heuristic, deterministic (f, h, index)
// tie-breaking). Throws HeuristicError{"no-path"} when unreachable.
std::vector<GridCell> astar_plan(const OccupancyGrid& grid, const GridCell& start,
                                 const GridCell& goal);

// Uniform-cost reference search over the same move set (test oracle).
double dijkstra_cost(const OccupancyGrid& grid, const GridCell& start, const GridCell& goal);

double path_cost(const std::vector<GridCell>& path);

// Pure-pursuit tracking of a world-space waypoint list.
struct PursuitGains {
  double lookahead = 0.8;
  double k_omega = 2.0;
  double v_max = 1.5;
  double omega_max = 1.5;
  double slow_radius = 1.0;  // decelerate within this distance of the final point
};
std::pair<double, double> pure_pursuit(const Pose2D& pose, const std::vector<Vec2>& path,
                                       const PursuitGains& gains);

// Proportional servo toward a body-frame pose error; raises the trigger when
// the error is inside the supplied tolerances.
struct ServoGains {
  double k_v = 1.0;
  double k_theta = 2.0;
  double k_h = 1.0;
};

// ---- rule-based experts --------------------------------------------------------

class HeuristicNav : public ExpertPolicy {
 public:
  HeuristicNav(const Sim& sim, const Config& cfg) : sim_(sim), cfg_(cfg) {}
  void on_phase_start(const WorldState& w, const Pose2D& goal) override;
  Action act(const WorldState& w, const Pose2D& goal, Rng& rng, bool deterministic) override;

 private:
  const Sim& sim_;
  const Config& cfg_;
  std::vector<Vec2> path_;
};

class HeuristicPick : public ExpertPolicy {
 public:
  HeuristicPick(const Sim& sim, const Config& cfg) : sim_(sim), cfg_(cfg) {}
  Action act(const WorldState& w, const Pose2D& goal, Rng& rng, bool deterministic) override;

 private:
  const Sim& sim_;
  const Config& cfg_;
};

class HeuristicPlace : public ExpertPolicy {
 public:
  HeuristicPlace(const Sim& sim, const Config& cfg) : sim_(sim), cfg_(cfg) {}
  Action act(const WorldState& w, const Pose2D& goal, Rng& rng, bool deterministic) override;

 private:
  const Sim& sim_;
  const Config& cfg_;
};

// Owning bundle of the three rule-based controllers.
struct HeuristicExperts {
  HeuristicExperts(const Sim& sim, const Config& cfg) : nav(sim, cfg), pick(sim, cfg), place(sim, cfg) {}
  HeuristicNav nav;
  HeuristicPick pick;
  HeuristicPlace place;
  PolicyBundle bundle() {
    return {{ExpertKind::Navigation, &nav},
            {ExpertKind::Picking, &pick},
            {ExpertKind::Placing, &place}};
  }
};

// ---- demonstrations ------------------------------------------------------------

struct DemoStep {
  PlannerPhase phase = PlannerPhase::Departure;
  ExpertKind expert = ExpertKind::Navigation;
  ForkliftState forklift;
  Pose2D cargo;
  bool cargo_carried = false;
  std::vector<DynObstacle> dyn;
  double act[3] = {0, 0, 0};
  bool trigger = false;
};

struct Demonstration {
  uint64_t seed = 0;
  bool success = false;
  double final_error = 0.0;
  Pose2D transfer_zone;
  Pose2D goal_slot;
  std::vector<DemoStep> steps;
};

// Runs planner-mode episodes with the rule-based experts over randomized
// worlds, keeping successes until n are stored. Throws HeuristicError when the
// success yield drops below 20%.
std::vector<Demonstration> generate_demonstrations(const Sim& sim, const Config& cfg, int n,
                                                   uint64_t seed);

void write_demonstrations(const std::vector<Demonstration>& demos, const Config& cfg,
                          uint64_t seed, const std::string& path);
std::vector<Demonstration> read_demonstrations(const std::string& path, const Config& cfg);

// Reconstructs the world a demo step observed (for BC observation building).
WorldState demo_world(const Sim& sim, const Demonstration& demo, const DemoStep& step);

}  // namespace hmer

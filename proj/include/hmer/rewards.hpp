#pragma once

#include <cmath>

#include "hmer/config.hpp"
#include "hmer/sim.hpp"

namespace hmer {

// Combined Euclidean + angular deviation: sqrt(dx^2+dy^2) + w_ang*|wrap(dth)|.
inline double d_target(const Pose2D& pose, const Pose2D& goal, const RewardConfig& cfg) {
  return std::hypot(pose.x - goal.x, pose.y - goal.y) +
         cfg.w_ang * std::abs(wrap_angle(pose.theta - goal.theta));
}

// Reciprocal precision reward for the placement phase. `dist` is the current
// d_target of the (virtual) cargo pose; success fires on placed_ok only.
double reward_place(double dist, bool placed_ok, bool collided, const RewardConfig& cfg);

// Dense navigation shaping: progress toward the goal, smoothness, time and
// collision terms.
double reward_nav(const EgoState& prev, const EgoState& cur, bool collided,
                  const RewardConfig& cfg);

// Picking shaping: pose-minimization toward the cargo plus clamp outcomes.
double reward_pick(double cargo_dist, double heading_err, const StepEvents& ev,
                   const RewardConfig& cfg);

// Welford-accumulated running statistics.
struct RunningStats {
  long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void update(double x) {
    count += 1;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  double variance() const { return count > 1 ? m2 / (count - 1) : 0.0; }
};

// Updates stats with r and returns the scaled (and clipped to [-10,10]) value.
// mode: variance_only (default), mean_var, off.
double normalize_reward(RunningStats& stats, double r, const std::string& mode);

}  // namespace hmer

#include "hmer/rewards.hpp"

#include <algorithm>

namespace hmer {

double reward_place(double dist, bool placed_ok, bool collided, const RewardConfig& cfg) {
  double r = cfg.lambda_prec / (dist + cfg.eps_stab);
  if (placed_ok) r += cfg.r_success;
  if (collided) r -= cfg.w_coll;
  return r;
}

double reward_nav(const EgoState& prev, const EgoState& cur, bool collided,
                  const RewardConfig& cfg) {
  double r = cfg.w_prog * (prev.goal_dist - cur.goal_dist);
  r -= cfg.w_smooth * (std::abs(cur.v - prev.v) + std::abs(cur.omega - prev.omega));
  r -= cfg.w_time;
  if (collided) r -= cfg.w_coll;
  return r;
}

double reward_pick(double cargo_dist, double heading_err, const StepEvents& ev,
                   const RewardConfig& cfg) {
  double r = -cfg.w_dist * cargo_dist - cfg.w_align * std::abs(heading_err) - cfg.w_time;
  if (ev.clamp_succeeded) r += cfg.pick_bonus;
  if (ev.clamp_failed) r -= cfg.clamp_fail_penalty;
  if (ev.collided) r -= cfg.w_coll;
  return r;
}

double normalize_reward(RunningStats& stats, double r, const std::string& mode) {
  stats.update(r);
  if (mode == "off") return r;
  const double scale = std::sqrt(stats.variance() + 1e-8);
  double out = mode == "mean_var" ? (r - stats.mean) / scale : r / scale;
  return std::clamp(out, -10.0, 10.0);
}

}  // namespace hmer

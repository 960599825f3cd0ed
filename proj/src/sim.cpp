#include "hmer/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace hmer {

using nlohmann::json;

namespace {

double clip(double v, double lo, double hi) { return std::max(lo, std::min(hi, v)); }

// Combined Euclidean + angular deviation between two poses.
double pose_deviation(const Pose2D& a, const Pose2D& b, double w_ang) {
  return std::hypot(a.x - b.x, a.y - b.y) + w_ang * std::abs(wrap_angle(a.theta - b.theta));
}

constexpr double kPlaceAngWeight = 0.5;  // kept in sync with RewardConfig.w_ang default

}  // namespace

Sim::Sim(const EnvConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

Obb Sim::footprint(const ForkliftState& f) const {
  return Obb{f.pose, 0.5 * cfg_.forklift.length, 0.5 * cfg_.forklift.width};
}

Vec2 Sim::fork_tip(const ForkliftState& f) const {
  return f.pose.to_world({cfg_.forklift.fork_offset, 0.0});
}

Obb Sim::cargo_obb(const Cargo& c) const {
  return Obb{c.pose, cfg_.cargo_half_len, cfg_.cargo_half_wid};
}

Pose2D Sim::carried_cargo_pose(const ForkliftState& f, const Pose2D& rel) const {
  const Vec2 p = f.pose.to_world({rel.x, rel.y});
  return Pose2D{p.x, p.y, wrap_angle(f.pose.theta + rel.theta)};
}

std::vector<Aabb> Sim::world_racks() const {
  std::vector<Aabb> racks = cfg_.racks;
  const double wt = cfg_.wall_thickness;
  racks.push_back({0.0, 0.0, cfg_.arena_w, wt});
  racks.push_back({0.0, cfg_.arena_h - wt, cfg_.arena_w, cfg_.arena_h});
  racks.push_back({0.0, 0.0, wt, cfg_.arena_h});
  racks.push_back({cfg_.arena_w - wt, 0.0, cfg_.arena_w, cfg_.arena_h});
  return racks;
}

int Sim::time_limit(const WorldState&) const {
  switch (cfg_.subtask) {
    case SubTask::Pick: return cfg_.t_max_pick;
    case SubTask::Place: return cfg_.t_max_place;
    case SubTask::Full: break;
  }
  return cfg_.t_max;
}

WorldState Sim::reset(uint64_t seed) const {
  WorldState s;
  Rng rng(mix_seed(seed, 0));

  auto& p = s.params;
  p.cargo_mass = rng.uniform(cfg_.rand.cargo_mass.lo, cfg_.rand.cargo_mass.hi);
  p.friction_coeff = rng.uniform(cfg_.rand.friction.lo, cfg_.rand.friction.hi);
  p.obstacle_seed = mix_seed(seed, 1);
  const double j = cfg_.rand.layout_jitter;
  p.transfer_offset = {rng.uniform(-j, j), rng.uniform(-j, j)};
  p.goal_offset = {rng.uniform(-j, j), rng.uniform(-j, j)};
  p.cargo_offset = {rng.uniform(-j, j), rng.uniform(-j, j)};

  s.start_zone = cfg_.start_zone;
  s.transfer_zone = cfg_.transfer_zone;
  s.transfer_zone.pose.x += p.transfer_offset.x;
  s.transfer_zone.pose.y += p.transfer_offset.y;
  s.goal_slot = cfg_.goal_slot;
  s.goal_slot.pose.x += p.goal_offset.x;
  s.goal_slot.pose.y += p.goal_offset.y;

  // Arena walls enter the rack list as collision/raycast geometry.
  s.racks = world_racks();

  // Cargo spawn: uniform in a disk around the jittered spawn center.
  Vec2 cc = cfg_.cargo_spawn_center + p.cargo_offset;
  const double ang = rng.uniform(-kPi, kPi);
  const double rad = cfg_.cargo_spawn_radius * std::sqrt(rng.uniform01());
  Cargo cargo;
  cargo.id = 0;
  cargo.pose = {cc.x + rad * std::cos(ang), cc.y + rad * std::sin(ang),
                wrap_angle(rng.uniform(-kPi, kPi))};
  cargo.mass = p.cargo_mass;
  s.cargo.push_back(cargo);

  // Dynamic obstacles, deterministic from obstacle_seed.
  Rng orng(p.obstacle_seed);
  for (int i = 0; i < cfg_.dyn.count; ++i) {
    DynObstacle o;
    const auto& reg = cfg_.dyn.region;
    o.pos = {orng.uniform(reg.xmin + cfg_.dyn.radius, reg.xmax - cfg_.dyn.radius),
             orng.uniform(reg.ymin + cfg_.dyn.radius, reg.ymax - cfg_.dyn.radius)};
    const double oa = orng.uniform(-kPi, kPi);
    o.vel = {cfg_.dyn.speed * std::cos(oa), cfg_.dyn.speed * std::sin(oa)};
    o.radius = cfg_.dyn.radius;
    s.dyn_obstacles.push_back(o);
  }

  auto& f = s.forklift;
  switch (cfg_.subtask) {
    case SubTask::Full: {
      f.pose = cfg_.start_zone.pose;
      f.pose.theta = wrap_angle(bearing_to({f.pose.x, f.pose.y, 0.0},
                                           s.transfer_zone.pose.position()) +
                                rng.uniform(-0.3, 0.3));
      break;
    }
    case SubTask::Pick: {
      const double sa = rng.uniform(-kPi, kPi);
      const double sr = 0.3 * std::sqrt(rng.uniform01());
      f.pose = {s.transfer_zone.pose.x + sr * std::cos(sa),
                s.transfer_zone.pose.y + sr * std::sin(sa), rng.uniform(-kPi, kPi)};
      f.pose.theta = wrap_angle(f.pose.theta);
      break;
    }
    case SubTask::Place: {
      const double sa = rng.uniform(-kPi, kPi);
      const double sr = rng.uniform(0.35, 0.65);
      f.pose = {s.goal_slot.pose.x + sr * std::cos(sa),
                s.goal_slot.pose.y + sr * std::sin(sa), 0.0};
      f.pose.theta = wrap_angle(bearing_to(f.pose, s.goal_slot.pose.position()) +
                                rng.uniform(-0.5, 0.5));
      f.h = cfg_.clamp.h_center;
      f.clamped = true;
      f.carrying = 0;
      s.carried_rel = {cfg_.forklift.fork_offset, 0.0, 0.0};
      s.cargo[0].pose = carried_cargo_pose(f, s.carried_rel);
      break;
    }
  }

  s.rng = Rng(mix_seed(seed, 2));
  return s;
}

bool Sim::collides(const WorldState& state, const ForkliftState& f) const {
  const Obb body = footprint(f);
  std::optional<Obb> load;
  if (f.carrying) {
    const Pose2D cp = carried_cargo_pose(f, state.carried_rel);
    load = Obb{cp, cfg_.cargo_half_len, cfg_.cargo_half_wid};
  }
  for (const auto& rack : state.racks) {
    if (obb_aabb_overlap(body, rack)) return true;
    if (load && obb_aabb_overlap(*load, rack)) return true;
  }
  for (const auto& o : state.dyn_obstacles) {
    if (obb_circle_overlap(body, o.pos, o.radius)) return true;
    if (load && obb_circle_overlap(*load, o.pos, o.radius)) return true;
  }
  return false;
}

bool Sim::clamp_aligned(const WorldState& state, const Cargo& c) const {
  const auto& f = state.forklift;
  const Vec2 tip = fork_tip(f);
  const double d = (c.pose.position() - tip).norm();
  if (d > cfg_.clamp.d_clamp) return false;
  const double bearing = std::abs(bearing_to(f.pose, c.pose.position()));
  if (bearing > cfg_.clamp.theta_clamp) return false;
  return std::abs(f.h - cfg_.clamp.h_center) <= cfg_.clamp.h_band;
}

void Sim::integrate_obstacles(WorldState& state) const {
  const double dt = cfg_.control_dt;
  const auto& reg = cfg_.dyn.region;
  for (auto& o : state.dyn_obstacles) {
    o.pos = o.pos + o.vel * dt;
    if (o.pos.x - o.radius < reg.xmin) {
      o.pos.x = reg.xmin + o.radius;
      o.vel.x = std::abs(o.vel.x);
    } else if (o.pos.x + o.radius > reg.xmax) {
      o.pos.x = reg.xmax - o.radius;
      o.vel.x = -std::abs(o.vel.x);
    }
    if (o.pos.y - o.radius < reg.ymin) {
      o.pos.y = reg.ymin + o.radius;
      o.vel.y = std::abs(o.vel.y);
    } else if (o.pos.y + o.radius > reg.ymax) {
      o.pos.y = reg.ymax - o.radius;
      o.vel.y = -std::abs(o.vel.y);
    }
  }
}

StepEvents Sim::step(WorldState& state, const Action& a) const {
  if (state.terminal) throw SimError("step called on a terminal state");
  StepEvents ev;
  auto& f = state.forklift;
  const double dt = cfg_.control_dt;

  double v = clip(a.v_cmd, -cfg_.forklift.v_max, cfg_.forklift.v_max);
  double omega = clip(a.omega_cmd, -cfg_.forklift.omega_max, cfg_.forklift.omega_max);
  const double h_dot = clip(a.h_dot, -cfg_.forklift.hdot_max, cfg_.forklift.hdot_max);

  // Domain randomization enters the dynamics here: traction scales the
  // executed velocities, and a heavier load slows the carrier.
  double scale = state.params.friction_coeff;
  if (f.carrying) scale *= 1.0 / (1.0 + state.cargo[*f.carrying].mass / 400.0);
  v *= scale;
  omega *= scale;

  f.pose = integrate_kinematics(f.pose, v, omega, dt);
  f.v = v;
  f.omega = omega;
  f.h = clip(f.h + h_dot * dt, 0.0, cfg_.forklift.h_max);

  integrate_obstacles(state);

  if (f.carrying) state.cargo[*f.carrying].pose = carried_cargo_pose(f, state.carried_rel);

  if (collides(state, f)) {
    ev.collided = true;
  } else if (a.clamp_trigger) {
    if (!f.carrying) {
      const auto [ok, failed] = try_clamp(state);
      ev.clamp_succeeded = ok;
      ev.clamp_failed = failed;
    } else {
      // Release. Placement succeeds when the combined deviation of the cargo
      // from the goal slot is inside the placement tolerance (inclusive).
      const int id = *f.carrying;
      state.cargo[id].pose = carried_cargo_pose(f, state.carried_rel);
      f.carrying.reset();
      f.clamped = false;
      const double d = pose_deviation(state.cargo[id].pose, state.goal_slot.pose, kPlaceAngWeight);
      ev.placed = d <= cfg_.place_tolerance;
    }
  }

  state.t += 1;
  if (!ev.collided && !ev.placed && state.t >= time_limit(state)) ev.timed_out = true;
  state.terminal = ev.terminal();

  if (!cfg_.trajectory_dump.empty()) write_snapshot(state, cfg_.trajectory_dump);
  return ev;
}

std::pair<bool, bool> Sim::try_clamp(WorldState& state) const {
  auto& f = state.forklift;
  for (auto& c : state.cargo) {
    if (!clamp_aligned(state, c)) continue;
    // clamp_attempts counts attempts that would succeed; the injected fault
    // (acceptance perturbation) downgrades the first of them with the
    // configured probability.
    state.clamp_attempts += 1;
    if (state.clamp_attempts == 1 && state.first_clamp_success_prob < 1.0 &&
        state.rng.uniform01() >= state.first_clamp_success_prob) {
      return {false, true};
    }
    // The clamp squares the load: cargo re-seats to a canonical pose centered
    // on the fork tip and aligned with the vehicle heading.
    f.carrying = c.id;
    f.clamped = true;
    state.carried_rel = {cfg_.forklift.fork_offset, 0.0, 0.0};
    c.pose = carried_cargo_pose(f, state.carried_rel);
    return {true, false};
  }
  return {false, true};
}

std::optional<double> Sim::cast_ray(const WorldState& state, const Vec2& origin,
                                    const Vec2& dir) const {
  std::optional<double> best;
  auto consider = [&best](const std::optional<double>& t) {
    if (t && (!best || *t < *best)) best = t;
  };
  for (const auto& rack : state.racks) consider(ray_aabb(origin, dir, rack));
  for (const auto& o : state.dyn_obstacles) consider(ray_circle(origin, dir, o.pos, o.radius));
  for (const auto& c : state.cargo) {
    if (state.forklift.carrying && *state.forklift.carrying == c.id) continue;
    consider(ray_obb(origin, dir, cargo_obb(c)));
  }
  return best;
}

LidarScan Sim::raycast_lidar(const WorldState& state) const {
  LidarScan scan;
  scan.ranges.resize(cfg_.lidar.n_scan);
  const Vec2 origin = state.forklift.pose.position();
  for (int i = 0; i < cfg_.lidar.n_scan; ++i) {
    const double b = state.forklift.pose.theta + 2.0 * kPi * i / cfg_.lidar.n_scan;
    const Vec2 dir{std::cos(b), std::sin(b)};
    const auto hit = cast_ray(state, origin, dir);
    scan.ranges[i] = hit ? std::min(*hit, cfg_.lidar.r_max) : cfg_.lidar.r_max;
  }
  return scan;
}

SemanticImage Sim::render_semantic_image(const WorldState& state) const {
  SemanticImage img;
  img.size = cfg_.image.size;
  img.data.assign(static_cast<size_t>(3) * img.size * img.size, 0.0);
  const double cell = cfg_.image.window / img.size;
  const double row_a = cfg_.image.anchor_row_frac * img.size - 0.5;
  const double col_a = 0.5 * img.size - 0.5;
  const Obb slot_marker{state.goal_slot.pose, cfg_.cargo_half_len, cfg_.cargo_half_wid};

  for (int r = 0; r < img.size; ++r) {
    for (int c = 0; c < img.size; ++c) {
      const Vec2 body{(row_a - r) * cell, (col_a - c) * cell};
      const Vec2 w = state.forklift.pose.to_world(body);
      bool occ = false;
      for (const auto& rack : state.racks) {
        if (rack.contains(w)) { occ = true; break; }
      }
      if (!occ) {
        for (const auto& o : state.dyn_obstacles) {
          if ((w - o.pos).norm() <= o.radius) { occ = true; break; }
        }
      }
      if (occ) img.at(0, r, c) = 1.0;
      for (const auto& cg : state.cargo) {
        if (state.forklift.carrying && *state.forklift.carrying == cg.id) continue;
        if (cargo_obb(cg).contains(w)) { img.at(1, r, c) = 1.0; break; }
      }
      if (slot_marker.contains(w)) img.at(2, r, c) = 1.0;
    }
  }
  return img;
}

EgoState Sim::ego_state(const WorldState& state, const Pose2D& goal) const {
  EgoState e;
  const auto& f = state.forklift;
  e.v = f.v;
  e.omega = f.omega;
  e.h = f.h;
  e.goal_dist = (goal.position() - f.pose.position()).norm();
  e.goal_bearing = e.goal_dist < 1e-12 ? 0.0 : bearing_to(f.pose, goal.position());
  return e;
}

std::string world_to_json(const WorldState& s) {
  json j;
  j["t"] = s.t;
  j["forklift"] = {{"x", s.forklift.pose.x},   {"y", s.forklift.pose.y},
                   {"theta", s.forklift.pose.theta}, {"v", s.forklift.v},
                   {"omega", s.forklift.omega}, {"h", s.forklift.h},
                   {"clamped", s.forklift.clamped},
                   {"carrying", s.forklift.carrying ? json(*s.forklift.carrying) : json()}};
  j["cargo"] = json::array();
  for (const auto& c : s.cargo)
    j["cargo"].push_back({{"id", c.id}, {"x", c.pose.x}, {"y", c.pose.y},
                          {"theta", c.pose.theta}, {"mass", c.mass}});
  j["dyn_obstacles"] = json::array();
  for (const auto& o : s.dyn_obstacles)
    j["dyn_obstacles"].push_back({{"x", o.pos.x}, {"y", o.pos.y},
                                  {"vx", o.vel.x}, {"vy", o.vel.y}, {"r", o.radius}});
  j["params"] = {{"cargo_mass", s.params.cargo_mass},
                 {"friction", s.params.friction_coeff},
                 {"obstacle_seed", s.params.obstacle_seed}};
  j["zones"] = {{"transfer", {s.transfer_zone.pose.x, s.transfer_zone.pose.y}},
                {"goal", {s.goal_slot.pose.x, s.goal_slot.pose.y, s.goal_slot.pose.theta}}};
  j["terminal"] = s.terminal;
  return j.dump();
}

void Sim::write_snapshot(const WorldState& state, const std::string& path) const {
  std::ofstream f(path, std::ios::app);
  f << world_to_json(state) << "\n";
}

}  // namespace hmer

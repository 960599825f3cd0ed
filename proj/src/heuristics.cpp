#include "hmer/heuristics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include "json.hpp"

namespace hmer {

using nlohmann::json;

namespace {

double clip(double v, double lo, double hi) { return std::max(lo, std::min(hi, v)); }

constexpr double kSqrt2 = 1.4142135623730951;

struct Move {
  int dx, dy;
  double cost;
};
constexpr Move kMoves[8] = {{1, 0, 1.0},  {-1, 0, 1.0}, {0, 1, 1.0},       {0, -1, 1.0},
                            {1, 1, kSqrt2}, {1, -1, kSqrt2}, {-1, 1, kSqrt2}, {-1, -1, kSqrt2}};

double octile(const GridCell& a, const GridCell& b) {
  const double dx = std::abs(a.x - b.x);
  const double dy = std::abs(a.y - b.y);
  return std::max(dx, dy) + (kSqrt2 - 1.0) * std::min(dx, dy);
}

bool move_allowed(const OccupancyGrid& g, const GridCell& from, const Move& m) {
  const GridCell to{from.x + m.dx, from.y + m.dy};
  if (!g.in_bounds(to) || g.at(to.x, to.y)) return false;
  // No cutting corners through blocked orthogonal neighbours.
  if (m.dx != 0 && m.dy != 0) {
    if (g.at(from.x + m.dx, from.y) || g.at(from.x, from.y + m.dy)) return false;
  }
  return true;
}

}  // namespace

OccupancyGrid build_grid(const std::vector<Aabb>& racks, double arena_w, double arena_h,
                         double inflation, double resolution) {
  OccupancyGrid g;
  g.resolution = resolution;
  g.width = static_cast<int>(std::ceil(arena_w / resolution));
  g.height = static_cast<int>(std::ceil(arena_h / resolution));
  g.occupied.assign(static_cast<size_t>(g.width) * g.height, 0);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const Vec2 c = g.to_world({x, y});
      for (const auto& r : racks) {
        const double dx = std::max({r.xmin - c.x, 0.0, c.x - r.xmax});
        const double dy = std::max({r.ymin - c.y, 0.0, c.y - r.ymax});
        if (dx * dx + dy * dy <= inflation * inflation) {
          g.occupied[static_cast<size_t>(y) * g.width + x] = 1;
          break;
        }
      }
    }
  }
  return g;
}

std::vector<GridCell> astar_plan(const OccupancyGrid& grid, const GridCell& start,
                                 const GridCell& goal) {
  if (!grid.in_bounds(start) || !grid.in_bounds(goal))
    throw HeuristicError("astar: start/goal out of bounds");
  if (grid.at(start.x, start.y) || grid.at(goal.x, goal.y))
    throw HeuristicError("astar: start/goal occupied");

  const size_t n = static_cast<size_t>(grid.width) * grid.height;
  const auto idx = [&](const GridCell& c) {
    return static_cast<size_t>(c.y) * grid.width + c.x;
  };
  std::vector<double> gscore(n, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n, -1);
  std::vector<uint8_t> closed(n, 0);

  struct Node {
    double f, h;
    size_t i;
    bool operator>(const Node& o) const {
      if (f != o.f) return f > o.f;
      if (h != o.h) return h > o.h;
      return i > o.i;
    }
  };
  std::priority_queue<Node, std::vector<Node>, std::greater<Node>> open;
  gscore[idx(start)] = 0.0;
  open.push({octile(start, goal), octile(start, goal), idx(start)});

  while (!open.empty()) {
    const Node top = open.top();
    open.pop();
    if (closed[top.i]) continue;
    closed[top.i] = 1;
    const GridCell cur{static_cast<int>(top.i % grid.width), static_cast<int>(top.i / grid.width)};
    if (cur == goal) {
      std::vector<GridCell> path;
      size_t i = top.i;
      while (true) {
        path.push_back({static_cast<int>(i % grid.width), static_cast<int>(i / grid.width)});
        if (parent[i] < 0) break;
        i = static_cast<size_t>(parent[i]);
      }
      std::reverse(path.begin(), path.end());
      return path;
    }
    for (const auto& m : kMoves) {
      if (!move_allowed(grid, cur, m)) continue;
      const GridCell nb{cur.x + m.dx, cur.y + m.dy};
      const size_t ni = idx(nb);
      const double ng = gscore[top.i] + m.cost;
      if (ng < gscore[ni] - 1e-12) {
        gscore[ni] = ng;
        parent[ni] = static_cast<int>(top.i);
        const double h = octile(nb, goal);
        open.push({ng + h, h, ni});
      }
    }
  }
  throw HeuristicError("no-path");
}

double dijkstra_cost(const OccupancyGrid& grid, const GridCell& start, const GridCell& goal) {
  const size_t n = static_cast<size_t>(grid.width) * grid.height;
  const auto idx = [&](const GridCell& c) {
    return static_cast<size_t>(c.y) * grid.width + c.x;
  };
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::priority_queue<std::pair<double, size_t>, std::vector<std::pair<double, size_t>>,
                      std::greater<>>
      open;
  dist[idx(start)] = 0.0;
  open.push({0.0, idx(start)});
  while (!open.empty()) {
    const auto [d, i] = open.top();
    open.pop();
    if (d > dist[i] + 1e-12) continue;
    const GridCell cur{static_cast<int>(i % grid.width), static_cast<int>(i / grid.width)};
    if (cur == goal) return d;
    for (const auto& m : kMoves) {
      if (!move_allowed(grid, cur, m)) continue;
      const size_t ni = idx({cur.x + m.dx, cur.y + m.dy});
      if (d + m.cost < dist[ni] - 1e-12) {
        dist[ni] = d + m.cost;
        open.push({dist[ni], ni});
      }
    }
  }
  return std::numeric_limits<double>::infinity();
}

double path_cost(const std::vector<GridCell>& path) {
  double c = 0.0;
  for (size_t i = 1; i < path.size(); ++i) {
    const int dx = std::abs(path[i].x - path[i - 1].x);
    const int dy = std::abs(path[i].y - path[i - 1].y);
    c += (dx + dy == 2) ? kSqrt2 : 1.0;
  }
  return c;
}

std::pair<double, double> pure_pursuit(const Pose2D& pose, const std::vector<Vec2>& path,
                                       const PursuitGains& gains) {
  if (path.empty()) throw HeuristicError("pure_pursuit: empty path");
  // Walk forward from the nearest waypoint to the first point past the
  // lookahead distance.
  size_t nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < path.size(); ++i) {
    const double d = (path[i] - pose.position()).norm();
    if (d < best) {
      best = d;
      nearest = i;
    }
  }
  size_t target = path.size() - 1;
  for (size_t i = nearest; i < path.size(); ++i) {
    if ((path[i] - pose.position()).norm() >= gains.lookahead) {
      target = i;
      break;
    }
  }
  const double alpha = bearing_to(pose, path[target]);
  const double omega = clip(gains.k_omega * alpha, -gains.omega_max, gains.omega_max);
  double v = gains.v_max * std::max(0.0, std::cos(alpha));
  const double d_final = (path.back() - pose.position()).norm();
  if (d_final < gains.slow_radius)
    v = std::min(v, gains.v_max * d_final / gains.slow_radius);
  return {v, omega};
}

// ---- rule-based experts --------------------------------------------------------

void HeuristicNav::on_phase_start(const WorldState& w, const Pose2D& goal) {
  path_.clear();
  const auto& fl = cfg_.env.forklift;
  const double inflation = std::hypot(0.5 * fl.length, 0.5 * fl.width) + 0.05;
  const OccupancyGrid grid =
      build_grid(w.racks, cfg_.env.arena_w, cfg_.env.arena_h, inflation);
  GridCell start = grid.to_cell(w.forklift.pose.position());
  GridCell end = grid.to_cell(goal.position());
  // Snap to the nearest free cell when the endpoint sits inside the inflation.
  auto snap = [&grid](GridCell c) {
    if (grid.in_bounds(c) && !grid.at(c.x, c.y)) return c;
    for (int r = 1; r < 12; ++r) {
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const GridCell n{c.x + dx, c.y + dy};
          if (grid.in_bounds(n) && !grid.at(n.x, n.y)) return n;
        }
      }
    }
    return c;
  };
  start = snap(start);
  end = snap(end);
  try {
    const auto cells = astar_plan(grid, start, end);
    path_.reserve(cells.size() + 1);
    for (const auto& c : cells) path_.push_back(grid.to_world(c));
  } catch (const HeuristicError&) {
    // Fall back to straight-line pursuit.
  }
  path_.push_back(goal.position());
}

Action HeuristicNav::act(const WorldState& w, const Pose2D& goal, Rng&, bool) {
  if (path_.empty()) on_phase_start(w, goal);
  PursuitGains gains;
  gains.v_max = cfg_.env.forklift.v_max;
  gains.omega_max = cfg_.env.forklift.omega_max;
  auto [v, omega] = pure_pursuit(w.forklift.pose, path_, gains);

  // Yield to dynamic obstacles crossing ahead.
  for (const auto& o : w.dyn_obstacles) {
    const double d = (o.pos - w.forklift.pose.position()).norm() - o.radius;
    const double b = bearing_to(w.forklift.pose, o.pos);
    if (std::abs(b) < 1.1 && d < 2.0) v *= clip((d - 0.7) / 1.3, 0.0, 1.0);
  }
  Action a;
  a.v_cmd = v;
  a.omega_cmd = omega;
  return a;
}

Action HeuristicPick::act(const WorldState& w, const Pose2D&, Rng&, bool) {
  Action a;
  const auto& clamp_spec = cfg_.env.clamp;
  const auto& fl = cfg_.env.forklift;
  const ServoGains gains;
  a.h_dot = clip(gains.k_h * (clamp_spec.h_center - w.forklift.h), -fl.hdot_max, fl.hdot_max);
  if (w.cargo.empty()) return a;
  const Cargo& cargo = w.cargo[0];

  if (sim_.clamp_aligned(w, cargo)) {
    a.clamp_trigger = true;
    return a;
  }

  const Vec2 body = w.forklift.pose.to_body(cargo.pose.position());
  const double dist = body.norm();
  const double bearing = std::atan2(body.y, body.x);
  if (std::abs(bearing) > 0.8) {
    // Out of the approach cone: rotate toward the cargo when near, otherwise
    // sweep left (a fixed search direction keeps demonstrations consistent).
    a.omega_cmd = 0.8 * fl.omega_max * (dist <= 2.2 ? (bearing > 0 ? 1.0 : -1.0) : 1.0);
    return a;
  }
  const double e_fwd = body.x - fl.fork_offset;
  a.v_cmd = clip(gains.k_v * e_fwd, -0.4, fl.v_max) * std::cos(bearing);
  a.omega_cmd = clip(gains.k_theta * bearing, -fl.omega_max, fl.omega_max);
  return a;
}

Action HeuristicPlace::act(const WorldState& w, const Pose2D& goal, Rng&, bool) {
  Action a;
  const auto& fl = cfg_.env.forklift;
  const ServoGains gains;
  a.h_dot = clip(gains.k_h * (cfg_.env.clamp.h_center - w.forklift.h), -fl.hdot_max, fl.hdot_max);

  const Pose2D rel{fl.fork_offset, 0.0, 0.0};
  const Pose2D cp = sim_.carried_cargo_pose(w.forklift, rel);
  // Stop at the release tolerance boundary, not inside it.
  const double dt_now =
      std::hypot(cp.x - goal.x, cp.y - goal.y) + 0.5 * std::abs(wrap_angle(cp.theta - goal.theta));
  if (w.forklift.carrying && dt_now <= cfg_.env.place_tolerance) {
    a.clamp_trigger = true;
    return a;
  }

  // Cargo position in the slot frame (x along the slot heading).
  const double cs = std::cos(goal.theta), sn = std::sin(goal.theta);
  const double dx = cp.x - goal.x, dy = cp.y - goal.y;
  const double e_long = cs * dx + sn * dy;
  const double e_lat = -sn * dx + cs * dy;
  const double delta = wrap_angle(w.forklift.pose.theta - goal.theta);

  const bool on_line = std::abs(e_lat) <= 0.12 && std::abs(delta) <= 0.35 && e_long <= 0.003;
  if (on_line) {
    a.v_cmd = clip(-gains.k_v * e_long, 0.03, 0.5);
    a.omega_cmd = clip(-2.5 * delta - 3.0 * e_lat, -0.8, 0.8);
    return a;
  }

  // Re-stage behind the slot and line up (go-to-pose; reverse when behind).
  const Vec2 staging{goal.x - (fl.fork_offset + 0.9) * cs, goal.y - (fl.fork_offset + 0.9) * sn};
  const Vec2 d = staging - w.forklift.pose.position();
  const double rho = d.norm();
  if (rho < 0.08) {
    a.omega_cmd = clip(2.0 * wrap_angle(goal.theta - w.forklift.pose.theta), -0.8, 0.8);
    return a;
  }
  const double to_target = std::atan2(d.y, d.x);
  double alpha = wrap_angle(to_target - w.forklift.pose.theta);
  const double beta = wrap_angle(goal.theta - to_target);
  if (std::abs(alpha) <= kPi / 2) {
    a.v_cmd = clip(1.2 * rho, 0.0, 0.7);
    a.omega_cmd = clip(2.5 * alpha - 0.8 * beta, -fl.omega_max, fl.omega_max);
  } else {
    alpha = wrap_angle(alpha - kPi);
    a.v_cmd = -clip(1.2 * rho, 0.0, 0.7);
    a.omega_cmd = clip(2.5 * alpha + 0.8 * beta, -fl.omega_max, fl.omega_max);
  }
  return a;
}

// ---- demonstrations ------------------------------------------------------------

std::vector<Demonstration> generate_demonstrations(const Sim& sim, const Config& cfg, int n,
                                                   uint64_t seed) {
  std::vector<Demonstration> out;
  out.reserve(n);
  long attempts = 0;
  HeuristicExperts experts(sim, cfg);
  while (static_cast<int>(out.size()) < n) {
    const uint64_t ep_seed = mix_seed(seed, 1000 + attempts);
    attempts += 1;
    Demonstration demo;
    demo.seed = ep_seed;
    EpisodeOptions opts;
    opts.step_callback = [&demo](const WorldState& w, PlannerPhase phase, ExpertKind expert,
                                 const Action& a, const StepEvents&) {
      DemoStep s;
      s.phase = phase;
      s.expert = expert;
      s.forklift = w.forklift;
      s.cargo = w.cargo[0].pose;
      s.cargo_carried = w.forklift.carrying.has_value();
      s.dyn = w.dyn_obstacles;
      s.act[0] = a.v_cmd;
      s.act[1] = a.omega_cmd;
      s.act[2] = a.h_dot;
      s.trigger = a.clamp_trigger;
      demo.steps.push_back(std::move(s));
    };
    const EpisodeTrace trace = run_episode(sim, cfg, experts.bundle(), opts, ep_seed);
    if (trace.outcome == Outcome::Success) {
      demo.success = true;
      demo.final_error = trace.placement_error.value_or(0.0);
      const WorldState w0 = sim.reset(ep_seed);
      demo.transfer_zone = w0.transfer_zone.pose;
      demo.goal_slot = w0.goal_slot.pose;
      out.push_back(std::move(demo));
    }
    if (attempts >= 25 && static_cast<double>(out.size()) / attempts < 0.2)
      throw HeuristicError("yield-too-low: demonstration success rate under 20%");
  }
  return out;
}

namespace {

json demo_step_to_json(const DemoStep& s) {
  json j;
  j["type"] = "step";
  j["phase"] = phase_name(s.phase);
  j["expert"] = expert_name(s.expert);
  j["fk"] = {s.forklift.pose.x, s.forklift.pose.y, s.forklift.pose.theta,
             s.forklift.v,      s.forklift.omega,  s.forklift.h};
  j["carried"] = s.cargo_carried;
  j["cargo"] = {s.cargo.x, s.cargo.y, s.cargo.theta};
  json dyn = json::array();
  for (const auto& o : s.dyn) dyn.push_back({o.pos.x, o.pos.y, o.vel.x, o.vel.y});
  j["dyn"] = dyn;
  j["act"] = {s.act[0], s.act[1], s.act[2]};
  j["trigger"] = s.trigger;
  return j;
}

PlannerPhase phase_from_name(const std::string& s) {
  for (const PlannerPhase p : {PlannerPhase::Departure, PlannerPhase::SearchPick,
                               PlannerPhase::Transport, PlannerPhase::Placement,
                               PlannerPhase::Done, PlannerPhase::Abort}) {
    if (s == phase_name(p)) return p;
  }
  throw HeuristicError("unknown phase name: " + s);
}

}  // namespace

void write_demonstrations(const std::vector<Demonstration>& demos, const Config& cfg,
                          uint64_t seed, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw HeuristicError("cannot write dataset: " + path);
  json header;
  header["type"] = "header";
  header["schema_version"] = 1;
  header["config_hash"] = config_hash(cfg);
  header["n_episodes"] = demos.size();
  header["seed"] = seed;
  // The reference corpus in the literature is 10k trajectories; record how far
  // this dataset is scaled down from it.
  header["scale_factor"] = demos.empty() ? 0.0 : 10000.0 / demos.size();
  f << header.dump() << "\n";
  for (const auto& d : demos) {
    json je;
    je["type"] = "episode";
    je["seed"] = d.seed;
    je["success"] = d.success;
    je["final_error"] = d.final_error;
    je["transfer_zone"] = {d.transfer_zone.x, d.transfer_zone.y, d.transfer_zone.theta};
    je["goal_slot"] = {d.goal_slot.x, d.goal_slot.y, d.goal_slot.theta};
    je["n_steps"] = d.steps.size();
    f << je.dump() << "\n";
    for (const auto& s : d.steps) f << demo_step_to_json(s).dump() << "\n";
  }
}

std::vector<Demonstration> read_demonstrations(const std::string& path, const Config& cfg) {
  std::ifstream f(path);
  if (!f) throw HeuristicError("cannot open dataset: " + path);
  std::vector<Demonstration> out;
  std::string line;
  long lineno = 0;
  bool have_header = false;
  Demonstration* cur = nullptr;
  while (std::getline(f, line)) {
    lineno += 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw HeuristicError("corrupt line " + std::to_string(lineno) + " in " + path);
    }
    try {
      const std::string type = j.at("type");
      if (type == "header") {
        if (j.at("schema_version").get<int>() != 1)
          throw HeuristicError("schema-version mismatch in " + path);
        const std::string h = j.at("config_hash");
        if (h != config_hash(cfg))
          throw HeuristicError("dataset config hash mismatch (dataset " + h + ")");
        have_header = true;
      } else if (type == "episode") {
        if (!have_header) throw HeuristicError("dataset missing header line");
        Demonstration d;
        d.seed = j.at("seed").get<uint64_t>();
        d.success = j.at("success");
        d.final_error = j.at("final_error");
        const auto& tz = j.at("transfer_zone");
        d.transfer_zone = {tz.at(0), tz.at(1), tz.at(2)};
        const auto& gs = j.at("goal_slot");
        d.goal_slot = {gs.at(0), gs.at(1), gs.at(2)};
        d.steps.reserve(j.at("n_steps").get<size_t>());
        out.push_back(std::move(d));
        cur = &out.back();
      } else if (type == "step") {
        if (!cur) throw HeuristicError("step record before episode record");
        DemoStep s;
        s.phase = phase_from_name(j.at("phase"));
        s.expert = expert_from_name(j.at("expert"));
        const auto& fk = j.at("fk");
        s.forklift.pose = {fk.at(0), fk.at(1), fk.at(2)};
        s.forklift.v = fk.at(3);
        s.forklift.omega = fk.at(4);
        s.forklift.h = fk.at(5);
        s.cargo_carried = j.at("carried");
        s.forklift.clamped = s.cargo_carried;
        if (s.cargo_carried) s.forklift.carrying = 0;
        const auto& cg = j.at("cargo");
        s.cargo = {cg.at(0), cg.at(1), cg.at(2)};
        for (const auto& od : j.at("dyn")) {
          DynObstacle o;
          o.pos = {od.at(0), od.at(1)};
          o.vel = {od.at(2), od.at(3)};
          s.dyn.push_back(o);
        }
        const auto& act = j.at("act");
        s.act[0] = act.at(0);
        s.act[1] = act.at(1);
        s.act[2] = act.at(2);
        s.trigger = j.at("trigger");
        cur->steps.push_back(std::move(s));
      } else {
        throw HeuristicError("unknown record type at line " + std::to_string(lineno));
      }
    } catch (const json::exception&) {
      throw HeuristicError("corrupt line " + std::to_string(lineno) + " in " + path);
    }
  }
  if (!have_header) throw HeuristicError("dataset missing header line");
  for (const auto& d : out) {
    if (!d.success) throw HeuristicError("dataset contains a non-success episode");
  }
  return out;
}

WorldState demo_world(const Sim& sim, const Demonstration& demo, const DemoStep& step) {
  WorldState w;
  w.forklift = step.forklift;
  Cargo c;
  c.id = 0;
  c.pose = step.cargo;
  w.cargo.push_back(c);
  w.racks = sim.world_racks();
  for (const auto& o : step.dyn) {
    DynObstacle d = o;
    d.radius = sim.config().dyn.radius;
    w.dyn_obstacles.push_back(d);
  }
  w.start_zone = sim.config().start_zone;
  w.transfer_zone = {demo.transfer_zone, sim.config().transfer_zone.tolerance};
  w.goal_slot = {demo.goal_slot, sim.config().goal_slot.tolerance};
  w.carried_rel = {sim.config().forklift.fork_offset, 0.0, 0.0};
  return w;
}

}  // namespace hmer

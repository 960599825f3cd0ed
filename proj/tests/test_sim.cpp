#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hmer/rewards.hpp"
#include "hmer/sim.hpp"

using namespace hmer;

namespace {

Config desk_config() { return default_config(); }

WorldState empty_world(const Sim& sim, uint64_t seed) {
  WorldState w = sim.reset(seed);
  w.racks.clear();
  w.dyn_obstacles.clear();
  w.cargo.clear();
  return w;
}

}  // namespace

TEST_CASE("theta wrapping stays in (-pi, pi]") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(0.1) == doctest::Approx(0.1));
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double a = wrap_angle(rng.uniform(-50, 50));
    CHECK(a > -kPi);
    CHECK(a <= kPi);
  }
}

TEST_CASE("unicycle integration examples") {
  const Pose2D a = integrate_kinematics({0, 0, 0}, 1.0, 0.0, 0.1);
  CHECK(a.x == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(a.y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(a.theta == doctest::Approx(0.0));

  const Pose2D b = integrate_kinematics({0, 0, kPi / 2}, 1.0, 0.0, 0.1);
  CHECK(b.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(b.y == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(b.theta == doctest::Approx(kPi / 2));

  const Pose2D c = integrate_kinematics({0, 0, 0}, 0.0, 1.0, 0.1);
  CHECK(c.x == doctest::Approx(0.0));
  CHECK(c.y == doctest::Approx(0.0));
  CHECK(c.theta == doctest::Approx(0.1));
}

TEST_CASE("reset is bit-identical for identical (config, seed)") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  CHECK(world_to_json(sim.reset(42)) == world_to_json(sim.reset(42)));
}

TEST_CASE("reset with zero-width ranges lands on midpoints") {
  Config cfg = desk_config();
  cfg.env.rand.cargo_mass = {55.0, 55.0};
  cfg.env.rand.friction = {1.0, 1.0};
  cfg.env.rand.layout_jitter = 0.0;
  const Sim sim(cfg.env);
  const WorldState w = sim.reset(9001);
  CHECK(w.params.cargo_mass == doctest::Approx(55.0));
  CHECK(w.params.friction_coeff == doctest::Approx(1.0));
  CHECK(w.transfer_zone.pose.x == doctest::Approx(cfg.env.transfer_zone.pose.x));
}

TEST_CASE("different seeds produce different cargo poses") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  const WorldState a = sim.reset(1);
  const WorldState b = sim.reset(2);
  const double dx = a.cargo[0].pose.x - b.cargo[0].pose.x;
  const double dy = a.cargo[0].pose.y - b.cargo[0].pose.y;
  CHECK(std::hypot(dx, dy) > 1e-6);
}

TEST_CASE("invalid configs are rejected") {
  Config cfg = desk_config();
  cfg.env.rand.friction = {1.2, 0.8};
  CHECK_THROWS_AS(Sim{cfg.env}, ConfigError);

  Config cfg2 = desk_config();
  cfg2.env.racks.push_back({14.0, 15.0, 18.0, 17.0});  // covers the goal slot
  CHECK_THROWS_AS(Sim{cfg2.env}, ConfigError);
}

TEST_CASE("zero action keeps the pose while obstacles advance") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = sim.reset(3);
  REQUIRE(!w.dyn_obstacles.empty());
  const Pose2D before = w.forklift.pose;
  const Vec2 obs_before = w.dyn_obstacles[0].pos;
  const StepEvents ev = sim.step(w, Action{});
  CHECK(!ev.collided);
  CHECK(w.forklift.pose.x == before.x);
  CHECK(w.forklift.pose.y == before.y);
  CHECK(w.forklift.pose.theta == before.theta);
  CHECK(w.t == 1);
  const Vec2 moved = w.dyn_obstacles[0].pos - obs_before;
  CHECK(moved.norm() == doctest::Approx(cfg.env.dyn.speed * cfg.env.control_dt).epsilon(1e-9));
}

TEST_CASE("driving into a rack collides") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = sim.reset(4);
  // Park just short of a rack face, heading straight at it.
  const Aabb rack = cfg.env.racks[0];
  w.forklift.pose = {rack.xmin + 1.0, rack.ymin - 0.5 * cfg.env.forklift.length - 0.05, kPi / 2};
  Action a;
  a.v_cmd = cfg.env.forklift.v_max;
  StepEvents ev;
  for (int i = 0; i < 10 && !ev.collided; ++i) ev = sim.step(w, a);
  CHECK(ev.collided);
  CHECK(w.terminal);
  CHECK(!ev.placed);
}

TEST_CASE("step on a terminal state throws") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = sim.reset(5);
  w.terminal = true;
  CHECK_THROWS_AS(sim.step(w, Action{}), SimError);
}

TEST_CASE("clamp tolerances, inclusive boundaries") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = sim.reset(6);
  w.forklift.h = cfg.env.clamp.h_center;

  SUBCASE("cargo exactly at the fork tip succeeds") {
    const Vec2 tip = sim.fork_tip(w.forklift);
    w.cargo[0].pose = {tip.x, tip.y, 0.3};
    const auto [ok, failed] = sim.try_clamp(w);
    CHECK(ok);
    CHECK(!failed);
    CHECK(w.forklift.carrying.has_value());
    CHECK(w.forklift.clamped);
  }
  SUBCASE("cargo a meter away fails") {
    const Vec2 tip = sim.fork_tip(w.forklift);
    const Vec2 dir = w.forklift.pose.heading();
    w.cargo[0].pose = {tip.x + dir.x, tip.y + dir.y, 0.0};
    const auto [ok, failed] = sim.try_clamp(w);
    CHECK(!ok);
    CHECK(failed);
  }
  SUBCASE("cargo exactly on the distance boundary succeeds") {
    const Vec2 tip = sim.fork_tip(w.forklift);
    const Vec2 dir = w.forklift.pose.heading();
    w.cargo[0].pose = {tip.x + dir.x * cfg.env.clamp.d_clamp,
                       tip.y + dir.y * cfg.env.clamp.d_clamp, 0.0};
    const auto [ok, failed] = sim.try_clamp(w);
    CHECK(ok);
    CHECK(!failed);
  }
  SUBCASE("fork height outside the band fails") {
    const Vec2 tip = sim.fork_tip(w.forklift);
    w.cargo[0].pose = {tip.x, tip.y, 0.0};
    w.forklift.h = cfg.env.clamp.h_center + cfg.env.clamp.h_band + 0.01;
    const auto [ok, failed] = sim.try_clamp(w);
    CHECK(!ok);
    CHECK(failed);
  }
}

TEST_CASE("release at the goal slot emits placed") {
  const Config cfg = desk_config();
  Config pc = cfg;
  pc.env.subtask = SubTask::Place;
  const Sim sim(pc.env);
  WorldState w = sim.reset(7);
  REQUIRE(w.forklift.carrying.has_value());
  // Teleport so that the carried cargo is exactly on the slot.
  const Pose2D slot = w.goal_slot.pose;
  w.forklift.pose = {slot.x - cfg.env.forklift.fork_offset * std::cos(slot.theta),
                     slot.y - cfg.env.forklift.fork_offset * std::sin(slot.theta), slot.theta};
  w.cargo[0].pose = sim.carried_cargo_pose(w.forklift, w.carried_rel);
  Action rel;
  rel.clamp_trigger = true;
  const StepEvents ev = sim.step(w, rel);
  CHECK(ev.placed);
  CHECK(!w.forklift.carrying.has_value());
  CHECK(!w.forklift.clamped);
}

TEST_CASE("carried cargo is rigidly attached") {
  Config cfg = desk_config();
  cfg.env.subtask = SubTask::Place;
  const Sim sim(cfg.env);
  WorldState w = sim.reset(8);
  REQUIRE(w.forklift.carrying.has_value());
  Rng rng(11);
  for (int i = 0; i < 40; ++i) {
    Action a;
    a.v_cmd = rng.uniform(-0.5, 0.5);
    a.omega_cmd = rng.uniform(-1.0, 1.0);
    a.h_dot = rng.uniform(-0.1, 0.1);
    const StepEvents ev = sim.step(w, a);
    if (ev.terminal()) break;
    const Pose2D expect = sim.carried_cargo_pose(w.forklift, w.carried_rel);
    CHECK(w.cargo[0].pose.x == expect.x);
    CHECK(w.cargo[0].pose.y == expect.y);
    CHECK(w.cargo[0].pose.theta == expect.theta);
  }
}

TEST_CASE("lidar: empty world returns r_max everywhere") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = empty_world(sim, 12);
  const LidarScan scan = sim.raycast_lidar(w);
  CHECK(scan.ranges.size() == static_cast<size_t>(cfg.env.lidar.n_scan));
  for (const double r : scan.ranges) CHECK(r == doctest::Approx(cfg.env.lidar.r_max));
}

TEST_CASE("lidar: perpendicular wall at 2 m returns 2.0 at bearing 0") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = empty_world(sim, 13);
  w.forklift.pose = {5.0, 5.0, 0.0};
  w.racks.push_back({7.0, 3.0, 7.4, 7.0});
  const LidarScan scan = sim.raycast_lidar(w);
  CHECK(scan.ranges[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("lidar matches a bisected ray-marching oracle") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  Rng rng(99);
  int beams_checked = 0;
  for (int scene = 0; scene < 100; ++scene) {
    WorldState w = sim.reset(2000 + scene);
    w.forklift.pose = {rng.uniform(2.0, 18.0), rng.uniform(2.0, 18.0),
                       rng.uniform(-kPi, kPi)};
    const LidarScan scan = sim.raycast_lidar(w);
    // Spot-check a handful of beams per scene against occupancy marching.
    auto occupied = [&](const Vec2& p) {
      for (const auto& r : w.racks) {
        if (r.contains(p)) return true;
      }
      for (const auto& o : w.dyn_obstacles) {
        if ((p - o.pos).norm() <= o.radius) return true;
      }
      for (const auto& c : w.cargo) {
        if (Obb{c.pose, cfg.env.cargo_half_len, cfg.env.cargo_half_wid}.contains(p)) return true;
      }
      return false;
    };
    for (int k = 0; k < 8; ++k) {
      const int i = static_cast<int>(rng.uniform_int(cfg.env.lidar.n_scan));
      const double b = w.forklift.pose.theta + 2.0 * kPi * i / cfg.env.lidar.n_scan;
      const Vec2 origin = w.forklift.pose.position();
      const Vec2 dir{std::cos(b), std::sin(b)};
      // Coarse march then bisect the crossing.
      double t = 0.0;
      const double step = 0.004;
      double hit = cfg.env.lidar.r_max;
      while (t < cfg.env.lidar.r_max) {
        const double tn = std::min(t + step, cfg.env.lidar.r_max);
        if (occupied({origin.x + dir.x * tn, origin.y + dir.y * tn})) {
          double lo = t, hi = tn;
          for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (occupied({origin.x + dir.x * mid, origin.y + dir.y * mid}))
              hi = mid;
            else
              lo = mid;
          }
          hit = hi;
          break;
        }
        t = tn;
      }
      CHECK(std::abs(scan.ranges[i] - hit) <= 1e-3);
      beams_checked += 1;
    }
  }
  CHECK(beams_checked == 800);
}

TEST_CASE("semantic image: empty scene is all zero") {
  Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = empty_world(sim, 14);
  w.goal_slot.pose = {100.0, 100.0, 0.0};  // marker outside the window
  const SemanticImage img = sim.render_semantic_image(w);
  double total = 0.0;
  for (const double v : img.data) total += v;
  CHECK(total == 0.0);
}

TEST_CASE("semantic image: cargo ahead lands centered in upper rows") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = empty_world(sim, 15);
  w.forklift.pose = {10.0, 10.0, kPi / 3};
  const double ahead = cfg.env.image.window / 4.0;
  const Vec2 pos = w.forklift.pose.to_world({ahead, 0.0});
  w.cargo.push_back({0, {pos.x, pos.y, kPi / 3}, 50.0});
  w.goal_slot.pose = {100.0, 100.0, 0.0};
  const SemanticImage img = sim.render_semantic_image(w);

  double mass = 0.0, row_acc = 0.0, col_acc = 0.0;
  for (int r = 0; r < img.size; ++r) {
    for (int c = 0; c < img.size; ++c) {
      const double v = img.at(1, r, c);
      mass += v;
      row_acc += v * r;
      col_acc += v * c;
    }
  }
  REQUIRE(mass > 0.0);
  const double anchor_row = cfg.env.image.anchor_row_frac * img.size - 0.5;
  const double cell = cfg.env.image.window / img.size;
  const double expect_row = anchor_row - ahead / cell;
  CHECK(row_acc / mass == doctest::Approx(expect_row).epsilon(0.08));
  CHECK(col_acc / mass == doctest::Approx(0.5 * img.size - 0.5).epsilon(0.08));
  // Binary values only.
  for (const double v : img.data) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("semantic image: rendering is deterministic") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  const WorldState w = sim.reset(16);
  const SemanticImage a = sim.render_semantic_image(w);
  const SemanticImage b = sim.render_semantic_image(w);
  CHECK(a.data == b.data);
}

TEST_CASE("ego state frame conventions") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  WorldState w = empty_world(sim, 17);
  w.forklift.pose = {5.0, 5.0, 0.0};

  SUBCASE("at the goal, distance is zero") {
    const EgoState e = sim.ego_state(w, {5.0, 5.0, 0.0});
    CHECK(e.goal_dist == doctest::Approx(0.0));
  }
  SUBCASE("goal a meter to the left gives +pi/2") {
    const EgoState e = sim.ego_state(w, {5.0, 6.0, 0.0});
    CHECK(e.goal_bearing == doctest::Approx(kPi / 2));
  }
  SUBCASE("goal behind gives |bearing| = pi") {
    const EgoState e = sim.ego_state(w, {4.0, 5.0, 0.0});
    CHECK(std::abs(e.goal_bearing) == doctest::Approx(kPi));
  }
}

TEST_CASE("trajectories are bit-identical across replays") {
  const Config cfg = desk_config();
  const Sim sim(cfg.env);
  auto roll = [&](uint64_t seed) {
    WorldState w = sim.reset(seed);
    Rng rng(123);
    std::string out;
    for (int i = 0; i < 50; ++i) {
      Action a;
      a.v_cmd = rng.uniform(-1.0, 1.0);
      a.omega_cmd = rng.uniform(-1.0, 1.0);
      const StepEvents ev = sim.step(w, a);
      if (ev.terminal()) break;
    }
    return world_to_json(w);
  };
  CHECK(roll(77) == roll(77));
}

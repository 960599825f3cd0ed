#include "hmer/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "hmer/eval.hpp"
#include "hmer/heuristics.hpp"
#include "hmer/nn.hpp"
#include "hmer/planner.hpp"
#include "hmer/policy.hpp"
#include "hmer/rewards.hpp"
#include "hmer/sim.hpp"
#include "hmer/training.hpp"

namespace hmer {

namespace {

struct Harness {
  bool all_ok = true;
  void check(const std::string& name, const std::function<bool()>& fn) {
    bool ok = false;
    std::string err;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      err = e.what();
    }
    std::printf("selftest: %-34s %s%s%s\n", name.c_str(), ok ? "ok" : "FAIL",
                err.empty() ? "" : " — ", err.c_str());
    all_ok = all_ok && ok;
  }
};

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// Brute-force double-sum GAE reference.
void gae_reference(const std::vector<double>& r, const std::vector<double>& v,
                   const std::vector<uint8_t>& d, double bootstrap, double gamma, double lambda,
                   std::vector<double>* adv) {
  const std::size_t n = r.size();
  adv->assign(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    double w = 1.0;
    for (std::size_t l = t; l < n; ++l) {
      const double next_v = (l + 1 < n) ? v[l + 1] : bootstrap;
      const double nonterm = d[l] ? 0.0 : 1.0;
      acc += w * (r[l] + gamma * next_v * nonterm - v[l]);
      if (d[l]) break;
      w *= gamma * lambda;
    }
    (*adv)[t] = acc;
  }
}

}  // namespace

bool run_selftest(const Config& cfg, uint64_t seed) {
  Harness h;

  h.check("sim reset determinism", [&] {
    const Sim sim(cfg.env);
    return world_to_json(sim.reset(seed)) == world_to_json(sim.reset(seed));
  });

  h.check("unicycle integration", [&] {
    const Pose2D a = integrate_kinematics({0, 0, 0}, 1.0, 0.0, 0.1);
    const Pose2D b = integrate_kinematics({0, 0, kPi / 2}, 1.0, 0.0, 0.1);
    const Pose2D c = integrate_kinematics({0, 0, 0}, 0.0, 1.0, 0.1);
    return near(a.x, 0.1, 1e-12) && near(a.y, 0.0, 1e-12) && near(b.x, 0.0, 1e-12) &&
           near(b.y, 0.1, 1e-12) && near(c.theta, 0.1, 1e-12);
  });

  h.check("lidar within bounds", [&] {
    const Sim sim(cfg.env);
    const WorldState w = sim.reset(seed);
    const LidarScan scan = sim.raycast_lidar(w);
    for (const double r : scan.ranges) {
      if (r < 0.0 || r > cfg.env.lidar.r_max) return false;
    }
    return true;
  });

  h.check("dense grad check", [&] {
    ParamStore ps;
    Dense d;
    d.init(ps, "d", 5, 3);
    Rng rng(seed);
    d.init_params(ps, rng);
    std::vector<double> x(5), wvec(3);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : wvec) v = rng.uniform(-1, 1);
    GradBuffer g(ps.size(), 0.0);
    const auto loss = [&] {
      std::vector<double> y(3);
      d.forward(ps, x.data(), y.data());
      double s = 0.0;
      for (int i = 0; i < 3; ++i) s += wvec[i] * std::tanh(y[i]);
      return s;
    };
    std::vector<double> y(3), gy(3), gx(5);
    d.forward(ps, x.data(), y.data());
    for (int i = 0; i < 3; ++i) gy[i] = wvec[i] * (1.0 - std::tanh(y[i]) * std::tanh(y[i]));
    d.backward(ps, x.data(), gy.data(), gx.data(), g);
    return grad_check(ps, g, loss) <= 1e-6;
  });

  h.check("gaussian closed forms", [&] {
    const double mu = 0.0, ls = 0.0, a0 = 0.0, a1 = 1.0;
    return near(gaussian_logprob(&mu, &ls, &a0, 1), -0.9189385332046727, 1e-9) &&
           near(gaussian_logprob(&mu, &ls, &a1, 1), -1.4189385332046727, 1e-9) &&
           near(gaussian_entropy(&ls, 1), 1.4189385332046727, 1e-9);
  });

  h.check("bernoulli closed forms", [&] {
    return near(bernoulli_logprob(0.0, true), std::log(0.5), 1e-12) &&
           near(bernoulli_logprob(0.0, false), std::log(0.5), 1e-12) &&
           near(bernoulli_logprob(50.0, true), 0.0, 1e-12);
  });

  h.check("adam first step", [&] {
    ParamStore ps;
    const auto s = ps.add("w", {2});
    ps.ptr(s)[0] = 1.0;
    ps.ptr(s)[1] = 1.0;
    AdamState st;
    st.init(2);
    GradBuffer g{1.0, 1.0};
    adam_step(ps, g, st, 1e-3);
    return near(ps.ptr(s)[0], 1.0 - 1e-3, 1e-8);
  });

  h.check("gae matches double-sum oracle", [&] {
    Rng rng(mix_seed(seed, 3));
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t n = 1 + rng.uniform_int(32);
      std::vector<double> r(n), v(n), adv, ret, ref;
      std::vector<uint8_t> d(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        r[i] = rng.uniform(-2, 2);
        v[i] = rng.uniform(-2, 2);
        d[i] = rng.bernoulli(0.15) ? 1 : 0;
      }
      const double bootstrap = rng.uniform(-2, 2);
      compute_gae(r, v, d, bootstrap, 0.99, 0.95, &adv, &ret);
      gae_reference(r, v, d, bootstrap, 0.99, 0.95, &ref);
      for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(adv[i] - ref[i]) > 1e-10) return false;
      }
    }
    return true;
  });

  h.check("ppo surrogate cases", [&] {
    const auto a = ppo_surrogate(std::log(1.5), 0.0, 1.0, 0.2);
    const auto b = ppo_surrogate(std::log(0.5), 0.0, -1.0, 0.2);
    return near(a.surrogate, 1.2, 1e-12) && near(b.surrogate, -0.8, 1e-12);
  });

  h.check("fsm exhaustive safety", [&] {
    for (const PlannerPhase phase :
         {PlannerPhase::Departure, PlannerPhase::SearchPick, PlannerPhase::Transport,
          PlannerPhase::Placement}) {
      for (unsigned bits = 0; bits < 128; ++bits) {
        for (int retry = 0; retry <= cfg.planner.max_retries; ++retry) {
          const SemanticState s = SemanticState::from_bits(bits);
          const auto [next, expert] = transition({phase, retry}, s, cfg.planner.max_retries);
          (void)expert;
          if (next.phase == PlannerPhase::Transport && phase != PlannerPhase::Transport &&
              !s.cargo_clamped)
            return false;
          if (next.phase == PlannerPhase::Placement && phase != PlannerPhase::Placement &&
              phase != PlannerPhase::Transport)
            return false;
          if (next.phase == PlannerPhase::Done && !s.placed_ok) return false;
          if (next.retry_count > cfg.planner.max_retries && next.phase != PlannerPhase::Abort)
            return false;
        }
      }
    }
    return true;
  });

  h.check("astar equals dijkstra", [&] {
    Rng rng(mix_seed(seed, 9));
    for (int rep = 0; rep < 20; ++rep) {
      OccupancyGrid g;
      g.resolution = 1.0;
      g.width = 16;
      g.height = 16;
      g.occupied.assign(256, 0);
      for (auto& c : g.occupied) c = rng.bernoulli(0.25) ? 1 : 0;
      g.occupied[0] = 0;
      g.occupied[255] = 0;
      double astar_cost = -1.0;
      try {
        astar_cost = path_cost(astar_plan(g, {0, 0}, {15, 15}));
      } catch (const HeuristicError&) {
      }
      const double dcost = dijkstra_cost(g, {0, 0}, {15, 15});
      if (astar_cost < 0.0) {
        if (std::isfinite(dcost)) return false;
      } else if (!near(astar_cost, dcost, 1e-9)) {
        return false;
      }
    }
    return true;
  });

  h.check("reciprocal reward examples", [&] {
    RewardConfig rw;
    return near(reward_place(0.95, false, false, rw), 1.0, 1e-12) &&
           near(reward_place(0.05, false, false, rw), 10.0, 1e-12) &&
           near(reward_place(0.0, true, false, rw), 70.0, 1e-12);
  });

  h.check("d_target examples", [&] {
    RewardConfig rw;
    return near(d_target({0, 0, 0}, {3, 4, 0}, rw), 5.0, 1e-12) &&
           near(d_target({0, 0, kPi}, {0, 0, 0}, rw), 0.5 * kPi, 1e-12) &&
           near(d_target({1, 2, 0.3}, {1, 2, 0.3}, rw), 0.0, 1e-12);
  });

  h.check("running normalization", [&] {
    RunningStats st;
    for (const double x : {1.0, 2.0, 3.0}) st.update(x);
    return near(st.mean, 2.0, 1e-12) && near(st.variance(), 1.0, 1e-12);
  });

  h.check("lr schedule", [&] {
    return near(lr_schedule(0, 100, 1e-4), 1e-4, 1e-18) &&
           near(lr_schedule(100, 100, 1e-4), 0.0, 1e-18) &&
           near(lr_schedule(50, 100, 1e-4), 5e-5, 1e-18);
  });

  h.check("heuristic episode completes", [&] {
    Config c = cfg;
    c.env.subtask = SubTask::Full;
    const Sim sim(c.env);
    HeuristicExperts experts(sim, c);
    EpisodeOptions opts;
    const EpisodeTrace tr = run_episode(sim, c, experts.bundle(), opts, mix_seed(seed, 21));
    return tr.outcome == Outcome::Success;
  });

  return h.all_ok;
}

}  // namespace hmer

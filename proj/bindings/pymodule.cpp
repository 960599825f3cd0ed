#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hmer/eval.hpp"
#include "hmer/heuristics.hpp"
#include "hmer/selftest.hpp"
#include "hmer/training.hpp"

namespace py = pybind11;
using namespace hmer;

namespace {

Config config_from_arg(const std::string& json_text) {
  return json_text.empty() ? default_config() : config_from_json(json_text);
}

// Python-facing environment handle: one Sim plus one episode state.
class PyEnv {
 public:
  PyEnv(const std::string& config_json, const std::string& subtask)
      : cfg_(config_from_arg(config_json)) {
    if (subtask == "pick")
      cfg_.env.subtask = SubTask::Pick;
    else if (subtask == "place")
      cfg_.env.subtask = SubTask::Place;
    else if (subtask == "full")
      cfg_.env.subtask = SubTask::Full;
    else
      throw std::invalid_argument("subtask must be full|pick|place");
    sim_ = std::make_unique<Sim>(cfg_.env);
  }

  void reset(uint64_t seed) { w_ = sim_->reset(seed); }

  py::dict step(double v, double omega, double h_dot, bool clamp_trigger) {
    Action a{v, omega, h_dot, clamp_trigger};
    const StepEvents ev = sim_->step(w_, a);
    py::dict out;
    out["collided"] = ev.collided;
    out["clamp_succeeded"] = ev.clamp_succeeded;
    out["clamp_failed"] = ev.clamp_failed;
    out["placed"] = ev.placed;
    out["timed_out"] = ev.timed_out;
    out["terminal"] = ev.terminal();
    return out;
  }

  py::tuple pose() const {
    return py::make_tuple(w_.forklift.pose.x, w_.forklift.pose.y, w_.forklift.pose.theta);
  }
  double fork_height() const { return w_.forklift.h; }
  bool carrying() const { return w_.forklift.carrying.has_value(); }
  long t() const { return w_.t; }
  std::string state_json() const { return world_to_json(w_); }

  py::array_t<double> lidar() const {
    const LidarScan scan = sim_->raycast_lidar(w_);
    py::array_t<double> arr(scan.ranges.size());
    std::copy(scan.ranges.begin(), scan.ranges.end(), arr.mutable_data());
    return arr;
  }

  py::array_t<double> semantic_image() const {
    const SemanticImage img = sim_->render_semantic_image(w_);
    py::array_t<double> arr({3, img.size, img.size});
    std::copy(img.data.begin(), img.data.end(), arr.mutable_data());
    return arr;
  }

  py::dict ego(double gx, double gy, double gtheta) const {
    const EgoState e = sim_->ego_state(w_, {gx, gy, gtheta});
    py::dict out;
    out["v"] = e.v;
    out["omega"] = e.omega;
    out["h"] = e.h;
    out["goal_dist"] = e.goal_dist;
    out["goal_bearing"] = e.goal_bearing;
    return out;
  }

  py::dict run_heuristic_episode(uint64_t seed, const std::string& mode,
                                 double first_clamp_success_prob) {
    HeuristicExperts experts(*sim_, cfg_);
    EpisodeOptions opts;
    opts.mode = mode == "fixed-sequence" ? ExecMode::FixedSequence : ExecMode::Planner;
    opts.first_clamp_success_prob = first_clamp_success_prob;
    const EpisodeTrace tr = run_episode(*sim_, cfg_, experts.bundle(), opts, seed);
    py::dict out;
    out["outcome"] = std::string(outcome_name(tr.outcome));
    out["steps"] = tr.total_steps;
    out["cycle_time"] = tr.cycle_time;
    out["retries"] = tr.retries;
    if (tr.placement_error) out["placement_error"] = *tr.placement_error;
    return out;
  }

 private:
  Config cfg_;
  std::unique_ptr<Sim> sim_;
  WorldState w_;
};

py::tuple py_gae(py::array_t<double> rewards, py::array_t<double> values,
                 py::array_t<uint8_t> dones, double bootstrap, double gamma, double lambda) {
  std::vector<double> r(rewards.data(), rewards.data() + rewards.size());
  std::vector<double> v(values.data(), values.data() + values.size());
  std::vector<uint8_t> d(dones.data(), dones.data() + dones.size());
  std::vector<double> adv, ret;
  compute_gae(r, v, d, bootstrap, gamma, lambda, &adv, &ret);
  py::array_t<double> a(adv.size()), rt(ret.size());
  std::copy(adv.begin(), adv.end(), a.mutable_data());
  std::copy(ret.begin(), ret.end(), rt.mutable_data());
  return py::make_tuple(a, rt);
}

}  // namespace

PYBIND11_MODULE(_hmer_core, m) {
  m.doc() = "HMER core bindings: simulator, planner FSM, rewards, training ops";

  m.def("default_config_json", [] { return config_to_json(default_config()); });
  m.def("config_hash", [](const std::string& j) { return config_hash(config_from_arg(j)); });

  m.def("wrap_angle", &wrap_angle);
  m.def("integrate_kinematics", [](double x, double y, double theta, double v, double omega,
                                   double dt) {
    const Pose2D p = integrate_kinematics({x, y, theta}, v, omega, dt);
    return py::make_tuple(p.x, p.y, p.theta);
  });
  m.def("d_target", [](py::tuple a, py::tuple b, double w_ang) {
    RewardConfig rw;
    rw.w_ang = w_ang;
    return d_target({a[0].cast<double>(), a[1].cast<double>(), a[2].cast<double>()},
                    {b[0].cast<double>(), b[1].cast<double>(), b[2].cast<double>()}, rw);
  });
  m.def("reward_place", [](double dist, bool placed, bool collided) {
    return reward_place(dist, placed, collided, RewardConfig{});
  });
  m.def("compute_gae", &py_gae, py::arg("rewards"), py::arg("values"), py::arg("dones"),
        py::arg("bootstrap"), py::arg("gamma") = 0.99, py::arg("lambda_") = 0.95);
  m.def("lr_schedule", &lr_schedule);

  m.def("fsm_transition",
        [](const std::string& phase, unsigned predicate_bits, int retry, int max_retries) {
          PlannerPhase p = PlannerPhase::Departure;
          for (const PlannerPhase c :
               {PlannerPhase::Departure, PlannerPhase::SearchPick, PlannerPhase::Transport,
                PlannerPhase::Placement, PlannerPhase::Done, PlannerPhase::Abort}) {
            if (phase == phase_name(c)) p = c;
          }
          const auto [next, expert] =
              transition({p, retry}, SemanticState::from_bits(predicate_bits), max_retries);
          return py::make_tuple(std::string(phase_name(next.phase)), next.retry_count,
                                std::string(expert_name(expert)));
        });

  m.def("selftest", [](uint64_t seed) { return run_selftest(default_config(), seed); });

  py::class_<PyEnv>(m, "Env")
      .def(py::init<const std::string&, const std::string&>(), py::arg("config_json") = "",
           py::arg("subtask") = "full")
      .def("reset", &PyEnv::reset)
      .def("step", &PyEnv::step, py::arg("v"), py::arg("omega"), py::arg("h_dot") = 0.0,
           py::arg("clamp_trigger") = false)
      .def("pose", &PyEnv::pose)
      .def("fork_height", &PyEnv::fork_height)
      .def("carrying", &PyEnv::carrying)
      .def("t", &PyEnv::t)
      .def("state_json", &PyEnv::state_json)
      .def("lidar", &PyEnv::lidar)
      .def("semantic_image", &PyEnv::semantic_image)
      .def("ego", &PyEnv::ego)
      .def("run_heuristic_episode", &PyEnv::run_heuristic_episode, py::arg("seed"),
           py::arg("mode") = "planner", py::arg("first_clamp_success_prob") = 1.0);
}

#include "hmer/planner.hpp"

#include <fstream>

#include "json.hpp"

namespace hmer {

using nlohmann::json;

SemanticState SemanticState::from_bits(unsigned bits) {
  SemanticState s;
  s.at_transfer_zone = bits & 1u;
  s.cargo_clamped = bits & 2u;
  s.at_goal_zone = bits & 4u;
  s.placed_ok = bits & 8u;
  s.collided = bits & 16u;
  s.timed_out = bits & 32u;
  s.clamp_failed = bits & 64u;
  return s;
}

const char* phase_name(PlannerPhase p) {
  switch (p) {
    case PlannerPhase::Departure: return "departure";
    case PlannerPhase::SearchPick: return "search_pick";
    case PlannerPhase::Transport: return "transport";
    case PlannerPhase::Placement: return "placement";
    case PlannerPhase::Done: return "done";
    case PlannerPhase::Abort: return "abort";
  }
  return "?";
}

bool phase_absorbing(PlannerPhase p) {
  return p == PlannerPhase::Done || p == PlannerPhase::Abort;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::Collision: return "collision";
    case Outcome::Timeout: return "timeout";
  }
  return "?";
}

ExpertKind active_expert(PlannerPhase phase) {
  switch (phase) {
    case PlannerPhase::Departure:
    case PlannerPhase::Transport: return ExpertKind::Navigation;
    case PlannerPhase::SearchPick: return ExpertKind::Picking;
    case PlannerPhase::Placement: return ExpertKind::Placing;
    case PlannerPhase::Done:
    case PlannerPhase::Abort: break;
  }
  throw PlannerError("no active expert in an absorbing phase");
}

SemanticState evaluate_predicates(const WorldState& w, const StepEvents& ev) {
  SemanticState s;
  const Vec2 pos = w.forklift.pose.position();
  s.at_transfer_zone = (pos - w.transfer_zone.pose.position()).norm() <= w.transfer_zone.tolerance;
  s.at_goal_zone = (pos - w.goal_slot.pose.position()).norm() <= w.goal_slot.tolerance;
  s.cargo_clamped = w.forklift.clamped;
  s.placed_ok = ev.placed;
  s.collided = ev.collided;
  s.timed_out = ev.timed_out;
  s.clamp_failed = ev.clamp_failed;
  return s;
}

std::pair<PlannerStatus, ExpertKind> transition(const PlannerStatus& status,
                                                const SemanticState& s, int max_retries) {
  if (phase_absorbing(status.phase)) throw PlannerError("transition called on an absorbing phase");
  PlannerStatus next = status;

  if (s.collided || s.timed_out) {
    next.phase = PlannerPhase::Abort;
    return {next, ExpertKind::Navigation};
  }

  switch (status.phase) {
    case PlannerPhase::Departure:
      if (s.at_transfer_zone) next.phase = PlannerPhase::SearchPick;
      break;
    case PlannerPhase::SearchPick:
      if (s.cargo_clamped) {
        next.phase = PlannerPhase::Transport;
      } else if (s.clamp_failed) {
        next.retry_count += 1;
        if (next.retry_count > max_retries) next.phase = PlannerPhase::Abort;
      }
      break;
    case PlannerPhase::Transport:
      if (s.at_goal_zone) next.phase = PlannerPhase::Placement;
      break;
    case PlannerPhase::Placement:
      if (s.placed_ok) next.phase = PlannerPhase::Done;
      break;
    default:
      break;
  }

  const ExpertKind expert =
      phase_absorbing(next.phase) ? active_expert(status.phase) : active_expert(next.phase);
  return {next, expert};
}

bool termination_check(const PlannerStatus& status, const SemanticState& s, int max_retries) {
  const auto [next, expert] = transition(status, s, max_retries);
  (void)expert;
  if (next.phase != status.phase) return true;
  // A failed clamp restarts the picking skill even though the phase persists.
  return status.phase == PlannerPhase::SearchPick && s.clamp_failed;
}

Pose2D active_goal(PlannerPhase phase, const WorldState& w) {
  switch (phase) {
    case PlannerPhase::Departure: return w.transfer_zone.pose;
    case PlannerPhase::SearchPick: return w.cargo.empty() ? w.transfer_zone.pose : w.cargo[0].pose;
    case PlannerPhase::Transport:
    case PlannerPhase::Placement: return w.goal_slot.pose;
    default: break;
  }
  throw PlannerError("no goal in an absorbing phase");
}

double phase_reward(const Sim& sim, const Config& cfg, const RewardConfig& rw, PlannerPhase phase,
                    const EgoState& prev_ego, const WorldState& w, const StepEvents& ev,
                    const Pose2D& goal) {
  switch (phase) {
    case PlannerPhase::Departure:
    case PlannerPhase::Transport:
      return reward_nav(prev_ego, sim.ego_state(w, goal), ev.collided, rw);
    case PlannerPhase::SearchPick: {
      const Vec2 tip = sim.fork_tip(w.forklift);
      const Vec2 tgt = w.cargo.empty() ? tip : w.cargo[0].pose.position();
      const double dist = (tgt - tip).norm();
      const double herr = w.cargo.empty() ? 0.0 : bearing_to(w.forklift.pose, tgt);
      return reward_pick(dist, herr, ev, rw);
    }
    case PlannerPhase::Placement: {
      const Pose2D rel{cfg.env.forklift.fork_offset, 0.0, 0.0};
      const Pose2D cargo_pose = sim.carried_cargo_pose(w.forklift, rel);
      return reward_place(d_target(cargo_pose, w.goal_slot.pose, rw), ev.placed, ev.collided, rw);
    }
    default:
      return 0.0;
  }
}

namespace {

void finalize_trace(const Sim& sim, const Config& cfg, const WorldState& w, EpisodeTrace& trace,
                    bool placed, const std::string& abort_reason) {
  trace.total_steps = w.t;
  trace.cycle_time = w.t * cfg.env.control_dt;
  trace.abort_reason = abort_reason;
  if (placed) {
    trace.outcome = Outcome::Success;
    const Pose2D cp = w.cargo[0].pose;
    trace.placement_error = (cp.position() - w.goal_slot.pose.position()).norm();
    trace.placement_d_target = d_target(cp, w.goal_slot.pose, cfg.rewards);
  } else if (abort_reason == "collision") {
    trace.outcome = Outcome::Collision;
  } else {
    trace.outcome = Outcome::Timeout;
  }
}

}  // namespace

EpisodeTrace run_episode(const Sim& sim, const Config& cfg, const PolicyBundle& experts,
                         const EpisodeOptions& opts, uint64_t seed) {
  for (ExpertKind k : {ExpertKind::Navigation, ExpertKind::Picking, ExpertKind::Placing}) {
    if (!experts.count(k) && !experts.count(ExpertKind::Flat))
      throw PlannerError(std::string("missing expert: ") + expert_name(k));
  }
  auto pick_policy = [&](ExpertKind k) -> ExpertPolicy* {
    const auto it = experts.find(k);
    return it != experts.end() ? it->second : experts.at(ExpertKind::Flat);
  };

  WorldState w = sim.reset(seed);
  w.first_clamp_success_prob = opts.first_clamp_success_prob;
  Rng rng(mix_seed(seed, 77));
  EpisodeTrace trace;
  trace.seed = seed;

  StepEvents ev;
  bool placed = false;
  std::string abort_reason;

  if (opts.mode == ExecMode::Planner) {
    PlannerStatus status;
    ExpertKind expert = active_expert(status.phase);
    pick_policy(expert)->on_phase_start(w, active_goal(status.phase, w));
    while (true) {
      const SemanticState s = evaluate_predicates(w, ev);
      const PlannerStatus before = status;
      const auto [next, kind] = transition(status, s, cfg.planner.max_retries);
      status = next;
      if (status.phase == PlannerPhase::Done) break;
      if (status.phase == PlannerPhase::Abort) {
        abort_reason = s.collided ? "collision" : (s.timed_out ? "timeout" : "retries");
        break;
      }
      const Pose2D goal = active_goal(status.phase, w);
      if (status.phase != before.phase || status.retry_count != before.retry_count) {
        expert = kind;
        pick_policy(expert)->on_phase_start(w, goal);
        trace.retries = status.retry_count;
      }
      const EgoState prev_ego = sim.ego_state(w, goal);
      const Action a = pick_policy(expert)->act(w, goal, rng, opts.deterministic);
      const WorldState pre = opts.step_callback ? w : WorldState{};
      ev = sim.step(w, a);
      placed = placed || ev.placed;
      if (opts.step_callback) opts.step_callback(pre, status.phase, expert, a, ev);
      if (opts.keep_steps || !opts.trace_path.empty()) {
        TraceStep ts;
        ts.step = w.t;
        ts.phase = status.phase;
        ts.expert = expert;
        ts.action = a;
        ts.reward = phase_reward(sim, cfg, cfg.rewards, status.phase, prev_ego, w, ev, goal);
        ts.events = ev;
        trace.steps.push_back(ts);
      }
      if (ev.terminal()) {
        // Feed the terminal predicates through the FSM once more for bookkeeping.
        const SemanticState st = evaluate_predicates(w, ev);
        if (!phase_absorbing(status.phase)) status = transition(status, st, cfg.planner.max_retries).first;
        if (!placed) abort_reason = ev.collided ? "collision" : "timeout";
        break;
      }
    }
  } else {
    // Open-loop schedule: each phase advances on its nominal completion event
    // (arrival / trigger raised), unverified, or when its step budget runs out.
    const PlannerPhase schedule[4] = {PlannerPhase::Departure, PlannerPhase::SearchPick,
                                      PlannerPhase::Transport, PlannerPhase::Placement};
    const long budget = cfg.env.t_max / 4;
    int idx = 0;
    long phase_steps = 0;
    ExpertKind expert = active_expert(schedule[0]);
    pick_policy(expert)->on_phase_start(w, active_goal(schedule[0], w));
    while (idx < 4) {
      const PlannerPhase phase = schedule[idx];
      const Pose2D goal = active_goal(phase, w);
      const EgoState prev_ego = sim.ego_state(w, goal);
      const Action a = pick_policy(expert)->act(w, goal, rng, opts.deterministic);
      ev = sim.step(w, a);
      placed = placed || ev.placed;
      phase_steps += 1;
      if (opts.keep_steps || !opts.trace_path.empty()) {
        TraceStep ts;
        ts.step = w.t;
        ts.phase = phase;
        ts.expert = expert;
        ts.action = a;
        ts.reward = phase_reward(sim, cfg, cfg.rewards, phase, prev_ego, w, ev, goal);
        ts.events = ev;
        trace.steps.push_back(ts);
      }
      if (ev.terminal()) {
        if (!placed) abort_reason = ev.collided ? "collision" : "timeout";
        break;
      }
      bool advance = phase_steps >= budget;
      const Vec2 pos = w.forklift.pose.position();
      switch (phase) {
        case PlannerPhase::Departure:
          advance = advance ||
                    (pos - w.transfer_zone.pose.position()).norm() <= w.transfer_zone.tolerance;
          break;
        case PlannerPhase::SearchPick:
          advance = advance || a.clamp_trigger;
          break;
        case PlannerPhase::Transport:
          advance = advance || (pos - w.goal_slot.pose.position()).norm() <= w.goal_slot.tolerance;
          break;
        case PlannerPhase::Placement:
          advance = advance || a.clamp_trigger;
          break;
        default:
          break;
      }
      if (advance) {
        idx += 1;
        phase_steps = 0;
        if (idx < 4) {
          expert = active_expert(schedule[idx]);
          pick_policy(expert)->on_phase_start(w, active_goal(schedule[idx], w));
        }
      }
    }
    if (!placed && abort_reason.empty()) abort_reason = "timeout";
  }

  finalize_trace(sim, cfg, w, trace, placed, abort_reason);
  if (!opts.trace_path.empty()) write_trace_jsonl(trace, opts.trace_path);
  if (!opts.keep_steps) trace.steps.clear();
  return trace;
}

void write_trace_jsonl(const EpisodeTrace& trace, const std::string& path) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw PlannerError("cannot write trace: " + path);
  json header;
  header["episode"] = {{"seed", trace.seed},
                       {"outcome", outcome_name(trace.outcome)},
                       {"abort_reason", trace.abort_reason},
                       {"steps", trace.total_steps},
                       {"cycle_time", trace.cycle_time},
                       {"retries", trace.retries}};
  if (trace.placement_error) header["episode"]["placement_error"] = *trace.placement_error;
  f << header.dump() << "\n";
  for (const auto& s : trace.steps) {
    json j;
    j["step"] = s.step;
    j["phase"] = phase_name(s.phase);
    j["expert"] = expert_name(s.expert);
    j["action"] = {s.action.v_cmd, s.action.omega_cmd, s.action.h_dot, s.action.clamp_trigger};
    j["reward"] = s.reward;
    j["events"] = {{"collided", s.events.collided},
                   {"clamp_succeeded", s.events.clamp_succeeded},
                   {"clamp_failed", s.events.clamp_failed},
                   {"placed", s.events.placed},
                   {"timed_out", s.events.timed_out}};
    f << j.dump() << "\n";
  }
}

}  // namespace hmer

#include "hmer/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "hmer/threading.hpp"

namespace hmer {

namespace fs = std::filesystem;

double lr_schedule(long step, long total, double lr0) {
  if (step < 0 || step > total) throw TrainError("lr_schedule: step outside [0, total]");
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total));
}

void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<uint8_t>& dones, double bootstrap, double gamma, double lambda,
                 std::vector<double>* advantages, std::vector<double>* returns) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw TrainError("compute_gae: length mismatch");
  advantages->assign(n, 0.0);
  returns->assign(n, 0.0);
  double lastgae = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_v = (i + 1 < n) ? values[i + 1] : bootstrap;
    const double nonterm = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_v * nonterm - values[i];
    lastgae = delta + gamma * lambda * nonterm * lastgae;
    (*advantages)[i] = lastgae;
    (*returns)[i] = lastgae + values[i];
  }
}

// ---- behavioral cloning -----------------------------------------------------

ObsVec bc_obs(const BcSample& s) {
  ObsVec o;
  o.lidar.assign(s.lidar.begin(), s.lidar.end());
  o.image.assign(s.image.begin(), s.image.end());
  o.vec = s.vec;
  return o;
}

std::vector<BcSample> build_bc_dataset(const Sim& sim, const Config& cfg,
                                       const std::vector<Demonstration>& demos, ExpertKind kind) {
  ObsBuilder builder(sim, cfg);
  std::vector<BcSample> out;
  for (const auto& demo : demos) {
    for (const auto& step : demo.steps) {
      if (kind != ExpertKind::Flat && step.expert != kind) continue;
      const WorldState w = demo_world(sim, demo, step);
      const Pose2D goal = active_goal(step.phase, w);
      const ObsVec obs = builder.build(kind, w, goal);
      BcSample s;
      s.lidar.assign(obs.lidar.begin(), obs.lidar.end());
      s.image.reserve(obs.image.size());
      for (const double v : obs.image) s.image.push_back(v > 0.5 ? 1 : 0);
      s.vec = obs.vec;
      const std::size_t act_dim = kind == ExpertKind::Navigation ? 2 : 3;
      s.target.assign(step.act, step.act + act_dim);
      s.trigger = step.trigger;
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

constexpr int kGradChunks = 16;  // fixed chunk count keeps reductions
                                 // independent of the worker count

struct ChunkWork {
  std::vector<GradBuffer> grads;
  std::vector<PolicyNet::Ws> ws;
  std::vector<double> loss_sum;

  void init(const PolicyNet& net) {
    grads.assign(kGradChunks, GradBuffer(net.ps.size(), 0.0));
    ws.clear();
    for (int i = 0; i < kGradChunks; ++i) ws.push_back(net.make_ws());
    loss_sum.assign(kGradChunks, 0.0);
  }
  void zero() {
    for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
    std::fill(loss_sum.begin(), loss_sum.end(), 0.0);
  }
  // Reduce chunk gradients into chunk 0's buffer, in chunk order.
  GradBuffer& reduce() {
    for (int c = 1; c < kGradChunks; ++c) {
      for (std::size_t i = 0; i < grads[0].size(); ++i) grads[0][i] += grads[c][i];
    }
    return grads[0];
  }
  double total_loss() const {
    double s = 0.0;
    for (const double v : loss_sum) s += v;
    return s;
  }
};

// Runs fn(sample_index, chunk) over [0, n) with a fixed index->chunk mapping.
void chunked_for(std::size_t n, const std::function<void(std::size_t, int)>& fn) {
  if (n == 0) return;
  const std::size_t per = (n + kGradChunks - 1) / kGradChunks;
  parallel_for(std::min<std::size_t>(kGradChunks, (n + per - 1) / per), [&](std::size_t c, int) {
    const std::size_t lo = c * per;
    const std::size_t hi = std::min(n, lo + per);
    for (std::size_t i = lo; i < hi; ++i) fn(i, static_cast<int>(c));
  });
}

}  // namespace

std::vector<double> bc_train(PolicyNet& net, const std::vector<BcSample>& data, const BCHyper& h,
                             uint64_t seed) {
  if (data.empty()) throw TrainError("bc_train: empty dataset");
  if (h.epochs < 1) throw TrainError("bc_train: epochs must be >= 1");
  Rng rng(seed);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);

  ChunkWork work;
  work.init(net);
  net.adam.init(net.ps.size());
  const std::size_t ls_off = net.log_std_offset();

  std::vector<double> history;
  history.reserve(h.epochs);
  for (int epoch = 0; epoch < h.epochs; ++epoch) {
    // Fisher-Yates with the portable rng
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    double epoch_nll = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < idx.size(); start += h.minibatch) {
      const std::size_t end = std::min(idx.size(), start + h.minibatch);
      const std::size_t m = end - start;
      work.zero();
      chunked_for(m, [&](std::size_t k, int chunk) {
        const BcSample& s = data[idx[start + k]];
        const ObsVec obs = bc_obs(s);
        auto& ws = work.ws[chunk];
        auto& g = work.grads[chunk];
        const PolicyNet::Out out = net.forward(obs, ws);
        const double inv_m = 1.0 / static_cast<double>(m);
        // NLL = -log pi(a|s); gradient scale -1/m on the log-prob terms
        double nll = -gaussian_logprob(out.mean, net.log_std(net.ps), s.target.data(), net.act_dim);
        std::vector<double> gmean(net.act_dim, 0.0);
        gaussian_logprob_backward(out.mean, net.log_std(net.ps), s.target.data(), net.act_dim,
                                  -inv_m, gmean.data(), g.data() + ls_off);
        double gclamp = 0.0;
        if (net.has_clamp) {
          nll -= bernoulli_logprob(out.clamp_logit, s.trigger);
          gclamp = -inv_m * bernoulli_logprob_dlogit(out.clamp_logit, s.trigger);
        }
        net.backward(obs, ws, gmean.data(), gclamp, 0.0, g);
        work.loss_sum[chunk] += nll;
      });
      const double batch_nll = work.total_loss() / m;
      if (!std::isfinite(batch_nll)) throw TrainError("bc_train: non-finite loss");
      adam_step(net.ps, work.reduce(), net.adam, h.lr);
      epoch_nll += work.total_loss();
      seen += m;
    }
    history.push_back(epoch_nll / seen);
  }
  return history;
}

// ---- PPO ---------------------------------------------------------------------

PpoSampleLoss ppo_surrogate(double logp_new, double logp_old, double advantage, double clip_eps) {
  PpoSampleLoss out;
  out.ratio = std::exp(logp_new - logp_old);
  const double s1 = out.ratio * advantage;
  const double clipped_ratio = std::clamp(out.ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  const double s2 = clipped_ratio * advantage;
  out.clipped = s2 < s1;
  out.surrogate = std::min(s1, s2);
  return out;
}

PpoDiag ppo_update(PolicyNet& net, const RolloutBuffer& buf, const PPOHyper& h, double lr,
                   uint64_t seed, double policy_coef) {
  // Flatten segments and run GAE per segment.
  std::vector<const Transition*> flat;
  std::vector<double> adv, ret;
  for (const auto& seg : buf.segments) {
    const std::size_t n = seg.steps.size();
    if (n == 0) continue;
    std::vector<double> r(n), v(n);
    std::vector<uint8_t> d(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = seg.steps[i].reward;
      v[i] = seg.steps[i].value;
    }
    std::vector<double> a, rt;
    compute_gae(r, v, d, seg.bootstrap, h.gamma, h.gae_lambda, &a, &rt);
    for (std::size_t i = 0; i < n; ++i) {
      flat.push_back(&seg.steps[i]);
      adv.push_back(a[i]);
      ret.push_back(rt[i]);
    }
  }
  if (flat.empty()) throw TrainError("ppo_update: empty buffer");

  // Standardize advantages across the expert batch.
  double mean = 0.0;
  for (const double a : adv) mean += a;
  mean /= adv.size();
  double var = 0.0;
  for (const double a : adv) var += (a - mean) * (a - mean);
  var /= adv.size();
  const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
  for (double& a : adv) a = (a - mean) * inv_std;

  Rng rng(seed);
  std::vector<std::size_t> idx(flat.size());
  std::iota(idx.begin(), idx.end(), 0);

  ChunkWork work;
  work.init(net);
  const std::size_t ls_off = net.log_std_offset();

  PpoDiag diag;
  long minibatches = 0;
  bool first_minibatch = true;
  std::vector<double> chunk_ratio(kGradChunks), chunk_clip(kGradChunks), chunk_kl(kGradChunks),
      chunk_pl(kGradChunks), chunk_vl(kGradChunks), chunk_ent(kGradChunks);

  for (int epoch = 0; epoch < h.epochs; ++epoch) {
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    for (std::size_t start = 0; start < idx.size(); start += h.minibatch) {
      const std::size_t end = std::min(idx.size(), start + h.minibatch);
      const std::size_t m = end - start;
      work.zero();
      std::fill(chunk_ratio.begin(), chunk_ratio.end(), 0.0);
      std::fill(chunk_clip.begin(), chunk_clip.end(), 0.0);
      std::fill(chunk_kl.begin(), chunk_kl.end(), 0.0);
      std::fill(chunk_pl.begin(), chunk_pl.end(), 0.0);
      std::fill(chunk_vl.begin(), chunk_vl.end(), 0.0);
      std::fill(chunk_ent.begin(), chunk_ent.end(), 0.0);

      chunked_for(m, [&](std::size_t k, int chunk) {
        const std::size_t j = idx[start + k];
        const Transition& t = *flat[j];
        auto& ws = work.ws[chunk];
        auto& g = work.grads[chunk];
        const double inv_m = 1.0 / static_cast<double>(m);

        const PolicyNet::Out out = net.forward(t.obs, ws);
        const double logp_new = action_logprob(net, out, t.raw, t.clamp);
        const double entropy = action_entropy(net, out);
        const PpoSampleLoss sl = ppo_surrogate(logp_new, t.logp, adv[j], h.clip_eps);
        const double verr = out.value - ret[j];

        work.loss_sum[chunk] +=
            -policy_coef * sl.surrogate + h.value_coef * verr * verr - h.entropy_coef * entropy;
        chunk_pl[chunk] += -sl.surrogate;
        chunk_vl[chunk] += verr * verr;
        chunk_ent[chunk] += entropy;
        chunk_ratio[chunk] += sl.ratio;
        chunk_clip[chunk] += std::abs(sl.ratio - 1.0) > h.clip_eps ? 1.0 : 0.0;
        chunk_kl[chunk] += (sl.ratio - 1.0) - std::log(std::max(sl.ratio, 1e-12));

        // d loss / d logp_new
        const double dlogp = sl.clipped ? 0.0 : -policy_coef * adv[j] * sl.ratio;
        std::vector<double> gmean(net.act_dim, 0.0);
        if (dlogp != 0.0) {
          gaussian_logprob_backward(out.mean, net.log_std(net.ps), t.raw.data(), net.act_dim,
                                    dlogp * inv_m, gmean.data(), g.data() + ls_off);
        }
        // entropy bonus: d loss / d log_std_i = -c2 per dim
        gaussian_entropy_backward(net.act_dim, -h.entropy_coef * inv_m, g.data() + ls_off);
        double gclamp = 0.0;
        if (net.has_clamp) {
          if (dlogp != 0.0)
            gclamp += dlogp * inv_m * bernoulli_logprob_dlogit(out.clamp_logit, t.clamp);
          gclamp += -h.entropy_coef * inv_m * bernoulli_entropy_dlogit(out.clamp_logit);
        }
        const double gvalue = h.value_coef * 2.0 * verr * inv_m;
        net.backward(t.obs, ws, gmean.data(), gclamp, gvalue, g);
      });

      const double loss = work.total_loss() / m;
      if (!std::isfinite(loss)) {
        throw TrainError("ppo_update: non-finite loss (expert " +
                         std::string(expert_name(net.kind)) + ", minibatch " +
                         std::to_string(minibatches) + ")");
      }
      double rsum = 0, csum = 0, klsum = 0, plsum = 0, vlsum = 0, esum = 0;
      for (int c = 0; c < kGradChunks; ++c) {
        rsum += chunk_ratio[c];
        csum += chunk_clip[c];
        klsum += chunk_kl[c];
        plsum += chunk_pl[c];
        vlsum += chunk_vl[c];
        esum += chunk_ent[c];
      }
      if (first_minibatch) {
        diag.first_ratio_mean = rsum / m;
        diag.first_clip_frac = csum / m;
        first_minibatch = false;
      }
      diag.policy_loss += plsum / m;
      diag.value_loss += vlsum / m;
      diag.entropy += esum / m;
      diag.clip_frac += csum / m;
      diag.approx_kl += klsum / m;
      minibatches += 1;

      adam_step(net.ps, work.reduce(), net.adam, lr);
    }
  }
  if (minibatches > 0) {
    diag.policy_loss /= minibatches;
    diag.value_loss /= minibatches;
    diag.entropy /= minibatches;
    diag.clip_frac /= minibatches;
    diag.approx_kl /= minibatches;
  }
  return diag;
}

// ---- rollout collection ---------------------------------------------------------

RolloutCollector::RolloutCollector(const Config& cfg, SubTask task, int n_env, uint64_t seed,
                                   const RewardConfig& reward_cfg)
    : cfg_(cfg), reward_cfg_(reward_cfg), task_(task), sim_((cfg_.env.subtask = task, cfg_.env)),
      seed_(seed) {
  envs_.resize(n_env);
  for (int i = 0; i < n_env; ++i) reset_env(i);
}

void RolloutCollector::reset_env(int i) {
  EnvSlot& e = envs_[static_cast<std::size_t>(i)];
  const uint64_t s = mix_seed(seed_, 40000 + static_cast<uint64_t>(e.episode) * envs_.size() + i);
  e.episode += 1;
  e.w = sim_.reset(s);
  e.rng = Rng(mix_seed(s, 5));
  e.status = PlannerStatus{};
  e.ev = StepEvents{};
  e.open_segment = -1;
  switch (task_) {
    case SubTask::Full: e.expert = active_expert(PlannerPhase::Departure); break;
    case SubTask::Pick: e.expert = ExpertKind::Picking; break;
    case SubTask::Place: e.expert = ExpertKind::Placing; break;
  }
}

void RolloutCollector::close_segment(std::map<ExpertKind, ExpertSlot*>& experts, EnvSlot& e,
                                     double bootstrap) {
  if (e.open_segment < 0) return;
  experts.at(e.open_expert)->buffer.segments[e.open_segment].bootstrap = bootstrap;
  e.open_segment = -1;
}

void RolloutCollector::collect(std::map<ExpertKind, ExpertSlot*>& experts, long steps_per_env) {
  const std::size_t n_env = envs_.size();
  ObsBuilder builder(sim_, cfg_);
  for (auto& [kind, slot] : experts) {
    auto& v = ws_[kind];
    while (v.size() < n_env) v.push_back(slot->net->make_ws());
  }

  struct Pending {
    ObsVec obs;
    SampledAction sampled;
    PlannerPhase phase = PlannerPhase::Departure;
    Pose2D goal;
  };
  std::vector<Pending> pending(n_env);

  auto phase_of = [&](const EnvSlot& e) {
    switch (task_) {
      case SubTask::Pick: return PlannerPhase::SearchPick;
      case SubTask::Place: return PlannerPhase::Placement;
      case SubTask::Full: return e.status.phase;
    }
    return PlannerPhase::Departure;
  };

  for (long step = 0; step < steps_per_env; ++step) {
    parallel_for(n_env, [&](std::size_t i, int) {
      EnvSlot& e = envs_[i];
      Pending& p = pending[i];
      p.phase = phase_of(e);
      p.goal = active_goal(p.phase, e.w);
      p.obs = builder.build(e.expert, e.w, p.goal);
      PolicyNet& net = *experts.at(e.expert)->net;
      const PolicyNet::Out out = net.forward(p.obs, ws_[e.expert][i]);
      p.sampled = sample_action(net, out, e.rng, false);
    });

    for (std::size_t i = 0; i < n_env; ++i) {
      EnvSlot& e = envs_[i];
      Pending& p = pending[i];
      ExpertSlot& slot = *experts.at(e.expert);
      const EgoState prev_ego = sim_.ego_state(e.w, p.goal);
      const bool was_carrying = e.w.forklift.carrying.has_value();
      const StepEvents ev = sim_.step(e.w, p.sampled.action);
      e.ev = ev;
      const double raw_r =
          phase_reward(sim_, cfg_, reward_cfg_, p.phase, prev_ego, e.w, ev, p.goal);
      const double norm_r = normalize_reward(slot.stats, raw_r, cfg_.rewards.norm_mode);

      if (e.open_segment < 0) {
        slot.buffer.segments.emplace_back();
        e.open_segment = static_cast<int>(slot.buffer.segments.size()) - 1;
        e.open_expert = e.expert;
      }
      Transition t;
      t.obs = std::move(p.obs);
      t.raw = p.sampled.raw;
      t.clamp = p.sampled.clamp;
      t.logp = p.sampled.logp;
      t.value = p.sampled.value;
      t.reward = norm_r;
      slot.buffer.segments[e.open_segment].steps.push_back(std::move(t));

      bool terminal = ev.terminal();
      if (task_ == SubTask::Pick) terminal = terminal || ev.clamp_succeeded;
      if (task_ == SubTask::Place)
        terminal = terminal || (was_carrying && !e.w.forklift.carrying.has_value());

      if (terminal) {
        close_segment(experts, e, 0.0);
        reset_env(static_cast<int>(i));
        continue;
      }
      if (task_ == SubTask::Full) {
        const SemanticState s = evaluate_predicates(e.w, ev);
        const auto [next, kind] = transition(e.status, s, cfg_.planner.max_retries);
        if (phase_absorbing(next.phase)) {
          close_segment(experts, e, 0.0);
          reset_env(static_cast<int>(i));
          continue;
        }
        const bool boundary =
            next.phase != e.status.phase || next.retry_count != e.status.retry_count;
        e.status = next;
        if (boundary) {
          close_segment(experts, e, 0.0);
          e.expert = kind;
        }
      }
    }
  }

  // Truncation: bootstrap open segments with the current value estimate.
  std::vector<double> boots(n_env, 0.0);
  parallel_for(n_env, [&](std::size_t i, int) {
    EnvSlot& e = envs_[i];
    if (e.open_segment < 0) return;
    const PlannerPhase ph = phase_of(e);
    const ObsVec obs = builder.build(e.expert, e.w, active_goal(ph, e.w));
    PolicyNet& net = *experts.at(e.expert)->net;
    boots[i] = net.forward(obs, ws_[e.expert][i]).value;
  });
  for (std::size_t i = 0; i < n_env; ++i) {
    if (envs_[i].open_segment >= 0) close_segment(experts, envs_[i], boots[i]);
  }
  total_steps_ += steps_per_env * static_cast<long>(n_env);
}

// ---- episode helpers --------------------------------------------------------------

Action NetExpert::act(const WorldState& w, const Pose2D& goal, Rng& rng, bool deterministic) {
  const ObsVec obs = builder_.build(net_.kind, w, goal);
  const PolicyNet::Out out = net_.forward(obs, ws_);
  return sample_action(net_, out, rng, deterministic).action;
}

SubtaskResult run_subtask_episode(const Sim& sim, const Config& cfg, ExpertPolicy& policy,
                                  SubTask task, uint64_t seed, bool deterministic) {
  if (sim.config().subtask != task) throw TrainError("run_subtask_episode: sim subtask mismatch");
  WorldState w = sim.reset(seed);
  Rng rng(mix_seed(seed, 77));
  SubtaskResult res;
  const PlannerPhase phase = task == SubTask::Pick ? PlannerPhase::SearchPick
                                                   : PlannerPhase::Placement;
  while (true) {
    const Pose2D goal = active_goal(phase, w);
    const Action a = policy.act(w, goal, rng, deterministic);
    const bool was_carrying = w.forklift.carrying.has_value();
    const StepEvents ev = sim.step(w, a);
    res.steps = w.t;
    if (task == SubTask::Pick) {
      if (ev.clamp_succeeded) {
        res.success = true;
        break;
      }
      if (ev.terminal()) break;
    } else {
      const bool released = was_carrying && !w.forklift.carrying.has_value();
      if (ev.placed || released || ev.terminal()) {
        res.success = ev.placed;
        const Pose2D cp = w.cargo[0].pose;
        res.final_error = (cp.position() - w.goal_slot.pose.position()).norm();
        res.final_d_target = d_target(cp, w.goal_slot.pose, cfg.rewards);
        break;
      }
    }
  }
  return res;
}

SubtaskEval evaluate_subtask(const Sim& sim, const Config& cfg, ExpertPolicy& policy, SubTask task,
                             int episodes, uint64_t seed) {
  // Sequential: policy surfaces carry per-episode workspace state.
  SubtaskEval ev;
  ev.episodes.resize(episodes);
  for (int i = 0; i < episodes; ++i) {
    ev.episodes[i] = run_subtask_episode(sim, cfg, policy, task, mix_seed(seed, 9000 + i));
  }
  int succ = 0, under = 0;
  double err = 0.0;
  for (const auto& r : ev.episodes) {
    if (!r.success) continue;
    succ += 1;
    err += r.final_error;
    if (r.final_error < 0.02) under += 1;
  }
  ev.success_rate = episodes > 0 ? static_cast<double>(succ) / episodes : 0.0;
  ev.mean_error = succ > 0 ? err / succ : 0.0;
  ev.frac_under_2cm = succ > 0 ? static_cast<double>(under) / succ : 0.0;
  return ev;
}

// ---- pipelines ---------------------------------------------------------------------

namespace {

std::string ckpt_name(const std::string& out_dir, ExpertKind k) {
  return out_dir + "/" + expert_name(k) + ".ckpt.json";
}

void append_csv(std::ofstream& f, std::initializer_list<std::string> cells) {
  bool first = true;
  for (const auto& c : cells) {
    if (!first) f << ",";
    f << c;
    first = false;
  }
  f << "\n";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void train_bc(const Config& cfg, const std::string& demos_path, const std::string& mode,
              const std::string& out_dir, uint64_t seed) {
  if (mode != "experts" && mode != "flat") throw TrainError("train_bc: mode must be experts|flat");
  fs::create_directories(out_dir);
  Config full_cfg = cfg;
  full_cfg.env.subtask = SubTask::Full;
  const Sim sim(full_cfg.env);
  const auto demos = read_demonstrations(demos_path, cfg);

  std::vector<ExpertKind> kinds =
      mode == "experts"
          ? std::vector<ExpertKind>{ExpertKind::Navigation, ExpertKind::Picking,
                                    ExpertKind::Placing}
          : std::vector<ExpertKind>{ExpertKind::Flat};

  std::ofstream hist(out_dir + "/bc_history.csv");
  append_csv(hist, {"epoch", "expert", "nll"});
  std::vector<std::pair<ExpertKind, std::string>> manifest;
  for (const ExpertKind kind : kinds) {
    const auto data = build_bc_dataset(sim, full_cfg, demos, kind);
    PolicyNet net = PolicyNet::build(kind, full_cfg);
    Rng init_rng(mix_seed(seed, 600 + static_cast<int>(kind)));
    net.init_params(init_rng);
    const auto history = bc_train(net, data, cfg.bc, mix_seed(seed, 500 + static_cast<int>(kind)));
    for (std::size_t e = 0; e < history.size(); ++e)
      append_csv(hist, {std::to_string(e + 1), expert_name(kind), fmt(history[e])});
    const std::string path = ckpt_name(out_dir, kind);
    net.save(path, 0);
    manifest.emplace_back(kind, path);
  }
  write_manifest(out_dir + "/manifest.json", manifest);
}

PpoRunResult train_ppo(const Config& cfg, const std::string& mode, SubTask task,
                       const std::string& init_manifest, long total_steps, uint64_t seed,
                       const std::string& out_dir) {
  if (mode != "hmer" && mode != "hrl" && mode != "seq-hybrid")
    throw TrainError("train_ppo: mode must be hmer|hrl|seq-hybrid");
  if (mode != "hrl" && init_manifest.empty())
    throw TrainError("train_ppo: mode " + mode + " requires --init checkpoints");
  fs::create_directories(out_dir);

  std::vector<ExpertKind> kinds;
  switch (task) {
    case SubTask::Full:
      kinds = {ExpertKind::Navigation, ExpertKind::Picking, ExpertKind::Placing};
      break;
    case SubTask::Pick: kinds = {ExpertKind::Picking}; break;
    case SubTask::Place: kinds = {ExpertKind::Placing}; break;
  }

  // The placement sub-task trains against a success bonus large enough to beat
  // reward farming (see README); other tasks use the configured rewards.
  RewardConfig reward_cfg = cfg.rewards;
  if (task == SubTask::Place) reward_cfg.r_success = cfg.ppo.place_train_r_success;

  std::map<ExpertKind, PolicyNet> nets;
  std::map<ExpertKind, ExpertSlot> slots;
  std::map<ExpertKind, ExpertSlot*> slot_ptrs;
  std::vector<std::pair<ExpertKind, std::string>> init_entries;
  if (!init_manifest.empty()) init_entries = read_manifest(init_manifest);

  for (const ExpertKind k : kinds) {
    nets.emplace(k, PolicyNet::build(k, cfg));
    PolicyNet& net = nets.at(k);
    if (mode == "hrl") {
      Rng r(mix_seed(seed, 600 + static_cast<int>(k)));
      net.init_params(r);
    } else {
      bool loaded = false;
      for (const auto& [mk, path] : init_entries) {
        if (mk == k) {
          net.load(path);
          loaded = true;
          break;
        }
      }
      if (!loaded) throw TrainError(std::string("train_ppo: manifest missing expert ") +
                                    expert_name(k));
    }
    net.adam.init(net.ps.size());
    slots[k].net = &net;
    slot_ptrs[k] = &slots[k];
  }

  RolloutCollector collector(cfg, task, cfg.ppo.n_env, mix_seed(seed, 123), reward_cfg);

  std::ofstream metrics(out_dir + "/metrics.csv");
  append_csv(metrics, {"step", "expert", "policy_loss", "value_loss", "entropy", "clip_frac",
                       "approx_kl", "lr", "eval_success"});

  Config eval_cfg = cfg;
  eval_cfg.env.subtask = task;
  const Sim eval_sim(eval_cfg.env);

  PpoRunResult result;
  auto run_eval = [&](long at_step) {
    double succ = 0.0;
    if (task == SubTask::Full) {
      std::map<ExpertKind, std::unique_ptr<NetExpert>> adapters;
      PolicyBundle bundle;
      for (const ExpertKind k : kinds) {
        adapters[k] = std::make_unique<NetExpert>(nets.at(k), collector.sim(), cfg);
        bundle[k] = adapters[k].get();
      }
      EpisodeOptions opts;
      opts.mode = mode == "seq-hybrid" ? ExecMode::FixedSequence : ExecMode::Planner;
      int ok = 0;
      for (int i = 0; i < cfg.ppo.eval_episodes; ++i) {
        const auto trace =
            run_episode(collector.sim(), cfg, bundle, opts, mix_seed(seed, 9000 + i));
        ok += trace.outcome == Outcome::Success ? 1 : 0;
      }
      succ = static_cast<double>(ok) / cfg.ppo.eval_episodes;
    } else {
      const ExpertKind k = kinds[0];
      NetExpert adapter(nets.at(k), eval_sim, eval_cfg);
      succ = evaluate_subtask(eval_sim, eval_cfg, adapter, task, cfg.ppo.eval_episodes,
                              mix_seed(seed, 31337))
                 .success_rate;
    }
    append_csv(metrics, {std::to_string(at_step), "eval", "", "", "", "", "", "", fmt(succ)});
    result.eval_curve.emplace_back(at_step, succ);
  };

  run_eval(0);
  long next_eval = cfg.ppo.eval_interval;
  long iter = 0;
  const long steps_per_env = std::max<long>(1, cfg.ppo.batch / cfg.ppo.n_env);
  while (collector.total_env_steps() < total_steps) {
    collector.collect(slot_ptrs, steps_per_env);
    const long at = collector.total_env_steps();
    const double lr = lr_schedule(std::min(at, total_steps), total_steps, cfg.ppo.lr);
    for (const ExpertKind k : kinds) {
      ExpertSlot& slot = slots[k];
      if (slot.buffer.size() == 0) continue;
      const PpoDiag d = ppo_update(nets.at(k), slot.buffer, cfg.ppo, lr,
                                   mix_seed(seed, 7000 + iter * 16 + static_cast<int>(k)));
      slot.buffer.clear();
      append_csv(metrics,
                 {std::to_string(at), expert_name(k), fmt(d.policy_loss), fmt(d.value_loss),
                  fmt(d.entropy), fmt(d.clip_frac), fmt(d.approx_kl), fmt(lr), ""});
    }
    iter += 1;
    if (at >= next_eval) {
      run_eval(at);
      next_eval += cfg.ppo.eval_interval;
      const std::string snap = out_dir + "/snap_" + std::to_string(at);
      fs::create_directories(snap);
      std::vector<std::pair<ExpertKind, std::string>> man;
      for (const ExpertKind k : kinds) {
        const std::string p = ckpt_name(snap, k);
        nets.at(k).save(p, at);
        man.emplace_back(k, p);
      }
      write_manifest(snap + "/manifest.json", man);
    }
  }
  run_eval(collector.total_env_steps());

  std::vector<std::pair<ExpertKind, std::string>> man;
  for (const ExpertKind k : kinds) {
    const std::string p = ckpt_name(out_dir, k);
    nets.at(k).save(p, collector.total_env_steps());
    man.emplace_back(k, p);
  }
  write_manifest(out_dir + "/manifest.json", man);
  return result;
}

}  // namespace hmer

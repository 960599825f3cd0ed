#include "hmer/policy.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace hmer {

using nlohmann::json;

const char* expert_name(ExpertKind k) {
  switch (k) {
    case ExpertKind::Navigation: return "navigation";
    case ExpertKind::Picking: return "picking";
    case ExpertKind::Placing: return "placing";
    case ExpertKind::Flat: return "flat";
  }
  return "?";
}

ExpertKind expert_from_name(const std::string& s) {
  if (s == "navigation") return ExpertKind::Navigation;
  if (s == "picking") return ExpertKind::Picking;
  if (s == "placing") return ExpertKind::Placing;
  if (s == "flat") return ExpertKind::Flat;
  throw NnError("unknown expert kind: " + s);
}

// ---- observation building ----------------------------------------------------

std::vector<double> ObsBuilder::nav_vec(const WorldState& w, const Pose2D& goal) const {
  const EgoState e = sim_.ego_state(w, goal);
  const auto& f = cfg_.env.forklift;
  const double d_norm = std::hypot(cfg_.env.arena_w, cfg_.env.arena_h);
  return {e.goal_dist / d_norm, e.goal_bearing / kPi, e.v / f.v_max, e.omega / f.omega_max};
}

std::vector<double> ObsBuilder::pick_vec(const WorldState& w) const {
  return {w.forklift.h / cfg_.env.forklift.h_max};
}

std::vector<double> ObsBuilder::place_vec(const WorldState& w, const Pose2D& goal) const {
  // Error of the (virtual) carried-cargo pose relative to the slot, in the
  // cargo frame. Holds whether or not cargo is attached.
  const Pose2D rel{cfg_.env.forklift.fork_offset, 0.0, 0.0};
  const Pose2D cp = sim_.carried_cargo_pose(w.forklift, rel);
  const Vec2 b = cp.to_body(goal.position());
  const double dth = wrap_angle(goal.theta - cp.theta);
  const double p_norm = 2.0;
  return {b.x / p_norm, b.y / p_norm, dth / kPi, w.forklift.h / cfg_.env.forklift.h_max};
}

std::vector<double> ObsBuilder::flat_vec(const WorldState& w, const Pose2D& goal) const {
  const EgoState e = sim_.ego_state(w, goal);
  const auto& f = cfg_.env.forklift;
  const double d_norm = std::hypot(cfg_.env.arena_w, cfg_.env.arena_h);
  return {e.v / f.v_max, e.omega / f.omega_max, e.h / f.h_max, e.goal_dist / d_norm,
          e.goal_bearing / kPi};
}

ObsVec ObsBuilder::build(ExpertKind kind, const WorldState& w, const Pose2D& goal) const {
  ObsVec o;
  const bool wants_lidar = kind == ExpertKind::Navigation || kind == ExpertKind::Flat;
  const bool wants_image = kind == ExpertKind::Picking || kind == ExpertKind::Flat;
  if (wants_lidar) {
    const LidarScan scan = sim_.raycast_lidar(w);
    o.lidar.resize(scan.ranges.size());
    for (std::size_t i = 0; i < o.lidar.size(); ++i)
      o.lidar[i] = scan.ranges[i] / cfg_.env.lidar.r_max;
  }
  if (wants_image) o.image = sim_.render_semantic_image(w).data;
  switch (kind) {
    case ExpertKind::Navigation: o.vec = nav_vec(w, goal); break;
    case ExpertKind::Picking: o.vec = pick_vec(w); break;
    case ExpertKind::Placing: o.vec = place_vec(w, goal); break;
    case ExpertKind::Flat: o.vec = flat_vec(w, goal); break;
  }
  return o;
}

// ---- net construction --------------------------------------------------------

PolicyNet PolicyNet::build(ExpertKind kind, const Config& cfg) {
  PolicyNet net;
  net.kind = kind;
  net.hidden_ = cfg.net.hidden;
  const auto& fs = cfg.env.forklift;

  net.use_lidar_ = kind == ExpertKind::Navigation || kind == ExpertKind::Flat;
  net.use_image_ = kind == ExpertKind::Picking || kind == ExpertKind::Flat;
  net.use_dense_enc_ = kind == ExpertKind::Placing;

  std::size_t enc = 0;
  if (net.use_lidar_) {
    const auto& n = cfg.net;
    net.obs_spec.lidar = cfg.env.lidar.n_scan;
    net.lc1_.init(net.ps, "lidar.c1", 1, n.lidar_channels[0], n.lidar_kernels[0],
                  n.lidar_strides[0], cfg.env.lidar.n_scan);
    net.lc2_.init(net.ps, "lidar.c2", n.lidar_channels[0], n.lidar_channels[1],
                  n.lidar_kernels[1], n.lidar_strides[1], net.lc1_.out_len);
    net.lc3_.init(net.ps, "lidar.c3", n.lidar_channels[1], n.lidar_channels[2],
                  n.lidar_kernels[2], n.lidar_strides[2], net.lc2_.out_len);
    enc += net.lc3_.out_ch * net.lc3_.out_len;
  }
  if (net.use_image_) {
    const int s = cfg.env.image.size;
    net.obs_spec.image = static_cast<std::size_t>(3) * s * s;
    // At 84x84 this is the conventional NatureCNN stack; other sizes use the
    // configured (desk-scale) stack.
    std::array<int, 3> ks = cfg.net.img_kernels;
    std::array<int, 3> st = cfg.net.img_strides;
    std::array<int, 3> ch = cfg.net.img_channels;
    if (s == 84) {
      ks = {8, 4, 3};
      st = {4, 2, 1};
      ch = {32, 64, 64};
    }
    net.ic1_.init(net.ps, "img.c1", 3, ch[0], ks[0], st[0], s, s);
    net.ic2_.init(net.ps, "img.c2", ch[0], ch[1], ks[1], st[1], net.ic1_.out_h, net.ic1_.out_w);
    net.ic3_.init(net.ps, "img.c3", ch[1], ch[2], ks[2], st[2], net.ic2_.out_h, net.ic2_.out_w);
    enc += net.ic3_.out_ch * net.ic3_.out_h * net.ic3_.out_w;
  }

  std::size_t vec_dim = 0;
  switch (kind) {
    case ExpertKind::Navigation: vec_dim = 4; break;
    case ExpertKind::Picking: vec_dim = 1; break;
    case ExpertKind::Placing: vec_dim = 4; break;
    case ExpertKind::Flat: vec_dim = 5; break;
  }
  net.obs_spec.vec = vec_dim;

  std::size_t head_in;
  if (net.use_dense_enc_) {
    net.enc1_.init(net.ps, "enc.l1", vec_dim, net.hidden_);
    net.enc2_.init(net.ps, "enc.l2", net.hidden_, net.hidden_);
    head_in = net.hidden_;
  } else {
    head_in = enc + vec_dim;
  }
  net.enc_out_ = head_in;

  net.act_dim = kind == ExpertKind::Navigation ? 2 : 3;
  net.has_clamp = kind != ExpertKind::Navigation;
  net.bounds = {fs.v_max, fs.omega_max};
  if (net.act_dim == 3) net.bounds.push_back(fs.hdot_max);

  net.a1_.init(net.ps, "actor.l1", head_in, net.hidden_);
  net.a2_.init(net.ps, "actor.l2", net.hidden_, net.hidden_);
  net.a_mu_.init(net.ps, "actor.mu", net.hidden_, net.act_dim);
  if (net.has_clamp) net.a_clamp_.init(net.ps, "actor.clamp", net.hidden_, 1);
  net.v1_.init(net.ps, "critic.l1", head_in, net.hidden_);
  net.v2_.init(net.ps, "critic.l2", net.hidden_, net.hidden_);
  net.v_out_.init(net.ps, "critic.out", net.hidden_, 1);
  net.log_std_slice = net.ps.add("log_std", {net.act_dim});

  net.adam.init(net.ps.size());
  return net;
}

void PolicyNet::init_params(Rng& rng) {
  if (use_lidar_) {
    lc1_.init_params(ps, rng);
    lc2_.init_params(ps, rng);
    lc3_.init_params(ps, rng);
  }
  if (use_image_) {
    ic1_.init_params(ps, rng);
    ic2_.init_params(ps, rng);
    ic3_.init_params(ps, rng);
  }
  if (use_dense_enc_) {
    enc1_.init_params(ps, rng);
    enc2_.init_params(ps, rng);
  }
  a1_.init_params(ps, rng);
  a2_.init_params(ps, rng);
  a_mu_.init_params(ps, rng);
  if (has_clamp) {
    a_clamp_.init_params(ps, rng);
    ps.ptr(a_clamp_.b)[0] = -2.0;  // clamping is rare a priori
  }
  v1_.init_params(ps, rng);
  v2_.init_params(ps, rng);
  v_out_.init_params(ps, rng);
  std::fill_n(ps.ptr(log_std_slice), act_dim, -0.5);
  adam.init(ps.size());
}

PolicyNet::Ws PolicyNet::make_ws() const {
  Ws ws;
  std::size_t scratch = enc_out_;
  if (use_lidar_) {
    ws.l1.resize(lc1_.out_ch * lc1_.out_len);
    ws.l2.resize(lc2_.out_ch * lc2_.out_len);
    ws.l3.resize(lc3_.out_ch * lc3_.out_len);
    scratch = std::max({scratch, ws.l1.size(), ws.l2.size(), ws.l3.size()});
  }
  if (use_image_) {
    ws.i1.resize(ic1_.out_ch * ic1_.out_h * ic1_.out_w);
    ws.i2.resize(ic2_.out_ch * ic2_.out_h * ic2_.out_w);
    ws.i3.resize(ic3_.out_ch * ic3_.out_h * ic3_.out_w);
    scratch = std::max({scratch, ws.i1.size(), ws.i2.size(), ws.i3.size()});
  }
  if (use_dense_enc_) {
    ws.e1.resize(hidden_);
    ws.e2.resize(hidden_);
  }
  ws.enc_in.resize(enc_out_ == 0 ? 1 : enc_out_);
  ws.a1.resize(hidden_);
  ws.a2.resize(hidden_);
  ws.v1.resize(hidden_);
  ws.v2.resize(hidden_);
  ws.mean_raw.resize(act_dim);
  ws.mean.resize(act_dim);
  ws.scratch.resize(std::max<std::size_t>(scratch, hidden_));
  ws.g_enc.resize(ws.enc_in.size());
  ws.g_a.resize(hidden_);
  ws.g_b.resize(hidden_);
  const std::size_t big =
      std::max({ws.l1.size(), ws.l2.size(), ws.i1.size(), ws.i2.size(), ws.enc_in.size(),
                static_cast<std::size_t>(hidden_)});
  ws.g_big1.resize(big);
  ws.g_big2.resize(big);
  return ws;
}

PolicyNet::Out PolicyNet::forward(const ObsVec& obs, Ws& ws) const {
  if (obs.lidar.size() != obs_spec.lidar || obs.image.size() != obs_spec.image ||
      obs.vec.size() != obs_spec.vec)
    throw NnError("policy forward: observation shape mismatch");

  std::size_t off = 0;
  if (use_lidar_) {
    lc1_.forward(ps, obs.lidar.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.l1.data(), ws.l1.size());
    lc2_.forward(ps, ws.l1.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.l2.data(), ws.l2.size());
    lc3_.forward(ps, ws.l2.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.l3.data(), ws.l3.size());
    std::memcpy(ws.enc_in.data() + off, ws.l3.data(), ws.l3.size() * sizeof(double));
    off += ws.l3.size();
  }
  if (use_image_) {
    ic1_.forward(ps, obs.image.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.i1.data(), ws.i1.size());
    ic2_.forward(ps, ws.i1.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.i2.data(), ws.i2.size());
    ic3_.forward(ps, ws.i2.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.i3.data(), ws.i3.size());
    std::memcpy(ws.enc_in.data() + off, ws.i3.data(), ws.i3.size() * sizeof(double));
    off += ws.i3.size();
  }
  if (use_dense_enc_) {
    enc1_.forward(ps, obs.vec.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.e1.data(), hidden_);
    enc2_.forward(ps, ws.e1.data(), ws.scratch.data());
    tanh_forward(ws.scratch.data(), ws.e2.data(), hidden_);
    std::memcpy(ws.enc_in.data(), ws.e2.data(), hidden_ * sizeof(double));
  } else if (!obs.vec.empty()) {
    std::memcpy(ws.enc_in.data() + off, obs.vec.data(), obs.vec.size() * sizeof(double));
  }

  a1_.forward(ps, ws.enc_in.data(), ws.scratch.data());
  tanh_forward(ws.scratch.data(), ws.a1.data(), hidden_);
  a2_.forward(ps, ws.a1.data(), ws.scratch.data());
  tanh_forward(ws.scratch.data(), ws.a2.data(), hidden_);
  a_mu_.forward(ps, ws.a2.data(), ws.mean_raw.data());
  for (std::size_t i = 0; i < act_dim; ++i) ws.mean[i] = bounds[i] * std::tanh(ws.mean_raw[i]);
  if (has_clamp) {
    double logit;
    a_clamp_.forward(ps, ws.a2.data(), &logit);
    ws.clamp_logit = logit;
  } else {
    ws.clamp_logit = 0.0;
  }

  v1_.forward(ps, ws.enc_in.data(), ws.scratch.data());
  tanh_forward(ws.scratch.data(), ws.v1.data(), hidden_);
  v2_.forward(ps, ws.v1.data(), ws.scratch.data());
  tanh_forward(ws.scratch.data(), ws.v2.data(), hidden_);
  double value;
  v_out_.forward(ps, ws.v2.data(), &value);
  ws.value = value;

  return Out{ws.mean.data(), ws.clamp_logit, ws.value};
}

void PolicyNet::backward(const ObsVec& obs, Ws& ws, const double* gmean, double gclamp,
                         double gvalue, GradBuffer& g) const {
  // mean head: mean = bound * tanh(z)
  std::vector<double>& gz = ws.g_big1;
  for (std::size_t i = 0; i < act_dim; ++i) {
    const double t = ws.mean[i] / bounds[i];
    gz[i] = (gmean ? gmean[i] : 0.0) * bounds[i] * (1.0 - t * t);
  }
  a_mu_.backward(ps, ws.a2.data(), gz.data(), ws.g_a.data(), g);
  if (has_clamp && gclamp != 0.0) {
    a_clamp_.backward(ps, ws.a2.data(), &gclamp, ws.g_b.data(), g);
    for (int i = 0; i < hidden_; ++i) ws.g_a[i] += ws.g_b[i];
  }
  tanh_backward(ws.a2.data(), ws.g_a.data(), ws.g_a.data(), hidden_);
  a2_.backward(ps, ws.a1.data(), ws.g_a.data(), ws.g_b.data(), g);
  tanh_backward(ws.a1.data(), ws.g_b.data(), ws.g_b.data(), hidden_);
  a1_.backward(ps, ws.enc_in.data(), ws.g_b.data(), ws.g_enc.data(), g);

  if (gvalue != 0.0) {
    v_out_.backward(ps, ws.v2.data(), &gvalue, ws.g_a.data(), g);
    tanh_backward(ws.v2.data(), ws.g_a.data(), ws.g_a.data(), hidden_);
    v2_.backward(ps, ws.v1.data(), ws.g_a.data(), ws.g_b.data(), g);
    tanh_backward(ws.v1.data(), ws.g_b.data(), ws.g_b.data(), hidden_);
    v1_.backward(ps, ws.enc_in.data(), ws.g_b.data(), ws.g_a.data(), g);
    for (std::size_t i = 0; i < ws.g_enc.size(); ++i) ws.g_enc[i] += ws.g_a[i];
  }

  std::size_t off = 0;
  if (use_lidar_) {
    const std::size_t n3 = ws.l3.size();
    std::vector<double>& g3 = ws.g_big1;
    tanh_backward(ws.l3.data(), ws.g_enc.data() + off, g3.data(), n3);
    std::vector<double>& g2 = ws.g_big2;
    lc3_.backward(ps, ws.l2.data(), g3.data(), g2.data(), g);
    tanh_backward(ws.l2.data(), g2.data(), g2.data(), ws.l2.size());
    std::vector<double>& g1 = ws.g_big1;
    lc2_.backward(ps, ws.l1.data(), g2.data(), g1.data(), g);
    tanh_backward(ws.l1.data(), g1.data(), g1.data(), ws.l1.size());
    lc1_.backward(ps, obs.lidar.data(), g1.data(), nullptr, g);
    off += n3;
  }
  if (use_image_) {
    const std::size_t n3 = ws.i3.size();
    std::vector<double>& g3 = ws.g_big1;
    tanh_backward(ws.i3.data(), ws.g_enc.data() + off, g3.data(), n3);
    std::vector<double>& g2 = ws.g_big2;
    ic3_.backward(ps, ws.i2.data(), g3.data(), g2.data(), g);
    tanh_backward(ws.i2.data(), g2.data(), g2.data(), ws.i2.size());
    std::vector<double>& g1 = ws.g_big1;
    ic2_.backward(ps, ws.i1.data(), g2.data(), g1.data(), g);
    tanh_backward(ws.i1.data(), g1.data(), g1.data(), ws.i1.size());
    ic1_.backward(ps, obs.image.data(), g1.data(), nullptr, g);
    off += n3;
  }
  if (use_dense_enc_) {
    tanh_backward(ws.e2.data(), ws.g_enc.data(), ws.g_a.data(), hidden_);
    enc2_.backward(ps, ws.e1.data(), ws.g_a.data(), ws.g_b.data(), g);
    tanh_backward(ws.e1.data(), ws.g_b.data(), ws.g_b.data(), hidden_);
    enc1_.backward(ps, obs.vec.data(), ws.g_b.data(), nullptr, g);
  }
}

// ---- sampling ----------------------------------------------------------------

Action to_env_action(const PolicyNet& net, const double* raw, bool clamp) {
  Action a;
  a.v_cmd = raw[0];
  a.omega_cmd = raw[1];
  a.h_dot = net.act_dim > 2 ? raw[2] : 0.0;
  a.clamp_trigger = net.has_clamp && clamp;
  return a;
}

SampledAction sample_action(const PolicyNet& net, const PolicyNet::Out& out, Rng& rng,
                            bool deterministic) {
  SampledAction s;
  s.raw.resize(net.act_dim);
  const double* ls = net.log_std(net.ps);
  for (std::size_t i = 0; i < net.act_dim; ++i) {
    s.raw[i] = deterministic ? out.mean[i] : out.mean[i] + std::exp(ls[i]) * rng.normal();
  }
  if (net.has_clamp) {
    const double p = sigmoid(out.clamp_logit);
    s.clamp = deterministic ? p > 0.5 : rng.bernoulli(p);
  }
  s.logp = action_logprob(net, out, s.raw, s.clamp);
  s.value = out.value;
  s.action = to_env_action(net, s.raw.data(), s.clamp);
  return s;
}

double action_logprob(const PolicyNet& net, const PolicyNet::Out& out,
                      const std::vector<double>& raw, bool clamp) {
  double lp = gaussian_logprob(out.mean, net.log_std(net.ps), raw.data(), net.act_dim);
  if (net.has_clamp) lp += bernoulli_logprob(out.clamp_logit, clamp);
  return lp;
}

double action_entropy(const PolicyNet& net, const PolicyNet::Out& out) {
  double h = gaussian_entropy(net.log_std(net.ps), net.act_dim);
  if (net.has_clamp) h += bernoulli_entropy(out.clamp_logit);
  return h;
}

// ---- checkpointing -----------------------------------------------------------

void PolicyNet::save(const std::string& path, long step) const {
  json j;
  j["format_version"] = 1;
  j["kind"] = expert_name(kind);
  j["step"] = step;
  j["arch"] = {{"lidar", obs_spec.lidar},
               {"image", obs_spec.image},
               {"vec", obs_spec.vec},
               {"act_dim", act_dim},
               {"has_clamp", has_clamp},
               {"hidden", hidden_},
               {"param_count", ps.size()}};
  j["params"] = json::array();
  for (const auto& s : ps.slices()) {
    json js;
    js["name"] = s.name;
    js["shape"] = s.shape;
    js["values"] = std::vector<double>(ps.values().begin() + s.offset,
                                       ps.values().begin() + s.offset + s.count);
    j["params"].push_back(std::move(js));
  }
  j["adam"] = {{"m", adam.m}, {"v", adam.v}, {"k", adam.k}};
  std::ofstream f(path);
  if (!f) throw NnError("cannot write checkpoint: " + path);
  f << j.dump() << "\n";
}

long PolicyNet::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw NnError("cannot open checkpoint: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw NnError(std::string("corrupt checkpoint: ") + e.what());
  }
  if (j.value("format_version", 0) != 1) throw NnError("unsupported checkpoint version");
  if (j.at("kind").get<std::string>() != expert_name(kind))
    throw NnError("checkpoint expert kind mismatch");
  if (j.at("arch").at("param_count").get<std::size_t>() != ps.size())
    throw NnError("checkpoint architecture mismatch");
  for (const auto& js : j.at("params")) {
    const std::string name = js.at("name");
    bool found = false;
    for (const auto& s : ps.slices()) {
      if (s.name != name) continue;
      const auto vals = js.at("values").get<std::vector<double>>();
      if (vals.size() != s.count) throw NnError("checkpoint slice size mismatch: " + name);
      std::copy(vals.begin(), vals.end(), ps.values().begin() + s.offset);
      found = true;
      break;
    }
    if (!found) throw NnError("unknown checkpoint slice: " + name);
  }
  adam.m = j.at("adam").at("m").get<std::vector<double>>();
  adam.v = j.at("adam").at("v").get<std::vector<double>>();
  adam.k = j.at("adam").at("k").get<long>();
  if (adam.m.size() != ps.size() || adam.v.size() != ps.size())
    throw NnError("checkpoint adam state mismatch");
  return j.value("step", 0L);
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<ExpertKind, std::string>>& entries) {
  json j;
  j["format_version"] = 1;
  j["experts"] = json::object();
  for (const auto& [k, p] : entries) j["experts"][expert_name(k)] = p;
  std::ofstream f(path);
  if (!f) throw NnError("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

std::vector<std::pair<ExpertKind, std::string>> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw NnError("cannot open manifest: " + path);
  json j;
  f >> j;
  std::vector<std::pair<ExpertKind, std::string>> out;
  for (const auto& [k, v] : j.at("experts").items())
    out.emplace_back(expert_from_name(k), v.get<std::string>());
  return out;
}

}  // namespace hmer

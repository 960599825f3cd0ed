#include "hmer/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace hmer {

using nlohmann::json;

namespace {

json range_to_json(const Range& r) { return json::array({r.lo, r.hi}); }
Range range_from_json(const json& j) { return Range{j.at(0), j.at(1)}; }

json pose_to_json(const Pose2D& p) { return json::array({p.x, p.y, p.theta}); }
Pose2D pose_from_json(const json& j) { return Pose2D{j.at(0), j.at(1), j.at(2)}; }

json zone_to_json(const ZoneSpec& z) {
  return json{{"pose", pose_to_json(z.pose)}, {"tolerance", z.tolerance}};
}
ZoneSpec zone_from_json(const json& j) {
  return ZoneSpec{pose_from_json(j.at("pose")), j.at("tolerance")};
}

json aabb_to_json(const Aabb& a) { return json::array({a.xmin, a.ymin, a.xmax, a.ymax}); }
Aabb aabb_from_json(const json& j) { return Aabb{j.at(0), j.at(1), j.at(2), j.at(3)}; }

template <typename T, size_t N>
json arr_to_json(const std::array<T, N>& a) {
  json j = json::array();
  for (const auto& v : a) j.push_back(v);
  return j;
}

template <typename T, size_t N>
std::array<T, N> arr_from_json(const json& j) {
  std::array<T, N> a{};
  for (size_t i = 0; i < N; ++i) a[i] = j.at(i);
  return a;
}

std::string subtask_name(SubTask t) {
  switch (t) {
    case SubTask::Full: return "full";
    case SubTask::Pick: return "pick";
    case SubTask::Place: return "place";
  }
  return "full";
}

SubTask subtask_from_name(const std::string& s) {
  if (s == "full") return SubTask::Full;
  if (s == "pick") return SubTask::Pick;
  if (s == "place") return SubTask::Place;
  throw ConfigError("unknown subtask: " + s);
}

}  // namespace

void EnvConfig::validate() const {
  auto check_range = [](const Range& r, const char* name) {
    if (r.lo > r.hi) throw ConfigError(std::string("inverted randomization range: ") + name);
  };
  check_range(rand.cargo_mass, "cargo_mass");
  check_range(rand.friction, "friction");
  if (rand.layout_jitter < 0.0) throw ConfigError("negative layout_jitter");
  if (control_dt <= 0.0) throw ConfigError("control_dt must be positive");
  if (t_max <= 0 || t_max_pick <= 0 || t_max_place <= 0) throw ConfigError("t_max must be positive");
  if (lidar.n_scan <= 0) throw ConfigError("n_scan must be positive");
  if (lidar.r_max <= 0.0) throw ConfigError("r_max must be positive");
  if (image.size <= 0 || image.window <= 0.0) throw ConfigError("bad image spec");
  // Zones must not sit inside rack geometry.
  for (const auto& rack : racks) {
    for (const auto* z : {&start_zone, &transfer_zone, &goal_slot}) {
      if (rack.contains(z->pose.position()))
        throw ConfigError("zone center overlaps rack geometry");
    }
    if (rack.contains(cargo_spawn_center)) throw ConfigError("cargo spawn overlaps rack");
  }
}

void RewardConfig::validate() const {
  if (eps_stab <= 0.0) throw ConfigError("eps_stab must be positive");
  if (lambda_prec <= 0.0) throw ConfigError("lambda_prec must be positive");
  if (norm_mode != "variance_only" && norm_mode != "mean_var" && norm_mode != "off")
    throw ConfigError("norm_mode must be variance_only|mean_var|off");
}

void Config::validate() const {
  env.validate();
  rewards.validate();
  if (bc.epochs < 1) throw ConfigError("bc.epochs must be >= 1");
  if (ppo.gamma <= 0.0 || ppo.gamma > 1.0) throw ConfigError("gamma out of (0,1]");
  if (ppo.gae_lambda < 0.0 || ppo.gae_lambda > 1.0) throw ConfigError("gae_lambda out of [0,1]");
  if (ppo.clip_eps <= 0.0) throw ConfigError("clip_eps must be positive");
  if (planner.max_retries < 0) throw ConfigError("max_retries must be >= 0");
}

Config default_config() { return Config{}; }

std::string config_to_json(const Config& cfg) {
  const auto& e = cfg.env;
  json j;
  j["env"] = {
      {"arena", {{"width", e.arena_w}, {"height", e.arena_h}, {"wall_thickness", e.wall_thickness}}},
      {"control_dt", e.control_dt},
      {"t_max", e.t_max},
      {"t_max_pick", e.t_max_pick},
      {"t_max_place", e.t_max_place},
      {"forklift",
       {{"length", e.forklift.length},
        {"width", e.forklift.width},
        {"fork_offset", e.forklift.fork_offset},
        {"v_max", e.forklift.v_max},
        {"omega_max", e.forklift.omega_max},
        {"hdot_max", e.forklift.hdot_max},
        {"h_max", e.forklift.h_max}}},
      {"clamp",
       {{"d_clamp", e.clamp.d_clamp},
        {"theta_clamp", e.clamp.theta_clamp},
        {"h_center", e.clamp.h_center},
        {"h_band", e.clamp.h_band}}},
      {"lidar", {{"n_scan", e.lidar.n_scan}, {"r_max", e.lidar.r_max}}},
      {"image",
       {{"size", e.image.size},
        {"window", e.image.window},
        {"anchor_row_frac", e.image.anchor_row_frac}}},
      {"dyn_obstacles",
       {{"count", e.dyn.count},
        {"radius", e.dyn.radius},
        {"speed", e.dyn.speed},
        {"region", aabb_to_json(e.dyn.region)}}},
      {"randomization",
       {{"cargo_mass", range_to_json(e.rand.cargo_mass)},
        {"friction", range_to_json(e.rand.friction)},
        {"layout_jitter", e.rand.layout_jitter}}},
      {"start_zone", zone_to_json(e.start_zone)},
      {"transfer_zone", zone_to_json(e.transfer_zone)},
      {"goal_slot", zone_to_json(e.goal_slot)},
      {"place_tolerance", e.place_tolerance},
      {"cargo",
       {{"spawn_center", json::array({e.cargo_spawn_center.x, e.cargo_spawn_center.y})},
        {"spawn_radius", e.cargo_spawn_radius},
        {"half_len", e.cargo_half_len},
        {"half_wid", e.cargo_half_wid}}},
      {"racks", json::array()},
      {"subtask", subtask_name(e.subtask)},
      {"trajectory_dump", e.trajectory_dump},
  };
  for (const auto& r : e.racks) j["env"]["racks"].push_back(aabb_to_json(r));

  const auto& r = cfg.rewards;
  j["rewards"] = {
      {"lambda_prec", r.lambda_prec}, {"eps_stab", r.eps_stab},
      {"r_success", r.r_success},     {"w_ang", r.w_ang},
      {"w_prog", r.w_prog},           {"w_smooth", r.w_smooth},
      {"w_coll", r.w_coll},           {"w_time", r.w_time},
      {"w_dist", r.w_dist},           {"w_align", r.w_align},
      {"pick_bonus", r.pick_bonus},   {"clamp_fail_penalty", r.clamp_fail_penalty},
      {"norm_mode", r.norm_mode},
  };

  j["planner"] = {{"max_retries", cfg.planner.max_retries}};

  const auto& n = cfg.net;
  j["net"] = {
      {"lidar_kernels", arr_to_json(n.lidar_kernels)},
      {"lidar_strides", arr_to_json(n.lidar_strides)},
      {"lidar_channels", arr_to_json(n.lidar_channels)},
      {"img_kernels", arr_to_json(n.img_kernels)},
      {"img_strides", arr_to_json(n.img_strides)},
      {"img_channels", arr_to_json(n.img_channels)},
      {"hidden", n.hidden},
      {"init_log_std", n.init_log_std},
      {"clamp_logit_bias", n.clamp_logit_bias},
  };

  j["bc"] = {{"lr", cfg.bc.lr}, {"epochs", cfg.bc.epochs}, {"minibatch", cfg.bc.minibatch}};

  const auto& p = cfg.ppo;
  j["ppo"] = {
      {"gamma", p.gamma},
      {"gae_lambda", p.gae_lambda},
      {"clip_eps", p.clip_eps},
      {"entropy_coef", p.entropy_coef},
      {"value_coef", p.value_coef},
      {"batch", p.batch},
      {"minibatch", p.minibatch},
      {"epochs", p.epochs},
      {"lr", p.lr},
      {"n_env", p.n_env},
      {"total_steps", p.total_steps},
      {"eval_interval", p.eval_interval},
      {"eval_episodes", p.eval_episodes},
      {"place_train_r_success", p.place_train_r_success},
  };

  j["eval"] = {{"n_episodes", cfg.eval.n_episodes},
               {"bootstrap_samples", cfg.eval.bootstrap_samples}};
  return j.dump(2);
}

Config config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  Config cfg;  // start from defaults; every present key overrides
  try {
    if (j.contains("env")) {
      const auto& je = j["env"];
      auto& e = cfg.env;
      if (je.contains("arena")) {
        e.arena_w = je["arena"].value("width", e.arena_w);
        e.arena_h = je["arena"].value("height", e.arena_h);
        e.wall_thickness = je["arena"].value("wall_thickness", e.wall_thickness);
      }
      e.control_dt = je.value("control_dt", e.control_dt);
      e.t_max = je.value("t_max", e.t_max);
      e.t_max_pick = je.value("t_max_pick", e.t_max_pick);
      e.t_max_place = je.value("t_max_place", e.t_max_place);
      if (je.contains("forklift")) {
        const auto& f = je["forklift"];
        e.forklift.length = f.value("length", e.forklift.length);
        e.forklift.width = f.value("width", e.forklift.width);
        e.forklift.fork_offset = f.value("fork_offset", e.forklift.fork_offset);
        e.forklift.v_max = f.value("v_max", e.forklift.v_max);
        e.forklift.omega_max = f.value("omega_max", e.forklift.omega_max);
        e.forklift.hdot_max = f.value("hdot_max", e.forklift.hdot_max);
        e.forklift.h_max = f.value("h_max", e.forklift.h_max);
      }
      if (je.contains("clamp")) {
        const auto& c = je["clamp"];
        e.clamp.d_clamp = c.value("d_clamp", e.clamp.d_clamp);
        e.clamp.theta_clamp = c.value("theta_clamp", e.clamp.theta_clamp);
        e.clamp.h_center = c.value("h_center", e.clamp.h_center);
        e.clamp.h_band = c.value("h_band", e.clamp.h_band);
      }
      if (je.contains("lidar")) {
        e.lidar.n_scan = je["lidar"].value("n_scan", e.lidar.n_scan);
        e.lidar.r_max = je["lidar"].value("r_max", e.lidar.r_max);
      }
      if (je.contains("image")) {
        e.image.size = je["image"].value("size", e.image.size);
        e.image.window = je["image"].value("window", e.image.window);
        e.image.anchor_row_frac = je["image"].value("anchor_row_frac", e.image.anchor_row_frac);
      }
      if (je.contains("dyn_obstacles")) {
        const auto& d = je["dyn_obstacles"];
        e.dyn.count = d.value("count", e.dyn.count);
        e.dyn.radius = d.value("radius", e.dyn.radius);
        e.dyn.speed = d.value("speed", e.dyn.speed);
        if (d.contains("region")) e.dyn.region = aabb_from_json(d["region"]);
      }
      if (je.contains("randomization")) {
        const auto& rr = je["randomization"];
        if (rr.contains("cargo_mass")) e.rand.cargo_mass = range_from_json(rr["cargo_mass"]);
        if (rr.contains("friction")) e.rand.friction = range_from_json(rr["friction"]);
        e.rand.layout_jitter = rr.value("layout_jitter", e.rand.layout_jitter);
      }
      if (je.contains("start_zone")) e.start_zone = zone_from_json(je["start_zone"]);
      if (je.contains("transfer_zone")) e.transfer_zone = zone_from_json(je["transfer_zone"]);
      if (je.contains("goal_slot")) e.goal_slot = zone_from_json(je["goal_slot"]);
      e.place_tolerance = je.value("place_tolerance", e.place_tolerance);
      if (je.contains("cargo")) {
        const auto& c = je["cargo"];
        if (c.contains("spawn_center")) {
          e.cargo_spawn_center = {c["spawn_center"].at(0), c["spawn_center"].at(1)};
        }
        e.cargo_spawn_radius = c.value("spawn_radius", e.cargo_spawn_radius);
        e.cargo_half_len = c.value("half_len", e.cargo_half_len);
        e.cargo_half_wid = c.value("half_wid", e.cargo_half_wid);
      }
      if (je.contains("racks")) {
        e.racks.clear();
        for (const auto& r : je["racks"]) e.racks.push_back(aabb_from_json(r));
      }
      if (je.contains("subtask")) e.subtask = subtask_from_name(je["subtask"]);
      e.trajectory_dump = je.value("trajectory_dump", e.trajectory_dump);
    }
    if (j.contains("rewards")) {
      const auto& jr = j["rewards"];
      auto& r = cfg.rewards;
      r.lambda_prec = jr.value("lambda_prec", r.lambda_prec);
      r.eps_stab = jr.value("eps_stab", r.eps_stab);
      r.r_success = jr.value("r_success", r.r_success);
      r.w_ang = jr.value("w_ang", r.w_ang);
      r.w_prog = jr.value("w_prog", r.w_prog);
      r.w_smooth = jr.value("w_smooth", r.w_smooth);
      r.w_coll = jr.value("w_coll", r.w_coll);
      r.w_time = jr.value("w_time", r.w_time);
      r.w_dist = jr.value("w_dist", r.w_dist);
      r.w_align = jr.value("w_align", r.w_align);
      r.pick_bonus = jr.value("pick_bonus", r.pick_bonus);
      r.clamp_fail_penalty = jr.value("clamp_fail_penalty", r.clamp_fail_penalty);
      r.norm_mode = jr.value("norm_mode", r.norm_mode);
    }
    if (j.contains("planner"))
      cfg.planner.max_retries = j["planner"].value("max_retries", cfg.planner.max_retries);
    if (j.contains("net")) {
      const auto& jn = j["net"];
      auto& n = cfg.net;
      if (jn.contains("lidar_kernels")) n.lidar_kernels = arr_from_json<int, 3>(jn["lidar_kernels"]);
      if (jn.contains("lidar_strides")) n.lidar_strides = arr_from_json<int, 3>(jn["lidar_strides"]);
      if (jn.contains("lidar_channels")) n.lidar_channels = arr_from_json<int, 3>(jn["lidar_channels"]);
      if (jn.contains("img_kernels")) n.img_kernels = arr_from_json<int, 3>(jn["img_kernels"]);
      if (jn.contains("img_strides")) n.img_strides = arr_from_json<int, 3>(jn["img_strides"]);
      if (jn.contains("img_channels")) n.img_channels = arr_from_json<int, 3>(jn["img_channels"]);
      n.hidden = jn.value("hidden", n.hidden);
      n.init_log_std = jn.value("init_log_std", n.init_log_std);
      n.clamp_logit_bias = jn.value("clamp_logit_bias", n.clamp_logit_bias);
    }
    if (j.contains("bc")) {
      cfg.bc.lr = j["bc"].value("lr", cfg.bc.lr);
      cfg.bc.epochs = j["bc"].value("epochs", cfg.bc.epochs);
      cfg.bc.minibatch = j["bc"].value("minibatch", cfg.bc.minibatch);
    }
    if (j.contains("ppo")) {
      const auto& jp = j["ppo"];
      auto& p = cfg.ppo;
      p.gamma = jp.value("gamma", p.gamma);
      p.gae_lambda = jp.value("gae_lambda", p.gae_lambda);
      p.clip_eps = jp.value("clip_eps", p.clip_eps);
      p.entropy_coef = jp.value("entropy_coef", p.entropy_coef);
      p.value_coef = jp.value("value_coef", p.value_coef);
      p.batch = jp.value("batch", p.batch);
      p.minibatch = jp.value("minibatch", p.minibatch);
      p.epochs = jp.value("epochs", p.epochs);
      p.lr = jp.value("lr", p.lr);
      p.n_env = jp.value("n_env", p.n_env);
      p.total_steps = jp.value("total_steps", p.total_steps);
      p.eval_interval = jp.value("eval_interval", p.eval_interval);
      p.eval_episodes = jp.value("eval_episodes", p.eval_episodes);
      p.place_train_r_success = jp.value("place_train_r_success", p.place_train_r_success);
    }
    if (j.contains("eval")) {
      cfg.eval.n_episodes = j["eval"].value("n_episodes", cfg.eval.n_episodes);
      cfg.eval.bootstrap_samples = j["eval"].value("bootstrap_samples", cfg.eval.bootstrap_samples);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const Config& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config file: " + path);
  f << config_to_json(cfg) << "\n";
}

std::string config_hash(const Config& cfg) {
  const std::string dump = config_to_json(cfg);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace hmer

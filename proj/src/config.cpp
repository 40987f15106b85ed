#include "crawlrl/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace crawlrl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

std::vector<double> parse_list(const std::string& s) {
  std::istringstream is(s);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) out.push_back(parse_double(tok));
  return out;
}

class Registry {
 public:
  std::vector<ConfigField> fields;

  void real(const std::string& key, double& ref, const std::string& doc) {
    fields.push_back({key, doc, [&ref] { return fmt(ref); }, [&ref](const std::string& s) { ref = parse_double(s); }});
  }
  template <typename Int>
  void integer(const std::string& key, Int& ref, const std::string& doc) {
    fields.push_back({key, doc, [&ref] { return std::to_string(ref); },
                      [&ref](const std::string& s) { ref = parse_int<Int>(s); }});
  }
  void flag(const std::string& key, bool& ref, const std::string& doc) {
    fields.push_back({key, doc, [&ref] { return std::string(ref ? "true" : "false"); },
                      [&ref](const std::string& s) { ref = parse_bool(s); }});
  }
  void vec4(const std::string& key, Eigen::Vector4d& ref, const std::string& doc) {
    fields.push_back({key, doc,
                      [&ref] {
                        std::string out;
                        for (int i = 0; i < 4; ++i) out += (i ? " " : "") + fmt(ref(i));
                        return out;
                      },
                      [&ref](const std::string& s) {
                        const auto v = parse_list(s);
                        if (v.size() != 4) throw ConfigError("expected 4 values");
                        ref = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
                      }});
  }
  void mat4(const std::string& key, Eigen::Matrix4d& ref, const std::string& doc) {
    fields.push_back({key, doc,
                      [&ref] {
                        std::string out;
                        for (int i = 0; i < 16; ++i) out += (i ? " " : "") + fmt(ref(i / 4, i % 4));
                        return out;
                      },
                      [&ref](const std::string& s) {
                        const auto v = parse_list(s);
                        if (v.size() == 4) {
                          ref = Eigen::Vector4d(v[0], v[1], v[2], v[3]).asDiagonal();
                        } else if (v.size() == 16) {
                          for (int i = 0; i < 16; ++i) ref(i / 4, i % 4) = v[static_cast<size_t>(i)];
                        } else {
                          throw ConfigError("expected 4 (diagonal) or 16 (row-major) values");
                        }
                      }});
  }
  void integrator(const std::string& key, Integrator& ref, const std::string& doc) {
    fields.push_back({key, doc, [&ref] { return std::string(ref == Integrator::kRk4 ? "rk4" : "euler"); },
                      [&ref](const std::string& s) {
                        if (s == "rk4") {
                          ref = Integrator::kRk4;
                        } else if (s == "euler") {
                          ref = Integrator::kEuler;
                        } else {
                          throw ConfigError("integrator must be rk4 or euler");
                        }
                      }});
  }
};

std::map<std::string, std::vector<std::pair<std::string, std::string>>> presets() {
  return {
      {"desk", {}},
      {"smoke",
       {{"train.iterations", "5"},
        {"train.gradient_steps", "10"},
        {"train.collect_windows", "20"},
        {"train.batch", "8"},
        {"train.sequence_length", "16"},
        {"train.imagine_starts", "32"},
        {"train.warmup_episodes", "1"},
        {"train.checkpoint_every", "0"},
        {"model.deter", "64"},
        {"model.hidden", "32"},
        {"model.reward_hidden", "32"},
        {"agent.actor_hidden", "32"},
        {"agent.critic_hidden", "32"}}},
      {"full",
       {{"train.iterations", "1000"},
        {"train.gradient_steps", "100"},
        {"train.checkpoint_every", "100"},
        {"model.deter", "512"}}},
  };
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (gradient_steps < 0) throw ConfigError("train.gradient_steps must be >= 0");
  if (collect_windows < 0) throw ConfigError("train.collect_windows must be >= 0");
  if (action_window < 1) throw ConfigError("train.action_window must be >= 1");
  if (horizon < 1) throw ConfigError("train.horizon must be >= 1");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (sequence_length < 1) throw ConfigError("train.sequence_length must be >= 1");
  if (imagine_starts < 1) throw ConfigError("train.imagine_starts must be >= 1");
  if (warmup_episodes < 0) throw ConfigError("train.warmup_episodes must be >= 0");
  if (replay_capacity < sequence_length) throw ConfigError("train.replay_capacity must hold one sequence");
  if (eval_every < 0 || eval_episodes < 1 || checkpoint_every < 0) throw ConfigError("train: bad cadence settings");
}

void RunConfig::validate() const {
  try {
    env.physics.validate();
    model.validate();
    agent.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train.validate();
  if (model.action_dim != agent.bounds.dim()) {
    throw ConfigError("model.action_dim must equal 2 * agent.harmonics + 2");
  }
  if (!(env.episode_length > 0.0)) throw ConfigError("env.episode_length must be positive");
}

std::vector<ConfigField> config_fields(RunConfig& cfg) {
  Registry r;
  PhysicalParams& p = cfg.env.physics;
  r.real("env.m1", p.m1, "base mass, kg");
  r.real("env.m2", p.m2, "head mass, kg");
  r.real("env.k", p.k, "spring stiffness, N/m");
  r.real("env.b", p.b, "damping, N s/m");
  r.real("env.F_sigma1", p.F_sigma1, "base friction amplitude, N");
  r.real("env.F_sigma2", p.F_sigma2, "head friction amplitude, N");
  r.real("env.B_u", p.B_u, "actuator gain");
  r.real("env.N_f", p.N_f, "friction asymmetry, > 1");
  r.real("env.eps_f", p.eps_f, "friction sigmoid width, m/s");
  r.mat4("env.noise_G", p.noise_G, "diffusion on (s1, w1, s2, w2): 4 diagonal or 16 row-major values");
  r.real("env.imu_bias", p.imu_bias, "accelerometer bias, m/s^2");
  r.real("env.sigma_imu", p.sigma_imu, "accelerometer noise stddev, m/s^2");
  r.real("env.sigma_tof", p.sigma_tof, "range sensor noise stddev, m");
  r.real("env.X_obj1", p.X_obj1, "range reference for the base, m");
  r.real("env.X_obj2", p.X_obj2, "range reference for the head, m");
  r.real("env.dt", p.dt, "integration step, s");
  r.integrator("env.integrator", cfg.env.integrator, "rk4 or euler");
  r.flag("env.noisy", cfg.env.noisy, "inject process noise");
  r.real("env.episode_length", cfg.env.episode_length, "episode time limit, s");
  r.real("env.initial_strain", cfg.env.initial_strain, "x2 - x1 at reset, m");
  r.real("env.goal", cfg.env.goal, "centre-of-mass displacement that ends an episode successfully, m");

  RewardWeights& w = cfg.env.reward;
  r.real("reward.k1", w.k1, "weight on centre-of-mass progress");
  r.real("reward.k2", w.k2, "weight on positive centre-of-mass velocity");
  r.real("reward.k3", w.k3, "control magnitude penalty");
  r.real("reward.k4", w.k4, "first-difference control penalty");
  r.real("reward.k5", w.k5, "second-difference control penalty");
  r.real("reward.k6", w.k6, "compression penalty");
  r.real("reward.eps", w.eps, "strain below which compression is penalized, m");
  r.real("reward.success", w.success_bonus, "terminal reward on success");
  r.real("reward.failure", w.failure_penalty, "terminal reward on timeout");

  WorldModelConfig& m = cfg.model;
  r.integer("model.deter", m.deter, "recurrent state width");
  r.integer("model.stoch", m.stoch, "stochastic code width");
  r.integer("model.code", m.code, "per-sensor encoder code width");
  r.integer("model.action_dim", m.action_dim, "gait action width");
  r.integer("model.hidden", m.hidden, "encoder, transition and decoder width");
  r.integer("model.reward_hidden", m.reward_hidden, "reward decoder width");
  r.integer("model.prior_layers", m.prior_layers, "hidden layers in the prior head");
  r.integer("model.posterior_layers", m.posterior_layers, "hidden layers in the posterior head");
  r.integer("model.encoder_layers", m.encoder_layers, "hidden layers per sensor encoder");
  r.integer("model.decoder_layers", m.decoder_layers, "hidden layers in the observation decoder");
  r.integer("model.reward_layers", m.reward_layers, "hidden layers in the reward decoder");
  r.real("model.beta_dyn", m.beta_dyn, "weight on the dynamics KL term");
  r.real("model.beta_rep", m.beta_rep, "weight on the representation KL term");
  r.real("model.beta_rec", m.beta_rec, "weight on the reconstruction term");
  r.real("model.free_nats", m.free_nats, "KL floor, nats");
  r.real("model.lr", m.lr, "world model learning rate");
  r.vec4("model.obs_offset", m.obs_offset, "observation shift before encoding");
  r.vec4("model.obs_scale", m.obs_scale, "observation scale before encoding");

  AgentConfig& a = cfg.agent;
  r.integer("agent.harmonics", a.bounds.harmonics, "Fourier harmonics per gait");
  r.real("agent.a_max", a.bounds.a_max, "amplitude bound");
  r.real("agent.omega_min", a.bounds.omega_min, "gait frequency lower bound, rad/s");
  r.real("agent.omega_max", a.bounds.omega_max, "gait frequency upper bound, rad/s");
  r.real("agent.u_max", a.bounds.u_max, "control clamp");
  r.integer("agent.actor_hidden", a.actor_hidden, "actor width");
  r.integer("agent.actor_layers", a.actor_layers, "actor hidden layers");
  r.integer("agent.critic_hidden", a.critic_hidden, "critic width");
  r.integer("agent.critic_layers", a.critic_layers, "critic hidden layers");
  r.real("agent.actor_lr", a.actor_lr, "actor learning rate");
  r.real("agent.critic_lr", a.critic_lr, "critic learning rate");
  r.real("agent.gamma", a.gamma, "discount per action window");
  r.real("agent.lambda", a.lambda, "return mixing");
  r.real("agent.entropy_scale", a.entropy_scale, "entropy weight");
  r.flag("agent.entropy_bonus", a.entropy_bonus, "true subtracts the entropy term from the actor loss");
  r.real("agent.return_decay", a.return_decay, "EMA decay of the return spread");

  TrainConfig& t = cfg.train;
  r.integer("train.iterations", t.iterations, "training iterations");
  r.integer("train.gradient_steps", t.gradient_steps, "model and agent updates per iteration");
  r.integer("train.collect_windows", t.collect_windows, "action windows collected per iteration");
  r.integer("train.action_window", t.action_window, "environment steps per gait action");
  r.integer("train.horizon", t.horizon, "imagination horizon, action windows");
  r.integer("train.batch", t.batch, "sequences per model update");
  r.integer("train.sequence_length", t.sequence_length, "records per sequence");
  r.integer("train.imagine_starts", t.imagine_starts, "rollout start states per agent update");
  r.integer("train.warmup_episodes", t.warmup_episodes, "random-gait episodes before the first update");
  r.integer("train.replay_capacity", t.replay_capacity, "replay capacity, records");
  r.integer("train.seed", t.seed, "master seed");
  r.integer("train.eval_every", t.eval_every, "evaluation cadence, iterations; 0 disables");
  r.integer("train.eval_episodes", t.eval_episodes, "episodes per evaluation");
  r.integer("train.checkpoint_every", t.checkpoint_every, "checkpoint cadence, iterations; 0 keeps the final only");
  return std::move(r.fields);
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : presets()) names.push_back(name);
  return names;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  const auto all = presets();
  const auto it = all.find(name);
  if (it == all.end()) throw ConfigError("unknown preset '" + name + "'");
  cfg = RunConfig{};
  for (const auto& [k, v] : it->second) apply_override(cfg, k + "=" + v);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key == "preset") {
    apply_preset(cfg, value);
    return;
  }
  for (auto& f : config_fields(cfg)) {
    if (f.key != key) continue;
    try {
      f.set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
    return;
  }
  throw ConfigError("unknown key '" + key + "'");
}

void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::pair<int, std::string>> assignments;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, line.find('=')));
    if (key == "preset") {
      assignments.insert(assignments.begin(), {lineno, line});
    } else {
      assignments.emplace_back(lineno, line);
    }
  }
  for (const auto& [n, a] : assignments) {
    try {
      apply_override(cfg, a);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void apply_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigFileMissing("config file not found: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  apply_text(cfg, ss.str(), path.string());
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_file(cfg, path);
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  for (const auto& f : config_fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

std::string config_reference() {
  RunConfig cfg;
  std::string out = "# Defaults (preset desk). Presets:";
  for (const auto& n : preset_names()) out += " " + n;
  out += "\n";
  for (const auto& f : config_fields(cfg)) out += "\n# " + f.doc + "\n" + f.key + " = " + f.get() + "\n";
  return out;
}

}  // namespace crawlrl

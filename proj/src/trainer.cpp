#include "crawlrl/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace crawlrl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Matrix obs_row(const Observation& o) {
  Matrix m(1, 4);
  m << o.alpha1, o.alpha2, o.X1, o.X2;
  return m;
}

Matrix action_row(const std::vector<double>& a) {
  Matrix m(1, static_cast<Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i) m(0, static_cast<Index>(i)) = a[i];
  return m;
}

// Posterior filtering of a single environment stream plus actor queries.
class FilteredPolicy {
 public:
  FilteredPolicy(const WorldModel& model, const Actor& actor, bool deterministic)
      : model_(model), actor_(actor), deterministic_(deterministic) {}

  void reset(const Observation& obs, Rng& rng) {
    NoGradGuard no_grad;
    const std::vector<double> zero(static_cast<size_t>(actor_.action_dim()), 0.0);
    state_ = model_.observe_step(model_.initial_state(1), Tensor(action_row(zero)), obs_row(obs), rng, deterministic_);
  }

  std::vector<double> act(Rng& rng) {
    NoGradGuard no_grad;
    const PolicyOutput out = actor_.forward(latent_features(state_), rng, deterministic_);
    const Matrix& a = out.action.value();
    return {a.data(), a.data() + a.size()};
  }

  void observe(const std::vector<double>& action, const Observation& obs, Rng& rng) {
    NoGradGuard no_grad;
    state_ = model_.observe_step(state_, Tensor(action_row(action)), obs_row(obs), rng, deterministic_);
  }

 private:
  const WorldModel& model_;
  const Actor& actor_;
  bool deterministic_;
  LatentState state_;
};

struct WindowResult {
  double reward = 0.0;
  Observation obs;
  bool done = false;
  int64_t steps = 0;
};

WindowResult run_window(CrawlerEnv& env, GaitGenerator& gen, const GaitAction& gait, int64_t window,
                        const ActionBounds& bounds, std::vector<TrajectoryRow>* rows) {
  WindowResult out;
  const double dt = env.config().physics.dt;
  for (int64_t i = 0; i < window && !env.done(); ++i) {
    const EnvStep s = env.advance(gen.next(gait, dt, bounds));
    out.reward += s.reward.total;
    out.obs = s.obs;
    ++out.steps;
    if (rows != nullptr) rows->push_back(make_row(s, env.config().physics));
  }
  out.done = env.done();
  return out;
}

double body_s1(const CrawlerEnv& env) { return to_body(env.state().world(), env.config().physics)(0); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_num(const std::string& s) {
  if (s == "nan" || s == "-nan") return kNaN;
  return std::stod(s);
}

std::vector<std::map<std::string, double>> read_table(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty file: " + path.string());
  const auto header = split_csv(line);
  std::vector<std::map<std::string, double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw std::runtime_error("malformed row in " + path.string());
    std::map<std::string, double> row;
    for (size_t i = 0; i < cells.size(); ++i) row[header[i]] = parse_num(cells[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

constexpr const char* kEpisodesHeader = "iteration,episode,return,success,duration,windows,final_s1";

std::string format_episode(const EpisodeSummary& e) {
  return std::to_string(e.iteration) + "," + std::to_string(e.episode) + "," + num(e.total_return) + "," +
         (e.success ? "1" : "0") + "," + num(e.duration) + "," + std::to_string(e.windows) + "," + num(e.final_s1);
}

}  // namespace

uint64_t derive_seed(uint64_t master, uint64_t stream) {
  // splitmix64 finalizer over (master, stream)
  uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string metrics_header() {
  return "iteration,env_steps,episodes,episode_return,success_rate,wm_loss,l1,l2,l3,kl,clamp_fraction,actor_loss,"
         "critic_loss,scale,imagined_return,entropy";
}

std::string format_metrics(const MetricsRow& r) {
  return std::to_string(r.iteration) + "," + std::to_string(r.env_steps) + "," + std::to_string(r.episodes) + "," +
         num(r.episode_return) + "," + num(r.success_rate) + "," + num(r.wm_loss) + "," + num(r.l1) + "," +
         num(r.l2) + "," + num(r.l3) + "," + num(r.kl) + "," + num(r.clamp_fraction) + "," + num(r.actor_loss) +
         "," + num(r.critic_loss) + "," + num(r.scale) + "," + num(r.imagined_return) + "," + num(r.entropy);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::vector<MetricsRow> out;
  for (auto& m : read_table(path)) {
    MetricsRow r;
    r.iteration = static_cast<int64_t>(m.at("iteration"));
    r.env_steps = static_cast<int64_t>(m.at("env_steps"));
    r.episodes = static_cast<int64_t>(m.at("episodes"));
    r.episode_return = m.at("episode_return");
    r.success_rate = m.at("success_rate");
    r.wm_loss = m.at("wm_loss");
    r.l1 = m.at("l1");
    r.l2 = m.at("l2");
    r.l3 = m.at("l3");
    r.kl = m.at("kl");
    r.clamp_fraction = m.at("clamp_fraction");
    r.actor_loss = m.at("actor_loss");
    r.critic_loss = m.at("critic_loss");
    r.scale = m.at("scale");
    r.imagined_return = m.at("imagined_return");
    r.entropy = m.at("entropy");
    out.push_back(r);
  }
  return out;
}

std::vector<EpisodeSummary> read_episodes_csv(const std::filesystem::path& path) {
  std::vector<EpisodeSummary> out;
  for (auto& m : read_table(path)) {
    EpisodeSummary e;
    e.iteration = static_cast<int64_t>(m.at("iteration"));
    e.episode = static_cast<int64_t>(m.at("episode"));
    e.total_return = m.at("return");
    e.success = m.at("success") != 0.0;
    e.duration = m.at("duration");
    e.windows = static_cast<int64_t>(m.at("windows"));
    e.final_s1 = m.at("final_s1");
    out.push_back(e);
  }
  return out;
}

EvalResult evaluate_policy(const WorldModel& model, const Agent& agent, const RunConfig& cfg, int64_t episodes,
                           bool deterministic, uint64_t env_seed, bool keep_rows) {
  CrawlerEnv env(cfg.env, env_seed);
  Rng rng(derive_seed(env_seed, 7));
  FilteredPolicy policy(model, agent.actor(), deterministic);
  const ActionBounds& bounds = cfg.agent.bounds;
  EvalResult result;
  for (int64_t e = 0; e < episodes; ++e) {
    EvalEpisode ep;
    Observation obs = env.reset();
    GaitGenerator gen;
    if (keep_rows) ep.rows.push_back(make_row(env.state(), obs, 0.0, 0.0, cfg.env.physics));
    policy.reset(obs, rng);
    while (!env.done()) {
      const std::vector<double> a = policy.act(rng);
      const WindowResult w = run_window(env, gen, GaitAction::from_normalized(a, bounds), cfg.train.action_window,
                                        bounds, keep_rows ? &ep.rows : nullptr);
      ep.total_return += w.reward;
      if (!w.done) policy.observe(a, w.obs, rng);
    }
    ep.duration = env.state().t;
    ep.final_s1 = body_s1(env);
    ep.success = ep.final_s1 >= cfg.env.goal;
    if (ep.success) result.times_to_target.push_back(ep.duration);
    result.mean_return += ep.total_return / static_cast<double>(episodes);
    result.success_rate += (ep.success ? 1.0 : 0.0) / static_cast<double>(episodes);
    result.episodes.push_back(std::move(ep));
  }
  return result;
}

RolloutResult rollout_gait(const EnvConfig& env_cfg, const GaitAction& gait, const ActionBounds& bounds,
                           double duration, uint64_t seed) {
  if (!(duration >= 0.0)) throw std::invalid_argument("rollout: duration must be >= 0");
  EnvConfig cfg = env_cfg;
  cfg.goal = std::numeric_limits<double>::infinity();
  cfg.episode_length = duration + 1.0;
  CrawlerEnv env(cfg, seed);
  env.reset();
  GaitGenerator gen;
  RolloutResult out;
  const double s1_0 = body_s1(env);
  const auto steps = static_cast<int64_t>(std::llround(duration / cfg.physics.dt));
  out.rows.reserve(static_cast<size_t>(steps));
  for (int64_t i = 0; i < steps; ++i) {
    const EnvStep s = env.advance(gen.next(gait, cfg.physics.dt, bounds));
    out.rows.push_back(make_row(s, cfg.physics));
    if (!out.reached_goal && out.rows.back().s1 >= env_cfg.goal) {
      out.reached_goal = true;
      out.time_to_goal = s.state.t;
    }
  }
  out.displacement = body_s1(env) - s1_0;
  return out;
}

std::vector<GridPoint> grid_search(const EnvConfig& env, const ActionBounds& bounds, const std::vector<double>& a1s,
                                   const std::vector<double>& omegas, double duration, uint64_t seed) {
  std::vector<GridPoint> out;
  for (double a1 : a1s) {
    for (double w : omegas) {
      GaitAction g;
      g.a.assign(static_cast<size_t>(bounds.harmonics) + 1, 0.0);
      g.b.assign(static_cast<size_t>(bounds.harmonics), 0.0);
      if (bounds.harmonics >= 1) g.a[1] = a1;
      g.omega = w;
      GridPoint p{a1, w, rollout_gait(env, g, bounds, duration, seed)};
      p.result.rows.clear();
      p.result.rows.shrink_to_fit();
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<double> moving_average(const std::vector<double>& values, size_t window) {
  if (window == 0) throw std::invalid_argument("moving_average: window must be positive");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

LearningProgress learning_progress(const std::vector<EpisodeSummary>& episodes, int64_t iterations, double fraction,
                                   size_t window) {
  std::vector<double> returns;
  std::vector<int64_t> iters;
  for (const auto& e : episodes) {
    if (e.iteration < 1) continue;
    returns.push_back(e.total_return);
    iters.push_back(e.iteration);
  }
  const std::vector<double> ma = moving_average(returns, window);
  const auto span = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(fraction * static_cast<double>(iterations))));
  LearningProgress p;
  for (size_t i = 0; i < ma.size(); ++i) {
    if (iters[i] <= span) {
      p.early += ma[i];
      ++p.early_count;
    }
    if (iters[i] > iterations - span) {
      p.late += ma[i];
      ++p.late_count;
    }
  }
  p.early = p.early_count ? p.early / static_cast<double>(p.early_count) : kNaN;
  p.late = p.late_count ? p.late / static_cast<double>(p.late_count) : kNaN;
  return p;
}

struct Trainer::Collector {
  CrawlerEnv env;
  GaitGenerator gen;
  FilteredPolicy policy;
  bool started = false;
  double episode_return = 0.0;
  int64_t windows = 0;

  Collector(const RunConfig& cfg, uint64_t seed, const WorldModel& model, const Actor& actor)
      : env(cfg.env, seed), policy(model, actor, false) {}
};

Trainer::Trainer(RunConfig cfg, std::optional<std::filesystem::path> out_dir)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)), buffer_(static_cast<size_t>(cfg_.train.replay_capacity)) {
  cfg_.validate();
  const uint64_t seed = cfg_.train.seed;
  model_ = std::make_unique<WorldModel>(cfg_.model, derive_seed(seed, 1));
  agent_ = std::make_unique<Agent>(cfg_.agent, cfg_.model.deter + cfg_.model.stoch, derive_seed(seed, 2));
  train_rng_.seed(derive_seed(seed, 3));
  policy_rng_.seed(derive_seed(seed, 4));
  collector_ = std::make_unique<Collector>(cfg_, derive_seed(seed, 5), *model_, agent_->actor());

  if (out_dir_) {
    std::filesystem::create_directories(*out_dir_ / "checkpoints");
    std::ofstream(*out_dir_ / "config.cfg") << dump_config(cfg_);
    metrics_out_.open(*out_dir_ / "metrics.csv");
    episodes_out_.open(*out_dir_ / "episodes.csv");
    timing_out_.open(*out_dir_ / "timing.csv");
    if (!metrics_out_ || !episodes_out_ || !timing_out_) {
      throw std::runtime_error("trainer: cannot write to " + out_dir_->string());
    }
    metrics_out_ << metrics_header() << '\n' << std::flush;
    episodes_out_ << kEpisodesHeader << '\n' << std::flush;
    timing_out_ << "iteration,seconds\n" << std::flush;
  }
}

Trainer::~Trainer() = default;

void Trainer::begin_episode() {
  Collector& c = *collector_;
  const Observation obs = c.env.reset();
  c.gen.reset();
  c.started = true;
  c.episode_return = 0.0;
  c.windows = 0;
  StepRecord r;
  r.obs = obs;
  r.action.assign(static_cast<size_t>(cfg_.agent.bounds.dim()), 0.0);
  buffer_.push(std::move(r));
  c.policy.reset(obs, policy_rng_);
}

void Trainer::log_episode(const EpisodeSummary& e) {
  episodes_.push_back(e);
  if (out_dir_) episodes_out_ << format_episode(e) << '\n' << std::flush;
}

std::vector<EpisodeSummary> Trainer::collect(int64_t windows, bool random) {
  Collector& c = *collector_;
  const ActionBounds& bounds = cfg_.agent.bounds;
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::vector<EpisodeSummary> finished;
  for (int64_t i = 0; i < windows; ++i) {
    if (!c.started) begin_episode();
    std::vector<double> action;
    if (random) {
      action.resize(static_cast<size_t>(bounds.dim()));
      for (double& a : action) a = uniform(policy_rng_);
    } else {
      action = c.policy.act(policy_rng_);
    }
    const WindowResult w = run_window(c.env, c.gen, GaitAction::from_normalized(action, bounds),
                                      cfg_.train.action_window, bounds, nullptr);
    env_steps_ += w.steps;
    c.episode_return += w.reward;
    ++c.windows;

    StepRecord r;
    r.obs = w.obs;
    r.action = action;
    r.reward = w.reward;
    r.done = w.done;
    r.t = c.env.state().t;
    buffer_.push(std::move(r));

    if (w.done) {
      EpisodeSummary e;
      e.iteration = iteration_;
      e.episode = static_cast<int64_t>(episodes_.size());
      e.total_return = c.episode_return;
      e.final_s1 = body_s1(c.env);
      e.success = e.final_s1 >= cfg_.env.goal;
      e.duration = c.env.state().t;
      e.windows = c.windows;
      log_episode(e);
      finished.push_back(e);
      c.started = false;
    } else {
      c.policy.observe(action, w.obs, policy_rng_);
    }
  }
  return finished;
}

void Trainer::warmup() {
  const auto L = static_cast<size_t>(cfg_.train.sequence_length);
  const size_t start = episodes_.size();
  constexpr size_t kMaxEpisodes = 10000;
  while (episodes_.size() - start < static_cast<size_t>(cfg_.train.warmup_episodes) || !buffer_.can_sample(L)) {
    if (episodes_.size() - start > kMaxEpisodes) {
      throw std::runtime_error("trainer: warmup produced no episode with " + std::to_string(L) + " records");
    }
    collect(1, true);
  }
  warmed_up_ = true;
}

MetricsRow Trainer::train_iteration() {
  if (!warmed_up_) throw std::logic_error("trainer: train_iteration before warmup");
  const auto t0 = std::chrono::steady_clock::now();
  ++iteration_;
  const std::vector<EpisodeSummary> finished = collect(cfg_.train.collect_windows, false);

  MetricsRow row;
  row.iteration = iteration_;
  const TrainConfig& tc = cfg_.train;
  const auto B = static_cast<size_t>(tc.batch);
  const auto L = static_cast<size_t>(tc.sequence_length);
  const double n = static_cast<double>(std::max<int64_t>(1, tc.gradient_steps));
  std::vector<size_t> cells(B * L);

  for (int64_t g = 0; g < tc.gradient_steps; ++g) {
    const SequenceBatch batch = to_batch(buffer_.sample_sequences(B, L, train_rng_));
    const FreeEnergyResult fe = model_->free_energy_loss(batch, train_rng_);
    fe.loss.backward();
    model_->params().adam_step(cfg_.model.lr);

    // Rollout starts: a uniform subset of the filtered (t, b) cells.
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    const size_t k = std::min(cells.size(), static_cast<size_t>(tc.imagine_starts));
    for (size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<size_t> pick(i, cells.size() - 1);
      std::swap(cells[i], cells[pick(train_rng_)]);
    }
    Matrix h(static_cast<Index>(k), cfg_.model.deter);
    Matrix s(static_cast<Index>(k), cfg_.model.stoch);
    for (size_t i = 0; i < k; ++i) {
      const size_t t = cells[i] / B;
      const auto b = static_cast<Index>(cells[i] % B);
      h.row(static_cast<Index>(i)) = fe.h[t].row(b);
      s.row(static_cast<Index>(i)) = fe.s[t].row(b);
    }
    const Tensor st(s);
    const LatentState start{Tensor(h), {st, Tensor(Matrix::Ones(s.rows(), s.cols()))}, st};
    const ImaginedTrajectory traj = imagine(*model_, agent_->actor(), start, tc.horizon, train_rng_);
    const AgentUpdate upd = agent_->train(traj);

    row.wm_loss += fe.loss.item() / n;
    row.l1 += fe.l1 / n;
    row.l2 += fe.l2 / n;
    row.l3 += fe.l3 / n;
    row.kl += fe.kl_raw / n;
    row.clamp_fraction += fe.clamp_fraction / n;
    row.actor_loss += upd.actor_loss / n;
    row.critic_loss += upd.critic_loss / n;
    row.imagined_return += upd.mean_return / n;
    row.entropy += upd.entropy / n;
  }
  row.scale = agent_->normalizer().scale();
  row.env_steps = env_steps_;
  row.episodes = static_cast<int64_t>(episodes_.size());
  if (finished.empty()) {
    row.episode_return = kNaN;
    row.success_rate = kNaN;
  } else {
    for (const auto& e : finished) {
      row.episode_return += e.total_return / static_cast<double>(finished.size());
      row.success_rate += (e.success ? 1.0 : 0.0) / static_cast<double>(finished.size());
    }
  }
  metrics_.push_back(row);

  if (out_dir_) {
    metrics_out_ << format_metrics(row) << '\n' << std::flush;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timing_out_ << iteration_ << ',' << secs << '\n' << std::flush;
    if (tc.checkpoint_every > 0 && iteration_ % tc.checkpoint_every == 0) {
      save_checkpoint(*out_dir_ / "checkpoints" / ("iter_" + std::to_string(iteration_) + ".ckpt"));
    }
    if (tc.eval_every > 0 && iteration_ % tc.eval_every == 0) {
      const EvalResult ev = evaluate(tc.eval_episodes, true, derive_seed(tc.seed, 1000 + iteration_));
      const bool fresh = !std::filesystem::exists(*out_dir_ / "evals.csv");
      std::ofstream os(*out_dir_ / "evals.csv", std::ios::app);
      if (fresh) os << "iteration,mean_return,success_rate\n";
      os << iteration_ << ',' << num(ev.mean_return) << ',' << num(ev.success_rate) << '\n';
    }
  }
  return row;
}

void Trainer::run(const std::function<void(const MetricsRow&)>& on_row) {
  if (!warmed_up_) warmup();
  while (iteration_ < cfg_.train.iterations) {
    const MetricsRow row = train_iteration();
    if (on_row) on_row(row);
  }
  if (out_dir_) save_checkpoint(*out_dir_ / "checkpoints" / "final.ckpt");
}

EvalResult Trainer::evaluate(int64_t episodes, bool deterministic, uint64_t env_seed, bool keep_rows) const {
  return evaluate_policy(*model_, *agent_, cfg_, episodes, deterministic, env_seed, keep_rows);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  write_checkpoint(path, cfg_, *model_, *agent_);
}

void write_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const WorldModel& model,
                      const Agent& agent) {
  Checkpoint ck;
  ck.metadata = dump_config(cfg);
  ck.put_params("model", model.params());
  ck.put_params("actor", agent.actor_params());
  ck.put_params("critic", agent.critic_params());
  ck.put("agent/#scale", Matrix::Constant(1, 1, agent.normalizer().scale()));
  ck.write(path);
}

LoadedPolicy load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::read(path);
  LoadedPolicy out;
  try {
    apply_text(out.cfg, ck.metadata, path.string() + " (metadata)");
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  out.model = std::make_unique<WorldModel>(out.cfg.model, 0);
  out.agent = std::make_unique<Agent>(out.cfg.agent, out.cfg.model.deter + out.cfg.model.stoch, 0);
  ck.get_params("model", out.model->params());
  ck.get_params("actor", out.agent->actor_params());
  ck.get_params("critic", out.agent->critic_params());
  if (ck.contains("agent/#scale")) out.agent->normalizer().set_scale(ck.get("agent/#scale")(0, 0));
  return out;
}

}  // namespace crawlrl

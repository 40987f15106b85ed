#include "crawlrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace crawlrl {

namespace {

Matrix stack_rows(const std::vector<Matrix>& blocks, size_t count) {
  const Index b = blocks.front().rows();
  Matrix out(static_cast<Index>(count) * b, blocks.front().cols());
  for (size_t i = 0; i < count; ++i) out.middleRows(static_cast<Index>(i) * b, b) = blocks[i];
  return out;
}

// T x B (row-major, time-major) -> (T*B) x 1 with row t*B + b.
Matrix flatten_column(const Matrix& m) {
  Matrix out = m;
  out.resize(m.size(), 1);
  return out;
}

}  // namespace

void ActionBounds::validate() const {
  if (harmonics < 0) throw std::invalid_argument("bounds: harmonics must be >= 0");
  if (!(a_max > 0.0)) throw std::invalid_argument("bounds: a_max must be positive");
  if (!(omega_min < omega_max)) throw std::invalid_argument("bounds: omega_min must be below omega_max");
  if (!(u_max > 0.0)) throw std::invalid_argument("bounds: u_max must be positive");
}

GaitAction GaitAction::from_normalized(std::span<const double> y, const ActionBounds& bounds) {
  if (static_cast<Index>(y.size()) != bounds.dim()) throw ShapeError("gait: normalized action has wrong length");
  const size_t n = static_cast<size_t>(bounds.harmonics);
  GaitAction g;
  g.a.resize(n + 1);
  g.b.resize(n);
  for (size_t i = 0; i <= n; ++i) g.a[i] = bounds.a_max * std::clamp(y[i], -1.0, 1.0);
  for (size_t i = 0; i < n; ++i) g.b[i] = bounds.a_max * std::clamp(y[n + 1 + i], -1.0, 1.0);
  const double mid = 0.5 * (bounds.omega_min + bounds.omega_max);
  const double half = 0.5 * (bounds.omega_max - bounds.omega_min);
  g.omega = mid + half * std::clamp(y[2 * n + 1], -1.0, 1.0);
  return g;
}

std::vector<double> GaitAction::normalized(const ActionBounds& bounds) const {
  const size_t n = static_cast<size_t>(bounds.harmonics);
  if (a.size() != n + 1 || b.size() != n) throw ShapeError("gait: harmonic count differs from bounds");
  std::vector<double> y;
  y.reserve(2 * n + 2);
  for (double v : a) y.push_back(v / bounds.a_max);
  for (double v : b) y.push_back(v / bounds.a_max);
  const double mid = 0.5 * (bounds.omega_min + bounds.omega_max);
  const double half = 0.5 * (bounds.omega_max - bounds.omega_min);
  y.push_back((omega - mid) / half);
  return y;
}

double synthesize_at_phase(const GaitAction& g, double phi, const ActionBounds& bounds) {
  if (g.a.empty() || g.a.size() != g.b.size() + 1) throw ShapeError("gait: need N+1 sine and N cosine amplitudes");
  double u = g.a[0];
  for (size_t k = 1; k < g.a.size(); ++k) {
    const double kp = static_cast<double>(k) * phi;
    u += g.a[k] * std::sin(kp) + g.b[k - 1] * std::cos(kp);
  }
  return std::clamp(u, -bounds.u_max, bounds.u_max);
}

double synthesize_control(const GaitAction& g, double t, const ActionBounds& bounds) {
  if (t < 0.0) throw std::invalid_argument("gait: t must be >= 0");
  return synthesize_at_phase(g, g.omega * t, bounds);
}

double GaitGenerator::next(const GaitAction& g, double dt, const ActionBounds& bounds) {
  const double u = synthesize_at_phase(g, phase_, bounds);
  phase_ = std::fmod(phase_ + g.omega * dt, 2.0 * std::numbers::pi);
  return u;
}

void AgentConfig::validate() const {
  bounds.validate();
  if (actor_hidden <= 0 || critic_hidden <= 0) throw std::invalid_argument("agent: hidden widths must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("agent: gamma must lie in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("agent: lambda must lie in [0, 1]");
  if (!(return_decay >= 0.0 && return_decay < 1.0)) throw std::invalid_argument("agent: return_decay must lie in [0, 1)");
  if (entropy_scale < 0.0) throw std::invalid_argument("agent: entropy_scale must be >= 0");
}

Tensor squashed_log_prob(const DiagGaussian& dist, const Tensor& pre_image) {
  // log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x))
  const Tensor log_det = 2.0 * (std::log(2.0) - pre_image - softplus(-2.0 * pre_image));
  return log_prob_rows(dist, pre_image) - row_sum(log_det);
}

Actor::Actor(ParamSet& params, Index feature_dim, const AgentConfig& config, Rng& rng)
    : head_(params, "actor", feature_dim, std::vector<Index>(static_cast<size_t>(config.actor_layers), config.actor_hidden),
            config.bounds.dim(), rng) {}

PolicyOutput Actor::forward(const Tensor& features, Rng& rng, bool deterministic) const {
  PolicyOutput out;
  out.dist = head_(features);
  out.pre_image = deterministic ? stop_gradient(out.dist.mean) : stop_gradient(reparam_sample(out.dist, rng));
  out.action = tanh(out.pre_image);
  out.log_prob = squashed_log_prob(out.dist, out.pre_image);
  out.entropy = entropy_rows(out.dist);
  return out;
}

Critic::Critic(ParamSet& params, Index feature_dim, const AgentConfig& config, Rng& rng)
    : head_(params, "critic", feature_dim,
            std::vector<Index>(static_cast<size_t>(config.critic_layers), config.critic_hidden), 1, rng) {}

std::vector<double> lambda_returns(std::span<const double> rewards, std::span<const double> values, double gamma,
                                   double lambda) {
  if (rewards.size() != values.size()) throw std::invalid_argument("lambda_returns: length mismatch");
  if (rewards.empty()) throw std::invalid_argument("lambda_returns: empty horizon");
  const size_t H = rewards.size();
  std::vector<double> R(H);
  R[H - 1] = values[H - 1];
  for (size_t t = H - 1; t-- > 0;) {
    R[t] = rewards[t] + gamma * ((1.0 - lambda) * values[t + 1] + lambda * R[t + 1]);
  }
  return R;
}

Matrix lambda_returns(const Matrix& rewards, const Matrix& values, double gamma, double lambda) {
  if (rewards.rows() != values.rows() || rewards.cols() != values.cols()) {
    throw std::invalid_argument("lambda_returns: shape mismatch");
  }
  const Index H = rewards.rows();
  if (H == 0) throw std::invalid_argument("lambda_returns: empty horizon");
  Matrix R(H, rewards.cols());
  R.row(H - 1) = values.row(H - 1);
  for (Index t = H - 1; t-- > 0;) {
    R.row(t) = rewards.row(t) + gamma * ((1.0 - lambda) * values.row(t + 1) + lambda * R.row(t + 1));
  }
  return R;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double ReturnNormalizer::update(const Matrix& returns) {
  if (returns.size() == 0) throw std::invalid_argument("normalizer: empty batch");
  std::vector<double> flat(returns.data(), returns.data() + returns.size());
  const double spread = percentile(flat, 0.95) - percentile(flat, 0.05);
  scale_ = decay_ * scale_ + (1.0 - decay_) * spread;
  return scale_;
}

Matrix normalize_advantages(const Matrix& returns, const Matrix& values, ReturnNormalizer& normalizer) {
  if (returns.rows() != values.rows() || returns.cols() != values.cols()) {
    throw std::invalid_argument("advantages: shape mismatch");
  }
  const double s = normalizer.update(returns);
  return (returns - values) / std::max(1.0, s);
}

Tensor actor_loss(const Tensor& log_prob, const Tensor& entropy, const Matrix& advantages, double entropy_scale,
                  bool entropy_bonus) {
  if (advantages.rows() != log_prob.rows() || advantages.cols() != 1) {
    throw ShapeError("actor_loss: advantages must be a column matching log_prob");
  }
  const Tensor reinforce = -mean(Tensor(advantages) * log_prob);
  const Tensor ent = mean(entropy) * entropy_scale;
  return entropy_bonus ? reinforce - ent : reinforce + ent;
}

Tensor critic_loss(const DiagGaussian& value_dist, const Matrix& targets) {
  return -mean(log_prob_rows(value_dist, Tensor(targets)));
}

Tensor latent_features(const LatentState& s) { return concat_cols({s.h, s.sample}); }

ImaginedTrajectory imagine(const WorldModel& model, const Actor& actor, const LatentState& start, Index horizon,
                           Rng& rng, bool deterministic) {
  if (horizon < 1) throw std::invalid_argument("imagine: horizon must be >= 1");
  NoGradGuard no_grad;
  ImaginedTrajectory traj;
  traj.horizon = horizon;
  traj.batch = start.h.rows();
  traj.rewards.resize(horizon, traj.batch);
  LatentState state = start.detached();
  Tensor feat = latent_features(state);
  traj.features.push_back(feat.value());
  for (Index t = 0; t < horizon; ++t) {
    const PolicyOutput pol = actor.forward(feat, rng, deterministic);
    traj.pre_image.push_back(pol.pre_image.value());
    traj.actions.push_back(pol.action.value());
    state = model.imagine_step(state, pol.action, rng, deterministic);
    feat = latent_features(state);
    traj.features.push_back(feat.value());
    traj.rewards.row(t) = model.predict_reward(state.h, state.sample).mean.value().transpose();
  }
  return traj;
}

Agent::Agent(const AgentConfig& config, Index feature_dim, uint64_t seed) : config_(config), normalizer_(config.return_decay) {
  config_.validate();
  Rng rng(seed);
  actor_ = Actor(actor_params_, feature_dim, config_, rng);
  critic_ = Critic(critic_params_, feature_dim, config_, rng);
}

AgentUpdate Agent::train(const ImaginedTrajectory& traj) {
  const Index H = traj.horizon;
  const Index B = traj.batch;
  const size_t Hs = static_cast<size_t>(H);

  Matrix values(H + 1, B);
  {
    NoGradGuard no_grad;
    const Matrix v = critic_.forward(Tensor(stack_rows(traj.features, Hs + 1))).mean.value();
    values = Eigen::Map<const Matrix>(v.data(), H + 1, B);
  }
  Matrix rewards = Matrix::Zero(H + 1, B);
  rewards.topRows(H) = traj.rewards;
  const Matrix returns = lambda_returns(rewards, values, config_.gamma, config_.lambda).topRows(H);
  const Matrix adv = normalize_advantages(returns, values.topRows(H), normalizer_);

  const Tensor feats(stack_rows(traj.features, Hs));
  AgentUpdate out;

  const DiagGaussian pi = actor_.distribution(feats);
  const Tensor logp = squashed_log_prob(pi, Tensor(stack_rows(traj.pre_image, Hs)));
  const Tensor ent = entropy_rows(pi);
  const Tensor la = actor_loss(logp, ent, flatten_column(adv), config_.entropy_scale, config_.entropy_bonus);
  check_finite(la, "actor loss");
  la.backward();
  actor_params_.adam_step(config_.actor_lr);

  const Tensor lc = critic_loss(critic_.forward(feats), flatten_column(returns));
  check_finite(lc, "critic loss");
  lc.backward();
  critic_params_.adam_step(config_.critic_lr);

  out.actor_loss = la.item();
  out.critic_loss = lc.item();
  out.scale = normalizer_.scale();
  out.mean_return = returns.mean();
  out.mean_reward = traj.rewards.mean();
  out.entropy = ent.value().mean();
  return out;
}

}  // namespace crawlrl

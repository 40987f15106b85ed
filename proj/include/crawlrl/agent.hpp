#pragma once

// Gait-parameter actor and value critic trained on latent rollouts.
//
// An action is a truncated Fourier gait a = (A0, A1..AN, B1..BN, omega).
// The actor emits a Gaussian over an unconstrained pre-image x; y = tanh(x)
// is the normalized action in [-1, 1]^dim, mapped affinely into bounds.

#include "crawlrl/world_model.hpp"

#include <span>
#include <vector>

namespace crawlrl {

struct ActionBounds {
  int harmonics = 2;
  double a_max = 1.0;
  double omega_min = 0.5;
  double omega_max = 20.0;
  double u_max = 2.0;

  Index dim() const { return 2 * harmonics + 2; }
  void validate() const;
};

struct GaitAction {
  std::vector<double> a;  // A0..AN
  std::vector<double> b;  // B1..BN
  double omega = 0.0;

  /// Normalized y in [-1, 1]^dim, ordered (A0, A1..AN, B1..BN, omega).
  static GaitAction from_normalized(std::span<const double> y, const ActionBounds& bounds);
  std::vector<double> normalized(const ActionBounds& bounds) const;
};

/// u(t) = A0 + sum_k A_k sin(k omega t) + B_k cos(k omega t), clamped to +-u_max.
double synthesize_control(const GaitAction& g, double t, const ActionBounds& bounds);
/// Same series evaluated at an explicit phase phi = omega t.
double synthesize_at_phase(const GaitAction& g, double phi, const ActionBounds& bounds);

/// Phase-accumulating gait source: phi += omega * dt per step, so u stays
/// continuous when the gait parameters change mid-episode.
class GaitGenerator {
 public:
  void reset() { phase_ = 0.0; }
  double phase() const { return phase_; }
  /// Control for the current step, then advances the phase.
  double next(const GaitAction& g, double dt, const ActionBounds& bounds);

 private:
  double phase_ = 0.0;
};

struct AgentConfig {
  ActionBounds bounds;
  Index actor_hidden = 200;
  int actor_layers = 2;
  Index critic_hidden = 200;
  int critic_layers = 2;
  double actor_lr = 5e-5;
  double critic_lr = 8e-5;
  double gamma = 0.997;
  double lambda = 0.95;
  double entropy_scale = 1e-4;
  bool entropy_bonus = true;  // false: +eta * H added to the minimized loss
  double return_decay = 0.99;

  void validate() const;
};

struct PolicyOutput {
  DiagGaussian dist;  // over the pre-image
  Tensor pre_image;   // B x dim, sampled or mean
  Tensor action;      // B x dim, tanh(pre_image)
  Tensor log_prob;    // B x 1, includes the tanh Jacobian
  Tensor entropy;     // B x 1, of the base Gaussian
};

/// log N(x; dist) - sum log(1 - tanh(x)^2), per row.
Tensor squashed_log_prob(const DiagGaussian& dist, const Tensor& pre_image);

class Actor {
 public:
  Actor() = default;
  Actor(ParamSet& params, Index feature_dim, const AgentConfig& config, Rng& rng);

  DiagGaussian distribution(const Tensor& features) const { return head_(features); }
  PolicyOutput forward(const Tensor& features, Rng& rng, bool deterministic = false) const;
  Index action_dim() const { return head_.dim(); }

 private:
  GaussianHead head_;
};

class Critic {
 public:
  Critic() = default;
  Critic(ParamSet& params, Index feature_dim, const AgentConfig& config, Rng& rng);

  DiagGaussian forward(const Tensor& features) const { return head_(features); }

 private:
  GaussianHead head_;
};

/// R_{H-1} = v_{H-1}; R_t = r_t + gamma ((1 - lambda) v_{t+1} + lambda R_{t+1}).
/// r_t is the reward for leaving state t; v_t the value of state t.
std::vector<double> lambda_returns(std::span<const double> rewards, std::span<const double> values, double gamma,
                                   double lambda);
/// Column-wise over a time-major (T x B) batch.
Matrix lambda_returns(const Matrix& rewards, const Matrix& values, double gamma, double lambda);

/// Percentile with linear interpolation between closest ranks, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// EMA of the 95th - 5th percentile spread of the lambda returns.
class ReturnNormalizer {
 public:
  explicit ReturnNormalizer(double decay = 0.99, double scale = 0.0) : decay_(decay), scale_(scale) {}

  double update(const Matrix& returns);
  double scale() const { return scale_; }
  void set_scale(double s) { scale_ = s; }
  double decay() const { return decay_; }

 private:
  double decay_;
  double scale_;
};

/// (R - v) / max(1, S) after updating S with the batch; result is a constant.
Matrix normalize_advantages(const Matrix& returns, const Matrix& values, ReturnNormalizer& normalizer);

/// -mean(A * log pi) -/+ eta * mean(H). Advantages enter as constants.
Tensor actor_loss(const Tensor& log_prob, const Tensor& entropy, const Matrix& advantages, double entropy_scale,
                  bool entropy_bonus);
/// -mean log p(R | critic); targets enter as constants.
Tensor critic_loss(const DiagGaussian& value_dist, const Matrix& targets);

/// Latent rollout of horizon H. Row block t of each matrix holds the B
/// trajectories at step t. Recorded without a gradient graph.
struct ImaginedTrajectory {
  Index horizon = 0;
  Index batch = 0;
  std::vector<Matrix> features;   // H + 1 entries, B x (deter + stoch)
  std::vector<Matrix> pre_image;  // H entries, B x action_dim
  std::vector<Matrix> actions;    // H entries, B x action_dim in [-1, 1]
  Matrix rewards;                 // H x B, predicted reward for step t -> t+1
};

Tensor latent_features(const LatentState& s);

ImaginedTrajectory imagine(const WorldModel& model, const Actor& actor, const LatentState& start, Index horizon,
                           Rng& rng, bool deterministic = false);

struct AgentUpdate {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double scale = 0.0;
  double mean_return = 0.0;
  double mean_reward = 0.0;
  double entropy = 0.0;
};

class Agent {
 public:
  Agent(const AgentConfig& config, Index feature_dim, uint64_t seed);
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  const AgentConfig& config() const { return config_; }
  ParamSet& actor_params() { return actor_params_; }
  ParamSet& critic_params() { return critic_params_; }
  const ParamSet& actor_params() const { return actor_params_; }
  const ParamSet& critic_params() const { return critic_params_; }
  const Actor& actor() const { return actor_; }
  const Critic& critic() const { return critic_; }
  ReturnNormalizer& normalizer() { return normalizer_; }
  const ReturnNormalizer& normalizer() const { return normalizer_; }

  /// One actor and one critic step on an imagined batch.
  AgentUpdate train(const ImaginedTrajectory& traj);

 private:
  AgentConfig config_;
  ParamSet actor_params_;
  ParamSet critic_params_;
  Actor actor_;
  Critic critic_;
  ReturnNormalizer normalizer_;
};

}  // namespace crawlrl

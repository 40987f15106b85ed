#pragma once

// Recurrent state-space model over IMU/TOF readings.
//
// Each step t consumes the action that produced observation t:
//   h_t   = f(h_{t-1}, S_{t-1}, a_t)              recurrent core
//   S_t   ~ prior(h_t)                            action-driven prediction
//   S^_t  ~ posterior(h_t, A_t, Z_t)              observation-corrected code
// with A_t, Z_t reparameterized samples from the IMU and TOF encoders. The
// decoders reconstruct the observation and the window reward from (h_t, S_t).

#include "crawlrl/layers.hpp"

#include <Eigen/Core>

#include <vector>

namespace crawlrl {

struct WorldModelConfig {
  Index deter = 256;      // recurrent state h
  Index stoch = 16;       // stochastic code S
  Index code = 8;         // per-sensor encoder code (A and Z each)
  Index action_dim = 6;
  Index hidden = 100;     // transition, encoder, decoder width
  Index reward_hidden = 200;
  int prior_layers = 2;
  int posterior_layers = 1;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int reward_layers = 2;

  double beta_dyn = 0.5;  // weight on L1
  double beta_rep = 0.1;  // weight on L2
  double beta_rec = 1.0;  // weight on L3
  double free_nats = 2.0;
  double lr = 1e-4;

  // Observations (alpha1, alpha2, X1, X2) enter the networks as (o - offset) / scale.
  Eigen::Vector4d obs_offset{0.05, 0.05, 4.75, 4.75};
  Eigen::Vector4d obs_scale{5.0, 5.0, 0.5, 0.5};

  void validate() const;
};

struct LatentState {
  Tensor h;
  DiagGaussian dist;
  Tensor sample;

  LatentState detached() const { return {stop_gradient(h), dist.detached(), stop_gradient(sample)}; }
};

struct EncodedObs {
  DiagGaussian imu;
  DiagGaussian tof;
};

/// Time-major batch: element t holds the B rows of step t.
struct SequenceBatch {
  std::vector<Matrix> obs;      // B x 4, raw sensor units
  std::vector<Matrix> actions;  // B x action_dim, normalized to [-1, 1]
  std::vector<Matrix> rewards;  // B x 1
  Index batch() const { return obs.empty() ? 0 : obs.front().rows(); }
  Index length() const { return static_cast<Index>(obs.size()); }
};

struct FreeEnergyResult {
  Tensor loss;
  double l1 = 0.0;  // mean clamped dynamics KL
  double l2 = 0.0;  // mean clamped representation KL
  double l3 = 0.0;  // mean negative log-likelihood (obs + reward)
  double nll_obs = 0.0;
  double nll_reward = 0.0;
  double kl_raw = 0.0;         // mean unclamped KL
  double clamp_fraction = 0.0;  // share of (t, b) cells with KL below the free-nats floor
  // Per step, B x 1: clamped L1 and L2 values and raw KL.
  std::vector<Matrix> l1_steps;
  std::vector<Matrix> l2_steps;
  std::vector<Matrix> kl_steps;
  // Filtered posterior states, detached, for imagination starts.
  std::vector<Matrix> h;
  std::vector<Matrix> s;
};

class WorldModel {
 public:
  WorldModel(const WorldModelConfig& config, uint64_t seed);
  WorldModel(const WorldModel&) = delete;
  WorldModel& operator=(const WorldModel&) = delete;

  const WorldModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Tensor normalize_obs(const Matrix& raw) const;

  EncodedObs encode_obs(const Tensor& obs_norm) const;
  Tensor recurrent_step(const Tensor& h, const Tensor& s, const Tensor& action) const;
  DiagGaussian prior(const Tensor& h) const;
  /// Conditions on (h, A, Z) with A, Z sampled from enc via reparameterization.
  DiagGaussian posterior(const Tensor& h, const EncodedObs& enc, Rng& rng) const;
  DiagGaussian decode_obs(const Tensor& h, const Tensor& s) const;
  DiagGaussian predict_reward(const Tensor& h, const Tensor& s) const;

  /// h = 0, S = 0 for a batch.
  LatentState initial_state(Index batch) const;

  /// One filtering step with the posterior. deterministic uses means instead
  /// of samples.
  LatentState observe_step(const LatentState& prev, const Tensor& action, const Matrix& raw_obs, Rng& rng,
                           bool deterministic = false) const;
  /// One open-loop step with the prior.
  LatentState imagine_step(const LatentState& prev, const Tensor& action, Rng& rng, bool deterministic = false) const;

  /// Surrogate free energy over a batch of sequences, filtering from h = 0:
  ///   beta_dyn * max(I, KL(sg(post) || prior)) + beta_rep * max(I, KL(post || sg(prior)))
  ///   + beta_rec * (-log p(o | h, S) - log p(r | h, S)),
  /// averaged over batch and time.
  FreeEnergyResult free_energy_loss(const SequenceBatch& batch, Rng& rng) const;

 private:
  WorldModelConfig config_;
  ParamSet params_;
  GaussianHead imu_encoder_;
  GaussianHead tof_encoder_;
  Linear recurrent_in_;
  GruCell recurrent_;
  GaussianHead prior_;
  GaussianHead posterior_;
  GaussianHead obs_decoder_;
  GaussianHead reward_decoder_;
};

}  // namespace crawlrl

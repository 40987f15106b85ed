#include "crawlrl/world_model.hpp"

namespace crawlrl {

namespace {

std::vector<Index> widths(int layers, Index width) { return std::vector<Index>(static_cast<size_t>(layers), width); }

Matrix to_col(const Tensor& t) { return t.value(); }

}  // namespace

void WorldModelConfig::validate() const {
  if (deter <= 0 || stoch <= 0 || code <= 0 || action_dim <= 0 || hidden <= 0 || reward_hidden <= 0) {
    throw std::invalid_argument("world_model: dimensions must be positive");
  }
  if (beta_dyn < 0 || beta_rep < 0 || beta_rec < 0) throw std::invalid_argument("world_model: beta weights must be >= 0");
  if (free_nats < 0) throw std::invalid_argument("world_model: free_nats must be >= 0");
  if (!(obs_scale.array() > 0).all()) throw std::invalid_argument("world_model: obs_scale must be positive");
}

WorldModel::WorldModel(const WorldModelConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const Index feat = config_.deter + config_.stoch;
  imu_encoder_ = GaussianHead(params_, "imu_encoder", 2, widths(config_.encoder_layers, config_.hidden), config_.code, rng);
  tof_encoder_ = GaussianHead(params_, "tof_encoder", 2, widths(config_.encoder_layers, config_.hidden), config_.code, rng);
  recurrent_in_ = Linear(params_, "recurrent.in", config_.stoch + config_.action_dim, config_.hidden, rng);
  recurrent_ = GruCell(params_, "recurrent", config_.hidden, config_.deter, rng);
  prior_ = GaussianHead(params_, "prior", config_.deter, widths(config_.prior_layers, config_.hidden), config_.stoch, rng);
  posterior_ = GaussianHead(params_, "posterior", config_.deter + 2 * config_.code,
                            widths(config_.posterior_layers, config_.hidden), config_.stoch, rng);
  obs_decoder_ = GaussianHead(params_, "obs_decoder", feat, widths(config_.decoder_layers, config_.hidden), 4, rng);
  reward_decoder_ =
      GaussianHead(params_, "reward_decoder", feat, widths(config_.reward_layers, config_.reward_hidden), 1, rng);
}

Tensor WorldModel::normalize_obs(const Matrix& raw) const {
  if (raw.cols() != 4) throw ShapeError("world_model: observations must have 4 columns");
  Matrix norm = raw;
  for (Index c = 0; c < 4; ++c) {
    norm.col(c) = (raw.col(c).array() - config_.obs_offset(c)) / config_.obs_scale(c);
  }
  return Tensor(std::move(norm));
}

EncodedObs WorldModel::encode_obs(const Tensor& obs_norm) const {
  EncodedObs enc{imu_encoder_(slice_cols(obs_norm, 0, 2)), tof_encoder_(slice_cols(obs_norm, 2, 2))};
  check_finite(enc.imu.mean, "imu encoder");
  check_finite(enc.tof.mean, "tof encoder");
  return enc;
}

Tensor WorldModel::recurrent_step(const Tensor& h, const Tensor& s, const Tensor& action) const {
  const Tensor x = tanh(recurrent_in_(concat_cols({s, action})));
  return recurrent_(x, h);
}

DiagGaussian WorldModel::prior(const Tensor& h) const {
  DiagGaussian d = prior_(h);
  check_finite(d.mean, "prior");
  return d;
}

DiagGaussian WorldModel::posterior(const Tensor& h, const EncodedObs& enc, Rng& rng) const {
  const Tensor a = reparam_sample(enc.imu, rng);
  const Tensor z = reparam_sample(enc.tof, rng);
  DiagGaussian d = posterior_(concat_cols({h, a, z}));
  check_finite(d.mean, "posterior");
  return d;
}

DiagGaussian WorldModel::decode_obs(const Tensor& h, const Tensor& s) const { return obs_decoder_(concat_cols({h, s})); }

DiagGaussian WorldModel::predict_reward(const Tensor& h, const Tensor& s) const {
  return reward_decoder_(concat_cols({h, s}));
}

LatentState WorldModel::initial_state(Index batch) const {
  const Tensor zs = Tensor::zeros(batch, config_.stoch);
  return {Tensor::zeros(batch, config_.deter),
          {zs, Tensor(Matrix::Ones(batch, config_.stoch))},
          zs};
}

LatentState WorldModel::observe_step(const LatentState& prev, const Tensor& action, const Matrix& raw_obs, Rng& rng,
                                     bool deterministic) const {
  const Tensor h = recurrent_step(prev.h, prev.sample, action);
  const EncodedObs enc = encode_obs(normalize_obs(raw_obs));
  DiagGaussian post;
  if (deterministic) {
    post = posterior_(concat_cols({h, enc.imu.mean, enc.tof.mean}));
  } else {
    post = posterior(h, enc, rng);
  }
  const Tensor s = deterministic ? post.mean : reparam_sample(post, rng);
  return {h, post, s};
}

LatentState WorldModel::imagine_step(const LatentState& prev, const Tensor& action, Rng& rng,
                                     bool deterministic) const {
  const Tensor h = recurrent_step(prev.h, prev.sample, action);
  DiagGaussian p = prior(h);
  const Tensor s = deterministic ? p.mean : reparam_sample(p, rng);
  return {h, p, s};
}

FreeEnergyResult WorldModel::free_energy_loss(const SequenceBatch& batch, Rng& rng) const {
  const Index B = batch.batch();
  const Index T = batch.length();
  if (T == 0 || B == 0) throw std::invalid_argument("free_energy_loss: empty batch");
  if (batch.actions.size() != batch.obs.size() || batch.rewards.size() != batch.obs.size()) {
    throw ShapeError("free_energy_loss: obs/actions/rewards lengths differ");
  }

  FreeEnergyResult out;
  const double floor = config_.free_nats;
  LatentState state = initial_state(B);
  Tensor total;
  double kl_sum = 0.0;
  double nll_obs_sum = 0.0;
  double nll_rew_sum = 0.0;
  Index clamped = 0;

  for (Index t = 0; t < T; ++t) {
    const Tensor obs = normalize_obs(batch.obs[static_cast<size_t>(t)]);
    const Tensor action(batch.actions[static_cast<size_t>(t)]);
    const Tensor reward(batch.rewards[static_cast<size_t>(t)]);

    const Tensor h = recurrent_step(state.h, state.sample, action);
    const DiagGaussian pri = prior(h);
    const DiagGaussian post = posterior(h, encode_obs(obs), rng);
    const Tensor s = reparam_sample(post, rng);

    const Tensor kl_dyn = kl_divergence_rows(post.detached(), pri);
    const Tensor kl_rep = kl_divergence_rows(post, pri.detached());
    const Tensor l1 = max(kl_dyn, floor);
    const Tensor l2 = max(kl_rep, floor);
    const Tensor nll_obs = -log_prob_rows(decode_obs(h, s), obs);
    const Tensor nll_rew = -log_prob_rows(predict_reward(h, s), reward);

    const Tensor step_loss =
        config_.beta_dyn * l1 + config_.beta_rep * l2 + config_.beta_rec * (nll_obs + nll_rew);
    total = total.defined() ? total + step_loss : step_loss;

    out.l1_steps.push_back(to_col(l1));
    out.l2_steps.push_back(to_col(l2));
    out.kl_steps.push_back(to_col(kl_dyn));
    out.h.push_back(h.value());
    out.s.push_back(s.value());
    kl_sum += kl_dyn.value().sum();
    nll_obs_sum += nll_obs.value().sum();
    nll_rew_sum += nll_rew.value().sum();
    clamped += (kl_dyn.value().array() < floor).count();
    out.l1 += l1.value().sum();
    out.l2 += l2.value().sum();

    state = {h, post, s};
  }

  const double n = static_cast<double>(B * T);
  out.loss = sum(total) * (1.0 / n);
  if (!std::isfinite(out.loss.item())) {
    std::string terms;
    if (!std::isfinite(out.l1)) terms += " l1 (dynamics KL)";
    if (!std::isfinite(out.l2)) terms += " l2 (representation KL)";
    if (!std::isfinite(nll_obs_sum)) terms += " l3 (observation NLL)";
    if (!std::isfinite(nll_rew_sum)) terms += " l3 (reward NLL)";
    throw NumericError("free_energy_loss: non-finite loss in" + (terms.empty() ? std::string(" total") : terms));
  }
  out.l1 /= n;
  out.l2 /= n;
  out.nll_obs = nll_obs_sum / n;
  out.nll_reward = nll_rew_sum / n;
  out.l3 = out.nll_obs + out.nll_reward;
  out.kl_raw = kl_sum / n;
  out.clamp_fraction = static_cast<double>(clamped) / n;
  return out;
}

}  // namespace crawlrl

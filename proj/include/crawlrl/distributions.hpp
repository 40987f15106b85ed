#pragma once

#include "crawlrl/tensor.hpp"

#include <random>

namespace crawlrl {

using Rng = std::mt19937_64;

/// Diagonal Gaussian; each row of mean/stddev is one independent distribution.
struct DiagGaussian {
  Tensor mean;
  Tensor stddev;

  Index rows() const { return mean.rows(); }
  Index dim() const { return mean.cols(); }
  DiagGaussian detached() const { return {stop_gradient(mean), stop_gradient(stddev)}; }
};

// Throws std::invalid_argument on shape mismatch or nonpositive stddev.
void validate(const DiagGaussian& d);

/// Per-row KL(q || p) summed over dimensions, shape rows x 1.
Tensor kl_divergence_rows(const DiagGaussian& q, const DiagGaussian& p);
/// Total KL over all rows and dimensions, shape 1 x 1.
Tensor diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p);

/// Per-row log density of x, shape rows x 1.
Tensor log_prob_rows(const DiagGaussian& d, const Tensor& x);
Tensor diag_gaussian_logprob(const DiagGaussian& d, const Tensor& x);

/// Per-row differential entropy, shape rows x 1.
Tensor entropy_rows(const DiagGaussian& d);

/// mean + stddev * eps with eps ~ N(0, I) drawn from rng. eps is a constant
/// on the tape, so gradients reach mean and stddev only.
Tensor reparam_sample(const DiagGaussian& d, Rng& rng);

/// Standard normal noise matrix.
Matrix standard_normal(Index rows, Index cols, Rng& rng);

}  // namespace crawlrl

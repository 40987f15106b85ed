#include "crawlrl/distributions.hpp"

#include <cmath>
#include <numbers>

namespace crawlrl {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;
}

void validate(const DiagGaussian& d) {
  if (!d.mean.defined() || !d.stddev.defined()) throw std::invalid_argument("gaussian: undefined parameters");
  if (d.mean.rows() != d.stddev.rows() || d.mean.cols() != d.stddev.cols()) {
    throw ShapeError("gaussian: mean and stddev shapes differ");
  }
  if (!(d.stddev.value().array() > 0.0).all()) throw std::invalid_argument("gaussian: stddev must be positive");
}

Tensor kl_divergence_rows(const DiagGaussian& q, const DiagGaussian& p) {
  validate(q);
  validate(p);
  if (q.mean.rows() != p.mean.rows() || q.mean.cols() != p.mean.cols()) {
    throw ShapeError("kl: distributions have different shapes");
  }
  const Tensor var_ratio = square(q.stddev / p.stddev);
  const Tensor mean_term = square((q.mean - p.mean) / p.stddev);
  // log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
  const Tensor per_dim = 0.5 * (var_ratio + mean_term - log(var_ratio)) - 0.5;
  return row_sum(per_dim);
}

Tensor diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
  return sum(kl_divergence_rows(q, p));
}

Tensor log_prob_rows(const DiagGaussian& d, const Tensor& x) {
  validate(d);
  if (x.rows() != d.mean.rows() || x.cols() != d.mean.cols()) throw ShapeError("log_prob: sample shape mismatch");
  const Tensor z = (x - d.mean) / d.stddev;
  const Tensor per_dim = -0.5 * square(z) - log(d.stddev) - kHalfLog2Pi;
  return row_sum(per_dim);
}

Tensor diag_gaussian_logprob(const DiagGaussian& d, const Tensor& x) { return sum(log_prob_rows(d, x)); }

Tensor entropy_rows(const DiagGaussian& d) {
  validate(d);
  return row_sum(log(d.stddev) + (0.5 + kHalfLog2Pi));
}

Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eps(rows, cols);
  for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  return eps;
}

Tensor reparam_sample(const DiagGaussian& d, Rng& rng) {
  validate(d);
  const Tensor eps(standard_normal(d.mean.rows(), d.mean.cols(), rng));
  return d.mean + d.stddev * eps;
}

}  // namespace crawlrl

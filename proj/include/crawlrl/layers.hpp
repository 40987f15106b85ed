#pragma once

#include "crawlrl/distributions.hpp"
#include "crawlrl/params.hpp"

#include <string>
#include <vector>

namespace crawlrl {

/// Lower bound added to every softplus stddev head.
inline constexpr double kMinStddev = 1e-4;

/// Xavier-uniform weights, zero bias, registered as "<name>.w" / "<name>.b".
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& params, const std::string& name, Index in, Index out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  Index in_features() const { return in_; }
  Index out_features() const { return out_; }

 private:
  Index in_ = 0;
  Index out_ = 0;
  Tensor w_;
  Tensor b_;
};

/// tanh hidden layers followed by a linear output layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamSet& params, const std::string& name, Index in, const std::vector<Index>& hidden, Index out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  Index out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear> layers_;
};

/// MLP emitting a diagonal Gaussian: first half of the outputs is the mean,
/// second half goes through softplus + kMinStddev.
class GaussianHead {
 public:
  GaussianHead() = default;
  GaussianHead(ParamSet& params, const std::string& name, Index in, const std::vector<Index>& hidden, Index dim,
               Rng& rng);

  DiagGaussian operator()(const Tensor& x) const;
  Index dim() const { return dim_; }

 private:
  Mlp net_;
  Index dim_ = 0;
};

/// Single gated recurrent layer. One affine map of [x, h] yields the reset,
/// candidate and update pre-activations:
///   r = sigmoid(a_r), c = tanh(r * a_c), z = sigmoid(a_z - 1)
///   h' = z * c + (1 - z) * h
/// so |h'| <= max(|c|, |h|) <= 1 whenever |h| <= 1.
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParamSet& params, const std::string& name, Index input, Index hidden, Rng& rng);

  Tensor operator()(const Tensor& x, const Tensor& h) const;
  Index hidden_size() const { return hidden_; }

 private:
  Linear gates_;
  Index hidden_ = 0;
};

}  // namespace crawlrl

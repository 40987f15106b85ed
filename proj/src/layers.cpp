#include "crawlrl/layers.hpp"

#include <cmath>

namespace crawlrl {

Linear::Linear(ParamSet& params, const std::string& name, Index in, Index out, Rng& rng) : in_(in), out_(out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  Matrix w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng);
  w_ = params.add(name + ".w", std::move(w));
  b_ = params.add(name + ".b", Matrix::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const { return affine(x, w_, b_); }

Mlp::Mlp(ParamSet& params, const std::string& name, Index in, const std::vector<Index>& hidden, Index out, Rng& rng) {
  Index width = in;
  for (size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(params, name + ".l" + std::to_string(i), width, hidden[i], rng);
    width = hidden[i];
  }
  layers_.emplace_back(params, name + ".out", width, out, rng);
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor y = x;
  for (size_t i = 0; i + 1 < layers_.size(); ++i) y = tanh(layers_[i](y));
  return layers_.back()(y);
}

GaussianHead::GaussianHead(ParamSet& params, const std::string& name, Index in, const std::vector<Index>& hidden,
                           Index dim, Rng& rng)
    : net_(params, name, in, hidden, 2 * dim, rng), dim_(dim) {}

DiagGaussian GaussianHead::operator()(const Tensor& x) const {
  const Tensor out = net_(x);
  return {slice_cols(out, 0, dim_), softplus(slice_cols(out, dim_, dim_)) + kMinStddev};
}

GruCell::GruCell(ParamSet& params, const std::string& name, Index input, Index hidden, Rng& rng)
    : gates_(params, name + ".gates", input + hidden, 3 * hidden, rng), hidden_(hidden) {}

Tensor GruCell::operator()(const Tensor& x, const Tensor& h) const {
  const Tensor pre = gates_(concat_cols({x, h}));
  const Tensor reset = sigmoid(slice_cols(pre, 0, hidden_));
  const Tensor cand = tanh(reset * slice_cols(pre, hidden_, hidden_));
  const Tensor update = sigmoid(slice_cols(pre, 2 * hidden_, hidden_) - 1.0);
  return update * cand + (1.0 - update) * h;
}

}  // namespace crawlrl

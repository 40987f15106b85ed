#pragma once

// Dense reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node holding a row-major float64
// matrix. Every op records its inputs and a pullback closure; calling
// backward() on a scalar result walks the graph in reverse topological order
// and accumulates gradients into every leaf that requires them. The graph is
// rebuilt on each forward pass, so recurrent unrolls need no special handling.
//
// Rows are the batch axis throughout the library. Elementwise binary ops
// accept equal shapes, a 1 x n right/left operand broadcast over rows, or a
// 1 x 1 operand broadcast everywhere.

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crawlrl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> pullback;  // empty for leaves

  void accumulate(const Matrix& g);
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor zeros(Index rows, Index cols);
  static Tensor row(std::span<const double> values);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // Mutable access for leaves (optimizer updates, checkpoint loads).
  Matrix& data();

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const;
  void zero_grad();

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  Index size() const { return node_->value.size(); }
  double item() const;

  // Accumulates d(this)/d(leaf) into every reachable leaf. Requires a 1 x 1
  // tensor that depends on at least one leaf with requires_grad.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Elementwise arithmetic with the broadcasting rules above.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double c);
Tensor operator+(double c, const Tensor& a);
Tensor operator-(const Tensor& a, double c);
Tensor operator-(double c, const Tensor& a);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
// x * w + b with b a 1 x out bias row.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor max(const Tensor& x, double floor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor row_sum(const Tensor& x);  // rows x 1

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
Tensor slice_cols(const Tensor& x, Index start, Index count);
Tensor slice_rows(const Tensor& x, Index start, Index count);

// Same value, no gradient path.
Tensor stop_gradient(const Tensor& x);

/// While alive, ops on this thread record no graph: results are constants
/// even when their inputs require gradients.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

void check_finite(const Tensor& x, const std::string& what);

}  // namespace crawlrl

#include "crawlrl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace crawlrl {

namespace detail {

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

}  // namespace detail

namespace {

using detail::Node;

thread_local bool g_no_grad = false;

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "(" << m.rows() << ", " << m.cols() << ")";
  return os.str();
}

Tensor make_result(Matrix value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> pullback) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_no_grad) return Tensor::from_node(std::move(n));
  for (const auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->pullback = std::move(pullback);
  }
  return Tensor::from_node(std::move(n));
}

enum class Broadcast { kNone, kRow, kScalar };

Broadcast broadcast_kind(const Matrix& operand, Index rows, Index cols) {
  if (operand.rows() == rows && operand.cols() == cols) return Broadcast::kNone;
  if (operand.rows() == 1 && operand.cols() == 1) return Broadcast::kScalar;
  if (operand.rows() == 1 && operand.cols() == cols) return Broadcast::kRow;
  return Broadcast::kNone;
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  switch (broadcast_kind(m, rows, cols)) {
    case Broadcast::kScalar:
      return Matrix::Constant(rows, cols, m(0, 0));
    case Broadcast::kRow:
      return m.replicate(rows, 1);
    case Broadcast::kNone:
      break;
  }
  return m;
}

Matrix reduce_to(const Matrix& g, const Matrix& like) {
  if (g.rows() == like.rows() && g.cols() == like.cols()) return g;
  if (like.size() == 1) return Matrix::Constant(1, 1, g.sum());
  return g.colwise().sum();
}

void result_shape(const Tensor& a, const Tensor& b, const char* op, Index& rows,
                  Index& cols) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  rows = std::max(av.rows(), bv.rows());
  cols = std::max(av.cols(), bv.cols());
  auto ok = [&](const Matrix& m) {
    return (m.rows() == rows && m.cols() == cols) || (m.rows() == 1 && m.cols() == 1) ||
           (m.rows() == 1 && m.cols() == cols);
  };
  if (!ok(av) || !ok(bv)) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(av) + " and " + shape_str(bv) +
                     " are not conformable");
  }
}

using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Vectorizable forms built on exp, which Eigen packetizes for double.
Matrix fast_sigmoid(const Matrix& x) {
  const auto v = x.array();
  const RowArray e = (-v.abs()).exp();
  return (v >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
}

Matrix fast_tanh(const Matrix& x) {
  const auto v = x.array();
  const RowArray e = (-2.0 * v.abs()).exp();
  const RowArray big = (1.0 - e) / (1.0 + e);
  // Series below 0.01 avoids cancellation in 1 - e.
  const RowArray v2 = v.square();
  const RowArray small = v * (1.0 + v2 * (-1.0 / 3.0 + v2 * (2.0 / 15.0 - v2 * (17.0 / 315.0))));
  const RowArray mag = (v.abs() < 0.01).select(small.abs(), big);
  return (v < 0.0).select(-mag, mag).matrix();
}

template <typename Fn>
Tensor unary(const Tensor& x, Matrix value, Fn local_grad) {
  return make_result(std::move(value), {x}, [local_grad](Node& self) {
    Node& in = *self.parents[0];
    in.accumulate(local_grad(in.value, self.value, self.grad));
  });
}

}  // namespace

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  if (!value.allFinite()) throw NumericError("tensor: non-finite input data");
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Matrix::Constant(1, 1, v)); }

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

Tensor Tensor::row(std::span<const double> values) {
  Matrix m(1, static_cast<Index>(values.size()));
  for (Index i = 0; i < m.cols(); ++i) m(0, i) = values[static_cast<size_t>(i)];
  return Tensor(std::move(m));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

Matrix& Tensor::data() {
  if (node_->pullback) throw std::logic_error("tensor: data() is only valid on leaves");
  return node_->value;
}

const Matrix& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor: gradient has not been populated");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(value()) + " is not scalar");
  return value()(0, 0);
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward: loss of shape " + shape_str(value()) + " is not scalar");
  if (!requires_grad()) throw std::logic_error("backward: loss does not depend on any trainable tensor");
  if (!std::isfinite(item())) throw NumericError("backward: non-finite loss");

  // Iterative post-order DFS; reverse gives a valid pullback order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->pullback) n->grad.resize(0, 0);
  }
  node_->accumulate(Matrix::Constant(1, 1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->pullback || n->grad.size() == 0) continue;
    n->pullback(*n);
    n->grad.resize(0, 0);
  }
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Index r, c;
  result_shape(a, b, "add", r, c);
  return make_result(expand(a.value(), r, c) + expand(b.value(), r, c), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(reduce_to(self.grad, self.parents[0]->value));
    self.parents[1]->accumulate(reduce_to(self.grad, self.parents[1]->value));
  });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Index r, c;
  result_shape(a, b, "sub", r, c);
  return make_result(expand(a.value(), r, c) - expand(b.value(), r, c), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(reduce_to(self.grad, self.parents[0]->value));
    self.parents[1]->accumulate(reduce_to(-self.grad, self.parents[1]->value));
  });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  Index r, c;
  result_shape(a, b, "mul", r, c);
  Matrix av = expand(a.value(), r, c);
  Matrix bv = expand(b.value(), r, c);
  Matrix out = av.cwiseProduct(bv);
  return make_result(std::move(out), {a, b}, [r, c](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.accumulate(reduce_to(self.grad.cwiseProduct(expand(pb.value, r, c)), pa.value));
    }
    if (pb.requires_grad) {
      pb.accumulate(reduce_to(self.grad.cwiseProduct(expand(pa.value, r, c)), pb.value));
    }
  });
}

Tensor operator/(const Tensor& a, const Tensor& b) {
  Index r, c;
  result_shape(a, b, "div", r, c);
  if ((b.value().array() == 0.0).any()) throw NumericError("div: division by zero");
  Matrix av = expand(a.value(), r, c);
  Matrix bv = expand(b.value(), r, c);
  Matrix out = av.cwiseQuotient(bv);
  return make_result(std::move(out), {a, b}, [r, c](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const Matrix bv = expand(pb.value, r, c);
    if (pa.requires_grad) pa.accumulate(reduce_to(self.grad.cwiseQuotient(bv), pa.value));
    if (pb.requires_grad) {
      const Matrix g = -self.grad.cwiseProduct(self.value).cwiseQuotient(bv);
      pb.accumulate(reduce_to(g, pb.value));
    }
  });
}

Tensor operator-(const Tensor& a) { return a * -1.0; }
Tensor operator+(const Tensor& a, double c) {
  return unary(a, (a.value().array() + c).matrix(),
               [](const Matrix&, const Matrix&, const Matrix& g) { return g; });
}
Tensor operator+(double c, const Tensor& a) { return a + c; }
Tensor operator-(const Tensor& a, double c) { return a + (-c); }
Tensor operator-(double c, const Tensor& a) { return (a * -1.0) + c; }
Tensor operator*(const Tensor& a, double c) {
  return unary(a, a.value() * c,
               [c](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g * c; });
}
Tensor operator*(double c, const Tensor& a) { return a * c; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shapes " + shape_str(a.value()) + " and " + shape_str(b.value()) +
                     " are not conformable");
  }
  return make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine: x " + shape_str(x.value()) + ", w " + shape_str(w.value()) + ", b " +
                     shape_str(b.value()) + " are not conformable");
  }
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make_result(std::move(out), {x, w, b}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    if (px.requires_grad) px.accumulate(self.grad * pw.value.transpose());
    if (pw.requires_grad) pw.accumulate(px.value.transpose() * self.grad);
    if (pb.requires_grad) pb.accumulate(self.grad.colwise().sum());
  });
}

Tensor tanh(const Tensor& x) {
  return unary(x, fast_tanh(x.value()), [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
    return (g.array() * (1.0 - y.array().square())).matrix();
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, fast_sigmoid(x.value()), [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
    return (g.array() * y.array() * (1.0 - y.array())).matrix();
  });
}

Tensor softplus(const Tensor& x) {
  const auto v = x.value().array();
  Matrix y = (v.max(0.0) + (-v.abs()).exp().log1p()).matrix();
  return unary(x, std::move(y), [](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
    return g.cwiseProduct(fast_sigmoid(in));
  });
}

Tensor exp(const Tensor& x) {
  Matrix y = x.value().array().exp().matrix();
  if (!y.allFinite()) throw NumericError("exp: overflow");
  return unary(x, std::move(y), [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
    return g.cwiseProduct(y);
  });
}

Tensor log(const Tensor& x) {
  if ((x.value().array() <= 0.0).any()) throw NumericError("log: argument must be positive");
  return unary(x, x.value().array().log().matrix(),
               [](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 return g.cwiseQuotient(in);
               });
}

Tensor square(const Tensor& x) {
  return unary(x, x.value().array().square().matrix(),
               [](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 return 2.0 * g.cwiseProduct(in);
               });
}

Tensor max(const Tensor& x, double floor) {
  return unary(x, x.value().array().max(floor).matrix(),
               [floor](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 return (in.array() > floor).select(g, 0.0);
               });
}

Tensor sum(const Tensor& x) {
  return unary(x, Matrix::Constant(1, 1, x.value().sum()),
               [](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 return Matrix::Constant(in.rows(), in.cols(), g(0, 0));
               });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  return unary(x, Matrix::Constant(1, 1, x.value().sum() / n),
               [n](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 return Matrix::Constant(in.rows(), in.cols(), g(0, 0) / n);
               });
}

Tensor row_sum(const Tensor& x) {
  return unary(x, x.value().rowwise().sum(),
               [](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 return g.replicate(1, in.cols());
               });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  auto n = std::make_shared<Node>();
  n->value.resize(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    n->value.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    if (p.requires_grad() && !g_no_grad) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const auto& p : parts) n->parents.push_back(p.node());
    n->pullback = [](Node& self) {
      Index off = 0;
      for (auto& p : self.parents) {
        const Index c = p->value.cols();
        if (p->requires_grad) p->accumulate(self.grad.middleCols(off, c));
        off += c;
      }
    };
  }
  return Tensor::from_node(std::move(n));
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  if (start < 0 || count <= 0 || start + count > x.cols()) {
    throw ShapeError("slice_cols: range out of bounds for " + shape_str(x.value()));
  }
  return unary(x, x.value().middleCols(start, count),
               [start, count](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 Matrix full = Matrix::Zero(in.rows(), in.cols());
                 full.middleCols(start, count) = g;
                 return full;
               });
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
  if (start < 0 || count <= 0 || start + count > x.rows()) {
    throw ShapeError("slice_rows: range out of bounds for " + shape_str(x.value()));
  }
  return unary(x, x.value().middleRows(start, count),
               [start, count](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
                 Matrix full = Matrix::Zero(in.rows(), in.cols());
                 full.middleRows(start, count) = g;
                 return full;
               });
}

Tensor stop_gradient(const Tensor& x) {
  auto n = std::make_shared<Node>();
  n->value = x.value();
  return Tensor::from_node(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

void check_finite(const Tensor& x, const std::string& what) {
  if (!x.value().allFinite()) throw NumericError(what + ": non-finite values");
}

}  // namespace crawlrl

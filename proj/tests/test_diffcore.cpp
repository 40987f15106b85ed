#include "crawlrl/distributions.hpp"
#include "crawlrl/layers.hpp"
#include "crawlrl/params.hpp"
#include "fd.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace crawlrl;
using crawlrl::testing::check_gradients;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Tensor leaf(Matrix m) { return Tensor(std::move(m), true); }

// Contracts an arbitrary-shape output with fixed random weights so every
// output entry reaches the loss with a distinct coefficient.
Tensor contract(const Tensor& y, uint64_t seed) {
  Rng rng(seed);
  return sum(y * Tensor(random_matrix(y.rows(), y.cols(), rng)));
}

void expect_fd(const std::function<Tensor()>& f, const std::vector<std::pair<std::string, Tensor>>& leaves,
               double tol = 1e-5) {
  const auto rep = check_gradients(f, leaves, 40, 99);
  EXPECT_LT(rep.max_rel_err, tol) << rep.worst;
}

double kl_monte_carlo(double mq, double sq, double mp, double sp, int n, uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  auto logpdf = [](double x, double m, double s) {
    return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(s) - 0.5 * (x - m) * (x - m) / (s * s);
  };
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = mq + sq * z(rng);
    acc += logpdf(x, mq, sq) - logpdf(x, mp, sp);
  }
  return acc / n;
}

DiagGaussian gaussian1(double m, double s) { return {Tensor(Matrix::Constant(1, 1, m)), Tensor(Matrix::Constant(1, 1, s))}; }

}  // namespace

TEST(Tensor, RejectsNonFiniteData) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 1) = std::nan("");
  EXPECT_THROW(Tensor{m}, NumericError);
}

TEST(Tensor, ShapeMismatchIsChecked) {
  const Tensor a(Matrix::Zero(2, 3));
  const Tensor b(Matrix::Zero(3, 2));
  EXPECT_THROW(a + b, ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(concat_cols({a, Tensor(Matrix::Zero(3, 1))}), ShapeError);
}

TEST(Tensor, DomainErrors) {
  EXPECT_THROW(log(Tensor(Matrix::Constant(1, 2, -1.0))), NumericError);
  EXPECT_THROW(exp(Tensor(Matrix::Constant(1, 1, 1e4))), NumericError);
}

TEST(Tensor, ForwardExamples) {
  EXPECT_EQ(tanh(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(sigmoid(Tensor::scalar(0.0)).item(), 0.5, 1e-15);
}

TEST(Tensor, ActivationsMatchStdOnWideRange) {
  Matrix x(1, 2001);
  for (Index i = 0; i < x.cols(); ++i) x(0, i) = -40.0 + 0.04 * static_cast<double>(i);
  x(0, 1000) = 1e-9;
  const Matrix t = tanh(Tensor(x)).value();
  const Matrix s = sigmoid(Tensor(x)).value();
  const Matrix sp = softplus(Tensor(x)).value();
  for (Index i = 0; i < x.cols(); ++i) {
    const double v = x(0, i);
    EXPECT_NEAR(t(0, i), std::tanh(v), 1e-15 + 1e-14 * std::abs(std::tanh(v)));
    EXPECT_NEAR(s(0, i), 1.0 / (1.0 + std::exp(-v)), 1e-15);
    EXPECT_NEAR(sp(0, i), std::log1p(std::exp(v)), 1e-13 * std::max(1.0, std::abs(v)));
  }
}

TEST(Tensor, StopGradientBlocksOneFactor) {
  const Tensor x = leaf(Matrix::Constant(1, 1, 3.0));
  (stop_gradient(x) * x).backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 3.0);
}

TEST(Tensor, LinearMapGradient) {
  const Tensor w = leaf((Matrix(1, 2) << 1.0, 2.0).finished());
  const Tensor x((Matrix(1, 2) << 3.0, 4.0).finished());
  sum(w * x).backward();
  EXPECT_DOUBLE_EQ(w.grad()(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(w.grad()(0, 1), 4.0);
}

TEST(Tensor, TanhSlopeAtZero) {
  const Tensor w = leaf(Matrix::Zero(1, 1));
  tanh(w).backward();
  EXPECT_DOUBLE_EQ(w.grad()(0, 0), 1.0);
}

TEST(Tensor, BackwardAccumulatesUntilZeroed) {
  const Tensor w = leaf(Matrix::Constant(1, 1, 2.0));
  square(w).backward();
  square(w).backward();
  EXPECT_DOUBLE_EQ(w.grad()(0, 0), 8.0);
  Tensor(w).zero_grad();
  square(w).backward();
  EXPECT_DOUBLE_EQ(w.grad()(0, 0), 4.0);
}

TEST(Tensor, BackwardRequiresScalar) {
  const Tensor w = leaf(Matrix::Ones(2, 2));
  EXPECT_THROW((w * 2.0).backward(), ShapeError);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  const Tensor w = leaf(Matrix::Ones(1, 3));
  Tensor y;
  {
    NoGradGuard g;
    EXPECT_TRUE(NoGradGuard::active());
    y = sum(w * 2.0);
  }
  EXPECT_FALSE(NoGradGuard::active());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_DOUBLE_EQ(y.item(), 6.0);
}

TEST(TensorGradients, ElementwiseBinaryWithBroadcast) {
  Rng rng(1);
  const Tensor a = leaf(random_matrix(3, 4, rng));
  const Tensor row = leaf(random_matrix(1, 4, rng));
  const Tensor sc = leaf(random_matrix(1, 1, rng, 0.5, 1.5));
  const Tensor den = leaf(random_matrix(3, 4, rng, 0.5, 2.0));
  expect_fd([&] { return contract(a + row, 1) + contract(a - sc, 2); }, {{"a", a}, {"row", row}, {"sc", sc}});
  expect_fd([&] { return contract(a * row, 3) + contract(sc * a, 4); }, {{"a", a}, {"row", row}, {"sc", sc}});
  expect_fd([&] { return contract(a / den, 5) + contract(row / sc, 6); },
            {{"a", a}, {"den", den}, {"row", row}, {"sc", sc}});
  expect_fd([&] { return contract(-a + 2.0, 7) + contract(3.0 - a * 0.5, 8); }, {{"a", a}});
}

TEST(TensorGradients, MatmulAndAffine) {
  Rng rng(2);
  const Tensor x = leaf(random_matrix(5, 3, rng));
  const Tensor w = leaf(random_matrix(3, 4, rng));
  const Tensor b = leaf(random_matrix(1, 4, rng));
  expect_fd([&] { return contract(matmul(x, w), 1); }, {{"x", x}, {"w", w}});
  expect_fd([&] { return contract(affine(x, w, b), 2); }, {{"x", x}, {"w", w}, {"b", b}});
}

TEST(TensorGradients, UnaryOps) {
  Rng rng(3);
  const Tensor x = leaf(random_matrix(4, 3, rng, -2.0, 2.0));
  const Tensor pos = leaf(random_matrix(4, 3, rng, 0.2, 3.0));
  expect_fd([&] { return contract(tanh(x), 1); }, {{"x", x}});
  expect_fd([&] { return contract(sigmoid(x), 2); }, {{"x", x}});
  expect_fd([&] { return contract(softplus(x), 3); }, {{"x", x}});
  expect_fd([&] { return contract(exp(x), 4); }, {{"x", x}});
  expect_fd([&] { return contract(log(pos), 5); }, {{"pos", pos}});
  expect_fd([&] { return contract(square(x), 6); }, {{"x", x}});
}

TEST(TensorGradients, MaxWithConstant) {
  Matrix m(2, 3);
  m << -1.0, 0.4, 2.0, 1.5, -0.3, 0.9;
  const Tensor x = leaf(m);
  expect_fd([&] { return contract(max(x, 0.1), 1); }, {{"x", x}});
  sum(max(x, 0.1)).backward();
  EXPECT_EQ(x.grad()(0, 0), 0.0);
  EXPECT_EQ(x.grad()(0, 1), 1.0);
}

TEST(TensorGradients, ReductionsAndShapes) {
  Rng rng(4);
  const Tensor x = leaf(random_matrix(4, 5, rng));
  const Tensor y = leaf(random_matrix(4, 2, rng));
  expect_fd([&] { return sum(x) * 0.3 + mean(x * x); }, {{"x", x}});
  expect_fd([&] { return contract(row_sum(x), 1); }, {{"x", x}});
  expect_fd([&] { return contract(concat_cols({x, y, x}), 2); }, {{"x", x}, {"y", y}});
  expect_fd([&] { return contract(slice_cols(x, 1, 3), 3) + contract(slice_rows(x, 2, 2), 4); }, {{"x", x}});
}

TEST(TensorGradients, StopGradientPathContributesNothing) {
  Rng rng(14);
  const Tensor x = leaf(random_matrix(3, 3, rng));
  sum(stop_gradient(x) * 5.0 + x * 2.0).backward();
  EXPECT_EQ(x.grad(), Matrix::Constant(3, 3, 2.0));
}

TEST(TensorGradients, MlpLoss) {
  Rng rng(5);
  ParamSet p;
  const Mlp net(p, "mlp", 3, {8, 8}, 2, rng);
  const Tensor in(random_matrix(6, 3, rng));
  const auto rep = check_gradients([&] { return mean(square(net(in))); }, p.entries(), 40, 7);
  EXPECT_LT(rep.max_rel_err, 1e-5) << rep.worst;
}

TEST(Gaussian, KlIdenticalIsZero) {
  Rng rng(6);
  const DiagGaussian q{Tensor(random_matrix(3, 4, rng)), Tensor(random_matrix(3, 4, rng, 0.1, 2.0))};
  EXPECT_NEAR(diag_gaussian_kl(q, q).item(), 0.0, 1e-12);
}

TEST(Gaussian, KlUnitShiftMatchesMonteCarlo) {
  const double kl = diag_gaussian_kl(gaussian1(0.0, 1.0), gaussian1(1.0, 1.0)).item();
  EXPECT_NEAR(kl, kl_monte_carlo(0.0, 1.0, 1.0, 1.0, 400000, 11), 0.01);
  EXPECT_NEAR(kl, 0.5, 1e-12);
}

TEST(Gaussian, KlWideVsNarrowMatchesMonteCarlo) {
  const double kl = diag_gaussian_kl(gaussian1(0.0, 2.0), gaussian1(0.0, 1.0)).item();
  EXPECT_NEAR(kl, kl_monte_carlo(0.0, 2.0, 0.0, 1.0, 400000, 12), 0.02);
  EXPECT_NEAR(kl, 1.5 + std::log(0.5), 1e-12);
}

TEST(Gaussian, KlNonNegativeOnRandomPairs) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const DiagGaussian q{Tensor(random_matrix(2, 3, rng, -3, 3)), Tensor(random_matrix(2, 3, rng, 0.05, 3.0))};
    const DiagGaussian p{Tensor(random_matrix(2, 3, rng, -3, 3)), Tensor(random_matrix(2, 3, rng, 0.05, 3.0))};
    EXPECT_GT(diag_gaussian_kl(q, p).item(), 0.0);
  }
}

TEST(Gaussian, RejectsNonPositiveStddev) {
  EXPECT_THROW(diag_gaussian_kl(gaussian1(0, 0.0), gaussian1(0, 1)), std::invalid_argument);
  EXPECT_THROW(diag_gaussian_logprob(gaussian1(0, -1.0), Tensor::scalar(0)), std::invalid_argument);
}

TEST(Gaussian, LogProbExamples) {
  EXPECT_NEAR(diag_gaussian_logprob(gaussian1(0.0, 1.0), Tensor::scalar(0.0)).item(), -0.5 * std::log(2 * std::numbers::pi),
              1e-15);
  EXPECT_NEAR(diag_gaussian_logprob(gaussian1(0.0, 1.0), Tensor::scalar(0.0)).item(), -0.9189, 1e-4);
  EXPECT_NEAR(diag_gaussian_logprob(gaussian1(1.3, 0.4), Tensor::scalar(1.3)).item(),
              -0.5 * std::log(2 * std::numbers::pi) - std::log(0.4), 1e-15);
}

TEST(Gaussian, DensityIntegratesToOne) {
  const DiagGaussian d = gaussian1(0.3, 0.7);
  const int n = 20001;
  const double lo = -8.0, hi = 8.0, dx = (hi - lo) / (n - 1);
  Matrix x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = lo + dx * i;
  const DiagGaussian db{Tensor(Matrix::Constant(n, 1, 0.3)), Tensor(Matrix::Constant(n, 1, 0.7))};
  const Matrix lp = log_prob_rows(db, Tensor(x)).value();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::exp(lp(i, 0)) * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
  EXPECT_NEAR(acc * dx, 1.0, 1e-9);
  (void)d;
}

TEST(Gaussian, EntropyClosedForm) {
  const double e = entropy_rows(gaussian1(0.0, 0.5)).item();
  EXPECT_NEAR(e, 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 0.25), 1e-14);
}

TEST(Gaussian, KlAndLogProbGradients) {
  Rng rng(8);
  const Tensor mq = leaf(random_matrix(3, 2, rng)), sq = leaf(random_matrix(3, 2, rng, 0.3, 2.0));
  const Tensor mp = leaf(random_matrix(3, 2, rng)), sp = leaf(random_matrix(3, 2, rng, 0.3, 2.0));
  const Tensor x = leaf(random_matrix(3, 2, rng));
  const std::vector<std::pair<std::string, Tensor>> all{{"mq", mq}, {"sq", sq}, {"mp", mp}, {"sp", sp}, {"x", x}};
  expect_fd([&] { return contract(kl_divergence_rows({mq, sq}, {mp, sp}), 1); }, all);
  expect_fd([&] { return contract(log_prob_rows({mq, sq}, x), 2); }, all);
  expect_fd([&] { return contract(entropy_rows({mq, sq}), 3); }, all);
  expect_fd(
      [&] {
        Rng r(5);
        return contract(reparam_sample({mq, sq}, r), 4);
      },
      all);
}

TEST(Gaussian, ReparamDegenerateLimit) {
  Rng rng(9);
  const DiagGaussian d{Tensor(Matrix::Constant(1, 3, 0.7)), Tensor(Matrix::Constant(1, 3, 1e-12))};
  const Matrix s = reparam_sample(d, rng).value();
  EXPECT_NEAR((s.array() - 0.7).abs().maxCoeff(), 0.0, 1e-10);
}

TEST(Gaussian, ReparamSampleMean) {
  Rng rng(10);
  const int n = 100000;
  const DiagGaussian d{Tensor(Matrix::Constant(n, 1, 1.0)), Tensor(Matrix::Constant(n, 1, 1.0))};
  EXPECT_NEAR(reparam_sample(d, rng).value().mean(), 1.0, 0.02);
}

TEST(Gaussian, ReparamGradientToMeanIsOne) {
  Rng rng(11);
  const Tensor m = leaf(Matrix::Constant(1, 1, 0.2));
  const DiagGaussian d{m, Tensor(Matrix::Constant(1, 1, 0.5))};
  reparam_sample(d, rng).backward();
  EXPECT_DOUBLE_EQ(m.grad()(0, 0), 1.0);
}

TEST(Gaussian, ReparamBitReproducible) {
  const DiagGaussian d{Tensor(Matrix::Constant(4, 3, 0.1)), Tensor(Matrix::Constant(4, 3, 2.0))};
  Rng a(42), b(42);
  EXPECT_EQ(reparam_sample(d, a).value(), reparam_sample(d, b).value());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamSet p;
  Tensor& w = p.add("w", Matrix::Constant(2, 2, 0.5));
  w.node()->grad = Matrix::Zero(2, 2);
  p.adam_step(1e-3);
  EXPECT_EQ(w.value(), Matrix::Constant(2, 2, 0.5));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet p;
  Tensor& w = p.add("w", Matrix::Constant(1, 1, 1.0));
  (w * 1.0).backward();
  p.adam_step(1e-3);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(w.value()(0, 0), 1.0 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_FALSE(w.has_grad());
  EXPECT_EQ(p.step_count(), 1);
}

TEST(Adam, QuadraticBowlConverges) {
  ParamSet p;
  Tensor& w = p.add("w", Matrix::Zero(1, 3));
  const Tensor target((Matrix(1, 3) << 1.5, -2.0, 0.25).finished());
  int steps = 0;
  for (; steps < 5000; ++steps) {
    sum(square(w - target)).backward();
    p.adam_step(1e-2);
  }
  EXPECT_LT((w.value() - target.value()).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Adam, NanGradientNamesParameter) {
  ParamSet p;
  p.add("first", Matrix::Zero(1, 1)).node()->grad = Matrix::Zero(1, 1);
  p.add("culprit", Matrix::Zero(1, 2)).node()->grad = Matrix::Constant(1, 2, std::nan(""));
  try {
    p.adam_step(1e-3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("culprit"), std::string::npos) << e.what();
  }
}

TEST(Adam, ClipsGlobalNorm) {
  ParamSet p;
  Tensor& w = p.add("w", Matrix::Zero(1, 2));
  w.node()->grad = (Matrix(1, 2) << 600.0, 800.0).finished();
  const double norm = p.adam_step(1e-3);
  EXPECT_DOUBLE_EQ(norm, 1000.0);
  // m = (1 - beta1) * clipped gradient, clipped norm 100.
  EXPECT_NEAR(p.slots("w").m.norm(), 0.1 * 100.0, 1e-9);
}

TEST(ParamSetTest, RejectsDuplicateNames) {
  ParamSet p;
  p.add("a", Matrix::Zero(1, 1));
  EXPECT_THROW(p.add("a", Matrix::Zero(1, 1)), std::invalid_argument);
}

TEST(CheckpointTest, RoundTripsParametersAndOptimizerState) {
  Rng rng(12);
  ParamSet p;
  const Mlp net(p, "net", 3, {5}, 2, rng);
  sum(square(net(Tensor(random_matrix(4, 3, rng))))).backward();
  p.adam_step(1e-2);
  Checkpoint ck;
  ck.metadata = "k = v\n";
  ck.put_params("net", p);
  const auto path = std::filesystem::temp_directory_path() / "crawlrl_ckpt_roundtrip.bin";
  ck.write(path);

  Rng rng2(99);
  ParamSet q;
  const Mlp other(q, "net", 3, {5}, 2, rng2);
  const Checkpoint back = Checkpoint::read(path);
  EXPECT_EQ(back.metadata, "k = v\n");
  back.get_params("net", q);
  for (size_t i = 0; i < p.size(); ++i) {
    const auto& [name, t] = p.entries()[i];
    EXPECT_EQ(t.value(), q.at(name).value()) << name;
    EXPECT_EQ(p.slots(name).m, q.slots(name).m) << name;
    EXPECT_EQ(p.slots(name).v, q.slots(name).v) << name;
  }
  EXPECT_EQ(q.step_count(), 1);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, BadMagicIsRejected) {
  const auto path = std::filesystem::temp_directory_path() / "crawlrl_bad_magic.bin";
  std::ofstream(path, std::ios::binary) << "NOTACKPT and more bytes";
  EXPECT_THROW(Checkpoint::read(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, ShapeMismatchIsRejected) {
  Rng rng(13);
  ParamSet p;
  p.add("w", Matrix::Zero(2, 2));
  Checkpoint ck;
  ck.put_params("s", p);
  ParamSet q;
  q.add("w", Matrix::Zero(3, 2));
  EXPECT_THROW(ck.get_params("s", q), CheckpointError);
}

#include <gtest/gtest.h>

#include <random>

#include "mrfinn/fcn.hpp"
#include "mrfinn/gradcheck.hpp"
#include "mrfinn/nn.hpp"

using namespace mrfinn;
using namespace mrfinn::nn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = g(rng);
  return m;
}

}  // namespace

TEST(Dense, ZeroLayerGivesZero) {
  Index cursor = 0;
  const auto layer = allocate_dense(cursor, 4, 3, Activation::relu);
  EXPECT_EQ(cursor, 15);
  const VectorXd p = VectorXd::Zero(cursor);
  EXPECT_EQ(dense_forward(layer, p, randn(4, 2, 1)), MatrixXd::Zero(3, 2));
}

TEST(Dense, ScalarArithmetic) {
  Index cursor = 0;
  const auto layer = allocate_dense(cursor, 1, 1, Activation::linear);
  VectorXd p(2);
  p << 2.0, 1.0;
  EXPECT_DOUBLE_EQ(dense_forward(layer, p, MatrixXd::Constant(1, 1, 3.0))(0, 0), 7.0);
}

TEST(Dense, ReluBlocksNegativePreactivation) {
  Index cursor = 0;
  const auto layer = allocate_dense(cursor, 1, 1, Activation::relu);
  VectorXd p(2);
  p << 1.0, -5.0;
  DenseCache cache;
  EXPECT_EQ(dense_forward(layer, p, MatrixXd::Constant(1, 1, 2.0), &cache)(0, 0), 0.0);
  VectorXd g = VectorXd::Zero(2);
  const MatrixXd gin = dense_backward(layer, p, cache, MatrixXd::Constant(1, 1, 1.0), g);
  EXPECT_EQ(gin(0, 0), 0.0);
  EXPECT_EQ(g, VectorXd::Zero(2));
}

TEST(Dense, ZeroUpstreamGivesZeroGradients) {
  Index cursor = 0;
  const auto layer = allocate_dense(cursor, 3, 2, Activation::relu);
  VectorXd p = randn(cursor, 1, 2);
  DenseCache cache;
  dense_forward(layer, p, randn(3, 4, 3), &cache);
  VectorXd g = VectorXd::Zero(cursor);
  EXPECT_EQ(dense_backward(layer, p, cache, MatrixXd::Zero(2, 4), g), MatrixXd::Zero(3, 4));
  EXPECT_EQ(g, VectorXd::Zero(cursor));
}

TEST(Dense, ShapeMismatch) {
  Index cursor = 0;
  const auto layer = allocate_dense(cursor, 3, 2, Activation::linear);
  EXPECT_THROW(dense_forward(layer, VectorXd::Zero(cursor), MatrixXd::Zero(4, 1)), ShapeError);
  EXPECT_THROW(dense_forward(layer, VectorXd::Zero(cursor - 1), MatrixXd::Zero(3, 1)), ShapeError);
}

TEST(Dense, InitRange) {
  Index cursor = 0;
  const auto layer = allocate_dense(cursor, 10, 20, Activation::relu);
  VectorXd p = VectorXd::Constant(cursor, 5.0);
  Rng rng(4);
  init_dense(layer, p, rng);
  EXPECT_LE(layer.weights(p).cwiseAbs().maxCoeff(), std::sqrt(6.0 / 30.0));
  EXPECT_EQ(layer.biases(p), VectorXd::Zero(20));
}

TEST(Mse, Values) {
  MatrixXd pred(2, 1), target = MatrixXd::Zero(2, 1);
  pred << 1, 1;
  const auto r = mse(pred, target);
  EXPECT_DOUBLE_EQ(r.loss, 1.0);
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(r.grad(1, 0), 1.0);
  const auto z = mse(pred, pred);
  EXPECT_EQ(z.loss, 0.0);
  EXPECT_EQ(z.grad, MatrixXd::Zero(2, 1));
  EXPECT_THROW(mse(pred, MatrixXd::Zero(1, 2)), ShapeError);
}

TEST(Mse, LeadingRowsIgnoresTail) {
  MatrixXd pred = randn(6, 3, 5), target = randn(6, 3, 6);
  const auto r = mse_leading_rows(pred, target, 2);
  EXPECT_NEAR(r.loss, (pred.topRows(2) - target.topRows(2)).squaredNorm() / 6.0, 1e-15);
  EXPECT_EQ(r.grad.bottomRows(4), MatrixXd::Zero(4, 3));
}

TEST(Adam, ZeroGradientLeavesParams) {
  VectorXd p = randn(5, 1, 7);
  const VectorXd before = p;
  AdamState s(5, {});
  adam_step(p, VectorXd::Zero(5), s);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepIsSignTimesRate) {
  VectorXd p = VectorXd::Zero(4), g(4);
  g << 3.0, -0.02, 1e-3, -50.0;
  AdamState s(4, {0.01, 0.9, 0.999, 1e-8});
  adam_step(p, g, s);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(p[i], -0.01 * (g[i] > 0 ? 1.0 : -1.0), 1e-7) << i;
}

TEST(Adam, Deterministic) {
  VectorXd a = randn(6, 1, 8), b = a;
  AdamState sa(6, {}), sb(6, {});
  for (int k = 0; k < 5; ++k) {
    const VectorXd g = randn(6, 1, 100 + k);
    adam_step(a, g, sa);
    adam_step(b, g, sb);
  }
  EXPECT_EQ(a, b);
  EXPECT_THROW(adam_step(a, VectorXd::Zero(5), sa), ShapeError);
}

TEST(Gradcheck, QuadraticIsExact) {
  MatrixXd a = randn(4, 4, 9);
  const MatrixXd q = a * a.transpose();
  auto loss = [&](const VectorXd& x) { return 0.5 * x.dot(q * x); };
  const VectorXd x = randn(4, 1, 10);
  const auto rep = gradcheck(loss, x, q * x, 1e-8);
  EXPECT_TRUE(rep.passed) << rep.max_relative_error;
  EXPECT_EQ(rep.checked, 4);
}

TEST(Gradcheck, DenseNetPassesAndCorruptionFails) {
  FcnModel net(6, 5, 3, 21);
  const MatrixXd x = randn(6, 4, 11), t = randn(3, 4, 12);
  auto loss = [&](const VectorXd& theta) {
    FcnModel probe = net;
    probe.set_parameters(theta);
    return mse(probe.forward(x), t).loss;
  };
  FcnCache cache;
  const auto l = mse(net.forward(x, &cache), t);
  VectorXd g = VectorXd::Zero(net.parameter_count());
  net.backward(cache, l.grad, g);
  EXPECT_TRUE(gradcheck(loss, net.parameters(), g, 1e-4).passed);

  g[3] += 0.5;
  const auto bad = gradcheck(loss, net.parameters(), g, 1e-4);
  EXPECT_FALSE(bad.passed);
  EXPECT_EQ(bad.worst_index, 3);
}

TEST(Fcn, ShapeAndCounts) {
  const auto net = FcnModel::for_fingerprints(175, 5, 0);
  EXPECT_EQ(net.parameter_count(), 197105);
  EXPECT_EQ(net.forward(MatrixXd::Zero(350, 2)).rows(), 5);
  EXPECT_THROW(net.forward(MatrixXd::Zero(349, 1)), ShapeError);
  FcnModel zero(4, 3, 2, 1);
  zero.set_parameters(VectorXd::Zero(zero.parameter_count()));
  EXPECT_EQ(zero.forward(randn(4, 2, 1)), MatrixXd::Zero(2, 2));
}

TEST(Fcn, StaleCacheRejected) {
  FcnModel net(4, 3, 2, 1);
  FcnCache cache;
  net.forward(randn(4, 2, 1), &cache);
  net.mutable_parameters()[0] += 1.0;
  VectorXd g = VectorXd::Zero(net.parameter_count());
  EXPECT_THROW(net.backward(cache, MatrixXd::Ones(2, 2), g), StaleCacheError);
}

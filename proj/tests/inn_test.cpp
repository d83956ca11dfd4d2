#include <gtest/gtest.h>

#include <random>

#include "mrfinn/gradcheck.hpp"
#include "mrfinn/inn.hpp"

using namespace mrfinn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = g(rng);
  return m;
}

InnModel randomized(Eigen::Index dim, std::uint64_t seed, double sd = 0.4) {
  InnModel m(dim, 2, 6, seed);
  m.set_parameters(randn(m.parameter_count(), 1, seed + 1000, sd));
  return m;
}

double max_rel_roundtrip(const InnModel& m, const MatrixXd& x) {
  const MatrixXd a = m.inverse(m.forward(x)), b = m.forward(m.inverse(x));
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    worst = std::max({worst, (a.col(j) - x.col(j)).norm() / x.col(j).norm(),
                      (b.col(j) - x.col(j)).norm() / x.col(j).norm()});
  return worst;
}

}  // namespace

TEST(Coupling, TwoDimensionalHandExample) {
  InnModel m(2, 1, 3, 0);
  VectorXd p = VectorXd::Zero(m.parameter_count());
  m.blocks()[0].t2.output.biases(p)[0] = 1.0;
  m.set_parameters(p);
  m.set_permutation(0, {0, 1});
  MatrixXd u(2, 1);
  u << 1, 2;
  const MatrixXd v = m.forward(u);
  EXPECT_DOUBLE_EQ(v(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(v(1, 0), 2.0);
  const MatrixXd back = m.inverse(v);
  EXPECT_DOUBLE_EQ(back(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(back(1, 0), 2.0);
}

TEST(Coupling, ZeroParametersPermuteOnly) {
  InnModel m(6, 2, 4, 3);
  m.set_parameters(VectorXd::Zero(m.parameter_count()));
  const MatrixXd u = randn(6, 3, 1);
  const auto& b = m.blocks();
  const MatrixXd twice = detail::gather_rows(detail::gather_rows(u, b[0].permutation), b[1].permutation);
  EXPECT_EQ(m.forward(u), twice);
  EXPECT_EQ(m.inverse(twice), u);
  const MatrixXd once = coupling_forward(b[0], m.parameters(), u, m.clamp());
  EXPECT_EQ(once, detail::gather_rows(u, b[0].permutation));
  EXPECT_EQ(coupling_inverse(b[0], m.parameters(), once, m.clamp()), u);
}

TEST(Coupling, SingleBlockInverseIdentity) {
  const auto m = randomized(10, 5);
  const MatrixXd u = randn(10, 20, 2);
  const auto& b = m.blocks()[0];
  const MatrixXd r = coupling_inverse(b, m.parameters(), coupling_forward(b, m.parameters(), u, m.clamp()), m.clamp());
  EXPECT_LT((r - u).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Inn, BijectivityProperty) {
  // Weight sd well above 0.4 pushes intermediates to 1e5..1e10 times the
  // input norm and the round trip then loses digits to cancellation in t.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    EXPECT_LE(max_rel_roundtrip(randomized(8, seed), randn(8, 1000, seed + 7)), 1e-9);
    EXPECT_LE(max_rel_roundtrip(randomized(8, seed), randn(8, 1000, seed + 9, 3.0)), 1e-9);
  }
  const auto big = InnModel::for_fingerprints(175, 4);
  EXPECT_EQ(big.dim(), 350);
  EXPECT_LE(max_rel_roundtrip(big, randn(350, 1000, 5)), 1e-9);
  const MatrixXd x = pad_rows(randn(5, 50, 6, 0.3), 350);
  EXPECT_LT((big.inverse(big.forward(x)) - x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Inn, SoftClampBoundsScale) {
  for (double s : {-1e6, -3.0, 0.0, 2.0, 1e6}) {
    EXPECT_LT(std::abs(detail::soft_clamp(s, 4.0)), 4.0);
  }
  EXPECT_NEAR(detail::soft_clamp(1e-4, 4.0), 1e-4 * 2.0 / std::numbers::pi, 1e-12);
  const double h = 1e-6;
  EXPECT_NEAR(detail::soft_clamp_derivative(1.3, 4.0),
              (detail::soft_clamp(1.3 + h, 4.0) - detail::soft_clamp(1.3 - h, 4.0)) / (2 * h), 1e-8);
}

TEST(Inn, ParameterCount) {
  EXPECT_EQ(InnModel::for_fingerprints(175, 0).parameter_count(), 360824);
  EXPECT_EQ(InnModel::for_fingerprints(175, 0).blocks().size(), 2u);
}

TEST(Inn, PermutationsAreSeededBijections) {
  const auto a = InnModel::for_fingerprints(20, 1), b = InnModel::for_fingerprints(20, 1);
  const auto c = InnModel::for_fingerprints(20, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_TRUE(is_permutation_of_range(a.blocks()[k].permutation));
    EXPECT_EQ(a.blocks()[k].permutation, b.blocks()[k].permutation);
  }
  EXPECT_NE(a.blocks()[0].permutation, a.blocks()[1].permutation);
  EXPECT_NE(a.blocks()[0].permutation, c.blocks()[0].permutation);
  EXPECT_EQ(a.parameters(), b.parameters());

  InnModel m(4, 1, 2, 0);
  EXPECT_THROW(m.set_permutation(0, {0, 1, 1, 3}), InvalidArgument);
  EXPECT_THROW(m.set_permutation(0, {0, 1, 2}), InvalidArgument);
}

TEST(Inn, GradientsBothDirections) {
  const auto m = randomized(8, 11);
  const MatrixXd in = randn(8, 3, 12), target = randn(8, 3, 13);
  for (Direction dir : {Direction::forward, Direction::inverse}) {
    auto run = [&](const InnModel& model, InnCache* cache) {
      return dir == Direction::forward ? model.forward(in, cache) : model.inverse(in, cache);
    };
    auto loss = [&](const VectorXd& theta) {
      InnModel probe = m;
      probe.set_parameters(theta);
      return 0.5 * (run(probe, nullptr) - target).squaredNorm();
    };
    InnCache cache;
    const MatrixXd out = run(m, &cache);
    VectorXd g = VectorXd::Zero(m.parameter_count());
    const MatrixXd g_in = m.backward(cache, out - target, g);
    const auto rep = nn::gradcheck(loss, m.parameters(), g, 1e-4);
    EXPECT_TRUE(rep.passed) << "direction " << static_cast<int>(dir) << " err " << rep.max_relative_error;

    // Input gradient against central differences as well.
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
      MatrixXd up = in, down = in;
      up(i, 1) += h;
      down(i, 1) -= h;
      auto eval = [&](const MatrixXd& z) {
        return 0.5 * ((dir == Direction::forward ? m.forward(z) : m.inverse(z)) - target).squaredNorm();
      };
      EXPECT_NEAR(g_in(i, 1), (eval(up) - eval(down)) / (2 * h), 1e-5 * std::max(1.0, std::abs(g_in(i, 1))));
    }
  }
}

TEST(Inn, ZeroUpstreamZeroGradient) {
  const auto m = randomized(8, 3);
  InnCache cache;
  m.forward(randn(8, 2, 1), &cache);
  VectorXd g = VectorXd::Zero(m.parameter_count());
  EXPECT_EQ(m.backward(cache, MatrixXd::Zero(8, 2), g), MatrixXd::Zero(8, 2));
  EXPECT_EQ(g, VectorXd::Zero(m.parameter_count()));
}

TEST(Inn, StaleCacheAndShapeErrors) {
  auto m = randomized(8, 3);
  InnCache cache;
  m.forward(randn(8, 2, 1), &cache);
  m.mutable_parameters()[0] += 0.1;
  VectorXd g = VectorXd::Zero(m.parameter_count());
  EXPECT_THROW(m.backward(cache, MatrixXd::Zero(8, 2), g), StaleCacheError);
  EXPECT_THROW(m.forward(MatrixXd::Zero(7, 1)), ShapeError);
  EXPECT_THROW(m.inverse(MatrixXd::Zero(9, 1)), ShapeError);
  EXPECT_THROW(pad_rows(MatrixXd::Zero(9, 1), 8), ShapeError);
  EXPECT_THROW(InnModel(7, 2, 4, 0), InvalidArgument);
}

TEST(Inn, FromPartsRestoresModel) {
  const auto m = randomized(8, 4);
  std::vector<std::vector<Eigen::Index>> perms;
  for (const auto& b : m.blocks()) perms.push_back(b.permutation);
  const auto r = InnModel::from_parts(8, m.hidden(), m.clamp(), 999, perms, m.parameters());
  const MatrixXd x = randn(8, 4, 2);
  EXPECT_EQ(r.forward(x), m.forward(x));
}

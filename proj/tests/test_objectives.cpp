#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "vadkit/recon.hpp"
#include "vadkit/svdd.hpp"

using namespace vadkit;
using vadkit::test::random_tensor;

namespace {

Center<double> center_of(std::vector<double> c) { return Center<double>::frozen_at(std::move(c)); }

}  // namespace

TEST(Center, SingleClipSnapsSmallCoordinates) {
  Center<double> c;
  c.initialize(Tensor<double>({1, 3}, std::vector<double>{0.5, -0.3, 0.0}));
  ASSERT_TRUE(c.frozen());
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{0.5, -0.3, 0.1}));
}

TEST(Center, ZeroMeanSnapsPositive) {
  Center<double> c;
  c.initialize(Tensor<double>({2, 2}, std::vector<double>{1, 1, -1, -1}));
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{0.1, 0.1}));
}

TEST(Center, SnapPreservesSign) {
  Center<double> c;
  c.initialize(Tensor<double>({1, 2}, std::vector<double>{-0.05, 0.02}));
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{-0.1, 0.1}));
}

TEST(Center, FrozenAfterInitAndEmptySampleRejected) {
  Center<double> c;
  EXPECT_THROW(c.initialize(Tensor<double>({0, 3})), Error);
  c.initialize(Tensor<double>({1, 2}, std::vector<double>{1, 2}));
  EXPECT_THROW(c.initialize(Tensor<double>({1, 2}, std::vector<double>{3, 4})), Error);
}

TEST(SvddLoss, Examples) {
  const auto c = center_of({1.0, 2.0});
  EXPECT_EQ(svdd_loss(Tensor<double>({2, 2}, std::vector<double>{1, 2, 1, 2}), c, 0.0, 0.0).value, 0.0);
  EXPECT_DOUBLE_EQ(svdd_loss(Tensor<double>({1, 2}, std::vector<double>{4, 6}), c, 0.0, 0.0).value, 25.0);
  // squared distances 1 and 3, lambda 2, ||W||^2 = 5 -> 2 + 5
  const Tensor<double> f({2, 2}, std::vector<double>{2, 2, 1 + std::sqrt(2.0), 3});
  EXPECT_NEAR(svdd_loss(f, c, 5.0, 2.0).value, 7.0, 1e-12);
}

TEST(SvddLoss, Errors) {
  const auto c = center_of({1.0, 2.0});
  EXPECT_THROW(svdd_loss(Tensor<double>({1, 2}), c, 0.0, -1.0), Error);
  EXPECT_THROW(svdd_loss(Tensor<double>({1, 3}), c, 0.0, 0.0), ShapeError);
  EXPECT_THROW(svdd_loss(Tensor<double>({1, 2}), Center<double>(), 0.0, 0.0), Error);
}

TEST(SvddLoss, FeatureGradientIsClosedForm) {
  std::mt19937_64 rng(1);
  const auto c = center_of({0.3, -0.2, 0.5});
  const auto f = random_tensor<double>({4, 3}, rng);
  const auto loss = svdd_loss(f, c, 0.0, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_DOUBLE_EQ(loss.dfeatures[i * 3 + j], 2.0 * (f[i * 3 + j] - c.values()[j]) / 4.0);
}

TEST(SvddLoss, MatchesFiniteDifferencesIncludingDecay) {
  std::mt19937_64 rng(2);
  const auto c = center_of({0.3, -0.2, 0.5});
  auto f = random_tensor<double>({3, 3}, rng);
  ParameterSet<double> ps;
  ps.add("w", random_tensor<double>({2, 2}, rng));
  ps.add("b", random_tensor<double>({2}, rng), false);
  const double lambda = 0.7;
  auto loss = [&] { return svdd_loss(f, c, ps.decay_norm(), lambda).value; };
  const auto an = svdd_loss(f, c, ps.decay_norm(), lambda);
  EXPECT_LT(vadkit::test::relative_error(an.dfeatures, vadkit::test::numeric_gradient(f, loss)), 1e-8);
  Gradients<double> g = ps.zeros_like();
  add_weight_decay(ps, g, lambda);
  EXPECT_LT(vadkit::test::worst_parameter_error(ps, g, loss), 1e-8);
  for (double v : g[1].vec()) EXPECT_EQ(v, 0.0);
}

TEST(SvddLoss, ZeroWeightsCannotReachZeroLoss) {
  // A bias-free network with zero weights outputs 0; the loss is then ||c||^2.
  Center<double> c;
  c.initialize(Tensor<double>({1, 3}, std::vector<double>{0.0, 0.01, -0.02}));
  const auto loss = svdd_loss(Tensor<double>({2, 3}), c, 0.0, 0.0);
  EXPECT_NEAR(loss.value, 0.03, 1e-15);
  EXPECT_GT(loss.value, 0.0);
}

TEST(SvddScore, Examples) {
  const auto c = center_of({1.0, 1.0});
  const std::vector<double> same{1.0, 1.0}, off{1.0, 3.0};
  EXPECT_EQ(svdd_score<double>(same, c), 0.0);
  EXPECT_EQ(svdd_score<double>(off, c), 4.0);
  EXPECT_THROW(svdd_score<double>(std::vector<double>{1.0}, c), Error);
}

TEST(SvddScore, RotationInvariantAndSymmetric) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const double th = u(rng);
    const std::vector<double> f{u(rng), u(rng)}, c{u(rng), u(rng)};
    auto rot = [&](const std::vector<double>& v) {
      return std::vector<double>{std::cos(th) * v[0] - std::sin(th) * v[1],
                                 std::sin(th) * v[0] + std::cos(th) * v[1]};
    };
    const double s = svdd_score<double>(f, center_of(c));
    EXPECT_GE(s, 0.0);
    EXPECT_NEAR(s, svdd_score<double>(rot(f), center_of(rot(c))), 1e-12);
    EXPECT_DOUBLE_EQ(s, svdd_score<double>(c, center_of(f)));
  }
}

TEST(ReconLoss, Examples) {
  std::vector<Tensor<double>> x{Tensor<double>({2}, std::vector<double>{1, 2})};
  std::vector<Tensor<double>> zero{Tensor<double>({2})};
  EXPECT_EQ(recon_loss<double>(x, x).value, 0.0);
  EXPECT_EQ(recon_loss<double>(x, zero).value, 5.0);
  // per-clip squared errors 2 and 4
  std::vector<Tensor<double>> a{Tensor<double>({2}, 1.0), Tensor<double>({2}, std::sqrt(2.0))};
  std::vector<Tensor<double>> b{Tensor<double>({2}), Tensor<double>({2})};
  EXPECT_NEAR(recon_loss<double>(a, b).value, 3.0, 1e-15);
}

TEST(ReconLoss, ShapeMismatchAndEmptyBatch) {
  std::vector<Tensor<double>> x{Tensor<double>({2})}, y{Tensor<double>({3})};
  EXPECT_THROW(recon_loss<double>(x, y), ShapeError);
  EXPECT_THROW(recon_loss<double>(std::vector<Tensor<double>>{}, std::vector<Tensor<double>>{}), Error);
  EXPECT_THROW(recon_score(x[0], y[0]), ShapeError);
}

TEST(ReconLoss, GradientClosedFormAndBatchOfOneEqualsScore) {
  std::mt19937_64 rng(4);
  std::vector<Tensor<double>> x, xh;
  for (int i = 0; i < 3; ++i) {
    x.push_back(random_tensor<double>({2, 3, 4}, rng));
    xh.push_back(random_tensor<double>({2, 3, 4}, rng));
  }
  const auto loss = recon_loss<double>(x, xh);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < x[i].size(); ++k)
      EXPECT_DOUBLE_EQ(loss.dxhat[i][k], -2.0 * (x[i][k] - xh[i][k]) / 3.0);
  const std::vector<Tensor<double>> one{x[0]}, one_hat{xh[0]};
  EXPECT_DOUBLE_EQ(recon_loss<double>(one, one_hat).value, recon_score(x[0], xh[0]));
  auto f = [&] { return recon_loss<double>(x, xh).value; };
  EXPECT_LT(vadkit::test::relative_error(loss.dxhat[1], vadkit::test::numeric_gradient(xh[1], f)), 1e-8);
}

TEST(ReconScore, Examples) {
  Tensor<double> x({4}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  EXPECT_EQ(recon_score(x, x), 0.0);
  Tensor<double> y = x;
  y[2] -= 0.5;
  EXPECT_NEAR(recon_score(x, y), 0.25, 1e-15);
  EXPECT_EQ(recon_score(x, y), recon_score(y, x));
  EXPECT_NEAR(recon_score(x, y, Reduction::Mean), 0.0625, 1e-15);
}

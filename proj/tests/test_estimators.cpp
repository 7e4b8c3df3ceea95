#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "twoarm/error.hpp"
#include "twoarm/estimators.hpp"
#include "twoarm/rng.hpp"

using namespace twoarm;

namespace {

Eigen::VectorXd random_probs(Rng& rng, Eigen::Index n, double lo = 0.05) {
  Eigen::VectorXd p(n);
  for (Eigen::Index i = 0; i < n; ++i) p(i) = lo + (1 - lo) * uniform01(rng);
  return p;
}

Eigen::VectorXd random_y(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = std::exp(std_normal(rng));
  return y;
}

// Residual-variance oracle written from the estimator definition.
double variance_oracle(const Eigen::VectorXd& y_c, const Eigen::VectorXd& pi_c, const Eigen::VectorXd& y_r,
                       const Eigen::VectorXd& pi_r, double mu) {
  double W = 0;
  for (Eigen::Index i = 0; i < pi_c.size(); ++i) W += 1 / pi_c(i);
  for (Eigen::Index i = 0; i < pi_r.size(); ++i) W += 1 / pi_r(i);
  double v = 0;
  for (Eigen::Index i = 0; i < y_c.size(); ++i) {
    const double u = (1 / pi_c(i)) / W * (y_c(i) - mu);
    v += (1 - pi_c(i)) * u * u;
  }
  std::vector<double> ur;
  for (Eigen::Index i = 0; i < y_r.size(); ++i) ur.push_back((1 / pi_r(i)) / W * (y_r(i) - mu));
  double m = 0;
  for (double u : ur) m += u;
  m /= static_cast<double>(ur.size());
  double ss = 0;
  for (double u : ur) ss += (u - m) * (u - m);
  const double nr = static_cast<double>(ur.size());
  return v + nr / (nr - 1) * ss;
}

}  // namespace

TEST(Hajek, CensusAndEqualWeights) {
  Rng rng = make_stream(41);
  const Eigen::VectorXd y_c = random_y(rng, 30), y_r = random_y(rng, 20);
  const Eigen::VectorXd ones_c = Eigen::VectorXd::Ones(30), ones_r = Eigen::VectorXd::Ones(20);
  const double mean = (y_c.sum() + y_r.sum()) / 50.0;
  EXPECT_NEAR(hajek_mean(y_c, ones_c, y_r, ones_r), mean, 1e-13);
  EXPECT_NEAR(hajek_mean(y_c, 0.3 * ones_c, y_r, 0.3 * ones_r), mean, 1e-13);
}

TEST(Hajek, MatchesTwoPassSummation) {
  Rng rng = make_stream(42);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd y_c = random_y(rng, 50), y_r = random_y(rng, 30);
    const Eigen::VectorXd p_c = random_probs(rng, 50), p_r = random_probs(rng, 30);
    double num = 0, den = 0;
    for (int i = 0; i < 50; ++i) num += y_c(i) / p_c(i);
    for (int i = 0; i < 30; ++i) num += y_r(i) / p_r(i);
    for (int i = 0; i < 50; ++i) den += 1 / p_c(i);
    for (int i = 0; i < 30; ++i) den += 1 / p_r(i);
    EXPECT_NEAR(hajek_mean(y_c, p_c, y_r, p_r), num / den, 1e-12);
    // Rescaling every weight by one constant leaves the estimate unchanged.
    WeightedSampleDraw s = make_weighted_draw(y_c, p_c, y_r, p_r);
    const double a = hajek_mean(s);
    s.weights *= 3.7;
    EXPECT_NEAR(hajek_mean(s), a, 1e-12);
  }
}

TEST(Hajek, Errors) {
  EXPECT_THROW(hajek_mean(Eigen::VectorXd(), Eigen::VectorXd(), Eigen::VectorXd(), Eigen::VectorXd()),
               ValidationError);
  Eigen::VectorXd y(1), p(1);
  y << 1;
  p << 0;
  EXPECT_THROW(make_weighted_draw(y, p, y, Eigen::VectorXd::Ones(1)), ValidationError);
}

TEST(TaylorVariance, ConstantResponseGivesZero) {
  Rng rng = make_stream(43);
  const Eigen::VectorXd p_c = random_probs(rng, 10), p_r = random_probs(rng, 8);
  const auto s = make_weighted_draw(Eigen::VectorXd::Constant(10, 2.5), p_c, Eigen::VectorXd::Constant(8, 2.5), p_r);
  EXPECT_NEAR(taylor_within_variance(s, 2.5), 0.0, 1e-15);
}

TEST(TaylorVariance, EqualWeightSingleArmReducesToSampleVarianceOverN) {
  // Reference arm only, equal weights: v = n/(n-1) sum ((y - ybar)/n)^2 = s^2 / n.
  Rng rng = make_stream(44);
  const Eigen::VectorXd y = random_y(rng, 25);
  const auto s = make_weighted_draw(Eigen::VectorXd(), Eigen::VectorXd(), y, Eigen::VectorXd::Constant(25, 0.1));
  const double ybar = y.mean();
  const double s2 = (y.array() - ybar).square().sum() / 24.0;
  EXPECT_NEAR(taylor_within_variance(s, hajek_mean(s)), s2 / 25.0, 1e-14);
}

TEST(TaylorVariance, MatchesResidualOracle) {
  Rng rng = make_stream(45);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd y_c = random_y(rng, 40), y_r = random_y(rng, 25);
    const Eigen::VectorXd p_c = random_probs(rng, 40), p_r = random_probs(rng, 25);
    const auto s = make_weighted_draw(y_c, p_c, y_r, p_r);
    const double mu = hajek_mean(s);
    EXPECT_NEAR(taylor_within_variance(s, mu), variance_oracle(y_c, p_c, y_r, p_r, mu), 1e-10);
  }
  EXPECT_THROW(taylor_within_variance(make_weighted_draw(Eigen::VectorXd(), Eigen::VectorXd(),
                                                         Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)),
                                      1.0),
               ValidationError);
}

TEST(MultipleImputation, HandArithmetic) {
  const MIVarianceResult r = mi_total_variance(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(0.1, 0.1, 0.1));
  EXPECT_DOUBLE_EQ(r.point, 2.0);
  EXPECT_NEAR(r.within, 0.1, 1e-15);
  EXPECT_NEAR(r.between, 1.0, 1e-15);
  EXPECT_NEAR(r.total, 1.4 + 0.1 / 3.0, 1e-14);
  EXPECT_EQ(r.J, 3);
  // Rubin's df: (J-1)(1 + U/((1+1/J)B))^2.
  EXPECT_NEAR(r.df, 2.0 * std::pow(1.0 + 0.1 / (4.0 / 3.0), 2), 1e-12);
  EXPECT_LE(r.lo, r.point);
  EXPECT_GE(r.hi, r.point);
}

TEST(MultipleImputation, ZeroBetweenAndZeroWithin) {
  const MIVarianceResult a = mi_total_variance(Eigen::VectorXd::Constant(10, 5.0), Eigen::VectorXd::Constant(10, 0.4));
  EXPECT_DOUBLE_EQ(a.total, 0.4);
  EXPECT_TRUE(std::isinf(a.df));
  EXPECT_NEAR(a.hi - a.point, 1.6448536269514722 * std::sqrt(0.4), 1e-12);

  Eigen::VectorXd pts(10);
  for (int j = 0; j < 10; ++j) pts(j) = j;
  const MIVarianceResult b = mi_total_variance(pts, Eigen::VectorXd::Zero(10));
  const double B = (pts.array() - pts.mean()).square().sum() / 9.0;
  EXPECT_NEAR(b.total, 1.1 * B, 1e-12);
}

TEST(MultipleImputation, IdentityOnRandomInputs) {
  Rng rng = make_stream(46);
  for (int rep = 0; rep < 1000; ++rep) {
    const int J = 2 + static_cast<int>(rng() % 20);
    Eigen::VectorXd pts(J), w(J);
    for (int j = 0; j < J; ++j) {
      pts(j) = std_normal(rng);
      w(j) = uniform01(rng);
    }
    const MIVarianceResult r = mi_total_variance(pts, w);
    EXPECT_NEAR(r.total, (1 + 1.0 / J) * r.between + r.within, 1e-15 * (1 + r.total));
  }
  EXPECT_THROW(mi_total_variance(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)), ValidationError);
  EXPECT_EQ(kDefaultImputations, 10);
}

TEST(Thinning, EquallySpacedEndingAtLastDraw) {
  const auto idx = thinned_indices(4000);
  ASSERT_EQ(idx.size(), 10u);
  EXPECT_EQ(idx.back(), 3999);
  for (std::size_t j = 1; j < idx.size(); ++j) EXPECT_EQ(idx[j] - idx[j - 1], 400);
  EXPECT_THROW(thinned_indices(5, 10), ValidationError);
}

TEST(Threshold, RetainsByBruteForceFilter) {
  Rng rng = make_stream(47);
  Eigen::VectorXd ref(300), conv(500);
  for (int i = 0; i < 300; ++i) ref(i) = uniform01(rng) < 0.5 ? 0.01 * uniform01(rng) : 0.2 + 0.1 * uniform01(rng);
  for (int i = 0; i < 500; ++i) conv(i) = uniform01(rng) < 0.5 ? 0.01 * uniform01(rng) : 0.2 + 0.1 * uniform01(rng);
  std::vector<double> sorted(ref.data(), ref.data() + ref.size());
  std::sort(sorted.begin(), sorted.end());
  IndexSet prev;
  for (double p : {0.0, 1.0, 5.0, 10.0, 60.0}) {
    const double h = 299.0 * p / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double eps = p == 0 ? 0.0 : sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
    IndexSet expect;
    for (Eigen::Index i = 0; i < 500; ++i)
      if (conv(i) >= eps) expect.push_back(i);
    const IndexSet got = threshold_convenience(conv, ref, p);
    EXPECT_EQ(got, expect) << "p = " << p;
    if (p == 0) EXPECT_EQ(got.size(), 500u);
    if (!prev.empty()) EXPECT_TRUE(std::includes(prev.begin(), prev.end(), got.begin(), got.end()));
    prev = got;
  }
  EXPECT_TRUE(threshold_convenience(Eigen::VectorXd::Constant(3, 0.1), Eigen::VectorXd::Constant(4, 0.5), 50).empty());
}

TEST(LinkRelative, Examples) {
  EXPECT_DOUBLE_EQ(link_relative(Eigen::VectorXd::Constant(1, 3.0), Eigen::VectorXd::Constant(1, 2.0)), 1.5);
  EXPECT_DOUBLE_EQ(link_relative(Eigen::Vector3d(2, 2, 2), Eigen::Vector3d(1, 1, 1), Eigen::Vector3d(1, 2, 3)), 2.0);
  const Eigen::Vector3d c(1, 4, 2), p(2, 3, 5);
  EXPECT_NEAR(link_relative(c, p, Eigen::Vector3d::Constant(0.7)), link_relative(c, p), 1e-15);
  EXPECT_THROW(link_relative(c, Eigen::Vector3d(1, 0, 1)), ValidationError);
}

TEST(ChainedLevel, Examples) {
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(12);
  EXPECT_DOUBLE_EQ(chained_level(100.0, ones), 100.0);
  Eigen::VectorXd r = ones;
  r(0) = 1.1;
  r(1) = 1 / 1.1;
  EXPECT_NEAR(chained_level(100.0, r), 100.0, 1e-12);
  Rng rng = make_stream(48);
  double level = 7.0;
  for (int i = 0; i < 12; ++i) {
    r(i) = 0.5 + uniform01(rng);
    level *= r(i);
  }
  EXPECT_NEAR(chained_level(7.0, r), level, 1e-12);
  EXPECT_DOUBLE_EQ(coefficient_of_variation(0.0, 3.0), 0.0);
  EXPECT_DOUBLE_EQ(coefficient_of_variation(4.0, 2.0), 1.0);
  EXPECT_THROW(coefficient_of_variation(1.0, 0.0), ValidationError);
}

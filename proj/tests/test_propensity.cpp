#include <gtest/gtest.h>

#include <cmath>

#include "twoarm/propensity.hpp"
#include "twoarm/rng.hpp"

using namespace twoarm;

TEST(Propensity, ArithmeticExamples) {
  EXPECT_DOUBLE_EQ(equal_frame_propensity(0.5, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(equal_frame_propensity(0.2, 0.8), 0.2);
  EXPECT_DOUBLE_EQ(one_arm_propensity(1.0), 0.5);
  EXPECT_DOUBLE_EQ(one_arm_propensity(0.25), 0.2);
  EXPECT_NEAR(one_arm_propensity(1e-9), 1e-9, 1e-17);
  EXPECT_DOUBLE_EQ(pooled_propensity(ArmProbabilities<double>{0.2, 0.4, 0.5, 0.25}), 0.5);
}

TEST(Propensity, EqualFramesAndRatioInvariance) {
  Rng rng = make_stream(3);
  for (int i = 0; i < 100; ++i) {
    const double c = 0.01 + 0.99 * uniform01(rng), r = 0.01 + 0.99 * uniform01(rng);
    const double p = 0.01 + 0.99 * uniform01(rng);
    EXPECT_NEAR(pooled_propensity(ArmProbabilities<double>{c, r, p, p}), equal_frame_propensity(c, r), 1e-15);
    const double k = 0.5 * uniform01(rng) + 0.01;
    EXPECT_NEAR(equal_frame_propensity(k * c, k * r), equal_frame_propensity(c, r), 1e-14);
    EXPECT_NEAR(equal_frame_propensity(c, c), 0.5, 1e-15);
  }
}

TEST(Propensity, Monotone) {
  double prev = 0;
  for (double c = 0.05; c <= 1.0; c += 0.05) {
    const double v = pooled_propensity(ArmProbabilities<double>{c, 0.3, 0.9, 0.7});
    EXPECT_GT(v, prev);
    prev = v;
  }
  prev = 1;
  for (double r = 0.05; r <= 1.0; r += 0.05) {
    const double v = pooled_propensity(ArmProbabilities<double>{0.3, r, 0.9, 0.7});
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Propensity, DomainErrors) {
  EXPECT_THROW(equal_frame_propensity(0.0, 0.5), ValidationError);
  EXPECT_THROW(equal_frame_propensity(0.5, 1.5), ValidationError);
  EXPECT_THROW(pooled_propensity(ArmProbabilities<double>{0.5, 0.5, 0.0, 1.0}), ValidationError);
}

TEST(Propensity, StackedSchemeOracleSmall) {
  // Each stacked unit is the convenience copy or the reference copy with
  // equal chance, is covered by that arm's frame with p, then selected with pi.
  Rng rng = make_stream(4);
  for (int cfg = 0; cfg < 3; ++cfg) {
    const ArmProbabilities<double> a{0.1 + 0.8 * uniform01(rng), 0.1 + 0.8 * uniform01(rng),
                                     0.1 + 0.9 * uniform01(rng), 0.1 + 0.9 * uniform01(rng)};
    long in = 0, conv = 0;
    for (int rep = 0; rep < 200000; ++rep) {
      const bool is_c = uniform01(rng) < 0.5;
      const double pc = is_c ? a.p_c : a.p_r, pi = is_c ? a.pi_c : a.pi_r;
      if (uniform01(rng) < pc && uniform01(rng) < pi) {
        ++in;
        conv += is_c ? 1 : 0;
      }
    }
    const double expect = pooled_propensity(a);
    const double se = std::sqrt(expect * (1 - expect) / static_cast<double>(in));
    EXPECT_NEAR(static_cast<double>(conv) / static_cast<double>(in), expect, 3 * se);
  }
}

TEST(Psi, ConsistentMarginalsGiveOne) {
  const double n_c = 800, n_r = 400, N = 4000, n = n_c + n_r;
  EXPECT_NEAR(psi(MarginalProbabilities<double>{n_c / n, n_c / N, n_r / N}), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(psi(MarginalProbabilities<double>{0.5, 0.2, 0.1}), 2.0);
  EXPECT_THROW(psi(MarginalProbabilities<double>{1.0, 0.2, 0.1}), ValidationError);
}

TEST(BernoulliLogLikelihood, MatchesDirectSum) {
  Eigen::VectorXi z(2);
  z << 1, 0;
  Eigen::VectorXd p(2);
  p << 0.3, 0.3;
  EXPECT_NEAR(bernoulli_log_likelihood(z, p), std::log(0.3) + std::log(0.7), 1e-15);

  Rng rng = make_stream(5);
  Eigen::VectorXi zz(100);
  Eigen::VectorXd pp(100);
  double naive = 0;
  for (int i = 0; i < 100; ++i) {
    pp(i) = 0.01 + 0.98 * uniform01(rng);
    zz(i) = uniform01(rng) < 0.5;
    naive += zz(i) ? std::log(pp(i)) : std::log(1 - pp(i));
  }
  EXPECT_NEAR(bernoulli_log_likelihood(zz, pp), naive, 1e-12);
}

TEST(BernoulliLogLikelihood, Errors) {
  Eigen::VectorXi z(1);
  z << 1;
  Eigen::VectorXd p(2);
  p << 0.5, 0.5;
  EXPECT_THROW(bernoulli_log_likelihood(z, p), ValidationError);
  Eigen::VectorXd zero(1);
  zero << 0.0;
  EXPECT_THROW(bernoulli_log_likelihood(z, zero), NumericalError);
}

#include <gtest/gtest.h>

#include <cmath>

#include "twoarm/diagnostics.hpp"
#include "twoarm/error.hpp"
#include "twoarm/rng.hpp"

using namespace twoarm;

namespace {

Eigen::MatrixXd iid_chains(Rng& rng, Eigen::Index draws, Eigen::Index chains) {
  Eigen::MatrixXd x(draws, chains);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std_normal(rng);
  return x;
}

// AR(1) chains with coefficient rho have ESS close to S (1 - rho) / (1 + rho).
Eigen::MatrixXd ar1_chains(Rng& rng, Eigen::Index draws, Eigen::Index chains, double rho) {
  Eigen::MatrixXd x(draws, chains);
  for (Eigen::Index c = 0; c < chains; ++c) {
    double v = std_normal(rng);
    for (Eigen::Index i = 0; i < draws; ++i) {
      v = rho * v + std::sqrt(1 - rho * rho) * std_normal(rng);
      x(i, c) = v;
    }
  }
  return x;
}

}  // namespace

TEST(Diagnostics, IidDrawsHaveRhatNearOne) {
  Rng rng = make_stream(61);
  for (int rep = 0; rep < 10; ++rep) {
    const double r = split_rhat(iid_chains(rng, 1000, 4));
    EXPECT_GE(r, 0.99);
    EXPECT_LE(r, 1.01);
  }
}

TEST(Diagnostics, ShiftedChainInflatesRhat) {
  Rng rng = make_stream(62);
  Eigen::MatrixXd x = iid_chains(rng, 500, 4);
  x.col(3).array() += 3.0;
  EXPECT_GT(split_rhat(x), 1.2);
  // A trend inside each chain is caught by splitting.
  Eigen::MatrixXd t = iid_chains(rng, 500, 4);
  for (Eigen::Index i = 0; i < 500; ++i) t.row(i).array() += 4.0 * static_cast<double>(i) / 500.0;
  EXPECT_GT(split_rhat(t), 1.1);
}

TEST(Diagnostics, ScaleDifferenceCaughtByFoldedRhat) {
  Rng rng = make_stream(63);
  Eigen::MatrixXd x = iid_chains(rng, 1000, 4);
  x.col(0) *= 4.0;
  EXPECT_GT(split_rhat(x), 1.05);
}

TEST(Diagnostics, EssOfIidAndAutocorrelatedChains) {
  Rng rng = make_stream(64);
  const double iid = bulk_ess(iid_chains(rng, 1000, 4));
  EXPECT_GT(iid, 3000);
  EXPECT_LT(iid, 5000);
  const double ar = bulk_ess(ar1_chains(rng, 5000, 4, 0.9));
  const double expect = 20000 * 0.1 / 1.9;
  EXPECT_NEAR(ar / expect, 1.0, 0.25);
}

TEST(Diagnostics, ConstantInputFlagged) {
  const ScalarDiagnostics d = diagnose_scalar(Eigen::MatrixXd::Constant(100, 4, 2.0));
  EXPECT_TRUE(d.constant);
  EXPECT_TRUE(std::isnan(d.rhat));
}

TEST(Diagnostics, PreconditionsAndSingleChain) {
  Rng rng = make_stream(65);
  EXPECT_THROW(split_rhat(iid_chains(rng, 100, 1)), ValidationError);
  EXPECT_THROW(split_rhat(iid_chains(rng, 3, 4)), ValidationError);

  PosteriorDraws d;
  d.n_chains = 1;
  d.draws_per_chain = 200;
  d.draws = iid_chains(rng, 200, 2);
  d.divergences = {0};
  d.parameter_names = {"a", "b"};
  const DiagnosticsReport r = diagnostics(d);
  EXPECT_FALSE(r.rhat_available);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_TRUE(std::isnan(r.per_parameter[0].rhat));
}

TEST(Diagnostics, ChainColumnsReshape) {
  Eigen::MatrixXd stacked(6, 2);
  stacked << 1, 10, 2, 20, 3, 30, 4, 40, 5, 50, 6, 60;
  const Eigen::MatrixXd c = chain_columns(stacked, 1, 2);
  ASSERT_EQ(c.rows(), 3);
  ASSERT_EQ(c.cols(), 2);
  EXPECT_EQ(c(0, 1), 40);
  EXPECT_EQ(c(2, 0), 30);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "twoarm/error.hpp"
#include "twoarm/hier_model.hpp"
#include "twoarm/propensity.hpp"

using namespace twoarm;
using twoarm::testing::inv_logit;

namespace {

Eigen::VectorXd random_theta(Rng& rng, const ParameterLayout& l) {
  Eigen::VectorXd t(l.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = (i < l.num_raw() ? 1.0 : 0.6) * std_normal(rng);
  t(l.log_phi2()) = -1.0 + 0.5 * std_normal(rng);
  return t;
}

// Logits written out directly from the model definition.
Eigen::MatrixXd oracle_logits(const HierModel& m, const Eigen::VectorXd& th) {
  const ParameterLayout& l = m.layout();
  const PooledSample& d = m.data();
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(d.n(), 2);
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<double> bw(static_cast<std::size_t>(l.Q));
    const double sg = std::sqrt(std::exp(th(l.log_sigma2_global() + arm)));
    const double sw = std::sqrt(std::exp(th(l.log_sigma2_w() + arm)));
    double run = 0;
    for (int q = 0; q < l.Q; ++q) {
      run += th(l.beta_raw(arm) + q);
      bw[q] = run * sw * sg;
    }
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      double v = 0;
      for (int k = 0; k < l.K; ++k)
        v += d.X(i, k) * th(l.gamma_raw() + arm * l.K + k) *
             std::sqrt(std::exp(th(l.log_sigma2_betax() + arm * l.K + k)));
      for (int q = 0; q < l.Q; ++q) v += m.basis().G[0](q, i) * bw[q];
      mu(i, arm) = v;
    }
  }
  return mu;
}

double oracle_log_posterior(const HierModel& m, const Eigen::VectorXd& th) {
  const ParameterLayout& l = m.layout();
  const PooledSample& d = m.data();
  const Eigen::MatrixXd mu = oracle_logits(m, th);
  double ll = 0;
  switch (m.spec().kind) {
    case LikelihoodKind::TwoArmExact: {
      for (Eigen::Index i = 0; i < d.n(); ++i) {
        const double pz = pooled_propensity(
            ArmProbabilities<double>{inv_logit(mu(i, 0)), inv_logit(mu(i, 1)), d.p_c(i), d.p_r(i)});
        ll += d.z(i) ? std::log(pz) : std::log(1 - pz);
      }
      const double phi2 = std::exp(th(l.log_phi2()));
      for (Eigen::Index j = 0; j < d.n_r; ++j) {
        const double pr = std::min(d.pi_r(j), kCertaintyCap);
        const double r = std::log(pr / (1 - pr)) - mu(d.n_c + j, 1);
        ll += -0.5 * std::log(2 * std::numbers::pi * phi2) - 0.5 * r * r / phi2;
      }
      break;
    }
    case LikelihoodKind::CLW: {
      double wsum = 0;
      for (Eigen::Index j = 0; j < d.n_r; ++j) wsum += 1 / d.pi_r(j);
      const double c = m.spec().tempered ? static_cast<double>(d.n()) / (static_cast<double>(d.n_c) + wsum) : 1.0;
      for (Eigen::Index i = 0; i < d.n_c; ++i) ll += c * mu(i, 0);
      for (Eigen::Index j = 0; j < d.n_r; ++j) ll -= c / d.pi_r(j) * std::log1p(std::exp(mu(d.n_c + j, 0)));
      break;
    }
    case LikelihoodKind::WVL: {
      for (Eigen::Index i = 0; i < d.n_c; ++i) {
        const double p = inv_logit(mu(i, 0));
        ll += std::log(p / (1 + p));
      }
      for (Eigen::Index j = 0; j < d.n_r; ++j) ll -= std::log1p(inv_logit(mu(d.n_c + j, 0))) / d.pi_r(j);
      break;
    }
  }
  double lp = 0;
  for (Eigen::Index i = 0; i < l.num_raw(); ++i) lp += -0.5 * th(i) * th(i) - 0.5 * std::log(2 * std::numbers::pi);
  // gamma(1, 1) density exp(-s) for each variance s, times ds/dlog s = s.
  for (Eigen::Index i = l.num_raw(); i < l.size(); ++i) lp += th(i) - std::exp(th(i));
  return ll + lp;
}

HierModel make_model(Rng& rng, LikelihoodSpec spec) {
  return HierModel::with_default_knots(twoarm::testing::small_pooled_sample(rng, 40, 25), spec, 6, 3);
}

const LikelihoodSpec kSpecs[] = {{LikelihoodKind::TwoArmExact, false},
                                 {LikelihoodKind::CLW, false},
                                 {LikelihoodKind::CLW, true},
                                 {LikelihoodKind::WVL, false}};

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-8); }

}  // namespace

TEST(ParameterLayout, SizesAndNames) {
  const ParameterLayout l(4, 1, 12);
  EXPECT_EQ(l.size(), 45);
  EXPECT_EQ(l.num_raw(), 32);
  const auto names = l.names();
  ASSERT_EQ(static_cast<Eigen::Index>(names.size()), l.size());
  EXPECT_EQ(names.back(), "log_phi2");
}

TEST(HierModel, LogPosteriorMatchesDirectFormula) {
  Rng rng = make_stream(21);
  for (const auto& spec : kSpecs) {
    const HierModel m = make_model(rng, spec);
    for (int rep = 0; rep < 5; ++rep) {
      const Eigen::VectorXd th = random_theta(rng, m.layout());
      EXPECT_NEAR(m.log_posterior(th, nullptr), oracle_log_posterior(m, th), 1e-9)
          << to_string(spec.kind) << " tempered=" << spec.tempered;
    }
  }
}

TEST(HierModel, LogitsMatchDirectFormula) {
  Rng rng = make_stream(22);
  const HierModel m = make_model(rng, {});
  const Eigen::VectorXd th = random_theta(rng, m.layout());
  EXPECT_LT((m.mu_x(th) - oracle_logits(m, th)).cwiseAbs().maxCoeff(), 1e-12);
  const UnitProbabilities u = m.probabilities(th);
  const Eigen::MatrixXd mu = oracle_logits(m, th);
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    EXPECT_NEAR(u.pi_c(i), inv_logit(mu(i, 0)), 1e-14);
    EXPECT_NEAR(u.pi_r(i), inv_logit(mu(i, 1)), 1e-14);
  }
}

TEST(HierModel, GradientMatchesFiniteDifferences) {
  Rng rng = make_stream(23);
  for (const auto& spec : kSpecs) {
    const HierModel m = make_model(rng, spec);
    for (int rep = 0; rep < 5; ++rep) {
      const Eigen::VectorXd th = random_theta(rng, m.layout());
      Eigen::VectorXd g;
      m.log_posterior(th, &g);
      const Eigen::VectorXd fd =
          twoarm::testing::numeric_gradient([&](const Eigen::VectorXd& x) { return m.log_posterior(x, nullptr); }, th);
      for (Eigen::Index i = 0; i < th.size(); ++i)
        EXPECT_LT(rel_err(g(i), fd(i)), 1e-4) << to_string(spec.kind) << " coordinate " << m.layout().names()[i]
                                              << " analytic " << g(i) << " numeric " << fd(i);
    }
  }
}

TEST(HierModel, SamplingCoordinatesRoundTrip) {
  Rng rng = make_stream(24);
  for (const auto& spec : kSpecs) {
    const HierModel m = make_model(rng, spec);
    const Eigen::VectorXd th = random_theta(rng, m.layout());
    const Eigen::VectorXd eta = m.to_sampling(th);
    EXPECT_LT((m.from_sampling(eta) - th).cwiseAbs().maxCoeff(), 1e-12);
    if (!m.centers_reference_arm()) EXPECT_EQ(eta, th);
  }
}

TEST(HierModel, SamplingDensityIsTheTransformedPosterior) {
  // The sampling density must equal the posterior times the Jacobian of
  // eta -> theta. Compare log-density differences between two points with
  // the numerically computed log-determinant of the map.
  Rng rng = make_stream(25);
  const HierModel m = make_model(rng, {});
  const Eigen::VectorXd th1 = random_theta(rng, m.layout()), th2 = random_theta(rng, m.layout());
  const Eigen::VectorXd e1 = m.to_sampling(th1), e2 = m.to_sampling(th2);
  auto log_det = [&](const Eigen::VectorXd& eta) {
    Eigen::MatrixXd J(eta.size(), eta.size());
    for (Eigen::Index j = 0; j < eta.size(); ++j) {
      Eigen::VectorXd a = eta, b = eta;
      a(j) += 1e-6;
      b(j) -= 1e-6;
      J.col(j) = (m.from_sampling(a) - m.from_sampling(b)) / 2e-6;
    }
    return std::log(std::abs(J.determinant()));
  };
  const double lhs = m.log_density_sampling(e1, nullptr) - m.log_density_sampling(e2, nullptr);
  const double rhs = m.log_posterior(th1, nullptr) + log_det(e1) - m.log_posterior(th2, nullptr) - log_det(e2);
  EXPECT_NEAR(lhs, rhs, 1e-6);
}

TEST(HierModel, SamplingGradientMatchesFiniteDifferences) {
  Rng rng = make_stream(26);
  for (const auto& spec : kSpecs) {
    const HierModel m = make_model(rng, spec);
    for (int rep = 0; rep < 3; ++rep) {
      const Eigen::VectorXd eta = m.to_sampling(random_theta(rng, m.layout()));
      Eigen::VectorXd g;
      m.log_density_sampling(eta, &g);
      const Eigen::VectorXd fd = twoarm::testing::numeric_gradient(
          [&](const Eigen::VectorXd& x) { return m.log_density_sampling(x, nullptr); }, eta);
      for (Eigen::Index i = 0; i < eta.size(); ++i)
        EXPECT_LT(rel_err(g(i), fd(i)), 1e-4) << to_string(spec.kind) << " coordinate " << i;
    }
  }
}

TEST(HierModel, PseudoLikelihoodsIgnoreReferenceArm) {
  Rng rng = make_stream(27);
  for (auto kind : {LikelihoodKind::CLW, LikelihoodKind::WVL}) {
    const HierModel m = make_model(rng, {kind, false});
    Eigen::VectorXd th = random_theta(rng, m.layout());
    const double a = m.log_likelihood(th);
    th(m.layout().gamma_raw() + m.layout().K) += 1.0;  // first reference-arm coefficient
    th(m.layout().log_phi2()) += 1.0;
    EXPECT_DOUBLE_EQ(m.log_likelihood(th), a);
  }
}

TEST(HierModel, ErrorsAreTyped) {
  Rng rng = make_stream(28);
  const HierModel m = make_model(rng, {});
  EXPECT_THROW(m.log_posterior(Eigen::VectorXd::Zero(3), nullptr), ValidationError);
  Eigen::VectorXd th = Eigen::VectorXd::Zero(m.dimension());
  th(m.layout().log_phi2()) = -2000;  // phi2 underflows to zero
  EXPECT_THROW(m.log_posterior(th, nullptr), NumericalError);
  EXPECT_THROW(parse_likelihood_kind("probit"), ValidationError);
}

TEST(PooledSample, ValidationCatchesBadInput) {
  Rng rng = make_stream(29);
  PooledSample d = twoarm::testing::small_pooled_sample(rng, 5, 4);
  EXPECT_NO_THROW(d.validate());
  PooledSample bad = d;
  bad.pi_r(0) = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = d;
  bad.z(0) = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

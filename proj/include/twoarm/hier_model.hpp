#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twoarm/pooled_sample.hpp"
#include "twoarm/spline_basis.hpp"

namespace twoarm {

using BasisSet = BSplineBasisSet<double>;

/// Which likelihood connects the logits to the data.
///
/// TwoArmExact: Bernoulli on z with pi_z = pi_c p_c / (pi_c p_c + pi_r p_r)
/// plus a normal model for logit(pi_r) on reference rows.
/// CLW, WVL: inverse-probability-weighted pseudo log-likelihoods that only
/// use the convenience arm.
enum class LikelihoodKind { TwoArmExact, CLW, WVL };

struct LikelihoodSpec {
  LikelihoodKind kind = LikelihoodKind::TwoArmExact;
  /// CLW only: rescale every term so the observation weights sum to n.
  bool tempered = false;
};

std::string to_string(LikelihoodKind kind);
/// Accepts "two-arm", "clw", "wvl".
LikelihoodKind parse_likelihood_kind(const std::string& name);

/// Offsets of each parameter block inside the flat unconstrained vector.
///
/// Arm 0 is the convenience arm, arm 1 the reference arm. Positive scales
/// are stored as logs of variances.
struct ParameterLayout {
  int K = 0;     ///< linear predictors
  int K_sp = 0;  ///< spline predictors
  int Q = 0;     ///< basis functions per spline predictor

  ParameterLayout() = default;
  ParameterLayout(int k, int k_sp, int q) : K(k), K_sp(k_sp), Q(q) {}

  Eigen::Index gamma_raw() const { return 0; }
  Eigen::Index beta_raw(int arm) const { return 2 * K + arm * Q * K_sp; }
  Eigen::Index log_sigma2_betax() const { return 2 * K + 2 * Q * K_sp; }
  Eigen::Index log_sigma2_w() const { return log_sigma2_betax() + 2 * K; }
  Eigen::Index log_sigma2_global() const { return log_sigma2_w() + 2 * K_sp; }
  Eigen::Index log_phi2() const { return log_sigma2_global() + 2; }
  Eigen::Index size() const { return log_phi2() + 1; }
  /// Raw (standard-normal) coefficients occupy [0, num_raw()).
  Eigen::Index num_raw() const { return 2 * K + 2 * Q * K_sp; }

  std::vector<std::string> names() const;
  bool operator==(const ParameterLayout&) const = default;
};

/// All model unknowns in unconstrained space, with block views.
struct ParameterVector {
  ParameterLayout layout;
  Eigen::VectorXd values;

  ParameterVector() = default;
  explicit ParameterVector(ParameterLayout l) : layout(l), values(Eigen::VectorXd::Zero(l.size())) {}
  ParameterVector(ParameterLayout l, Eigen::VectorXd v);

  using Map = Eigen::Map<Eigen::MatrixXd>;
  using ConstMap = Eigen::Map<const Eigen::MatrixXd>;

  Map gamma_raw() { return {values.data() + layout.gamma_raw(), layout.K, 2}; }
  ConstMap gamma_raw() const { return {values.data() + layout.gamma_raw(), layout.K, 2}; }
  Map beta_raw(int arm) { return {values.data() + layout.beta_raw(arm), layout.Q, layout.K_sp}; }
  ConstMap beta_raw(int arm) const { return {values.data() + layout.beta_raw(arm), layout.Q, layout.K_sp}; }
  Map log_sigma2_betax() { return {values.data() + layout.log_sigma2_betax(), layout.K, 2}; }
  ConstMap log_sigma2_betax() const { return {values.data() + layout.log_sigma2_betax(), layout.K, 2}; }
  Map log_sigma2_w() { return {values.data() + layout.log_sigma2_w(), 2, layout.K_sp}; }
  ConstMap log_sigma2_w() const { return {values.data() + layout.log_sigma2_w(), 2, layout.K_sp}; }
  double& log_sigma2_global(int arm) { return values(layout.log_sigma2_global() + arm); }
  double log_sigma2_global(int arm) const { return values(layout.log_sigma2_global() + arm); }
  double& log_phi2() { return values(layout.log_phi2()); }
  double log_phi2() const { return values(layout.log_phi2()); }
};

/// Coefficients after the non-centred and random-walk transforms.
struct EffectiveCoefficients {
  Eigen::MatrixXd beta_x;                 ///< K x 2
  std::array<Eigen::MatrixXd, 2> beta_w;  ///< per arm, Q x K_sp
};

/// beta_x = gamma_raw .* sigma_betax;
/// beta_w[arm](:, k) = cumsum(beta_raw[arm](:, k)) * sigma_w(arm, k) * sigma_global(arm).
EffectiveCoefficients transform_coefficients(const ParameterVector& p);

/// n x 2 logits: mu(i, arm) = x_i' beta_x(:, arm) + sum_k g_k(x_i)' beta_w[arm](:, k).
Eigen::MatrixXd compute_mu_x(const ParameterVector& p, const PooledSample& d, const BasisSet& basis);

double log_likelihood(const LikelihoodSpec& spec, const ParameterVector& p, const PooledSample& d,
                      const BasisSet& basis);

/// gamma(1, 1) on every variance, standard normal on every raw coefficient,
/// plus the log-Jacobian of the log transforms.
double log_prior(const ParameterVector& p);

struct LogPosterior {
  double value;
  Eigen::VectorXd gradient;
};

LogPosterior log_posterior_and_gradient(const LikelihoodSpec& spec, const ParameterVector& p, const PooledSample& d,
                                        const BasisSet& basis);

struct UnitProbabilities {
  Eigen::VectorXd pi_c;  ///< length n
  Eigen::VectorXd pi_r;  ///< length n
  Eigen::VectorXd weights_c;
  Eigen::VectorXd weights_r;
};

/// Inclusion probabilities of both arms for every pooled row, with raw
/// inverse-probability weights.
UnitProbabilities extract_probabilities(const ParameterVector& p, const PooledSample& d, const BasisSet& basis);

/// The alternative weight normalisation some fitting scripts report:
/// w_c scaled by (n_c / n) * sum(w_r) / sum(w_c), w_r scaled by n_r / n.
/// Diagnostic only; estimators use raw 1 / pi.
std::pair<Eigen::VectorXd, Eigen::VectorXd> normalized_diagnostic_weights(const UnitProbabilities& u, Eigen::Index n_c,
                                                                          Eigen::Index n_r);

/// Data, basis and likelihood bundled into one immutable target. Holds the
/// transposed basis matrices so repeated evaluations avoid re-layout. Safe to
/// evaluate concurrently from several threads.
class HierModel {
 public:
  HierModel(PooledSample data, BasisSet basis, LikelihoodSpec spec);

  /// Builds quantile knots from the pooled spline predictors.
  static HierModel with_default_knots(PooledSample data, LikelihoodSpec spec, int num_knots = 10, int degree = 3);

  const PooledSample& data() const { return data_; }
  const BasisSet& basis() const { return basis_; }
  const LikelihoodSpec& spec() const { return spec_; }
  const ParameterLayout& layout() const { return layout_; }
  Eigen::Index dimension() const { return layout_.size(); }

  /// Log posterior at `theta`; fills `grad` when non-null. Throws
  /// NumericalError naming the row when a likelihood term is not finite.
  double log_posterior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const;
  double log_likelihood(const Eigen::VectorXd& theta) const;

  Eigen::MatrixXd mu_x(const Eigen::VectorXd& theta) const;
  UnitProbabilities probabilities(const Eigen::VectorXd& theta) const;

  /// Coordinates used by the sampler. Under the exact two-arm likelihood the
  /// reference arm is strongly identified by the normal model for
  /// logit(pi_r), so there its coefficients are sampled directly (beta_x and
  /// beta_w in place of the raw slots) instead of as raw multiples of the
  /// scales, which would form a narrow curved ridge. The posterior is the
  /// same; the change of variables contributes its log-Jacobian. Under the
  /// pseudo likelihoods the sampling coordinates equal theta.
  bool centers_reference_arm() const { return spec_.kind == LikelihoodKind::TwoArmExact; }
  Eigen::VectorXd to_sampling(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd from_sampling(const Eigen::VectorXd& eta) const;
  /// Log posterior density of the sampling coordinates, with gradient.
  double log_density_sampling(const Eigen::VectorXd& eta, Eigen::VectorXd* grad) const;

 private:
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, bool include_prior) const;

  PooledSample data_;
  BasisSet basis_;
  LikelihoodSpec spec_;
  ParameterLayout layout_;
  std::vector<Eigen::MatrixXd> basis_t_;  ///< n x Q per spline predictor
  Eigen::VectorXd logit_pw_;
  Eigen::VectorXd design_weights_;
  Eigen::VectorXd log_p_c_;
  Eigen::VectorXd log_p_r_;
  double temper_ = 1.0;
};

}  // namespace twoarm

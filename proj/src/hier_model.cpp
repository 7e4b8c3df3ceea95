#include "twoarm/hier_model.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "twoarm/error.hpp"

namespace twoarm {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_layout(const ParameterVector& p, const PooledSample& d, const BasisSet& basis) {
  const auto& l = p.layout;
  if (l.K != d.X.cols() || l.K_sp != d.X_sp.cols() || l.K_sp != basis.num_predictors() ||
      (l.K_sp > 0 && l.Q != basis.num_basis()))
    throw ValidationError(fmt::format("parameter layout (K={}, K_sp={}, Q={}) does not match data (K={}, K_sp={}, Q={})",
                                      l.K, l.K_sp, l.Q, d.X.cols(), d.X_sp.cols(), basis.num_basis()));
  if (basis.num_predictors() > 0 && basis.num_points() != d.n())
    throw ValidationError(fmt::format("basis built on {} points, data has {} rows", basis.num_points(), d.n()));
  if (p.values.size() != l.size()) throw ValidationError("parameter vector length does not match its layout");
}

ParameterLayout layout_for(const PooledSample& d, const BasisSet& basis) {
  return ParameterLayout(static_cast<int>(d.X.cols()), static_cast<int>(d.X_sp.cols()),
                         d.X_sp.cols() > 0 ? basis.num_basis() : 0);
}

}  // namespace

std::string to_string(LikelihoodKind kind) {
  switch (kind) {
    case LikelihoodKind::TwoArmExact: return "two-arm";
    case LikelihoodKind::CLW: return "clw";
    case LikelihoodKind::WVL: return "wvl";
  }
  return "?";
}

LikelihoodKind parse_likelihood_kind(const std::string& name) {
  if (name == "two-arm" || name == "twoarm") return LikelihoodKind::TwoArmExact;
  if (name == "clw") return LikelihoodKind::CLW;
  if (name == "wvl") return LikelihoodKind::WVL;
  throw ValidationError(fmt::format("unknown method '{}' (expected two-arm, clw or wvl)", name));
}

std::vector<std::string> ParameterLayout::names() const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(size()));
  const char* arm_name[2] = {"c", "r"};
  for (int a = 0; a < 2; ++a)
    for (int k = 0; k < K; ++k) out.push_back(fmt::format("gamma_raw.{}.{}", arm_name[a], k + 1));
  for (int a = 0; a < 2; ++a)
    for (int k = 0; k < K_sp; ++k)
      for (int q = 0; q < Q; ++q) out.push_back(fmt::format("beta_raw.{}.{}.{}", arm_name[a], k + 1, q + 1));
  for (int a = 0; a < 2; ++a)
    for (int k = 0; k < K; ++k) out.push_back(fmt::format("log_sigma2_betax.{}.{}", arm_name[a], k + 1));
  for (int k = 0; k < K_sp; ++k)
    for (int a = 0; a < 2; ++a) out.push_back(fmt::format("log_sigma2_w.{}.{}", arm_name[a], k + 1));
  for (int a = 0; a < 2; ++a) out.push_back(fmt::format("log_sigma2_global.{}", arm_name[a]));
  out.push_back("log_phi2");
  return out;
}

ParameterVector::ParameterVector(ParameterLayout l, Eigen::VectorXd v) : layout(l), values(std::move(v)) {
  if (values.size() != layout.size())
    throw ValidationError(fmt::format("expected {} parameters, got {}", layout.size(), values.size()));
}

EffectiveCoefficients transform_coefficients(const ParameterVector& p) {
  const auto& l = p.layout;
  EffectiveCoefficients e;
  e.beta_x = p.gamma_raw().cwiseProduct((0.5 * p.log_sigma2_betax().array()).exp().matrix());
  for (int arm = 0; arm < 2; ++arm) {
    e.beta_w[arm].resize(l.Q, l.K_sp);
    const double global = std::exp(0.5 * p.log_sigma2_global(arm));
    for (int k = 0; k < l.K_sp; ++k) {
      const double scale = std::exp(0.5 * p.log_sigma2_w()(arm, k)) * global;
      double run = 0;
      for (int q = 0; q < l.Q; ++q) {
        run += p.beta_raw(arm)(q, k);
        e.beta_w[arm](q, k) = run * scale;
      }
    }
  }
  return e;
}

Eigen::MatrixXd compute_mu_x(const ParameterVector& p, const PooledSample& d, const BasisSet& basis) {
  check_layout(p, d, basis);
  const EffectiveCoefficients e = transform_coefficients(p);
  Eigen::MatrixXd mu = d.X * e.beta_x;
  for (int arm = 0; arm < 2; ++arm)
    for (int k = 0; k < p.layout.K_sp; ++k) mu.col(arm).noalias() += basis.G[k].transpose() * e.beta_w[arm].col(k);
  return mu;
}

double log_prior(const ParameterVector& p) {
  const auto& l = p.layout;
  const auto raw = p.values.head(l.num_raw());
  const auto logvar = p.values.tail(l.size() - l.num_raw());
  return -0.5 * raw.squaredNorm() - kHalfLog2Pi * static_cast<double>(raw.size()) +
         (logvar.array() - logvar.array().exp()).sum();
}

double log_likelihood(const LikelihoodSpec& spec, const ParameterVector& p, const PooledSample& d,
                      const BasisSet& basis) {
  check_layout(p, d, basis);
  return HierModel(d, basis, spec).log_likelihood(p.values);
}

LogPosterior log_posterior_and_gradient(const LikelihoodSpec& spec, const ParameterVector& p, const PooledSample& d,
                                        const BasisSet& basis) {
  check_layout(p, d, basis);
  LogPosterior out;
  out.value = HierModel(d, basis, spec).log_posterior(p.values, &out.gradient);
  return out;
}

UnitProbabilities extract_probabilities(const ParameterVector& p, const PooledSample& d, const BasisSet& basis) {
  const Eigen::MatrixXd mu = compute_mu_x(p, d, basis);
  UnitProbabilities u;
  u.pi_c = mu.col(0).unaryExpr(&inv_logit);
  u.pi_r = mu.col(1).unaryExpr(&inv_logit);
  u.weights_c = u.pi_c.cwiseInverse();
  u.weights_r = u.pi_r.cwiseInverse();
  return u;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> normalized_diagnostic_weights(const UnitProbabilities& u, Eigen::Index n_c,
                                                                          Eigen::Index n_r) {
  const double n = static_cast<double>(n_c + n_r);
  Eigen::VectorXd wc = u.weights_c * ((static_cast<double>(n_c) / n) * (u.weights_r.sum() / u.weights_c.sum()));
  Eigen::VectorXd wr = u.weights_r * (static_cast<double>(n_r) / n);
  return {std::move(wc), std::move(wr)};
}

// ---------------------------------------------------------------------------

HierModel::HierModel(PooledSample data, BasisSet basis, LikelihoodSpec spec)
    : data_(std::move(data)), basis_(std::move(basis)), spec_(spec) {
  data_.validate();
  layout_ = layout_for(data_, basis_);
  if (basis_.num_predictors() != data_.X_sp.cols())
    throw ValidationError(fmt::format("basis has {} predictors, data has {} spline predictors",
                                      basis_.num_predictors(), data_.X_sp.cols()));
  if (basis_.num_predictors() > 0 && basis_.num_points() != data_.n())
    throw ValidationError(fmt::format("basis built on {} points, data has {} rows", basis_.num_points(), data_.n()));
  for (const auto& g : basis_.G) basis_t_.push_back(g.transpose());
  logit_pw_ = data_.logit_pw();
  design_weights_ = data_.design_weights();
  log_p_c_ = data_.p_c.array().log();
  log_p_r_ = data_.p_r.array().log();
  if (spec_.kind == LikelihoodKind::CLW && spec_.tempered && data_.n() > 0)
    temper_ = static_cast<double>(data_.n()) / (static_cast<double>(data_.n_c) + design_weights_.sum());
}

HierModel HierModel::with_default_knots(PooledSample data, LikelihoodSpec spec, int num_knots, int degree) {
  std::vector<KnotVector<double>> knots;
  for (Eigen::Index k = 0; k < data.X_sp.cols(); ++k) knots.push_back(default_knots(data.X_sp.col(k), num_knots, degree));
  BasisSet basis = build_basis_set(data.X_sp, knots);
  return HierModel(std::move(data), std::move(basis), spec);
}

Eigen::MatrixXd HierModel::mu_x(const Eigen::VectorXd& theta) const {
  return compute_mu_x(ParameterVector(layout_, theta), data_, basis_);
}

UnitProbabilities HierModel::probabilities(const Eigen::VectorXd& theta) const {
  return extract_probabilities(ParameterVector(layout_, theta), data_, basis_);
}

double HierModel::log_posterior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  return evaluate(theta, grad, true);
}

double HierModel::log_likelihood(const Eigen::VectorXd& theta) const { return evaluate(theta, nullptr, false); }

double HierModel::evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, bool include_prior) const {
  if (theta.size() != layout_.size())
    throw ValidationError(fmt::format("expected {} parameters, got {}", layout_.size(), theta.size()));
  const ParameterLayout& l = layout_;
  const ParameterVector p(l, theta);
  const Eigen::Index n = data_.n();
  const Eigen::Index n_c = data_.n_c;
  const bool two_arm = spec_.kind == LikelihoodKind::TwoArmExact;
  const int arms = two_arm ? 2 : 1;

  // Forward pass.
  const Eigen::MatrixXd sigma_bx = (0.5 * p.log_sigma2_betax().array()).exp().matrix();
  const Eigen::MatrixXd beta_x = p.gamma_raw().cwiseProduct(sigma_bx);
  std::array<Eigen::MatrixXd, 2> beta_w;
  Eigen::MatrixXd scale_w(2, l.K_sp);
  for (int arm = 0; arm < 2; ++arm) {
    beta_w[arm].resize(l.Q, l.K_sp);
    const double global = std::exp(0.5 * p.log_sigma2_global(arm));
    for (int k = 0; k < l.K_sp; ++k) {
      scale_w(arm, k) = std::exp(0.5 * p.log_sigma2_w()(arm, k)) * global;
      double run = 0;
      for (int q = 0; q < l.Q; ++q) {
        run += p.beta_raw(arm)(q, k);
        beta_w[arm](q, k) = run * scale_w(arm, k);
      }
    }
  }
  Eigen::MatrixXd mu(n, arms);
  for (int arm = 0; arm < arms; ++arm) {
    mu.col(arm).noalias() = data_.X * beta_x.col(arm);
    for (int k = 0; k < l.K_sp; ++k) mu.col(arm).noalias() += basis_t_[k] * beta_w[arm].col(k);
  }

  // Likelihood and its derivative with respect to the logits.
  Eigen::MatrixXd dmu = Eigen::MatrixXd::Zero(n, arms);
  double dlog_phi2 = 0;
  double ll = 0;
  auto fail = [](Eigen::Index row) {
    throw NumericalError(fmt::format("log-likelihood is not finite at pooled row {}", row));
  };
  switch (spec_.kind) {
    case LikelihoodKind::TwoArmExact: {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mc = mu(i, 0), mr = mu(i, 1);
        const double a = -softplus(-mc) + log_p_c_(i);
        const double b = -softplus(-mr) + log_p_r_(i);
        const double lse = log_sum_exp(a, b);
        const double pz = std::exp(a - lse);
        const int z = data_.z(i);
        const double term = z ? a - lse : b - lse;
        if (!std::isfinite(term)) fail(i);
        ll += term;
        const double r = static_cast<double>(z) - pz;
        dmu(i, 0) = r * inv_logit(-mc);
        dmu(i, 1) = -r * inv_logit(-mr);
      }
      const double log_phi2 = p.log_phi2();
      const double inv_phi2 = std::exp(-log_phi2);
      for (Eigen::Index j = 0; j < data_.n_r; ++j) {
        const Eigen::Index i = n_c + j;
        const double resid = logit_pw_(j) - mu(i, 1);
        const double term = -kHalfLog2Pi - 0.5 * log_phi2 - 0.5 * resid * resid * inv_phi2;
        if (!std::isfinite(term)) fail(i);
        ll += term;
        dmu(i, 1) += resid * inv_phi2;
        dlog_phi2 += -0.5 + 0.5 * resid * resid * inv_phi2;
      }
      break;
    }
    case LikelihoodKind::CLW: {
      for (Eigen::Index i = 0; i < n_c; ++i) {
        ll += temper_ * mu(i, 0);
        dmu(i, 0) = temper_;
      }
      for (Eigen::Index j = 0; j < data_.n_r; ++j) {
        const Eigen::Index i = n_c + j;
        const double w = temper_ * design_weights_(j);
        const double term = -w * softplus(mu(i, 0));
        if (!std::isfinite(term)) fail(i);
        ll += term;
        dmu(i, 0) = -w * inv_logit(mu(i, 0));
      }
      if (!std::isfinite(ll)) fail(0);
      break;
    }
    case LikelihoodKind::WVL: {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double pc = inv_logit(mu(i, 0));
        const double log1p_pc = std::log1p(pc);
        if (i < n_c) {
          const double term = -softplus(-mu(i, 0)) - log1p_pc;
          if (!std::isfinite(term)) fail(i);
          ll += term;
          dmu(i, 0) = (1.0 - pc) / (1.0 + pc);
        } else {
          const double w = design_weights_(i - n_c);
          ll += -w * log1p_pc;
          dmu(i, 0) = -w * pc * (1.0 - pc) / (1.0 + pc);
        }
      }
      break;
    }
  }

  double value = ll;
  if (include_prior) value += log_prior(p);
  if (!std::isfinite(value)) throw NumericalError("log posterior is not finite");
  if (grad == nullptr) return value;

  // Reverse pass through the transforms.
  grad->setZero(l.size());
  ParameterVector g(l, Eigen::VectorXd::Zero(l.size()));
  for (int arm = 0; arm < arms; ++arm) {
    const Eigen::VectorXd dbeta_x = data_.X.transpose() * dmu.col(arm);
    g.gamma_raw().col(arm) = dbeta_x.cwiseProduct(sigma_bx.col(arm));
    g.log_sigma2_betax().col(arm) = 0.5 * dbeta_x.cwiseProduct(beta_x.col(arm));
    double dglobal = 0;
    for (int k = 0; k < l.K_sp; ++k) {
      const Eigen::VectorXd dbeta_w = basis_t_[k].transpose() * dmu.col(arm);
      const double dscale_term = 0.5 * dbeta_w.dot(beta_w[arm].col(k));
      g.log_sigma2_w()(arm, k) = dscale_term;
      dglobal += dscale_term;
      double run = 0;
      for (int q = l.Q - 1; q >= 0; --q) {
        run += dbeta_w(q);
        g.beta_raw(arm)(q, k) = run * scale_w(arm, k);
      }
    }
    g.log_sigma2_global(arm) = dglobal;
  }
  if (two_arm) g.log_phi2() = dlog_phi2;
  if (include_prior) {
    g.values.head(l.num_raw()) -= theta.head(l.num_raw());
    const Eigen::Index nv = l.size() - l.num_raw();
    g.values.tail(nv).array() += 1.0 - theta.tail(nv).array().exp();
  }
  *grad = std::move(g.values);
  return value;
}

Eigen::VectorXd HierModel::to_sampling(const Eigen::VectorXd& theta) const {
  if (!centers_reference_arm()) return theta;
  const ParameterVector p(layout_, theta);
  ParameterVector eta = p;
  const EffectiveCoefficients e = transform_coefficients(p);
  eta.gamma_raw().col(1) = e.beta_x.col(1);
  eta.beta_raw(1) = e.beta_w[1];
  return std::move(eta.values);
}

Eigen::VectorXd HierModel::from_sampling(const Eigen::VectorXd& eta_values) const {
  if (!centers_reference_arm()) return eta_values;
  const ParameterVector eta(layout_, eta_values);
  ParameterVector p = eta;
  const ParameterLayout& l = layout_;
  for (int k = 0; k < l.K; ++k)
    p.gamma_raw()(k, 1) = eta.gamma_raw()(k, 1) * std::exp(-0.5 * eta.log_sigma2_betax()(k, 1));
  for (int k = 0; k < l.K_sp; ++k) {
    const double inv_scale = std::exp(-0.5 * (eta.log_sigma2_w()(1, k) + eta.log_sigma2_global(1)));
    double prev = 0;
    for (int q = 0; q < l.Q; ++q) {
      p.beta_raw(1)(q, k) = (eta.beta_raw(1)(q, k) - prev) * inv_scale;
      prev = eta.beta_raw(1)(q, k);
    }
  }
  return std::move(p.values);
}

double HierModel::log_density_sampling(const Eigen::VectorXd& eta_values, Eigen::VectorXd* grad) const {
  if (!centers_reference_arm()) return evaluate(eta_values, grad, true);
  if (eta_values.size() != layout_.size())
    throw ValidationError(fmt::format("expected {} parameters, got {}", layout_.size(), eta_values.size()));
  const ParameterLayout& l = layout_;
  const Eigen::VectorXd theta = from_sampling(eta_values);
  const ParameterVector eta(l, eta_values);
  const ParameterVector p(l, theta);

  // log |d theta / d eta|: each raw slot is its coefficient over a scale.
  double log_jac = -0.5 * eta.log_sigma2_betax().col(1).sum();
  for (int k = 0; k < l.K_sp; ++k) log_jac -= 0.5 * l.Q * (eta.log_sigma2_w()(1, k) + eta.log_sigma2_global(1));

  Eigen::VectorXd g_theta;
  const double value = evaluate(theta, grad ? &g_theta : nullptr, true) + log_jac;
  if (grad == nullptr) return value;

  ParameterVector gt(l, std::move(g_theta));
  ParameterVector g = gt;
  for (int k = 0; k < l.K; ++k) {
    const double inv_scale = std::exp(-0.5 * eta.log_sigma2_betax()(k, 1));
    g.gamma_raw()(k, 1) = gt.gamma_raw()(k, 1) * inv_scale;
    g.log_sigma2_betax()(k, 1) += -0.5 * gt.gamma_raw()(k, 1) * p.gamma_raw()(k, 1) - 0.5;
  }
  for (int k = 0; k < l.K_sp; ++k) {
    const double inv_scale = std::exp(-0.5 * (eta.log_sigma2_w()(1, k) + eta.log_sigma2_global(1)));
    double dscale = 0;
    for (int q = 0; q < l.Q; ++q) {
      const double next = q + 1 < l.Q ? gt.beta_raw(1)(q + 1, k) : 0.0;
      g.beta_raw(1)(q, k) = (gt.beta_raw(1)(q, k) - next) * inv_scale;
      dscale += -0.5 * gt.beta_raw(1)(q, k) * p.beta_raw(1)(q, k);
    }
    dscale -= 0.5 * l.Q;
    g.log_sigma2_w()(1, k) += dscale;
    g.log_sigma2_global(1) += dscale;
  }
  *grad = std::move(g.values);
  return value;
}

}  // namespace twoarm

#include "twoarm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "twoarm/error.hpp"

namespace twoarm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool all_equal(const Eigen::MatrixXd& x) { return (x.array() == x(0, 0)).all(); }

/// Split every chain into its first and second halves (dropping the middle
/// draw for odd lengths).
Eigen::MatrixXd split_chains(const Eigen::MatrixXd& chains) {
  const Eigen::Index n = chains.rows() / 2;
  const Eigen::Index offset = chains.rows() - n;
  Eigen::MatrixXd out(n, 2 * chains.cols());
  for (Eigen::Index c = 0; c < chains.cols(); ++c) {
    out.col(2 * c) = chains.col(c).head(n);
    out.col(2 * c + 1) = chains.col(c).segment(offset, n);
  }
  return out;
}

/// Normal scores of pooled average ranks, (r - 3/8) / (S + 1/4).
Eigen::MatrixXd rank_normalize(const Eigen::MatrixXd& x) {
  const Eigen::Index S = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(S));
  std::iota(order.begin(), order.end(), 0);
  const double* v = x.data();
  std::stable_sort(order.begin(), order.end(), [v](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::MatrixXd out(x.rows(), x.cols());
  const boost::math::normal_distribution<double> normal;
  Eigen::Index i = 0;
  while (i < S) {
    Eigen::Index j = i;
    while (j + 1 < S && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double z = boost::math::quantile(normal, (rank - 0.375) / (static_cast<double>(S) + 0.25));
    for (Eigen::Index k = i; k <= j; ++k) out.data()[order[k]] = z;
    i = j + 1;
  }
  return out;
}

double median(const Eigen::MatrixXd& x) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double rhat_basic(const Eigen::MatrixXd& chains) {
  const auto n = static_cast<double>(chains.rows());
  const Eigen::VectorXd means = chains.colwise().mean();
  Eigen::VectorXd vars(chains.cols());
  for (Eigen::Index c = 0; c < chains.cols(); ++c)
    vars(c) = (chains.col(c).array() - means(c)).square().sum() / (n - 1);
  const double W = vars.mean();
  if (!(W > 0)) return kNaN;
  const double B = n * (means.array() - means.mean()).square().sum() / static_cast<double>(chains.cols() - 1);
  const double var_plus = (n - 1) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

/// Biased autocovariance of a centred series at lag `t`.
double autocov(const Eigen::VectorXd& centred, Eigen::Index t) {
  const Eigen::Index n = centred.size();
  return centred.head(n - t).dot(centred.tail(n - t)) / static_cast<double>(n);
}

double ess_basic(const Eigen::MatrixXd& chains) {
  const Eigen::Index n = chains.rows();
  const Eigen::Index m = chains.cols();
  const double nd = static_cast<double>(n);
  std::vector<Eigen::VectorXd> centred(static_cast<std::size_t>(m));
  Eigen::VectorXd means(m), acov0(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    means(c) = chains.col(c).mean();
    centred[c] = chains.col(c).array() - means(c);
    acov0(c) = autocov(centred[c], 0);
  }
  const double mean_var = acov0.mean() * nd / (nd - 1);
  double var_plus = mean_var * (nd - 1) / nd;
  if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  if (!(var_plus > 0)) return kNaN;

  auto mean_acov = [&](Eigen::Index t) {
    double s = 0;
    for (Eigen::Index c = 0; c < m; ++c) s += autocov(centred[c], t);
    return s / static_cast<double>(m);
  };
  auto rho = [&](Eigen::Index t) { return 1.0 - (mean_var - mean_acov(t)) / var_plus; };

  std::vector<double> rho_hat(static_cast<std::size_t>(n) + 2, 0.0);
  rho_hat[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = n > 1 ? rho(1) : 0.0;
  rho_hat[1] = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0) {
    rho_even = rho(t + 1);
    rho_odd = rho(t + 2);
    if (rho_even + rho_odd >= 0) {
      rho_hat[t + 1] = rho_even;
      rho_hat[t + 2] = rho_odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t;
  if (rho_even > 0) rho_hat[max_t + 1] = rho_even;

  // Enforce a monotone sequence of paired sums.
  for (t = 1; t <= max_t - 4; t += 2) {
    if (rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t]) {
      rho_hat[t + 1] = 0.5 * (rho_hat[t - 1] + rho_hat[t]);
      rho_hat[t + 2] = rho_hat[t + 1];
    }
  }
  const double total = static_cast<double>(m) * nd;
  double tau = -1.0 + rho_hat[max_t + 1];
  for (Eigen::Index k = 0; k <= max_t; ++k) tau += 2.0 * rho_hat[k];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace

double split_rhat(const Eigen::MatrixXd& chains) {
  if (chains.cols() < 2) throw ValidationError("R-hat needs at least two chains");
  if (chains.rows() < 4) throw ValidationError("R-hat needs at least four draws per chain");
  if (all_equal(chains)) return kNaN;
  const Eigen::MatrixXd split = split_chains(chains);
  const double bulk = rhat_basic(rank_normalize(split));
  const double med = median(split);
  const Eigen::MatrixXd folded = (split.array() - med).abs().matrix();
  const double tail = all_equal(folded) ? kNaN : rhat_basic(rank_normalize(folded));
  if (std::isnan(bulk)) return kNaN;
  return std::isnan(tail) ? bulk : std::max(bulk, tail);
}

double bulk_ess(const Eigen::MatrixXd& chains) {
  if (chains.rows() < 4) throw ValidationError("ESS needs at least four draws per chain");
  if (all_equal(chains)) return kNaN;
  return ess_basic(rank_normalize(split_chains(chains)));
}

ScalarDiagnostics diagnose_scalar(const Eigen::MatrixXd& chains) {
  ScalarDiagnostics s;
  s.constant = all_equal(chains);
  s.rhat = chains.cols() >= 2 ? split_rhat(chains) : kNaN;
  s.ess_bulk = bulk_ess(chains);
  return s;
}

double DiagnosticsReport::max_rhat() const {
  double r = kNaN;
  for (const auto& p : per_parameter)
    if (!std::isnan(p.rhat)) r = std::isnan(r) ? p.rhat : std::max(r, p.rhat);
  return r;
}

double DiagnosticsReport::min_ess() const {
  double e = kNaN;
  for (const auto& p : per_parameter)
    if (!std::isnan(p.ess_bulk)) e = std::isnan(e) ? p.ess_bulk : std::min(e, p.ess_bulk);
  return e;
}

Eigen::MatrixXd chain_columns(const Eigen::MatrixXd& stacked, Eigen::Index col, int n_chains) {
  const Eigen::Index per = stacked.rows() / n_chains;
  Eigen::MatrixXd out(per, n_chains);
  for (int c = 0; c < n_chains; ++c) out.col(c) = stacked.col(col).segment(c * per, per);
  return out;
}

DiagnosticsReport diagnostics(const PosteriorDraws& d) {
  DiagnosticsReport r;
  r.names = d.parameter_names;
  r.divergences = d.total_divergences();
  r.rhat_available = d.n_chains >= 2;
  if (!r.rhat_available) r.warnings.push_back("single chain: R-hat omitted");
  for (Eigen::Index j = 0; j < d.dimension(); ++j) {
    const ScalarDiagnostics s = diagnose_scalar(chain_columns(d.draws, j, d.n_chains));
    if (s.constant) {
      const std::string name = j < static_cast<Eigen::Index>(r.names.size()) ? r.names[j] : fmt::format("{}", j);
      r.warnings.push_back(fmt::format("parameter '{}' is constant across draws: ESS undefined", name));
    }
    r.per_parameter.push_back(s);
  }
  if (r.divergences > 0) r.warnings.push_back(fmt::format("{} divergent transitions after warmup", r.divergences));
  return r;
}

}  // namespace twoarm

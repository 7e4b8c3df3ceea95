#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twoarm/simulation.hpp"

namespace twoarm {

/// One weighted pooled sample: responses, raw inverse-probability weights
/// and arm labels (1 = convenience, 0 = reference).
struct WeightedSampleDraw {
  Eigen::VectorXd y;
  Eigen::VectorXd weights;
  Eigen::VectorXi arm;

  Eigen::Index size() const { return y.size(); }
  void validate() const;
};

/// Stack convenience and reference rows with weights 1/pi.
WeightedSampleDraw make_weighted_draw(const Eigen::VectorXd& y_c, const Eigen::VectorXd& pi_c,
                                      const Eigen::VectorXd& y_r, const Eigen::VectorXd& pi_r);

/// Ratio of the weighted response total to the weighted count.
double hajek_mean(const WeightedSampleDraw& s);
double hajek_mean(const Eigen::VectorXd& y_c, const Eigen::VectorXd& pi_c_hat, const Eigen::VectorXd& y_r,
                  const Eigen::VectorXd& pi_r);

/// Linearized design variance of the Hajek mean. With normalized weights
/// v_i = w_i / sum(w) and residual scores u_i = v_i (y_i - mu_hat):
/// convenience rows are treated as Poisson sampling, contributing
/// (1 - 1/w_i) u_i^2 each; reference rows use the with-replacement
/// approximation n_r / (n_r - 1) * sum (u_i - mean(u))^2. Weights are raw
/// 1/pi; the normalization happens here.
double taylor_within_variance(const WeightedSampleDraw& s, double mu_hat);

struct MIVarianceResult {
  double point = 0;
  double within = 0;   ///< mean within-imputation variance
  double between = 0;  ///< sample variance of the point estimates
  double total = 0;    ///< (1 + 1/J) between + within
  double df = 0;       ///< Rubin's degrees of freedom; +inf when between == 0
  double lo = 0;
  double hi = 0;
  int J = 0;
};

inline constexpr int kDefaultImputations = 10;

/// Combine J imputations with a symmetric t interval at level 1 - alpha.
MIVarianceResult mi_total_variance(const Eigen::VectorXd& points, const Eigen::VectorXd& within, double alpha = 0.10);

/// J indices into `total` draws, equally spaced from the end backwards so the
/// last draw is always used.
std::vector<Eigen::Index> thinned_indices(Eigen::Index total, int J = kDefaultImputations);

/// epsilon = p-th percentile (linear interpolation) of the smoothed
/// reference probabilities over reference units; convenience unit i is kept
/// when pi_r_c(i) >= epsilon. p = 0 keeps every unit.
IndexSet threshold_convenience(const Eigen::VectorXd& pi_r_c, const Eigen::VectorXd& pi_r_ref, double p);

/// sum(w y_curr) / sum(w y_prev); unweighted when `weights` is empty.
double link_relative(const Eigen::VectorXd& y_curr, const Eigen::VectorXd& y_prev,
                     const Eigen::VectorXd& weights = Eigen::VectorXd());

/// start_level times the product of the ratios.
double chained_level(double start_level, const Eigen::VectorXd& ratios);

double coefficient_of_variation(double variance, double estimate);

/// One row of an estimator report.
struct EstimatorRow {
  std::string scenario;
  std::string method;
  int replicate = 0;
  MIVarianceResult result;
};

void write_estimator_report(const std::string& path, const std::vector<EstimatorRow>& rows);

}  // namespace twoarm

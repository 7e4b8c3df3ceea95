#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twoarm/sampler.hpp"

namespace twoarm {

/// Convergence summary for one scalar quantity. NaN entries mean the
/// statistic is undefined for the input (single chain for R-hat, zero
/// variance for both).
struct ScalarDiagnostics {
  double rhat = 0;
  double ess_bulk = 0;
  bool constant = false;
};

/// Rank-normalized split R-hat: the larger of the bulk value and the value
/// for the folded draws |x - median|. `chains` holds one chain per column.
/// Requires at least two chains and four draws per chain; returns NaN when
/// the draws have zero within-chain variance.
double split_rhat(const Eigen::MatrixXd& chains);

/// Bulk effective sample size of rank-normalized split chains, using
/// Geyer's initial monotone sequence on the combined autocorrelations.
double bulk_ess(const Eigen::MatrixXd& chains);

ScalarDiagnostics diagnose_scalar(const Eigen::MatrixXd& chains);

struct DiagnosticsReport {
  std::vector<std::string> names;
  std::vector<ScalarDiagnostics> per_parameter;
  int divergences = 0;
  bool rhat_available = true;
  std::vector<std::string> warnings;

  double max_rhat() const;
  double min_ess() const;
};

/// Diagnostics for every column of the draw matrix. With a single chain
/// R-hat is omitted (NaN) and a warning is recorded.
DiagnosticsReport diagnostics(const PosteriorDraws& d);

/// Reshape column `col` of a stacked draw matrix into draws x chains.
Eigen::MatrixXd chain_columns(const Eigen::MatrixXd& stacked, Eigen::Index col, int n_chains);

}  // namespace twoarm

#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace twoarm {

/// Probability cap applied to certainty reference units before taking logits.
inline constexpr double kCertaintyCap = 1.0 - 1e-6;

/// Convenience and reference samples stacked into one set: convenience rows
/// first (z = 1), reference rows after (z = 0). A unit drawn into both
/// samples appears twice and is never matched.
struct PooledSample {
  Eigen::MatrixXd X;     ///< n x K predictors, no intercept column
  Eigen::MatrixXd X_sp;  ///< n x K_sp continuous predictors given a spline term
  Eigen::VectorXi z;     ///< convenience indicators
  Eigen::VectorXd pi_r;  ///< n_r known reference inclusion probabilities, in (0, 1]
  Eigen::VectorXd p_c;   ///< n coverage probabilities of the convenience frame
  Eigen::VectorXd p_r;   ///< n coverage probabilities of the reference frame
  std::vector<std::string> predictor_names;
  std::vector<std::string> spline_names;
  Eigen::Index n_c = 0;
  Eigen::Index n_r = 0;

  Eigen::Index n() const { return n_c + n_r; }
  Eigen::Index num_predictors() const { return X.cols(); }
  Eigen::Index num_spline_predictors() const { return X_sp.cols(); }

  /// logit(pi_r) with certainty units capped at kCertaintyCap.
  Eigen::VectorXd logit_pw() const;
  /// Reference design weights 1 / pi_r.
  Eigen::VectorXd design_weights() const { return pi_r.cwiseInverse(); }

  /// Throws ValidationError when shapes, ordering or probabilities are off.
  void validate() const;
};

/// Stack the two arms. Coverage probabilities default to one.
PooledSample make_pooled_sample(const Eigen::MatrixXd& X_c, const Eigen::MatrixXd& X_r, const Eigen::MatrixXd& Xsp_c,
                                const Eigen::MatrixXd& Xsp_r, const Eigen::VectorXd& pi_r,
                                std::vector<std::string> predictor_names = {},
                                std::vector<std::string> spline_names = {});

/// Extra per-row columns carried alongside a pooled sample in files
/// (outcomes and simulation truth). Empty vectors mean "absent".
struct PooledSampleAudit {
  Eigen::VectorXd y;
  Eigen::VectorXd true_pi_c;
  Eigen::VectorXd true_pi_r;
  Eigen::VectorXi unit_id;
};

struct PooledSampleFile {
  PooledSample sample;
  PooledSampleAudit audit;
};

/// Read the CSV ingestion format: required columns `z` and `pi_r` (empty on
/// convenience rows), optional `p_c`, `p_r`, `y`, `true_pi_c`, `true_pi_r`,
/// `unit_id`; every other column is a predictor. `spline_columns` names the
/// predictors that also get a spline term; when empty, every predictor that
/// is not 0/1-valued is used.
PooledSampleFile read_pooled_sample_csv(const std::string& path, const std::vector<std::string>& spline_columns = {});

void write_pooled_sample_csv(const std::string& path, const PooledSample& sample, const PooledSampleAudit& audit = {});

}  // namespace twoarm

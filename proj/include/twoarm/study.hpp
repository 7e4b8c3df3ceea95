#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "twoarm/diagnostics.hpp"
#include "twoarm/estimators.hpp"
#include "twoarm/hier_model.hpp"
#include "twoarm/sampler.hpp"
#include "twoarm/simulation.hpp"

namespace twoarm {

// ---------------------------------------------------------------------------
// Fitting one pooled sample

struct FitOptions {
  LikelihoodSpec likelihood;
  SamplerConfig sampler;
  int num_knots = 10;
  int degree = 3;
};

/// Posterior output of one fit. Draws are stored in the model's
/// unconstrained parameterization; `pi_c` and `pi_r` hold per-draw
/// probabilities for every pooled row (draws x n).
struct FitResult {
  HierModel model;
  PosteriorDraws draws;
  Eigen::MatrixXd pi_c;
  Eigen::MatrixXd pi_r;
  DiagnosticsReport diagnostics;
  double max_rhat_pi_c = 0;  ///< largest split R-hat over convenience-row pi_c

  const LikelihoodSpec& likelihood() const { return model.spec(); }
};

/// Quantile-knot basis, initialization at raws uniform(-0.5, 0.5) with
/// log-variances at 0, sampling and generated quantities.
FitResult fit_pooled_sample(const PooledSample& data, const FitOptions& options);

/// Posterior mean and central interval per column of a draws x units matrix.
struct PosteriorSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

PosteriorSummary summarize_columns(const Eigen::MatrixXd& draws, double level = 0.90);

// ---------------------------------------------------------------------------
// Monte Carlo study

struct StudyConfig {
  PopulationSpec population;
  SamplingDesigns designs;
  int replicates = 10;
  std::vector<LikelihoodKind> methods{LikelihoodKind::TwoArmExact, LikelihoodKind::CLW, LikelihoodKind::WVL};
  std::vector<Overlap> overlaps{Overlap::High, Overlap::Low};
  /// Dense metric by default: the reference-arm coefficients are strongly
  /// correlated under the two-arm likelihood and a diagonal metric needs
  /// trees about twice as deep.
  SamplerConfig sampler{.metric = MetricKind::Dense};
  bool clw_tempered = true;
  int num_knots = 10;
  int degree = 3;
  int bins = 10;
  int imputations = kDefaultImputations;
  double level = 0.90;
  std::vector<double> threshold_percents{1, 5, 10};
  /// A fit whose post-warmup divergences exceed this fraction of draws is
  /// counted as failed and left out of the metrics.
  double max_divergence_fraction = 0.05;
  std::uint64_t seed = 20240613;
  /// Replicates processed concurrently.
  int workers = 1;

  void validate() const;
};

nlohmann::json study_config_to_json(const StudyConfig& c);
/// Apply the keys present in `j` on top of `base`; unknown keys are rejected.
StudyConfig study_config_from_json(const nlohmann::json& j, StudyConfig base = {});

/// Estimate of the population mean from one fit or weighting scheme.
struct MuEstimate {
  std::string variant;
  double estimate = 0;
  double lo = 0;
  double hi = 0;
};

/// Per-unit pi_c summaries of the convenience rows plus mean estimates.
struct MethodResult {
  int replicate = 0;
  Overlap overlap = Overlap::High;
  /// "two-arm", "clw", "wvl", or "design" for the estimators that need no fit.
  std::string method;
  bool ok = true;
  std::string error;
  int divergences = 0;
  double max_rhat_pi_c = 0;
  double mu_true = 0;
  Eigen::VectorXd true_pi_c;
  Eigen::VectorXd est_mean;
  Eigen::VectorXd est_lo;
  Eigen::VectorXd est_hi;
  std::vector<MuEstimate> mu;
};

nlohmann::json to_json(const MethodResult& r);
MethodResult method_result_from_json(const nlohmann::json& j);

/// Simulate one replicate and fit every requested method on each overlap
/// scenario. Fit failures are recorded in the result, never thrown. The
/// first entry per scenario is the "design" row holding the true-weight and
/// reference-only mean estimates.
std::vector<MethodResult> run_replicate(const StudyConfig& cfg, int replicate);

struct BinMetric {
  std::string scenario;
  std::string method;
  double bin_lo = 0;
  double bin_hi = 0;
  long n = 0;
  /// Missing (empty bin) metrics are NaN.
  double bias = 0;
  double rmse = 0;
  double coverage = 0;
  double width = 0;
  double reliability = 0;
};

struct MuMetric {
  std::string scenario;
  std::string method;
  std::string variant;
  long n = 0;
  double bias = 0;
  double rmse = 0;
  double mad = 0;
  double coverage = 0;
  double reliability = 0;
};

/// Headline numbers per (scenario, method).
struct ScenarioSummary {
  std::string scenario;
  std::string method;
  long n_units = 0;
  int fits_ok = 0;
  int fits_total = 0;
  double mean_coverage = 0;  ///< unweighted mean over non-empty bins
  double pooled_bias = 0;
  double pooled_rmse = 0;
  double top_tercile_coverage = 0;
  double top_tercile_cut = 0;
  double max_rhat_pi_c = 0;
};

struct MetricTable {
  std::vector<BinMetric> pointwise;
  std::vector<MuMetric> mu;
  std::vector<ScenarioSummary> summary;

  const ScenarioSummary* find_summary(const std::string& scenario, const std::string& method) const;
  const MuMetric* find_mu(const std::string& scenario, const std::string& method, const std::string& variant) const;
};

/// Units pooled across replicates and binned into `bins` equal-width bins
/// of true pi_c on [0, 1]. The top tercile holds the units whose true pi_c
/// is at or above the 2/3 quantile of the pooled true values.
MetricTable aggregate_metrics(const std::vector<MethodResult>& results, int bins = 10);

void write_pointwise_csv(const std::string& path, const std::vector<BinMetric>& rows);
void write_mu_csv(const std::string& path, const std::vector<MuMetric>& rows);
void write_summary_csv(const std::string& path, const std::vector<ScenarioSummary>& rows);

struct StudyOutcome {
  std::vector<MethodResult> results;
  MetricTable metrics;
  int failed_fits = 0;
};

/// Run or resume a study in `out_dir`: each finished replicate is saved to
/// checkpoints/replicate_<r>.json and reused on the next run when the saved
/// configuration matches. Writes pointwise_metrics.csv, mu_metrics.csv,
/// summary_metrics.csv and manifest.json.
StudyOutcome run_study(const StudyConfig& cfg, const std::string& out_dir);

/// Load every checkpoint in `study_dir` (as written by run_study).
std::vector<MethodResult> load_checkpoints(const std::string& study_dir);

}  // namespace twoarm

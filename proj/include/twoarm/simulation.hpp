#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "twoarm/pooled_sample.hpp"
#include "twoarm/rng.hpp"

namespace twoarm {

using IndexSet = std::vector<Eigen::Index>;

/// Column order of the population design matrix. Coefficient vectors use
/// the same order.
enum PopulationColumn : int { kCont = 0, kIntercept = 1, kA = 2, kB = 3, kC = 4 };

struct PopulationSpec {
  int N = 4000;
  /// Outcome coefficients in column order (cont, intercept, A, B, C).
  std::array<double, 5> beta_outcome{1.0, 0.5, 0.0, -0.5, -1.0};
  /// Standard deviation of log y around its mean.
  double outcome_scale = 2.0;

  void validate() const;
};

/// Logistic convenience design: pi_c = logit^-1(x' beta + offset).
struct ConvenienceDesign {
  std::array<double, 5> beta{};
  double offset = 0;

  static ConvenienceDesign high_overlap() { return {{0.500, 0.175, -0.150, -0.475, -0.800}, -0.900}; }
  static ConvenienceDesign low_overlap() { return {{-1.00, -0.50, 0.00, 0.50, 1.00}, -2.23}; }
};

enum class Overlap { High, Low };

std::string to_string(Overlap o);
/// Accepts "high" or "low".
Overlap parse_overlap(const std::string& s);

struct SamplingDesigns {
  int n_r = 400;
  ConvenienceDesign high = ConvenienceDesign::high_overlap();
  ConvenienceDesign low = ConvenienceDesign::low_overlap();

  const ConvenienceDesign& convenience(Overlap o) const { return o == Overlap::High ? high : low; }
};

struct Population {
  Eigen::MatrixXd X;  ///< N x 5 in PopulationColumn order
  Eigen::VectorXd mu;
  Eigen::VectorXd y;
  Eigen::VectorXd s_r;  ///< reference size measures
  Eigen::VectorXd pi_r;
  Eigen::VectorXd pi_c_high;
  Eigen::VectorXd pi_c_low;

  Eigen::Index size() const { return X.rows(); }
  const Eigen::VectorXd& pi_c(Overlap o) const { return o == Overlap::High ? pi_c_high : pi_c_low; }
};

/// Binary covariates are Bernoulli(0.5), the continuous one standard
/// normal; log y ~ Normal(mu, outcome_scale); size s_r = log(exp(mu) + 1).
Population generate_population(const PopulationSpec& spec, const SamplingDesigns& designs, Rng& rng);

/// Inclusion probabilities proportional to size for a fixed sample size n.
/// Units whose probability reaches one become certainty units and the
/// remaining target is spread over the others until no probability exceeds
/// one.
Eigen::VectorXd pps_inclusion_probabilities(const Eigen::VectorXd& sizes, int n);

/// Randomized systematic sampling: the units are randomly permuted, then one
/// uniform start selects the units whose cumulative probability interval
/// contains start + k. Sample size equals sum(pi).
IndexSet draw_pps_sample(const Eigen::VectorXd& pi, Rng& rng);

Eigen::VectorXd convenience_probabilities(const Eigen::MatrixXd& X, const ConvenienceDesign& design);

/// Independent Bernoulli(pi_i) inclusion.
IndexSet draw_poisson_sample(const Eigen::VectorXd& pi, Rng& rng);

/// Stack convenience rows then reference rows. The model sees predictors
/// (cont, A, B, C) with a spline on cont; truth goes to the audit columns.
PooledSampleFile build_pooled_sample(const Population& pop, const IndexSet& ref_idx, const IndexSet& conv_idx,
                                     const Eigen::VectorXd& true_pi_c);

/// |ref and conv| / (|ref| + |conv|).
double overlap_fraction(const IndexSet& ref_idx, const IndexSet& conv_idx);

/// Everything that defines one seeded scenario.
struct ScenarioConfig {
  PopulationSpec population;
  SamplingDesigns designs;
  Overlap overlap = Overlap::High;
  int replicate = 0;
  std::uint64_t seed = 20240613;

  void validate() const;
};

/// Apply the keys present in `j` on top of `base`. Recognized keys: N, n_r,
/// overlap, seed, replicate, outcome_beta, outcome_scale, high, low (the
/// last two are six numbers: five coefficients then the offset). Unknown
/// keys are rejected.
ScenarioConfig scenario_from_json(const nlohmann::json& j, ScenarioConfig base = {});
nlohmann::json scenario_to_json(const ScenarioConfig& c);

/// One population with its reference sample and both convenience samples.
/// The population and reference sample depend only on (seed, replicate);
/// each convenience sample has its own stream.
struct ReplicateData {
  Population population;
  IndexSet reference;
  IndexSet convenience_high;
  IndexSet convenience_low;

  const IndexSet& convenience(Overlap o) const { return o == Overlap::High ? convenience_high : convenience_low; }
  PooledSampleFile pooled(Overlap o) const;
};

ReplicateData simulate_replicate(const PopulationSpec& spec, const SamplingDesigns& designs, std::uint64_t seed,
                                 int replicate);

void write_population_csv(const std::string& path, const Population& pop);

}  // namespace twoarm

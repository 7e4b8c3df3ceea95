#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twoarm/rng.hpp"

namespace twoarm {

/// Shape of the adapted inverse mass matrix.
enum class MetricKind { Diagonal, Dense };

struct SamplerConfig {
  int n_chains = 4;
  int warmup = 1000;
  int draws = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 20240613;
  /// Worker threads for chains; 0 means one per chain.
  int workers = 0;
  bool adapt = true;
  MetricKind metric = MetricKind::Diagonal;

  void validate() const;
};

/// A differentiable log density: returns log p(q) and writes its gradient.
/// Must be safe to call concurrently from several threads.
struct Target {
  Eigen::Index dimension = 0;
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> log_density;
};

/// Starting point for chain `chain`, drawn from that chain's own stream.
using InitFn = std::function<Eigen::VectorXd(int chain, Rng& rng)>;

/// Draws in unconstrained space plus per-chain sampler statistics.
struct PosteriorDraws {
  int n_chains = 0;
  int draws_per_chain = 0;
  /// (n_chains * draws_per_chain) x dimension; chain c occupies rows
  /// [c * draws_per_chain, (c + 1) * draws_per_chain).
  Eigen::MatrixXd draws;
  std::vector<std::string> parameter_names;
  std::vector<double> step_size;                ///< adapted step size per chain
  std::vector<Eigen::VectorXd> inverse_metric;  ///< diagonal of the adapted inverse metric per chain
  std::vector<int> divergences;                 ///< post-warmup divergences per chain
  std::vector<double> mean_accept_stat;         ///< post-warmup mean acceptance statistic per chain
  std::vector<double> mean_tree_depth;
  Eigen::VectorXd accept_stat;  ///< per post-warmup draw
  Eigen::VectorXi tree_depth;   ///< per post-warmup draw

  Eigen::Index dimension() const { return draws.cols(); }
  int total_divergences() const;
  /// Draws of one chain as a view.
  Eigen::Block<const Eigen::MatrixXd> chain(int c) const {
    return draws.middleRows(static_cast<Eigen::Index>(c) * draws_per_chain, draws_per_chain);
  }
};

/// Uniform(-0.5, 0.5) for the first `num_uniform` coordinates and zero for
/// the rest (log-variances start at 0).
InitFn uniform_raw_init(Eigen::Index dimension, Eigen::Index num_uniform);

/// Dynamic-trajectory HMC with multinomial sampling, no-U-turn termination,
/// dual-averaging step size and windowed diagonal metric adaptation. Each
/// chain owns an RNG stream derived from (cfg.seed, chain). Output is
/// independent of the worker count.
PosteriorDraws run_chains(const Target& target, const InitFn& init, const SamplerConfig& cfg);

/// Write draws as CSV with a header of parameter names and a leading chain
/// column.
void write_draws_csv(const std::string& path, const PosteriorDraws& d);

}  // namespace twoarm

#include "twoarm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "twoarm/csv.hpp"
#include "twoarm/error.hpp"

namespace twoarm {

void SamplerConfig::validate() const {
  if (n_chains < 1) throw ValidationError(fmt::format("n_chains must be >= 1, got {}", n_chains));
  if (draws < 1) throw ValidationError(fmt::format("draws must be >= 1, got {}", draws));
  if (warmup < 0) throw ValidationError("warmup must be nonnegative");
  if (adapt && warmup < 100)
    throw ValidationError(fmt::format("warmup must be >= 100 when adaptation is enabled, got {}", warmup));
  if (!(target_accept > 0 && target_accept < 1))
    throw ValidationError(fmt::format("target_accept must lie in (0, 1), got {}", target_accept));
  if (max_tree_depth < 1) throw ValidationError("max_tree_depth must be >= 1");
  if (workers < 0) throw ValidationError("workers must be nonnegative");
}

int PosteriorDraws::total_divergences() const {
  int total = 0;
  for (int d : divergences) total += d;
  return total;
}

InitFn uniform_raw_init(Eigen::Index dimension, Eigen::Index num_uniform) {
  return [dimension, num_uniform](int, Rng& rng) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(dimension);
    for (Eigen::Index i = 0; i < num_uniform; ++i) q(i) = uniform01(rng) - 0.5;
    return q;
  };
}

namespace {

constexpr double kMaxDeltaH = 1000.0;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Step-size tuning toward a target acceptance statistic.
class DualAveraging {
 public:
  explicit DualAveraging(double delta) : delta_(delta) {}

  void restart(double epsilon) {
    counter_ = 0;
    s_bar_ = 0;
    x_bar_ = 0;
    mu_ = std::log(10 * epsilon);
  }

  double learn(double adapt_stat) {
    ++counter_;
    adapt_stat = std::min(1.0, adapt_stat);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - adapt_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    const double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_epsilon() const { return std::exp(x_bar_); }

 private:
  double delta_;
  double gamma_ = 0.05;
  double t0_ = 10;
  double kappa_ = 0.75;
  double counter_ = 0;
  double s_bar_ = 0;
  double x_bar_ = 0;
  double mu_ = 0;
};

/// Running mean and covariance (Welford). Only the diagonal is tracked
/// unless `full` is set.
class Welford {
 public:
  Welford(Eigen::Index dim, bool full)
      : full_(full),
        mean_(Eigen::VectorXd::Zero(dim)),
        m2_(Eigen::VectorXd::Zero(dim)),
        m2_full_(full ? Eigen::MatrixXd::Zero(dim, dim) : Eigen::MatrixXd()) {}
  void add(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    const Eigen::VectorXd delta_after = x - mean_;
    m2_ += delta.cwiseProduct(delta_after);
    if (full_) m2_full_.noalias() += delta * delta_after.transpose();
  }
  long count() const { return n_; }
  Eigen::VectorXd variance() const { return m2_ / static_cast<double>(n_ - 1); }
  Eigen::MatrixXd covariance() const { return m2_full_ / static_cast<double>(n_ - 1); }
  void restart() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
    if (full_) m2_full_.setZero();
  }

 private:
  bool full_;
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
  Eigen::MatrixXd m2_full_;
};

/// Inverse mass matrix, diagonal or dense. For the dense case the upper
/// Cholesky factor U of the inverse metric (inverse = U' U) is cached so
/// momenta p = U^-1 u have covariance equal to the metric.
struct Metric {
  bool dense = false;
  Eigen::VectorXd diag;
  Eigen::MatrixXd full;
  Eigen::MatrixXd upper;

  Metric(Eigen::Index dim, bool is_dense) : dense(is_dense), diag(Eigen::VectorXd::Ones(dim)) {
    if (dense) {
      full = Eigen::MatrixXd::Identity(dim, dim);
      upper = full;
    }
  }

  void set_full(Eigen::MatrixXd m) {
    full = std::move(m);
    diag = full.diagonal();
    Eigen::LLT<Eigen::MatrixXd> llt(full);
    if (llt.info() != Eigen::Success) throw NumericalError("adapted metric is not positive definite");
    upper = llt.matrixU();
  }

  Eigen::VectorXd sharp(const Eigen::VectorXd& p) const { return dense ? Eigen::VectorXd(full * p) : diag.cwiseProduct(p); }
};

/// Warmup schedule: fast initial buffer, doubling slow windows for the
/// metric, fast terminal buffer.
class MetricWindows {
 public:
  MetricWindows(int warmup, Eigen::Index dim, bool dense) : warmup_(warmup), estimator_(dim, dense) {
    if (init_buffer_ + base_window_ + term_buffer_ > warmup_) {
      init_buffer_ = static_cast<int>(0.15 * warmup_);
      term_buffer_ = static_cast<int>(0.1 * warmup_);
      base_window_ = warmup_ - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  /// Feed the post-transition position. Returns true when a window closed
  /// and `metric` was updated.
  bool learn(const Eigen::VectorXd& q, Metric& metric) {
    if (counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ && counter_ != warmup_) estimator_.add(q);
    if (counter_ == next_window_ && counter_ != warmup_) {
      compute_next_window();
      const double n = static_cast<double>(estimator_.count());
      const double shrink = 1e-3 * (5.0 / (n + 5.0));
      if (metric.dense) {
        Eigen::MatrixXd cov = (n / (n + 5.0)) * estimator_.covariance();
        cov.diagonal().array() += shrink;
        metric.set_full(std::move(cov));
      } else {
        metric.diag = (n / (n + 5.0)) * estimator_.variance().array() + shrink;
      }
      estimator_.restart();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  void compute_next_window() {
    if (next_window_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
    }
  }

  int warmup_;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 0;
  int next_window_ = 0;
  int counter_ = 0;
  Welford estimator_;
};

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double logp = kNegInf;
};

struct TransitionStats {
  double accept_stat = 0;
  int depth = 0;
  bool divergent = false;
};

class NutsChain {
 public:
  NutsChain(const Target& target, Rng& rng, int max_depth, bool dense_metric)
      : target_(target), rng_(rng), max_depth_(max_depth), metric_(target.dimension, dense_metric) {}

  void set_position(const Eigen::VectorXd& q, int chain) {
    z_.q = q;
    z_.p = Eigen::VectorXd::Zero(q.size());
    z_.grad.resize(q.size());
    z_.logp = target_.log_density(z_.q, z_.grad);
    if (!std::isfinite(z_.logp))
      throw NumericalError(fmt::format("chain {}: log density is not finite at the initial point", chain));
    for (Eigen::Index i = 0; i < z_.grad.size(); ++i)
      if (!std::isfinite(z_.grad(i)))
        throw NumericalError(fmt::format("chain {}: gradient coordinate {} is not finite at the initial point", chain, i));
  }

  const Eigen::VectorXd& position() const { return z_.q; }
  double epsilon() const { return epsilon_; }
  void set_epsilon(double e) { epsilon_ = e; }
  Metric& metric() { return metric_; }

  /// Heuristic: double or halve until a single leapfrog step crosses an
  /// acceptance probability of 0.8.
  void init_stepsize() {
    const PhasePoint z_init = z_;
    PhasePoint z = z_;
    auto trial = [&]() {
      z = z_init;
      sample_momentum(z);
      const double h0 = hamiltonian(z);
      leapfrog(z, epsilon_);
      double h = hamiltonian(z);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      return h0 - h;
    };
    const double log08 = std::log(0.8);
    double delta_h = trial();
    const int direction = delta_h > log08 ? 1 : -1;
    for (int it = 0; it < 200; ++it) {
      delta_h = trial();
      if (direction == 1 && !(delta_h > log08)) break;
      if (direction == -1 && !(delta_h < log08)) break;
      epsilon_ = direction == 1 ? 2 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7) throw NumericalError("step size search diverged: posterior may be improper");
      if (epsilon_ < 1e-300) throw NumericalError("step size search collapsed to zero");
    }
  }

  TransitionStats transition() {
    sample_momentum(z_);
    const double h0 = hamiltonian(z_);

    PhasePoint z_fwd = z_, z_bck = z_;
    PhasePoint z_sample = z_, z_propose = z_;
    const Eigen::VectorXd p_sharp0 = metric_.sharp(z_.p);
    Eigen::VectorXd p_sharp_fwd_bck = p_sharp0, p_sharp_fwd_fwd = p_sharp0;
    Eigen::VectorXd p_sharp_bck_fwd = p_sharp0, p_sharp_bck_bck = p_sharp0;
    Eigen::VectorXd p_fwd_bck = z_.p, p_fwd_fwd = z_.p, p_bck_fwd = z_.p, p_bck_bck = z_.p;
    Eigen::VectorXd rho = z_.p;
    double log_sum_weight = 0;
    const Eigen::Index dim = z_.q.size();

    TreeState ts;
    int depth = 0;
    while (depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(dim);
      Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(dim);
      bool valid = false;
      double log_sum_weight_subtree = kNegInf;
      if (uniform01(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        PhasePoint z = z_fwd;
        valid = build_tree(depth, z, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, h0,
                           1.0, log_sum_weight_subtree, ts);
        z_fwd = std::move(z);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        PhasePoint z = z_bck;
        valid = build_tree(depth, z, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, h0,
                           -1.0, log_sum_weight_subtree, ts);
        z_bck = std::move(z);
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform01(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      Eigen::VectorXd rho_extended = rho_bck + p_fwd_bck;
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_extended);
      rho_extended = rho_fwd + p_bck_fwd;
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_extended);
      if (!persist) break;
    }

    TransitionStats out;
    out.depth = depth;
    out.divergent = ts.divergent;
    out.accept_stat = ts.n_leapfrog > 0 ? ts.sum_metro_prob / static_cast<double>(ts.n_leapfrog) : 0.0;
    z_ = std::move(z_sample);
    return out;
  }

 private:
  struct TreeState {
    long n_leapfrog = 0;
    double sum_metro_prob = 0;
    bool divergent = false;
  };

  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  void evaluate(PhasePoint& z) {
    try {
      z.logp = target_.log_density(z.q, z.grad);
      if (!std::isfinite(z.logp) || !z.grad.allFinite()) z.logp = kNegInf;
    } catch (const NumericalError&) {
      z.logp = kNegInf;
    }
  }

  double hamiltonian(const PhasePoint& z) const {
    if (z.logp == kNegInf) return std::numeric_limits<double>::infinity();
    return -z.logp + 0.5 * z.p.dot(metric_.sharp(z.p));
  }

  void sample_momentum(PhasePoint& z) {
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p(i) = std_normal(rng_);
    if (metric_.dense) {
      metric_.upper.triangularView<Eigen::Upper>().solveInPlace(z.p);
    } else {
      z.p.array() /= metric_.diag.array().sqrt();
    }
  }

  void leapfrog(PhasePoint& z, double eps) {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * metric_.sharp(z.p);
    evaluate(z);
    if (z.logp == kNegInf) return;
    z.p += 0.5 * eps * z.grad;
  }

  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end,
                  double h0, double sign, double& log_sum_weight, TreeState& ts) {
    if (depth == 0) {
      leapfrog(z, sign * epsilon_);
      ++ts.n_leapfrog;
      double h = hamiltonian(z);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > kMaxDeltaH) ts.divergent = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      ts.sum_metro_prob += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = z;
      p_sharp_beg = metric_.sharp(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !ts.divergent;
    }
    const Eigen::Index dim = z.q.size();

    double log_sum_weight_init = kNegInf;
    Eigen::VectorXd p_init_end(dim), p_sharp_init_end(dim);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(dim);
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0, sign,
                    log_sum_weight_init, ts))
      return false;

    PhasePoint z_propose_final = z;
    double log_sum_weight_final = kNegInf;
    Eigen::VectorXd p_final_beg(dim), p_sharp_final_beg(dim);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(dim);
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, h0,
                    sign, log_sum_weight_final, ts))
      return false;

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (uniform01(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    Eigen::VectorXd rho_extended = rho_init + p_final_beg;
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_extended);
    rho_extended = rho_final + p_init_end;
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_extended);
    return persist;
  }

  const Target& target_;
  Rng& rng_;
  int max_depth_;
  Metric metric_;
  double epsilon_ = 1.0;
  PhasePoint z_;
};

struct ChainResult {
  Eigen::MatrixXd draws;
  Eigen::VectorXd accept_stat;
  Eigen::VectorXi depth;
  int divergences = 0;
  double step_size = 0;
  Eigen::VectorXd inv_metric;
};

ChainResult run_one_chain(const Target& target, const InitFn& init, const SamplerConfig& cfg, int chain) {
  Rng rng = make_stream(cfg.seed, {static_cast<std::uint64_t>(chain)});
  const bool dense = cfg.metric == MetricKind::Dense;
  NutsChain nuts(target, rng, cfg.max_tree_depth, dense);
  const Eigen::VectorXd q0 = init(chain, rng);
  if (q0.size() != target.dimension)
    throw ValidationError(fmt::format("initial point has {} coordinates, target has {}", q0.size(), target.dimension));
  nuts.set_position(q0, chain);
  nuts.init_stepsize();

  ChainResult out;
  if (cfg.adapt && cfg.warmup > 0) {
    DualAveraging da(cfg.target_accept);
    da.restart(nuts.epsilon());
    MetricWindows windows(cfg.warmup, target.dimension, dense);
    int divergent_warmup = 0;
    for (int it = 0; it < cfg.warmup; ++it) {
      const TransitionStats s = nuts.transition();
      if (s.divergent) ++divergent_warmup;
      nuts.set_epsilon(da.learn(s.accept_stat));
      if (windows.learn(nuts.position(), nuts.metric())) {
        nuts.init_stepsize();
        da.restart(nuts.epsilon());
      }
    }
    if (divergent_warmup == cfg.warmup)
      throw NumericalError(fmt::format("chain {}: every warmup transition diverged (last step size {})", chain,
                                       nuts.epsilon()));
    nuts.set_epsilon(da.final_epsilon());
  } else {
    for (int it = 0; it < cfg.warmup; ++it) nuts.transition();
  }

  out.draws.resize(cfg.draws, target.dimension);
  out.accept_stat.resize(cfg.draws);
  out.depth.resize(cfg.draws);
  for (int it = 0; it < cfg.draws; ++it) {
    const TransitionStats s = nuts.transition();
    out.draws.row(it) = nuts.position().transpose();
    out.accept_stat(it) = s.accept_stat;
    out.depth(it) = s.depth;
    if (s.divergent) ++out.divergences;
  }
  out.step_size = nuts.epsilon();
  out.inv_metric = nuts.metric().diag;
  return out;
}

}  // namespace

PosteriorDraws run_chains(const Target& target, const InitFn& init, const SamplerConfig& cfg) {
  cfg.validate();
  if (target.dimension < 1) throw ValidationError("target dimension must be >= 1");
  std::vector<ChainResult> results(static_cast<std::size_t>(cfg.n_chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.n_chains));

  const int workers = std::max(1, std::min(cfg.workers == 0 ? cfg.n_chains : cfg.workers, cfg.n_chains));
  if (workers == 1) {
    for (int c = 0; c < cfg.n_chains; ++c) results[c] = run_one_chain(target, init, cfg, c);
  } else {
    std::mutex m;
    int next = 0;
    auto worker = [&]() {
      for (;;) {
        int c;
        {
          std::lock_guard lock(m);
          if (next >= cfg.n_chains) return;
          c = next++;
        }
        try {
          results[c] = run_one_chain(target, init, cfg, c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  PosteriorDraws d;
  d.n_chains = cfg.n_chains;
  d.draws_per_chain = cfg.draws;
  d.draws.resize(static_cast<Eigen::Index>(cfg.n_chains) * cfg.draws, target.dimension);
  d.accept_stat.resize(d.draws.rows());
  d.tree_depth.resize(d.draws.rows());
  for (int c = 0; c < cfg.n_chains; ++c) {
    const auto& r = results[c];
    const Eigen::Index off = static_cast<Eigen::Index>(c) * cfg.draws;
    d.draws.middleRows(off, cfg.draws) = r.draws;
    d.accept_stat.segment(off, cfg.draws) = r.accept_stat;
    d.tree_depth.segment(off, cfg.draws) = r.depth;
    d.step_size.push_back(r.step_size);
    d.inverse_metric.push_back(r.inv_metric);
    d.divergences.push_back(r.divergences);
    d.mean_accept_stat.push_back(r.accept_stat.mean());
    d.mean_tree_depth.push_back(r.depth.cast<double>().mean());
  }
  for (Eigen::Index j = 0; j < target.dimension; ++j) d.parameter_names.push_back(fmt::format("theta.{}", j + 1));
  return d;
}

void write_draws_csv(const std::string& path, const PosteriorDraws& d) {
  std::vector<std::string> header = {"chain"};
  for (Eigen::Index j = 0; j < d.dimension(); ++j)
    header.push_back(j < static_cast<Eigen::Index>(d.parameter_names.size()) ? d.parameter_names[j]
                                                                            : fmt::format("theta.{}", j + 1));
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(d.draws.rows()));
  for (Eigen::Index i = 0; i < d.draws.rows(); ++i) {
    std::vector<std::string> r;
    r.reserve(static_cast<std::size_t>(d.dimension() + 1));
    r.push_back(std::to_string(i / std::max(1, d.draws_per_chain) + 1));
    for (Eigen::Index j = 0; j < d.dimension(); ++j) r.push_back(csv::format_double(d.draws(i, j)));
    rows.push_back(std::move(r));
  }
  csv::write(path, header, rows);
}

}  // namespace twoarm

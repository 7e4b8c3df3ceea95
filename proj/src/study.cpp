#include "twoarm/study.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include <boost/math/distributions/normal.hpp>
#include <boost/version.hpp>
#include <fmt/format.h>

#include "twoarm/csv.hpp"
#include "twoarm/error.hpp"

namespace twoarm {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

}  // namespace

// ---------------------------------------------------------------------------
// Fitting

PosteriorSummary summarize_columns(const Eigen::MatrixXd& draws, double level) {
  if (!(level > 0 && level < 1)) throw ValidationError(fmt::format("interval level must lie in (0, 1), got {}", level));
  if (draws.rows() == 0) throw ValidationError("cannot summarize zero draws");
  PosteriorSummary s;
  s.mean = draws.colwise().mean();
  s.lo.resize(draws.cols());
  s.hi.resize(draws.cols());
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    Eigen::Map<Eigen::VectorXd>(col.data(), draws.rows()) = draws.col(j);
    std::sort(col.begin(), col.end());
    s.lo(j) = quantile_sorted(col, (1.0 - level) / 2);
    s.hi(j) = quantile_sorted(col, (1.0 + level) / 2);
  }
  return s;
}

FitResult fit_pooled_sample(const PooledSample& data, const FitOptions& options) {
  HierModel model = HierModel::with_default_knots(data, options.likelihood, options.num_knots, options.degree);
  const Eigen::Index dim = model.dimension();
  PosteriorDraws draws;
  {
    const HierModel& m = model;
    const Target target{dim, [&m](const Eigen::VectorXd& q, Eigen::VectorXd& g) { return m.log_density_sampling(q, &g); }};
    const InitFn raw_init = uniform_raw_init(dim, m.layout().num_raw());
    const InitFn init = [&m, &raw_init](int chain, Rng& rng) { return m.to_sampling(raw_init(chain, rng)); };
    draws = run_chains(target, init, options.sampler);
  }
  for (Eigen::Index s = 0; s < draws.draws.rows(); ++s)
    draws.draws.row(s) = model.from_sampling(draws.draws.row(s).transpose()).transpose();
  draws.parameter_names = model.layout().names();

  const Eigen::Index n = data.n();
  Eigen::MatrixXd pi_c(draws.draws.rows(), n), pi_r(draws.draws.rows(), n);
  for (Eigen::Index s = 0; s < draws.draws.rows(); ++s) {
    const UnitProbabilities u = model.probabilities(draws.draws.row(s).transpose());
    pi_c.row(s) = u.pi_c.transpose();
    pi_r.row(s) = u.pi_r.transpose();
  }
  DiagnosticsReport report = diagnostics(draws);
  double max_rhat = kNaN;
  if (draws.n_chains >= 2 && draws.draws_per_chain >= 4) {
    for (Eigen::Index i = 0; i < data.n_c; ++i) {
      const double r = split_rhat(chain_columns(pi_c, i, draws.n_chains));
      if (!std::isnan(r)) max_rhat = std::isnan(max_rhat) ? r : std::max(max_rhat, r);
    }
  }
  return FitResult{std::move(model), std::move(draws), std::move(pi_c), std::move(pi_r), std::move(report), max_rhat};
}

// ---------------------------------------------------------------------------
// Configuration

void StudyConfig::validate() const {
  population.validate();
  if (designs.n_r < 1 || designs.n_r > population.N)
    throw ValidationError(fmt::format("n_r = {} must lie in [1, N = {}]", designs.n_r, population.N));
  if (replicates < 1) throw ValidationError(fmt::format("replicates must be >= 1, got {}", replicates));
  if (overlaps.empty()) throw ValidationError("at least one overlap scenario is required");
  if (bins < 1) throw ValidationError("bins must be >= 1");
  if (imputations < 2) throw ValidationError("imputations must be >= 2");
  if (!(level > 0 && level < 1)) throw ValidationError("level must lie in (0, 1)");
  for (double p : threshold_percents)
    if (!(p > 0 && p < 100)) throw ValidationError(fmt::format("threshold percent {} outside (0, 100)", p));
  if (!(max_divergence_fraction >= 0 && max_divergence_fraction <= 1))
    throw ValidationError("max_divergence_fraction must lie in [0, 1]");
  if (workers < 1) throw ValidationError("workers must be >= 1");
  if (num_knots < 2 || degree < 0) throw ValidationError("need num_knots >= 2 and degree >= 0");
  sampler.validate();
  if (static_cast<long>(sampler.n_chains) * sampler.draws < imputations)
    throw ValidationError("fewer posterior draws than imputations");
}

namespace {

std::string metric_name(MetricKind m) { return m == MetricKind::Dense ? "dense" : "diag"; }

MetricKind parse_metric(const std::string& s) {
  if (s == "dense") return MetricKind::Dense;
  if (s == "diag") return MetricKind::Diagonal;
  throw ValidationError(fmt::format("unknown metric '{}': expected 'diag' or 'dense'", s));
}

nlohmann::json identity_json(const StudyConfig& c) {
  nlohmann::json j = study_config_to_json(c);
  j.erase("workers");
  return j;
}

}  // namespace

nlohmann::json study_config_to_json(const StudyConfig& c) {
  nlohmann::json methods = nlohmann::json::array(), overlaps = nlohmann::json::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  for (auto o : c.overlaps) overlaps.push_back(to_string(o));
  auto design = [](const ConvenienceDesign& d) {
    return nlohmann::json::array({d.beta[0], d.beta[1], d.beta[2], d.beta[3], d.beta[4], d.offset});
  };
  return {{"N", c.population.N},
          {"n_r", c.designs.n_r},
          {"outcome_beta", c.population.beta_outcome},
          {"outcome_scale", c.population.outcome_scale},
          {"high", design(c.designs.high)},
          {"low", design(c.designs.low)},
          {"replicates", c.replicates},
          {"methods", methods},
          {"overlaps", overlaps},
          {"chains", c.sampler.n_chains},
          {"warmup", c.sampler.warmup},
          {"draws", c.sampler.draws},
          {"target_accept", c.sampler.target_accept},
          {"max_tree_depth", c.sampler.max_tree_depth},
          {"metric", metric_name(c.sampler.metric)},
          {"clw_tempered", c.clw_tempered},
          {"num_knots", c.num_knots},
          {"degree", c.degree},
          {"bins", c.bins},
          {"imputations", c.imputations},
          {"level", c.level},
          {"thresholds", c.threshold_percents},
          {"max_divergence_fraction", c.max_divergence_fraction},
          {"seed", c.seed},
          {"workers", c.workers}};
}

StudyConfig study_config_from_json(const nlohmann::json& j, StudyConfig c) {
  if (!j.is_object()) throw ValidationError("study config must be a JSON object");
  auto get_int = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_integer()) throw ValidationError(fmt::format("config key '{}' must be an integer", key));
    return v.get<int>();
  };
  auto get_num = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw ValidationError(fmt::format("config key '{}' must be a number", key));
    return v.get<double>();
  };
  auto get_strings = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_array()) throw ValidationError(fmt::format("config key '{}' must be an array of strings", key));
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ValidationError(fmt::format("config key '{}' must be an array of strings", key));
      out.push_back(e.get<std::string>());
    }
    return out;
  };
  nlohmann::json scenario_keys = nlohmann::json::object();
  for (const auto& [key, v] : j.items()) {
    if (key == "N" || key == "n_r" || key == "outcome_beta" || key == "outcome_scale" || key == "high" ||
        key == "low") {
      scenario_keys[key] = v;
    } else if (key == "replicates") {
      c.replicates = get_int(v, key);
    } else if (key == "methods") {
      c.methods.clear();
      for (const auto& s : get_strings(v, key)) c.methods.push_back(parse_likelihood_kind(s));
    } else if (key == "overlaps") {
      c.overlaps.clear();
      for (const auto& s : get_strings(v, key)) c.overlaps.push_back(parse_overlap(s));
    } else if (key == "chains") {
      c.sampler.n_chains = get_int(v, key);
    } else if (key == "warmup") {
      c.sampler.warmup = get_int(v, key);
    } else if (key == "draws") {
      c.sampler.draws = get_int(v, key);
    } else if (key == "target_accept") {
      c.sampler.target_accept = get_num(v, key);
    } else if (key == "max_tree_depth") {
      c.sampler.max_tree_depth = get_int(v, key);
    } else if (key == "metric") {
      if (!v.is_string()) throw ValidationError("config key 'metric' must be a string");
      c.sampler.metric = parse_metric(v.get<std::string>());
    } else if (key == "clw_tempered") {
      if (!v.is_boolean()) throw ValidationError("config key 'clw_tempered' must be a boolean");
      c.clw_tempered = v.get<bool>();
    } else if (key == "num_knots") {
      c.num_knots = get_int(v, key);
    } else if (key == "degree") {
      c.degree = get_int(v, key);
    } else if (key == "bins") {
      c.bins = get_int(v, key);
    } else if (key == "imputations") {
      c.imputations = get_int(v, key);
    } else if (key == "level") {
      c.level = get_num(v, key);
    } else if (key == "thresholds") {
      if (!v.is_array()) throw ValidationError("config key 'thresholds' must be an array of numbers");
      c.threshold_percents.clear();
      for (const auto& e : v) c.threshold_percents.push_back(get_num(e, key));
    } else if (key == "max_divergence_fraction") {
      c.max_divergence_fraction = get_num(v, key);
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) throw ValidationError("config key 'seed' must be a nonnegative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "workers") {
      c.workers = get_int(v, key);
    } else {
      throw ValidationError(fmt::format("unknown study config key '{}'", key));
    }
  }
  if (!scenario_keys.empty()) {
    ScenarioConfig s;
    s.population = c.population;
    s.designs = c.designs;
    s = scenario_from_json(scenario_keys, s);
    c.population = s.population;
    c.designs = s.designs;
  }
  return c;
}

// ---------------------------------------------------------------------------
// One replicate

nlohmann::json to_json(const MethodResult& r) {
  nlohmann::json mu = nlohmann::json::array();
  for (const auto& m : r.mu) mu.push_back({{"variant", m.variant}, {"estimate", m.estimate}, {"lo", m.lo}, {"hi", m.hi}});
  return {{"replicate", r.replicate},
          {"scenario", to_string(r.overlap)},
          {"method", r.method},
          {"ok", r.ok},
          {"error", r.error},
          {"divergences", r.divergences},
          {"max_rhat_pi_c", std::isnan(r.max_rhat_pi_c) ? nlohmann::json() : nlohmann::json(r.max_rhat_pi_c)},
          {"mu_true", r.mu_true},
          {"true_pi_c", to_std(r.true_pi_c)},
          {"est_mean", to_std(r.est_mean)},
          {"est_lo", to_std(r.est_lo)},
          {"est_hi", to_std(r.est_hi)},
          {"mu", mu}};
}

MethodResult method_result_from_json(const nlohmann::json& j) {
  try {
    MethodResult r;
    r.replicate = j.at("replicate").get<int>();
    r.overlap = parse_overlap(j.at("scenario").get<std::string>());
    r.method = j.at("method").get<std::string>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.divergences = j.at("divergences").get<int>();
    r.max_rhat_pi_c = j.at("max_rhat_pi_c").is_null() ? kNaN : j.at("max_rhat_pi_c").get<double>();
    r.mu_true = j.at("mu_true").get<double>();
    r.true_pi_c = from_std(j.at("true_pi_c").get<std::vector<double>>());
    r.est_mean = from_std(j.at("est_mean").get<std::vector<double>>());
    r.est_lo = from_std(j.at("est_lo").get<std::vector<double>>());
    r.est_hi = from_std(j.at("est_hi").get<std::vector<double>>());
    for (const auto& m : j.at("mu"))
      r.mu.push_back({m.at("variant").get<std::string>(), m.at("estimate").get<double>(), m.at("lo").get<double>(),
                      m.at("hi").get<double>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed replicate record: {}", e.what()));
  }
}

namespace {

/// Point estimate with a normal interval from a single design variance.
MuEstimate single_estimate(const std::string& variant, const WeightedSampleDraw& s, double level) {
  const double est = hajek_mean(s);
  const double half = normal_quantile((1.0 + level) / 2) * std::sqrt(taylor_within_variance(s, est));
  return {variant, est, est - half, est + half};
}

/// Multiple-imputation estimate over thinned draws. `pi_c_draws` is draws x
/// (kept convenience units); `pi_r_draws` is draws x n_r or empty to use the
/// fixed design probabilities.
MuEstimate mi_estimate(const std::string& variant, const Eigen::VectorXd& y_c, const Eigen::MatrixXd& pi_c_draws,
                       const Eigen::VectorXd& y_r, const Eigen::VectorXd& pi_r_fixed,
                       const Eigen::MatrixXd& pi_r_draws, const std::vector<Eigen::Index>& idx, double level) {
  const auto J = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd points(J), within(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    const Eigen::VectorXd pc = pi_c_draws.row(idx[j]).transpose();
    const Eigen::VectorXd pr = pi_r_draws.size() ? Eigen::VectorXd(pi_r_draws.row(idx[j]).transpose()) : pi_r_fixed;
    const WeightedSampleDraw s = make_weighted_draw(y_c, pc, y_r, pr);
    points(j) = hajek_mean(s);
    within(j) = taylor_within_variance(s, points(j));
  }
  const MIVarianceResult r = mi_total_variance(points, within, 1.0 - level);
  return {variant, r.point, r.lo, r.hi};
}

std::uint64_t fit_seed(const StudyConfig& cfg, int replicate, Overlap o, LikelihoodKind k) {
  Rng r = make_stream(cfg.seed, {static_cast<std::uint64_t>(replicate), 3, o == Overlap::High ? 0u : 1u,
                                 static_cast<std::uint64_t>(k)});
  return r();
}

std::string percent_label(double p) { return fmt::format("q{}", p); }

}  // namespace

std::vector<MethodResult> run_replicate(const StudyConfig& cfg, int replicate) {
  const ReplicateData rep = simulate_replicate(cfg.population, cfg.designs, cfg.seed, replicate);
  const double mu_true = rep.population.y.mean();
  std::vector<MethodResult> out;
  for (Overlap o : cfg.overlaps) {
    const PooledSampleFile f = rep.pooled(o);
    const PooledSample& d = f.sample;
    const Eigen::Index n_c = d.n_c, n_r = d.n_r;
    const Eigen::VectorXd y_c = f.audit.y.head(n_c), y_r = f.audit.y.tail(n_r);
    const Eigen::VectorXd true_c = f.audit.true_pi_c.head(n_c);

    MethodResult design;
    design.replicate = replicate;
    design.overlap = o;
    design.method = "design";
    design.mu_true = mu_true;
    design.mu.push_back(single_estimate("true_weights", make_weighted_draw(y_c, true_c, y_r, d.pi_r), cfg.level));
    design.mu.push_back(single_estimate(
        "reference_only", make_weighted_draw(Eigen::VectorXd(), Eigen::VectorXd(), y_r, d.pi_r), cfg.level));
    out.push_back(std::move(design));

    for (LikelihoodKind kind : cfg.methods) {
      MethodResult m;
      m.replicate = replicate;
      m.overlap = o;
      m.method = to_string(kind);
      m.mu_true = mu_true;
      m.true_pi_c = true_c;
      try {
        FitOptions opt;
        opt.likelihood = {kind, kind == LikelihoodKind::CLW && cfg.clw_tempered};
        opt.sampler = cfg.sampler;
        opt.sampler.seed = fit_seed(cfg, replicate, o, kind);
        opt.num_knots = cfg.num_knots;
        opt.degree = cfg.degree;
        const FitResult fit = fit_pooled_sample(d, opt);
        m.divergences = fit.draws.total_divergences();
        m.max_rhat_pi_c = fit.max_rhat_pi_c;
        const double limit = cfg.max_divergence_fraction * static_cast<double>(fit.draws.draws.rows());
        if (static_cast<double>(m.divergences) > limit) {
          m.ok = false;
          m.error = fmt::format("{} divergent transitions exceed the limit of {}", m.divergences, limit);
        }
        const Eigen::MatrixXd pc = fit.pi_c.leftCols(n_c);
        const PosteriorSummary s = summarize_columns(pc, cfg.level);
        m.est_mean = s.mean;
        m.est_lo = s.lo;
        m.est_hi = s.hi;

        const auto idx = thinned_indices(pc.rows(), cfg.imputations);
        m.mu.push_back(mi_estimate("estimated", y_c, pc, y_r, d.pi_r, Eigen::MatrixXd(), idx, cfg.level));
        if (kind == LikelihoodKind::TwoArmExact) {
          const Eigen::MatrixXd pr_ref = fit.pi_r.rightCols(n_r);
          m.mu.push_back(mi_estimate("smoothed", y_c, pc, y_r, d.pi_r, pr_ref, idx, cfg.level));
          const Eigen::VectorXd pr_conv_mean = fit.pi_r.leftCols(n_c).colwise().mean();
          const Eigen::VectorXd pr_ref_mean = pr_ref.colwise().mean();
          for (double p : cfg.threshold_percents) {
            const IndexSet keep = threshold_convenience(pr_conv_mean, pr_ref_mean, p);
            Eigen::VectorXd yk(static_cast<Eigen::Index>(keep.size()));
            Eigen::MatrixXd pk(pc.rows(), static_cast<Eigen::Index>(keep.size()));
            for (std::size_t k = 0; k < keep.size(); ++k) {
              yk(static_cast<Eigen::Index>(k)) = y_c(keep[k]);
              pk.col(static_cast<Eigen::Index>(k)) = pc.col(keep[k]);
            }
            m.mu.push_back(mi_estimate(percent_label(p), yk, pk, y_r, d.pi_r, Eigen::MatrixXd(), idx, cfg.level));
          }
        }
      } catch (const Error& e) {
        m.ok = false;
        m.error = e.what();
        m.est_mean.resize(0);
        m.est_lo.resize(0);
        m.est_hi.resize(0);
        m.mu.clear();
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

const ScenarioSummary* MetricTable::find_summary(const std::string& scenario, const std::string& method) const {
  for (const auto& s : summary)
    if (s.scenario == scenario && s.method == method) return &s;
  return nullptr;
}

const MuMetric* MetricTable::find_mu(const std::string& scenario, const std::string& method,
                                     const std::string& variant) const {
  for (const auto& m : mu)
    if (m.scenario == scenario && m.method == method && m.variant == variant) return &m;
  return nullptr;
}

MetricTable aggregate_metrics(const std::vector<MethodResult>& results, int bins) {
  if (bins < 1) throw ValidationError("bins must be >= 1");
  // Groups in order of first appearance.
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<const MethodResult*>> groups;
  for (const auto& r : results) {
    const auto key = std::make_pair(to_string(r.overlap), r.method);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(&r);
  }

  MetricTable t;
  for (const auto& key : keys) {
    const auto& members = groups[key];
    const int total = static_cast<int>(members.size());
    int ok = 0;
    for (const auto* r : members) ok += r->ok ? 1 : 0;
    const double reliability = static_cast<double>(ok) / static_cast<double>(total);

    // Mean estimates, one row per variant in order of first appearance.
    std::vector<std::string> variants;
    for (const auto* r : members)
      if (r->ok)
        for (const auto& m : r->mu)
          if (std::find(variants.begin(), variants.end(), m.variant) == variants.end()) variants.push_back(m.variant);
    for (const auto& v : variants) {
      MuMetric mm{key.first, key.second, v};
      double se = 0, sa = 0, sb = 0, cov = 0;
      for (const auto* r : members) {
        if (!r->ok) continue;
        for (const auto& m : r->mu) {
          if (m.variant != v) continue;
          const double e = m.estimate - r->mu_true;
          sb += e;
          se += e * e;
          sa += std::abs(e);
          cov += (m.lo <= r->mu_true && r->mu_true <= m.hi) ? 1.0 : 0.0;
          ++mm.n;
        }
      }
      const double nn = static_cast<double>(mm.n);
      mm.bias = sb / nn;
      mm.rmse = std::sqrt(se / nn);
      mm.mad = sa / nn;
      mm.coverage = cov / nn;
      mm.reliability = reliability;
      t.mu.push_back(mm);
    }
    if (key.second == "design") continue;

    // Pointwise pi_c metrics over successful fits.
    std::vector<double> truth, err, width;
    std::vector<bool> covered;
    for (const auto* r : members) {
      if (!r->ok) continue;
      for (Eigen::Index i = 0; i < r->true_pi_c.size(); ++i) {
        truth.push_back(r->true_pi_c(i));
        err.push_back(r->est_mean(i) - r->true_pi_c(i));
        width.push_back(r->est_hi(i) - r->est_lo(i));
        covered.push_back(r->est_lo(i) <= r->true_pi_c(i) && r->true_pi_c(i) <= r->est_hi(i));
      }
    }
    std::vector<long> cnt(static_cast<std::size_t>(bins), 0);
    std::vector<double> sb(cnt.size(), 0), se(cnt.size(), 0), sc(cnt.size(), 0), sw(cnt.size(), 0);
    for (std::size_t u = 0; u < truth.size(); ++u) {
      const auto b = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(std::floor(truth[u] * bins))));
      ++cnt[b];
      sb[b] += err[u];
      se[b] += err[u] * err[u];
      sc[b] += covered[u] ? 1.0 : 0.0;
      sw[b] += width[u];
    }
    ScenarioSummary sum;
    sum.scenario = key.first;
    sum.method = key.second;
    sum.fits_ok = ok;
    sum.fits_total = total;
    sum.n_units = static_cast<long>(truth.size());
    double cov_total = 0;
    int cov_bins = 0;
    for (int b = 0; b < bins; ++b) {
      BinMetric bm{key.first, key.second, static_cast<double>(b) / bins, static_cast<double>(b + 1) / bins, cnt[b]};
      bm.reliability = reliability;
      if (cnt[b] == 0) {
        bm.bias = bm.rmse = bm.coverage = bm.width = kNaN;
      } else {
        const double nb = static_cast<double>(cnt[b]);
        bm.bias = sb[b] / nb;
        bm.rmse = std::sqrt(se[b] / nb);
        bm.coverage = sc[b] / nb;
        bm.width = sw[b] / nb;
        cov_total += bm.coverage;
        ++cov_bins;
      }
      t.pointwise.push_back(bm);
    }
    if (truth.empty()) {
      sum.mean_coverage = sum.pooled_bias = sum.pooled_rmse = sum.top_tercile_coverage = sum.top_tercile_cut = kNaN;
    } else {
      sum.mean_coverage = cov_total / cov_bins;
      double b = 0, s2 = 0;
      for (double e : err) {
        b += e;
        s2 += e * e;
      }
      sum.pooled_bias = b / static_cast<double>(err.size());
      sum.pooled_rmse = std::sqrt(s2 / static_cast<double>(err.size()));
      std::vector<double> sorted = truth;
      std::sort(sorted.begin(), sorted.end());
      sum.top_tercile_cut = quantile_sorted(sorted, 2.0 / 3.0);
      double top = 0, top_n = 0;
      for (std::size_t u = 0; u < truth.size(); ++u)
        if (truth[u] >= sum.top_tercile_cut) {
          top += covered[u] ? 1.0 : 0.0;
          top_n += 1.0;
        }
      sum.top_tercile_coverage = top / top_n;
    }
    sum.max_rhat_pi_c = kNaN;
    for (const auto* r : members)
      if (r->ok && !std::isnan(r->max_rhat_pi_c))
        sum.max_rhat_pi_c = std::isnan(sum.max_rhat_pi_c) ? r->max_rhat_pi_c : std::max(sum.max_rhat_pi_c, r->max_rhat_pi_c);
    t.summary.push_back(sum);
  }
  return t;
}

namespace {

std::string num(double v) { return std::isnan(v) ? std::string() : csv::format_double(v); }

}  // namespace

void write_pointwise_csv(const std::string& path, const std::vector<BinMetric>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows)
    out.push_back({r.scenario, r.method, num(r.bin_lo), num(r.bin_hi), num(r.bias), num(r.rmse), num(r.coverage),
                   num(r.width), std::to_string(r.n), num(r.reliability)});
  csv::write(path, {"scenario", "method", "bin_lo", "bin_hi", "bias", "rmse", "coverage", "width", "n", "reliability"},
             out);
}

void write_mu_csv(const std::string& path, const std::vector<MuMetric>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows)
    out.push_back({r.scenario, r.method, r.variant, num(r.bias), num(r.rmse), num(r.mad), num(r.coverage),
                   std::to_string(r.n), num(r.reliability)});
  csv::write(path, {"scenario", "method", "variant", "bias", "rmse", "mad", "coverage", "n", "reliability"}, out);
}

void write_summary_csv(const std::string& path, const std::vector<ScenarioSummary>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows)
    out.push_back({r.scenario, r.method, std::to_string(r.n_units), std::to_string(r.fits_ok),
                   std::to_string(r.fits_total), num(r.mean_coverage), num(r.pooled_bias), num(r.pooled_rmse),
                   num(r.top_tercile_cut), num(r.top_tercile_coverage), num(r.max_rhat_pi_c)});
  csv::write(path,
             {"scenario", "method", "n_units", "fits_ok", "fits_total", "mean_coverage", "pooled_bias", "pooled_rmse",
              "top_tercile_cut", "top_tercile_coverage", "max_rhat_pi_c"},
             out);
}

// ---------------------------------------------------------------------------
// Driver

namespace {

std::string checkpoint_path(const std::string& dir, int replicate) {
  return (fs::path(dir) / "checkpoints" / fmt::format("replicate_{:04d}.json", replicate)).string();
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error(fmt::format("cannot open '{}' for writing", tmp.string()));
    f << text;
    if (!f) throw Error(fmt::format("write to '{}' failed", tmp.string()));
  }
  fs::rename(tmp, p);
}

std::optional<std::vector<MethodResult>> load_checkpoint(const std::string& path, const nlohmann::json& identity) {
  std::ifstream f(path);
  if (!f) return std::nullopt;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  if (!j.contains("config") || j["config"] != identity || !j.contains("results")) return std::nullopt;
  std::vector<MethodResult> out;
  for (const auto& r : j["results"]) out.push_back(method_result_from_json(r));
  return out;
}

}  // namespace

std::vector<MethodResult> load_checkpoints(const std::string& study_dir) {
  const fs::path dir = fs::path(study_dir) / "checkpoints";
  if (!fs::is_directory(dir)) throw ValidationError(fmt::format("'{}' has no checkpoints directory", study_dir));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MethodResult> out;
  for (const auto& p : files) {
    std::ifstream f(p);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("{}: {}", p.string(), e.what()));
    }
    for (const auto& r : j.at("results")) out.push_back(method_result_from_json(r));
  }
  return out;
}

StudyOutcome run_study(const StudyConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const nlohmann::json identity = identity_json(cfg);
  std::vector<std::vector<MethodResult>> per_rep(static_cast<std::size_t>(cfg.replicates));
  std::vector<std::exception_ptr> errors(per_rep.size());

  auto work = [&](int r) {
    const std::string path = checkpoint_path(out_dir, r);
    if (auto cached = load_checkpoint(path, identity)) {
      per_rep[r] = std::move(*cached);
      return;
    }
    per_rep[r] = run_replicate(cfg, r);
    nlohmann::json results = nlohmann::json::array();
    for (const auto& m : per_rep[r]) results.push_back(to_json(m));
    write_text_atomic(path, nlohmann::json{{"config", identity}, {"replicate", r}, {"results", results}}.dump(1) + "\n");
  };

  const int workers = std::min(cfg.workers, cfg.replicates);
  if (workers <= 1) {
    for (int r = 0; r < cfg.replicates; ++r) work(r);
  } else {
    std::mutex m;
    int next = 0;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (;;) {
          int r;
          {
            std::lock_guard lock(m);
            if (next >= cfg.replicates) return;
            r = next++;
          }
          try {
            work(r);
          } catch (...) {
            errors[r] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  StudyOutcome outcome;
  for (auto& v : per_rep)
    for (auto& m : v) {
      // Reload through JSON so fresh and resumed runs aggregate identical values.
      outcome.results.push_back(method_result_from_json(to_json(m)));
      if (!m.ok) ++outcome.failed_fits;
    }
  outcome.metrics = aggregate_metrics(outcome.results, cfg.bins);

  const fs::path dir(out_dir);
  write_pointwise_csv((dir / "pointwise_metrics.csv").string(), outcome.metrics.pointwise);
  write_mu_csv((dir / "mu_metrics.csv").string(), outcome.metrics.mu);
  write_summary_csv((dir / "summary_metrics.csv").string(), outcome.metrics.summary);

  nlohmann::json fits = nlohmann::json::array();
  for (const auto& m : outcome.results) {
    if (m.method == "design") continue;
    fits.push_back({{"replicate", m.replicate},
                    {"scenario", to_string(m.overlap)},
                    {"method", m.method},
                    {"ok", m.ok},
                    {"error", m.error},
                    {"divergences", m.divergences},
                    {"max_rhat_pi_c", std::isnan(m.max_rhat_pi_c) ? nlohmann::json() : nlohmann::json(m.max_rhat_pi_c)},
                    {"seed", fit_seed(cfg, m.replicate, m.overlap, parse_likelihood_kind(m.method))}});
  }
  const nlohmann::json manifest = {
      {"tool", "twoarm"},
      {"version", "0.1.0"},
      {"config", study_config_to_json(cfg)},
      {"status", outcome.failed_fits == 0 ? "complete" : "partial"},
      {"failed_fits", outcome.failed_fits},
      {"fits", fits},
      {"libraries",
       {{"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
        {"boost", BOOST_LIB_VERSION},
        {"fmt", FMT_VERSION}}}};
  write_text_atomic((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  return outcome;
}

}  // namespace twoarm

#include "twoarm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "twoarm/csv.hpp"
#include "twoarm/error.hpp"

namespace twoarm {

void PopulationSpec::validate() const {
  if (N < 1) throw ValidationError(fmt::format("population size N must be >= 1, got {}", N));
  if (!(outcome_scale > 0)) throw ValidationError(fmt::format("outcome_scale must be positive, got {}", outcome_scale));
}

std::string to_string(Overlap o) { return o == Overlap::High ? "high" : "low"; }

Overlap parse_overlap(const std::string& s) {
  if (s == "high") return Overlap::High;
  if (s == "low") return Overlap::Low;
  throw ValidationError(fmt::format("unknown overlap '{}': expected 'high' or 'low'", s));
}

namespace {

double inv_logit(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double linear(const Eigen::MatrixXd& X, Eigen::Index i, const std::array<double, 5>& b) {
  double s = 0;
  for (int k = 0; k < 5; ++k) s += X(i, k) * b[k];
  return s;
}

}  // namespace

Population generate_population(const PopulationSpec& spec, const SamplingDesigns& designs, Rng& rng) {
  spec.validate();
  if (designs.n_r > spec.N)
    throw ValidationError(fmt::format("reference sample size n_r = {} exceeds population size N = {}", designs.n_r,
                                      spec.N));
  const Eigen::Index N = spec.N;
  Population p;
  p.X.resize(N, 5);
  p.mu.resize(N);
  p.y.resize(N);
  p.s_r.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    p.X(i, kCont) = std_normal(rng);
    p.X(i, kIntercept) = 1.0;
    p.X(i, kA) = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    p.X(i, kB) = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    p.X(i, kC) = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  }
  for (Eigen::Index i = 0; i < N; ++i) {
    p.mu(i) = linear(p.X, i, spec.beta_outcome);
    p.y(i) = std::exp(p.mu(i) + spec.outcome_scale * std_normal(rng));
    // log(exp(mu) + 1) computed without overflow.
    p.s_r(i) = p.mu(i) > 0 ? p.mu(i) + std::log1p(std::exp(-p.mu(i))) : std::log1p(std::exp(p.mu(i)));
  }
  p.pi_r = pps_inclusion_probabilities(p.s_r, designs.n_r);
  p.pi_c_high = convenience_probabilities(p.X, designs.high);
  p.pi_c_low = convenience_probabilities(p.X, designs.low);
  return p;
}

Eigen::VectorXd pps_inclusion_probabilities(const Eigen::VectorXd& sizes, int n) {
  const Eigen::Index N = sizes.size();
  if (n < 0) throw ValidationError("sample size must be nonnegative");
  if (n > N) throw ValidationError(fmt::format("sample size {} exceeds the number of units {}", n, N));
  for (Eigen::Index i = 0; i < N; ++i)
    if (!(sizes(i) > 0) || !std::isfinite(sizes(i)))
      throw ValidationError(fmt::format("size measure {} at unit {} must be positive and finite", sizes(i), i));
  Eigen::VectorXd pi = static_cast<double>(n) * sizes / sizes.sum();
  std::vector<bool> certain(static_cast<std::size_t>(N), false);
  int n_certain = 0;
  while (true) {
    int now = 0;
    for (Eigen::Index i = 0; i < N; ++i)
      if (pi(i) >= 1.0) {
        certain[i] = true;
        ++now;
      }
    if (now == n_certain) break;
    n_certain = now;
    double rest = 0;
    for (Eigen::Index i = 0; i < N; ++i)
      if (!certain[i]) rest += sizes(i);
    for (Eigen::Index i = 0; i < N; ++i)
      pi(i) = certain[i] ? 1.0 : static_cast<double>(n - n_certain) * sizes(i) / rest;
  }
  return pi;
}

IndexSet draw_pps_sample(const Eigen::VectorXd& pi, Rng& rng) {
  const Eigen::Index N = pi.size();
  const double total = pi.sum();
  const double rounded = std::round(total);
  if (std::abs(total - rounded) > 1e-9)
    throw ValidationError(fmt::format("inclusion probabilities sum to {}, which is not an integer", total));
  for (Eigen::Index i = 0; i < N; ++i)
    if (!(pi(i) >= 0 && pi(i) <= 1)) throw ValidationError(fmt::format("probability {} at unit {} outside [0, 1]", pi(i), i));

  IndexSet chosen;
  std::vector<Eigen::Index> rest;
  for (Eigen::Index i = 0; i < N; ++i) (pi(i) == 1.0 ? chosen : rest).push_back(i);
  // Fisher-Yates with our own uniform draws so the permutation does not
  // depend on the standard library's shuffle.
  for (std::size_t k = rest.size(); k > 1; --k) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k));
    std::swap(rest[k - 1], rest[std::min(j, k - 1)]);
  }
  const auto target = static_cast<long>(rounded) - static_cast<long>(chosen.size());
  const double u = uniform01(rng);
  double cum = 0;
  long next = 0;  // next threshold is u + next
  for (Eigen::Index i : rest) {
    const double upper = cum + pi(i);
    if (next < target && upper > u + static_cast<double>(next)) {
      chosen.push_back(i);
      ++next;
    }
    cum = upper;
  }
  // Rounding can leave the last threshold a hair above the running total.
  if (next < target) {
    for (auto it = rest.rbegin(); it != rest.rend() && next < target; ++it)
      if (std::find(chosen.begin(), chosen.end(), *it) == chosen.end()) {
        chosen.push_back(*it);
        ++next;
      }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

Eigen::VectorXd convenience_probabilities(const Eigen::MatrixXd& X, const ConvenienceDesign& design) {
  if (X.cols() != 5) throw ValidationError(fmt::format("design matrix must have 5 columns, got {}", X.cols()));
  Eigen::VectorXd pi(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) pi(i) = inv_logit(linear(X, i, design.beta) + design.offset);
  return pi;
}

IndexSet draw_poisson_sample(const Eigen::VectorXd& pi, Rng& rng) {
  IndexSet s;
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    if (!(pi(i) >= 0 && pi(i) <= 1)) throw ValidationError(fmt::format("probability {} at unit {} outside [0, 1]", pi(i), i));
    if (uniform01(rng) < pi(i)) s.push_back(i);
  }
  return s;
}

PooledSampleFile build_pooled_sample(const Population& pop, const IndexSet& ref_idx, const IndexSet& conv_idx,
                                     const Eigen::VectorXd& true_pi_c) {
  const auto n_c = static_cast<Eigen::Index>(conv_idx.size());
  const auto n_r = static_cast<Eigen::Index>(ref_idx.size());
  const Eigen::Index n = n_c + n_r;
  Eigen::MatrixXd X(n, 4);
  Eigen::VectorXd pi_r(n_r);
  PooledSampleAudit audit;
  audit.y.resize(n);
  audit.true_pi_c.resize(n);
  audit.true_pi_r.resize(n);
  audit.unit_id.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index u = r < n_c ? conv_idx[r] : ref_idx[r - n_c];
    if (u < 0 || u >= pop.size()) throw ValidationError(fmt::format("unit index {} outside the population", u));
    X(r, 0) = pop.X(u, kCont);
    X(r, 1) = pop.X(u, kA);
    X(r, 2) = pop.X(u, kB);
    X(r, 3) = pop.X(u, kC);
    if (r >= n_c) pi_r(r - n_c) = pop.pi_r(u);
    audit.y(r) = pop.y(u);
    audit.true_pi_c(r) = true_pi_c(u);
    audit.true_pi_r(r) = pop.pi_r(u);
    audit.unit_id(r) = static_cast<int>(u);
  }
  PooledSampleFile f;
  f.sample = make_pooled_sample(X.topRows(n_c), X.bottomRows(n_r), X.topRows(n_c).leftCols(1),
                                X.bottomRows(n_r).leftCols(1), pi_r, {"cont", "A", "B", "C"}, {"cont"});
  f.audit = std::move(audit);
  return f;
}

double overlap_fraction(const IndexSet& ref_idx, const IndexSet& conv_idx) {
  const std::size_t pooled = ref_idx.size() + conv_idx.size();
  if (pooled == 0) return 0.0;
  IndexSet a = ref_idx, b = conv_idx;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  IndexSet common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(pooled);
}

void ScenarioConfig::validate() const {
  population.validate();
  if (designs.n_r < 1) throw ValidationError(fmt::format("n_r must be >= 1, got {}", designs.n_r));
  if (designs.n_r > population.N)
    throw ValidationError(fmt::format("reference sample size n_r = {} exceeds population size N = {}", designs.n_r,
                                      population.N));
  if (replicate < 0) throw ValidationError("replicate index must be nonnegative");
}

namespace {

template <std::size_t M>
std::array<double, M> number_array(const nlohmann::json& v, const char* key) {
  if (!v.is_array() || v.size() != M) throw ValidationError(fmt::format("config key '{}' must be an array of {} numbers", key, M));
  std::array<double, M> out{};
  for (std::size_t i = 0; i < M; ++i) {
    if (!v[i].is_number()) throw ValidationError(fmt::format("config key '{}' entry {} is not a number", key, i));
    out[i] = v[i].get<double>();
  }
  return out;
}

ConvenienceDesign design_from(const nlohmann::json& v, const char* key) {
  const auto a = number_array<6>(v, key);
  return {{a[0], a[1], a[2], a[3], a[4]}, a[5]};
}

int int_from(const nlohmann::json& v, const char* key) {
  if (!v.is_number_integer()) throw ValidationError(fmt::format("config key '{}' must be an integer", key));
  return v.get<int>();
}

}  // namespace

ScenarioConfig scenario_from_json(const nlohmann::json& j, ScenarioConfig c) {
  if (!j.is_object()) throw ValidationError("scenario config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "N") {
      c.population.N = int_from(v, "N");
    } else if (key == "n_r") {
      c.designs.n_r = int_from(v, "n_r");
    } else if (key == "overlap") {
      if (!v.is_string()) throw ValidationError("config key 'overlap' must be a string");
      c.overlap = parse_overlap(v.get<std::string>());
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) throw ValidationError("config key 'seed' must be a nonnegative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "replicate") {
      c.replicate = int_from(v, "replicate");
    } else if (key == "outcome_beta") {
      c.population.beta_outcome = number_array<5>(v, "outcome_beta");
    } else if (key == "outcome_scale") {
      if (!v.is_number()) throw ValidationError("config key 'outcome_scale' must be a number");
      c.population.outcome_scale = v.get<double>();
    } else if (key == "high") {
      c.designs.high = design_from(v, "high");
    } else if (key == "low") {
      c.designs.low = design_from(v, "low");
    } else {
      throw ValidationError(fmt::format("unknown scenario config key '{}'", key));
    }
  }
  return c;
}

nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  auto design = [](const ConvenienceDesign& d) {
    return nlohmann::json::array({d.beta[0], d.beta[1], d.beta[2], d.beta[3], d.beta[4], d.offset});
  };
  return {{"N", c.population.N},
          {"n_r", c.designs.n_r},
          {"overlap", to_string(c.overlap)},
          {"seed", c.seed},
          {"replicate", c.replicate},
          {"outcome_beta", c.population.beta_outcome},
          {"outcome_scale", c.population.outcome_scale},
          {"high", design(c.designs.high)},
          {"low", design(c.designs.low)}};
}

PooledSampleFile ReplicateData::pooled(Overlap o) const {
  return build_pooled_sample(population, reference, convenience(o), population.pi_c(o));
}

ReplicateData simulate_replicate(const PopulationSpec& spec, const SamplingDesigns& designs, std::uint64_t seed,
                                 int replicate) {
  const auto rep = static_cast<std::uint64_t>(replicate);
  ReplicateData r;
  Rng pop_rng = make_stream(seed, {rep, 0});
  r.population = generate_population(spec, designs, pop_rng);
  Rng ref_rng = make_stream(seed, {rep, 1});
  r.reference = draw_pps_sample(r.population.pi_r, ref_rng);
  Rng high_rng = make_stream(seed, {rep, 2, 0});
  r.convenience_high = draw_poisson_sample(r.population.pi_c_high, high_rng);
  Rng low_rng = make_stream(seed, {rep, 2, 1});
  r.convenience_low = draw_poisson_sample(r.population.pi_c_low, low_rng);
  return r;
}

void write_population_csv(const std::string& path, const Population& pop) {
  const std::vector<std::string> header = {"unit_id", "cont", "A",    "B",         "C",        "mu",
                                           "y",       "s_r",  "pi_r", "pi_c_high", "pi_c_low"};
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(pop.size()));
  for (Eigen::Index i = 0; i < pop.size(); ++i) {
    rows.push_back({std::to_string(i), csv::format_double(pop.X(i, kCont)), csv::format_double(pop.X(i, kA)),
                    csv::format_double(pop.X(i, kB)), csv::format_double(pop.X(i, kC)), csv::format_double(pop.mu(i)),
                    csv::format_double(pop.y(i)), csv::format_double(pop.s_r(i)), csv::format_double(pop.pi_r(i)),
                    csv::format_double(pop.pi_c_high(i)), csv::format_double(pop.pi_c_low(i))});
  }
  csv::write(path, header, rows);
}

}  // namespace twoarm

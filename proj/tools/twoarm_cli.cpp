// Command-line front end: simulate, fit, study, report.
//
// Settings are resolved in three layers. Built-in defaults come first, then
// keys from the --config JSON file, then any flag given on the command line.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "twoarm/csv.hpp"
#include "twoarm/error.hpp"
#include "twoarm/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace twoarm;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::string out = "twoarm_out";
  std::optional<int> workers;
  std::string config;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ValidationError(fmt::format("cannot open config file '{}'", path));
  try {
    json j = json::parse(f);
    if (!j.is_object()) throw ValidationError(fmt::format("config file '{}' must hold a JSON object", path));
    return j;
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config file '{}': {}", path, e.what()));
  }
}

/// Remove `key` from `j` and return it, if present.
std::optional<json> take(json& j, const std::string& key) {
  if (!j.contains(key)) return std::nullopt;
  json v = j[key];
  j.erase(key);
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  f << j.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError(fmt::format("output directory '{}' is not writable", dir));
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateFlags {
  std::optional<std::string> overlap;
  std::optional<int> n_r;
  std::optional<int> N;
  std::optional<int> replicate;
};

int cmd_simulate(const GlobalFlags& g, const SimulateFlags& f) {
  json cfg = load_config(g.config);
  ScenarioConfig sc = scenario_from_json(cfg);
  if (g.seed) sc.seed = *g.seed;
  if (f.overlap) sc.overlap = parse_overlap(*f.overlap);
  if (f.n_r) sc.designs.n_r = *f.n_r;
  if (f.N) sc.population.N = *f.N;
  if (f.replicate) sc.replicate = *f.replicate;
  sc.validate();
  ensure_dir(g.out);

  const ReplicateData rep = simulate_replicate(sc.population, sc.designs, sc.seed, sc.replicate);
  const PooledSampleFile pooled = rep.pooled(sc.overlap);
  const fs::path dir(g.out);
  write_population_csv((dir / "population.csv").string(), rep.population);
  write_pooled_sample_csv((dir / "pooled_sample.csv").string(), pooled.sample, pooled.audit);
  json meta = scenario_to_json(sc);
  meta["n_c"] = pooled.sample.n_c;
  meta["overlap_fraction"] = overlap_fraction(rep.reference, rep.convenience(sc.overlap));
  meta["population_mean_y"] = rep.population.y.mean();
  write_json(dir / "scenario.json", meta);
  std::cout << fmt::format("simulated N={} n_r={} n_c={} overlap={} -> {}\n", sc.population.N, pooled.sample.n_r,
                           pooled.sample.n_c, to_string(sc.overlap), dir.string());
  return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitFlags {
  std::string input;
  std::optional<std::string> method;
  std::optional<std::string> spline_columns;
  std::optional<int> chains, warmup, draws, max_tree_depth, knots;
  std::optional<double> target_accept, level;
  std::optional<std::string> metric;
  bool untempered = false;
};

int cmd_fit(const GlobalFlags& g, const FitFlags& f) {
  json cfg = load_config(g.config);
  std::string method = "two-arm";
  if (auto v = take(cfg, "method")) method = v->get<std::string>();
  std::vector<std::string> spline_cols;
  if (auto v = take(cfg, "spline_columns")) spline_cols = v->get<std::vector<std::string>>();
  if (f.method) method = *f.method;
  if (f.spline_columns) spline_cols = split_list(*f.spline_columns);

  // Sampler and model settings share their keys with the study config.
  StudyConfig base;
  StudyConfig sc = study_config_from_json(cfg, base);
  if (g.seed) sc.sampler.seed = *g.seed;
  if (g.workers) sc.sampler.workers = *g.workers;
  if (f.chains) sc.sampler.n_chains = *f.chains;
  if (f.warmup) sc.sampler.warmup = *f.warmup;
  if (f.draws) sc.sampler.draws = *f.draws;
  if (f.max_tree_depth) sc.sampler.max_tree_depth = *f.max_tree_depth;
  if (f.target_accept) sc.sampler.target_accept = *f.target_accept;
  if (f.metric) {
    json m{{"metric", *f.metric}};
    sc = study_config_from_json(m, sc);
  }
  if (f.knots) sc.num_knots = *f.knots;
  if (f.level) sc.level = *f.level;
  if (f.untempered) sc.clw_tempered = false;
  if (!(sc.level > 0 && sc.level < 1)) throw ValidationError("--level must lie in (0, 1)");
  sc.sampler.validate();
  if (f.input.empty()) throw ValidationError("fit needs --input <pooled sample csv>");
  ensure_dir(g.out);

  const LikelihoodKind kind = parse_likelihood_kind(method);
  const PooledSampleFile file = read_pooled_sample_csv(f.input, spline_cols);
  FitOptions opt;
  opt.likelihood = {kind, kind == LikelihoodKind::CLW && sc.clw_tempered};
  opt.sampler = sc.sampler;
  opt.num_knots = sc.num_knots;
  opt.degree = sc.degree;
  const FitResult fit = fit_pooled_sample(file.sample, opt);

  const PosteriorSummary pc = summarize_columns(fit.pi_c, sc.level);
  const Eigen::VectorXd pr_mean = fit.pi_r.colwise().mean();
  const std::string tag = to_string(kind);
  const std::string lo_name = fmt::format("{}.pi_c_q{:g}", tag, 100 * (1 - sc.level) / 2);
  const std::string hi_name = fmt::format("{}.pi_c_q{:g}", tag, 100 * (1 + sc.level) / 2);
  std::vector<std::string> header{"row", "z", tag + ".pi_c_mean", lo_name, hi_name, tag + ".pi_r_mean"};
  const bool has_truth = file.audit.true_pi_c.size() == file.sample.n();
  if (has_truth) header.push_back("true_pi_c");
  std::vector<std::vector<std::string>> rows;
  std::size_t covered = 0;
  for (Eigen::Index i = 0; i < file.sample.n(); ++i) {
    std::vector<std::string> r{std::to_string(i), std::to_string(file.sample.z(i)), csv::format_double(pc.mean(i)),
                               csv::format_double(pc.lo(i)), csv::format_double(pc.hi(i)),
                               csv::format_double(pr_mean(i))};
    if (has_truth) {
      r.push_back(csv::format_double(file.audit.true_pi_c(i)));
      if (i < file.sample.n_c && pc.lo(i) <= file.audit.true_pi_c(i) && file.audit.true_pi_c(i) <= pc.hi(i))
        ++covered;
    }
    rows.push_back(std::move(r));
  }
  const fs::path dir(g.out);
  csv::write((dir / "posterior_summary.csv").string(), header, rows);

  const DiagnosticsReport& d = fit.diagnostics;
  auto num_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(); };
  json diag{{"method", tag},
            {"input", fs::path(f.input).filename().string()},
            {"n_c", file.sample.n_c},
            {"n_r", file.sample.n_r},
            {"chains", sc.sampler.n_chains},
            {"warmup", sc.sampler.warmup},
            {"draws", sc.sampler.draws},
            {"seed", sc.sampler.seed},
            {"divergences", d.divergences},
            {"max_rhat", num_or_null(d.max_rhat())},
            {"min_ess_bulk", num_or_null(d.min_ess())},
            {"max_rhat_pi_c", num_or_null(fit.max_rhat_pi_c)},
            {"step_size", fit.draws.step_size},
            {"mean_tree_depth", fit.draws.mean_tree_depth},
            {"warnings", d.warnings}};
  if (has_truth && file.sample.n_c > 0)
    diag["pi_c_coverage"] = static_cast<double>(covered) / static_cast<double>(file.sample.n_c);
  write_json(dir / "diagnostics.json", diag);
  std::cout << fmt::format("fit {} on {} rows: divergences={} max_rhat={:.4f} -> {}\n", tag, file.sample.n(),
                           d.divergences, d.max_rhat(), dir.string());
  return 0;
}

// ---------------------------------------------------------------------------
// study and report

struct StudyFlags {
  std::optional<int> replicates, chains, warmup, draws, bins, max_tree_depth;
  std::optional<std::string> methods, overlaps, metric;
};

void print_summary(const MetricTable& t) {
  for (const auto& s : t.summary)
    std::cout << fmt::format("{:>5} {:>8}  fits {}/{}  coverage {:.3f}  bias {:+.4f}  rmse {:.4f}  top-tercile {:.3f}\n",
                             s.scenario, s.method, s.fits_ok, s.fits_total, s.mean_coverage, s.pooled_bias,
                             s.pooled_rmse, s.top_tercile_coverage);
}

int cmd_study(const GlobalFlags& g, const StudyFlags& f) {
  StudyConfig sc = study_config_from_json(load_config(g.config));
  json overrides = json::object();
  if (g.seed) overrides["seed"] = *g.seed;
  if (g.workers) overrides["workers"] = *g.workers;
  if (f.replicates) overrides["replicates"] = *f.replicates;
  if (f.chains) overrides["chains"] = *f.chains;
  if (f.warmup) overrides["warmup"] = *f.warmup;
  if (f.draws) overrides["draws"] = *f.draws;
  if (f.bins) overrides["bins"] = *f.bins;
  if (f.max_tree_depth) overrides["max_tree_depth"] = *f.max_tree_depth;
  if (f.metric) overrides["metric"] = *f.metric;
  if (f.methods) overrides["methods"] = split_list(*f.methods);
  if (f.overlaps) overrides["overlaps"] = split_list(*f.overlaps);
  sc = study_config_from_json(overrides, sc);
  sc.validate();
  ensure_dir(g.out);
  const StudyOutcome out = run_study(sc, g.out);
  print_summary(out.metrics);
  std::cout << fmt::format("{} result rows, {} failed fits -> {}\n", out.results.size(), out.failed_fits, g.out);
  return 0;
}

int cmd_report(const GlobalFlags& g, const std::string& in_dir, std::optional<int> bins) {
  const std::string src = in_dir.empty() ? g.out : in_dir;
  int b = 10;
  const fs::path manifest = fs::path(src) / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream f(manifest);
    const json m = json::parse(f, nullptr, false);
    if (!m.is_discarded() && m.contains("config") && m["config"].contains("bins")) b = m["config"]["bins"].get<int>();
  }
  if (bins) b = *bins;
  const std::vector<MethodResult> results = load_checkpoints(src);
  if (results.empty()) throw ValidationError(fmt::format("no replicate checkpoints under '{}'", src));
  ensure_dir(g.out);
  const MetricTable t = aggregate_metrics(results, b);
  const fs::path dir(g.out);
  write_pointwise_csv((dir / "pointwise_metrics.csv").string(), t.pointwise);
  write_mu_csv((dir / "mu_metrics.csv").string(), t.mu);
  write_summary_csv((dir / "summary_metrics.csv").string(), t.summary);
  print_summary(t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-arm inclusion probability estimation for convenience samples"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--seed", g.seed, "Master seed (default 20240613)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads (chains for fit, replicates for study)")
      ->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "JSON file with settings; flags take precedence");

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a population and one pooled sample");
  simulate->add_option("--overlap", sim.overlap, "high or low");
  simulate->add_option("--n-r", sim.n_r, "Reference sample size");
  simulate->add_option("--N", sim.N, "Population size");
  simulate->add_option("--replicate", sim.replicate, "Replicate index");

  FitFlags fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit one pooled sample CSV");
  fit_cmd->add_option("--input", fit.input, "Pooled sample CSV");
  fit_cmd->add_option("--method", fit.method, "two-arm, clw or wvl");
  fit_cmd->add_option("--spline-columns", fit.spline_columns, "Comma-separated predictors with a spline term");
  fit_cmd->add_option("--chains", fit.chains, "Number of chains");
  fit_cmd->add_option("--warmup", fit.warmup, "Warmup iterations per chain");
  fit_cmd->add_option("--draws", fit.draws, "Post-warmup draws per chain");
  fit_cmd->add_option("--max-tree-depth", fit.max_tree_depth, "Largest trajectory doubling depth");
  fit_cmd->add_option("--target-accept", fit.target_accept, "Step-size adaptation target");
  fit_cmd->add_option("--metric", fit.metric, "diag or dense");
  fit_cmd->add_option("--knots", fit.knots, "Number of spline knots");
  fit_cmd->add_option("--level", fit.level, "Credible interval level");
  fit_cmd->add_flag("--untempered", fit.untempered, "Use the untempered CLW pseudo likelihood");

  StudyFlags st;
  auto* study = app.add_subcommand("study", "Run the Monte Carlo comparison");
  study->add_option("--replicates", st.replicates, "Number of simulated replicates");
  study->add_option("--methods", st.methods, "Comma-separated subset of two-arm,clw,wvl");
  study->add_option("--overlaps", st.overlaps, "Comma-separated subset of high,low");
  study->add_option("--chains", st.chains, "Number of chains");
  study->add_option("--warmup", st.warmup, "Warmup iterations per chain");
  study->add_option("--draws", st.draws, "Post-warmup draws per chain");
  study->add_option("--bins", st.bins, "Equal-width bins on the true pi_c");
  study->add_option("--max-tree-depth", st.max_tree_depth, "Largest trajectory doubling depth");
  study->add_option("--metric", st.metric, "diag or dense");

  std::string report_in;
  std::optional<int> report_bins;
  auto* report = app.add_subcommand("report", "Recompute metric tables from study checkpoints");
  report->add_option("--in", report_in, "Study directory (defaults to --out)");
  report->add_option("--bins", report_bins, "Equal-width bins on the true pi_c");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*simulate) return cmd_simulate(g, sim);
    if (*fit_cmd) return cmd_fit(g, fit);
    if (*study) return cmd_study(g, st);
    if (*report) return cmd_report(g, report_in, report_bins);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

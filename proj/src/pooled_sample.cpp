#include "twoarm/pooled_sample.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>

#include <fmt/format.h>

#include "twoarm/csv.hpp"
#include "twoarm/error.hpp"

namespace twoarm {

Eigen::VectorXd PooledSample::logit_pw() const {
  Eigen::VectorXd out(pi_r.size());
  for (Eigen::Index i = 0; i < pi_r.size(); ++i) {
    const double p = std::min(pi_r(i), kCertaintyCap);
    out(i) = std::log(p) - std::log1p(-p);
  }
  return out;
}

void PooledSample::validate() const {
  const Eigen::Index n = n_c + n_r;
  if (n_c < 0 || n_r < 0) throw ValidationError("sample sizes must be nonnegative");
  if (X.rows() != n || X_sp.rows() != n || z.size() != n || p_c.size() != n || p_r.size() != n)
    throw ValidationError(fmt::format("pooled sample rows disagree: n = {}, X {}, X_sp {}, z {}, p_c {}, p_r {}", n,
                                      X.rows(), X_sp.rows(), z.size(), p_c.size(), p_r.size()));
  if (pi_r.size() != n_r)
    throw ValidationError(fmt::format("{} reference probabilities for {} reference rows", pi_r.size(), n_r));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int expected = i < n_c ? 1 : 0;
    if (z(i) != expected)
      throw ValidationError(fmt::format("row {}: z = {} breaks stacked ordering (convenience rows first)", i, z(i)));
    if (!(p_c(i) > 0 && p_c(i) <= 1) || !(p_r(i) > 0 && p_r(i) <= 1))
      throw ValidationError(fmt::format("row {}: coverage probabilities must lie in (0, 1]", i));
  }
  for (Eigen::Index i = 0; i < n_r; ++i)
    if (!(pi_r(i) > 0 && pi_r(i) <= 1))
      throw ValidationError(fmt::format("reference row {}: pi_r = {} outside (0, 1]", i, pi_r(i)));
  if (!X.allFinite() || !X_sp.allFinite()) throw ValidationError("predictors must be finite");
  if (!predictor_names.empty() && static_cast<Eigen::Index>(predictor_names.size()) != X.cols())
    throw ValidationError("predictor name count does not match X");
  if (!spline_names.empty() && static_cast<Eigen::Index>(spline_names.size()) != X_sp.cols())
    throw ValidationError("spline name count does not match X_sp");
}

PooledSample make_pooled_sample(const Eigen::MatrixXd& X_c, const Eigen::MatrixXd& X_r, const Eigen::MatrixXd& Xsp_c,
                                const Eigen::MatrixXd& Xsp_r, const Eigen::VectorXd& pi_r,
                                std::vector<std::string> predictor_names, std::vector<std::string> spline_names) {
  if (X_c.cols() != X_r.cols() || Xsp_c.cols() != Xsp_r.cols())
    throw ValidationError("convenience and reference predictors have different widths");
  if (X_c.rows() != Xsp_c.rows() || X_r.rows() != Xsp_r.rows())
    throw ValidationError("linear and spline predictor row counts differ");
  PooledSample d;
  d.n_c = X_c.rows();
  d.n_r = X_r.rows();
  const Eigen::Index n = d.n();
  d.X.resize(n, X_c.cols());
  d.X << X_c, X_r;
  d.X_sp.resize(n, Xsp_c.cols());
  d.X_sp << Xsp_c, Xsp_r;
  d.z.resize(n);
  d.z.head(d.n_c).setOnes();
  d.z.tail(d.n_r).setZero();
  d.pi_r = pi_r;
  d.p_c = Eigen::VectorXd::Ones(n);
  d.p_r = Eigen::VectorXd::Ones(n);
  d.predictor_names = std::move(predictor_names);
  d.spline_names = std::move(spline_names);
  d.validate();
  return d;
}

namespace {

const std::set<std::string> kReserved = {"z", "pi_r", "p_c", "p_r", "y", "true_pi_c", "true_pi_r", "unit_id"};

bool is_binary(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0 || x == 1.0; });
}

}  // namespace

PooledSampleFile read_pooled_sample_csv(const std::string& path, const std::vector<std::string>& spline_columns) {
  const csv::Table t = csv::read(path);
  const long cz = t.column("z");
  const long cpr = t.column("pi_r");
  if (cz < 0) throw ValidationError(fmt::format("{}: missing required column 'z'", path));
  if (cpr < 0) throw ValidationError(fmt::format("{}: missing required column 'pi_r'", path));

  std::vector<long> pred_cols;
  std::vector<std::string> pred_names;
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (!kReserved.count(t.header[j])) {
      pred_cols.push_back(static_cast<long>(j));
      pred_names.push_back(t.header[j]);
    }
  if (pred_cols.empty()) throw ValidationError(fmt::format("{}: no predictor columns", path));

  const auto nrows = static_cast<Eigen::Index>(t.rows.size());
  PooledSampleFile f;
  PooledSample& d = f.sample;
  d.z.resize(nrows);
  d.X.resize(nrows, static_cast<Eigen::Index>(pred_cols.size()));
  std::vector<double> pi_r;
  bool seen_reference = false;
  for (Eigen::Index i = 0; i < nrows; ++i) {
    const auto& row = t.rows[i];
    const std::size_t line = t.line_numbers[i];
    const std::string& zf = row[cz];
    if (zf != "0" && zf != "1") throw ValidationError(fmt::format("{}:{}: z must be 0 or 1, got '{}'", path, line, zf));
    d.z(i) = zf == "1" ? 1 : 0;
    if (d.z(i) == 1) {
      if (seen_reference)
        throw ValidationError(fmt::format("{}:{}: convenience row after reference rows (convenience rows first)", path,
                                          line));
      if (!row[cpr].empty())
        throw ValidationError(fmt::format("{}:{}: pi_r must be empty on convenience rows", path, line));
      ++d.n_c;
    } else {
      seen_reference = true;
      const double p = csv::to_double(row[cpr], line, "pi_r");
      if (!(p > 0 && p <= 1)) throw ValidationError(fmt::format("{}:{}: pi_r = {} outside (0, 1]", path, line, p));
      pi_r.push_back(p);
      ++d.n_r;
    }
    for (std::size_t k = 0; k < pred_cols.size(); ++k) {
      d.X(i, static_cast<Eigen::Index>(k)) = csv::to_double(row[pred_cols[k]], line, pred_names[k]);
      if (!std::isfinite(d.X(i, static_cast<Eigen::Index>(k))))
        throw ValidationError(fmt::format("{}:{}: column '{}' is not finite", path, line, pred_names[k]));
    }
  }
  d.pi_r = Eigen::Map<Eigen::VectorXd>(pi_r.data(), static_cast<Eigen::Index>(pi_r.size()));

  // Coverage columns default to ones; audit columns stay empty when absent
  // and may have blank cells.
  auto optional_column = [&](const char* name, Eigen::VectorXd& out, std::optional<double> fallback,
                             bool required_if_present) {
    const long c = t.column(name);
    if (c < 0) {
      if (fallback) out = Eigen::VectorXd::Constant(nrows, *fallback);
      return;
    }
    out.resize(nrows);
    for (Eigen::Index i = 0; i < nrows; ++i) {
      const std::string& fld = t.rows[i][c];
      if (fld.empty() && !required_if_present) {
        out(i) = std::nan("");
        continue;
      }
      out(i) = csv::to_double(fld, t.line_numbers[i], name);
    }
  };
  optional_column("p_c", d.p_c, 1.0, true);
  optional_column("p_r", d.p_r, 1.0, true);
  optional_column("y", f.audit.y, std::nullopt, false);
  optional_column("true_pi_c", f.audit.true_pi_c, std::nullopt, false);
  optional_column("true_pi_r", f.audit.true_pi_r, std::nullopt, false);
  if (const long c = t.column("unit_id"); c >= 0) {
    f.audit.unit_id.resize(nrows);
    for (Eigen::Index i = 0; i < nrows; ++i)
      f.audit.unit_id(i) = static_cast<int>(csv::to_double(t.rows[i][c], t.line_numbers[i], "unit_id"));
  }

  std::vector<std::string> spline = spline_columns;
  if (spline.empty()) {
    for (std::size_t k = 0; k < pred_cols.size(); ++k) {
      std::vector<double> v(d.X.col(static_cast<Eigen::Index>(k)).data(),
                            d.X.col(static_cast<Eigen::Index>(k)).data() + nrows);
      if (!is_binary(v)) spline.push_back(pred_names[k]);
    }
  }
  d.X_sp.resize(nrows, static_cast<Eigen::Index>(spline.size()));
  for (std::size_t s = 0; s < spline.size(); ++s) {
    auto it = std::find(pred_names.begin(), pred_names.end(), spline[s]);
    if (it == pred_names.end())
      throw ValidationError(fmt::format("{}: spline column '{}' is not a predictor column", path, spline[s]));
    d.X_sp.col(static_cast<Eigen::Index>(s)) = d.X.col(it - pred_names.begin());
  }
  d.predictor_names = std::move(pred_names);
  d.spline_names = std::move(spline);
  d.validate();
  return f;
}

void write_pooled_sample_csv(const std::string& path, const PooledSample& d, const PooledSampleAudit& audit) {
  d.validate();
  const Eigen::Index n = d.n();
  std::vector<std::string> header = {"z", "pi_r"};
  const bool has_cov = !(d.p_c.array() == 1.0).all() || !(d.p_r.array() == 1.0).all();
  if (has_cov) {
    header.push_back("p_c");
    header.push_back("p_r");
  }
  const bool has_id = audit.unit_id.size() == n;
  const bool has_y = audit.y.size() == n;
  const bool has_tc = audit.true_pi_c.size() == n;
  const bool has_tr = audit.true_pi_r.size() == n;
  if (has_id) header.push_back("unit_id");
  if (has_y) header.push_back("y");
  if (has_tc) header.push_back("true_pi_c");
  if (has_tr) header.push_back("true_pi_r");
  for (Eigen::Index k = 0; k < d.X.cols(); ++k)
    header.push_back(d.predictor_names.empty() ? fmt::format("x{}", k + 1) : d.predictor_names[k]);

  auto opt = [](double v) { return std::isnan(v) ? std::string() : csv::format_double(v); };
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<std::string> r;
    r.push_back(d.z(i) ? "1" : "0");
    r.push_back(i < d.n_c ? std::string() : csv::format_double(d.pi_r(i - d.n_c)));
    if (has_cov) {
      r.push_back(csv::format_double(d.p_c(i)));
      r.push_back(csv::format_double(d.p_r(i)));
    }
    if (has_id) r.push_back(std::to_string(audit.unit_id(i)));
    if (has_y) r.push_back(opt(audit.y(i)));
    if (has_tc) r.push_back(opt(audit.true_pi_c(i)));
    if (has_tr) r.push_back(opt(audit.true_pi_r(i)));
    for (Eigen::Index k = 0; k < d.X.cols(); ++k) r.push_back(csv::format_double(d.X(i, k)));
    rows.push_back(std::move(r));
  }
  csv::write(path, header, rows);
}

}  // namespace twoarm

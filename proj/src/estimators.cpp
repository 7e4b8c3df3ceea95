#include "twoarm/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "twoarm/csv.hpp"
#include "twoarm/error.hpp"
#include "twoarm/spline_basis.hpp"

namespace twoarm {

void WeightedSampleDraw::validate() const {
  if (weights.size() != y.size() || arm.size() != y.size())
    throw ValidationError(fmt::format("weighted sample lengths differ: y {}, weights {}, arm {}", y.size(),
                                      weights.size(), arm.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!(weights(i) > 0) || !std::isfinite(weights(i)))
      throw ValidationError(fmt::format("row {}: weight {} must be positive and finite", i, weights(i)));
    if (arm(i) != 0 && arm(i) != 1) throw ValidationError(fmt::format("row {}: arm label must be 0 or 1", i));
    if (!std::isfinite(y(i))) throw ValidationError(fmt::format("row {}: response is not finite", i));
  }
}

WeightedSampleDraw make_weighted_draw(const Eigen::VectorXd& y_c, const Eigen::VectorXd& pi_c,
                                      const Eigen::VectorXd& y_r, const Eigen::VectorXd& pi_r) {
  if (y_c.size() != pi_c.size() || y_r.size() != pi_r.size())
    throw ValidationError("responses and probabilities differ in length");
  auto check = [](const Eigen::VectorXd& p, const char* arm) {
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (!(p(i) > 0 && p(i) <= 1))
        throw ValidationError(fmt::format("{} unit {}: probability {} outside (0, 1]", arm, i, p(i)));
  };
  check(pi_c, "convenience");
  check(pi_r, "reference");
  WeightedSampleDraw s;
  const Eigen::Index n = y_c.size() + y_r.size();
  s.y.resize(n);
  s.y << y_c, y_r;
  s.weights.resize(n);
  s.weights << pi_c.cwiseInverse(), pi_r.cwiseInverse();
  s.arm.resize(n);
  s.arm.head(y_c.size()).setOnes();
  s.arm.tail(y_r.size()).setZero();
  return s;
}

double hajek_mean(const WeightedSampleDraw& s) {
  s.validate();
  if (s.size() == 0) throw ValidationError("Hajek mean of an empty sample");
  return s.weights.dot(s.y) / s.weights.sum();
}

double hajek_mean(const Eigen::VectorXd& y_c, const Eigen::VectorXd& pi_c_hat, const Eigen::VectorXd& y_r,
                  const Eigen::VectorXd& pi_r) {
  return hajek_mean(make_weighted_draw(y_c, pi_c_hat, y_r, pi_r));
}

double taylor_within_variance(const WeightedSampleDraw& s, double mu_hat) {
  s.validate();
  if (s.size() < 2) throw ValidationError("within variance needs at least two units");
  const double total_weight = s.weights.sum();
  double conv = 0;
  double ref_sum = 0;
  double ref_sq = 0;
  Eigen::Index n_r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double u = s.weights(i) / total_weight * (s.y(i) - mu_hat);
    if (s.arm(i) == 1) {
      conv += (1.0 - 1.0 / s.weights(i)) * u * u;
    } else {
      ref_sum += u;
      ref_sq += u * u;
      ++n_r;
    }
  }
  double ref = 0;
  if (n_r >= 2) {
    const double nr = static_cast<double>(n_r);
    ref = nr / (nr - 1.0) * std::max(0.0, ref_sq - ref_sum * ref_sum / nr);
  }
  return conv + ref;
}

MIVarianceResult mi_total_variance(const Eigen::VectorXd& points, const Eigen::VectorXd& within, double alpha) {
  const Eigen::Index J = points.size();
  if (J < 2) throw ValidationError(fmt::format("multiple imputation needs J >= 2, got {}", J));
  if (within.size() != J) throw ValidationError("points and within variances differ in length");
  if (!(alpha > 0 && alpha < 1)) throw ValidationError(fmt::format("alpha must lie in (0, 1), got {}", alpha));
  for (Eigen::Index j = 0; j < J; ++j)
    if (!(within(j) >= 0) || !std::isfinite(points(j)))
      throw ValidationError(fmt::format("imputation {}: invalid point or negative within variance", j));
  MIVarianceResult r;
  r.J = static_cast<int>(J);
  const double Jd = static_cast<double>(J);
  r.point = points.mean();
  r.within = within.mean();
  r.between = (points.array() - r.point).square().sum() / (Jd - 1.0);
  r.total = (1.0 + 1.0 / Jd) * r.between + r.within;
  double crit;
  if (r.between > 0) {
    const double ratio = r.within / ((1.0 + 1.0 / Jd) * r.between);
    r.df = (Jd - 1.0) * (1.0 + ratio) * (1.0 + ratio);
    crit = boost::math::quantile(boost::math::students_t_distribution<double>(r.df), 1.0 - alpha / 2);
  } else {
    r.df = std::numeric_limits<double>::infinity();
    crit = boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2);
  }
  const double half = crit * std::sqrt(r.total);
  r.lo = r.point - half;
  r.hi = r.point + half;
  return r;
}

std::vector<Eigen::Index> thinned_indices(Eigen::Index total, int J) {
  if (J < 1) throw ValidationError("number of imputations must be >= 1");
  if (total < J) throw ValidationError(fmt::format("{} draws cannot supply {} imputations", total, J));
  const Eigen::Index step = total / J;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) idx[j] = total - 1 - static_cast<Eigen::Index>(J - 1 - j) * step;
  return idx;
}

IndexSet threshold_convenience(const Eigen::VectorXd& pi_r_c, const Eigen::VectorXd& pi_r_ref, double p) {
  if (!(p >= 0 && p < 100)) throw ValidationError(fmt::format("threshold percent must lie in [0, 100), got {}", p));
  IndexSet keep;
  double eps = 0;
  if (p > 0) {
    if (pi_r_ref.size() == 0) throw ValidationError("thresholding needs reference probabilities");
    std::vector<double> sorted(pi_r_ref.data(), pi_r_ref.data() + pi_r_ref.size());
    std::sort(sorted.begin(), sorted.end());
    eps = quantile_sorted(sorted, p / 100.0);
  }
  for (Eigen::Index i = 0; i < pi_r_c.size(); ++i)
    if (pi_r_c(i) >= eps) keep.push_back(i);
  return keep;
}

double link_relative(const Eigen::VectorXd& y_curr, const Eigen::VectorXd& y_prev, const Eigen::VectorXd& weights) {
  if (y_curr.size() != y_prev.size()) throw ValidationError("current and previous responses differ in length");
  if (weights.size() != 0 && weights.size() != y_curr.size())
    throw ValidationError("weights and responses differ in length");
  for (Eigen::Index i = 0; i < y_prev.size(); ++i)
    if (!(y_prev(i) > 0)) throw ValidationError(fmt::format("previous response at {} must be positive", i));
  const double num = weights.size() ? weights.dot(y_curr) : y_curr.sum();
  const double den = weights.size() ? weights.dot(y_prev) : y_prev.sum();
  if (den == 0) throw ValidationError("link relative denominator is zero");
  return num / den;
}

double chained_level(double start_level, const Eigen::VectorXd& ratios) {
  double level = start_level;
  for (Eigen::Index i = 0; i < ratios.size(); ++i) {
    if (!(ratios(i) > 0) || !std::isfinite(ratios(i)))
      throw ValidationError(fmt::format("ratio {} at position {} must be positive and finite", ratios(i), i));
    level *= ratios(i);
  }
  return level;
}

double coefficient_of_variation(double variance, double estimate) {
  if (estimate == 0) throw ValidationError("coefficient of variation undefined for a zero estimate");
  if (!(variance >= 0)) throw ValidationError("variance must be nonnegative");
  return std::sqrt(variance) / estimate;
}

void write_estimator_report(const std::string& path, const std::vector<EstimatorRow>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows)
    out.push_back({r.scenario, r.method, std::to_string(r.replicate), csv::format_double(r.result.point),
                   csv::format_double(r.result.within), csv::format_double(r.result.between),
                   csv::format_double(r.result.total), csv::format_double(r.result.lo),
                   csv::format_double(r.result.hi)});
  csv::write(path, {"scenario", "method", "replicate", "estimate", "within", "between", "total", "lo", "hi"}, out);
}

}  // namespace twoarm

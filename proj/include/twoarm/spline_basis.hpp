#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "twoarm/error.hpp"

namespace twoarm {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Knot locations for one predictor together with the spline degree.
///
/// The extended knot vector repeats the first and last interior knot
/// `degree` times, giving `2 * degree + num_knots` entries and
/// `num_knots + degree - 1` basis functions of order `degree + 1`.
template <typename Scalar = double>
struct KnotVector {
  std::vector<Scalar> interior;
  int degree = 3;

  KnotVector() = default;
  KnotVector(std::vector<Scalar> knots, int deg) : interior(std::move(knots)), degree(deg) { validate(); }

  void validate() const {
    if (degree < 0) throw ValidationError(fmt::format("spline degree must be >= 0, got {}", degree));
    if (interior.size() < 2)
      throw ValidationError(fmt::format("need at least 2 knots, got {}", interior.size()));
    for (std::size_t i = 1; i < interior.size(); ++i)
      if (!(interior[i - 1] <= interior[i])) throw ValidationError("knots must be nondecreasing");
    if (!(interior.front() < interior.back())) throw ValidationError("knot range is degenerate");
  }

  int num_knots() const { return static_cast<int>(interior.size()); }
  int num_basis() const { return num_knots() + degree - 1; }
  int order() const { return degree + 1; }
  Scalar lower() const { return interior.front(); }
  Scalar upper() const { return interior.back(); }

  VectorX<Scalar> extended() const {
    VectorX<Scalar> ext(2 * degree + num_knots());
    ext.head(degree).setConstant(interior.front());
    for (int i = 0; i < num_knots(); ++i) ext(degree + i) = interior[i];
    ext.tail(degree).setConstant(interior.back());
    return ext;
  }
};

/// Cox-de Boor recursion for basis function `ind` (0-based) of the given
/// order at every point of `t`. Order 1 is the half-open indicator
/// [ext_knots[ind], ext_knots[ind + 1]).
template <typename DerivedT, typename DerivedK>
VectorX<typename DerivedT::Scalar> build_b_spline(const Eigen::MatrixBase<DerivedT>& t,
                                                  const Eigen::MatrixBase<DerivedK>& ext_knots, Eigen::Index ind,
                                                  int order) {
  using Scalar = typename DerivedT::Scalar;
  if (order < 1) throw ValidationError(fmt::format("spline order must be >= 1, got {}", order));
  if (ind < 0 || ind + order >= ext_knots.size())
    throw ValidationError(
        fmt::format("basis index {} with order {} exceeds {} extended knots", ind, order, ext_knots.size()));
  const Eigen::Index n = t.size();
  VectorX<Scalar> out(n);
  if (order == 1) {
    for (Eigen::Index i = 0; i < n; ++i)
      out(i) = (ext_knots(ind) <= t(i) && t(i) < ext_knots(ind + 1)) ? Scalar(1) : Scalar(0);
    return out;
  }
  VectorX<Scalar> w1 = VectorX<Scalar>::Zero(n);
  VectorX<Scalar> w2 = VectorX<Scalar>::Zero(n);
  if (ext_knots(ind) != ext_knots(ind + order - 1))
    w1 = (t.array() - ext_knots(ind)) / (ext_knots(ind + order - 1) - ext_knots(ind));
  if (ext_knots(ind + 1) != ext_knots(ind + order))
    w2 = Scalar(1) - (t.array() - ext_knots(ind + 1)) / (ext_knots(ind + order) - ext_knots(ind + 1));
  out = w1.cwiseProduct(build_b_spline(t, ext_knots, ind, order - 1)) +
        w2.cwiseProduct(build_b_spline(t, ext_knots, ind + 1, order - 1));
  return out;
}

/// One basis matrix per spline predictor, each num_basis x n.
template <typename Scalar = double>
struct BSplineBasisSet {
  std::vector<KnotVector<Scalar>> knots;
  std::vector<MatrixX<Scalar>> G;

  int num_predictors() const { return static_cast<int>(G.size()); }
  int num_basis() const { return knots.empty() ? 0 : knots.front().num_basis(); }
  Eigen::Index num_points() const { return G.empty() ? 0 : G.front().cols(); }
};

enum class OutOfRange { Reject, Clamp };

/// Evaluate the basis of every spline predictor (columns of `x_sp`) at every
/// row. Points equal to the last knot get the top basis set to 1
/// (right-closed final interval). With OutOfRange::Clamp, points outside the
/// knot range are moved onto the boundary and a warning is logged.
template <typename Derived>
BSplineBasisSet<typename Derived::Scalar> build_basis_set(
    const Eigen::MatrixBase<Derived>& x_sp, const std::vector<KnotVector<typename Derived::Scalar>>& knots,
    OutOfRange policy = OutOfRange::Reject) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<Eigen::Index>(knots.size()) != x_sp.cols())
    throw ValidationError(
        fmt::format("{} knot vectors supplied for {} spline predictors", knots.size(), x_sp.cols()));
  for (std::size_t k = 1; k < knots.size(); ++k)
    if (knots[k].num_basis() != knots[0].num_basis())
      throw ValidationError("all spline predictors must share the same number of basis functions");

  BSplineBasisSet<Scalar> set;
  set.knots = knots;
  for (Eigen::Index k = 0; k < x_sp.cols(); ++k) {
    const auto& kv = knots[k];
    kv.validate();
    VectorX<Scalar> col = x_sp.col(k);
    std::size_t clamped = 0;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (col(i) >= kv.lower() && col(i) <= kv.upper()) continue;
      if (policy == OutOfRange::Reject || !std::isfinite(static_cast<double>(col(i))))
        throw ValidationError(fmt::format("spline predictor {} value {} lies outside knot range [{}, {}]", k,
                                          static_cast<double>(col(i)), static_cast<double>(kv.lower()),
                                          static_cast<double>(kv.upper())));
      col(i) = std::clamp(col(i), kv.lower(), kv.upper());
      ++clamped;
    }
    if (clamped > 0)
      std::clog << fmt::format("warning: clamped {} value(s) of spline predictor {} to the knot range\n", clamped, k);

    const VectorX<Scalar> ext = kv.extended();
    const int nb = kv.num_basis();
    MatrixX<Scalar> g(nb, col.size());
    for (int b = 0; b < nb; ++b) g.row(b) = build_b_spline(col, ext, b, kv.order()).transpose();
    for (Eigen::Index i = 0; i < col.size(); ++i)
      if (col(i) == kv.upper()) g(nb - 1, i) = Scalar(1);
    set.G.push_back(std::move(g));
  }
  return set;
}

/// Linear-interpolation sample quantile (order statistics at (n-1)p).
template <typename Scalar>
Scalar quantile_sorted(const std::vector<Scalar>& sorted, double p) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const Scalar frac = static_cast<Scalar>(h - static_cast<double>(lo));
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Knots at equally spaced sample quantiles of `x`, min and max included.
template <typename Derived>
KnotVector<typename Derived::Scalar> default_knots(const Eigen::MatrixBase<Derived>& x, int num_knots = 10,
                                                   int degree = 3) {
  using Scalar = typename Derived::Scalar;
  if (num_knots < 2) throw ValidationError(fmt::format("num_knots must be >= 2, got {}", num_knots));
  if (x.size() == 0) throw ValidationError("cannot place knots on an empty predictor");
  std::vector<Scalar> sorted(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) sorted[static_cast<std::size_t>(i)] = x(i);
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back())
    throw ValidationError("predictor is constant; spline support is degenerate");
  std::vector<Scalar> knots(num_knots);
  for (int j = 0; j < num_knots; ++j) knots[j] = quantile_sorted(sorted, static_cast<double>(j) / (num_knots - 1));
  knots.front() = sorted.front();
  knots.back() = sorted.back();
  return KnotVector<Scalar>(std::move(knots), degree);
}

}  // namespace twoarm

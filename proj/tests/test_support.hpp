#pragma once
// Shared fixtures for the unit tests.

#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "twoarm/pooled_sample.hpp"
#include "twoarm/rng.hpp"

namespace twoarm::testing {

/// A pooled sample shaped like the simulation model: predictors
/// (cont, A, B, C) with a spline on cont.
inline PooledSample small_pooled_sample(Rng& rng, Eigen::Index n_c, Eigen::Index n_r) {
  auto draw_x = [&](Eigen::Index rows) {
    Eigen::MatrixXd X(rows, 4);
    for (Eigen::Index i = 0; i < rows; ++i) {
      X(i, 0) = std_normal(rng);
      for (int k = 1; k < 4; ++k) X(i, k) = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    }
    return X;
  };
  const Eigen::MatrixXd X_c = draw_x(n_c), X_r = draw_x(n_r);
  Eigen::VectorXd pi_r(n_r);
  for (Eigen::Index j = 0; j < n_r; ++j) pi_r(j) = 0.02 + 0.3 * uniform01(rng);
  PooledSample d = make_pooled_sample(X_c, X_r, X_c.col(0), X_r.col(0), pi_r, {"cont", "A", "B", "C"}, {"cont"});
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    d.p_c(i) = 0.6 + 0.4 * uniform01(rng);
    d.p_r(i) = 0.6 + 0.4 * uniform01(rng);
  }
  return d;
}

/// Fourth-order central difference of f along each coordinate.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-4) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x;
    auto at = [&](double s) {
      a(i) = x(i) + s;
      return f(a);
    };
    g(i) = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
  }
  return g;
}

inline double inv_logit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace twoarm::testing

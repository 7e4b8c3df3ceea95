#pragma once

// Pooled-sample propensity identities.
//
// A unit of the stacked sample S = S_c + S_r belongs to the convenience arm
// with probability
//
//   pi_z = pi_c p_c / (pi_c p_c + pi_r p_r)
//
// where pi_c, pi_r are the conditional inclusion probabilities of the two
// arms and p_c, p_r the coverage probabilities of the two frames.

#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "twoarm/error.hpp"

namespace twoarm {

namespace detail {
template <typename Scalar>
void require_probability(Scalar v, const char* name) {
  if (!(v > Scalar(0) && v <= Scalar(1)))
    throw ValidationError(fmt::format("{} must lie in (0, 1], got {}", name, static_cast<double>(v)));
}
}  // namespace detail

template <typename Scalar = double>
struct ArmProbabilities {
  Scalar pi_c;
  Scalar pi_r;
  Scalar p_c = Scalar(1);
  Scalar p_r = Scalar(1);

  void validate() const {
    detail::require_probability(pi_c, "pi_c");
    detail::require_probability(pi_r, "pi_r");
    detail::require_probability(p_c, "p_c");
    detail::require_probability(p_r, "p_r");
  }
};

template <typename Scalar>
Scalar pooled_propensity(const ArmProbabilities<Scalar>& a) {
  a.validate();
  const Scalar c = a.pi_c * a.p_c;
  return c / (c + a.pi_r * a.p_r);
}

/// Frames coincide (p_c = p_r).
template <typename Scalar>
Scalar equal_frame_propensity(Scalar pi_c, Scalar pi_r) {
  detail::require_probability(pi_c, "pi_c");
  detail::require_probability(pi_r, "pi_r");
  return pi_c / (pi_c + pi_r);
}

/// The reference arm is the whole frame (pi_r = 1).
template <typename Scalar>
Scalar one_arm_propensity(Scalar pi_c) {
  return equal_frame_propensity(pi_c, Scalar(1));
}

/// Marginal selection probabilities of the symmetric two-arm construction.
template <typename Scalar = double>
struct MarginalProbabilities {
  Scalar h;  ///< P(unit is convenience | unit in pooled sample)
  Scalar q;  ///< P(unit in convenience sample | unit in stacked population)
  Scalar t;  ///< P(unit in reference sample | unit in stacked population)

  void validate() const {
    for (auto [v, name] : {std::pair{h, "h"}, std::pair{q, "q"}, std::pair{t, "t"}})
      if (!(v > Scalar(0) && v < Scalar(1)))
        throw ValidationError(fmt::format("{} must lie in (0, 1), got {}", name, static_cast<double>(v)));
  }
};

/// psi = q (1 - h) / (t h). Equals 1 whenever the marginals come from one
/// pooled-sample construction; other values flag inconsistent inputs.
template <typename Scalar>
Scalar psi(const MarginalProbabilities<Scalar>& m) {
  m.validate();
  return m.q * (Scalar(1) - m.h) / (m.t * m.h);
}

/// sum_i z_i log pi_i + (1 - z_i) log(1 - pi_i).
template <typename DerivedZ, typename DerivedP>
typename DerivedP::Scalar bernoulli_log_likelihood(const Eigen::MatrixBase<DerivedZ>& z,
                                                   const Eigen::MatrixBase<DerivedP>& pi_z) {
  using Scalar = typename DerivedP::Scalar;
  if (z.size() != pi_z.size())
    throw ValidationError(fmt::format("length mismatch: {} indicators, {} probabilities", z.size(), pi_z.size()));
  Scalar total = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const Scalar p = pi_z(i);
    if (!(p >= Scalar(0) && p <= Scalar(1)))
      throw ValidationError(fmt::format("pi_z[{}] = {} is not a probability", i, static_cast<double>(p)));
    const bool one = z(i) != 0;
    const Scalar term = one ? std::log(p) : std::log1p(-p);
    if (!std::isfinite(static_cast<double>(term)))
      throw NumericalError(fmt::format("observation {} has zero probability (z = {}, pi_z = {})", i, one ? 1 : 0,
                                       static_cast<double>(p)));
    total += term;
  }
  return total;
}

}  // namespace twoarm

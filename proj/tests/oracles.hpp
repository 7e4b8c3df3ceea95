#pragma once
// Independent reference implementations shared by the unit tests and the
// acceptance checks.

#include <vector>

namespace twoarm::oracles {

// de Boor's triangular scheme for all B-splines of degree p that are
// nonzero at x. Written from the textbook recurrence over a raw knot array,
// independent of the library's recursive formulation.
inline std::vector<double> de_boor_all(const std::vector<double>& t, int p, double x) {
  const int m = static_cast<int>(t.size());
  const int nb = m - p - 1;
  std::vector<double> out(nb, 0.0);
  // Span s with t[s] <= x < t[s+1]; the last nonempty span is closed.
  int s = -1;
  for (int i = 0; i + 1 < m; ++i)
    if (t[i] < t[i + 1] && t[i] <= x && x < t[i + 1]) s = i;
  if (s < 0) {
    for (int i = m - 2; i >= 0; --i)
      if (t[i] < t[i + 1]) {
        s = i;
        break;
      }
  }
  std::vector<double> N(p + 1, 0.0), left(p + 1), right(p + 1);
  N[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - t[s + 1 - j];
    right[j] = t[s + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom == 0 ? 0.0 : N[r] / denom;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  for (int r = 0; r <= p; ++r) {
    const int idx = s - p + r;
    if (idx >= 0 && idx < nb) out[idx] = N[r];
  }
  return out;
}

}  // namespace twoarm::oracles

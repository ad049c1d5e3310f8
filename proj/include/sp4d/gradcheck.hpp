#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace sp4d {

// Central differences of a scalar function of a flat parameter vector.
// `x` is perturbed in place and restored.
template <typename Loss>
std::vector<double> central_differences(Loss&& loss, std::vector<double>& x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss(x);
    x[i] = saved - h;
    const double down = loss(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

// Per-component |a - n| / max(|a|, |n|, floor). The floor keeps components whose
// true value is ~0 from being judged on difference round-off alone.
inline GradCheckResult compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                         double floor = 1e-4) {
  GradCheckResult r;
  for (std::size_t i = 0; i < analytic.size() && i < numeric.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double e = std::abs(analytic[i] - numeric[i]) / denom;
    if (e > r.max_relative_error) {
      r.max_relative_error = e;
      r.worst_index = i;
    }
  }
  if (analytic.size() != numeric.size()) r.max_relative_error = INFINITY;
  return r;
}

}  // namespace sp4d

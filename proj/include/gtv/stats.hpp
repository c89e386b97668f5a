/*
 * Copyright 2026 The GTV Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <vector>

#include "gtv/common.hpp"

namespace gtv {

// Regularized incomplete gamma (series / continued fraction) and the
// chi-square goodness-of-fit test built on it.

namespace stats_detail {

inline double gamma_p_series(double a, double x) {
  double ap = a, sum = 1.0 / a, del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-14) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-14) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace stats_detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  require(a > 0.0 && x >= 0.0, "gamma_p domain");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return stats_detail::gamma_p_series(a, x);
  return 1.0 - stats_detail::gamma_q_cf(a, x);
}

/// Survival function of the chi-square distribution with k dof.
inline double chi2_sf(double x, double k) {
  if (x <= 0.0) return 1.0;
  return 1.0 - gamma_p(k / 2.0, x / 2.0);
}

struct Chi2Result {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

/// Goodness of fit of observed counts against expected probabilities.
/// Zero-probability cells must have zero observations.
inline Chi2Result chi2_test(const std::vector<std::size_t>& observed,
                            const std::vector<double>& expected_probs) {
  require(observed.size() == expected_probs.size(), "chi2 size mismatch");
  double total = 0.0;
  for (std::size_t n : observed) total += static_cast<double>(n);
  Chi2Result res;
  std::size_t cells = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    double e = expected_probs[i] * total;
    if (e == 0.0) {
      require(observed[i] == 0, "observations in a zero-probability cell");
      continue;
    }
    double d = static_cast<double>(observed[i]) - e;
    res.statistic += d * d / e;
    ++cells;
  }
  require(cells >= 2, "chi2 needs at least two cells with mass");
  res.dof = static_cast<double>(cells - 1);
  res.p_value = chi2_sf(res.statistic, res.dof);
  return res;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace gtv

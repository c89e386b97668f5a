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

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "gtv/common.hpp"
#include "gtv/table.hpp"
#include "gtv/tensor.hpp"

namespace gtv {

// Fidelity metrics between a real table and a synthetic one sharing its
// schema: per-column distributional distances (JSD for categorical columns,
// normalized 1-Wasserstein for numeric ones) and association-matrix
// difference norms, optionally restricted by client scope.

namespace metrics_detail {

inline std::vector<double> category_pmf(const RawTable& t, std::size_t col) {
  const auto& cats = t.schema.columns[col].categories;
  std::vector<double> pmf(cats.size(), 0.0);
  for (const auto& row : t.rows) {
    const std::string& v = cat(row[col]);
    for (std::size_t k = 0; k < cats.size(); ++k)
      if (cats[k] == v) {
        pmf[k] += 1.0;
        break;
      }
  }
  double n = static_cast<double>(t.n_rows());
  if (n > 0)
    for (double& p : pmf) p /= n;
  return pmf;
}

inline double entropy2(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

inline std::vector<double> numeric_column(const RawTable& t,
                                          std::size_t col) {
  std::vector<double> out;
  out.reserve(t.n_rows());
  for (const auto& row : t.rows) out.push_back(num(row[col]));
  return out;
}

inline std::size_t category_id(const ColumnSpec& spec, const Cell& cell) {
  const std::string& v = cat(cell);
  for (std::size_t k = 0; k < spec.categories.size(); ++k)
    if (spec.categories[k] == v) return k;
  fail<ValidationError>("unknown category '", v, "' in column '", spec.name,
                        "'");
}

}  // namespace metrics_detail

/// Jensen–Shannon divergence (base-2, bounded [0,1]) between category mass
/// functions, averaged over categorical columns. Empty when the schema has
/// no categorical column.
inline std::optional<double> avg_jsd(const RawTable& real,
                                     const RawTable& synth) {
  double total = 0.0;
  std::size_t n_cols = 0;
  for (std::size_t c = 0; c < real.schema.columns.size(); ++c) {
    if (real.schema.columns[c].kind != ColumnKind::Categorical) continue;
    auto p = metrics_detail::category_pmf(real, c);
    auto q = metrics_detail::category_pmf(synth, c);
    std::vector<double> m(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) m[k] = 0.5 * (p[k] + q[k]);
    double jsd = metrics_detail::entropy2(m) -
                 0.5 * (metrics_detail::entropy2(p) +
                        metrics_detail::entropy2(q));
    total += std::clamp(jsd, 0.0, 1.0);
    ++n_cols;
  }
  if (n_cols == 0) return std::nullopt;
  return total / static_cast<double>(n_cols);
}

/// Empirical 1-Wasserstein distance between two samples (area between
/// empirical CDFs).
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  require<ValidationError>(!a.empty() && !b.empty(),
                           "wasserstein needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> grid;
  grid.reserve(a.size() + b.size());
  grid.insert(grid.end(), a.begin(), a.end());
  grid.insert(grid.end(), b.begin(), b.end());
  std::sort(grid.begin(), grid.end());
  double dist = 0.0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    while (ia < a.size() && a[ia] <= grid[k]) ++ia;
    while (ib < b.size() && b[ib] <= grid[k]) ++ib;
    double fa = static_cast<double>(ia) / static_cast<double>(a.size());
    double fb = static_cast<double>(ib) / static_cast<double>(b.size());
    dist += std::abs(fa - fb) * (grid[k + 1] - grid[k]);
  }
  return dist;
}

/// Per numeric column: min–max normalize both samples by the REAL column's
/// range, then average the empirical Wasserstein distances. Constant real
/// columns are skipped. Empty when there is no numeric column.
inline std::optional<double> avg_wd(const RawTable& real,
                                    const RawTable& synth) {
  double total = 0.0;
  std::size_t n_cols = 0;
  for (std::size_t c = 0; c < real.schema.columns.size(); ++c) {
    if (real.schema.columns[c].kind == ColumnKind::Categorical) continue;
    auto rv = metrics_detail::numeric_column(real, c);
    auto sv = metrics_detail::numeric_column(synth, c);
    double lo = *std::min_element(rv.begin(), rv.end());
    double hi = *std::max_element(rv.begin(), rv.end());
    if (hi == lo) continue;  // zero range: normalization undefined
    double range = hi - lo;
    for (double& v : rv) v = (v - lo) / range;
    for (double& v : sv) v = (v - lo) / range;
    total += wasserstein1(std::move(rv), std::move(sv));
    ++n_cols;
  }
  if (n_cols == 0) return std::nullopt;
  return total / static_cast<double>(n_cols);
}

/// Pairwise association matrix: Pearson for numeric–numeric, Cramér's V for
/// categorical–categorical, correlation ratio for categorical–numeric.
/// Mixed columns enter numerically, special values included. Diagonal = 1.
inline Tensor2 association_matrix(const RawTable& t) {
  const std::size_t k = t.schema.columns.size();
  require<ValidationError>(k >= 2, "association matrix needs >= 2 columns");
  const std::size_t n = t.n_rows();
  require<ValidationError>(n >= 2, "association matrix needs >= 2 rows");

  Tensor2 m(k, k);
  auto is_cat = [&](std::size_t c) {
    return t.schema.columns[c].kind == ColumnKind::Categorical;
  };

  auto pearson = [&](std::size_t a, std::size_t b) {
    auto xa = metrics_detail::numeric_column(t, a);
    auto xb = metrics_detail::numeric_column(t, b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += xa[i];
      mb += xb[i];
    }
    ma /= double(n);
    mb /= double(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sab += (xa[i] - ma) * (xb[i] - mb);
      saa += (xa[i] - ma) * (xa[i] - ma);
      sbb += (xb[i] - mb) * (xb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;  // zero variance
    return sab / std::sqrt(saa * sbb);
  };

  auto cramers_v = [&](std::size_t a, std::size_t b) {
    const auto& ca = t.schema.columns[a];
    const auto& cb = t.schema.columns[b];
    std::size_t ra = ca.categories.size(), rb = cb.categories.size();
    std::vector<double> table(ra * rb, 0.0), rowt(ra, 0.0), colt(rb, 0.0);
    for (const auto& row : t.rows) {
      std::size_t ia = metrics_detail::category_id(ca, row[a]);
      std::size_t ib = metrics_detail::category_id(cb, row[b]);
      table[ia * rb + ib] += 1.0;
      rowt[ia] += 1.0;
      colt[ib] += 1.0;
    }
    double chi2 = 0.0;
    for (std::size_t i = 0; i < ra; ++i)
      for (std::size_t j = 0; j < rb; ++j) {
        double e = rowt[i] * colt[j] / double(n);
        if (e == 0.0) continue;
        double d = table[i * rb + j] - e;
        chi2 += d * d / e;
      }
    std::size_t dmin = std::min(ra, rb) - 1;
    if (dmin == 0) return 0.0;
    return std::sqrt(chi2 / (double(n) * double(dmin)));
  };

  auto correlation_ratio = [&](std::size_t cat_col, std::size_t num_col) {
    const auto& cc = t.schema.columns[cat_col];
    auto y = metrics_detail::numeric_column(t, num_col);
    std::vector<double> sum(cc.categories.size(), 0.0);
    std::vector<std::size_t> count(cc.categories.size(), 0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t g = metrics_detail::category_id(cc, t.rows[i][cat_col]);
      sum[g] += y[i];
      count[g] += 1;
      total += y[i];
    }
    double grand = total / double(n);
    double ss_between = 0.0, ss_total = 0.0;
    for (std::size_t g = 0; g < sum.size(); ++g)
      if (count[g] > 0) {
        double mg = sum[g] / double(count[g]);
        ss_between += double(count[g]) * (mg - grand) * (mg - grand);
      }
    for (std::size_t i = 0; i < n; ++i)
      ss_total += (y[i] - grand) * (y[i] - grand);
    if (ss_total == 0.0) return 0.0;
    return std::sqrt(ss_between / ss_total);
  };

  for (std::size_t a = 0; a < k; ++a) {
    m.at(a, a) = 1.0;
    for (std::size_t b = a + 1; b < k; ++b) {
      double v;
      if (!is_cat(a) && !is_cat(b))
        v = pearson(a, b);
      else if (is_cat(a) && is_cat(b))
        v = cramers_v(a, b);
      else if (is_cat(a))
        v = correlation_ratio(a, b);
      else
        v = correlation_ratio(b, a);
      m.at(a, b) = v;
      m.at(b, a) = v;
    }
  }
  return m;
}

enum class CorrScope { Overall, AvgClient, AcrossClient };

namespace metrics_detail {

inline double frob(const Tensor2& d, const std::vector<std::size_t>& rows,
                   const std::vector<std::size_t>& cols) {
  double s = 0.0;
  for (std::size_t r : rows)
    for (std::size_t c : cols) s += d.at(r, c) * d.at(r, c);
  return std::sqrt(s);
}

}  // namespace metrics_detail

/// l2 norm of the association-matrix difference: over all pairs, averaged
/// over within-client blocks, or over cross-client blocks only.
inline double diff_corr(const RawTable& real, const RawTable& synth,
                        CorrScope scope,
                        const ColumnAssignment* assignment = nullptr) {
  Tensor2 a = association_matrix(real);
  Tensor2 b = association_matrix(synth);
  require<ShapeError>(a.cols == b.cols, "association matrices differ");
  Tensor2 d(a.rows, a.cols);
  for (std::size_t i = 0; i < d.size(); ++i)
    d.data[i] = a.data[i] - b.data[i];

  if (scope == CorrScope::Overall) {
    double s = 0.0;
    for (double v : d.data) s += v * v;
    return std::sqrt(s);
  }

  require<ValidationError>(assignment != nullptr,
                           "client scope needs a column assignment");
  std::vector<std::vector<std::size_t>> client_cols(assignment->n_clients());
  for (std::size_t i = 0; i < assignment->n_clients(); ++i)
    for (const auto& name : assignment->client_columns[i])
      client_cols[i].push_back(real.schema.column_index(name));

  if (scope == CorrScope::AvgClient) {
    double total = 0.0;
    for (const auto& cols : client_cols)
      total += metrics_detail::frob(d, cols, cols);
    return total / static_cast<double>(client_cols.size());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < client_cols.size(); ++i)
    for (std::size_t j = i + 1; j < client_cols.size(); ++j) {
      double f = metrics_detail::frob(d, client_cols[i], client_cols[j]);
      s += f * f;
    }
  return std::sqrt(s);
}

struct MetricReport {
  std::optional<double> jsd;
  std::optional<double> wd;
  double corr_overall = 0.0;
  std::optional<double> corr_avg_client;
  std::optional<double> corr_across_client;
  json ml_utility;  // filled by the utility evaluation when a target exists

  json to_json() const {
    json j;
    j["avg_jsd"] = jsd ? json(*jsd) : json(nullptr);
    j["avg_wd"] = wd ? json(*wd) : json(nullptr);
    j["diff_corr"] = corr_overall;
    j["avg_client_corr"] =
        corr_avg_client ? json(*corr_avg_client) : json(nullptr);
    j["across_client_corr"] =
        corr_across_client ? json(*corr_across_client) : json(nullptr);
    if (!ml_utility.is_null()) j["ml_utility"] = ml_utility;
    return j;
  }
};

inline MetricReport statistical_similarity(
    const RawTable& real, const RawTable& synth,
    const ColumnAssignment* assignment = nullptr) {
  require<ValidationError>(real.schema.columns.size() ==
                               synth.schema.columns.size(),
                           "schema width mismatch between real and synthetic");
  MetricReport r;
  r.jsd = avg_jsd(real, synth);
  r.wd = avg_wd(real, synth);
  r.corr_overall = diff_corr(real, synth, CorrScope::Overall);
  if (assignment && assignment->n_clients() >= 2) {
    r.corr_avg_client =
        diff_corr(real, synth, CorrScope::AvgClient, assignment);
    r.corr_across_client =
        diff_corr(real, synth, CorrScope::AcrossClient, assignment);
  }
  return r;
}

}  // namespace gtv

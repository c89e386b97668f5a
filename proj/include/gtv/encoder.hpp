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
#include <set>
#include <string>
#include <vector>

#include "gtv/common.hpp"
#include "gtv/rng.hpp"
#include "gtv/table.hpp"
#include "gtv/tensor.hpp"

namespace gtv {

// Reversible per-column transformations feeding the GAN:
//   categorical -> one-hot
//   continuous  -> (normalized scalar, one-hot of the responsible mixture mode)
//   mixed       -> like continuous, with extra one-hot slots for the declared
//                  special values (scalar fixed at 0 for those rows)

struct EncoderOptions {
  std::size_t max_modes = 10;
  double weight_threshold = 0.005;
  double em_tol = 1e-4;
  std::size_t em_max_iters = 100;
  double std_floor = 1e-4;
  // Post-EM pair merging: accept a moment-matched merge while the mean
  // log-likelihood drop stays below max(merge_tol, 3 ln(n)/n) nats per
  // sample. The BIC-scale term absorbs the overfitting advantage of the
  // redundant overlapping components plain EM leaves behind; genuinely
  // separate modes cost an order of magnitude more to merge.
  double merge_tol = 0.002;
};

struct GmmParams {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<bool> active_modes;
  std::vector<double> em_loglik;  // per-iteration trajectory of the EM fit

  std::size_t n_modes() const { return weights.size(); }
  std::size_t n_active() const {
    return static_cast<std::size_t>(
        std::count(active_modes.begin(), active_modes.end(), true));
  }
  std::vector<std::size_t> active_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < active_modes.size(); ++i)
      if (active_modes[i]) out.push_back(i);
    return out;
  }

  void validate() const {
    require(!weights.empty(), "empty mixture");
    require(weights.size() == means.size() && means.size() == stds.size() &&
                stds.size() == active_modes.size(),
            "mixture field lengths differ");
    double sum = 0.0;
    for (double w : weights) sum += w;
    require<NumericError>(std::abs(sum - 1.0) <= 1e-9,
                          "mixture weights sum to ", sum);
    for (double s : stds)
      require<NumericError>(s > 0.0, "non-positive mixture std");
  }
};

namespace detail {

inline double gauss_logpdf(double x, double mu, double sd) {
  static const double kLog2Pi = std::log(2.0 * 3.14159265358979323846);
  double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

inline double mixture_mean_loglik(const std::vector<double>& xs,
                                  const std::vector<double>& w,
                                  const std::vector<double>& mu,
                                  const std::vector<double>& sd) {
  double total = 0.0;
  for (double x : xs) {
    double m = -1e300;
    std::vector<double> lp(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
      lp[j] = std::log(std::max(w[j], 1e-300)) + gauss_logpdf(x, mu[j], sd[j]);
      m = std::max(m, lp[j]);
    }
    double s = 0.0;
    for (double v : lp) s += std::exp(v - m);
    total += m + std::log(s);
  }
  return total / static_cast<double>(xs.size());
}

inline std::vector<double> kmeanspp_centers(const std::vector<double>& xs,
                                            std::size_t k, RngStream& rng) {
  std::vector<double> centers;
  centers.push_back(xs[rng.uniform_below(xs.size())]);
  std::vector<double> d2(xs.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double best = 1e300;
      for (double c : centers) best = std::min(best, (xs[i] - c) * (xs[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) break;  // all remaining points sit on existing centers
    double r = rng.uniform() * total, acc = 0.0;
    std::size_t pick = xs.size() - 1;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      acc += d2[i];
      if (r < acc) {
        pick = i;
        break;
      }
    }
    centers.push_back(xs[pick]);
  }
  return centers;
}

}  // namespace detail

/// Fits a 1-D Gaussian mixture: k-means++ seeding, EM to convergence
/// (monotone log-likelihood), then moment-matched merging of redundant
/// components and weight-threshold deactivation.
inline GmmParams fit_gmm(const std::vector<double>& values,
                         std::size_t max_modes, const EncoderOptions& opts,
                         std::uint64_t seed) {
  require<ValidationError>(!values.empty(),
                           "cannot fit a mixture on an empty column");
  require(max_modes >= 1, "max_modes must be >= 1");
  for (double v : values) check_finite(v, "gmm input");

  std::set<double> distinct(values.begin(), values.end());
  std::size_t k = std::min(max_modes, distinct.size());

  GmmParams g;
  auto rng = derived_stream(seed, "gmm.init");
  auto centers = detail::kmeanspp_centers(values, k, rng);
  k = centers.size();
  double pooled_sd = 0.0, mean_all = 0.0;
  for (double v : values) mean_all += v;
  mean_all /= static_cast<double>(values.size());
  for (double v : values) pooled_sd += (v - mean_all) * (v - mean_all);
  pooled_sd = std::sqrt(pooled_sd / static_cast<double>(values.size()));
  pooled_sd = std::max(pooled_sd, opts.std_floor);

  g.weights.assign(k, 1.0 / static_cast<double>(k));
  g.means = centers;
  g.stds.assign(k, std::max(pooled_sd / static_cast<double>(k),
                            opts.std_floor));

  const std::size_t n = values.size();
  std::vector<double> resp(n * k);
  double prev_ll = -1e300;
  for (std::size_t iter = 0; iter < opts.em_max_iters; ++iter) {
    // E step (log domain)
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = -1e300;
      for (std::size_t j = 0; j < k; ++j) {
        double lp = std::log(std::max(g.weights[j], 1e-300)) +
                    detail::gauss_logpdf(values[i], g.means[j], g.stds[j]);
        resp[i * k + j] = lp;
        m = std::max(m, lp);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        resp[i * k + j] = std::exp(resp[i * k + j] - m);
        s += resp[i * k + j];
      }
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] /= s;
      ll += m + std::log(s);
    }
    ll /= static_cast<double>(n);
    g.em_loglik.push_back(ll);
    // M step
    for (std::size_t j = 0; j < k; ++j) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + j];
        sx += resp[i * k + j] * values[i];
      }
      if (nk < 1e-12) {
        g.weights[j] = 0.0;
        continue;
      }
      double mu = sx / nk, sv = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        sv += resp[i * k + j] * (values[i] - mu) * (values[i] - mu);
      g.weights[j] = nk / static_cast<double>(n);
      g.means[j] = mu;
      g.stds[j] = std::max(std::sqrt(sv / nk), opts.std_floor);
    }
    if (iter >= 2 && ll - prev_ll < opts.em_tol) break;
    prev_ll = ll;
  }

  // Merge overlapping components while the fit barely degrades.
  const double merge_threshold =
      std::max(opts.merge_tol,
               3.0 * std::log(static_cast<double>(n)) / static_cast<double>(n));
  while (g.weights.size() > 1) {
    double base = detail::mixture_mean_loglik(values, g.weights, g.means,
                                              g.stds);
    double best_drop = 1e300;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < g.weights.size(); ++i) {
      for (std::size_t j = i + 1; j < g.weights.size(); ++j) {
        double wm = g.weights[i] + g.weights[j];
        if (wm <= 0.0) continue;
        double mm =
            (g.weights[i] * g.means[i] + g.weights[j] * g.means[j]) / wm;
        double vm = (g.weights[i] * (g.stds[i] * g.stds[i] +
                                     g.means[i] * g.means[i]) +
                     g.weights[j] * (g.stds[j] * g.stds[j] +
                                     g.means[j] * g.means[j])) /
                        wm -
                    mm * mm;
        auto w2 = g.weights;
        auto mu2 = g.means;
        auto sd2 = g.stds;
        w2[i] = wm;
        mu2[i] = mm;
        sd2[i] = std::max(std::sqrt(std::max(vm, 0.0)), opts.std_floor);
        w2.erase(w2.begin() + static_cast<long>(j));
        mu2.erase(mu2.begin() + static_cast<long>(j));
        sd2.erase(sd2.begin() + static_cast<long>(j));
        double drop =
            base - detail::mixture_mean_loglik(values, w2, mu2, sd2);
        if (drop < best_drop) {
          best_drop = drop;
          bi = i;
          bj = j;
        }
      }
    }
    if (best_drop > merge_threshold) break;
    double wm = g.weights[bi] + g.weights[bj];
    double mm =
        (g.weights[bi] * g.means[bi] + g.weights[bj] * g.means[bj]) / wm;
    double vm =
        (g.weights[bi] * (g.stds[bi] * g.stds[bi] + g.means[bi] * g.means[bi]) +
         g.weights[bj] * (g.stds[bj] * g.stds[bj] + g.means[bj] * g.means[bj])) /
            wm -
        mm * mm;
    g.weights[bi] = wm;
    g.means[bi] = mm;
    g.stds[bi] = std::max(std::sqrt(std::max(vm, 0.0)), opts.std_floor);
    g.weights.erase(g.weights.begin() + static_cast<long>(bj));
    g.means.erase(g.means.begin() + static_cast<long>(bj));
    g.stds.erase(g.stds.begin() + static_cast<long>(bj));
  }

  g.active_modes.assign(g.weights.size(), false);
  for (std::size_t j = 0; j < g.weights.size(); ++j)
    g.active_modes[j] = g.weights[j] >= opts.weight_threshold;
  if (g.n_active() == 0) {
    // pathological fit; keep the heaviest mode so the encoder stays usable
    std::size_t h = static_cast<std::size_t>(
        std::max_element(g.weights.begin(), g.weights.end()) -
        g.weights.begin());
    g.active_modes[h] = true;
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------

enum class SpanKind { Scalar, OneHot };

struct LayoutPart {
  std::string column;
  SpanKind kind = SpanKind::Scalar;
  std::size_t offset = 0;
  std::size_t width = 0;
};

/// Column order and span structure of an encoded matrix.
struct EncodedLayout {
  std::vector<LayoutPart> parts;
  std::size_t total_width = 0;
};

struct ColumnEncoder {
  ColumnSpec spec;
  GmmParams gmm;  // continuous and mixed columns

  std::size_t encoded_width() const {
    switch (spec.kind) {
      case ColumnKind::Categorical: return spec.categories.size();
      case ColumnKind::Continuous: return 1 + gmm.n_active();
      case ColumnKind::Mixed:
        return 1 + gmm.n_active() + spec.special_values.size();
    }
    return 0;
  }
};

struct EncodedTable {
  Tensor2 matrix;
  EncodedLayout layout;
};

class TableCodec {
 public:
  TableCodec() = default;

  static TableCodec fit(const RawTable& table, const EncoderOptions& opts,
                        std::uint64_t seed) {
    TableCodec codec;
    codec.opts_ = opts;
    for (std::size_t c = 0; c < table.schema.columns.size(); ++c) {
      const auto& spec = table.schema.columns[c];
      ColumnEncoder enc;
      enc.spec = spec;
      if (spec.kind != ColumnKind::Categorical) {
        std::vector<double> numeric;
        for (const auto& row : table.rows) {
          double v = num(row[c]);
          if (spec.kind == ColumnKind::Mixed && is_special(spec, v)) continue;
          numeric.push_back(v);
        }
        require<ValidationError>(!numeric.empty(), "column '", spec.name,
                                 "' holds no numeric values to fit");
        enc.gmm = fit_gmm(numeric, opts.max_modes, opts,
                          derive_seed(seed, "fit", spec.name));
      }
      codec.encoders_.push_back(std::move(enc));
    }
    codec.rebuild_layout();
    return codec;
  }

  const std::vector<ColumnEncoder>& encoders() const { return encoders_; }
  const EncodedLayout& layout() const { return layout_; }
  const EncoderOptions& options() const { return opts_; }

  TableSchema schema() const {
    TableSchema s;
    for (const auto& e : encoders_) s.columns.push_back(e.spec);
    return s;
  }

  /// Mode selection samples the posterior responsibility, seeded per column
  /// so encoding is reproducible and identical across runs.
  EncodedTable encode(const RawTable& table, std::uint64_t seed) const {
    require<ValidationError>(table.schema.columns.size() == encoders_.size(),
                             "encode: schema width mismatch");
    EncodedTable out;
    out.layout = layout_;
    out.matrix = Tensor2(table.n_rows(), layout_.total_width);
    std::size_t part_i = 0;
    for (std::size_t c = 0; c < encoders_.size(); ++c) {
      const auto& enc = encoders_[c];
      require<ValidationError>(table.schema.columns[c].name == enc.spec.name,
                               "encode: column order mismatch at '",
                               table.schema.columns[c].name, "'");
      auto rng = derived_stream(seed, "encode", enc.spec.name);
      if (enc.spec.kind == ColumnKind::Categorical) {
        const auto& part = layout_.parts[part_i];
        for (std::size_t r = 0; r < table.n_rows(); ++r) {
          const std::string& v = cat(table.rows[r][c]);
          auto it = std::find(enc.spec.categories.begin(),
                              enc.spec.categories.end(), v);
          require<ValidationError>(it != enc.spec.categories.end(),
                                   "unseen category '", v, "' in column '",
                                   enc.spec.name, "'");
          out.matrix.at(r, part.offset + static_cast<std::size_t>(
                                              it - enc.spec.categories.begin())) =
              1.0;
        }
        part_i += 1;
      } else {
        const auto& scalar_part = layout_.parts[part_i];
        const auto& onehot_part = layout_.parts[part_i + 1];
        auto active = enc.gmm.active_indices();
        for (std::size_t r = 0; r < table.n_rows(); ++r) {
          double v = num(table.rows[r][c]);
          if (enc.spec.kind == ColumnKind::Mixed &&
              is_special(enc.spec, v)) {
            std::size_t slot = special_slot(enc.spec, v);
            out.matrix.at(r, onehot_part.offset + active.size() + slot) = 1.0;
            continue;  // scalar stays 0
          }
          // responsibility-weighted mode choice
          std::vector<double> post(active.size());
          double m = -1e300;
          for (std::size_t a = 0; a < active.size(); ++a) {
            std::size_t j = active[a];
            post[a] = std::log(std::max(enc.gmm.weights[j], 1e-300)) +
                      detail::gauss_logpdf(v, enc.gmm.means[j],
                                           enc.gmm.stds[j]);
            m = std::max(m, post[a]);
          }
          for (double& p : post) p = std::exp(p - m);
          std::size_t a = rng.categorical(post);
          std::size_t j = active[a];
          double scaled =
              (v - enc.gmm.means[j]) / (4.0 * enc.gmm.stds[j]);
          out.matrix.at(r, scalar_part.offset) =
              std::clamp(scaled, -1.0, 1.0);
          out.matrix.at(r, onehot_part.offset + a) = 1.0;
        }
        part_i += 2;
      }
    }
    return out;
  }

  /// Inverse transform. One-hot spans decode by argmax, so soft generator
  /// outputs decode directly.
  RawTable decode(const Tensor2& matrix) const {
    require<ShapeError>(matrix.cols == layout_.total_width,
                        "decode: matrix width ", matrix.cols,
                        " != layout width ", layout_.total_width);
    RawTable out;
    out.schema = schema();
    out.rows.assign(matrix.rows, std::vector<Cell>(encoders_.size()));
    out.row_ids.resize(matrix.rows);
    for (std::size_t r = 0; r < matrix.rows; ++r)
      out.row_ids[r] = static_cast<std::uint32_t>(r);

    std::size_t part_i = 0;
    for (std::size_t c = 0; c < encoders_.size(); ++c) {
      const auto& enc = encoders_[c];
      if (enc.spec.kind == ColumnKind::Categorical) {
        const auto& part = layout_.parts[part_i];
        for (std::size_t r = 0; r < matrix.rows; ++r) {
          std::size_t best = argmax_span(matrix, r, part);
          out.rows[r][c] = enc.spec.categories[best];
        }
        part_i += 1;
      } else {
        const auto& scalar_part = layout_.parts[part_i];
        const auto& onehot_part = layout_.parts[part_i + 1];
        auto active = enc.gmm.active_indices();
        for (std::size_t r = 0; r < matrix.rows; ++r) {
          std::size_t best = argmax_span(matrix, r, onehot_part);
          if (best >= active.size()) {
            // special-value slot of a mixed column
            out.rows[r][c] =
                enc.spec.special_values[best - active.size()];
            continue;
          }
          std::size_t j = active[best];
          double scalar = matrix.at(r, scalar_part.offset);
          out.rows[r][c] =
              scalar * 4.0 * enc.gmm.stds[j] + enc.gmm.means[j];
        }
        part_i += 2;
      }
    }
    return out;
  }

  json to_json() const {
    json cols = json::array();
    for (const auto& e : encoders_) {
      json jc{{"name", e.spec.name}, {"kind", to_string(e.spec.kind)}};
      if (e.spec.kind == ColumnKind::Categorical) {
        jc["categories"] = e.spec.categories;
      } else {
        if (e.spec.kind == ColumnKind::Mixed)
          jc["special_values"] = e.spec.special_values;
        jc["gmm"] = {{"weights", e.gmm.weights},
                     {"means", e.gmm.means},
                     {"stds", e.gmm.stds},
                     {"active", std::vector<int>(e.gmm.active_modes.begin(),
                                                 e.gmm.active_modes.end())}};
      }
      cols.push_back(jc);
    }
    return json{{"columns", cols},
                {"options",
                 {{"max_modes", opts_.max_modes},
                  {"weight_threshold", opts_.weight_threshold},
                  {"em_tol", opts_.em_tol},
                  {"em_max_iters", opts_.em_max_iters},
                  {"std_floor", opts_.std_floor},
                  {"merge_tol", opts_.merge_tol}}}};
  }

  static TableCodec from_json(const json& j) {
    TableCodec codec;
    const auto& jo = j.at("options");
    codec.opts_.max_modes = jo.at("max_modes").get<std::size_t>();
    codec.opts_.weight_threshold = jo.at("weight_threshold").get<double>();
    codec.opts_.em_tol = jo.at("em_tol").get<double>();
    codec.opts_.em_max_iters = jo.at("em_max_iters").get<std::size_t>();
    codec.opts_.std_floor = jo.at("std_floor").get<double>();
    codec.opts_.merge_tol = jo.at("merge_tol").get<double>();
    for (const auto& jc : j.at("columns")) {
      ColumnEncoder e;
      e.spec.name = jc.at("name").get<std::string>();
      std::string kind = jc.at("kind").get<std::string>();
      if (kind == "categorical") {
        e.spec.kind = ColumnKind::Categorical;
        for (const auto& v : jc.at("categories"))
          e.spec.categories.push_back(v.get<std::string>());
      } else {
        e.spec.kind =
            kind == "mixed" ? ColumnKind::Mixed : ColumnKind::Continuous;
        if (e.spec.kind == ColumnKind::Mixed)
          for (const auto& v : jc.at("special_values"))
            e.spec.special_values.push_back(v.get<double>());
        const auto& jg = jc.at("gmm");
        e.gmm.weights = jg.at("weights").get<std::vector<double>>();
        e.gmm.means = jg.at("means").get<std::vector<double>>();
        e.gmm.stds = jg.at("stds").get<std::vector<double>>();
        for (int a : jg.at("active").get<std::vector<int>>())
          e.gmm.active_modes.push_back(a != 0);
      }
      codec.encoders_.push_back(std::move(e));
    }
    codec.rebuild_layout();
    return codec;
  }

 private:
  static bool is_special(const ColumnSpec& spec, double v) {
    for (double s : spec.special_values)
      if (v == s) return true;
    return false;
  }
  static std::size_t special_slot(const ColumnSpec& spec, double v) {
    for (std::size_t i = 0; i < spec.special_values.size(); ++i)
      if (spec.special_values[i] == v) return i;
    fail<ValidationError>("value is not a declared special value");
  }
  static std::size_t argmax_span(const Tensor2& m, std::size_t r,
                                 const LayoutPart& part) {
    std::size_t best = 0;
    double bv = m.at(r, part.offset);
    for (std::size_t i = 1; i < part.width; ++i) {
      double v = m.at(r, part.offset + i);
      if (v > bv) {
        bv = v;
        best = i;
      }
    }
    return best;
  }

  void rebuild_layout() {
    layout_ = EncodedLayout{};
    std::size_t off = 0;
    for (const auto& e : encoders_) {
      if (e.spec.kind == ColumnKind::Categorical) {
        layout_.parts.push_back(
            {e.spec.name, SpanKind::OneHot, off, e.spec.categories.size()});
        off += e.spec.categories.size();
      } else {
        layout_.parts.push_back({e.spec.name, SpanKind::Scalar, off, 1});
        off += 1;
        std::size_t hot = e.gmm.n_active() + (e.spec.kind == ColumnKind::Mixed
                                                  ? e.spec.special_values.size()
                                                  : 0);
        layout_.parts.push_back({e.spec.name, SpanKind::OneHot, off, hot});
        off += hot;
      }
    }
    layout_.total_width = off;
  }

  EncoderOptions opts_;
  std::vector<ColumnEncoder> encoders_;
  EncodedLayout layout_;
};

}  // namespace gtv

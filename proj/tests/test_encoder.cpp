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

#include <catch2/catch_amalgamated.hpp>

#include "gtv/encoder.hpp"
#include "support/test_util.hpp"

using namespace gtv;
using namespace gtv_test;

namespace {

// Test-side reference fit: k-means++ seeding and a plain EM loop, written
// independently of the production code path. Used to pin the bimodal
// expectations before asserting on the production fitter.
struct RefGmm {
  std::vector<double> w, mu, sd;
};

RefGmm reference_em(const std::vector<double>& xs, std::size_t k,
                    std::uint64_t seed) {
  auto rng = derived_stream(seed, "ref.em");
  RefGmm g;
  g.mu.push_back(xs[rng.uniform_below(xs.size())]);
  while (g.mu.size() < k) {
    std::vector<double> d2(xs.size());
    double total = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double best = 1e300;
      for (double c : g.mu) best = std::min(best, (xs[i] - c) * (xs[i] - c));
      d2[i] = best;
      total += best;
    }
    double r = rng.uniform() * total, acc = 0;
    std::size_t pick = xs.size() - 1;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      acc += d2[i];
      if (r < acc) {
        pick = i;
        break;
      }
    }
    g.mu.push_back(xs[pick]);
  }
  g.w.assign(k, 1.0 / double(k));
  g.sd.assign(k, 1.0);
  std::vector<double> resp(xs.size() * k);
  for (int iter = 0; iter < 300; ++iter) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double norm = 0;
      for (std::size_t j = 0; j < k; ++j) {
        double z = (xs[i] - g.mu[j]) / g.sd[j];
        resp[i * k + j] =
            g.w[j] * std::exp(-0.5 * z * z) / (g.sd[j] * 2.5066282746310002);
        norm += resp[i * k + j];
      }
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] /= norm;
    }
    for (std::size_t j = 0; j < k; ++j) {
      double nk = 0, sx = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        nk += resp[i * k + j];
        sx += resp[i * k + j] * xs[i];
      }
      g.w[j] = nk / double(xs.size());
      g.mu[j] = sx / nk;
      double sv = 0;
      for (std::size_t i = 0; i < xs.size(); ++i)
        sv += resp[i * k + j] * (xs[i] - g.mu[j]) * (xs[i] - g.mu[j]);
      g.sd[j] = std::max(std::sqrt(sv / nk), 1e-4);
    }
  }
  return g;
}

std::vector<double> bimodal_sample(std::size_t n, std::uint64_t seed) {
  auto rng = derived_stream(seed, "bimodal");
  std::vector<double> xs;
  for (std::size_t i = 0; i < n / 2; ++i) xs.push_back(rng.normal());
  for (std::size_t i = 0; i < n - n / 2; ++i)
    xs.push_back(10.0 + rng.normal());
  return xs;
}

}  // namespace

TEST_CASE("fit_gmm on a constant column keeps one floored mode") {
  EncoderOptions opts;
  std::vector<double> xs(50, 3.25);
  auto g = fit_gmm(xs, 10, opts, 1);
  REQUIRE(g.n_active() == 1);
  std::size_t j = g.active_indices()[0];
  REQUIRE(g.means[j] == Catch::Approx(3.25).margin(1e-12));
  REQUIRE(g.stds[j] == Catch::Approx(opts.std_floor));
}

TEST_CASE("fit_gmm recovers the two modes of a bimodal sample") {
  auto xs = bimodal_sample(10000, 7);

  // oracle first: the reference EM's mixture mass concentrates at two
  // centers within 0.3 of {0, 10} (weighted mean of components on each
  // side of the midpoint)
  auto ref = reference_em(xs, 10, 7);
  {
    double lo_w = 0, lo_m = 0, hi_w = 0, hi_m = 0;
    for (std::size_t j = 0; j < ref.w.size(); ++j) {
      if (ref.mu[j] < 5.0) {
        lo_w += ref.w[j];
        lo_m += ref.w[j] * ref.mu[j];
      } else {
        hi_w += ref.w[j];
        hi_m += ref.w[j] * ref.mu[j];
      }
    }
    REQUIRE(lo_w == Catch::Approx(0.5).margin(0.05));
    REQUIRE(std::abs(lo_m / lo_w - 0.0) < 0.3);
    REQUIRE(std::abs(hi_m / hi_w - 10.0) < 0.3);
  }

  EncoderOptions opts;
  auto g = fit_gmm(xs, 10, opts, 7);
  REQUIRE(g.n_active() == 2);
  auto act = g.active_indices();
  double m0 = std::min(g.means[act[0]], g.means[act[1]]);
  double m1 = std::max(g.means[act[0]], g.means[act[1]]);
  REQUIRE(std::abs(m0 - 0.0) < 0.3);
  REQUIRE(std::abs(m1 - 10.0) < 0.3);
  REQUIRE(g.weights[act[0]] == Catch::Approx(0.5).margin(0.05));
}

TEST_CASE("fit_gmm with one mode matches the closed-form MLE") {
  auto rng = derived_stream(3, "mle");
  std::vector<double> xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(5.0 + 2.0 * rng.normal());
  // oracle: single-Gaussian maximum likelihood in closed form
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= double(xs.size());

  EncoderOptions opts;
  auto g = fit_gmm(xs, 1, opts, 3);
  REQUIRE(g.n_active() == 1);
  REQUIRE(g.means[0] == Catch::Approx(mean).margin(1e-6));
  REQUIRE(g.stds[0] == Catch::Approx(std::sqrt(var)).margin(1e-6));
}

TEST_CASE("fit_gmm rejects bad input") {
  EncoderOptions opts;
  REQUIRE_THROWS_AS(fit_gmm({}, 4, opts, 1), ValidationError);
  REQUIRE_THROWS_AS(fit_gmm({1.0, std::nan("")}, 2, opts, 1), NumericError);
}

TEST_CASE("EM log-likelihood is non-decreasing across iterations") {
  auto xs = bimodal_sample(2000, 21);
  EncoderOptions opts;
  opts.em_tol = 0.0;  // run the full iteration budget
  auto g = fit_gmm(xs, 6, opts, 21);
  REQUIRE(g.em_loglik.size() >= 3);
  for (std::size_t i = 1; i < g.em_loglik.size(); ++i)
    REQUIRE(g.em_loglik[i] >= g.em_loglik[i - 1] - 1e-10);
}

TEST_CASE("encode produces one-hot categoricals") {
  TableSchema s;
  s.columns.push_back({"c", ColumnKind::Categorical, {"A", "B", "C"}, {}});
  RawTable t;
  t.schema = s;
  t.rows.push_back({Cell{std::string("B")}});
  t.row_ids = {0};
  auto codec = TableCodec::fit(t, EncoderOptions{}, 1);
  auto enc = codec.encode(t, 1);
  REQUIRE(enc.matrix.cols == 3);
  REQUIRE(enc.matrix.at(0, 0) == 0.0);
  REQUIRE(enc.matrix.at(0, 1) == 1.0);
  REQUIRE(enc.matrix.at(0, 2) == 0.0);
}

TEST_CASE("encode centers and clamps continuous scalars") {
  // a tight cluster at 5 forces a single mode with mean ~5
  TableSchema s;
  s.columns.push_back({"v", ColumnKind::Continuous, {}, {}});
  RawTable t;
  t.schema = s;
  auto rng = derived_stream(5, "cluster");
  for (int i = 0; i < 500; ++i) {
    t.rows.push_back({Cell{5.0 + 2.0 * rng.normal()}});
    t.row_ids.push_back(i);
  }
  auto codec = TableCodec::fit(t, EncoderOptions{}, 5);
  const auto& g = codec.encoders()[0].gmm;
  REQUIRE(g.n_active() == 1);
  std::size_t m = g.active_indices()[0];

  RawTable probe;
  probe.schema = s;
  probe.rows.push_back({Cell{g.means[m]}});
  probe.rows.push_back({Cell{g.means[m] + 100.0}});  // far right: clamps
  probe.row_ids = {0, 1};
  auto enc = codec.encode(probe, 5);
  REQUIRE(enc.matrix.at(0, 0) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(enc.matrix.at(1, 0) == 1.0);
  // hand check of the scaling rule on a known value
  double x = g.means[m] + 2.0 * g.stds[m];
  probe.rows[0][0] = Cell{x};
  auto enc2 = codec.encode(probe, 5);
  REQUIRE(enc2.matrix.at(0, 0) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("decode argmaxes soft one-hot spans") {
  TableSchema s;
  s.columns.push_back({"c", ColumnKind::Categorical, {"A", "B", "C"}, {}});
  RawTable t;
  t.schema = s;
  t.rows.push_back({Cell{std::string("A")}});
  t.row_ids = {0};
  auto codec = TableCodec::fit(t, EncoderOptions{}, 1);
  Tensor2 soft(1, 3);
  soft.at(0, 0) = 0.2;
  soft.at(0, 1) = 0.7;
  soft.at(0, 2) = 0.1;
  auto out = codec.decode(soft);
  REQUIRE(cat(out.rows[0][0]) == "B");
}

TEST_CASE("decode rejects width mismatches") {
  auto t = random_table(50, 2);
  auto codec = TableCodec::fit(t, EncoderOptions{}, 2);
  Tensor2 wrong(1, codec.layout().total_width + 1);
  REQUIRE_THROWS_AS(codec.decode(wrong), ShapeError);
}

TEST_CASE("encode rejects unseen categories") {
  TableSchema s;
  s.columns.push_back({"c", ColumnKind::Categorical, {"A", "B"}, {}});
  RawTable t;
  t.schema = s;
  t.rows.push_back({Cell{std::string("A")}});
  t.row_ids = {0};
  auto codec = TableCodec::fit(t, EncoderOptions{}, 1);
  RawTable probe = t;
  probe.rows[0][0] = Cell{std::string("C")};
  probe.schema.columns[0].categories.push_back("C");
  REQUIRE_THROWS_AS(codec.encode(probe, 1), ValidationError);
}

TEST_CASE("round trip: decode(encode(T)) recovers the table") {
  auto t = random_table(800, 11);
  auto codec = TableCodec::fit(t, EncoderOptions{}, 11);
  auto enc = codec.encode(t, 11);

  // encoded invariants: widths add up, one-hot spans are exact, scalars
  // within [-1, 1]
  std::size_t width = 0;
  for (const auto& p : codec.layout().parts) width += p.width;
  REQUIRE(width == enc.matrix.cols);
  for (const auto& p : codec.layout().parts) {
    for (std::size_t r = 0; r < enc.matrix.rows; ++r) {
      if (p.kind == SpanKind::OneHot) {
        double sum = 0;
        for (std::size_t i = 0; i < p.width; ++i) {
          double v = enc.matrix.at(r, p.offset + i);
          REQUIRE((v == 0.0 || v == 1.0));
          sum += v;
        }
        REQUIRE(sum == 1.0);
      } else {
        REQUIRE(std::abs(enc.matrix.at(r, p.offset)) <= 1.0);
      }
    }
  }

  auto back = codec.decode(enc.matrix);
  std::size_t clamped = 0;
  for (std::size_t r = 0; r < t.n_rows(); ++r)
    for (std::size_t c = 0; c < t.n_cols(); ++c) {
      const auto& spec = t.schema.columns[c];
      if (spec.kind == ColumnKind::Categorical) {
        REQUIRE(cat(back.rows[r][c]) == cat(t.rows[r][c]));
      } else {
        double orig = num(t.rows[r][c]);
        double rec = num(back.rows[r][c]);
        bool special =
            spec.kind == ColumnKind::Mixed &&
            std::find(spec.special_values.begin(), spec.special_values.end(),
                      orig) != spec.special_values.end();
        if (special) {
          REQUIRE(rec == orig);
        } else if (std::abs(rec - orig) >
                   1e-9 * std::max(1.0, std::abs(orig))) {
          // only values beyond 4 std of their sampled mode may disagree
          // (their scalar clamped at the encoding boundary)
          ++clamped;
        }
      }
    }
  // the fixture keeps almost all mass within 4 std of a mode
  REQUIRE(clamped < t.n_rows() / 50);
}

TEST_CASE("mixed columns give special values their own slots") {
  TableSchema s;
  s.columns.push_back({"m", ColumnKind::Mixed, {}, {-1.0}});
  RawTable t;
  t.schema = s;
  auto rng = derived_stream(9, "mixed");
  for (int i = 0; i < 200; ++i)
    t.rows.push_back(
        {Cell{i % 4 == 0 ? -1.0 : 6.0 + rng.normal()}});
  t.row_ids.resize(200);
  auto codec = TableCodec::fit(t, EncoderOptions{}, 9);
  auto enc = codec.encode(t, 9);
  const auto& onehot = codec.layout().parts[1];
  std::size_t active = codec.encoders()[0].gmm.n_active();
  REQUIRE(onehot.width == active + 1);
  // row 0 holds the special value: scalar 0, special slot set
  REQUIRE(enc.matrix.at(0, 0) == 0.0);
  REQUIRE(enc.matrix.at(0, onehot.offset + active) == 1.0);
  auto back = codec.decode(enc.matrix);
  REQUIRE(num(back.rows[0][0]) == -1.0);
}

TEST_CASE("codec serializes to JSON and back") {
  auto t = random_table(300, 13);
  auto codec = TableCodec::fit(t, EncoderOptions{}, 13);
  auto j = codec.to_json();
  auto codec2 = TableCodec::from_json(j);
  auto enc1 = codec.encode(t, 99);
  auto enc2 = codec2.encode(t, 99);
  REQUIRE(enc1.matrix.data == enc2.matrix.data);
}

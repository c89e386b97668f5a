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

#include "gtv/conditioning.hpp"
#include "gtv/gradcheck.hpp"
#include "gtv/model.hpp"
#include "gtv/stats.hpp"
#include "support/test_util.hpp"

using namespace gtv;
using namespace gtv_test;

TEST_CASE("ratio vector reflects per-client column counts") {
  ColumnAssignment a;
  a.client_columns = {{"a", "b"}, {"c", "d"}};
  REQUIRE(compute_ratio_vector(a).weights ==
          std::vector<double>{0.5, 0.5});

  ColumnAssignment b;
  b.client_columns = {{"a", "b", "c", "d", "e", "f", "g", "h", "i"}, {"j"}};
  auto rv = compute_ratio_vector(b);
  REQUIRE(rv.weights[0] == Catch::Approx(0.9));
  REQUIRE(rv.weights[1] == Catch::Approx(0.1));

  ColumnAssignment c;
  c.client_columns = {{"a"}};
  REQUIRE(compute_ratio_vector(c).weights == std::vector<double>{1.0});

  ColumnAssignment d;
  d.client_columns = {{"a"}, {}};
  REQUIRE_THROWS_AS(compute_ratio_vector(d), ValidationError);
}

TEST_CASE("cv layout covers all categorical columns with disjoint spans") {
  auto f = toy_two_client_fixture();
  auto layout = build_cv_layout(f.schema, f.assignment);
  REQUIRE(layout.width == 4);
  REQUIRE(layout.spans.size() == 2);
  REQUIRE(layout.spans[0].client == 0);
  REQUIRE(layout.spans[0].offset == 0);
  REQUIRE(layout.spans[1].client == 1);
  REQUIRE(layout.spans[1].offset == 2);
  auto [span, category] = layout.locate_bit(3);
  REQUIRE(span == 1);
  REQUIRE(category == 1);
}

TEST_CASE("mixed-column categorical parts stay out of the cv") {
  TableSchema s;
  s.columns.push_back({"m", ColumnKind::Mixed, {}, {0.0}});
  s.columns.push_back({"c", ColumnKind::Categorical, {"x", "y"}, {}});
  ColumnAssignment a;
  a.client_columns = {{"m"}, {"c"}};
  auto layout = build_cv_layout(s, a);
  REQUIRE(layout.width == 2);
  REQUIRE(layout.spans.size() == 1);
  REQUIRE(layout.spans[0].client == 1);
}

TEST_CASE("every cv row has one bit inside the contributor span and a "
          "matching real row") {
  auto f = toy_two_client_fixture();
  auto layout = build_cv_layout(f.schema, f.assignment);
  auto parts = split_columns(f.table, f.assignment);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto draw = generate_cv(parts, layout, compute_ratio_vector(f.assignment),
                            16, seed);
    for (std::size_t r = 0; r < 16; ++r) {
      int set_bits = 0;
      std::size_t bit = 0;
      for (std::size_t c = 0; c < layout.width; ++c)
        if (draw.cv.at(r, c) != 0.0) {
          ++set_bits;
          bit = c;
        }
      REQUIRE(set_bits == 1);
      auto [span_idx, category] = layout.locate_bit(bit);
      const auto& span = layout.spans[span_idx];
      REQUIRE(span.client == draw.contributor);
      // the indexed row really holds the indicated category
      const RawTable& t = parts[draw.contributor];
      std::size_t col = t.schema.column_index(span.column);
      REQUIRE(cat(t.rows[draw.idx[r]][col]) ==
              t.schema.columns[col].categories[category]);
    }
  }
}

TEST_CASE("log1p turns count e-1 into weight exactly 1") {
  // the log-frequency rule uses log(1 + count)
  REQUIRE(std::log1p(std::exp(1.0) - 1.0) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(std::log1p(std::exp(2.0) - 1.0) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("category draws follow normalized log(1+count) weights") {
  // counts 99 vs 1 in one column
  TableSchema s;
  s.columns.push_back({"c", ColumnKind::Categorical, {"A", "B"}, {}});
  RawTable t;
  t.schema = s;
  for (int i = 0; i < 100; ++i) {
    t.rows.push_back({Cell{std::string(i < 99 ? "A" : "B")}});
    t.row_ids.push_back(i);
  }
  auto ci = CategoryIndex::build(t);
  CvLayout layout;
  layout.spans.push_back({0, "c", 2, 0});
  layout.width = 2;

  auto rng = derived_stream(77, "draws");
  std::vector<std::size_t> counts(2, 0);
  const std::size_t n_draws = 10000;
  auto draw = generate_cv_for_client(ci, layout, 0, n_draws, rng);
  for (std::size_t r = 0; r < n_draws; ++r)
    counts[draw.chosen_category[r]] += 1;

  double wa = std::log1p(99.0), wb = std::log1p(1.0);
  std::vector<double> expected{wa / (wa + wb), wb / (wa + wb)};
  auto res = chi2_test(counts, expected);
  REQUIRE(res.p_value > 0.01);
}

TEST_CASE("zero-count categories are never drawn") {
  TableSchema s;
  s.columns.push_back({"c", ColumnKind::Categorical, {"A", "B", "C"}, {}});
  RawTable t;
  t.schema = s;
  for (int i = 0; i < 40; ++i) {
    t.rows.push_back({Cell{std::string(i % 2 ? "A" : "B")}});
    t.row_ids.push_back(i);
  }
  auto ci = CategoryIndex::build(t);
  CvLayout layout;
  layout.spans.push_back({0, "c", 3, 0});
  layout.width = 3;
  auto rng = derived_stream(5, "draws");
  auto draw = generate_cv_for_client(ci, layout, 0, 500, rng);
  for (std::size_t r = 0; r < 500; ++r) REQUIRE(draw.chosen_category[r] != 2);
}

TEST_CASE("contributor selection renormalizes over categorical owners") {
  // client 1 has no categorical column: its mass redistributes
  TableSchema s;
  s.columns.push_back({"g", ColumnKind::Categorical, {"x", "y"}, {}});
  s.columns.push_back({"v", ColumnKind::Continuous, {}, {}});
  s.columns.push_back({"h", ColumnKind::Categorical, {"p", "q"}, {}});
  ColumnAssignment a;
  a.client_columns = {{"g"}, {"v"}, {"h"}};
  auto layout = build_cv_layout(s, a);
  auto ratios = compute_ratio_vector(a);

  std::vector<std::size_t> picks(3, 0);
  for (int i = 0; i < 3000; ++i) {
    auto rng = derived_stream(900 + i, "pick");
    picks[pick_cv_contributor(ratios, layout, rng)] += 1;
  }
  REQUIRE(picks[1] == 0);
  auto res = chi2_test({picks[0], picks[2]}, {0.5, 0.5});
  REQUIRE(res.p_value > 0.01);
}

TEST_CASE("conditioning without any categorical column is an error") {
  TableSchema s;
  s.columns.push_back({"v", ColumnKind::Continuous, {}, {}});
  ColumnAssignment a;
  a.client_columns = {{"v"}};
  auto layout = build_cv_layout(s, a);
  auto ratios = compute_ratio_vector(a);
  auto rng = derived_stream(1, "pick");
  REQUIRE_THROWS_AS(pick_cv_contributor(ratios, layout, rng),
                    ValidationError);
}

TEST_CASE("contributor frequencies match the renormalized ratio vector") {
  auto f = toy_two_client_fixture();
  // widen client 0 to 3 columns so P_r = [0.75, 0.25]
  TableSchema s = f.schema;
  s.columns.push_back({"v1", ColumnKind::Continuous, {}, {}});
  s.columns.push_back({"v2", ColumnKind::Continuous, {}, {}});
  ColumnAssignment a;
  a.client_columns = {{"gender", "v1", "v2"}, {"loan"}};
  auto layout = build_cv_layout(s, a);
  auto ratios = compute_ratio_vector(a);
  std::vector<std::size_t> picks(2, 0);
  for (int i = 0; i < 4000; ++i) {
    auto rng = derived_stream(31 + i, "pick");
    picks[pick_cv_contributor(ratios, layout, rng)] += 1;
  }
  auto res = chi2_test(picks, {0.75, 0.25});
  REQUIRE(res.p_value > 0.01);
}

TEST_CASE("cv filter embeds the conditional batch") {
  NetHyper hp;
  Net filter = build_cv_filter(4, hp);
  // zero weights: zero embedding
  Tensor2 cv(3, 4);
  cv.at(0, 1) = 1.0;
  cv.at(1, 1) = 1.0;
  cv.at(2, 3) = 1.0;
  auto rng = derived_stream(0, "unused");
  Tensor2 emb = filter.forward(cv, Mode::Train, rng);
  for (double v : emb.data) REQUIRE(v == 0.0);

  auto ir = derived_stream(9, "init");
  filter.init_params(ir);
  Tensor2 emb2 = filter.forward(cv, Mode::Train, rng);
  REQUIRE(emb2.cols == 4);
  // identical cv rows map to identical embeddings
  for (std::size_t c = 0; c < 4; ++c)
    REQUIRE(emb2.at(0, c) == emb2.at(1, c));

  auto res = finite_difference_check(filter, cv, 41);
  REQUIRE(res.max_param_rel_err < 1e-4);
  REQUIRE(res.max_input_rel_err < 1e-4);
}

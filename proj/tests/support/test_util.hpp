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

#include <sstream>
#include <string>

#include "gtv/rng.hpp"
#include "gtv/table.hpp"

namespace gtv_test {

using namespace gtv;

inline TableSchema two_col_schema() {
  TableSchema s;
  s.columns.push_back({"color", ColumnKind::Categorical, {"A", "B"}, {}});
  s.columns.push_back({"value", ColumnKind::Continuous, {}, {}});
  return s;
}

inline RawTable table_from_csv(const std::string& csv,
                               const TableSchema& schema) {
  std::istringstream in(csv);
  return load_table(in, schema);
}

/// The six-row, two-client toy: one binary column per client, category
/// ratios 1:1 and 1:2.
struct ToyFixture {
  TableSchema schema;
  RawTable table;
  ColumnAssignment assignment;
};

inline ToyFixture toy_two_client_fixture() {
  ToyFixture f;
  f.schema.columns.push_back(
      {"gender", ColumnKind::Categorical, {"male", "female"}, {}});
  f.schema.columns.push_back(
      {"loan", ColumnKind::Categorical, {"yes", "no"}, {}});
  f.table.schema = f.schema;
  const char* genders[6] = {"male", "male", "male", "female", "female",
                            "female"};
  const char* loans[6] = {"yes", "yes", "no", "no", "no", "no"};
  for (int i = 0; i < 6; ++i) {
    f.table.rows.push_back(
        {Cell{std::string(genders[i])}, Cell{std::string(loans[i])}});
    f.table.row_ids.push_back(static_cast<std::uint32_t>(i));
  }
  f.assignment.client_columns = {{"gender"}, {"loan"}};
  return f;
}

/// Random mixed-kind table for round-trip and metric tests.
inline RawTable random_table(std::size_t n_rows, std::uint64_t seed) {
  TableSchema s;
  s.columns.push_back({"cat3", ColumnKind::Categorical, {"a", "b", "c"}, {}});
  s.columns.push_back({"gauss", ColumnKind::Continuous, {}, {}});
  s.columns.push_back({"bimodal", ColumnKind::Continuous, {}, {}});
  s.columns.push_back({"mix", ColumnKind::Mixed, {}, {-1.0}});
  RawTable t;
  t.schema = s;
  auto rng = derived_stream(seed, "random_table");
  for (std::size_t i = 0; i < n_rows; ++i) {
    const char* cats[3] = {"a", "b", "c"};
    std::string c = cats[rng.uniform_below(3)];
    double g = 2.0 + 0.7 * rng.normal();
    double bi = rng.uniform() < 0.4 ? rng.normal() : 8.0 + rng.normal();
    double mx = rng.uniform() < 0.3 ? -1.0 : 3.0 + rng.normal();
    t.rows.push_back({Cell{c}, Cell{g}, Cell{bi}, Cell{mx}});
    t.row_ids.push_back(static_cast<std::uint32_t>(i));
  }
  return t;
}

}  // namespace gtv_test

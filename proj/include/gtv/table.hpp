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
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gtv/common.hpp"
#include "gtv/rng.hpp"

namespace gtv {

using json = nlohmann::json;

enum class ColumnKind { Categorical, Continuous, Mixed };

inline const char* to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Continuous: return "continuous";
    case ColumnKind::Mixed: return "mixed";
  }
  return "?";
}

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  std::vector<std::string> categories;        // categorical only
  std::vector<double> special_values;         // mixed only
};

/// Typed description of a table: ordered columns plus an optional
/// classification target. Loaded from a JSON sidecar next to the CSV.
struct TableSchema {
  std::vector<ColumnSpec> columns;
  std::optional<std::string> target_column;

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].name == name) return i;
    fail<ValidationError>("schema has no column named '", name, "'");
  }
  bool has_column(const std::string& name) const {
    for (const auto& c : columns)
      if (c.name == name) return true;
    return false;
  }

  void validate() const {
    require<ValidationError>(!columns.empty(), "schema has no columns");
    std::set<std::string> seen;
    for (const auto& c : columns) {
      require<ValidationError>(seen.insert(c.name).second,
                               "duplicate column name '", c.name, "'");
      if (c.kind == ColumnKind::Categorical)
        require<ValidationError>(c.categories.size() >= 2, "column '", c.name,
                                 "' needs >=2 categories");
      if (c.kind == ColumnKind::Mixed)
        require<ValidationError>(!c.special_values.empty(), "mixed column '",
                                 c.name, "' declares no special values");
    }
    if (target_column)
      require<ValidationError>(has_column(*target_column),
                               "target column '", *target_column,
                               "' not in schema");
  }
};

/// Cell: category label for categorical columns, number otherwise.
using Cell = std::variant<std::string, double>;

inline double num(const Cell& c) { return std::get<double>(c); }
inline const std::string& cat(const Cell& c) { return std::get<std::string>(c); }

struct RawTable {
  TableSchema schema;
  std::vector<std::vector<Cell>> rows;
  std::vector<std::uint32_t> row_ids;

  std::size_t n_rows() const { return rows.size(); }
  std::size_t n_cols() const { return schema.columns.size(); }
};

/// Per-client column ownership. Lists are disjoint and jointly cover the
/// schema; every client holds at least one column.
struct ColumnAssignment {
  std::vector<std::vector<std::string>> client_columns;

  std::size_t n_clients() const { return client_columns.size(); }

  void validate(const TableSchema& schema) const {
    require<ValidationError>(!client_columns.empty(), "assignment is empty");
    std::set<std::string> seen;
    std::size_t total = 0;
    for (std::size_t i = 0; i < client_columns.size(); ++i) {
      require<ValidationError>(!client_columns[i].empty(), "client ", i,
                               " holds no columns");
      for (const auto& name : client_columns[i]) {
        require<ValidationError>(schema.has_column(name), "assignment names '",
                                 name, "' which is not in the schema");
        require<ValidationError>(seen.insert(name).second, "column '", name,
                                 "' assigned twice");
        ++total;
      }
    }
    require<ValidationError>(total == schema.columns.size(),
                             "assignment covers ", total, " of ",
                             schema.columns.size(), " columns");
  }

  /// Owning client of a column.
  std::size_t client_of(const std::string& name) const {
    for (std::size_t i = 0; i < client_columns.size(); ++i)
      for (const auto& n : client_columns[i])
        if (n == name) return i;
    fail<ValidationError>("column '", name, "' not assigned to any client");
  }
};

/// Shared shuffle state. Identical at every client; the seed never enters
/// a protocol message and the server never holds it.
struct ShuffleState {
  std::uint64_t shared_seed = 0;
  std::uint64_t round_counter = 0;

  std::vector<std::uint32_t> permutation(std::size_t n) const {
    auto rng = derived_stream(shared_seed, "shuffle", round_counter);
    return rng.permutation(n);
  }
};

// ---------------------------------------------------------------------------
// schema JSON sidecar
// ---------------------------------------------------------------------------

inline TableSchema schema_from_json(const json& j) {
  TableSchema s;
  require<ParseError>(j.contains("columns") && j["columns"].is_array(),
                      "schema JSON needs a 'columns' array");
  for (const auto& jc : j["columns"]) {
    ColumnSpec c;
    c.name = jc.at("name").get<std::string>();
    std::string kind = jc.at("kind").get<std::string>();
    if (kind == "categorical") {
      c.kind = ColumnKind::Categorical;
      for (const auto& v : jc.at("categories"))
        c.categories.push_back(v.get<std::string>());
    } else if (kind == "continuous") {
      c.kind = ColumnKind::Continuous;
    } else if (kind == "mixed") {
      c.kind = ColumnKind::Mixed;
      for (const auto& v : jc.at("mixed_categorical_values"))
        c.special_values.push_back(v.get<double>());
    } else {
      fail<ParseError>("unknown column kind '", kind, "'");
    }
    s.columns.push_back(std::move(c));
  }
  if (j.contains("target") && !j["target"].is_null())
    s.target_column = j["target"].get<std::string>();
  s.validate();
  return s;
}

inline json schema_to_json(const TableSchema& s) {
  json cols = json::array();
  for (const auto& c : s.columns) {
    json jc{{"name", c.name}, {"kind", to_string(c.kind)}};
    if (c.kind == ColumnKind::Categorical) jc["categories"] = c.categories;
    if (c.kind == ColumnKind::Mixed)
      jc["mixed_categorical_values"] = c.special_values;
    cols.push_back(jc);
  }
  json j{{"columns", cols}};
  if (s.target_column) j["target"] = *s.target_column;
  return j;
}

inline TableSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  require<ParseError>(in.good(), "cannot open schema file '", path, "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail<ParseError>("schema JSON parse failed: ", e.what());
  }
  return schema_from_json(j);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  out.push_back(field);
  return out;
}
}  // namespace detail

/// Loads a comma-separated UTF-8 table with a header row. Cells are
/// validated against the schema; rows with missing values are rejected.
inline RawTable load_table(std::istream& in, const TableSchema& schema) {
  schema.validate();
  std::string line;
  require<ParseError>(static_cast<bool>(std::getline(in, line)),
                      "CSV source is empty (no header row)");
  auto header = detail::split_csv_line(line);
  require<ValidationError>(header.size() == schema.columns.size(),
                           "header has ", header.size(), " columns, schema ",
                           schema.columns.size());
  // column order in the file may differ from the schema
  std::vector<std::size_t> file_to_schema(header.size());
  {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < header.size(); ++i) {
      require<ValidationError>(schema.has_column(header[i]),
                               "CSV header column '", header[i],
                               "' missing from schema");
      require<ValidationError>(seen.insert(header[i]).second,
                               "duplicate CSV header column '", header[i], "'");
      file_to_schema[i] = schema.column_index(header[i]);
    }
  }

  RawTable t;
  t.schema = schema;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    require<ParseError>(fields.size() == header.size(), "row ", line_no,
                        " has ", fields.size(), " fields, expected ",
                        header.size());
    std::vector<Cell> row(schema.columns.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto& col = schema.columns[file_to_schema[i]];
      const std::string& f = fields[i];
      require<ValidationError>(!f.empty(), "row ", line_no, ", column '",
                               col.name, "': missing value");
      if (col.kind == ColumnKind::Categorical) {
        bool known = std::find(col.categories.begin(), col.categories.end(),
                               f) != col.categories.end();
        require<ValidationError>(known, "row ", line_no, ", column '",
                                 col.name, "': unknown category '", f, "'");
        row[file_to_schema[i]] = f;
      } else {
        try {
          std::size_t pos = 0;
          double v = std::stod(f, &pos);
          require<ParseError>(pos == f.size(), "trailing characters");
          check_finite(v, "CSV cell");
          row[file_to_schema[i]] = v;
        } catch (const NumericError&) {
          throw;
        } catch (const std::exception&) {
          fail<ParseError>("row ", line_no, ", column '", col.name,
                           "': cannot parse number from '", f, "'");
        }
      }
    }
    t.rows.push_back(std::move(row));
  }
  t.row_ids.resize(t.rows.size());
  for (std::size_t i = 0; i < t.row_ids.size(); ++i)
    t.row_ids[i] = static_cast<std::uint32_t>(i);
  return t;
}

inline RawTable load_table_file(const std::string& path,
                                const TableSchema& schema) {
  std::ifstream in(path);
  require<ParseError>(in.good(), "cannot open CSV file '", path, "'");
  return load_table(in, schema);
}

inline void save_table(const RawTable& t, std::ostream& out) {
  for (std::size_t c = 0; c < t.schema.columns.size(); ++c)
    out << (c ? "," : "") << t.schema.columns[c].name;
  out << "\n";
  out.precision(17);
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ",";
      if (std::holds_alternative<std::string>(row[c]))
        out << cat(row[c]);
      else
        out << num(row[c]);
    }
    out << "\n";
  }
}

inline void save_table_file(const RawTable& t, const std::string& path) {
  std::ofstream out(path);
  require<ParseError>(out.good(), "cannot open '", path, "' for writing");
  save_table(t, out);
}

// ---------------------------------------------------------------------------
// vertical partition and synchronized shuffling
// ---------------------------------------------------------------------------

inline std::vector<RawTable> split_columns(const RawTable& table,
                                           const ColumnAssignment& assignment) {
  assignment.validate(table.schema);
  std::vector<RawTable> out;
  out.reserve(assignment.n_clients());
  for (const auto& names : assignment.client_columns) {
    RawTable part;
    std::vector<std::size_t> src;
    for (const auto& name : names) {
      std::size_t ci = table.schema.column_index(name);
      part.schema.columns.push_back(table.schema.columns[ci]);
      src.push_back(ci);
    }
    if (table.schema.target_column &&
        std::find(names.begin(), names.end(), *table.schema.target_column) !=
            names.end())
      part.schema.target_column = table.schema.target_column;
    part.rows.reserve(table.rows.size());
    for (const auto& row : table.rows) {
      std::vector<Cell> r;
      r.reserve(src.size());
      for (std::size_t ci : src) r.push_back(row[ci]);
      part.rows.push_back(std::move(r));
    }
    part.row_ids = table.row_ids;
    out.push_back(std::move(part));
  }
  return out;
}

template <class Row>
std::vector<Row> apply_permutation(const std::vector<Row>& rows,
                                   const std::vector<std::uint32_t>& perm) {
  std::vector<Row> out;
  out.reserve(rows.size());
  for (std::uint32_t p : perm) out.push_back(rows[p]);
  return out;
}

/// Applies the same seed-derived permutation to every client's rows and
/// row_ids, then advances the round counter. The permutation depends only
/// on (shared_seed, round_counter), so clients need no coordination beyond
/// the initial seed agreement.
inline ShuffleState shuffle_rows(std::vector<RawTable>& tables,
                                 const ShuffleState& state) {
  require<ValidationError>(!tables.empty(), "no tables to shuffle");
  std::size_t n = tables[0].n_rows();
  for (const auto& t : tables)
    require<ValidationError>(t.n_rows() == n,
                             "client tables have unequal row counts");
  auto perm = state.permutation(n);
  for (auto& t : tables) {
    t.rows = apply_permutation(t.rows, perm);
    t.row_ids = apply_permutation(t.row_ids, perm);
  }
  ShuffleState next = state;
  next.round_counter += 1;
  return next;
}

}  // namespace gtv

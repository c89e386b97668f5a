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

#include <map>
#include <set>
#include <string>
#include <vector>

#include "gtv/common.hpp"
#include "gtv/conditioning.hpp"
#include "gtv/messages.hpp"
#include "gtv/table.hpp"

namespace gtv {

// Honest-but-curious server reconstruction. The server legitimately sees,
// per step, which CV bit was requested and which row positions answered it.
// Assuming positions stay fixed, bits whose covered-row sets ever intersect
// must belong to different columns; bits that never collide can share one.
// Rows covered by exactly one bit of a column get a confident cell claim.
// Synchronized shuffling breaks the fixed-position premise, which is exactly
// what the accuracy measurement quantifies.

struct Observation {
  int round = 0;
  std::size_t bit = 0;
  std::vector<std::uint32_t> idx;
};

class ServerView {
 public:
  std::size_t cv_width = 0;
  std::vector<Observation> observations;

  void observe(int round, std::size_t bit,
               const std::vector<std::uint32_t>& idx) {
    observations.push_back({round, bit, idx});
    cv_width = std::max(cv_width, bit + 1);
  }

  /// Builds the view from the message-log entries the server recorded:
  /// only CvAnnounce entries carry (cv, idx) pairs.
  static ServerView from_log(const std::vector<json>& entries) {
    ServerView view;
    for (const auto& e : entries) {
      if (e.at("kind") != "cv_announce") continue;
      if (!e.contains("idx") || !e.contains("cv_bits")) continue;
      auto idx = e.at("idx").get<std::vector<std::uint32_t>>();
      auto bits = e.at("cv_bits").get<std::vector<int>>();
      if (idx.empty()) continue;  // synthesis announces carry no idx
      require<ParseError>(idx.size() == bits.size(),
                          "log entry idx/cv length mismatch");
      int round = e.at("round").get<int>();
      std::map<std::size_t, std::vector<std::uint32_t>> grouped;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        require<ParseError>(bits[k] >= 0, "cv row without a set bit");
        grouped[static_cast<std::size_t>(bits[k])].push_back(idx[k]);
      }
      for (auto& [bit, rows] : grouped) view.observe(round, bit, rows);
      if (e.contains("cv_width"))
        view.cv_width =
            std::max(view.cv_width, e.at("cv_width").get<std::size_t>());
    }
    return view;
  }
};

struct InferredColumn {
  std::vector<std::size_t> bits;
  // row -> covering bit; conflicting rows are recorded as kConflict
  std::map<std::uint32_t, std::size_t> assignment;
  std::set<std::uint32_t> conflicted;
  std::map<std::size_t, std::size_t> covered_counts;  // bit -> distinct rows

  static constexpr std::size_t kConflict = static_cast<std::size_t>(-1);
};

struct ReconstructionReport {
  std::size_t n_rows = 0;
  std::vector<InferredColumn> columns;

  std::size_t confident_cells() const {
    std::size_t n = 0;
    for (const auto& c : columns) n += c.assignment.size();
    return n;
  }
  /// Fraction of (row, inferred column) cells confidently assigned.
  double coverage() const {
    if (columns.empty() || n_rows == 0) return 0.0;
    return static_cast<double>(confident_cells()) /
           static_cast<double>(n_rows * columns.size());
  }

  json to_json() const {
    json cols = json::array();
    for (const auto& c : columns) {
      json ratios = json::object();
      for (const auto& [bit, count] : c.covered_counts)
        ratios[std::to_string(bit)] = count;
      json cells = json::object();
      for (const auto& [row, bit] : c.assignment)
        cells[std::to_string(row)] = bit;
      cols.push_back(json{{"bits", c.bits},
                          {"covered_counts", ratios},
                          {"cells", cells},
                          {"conflicts", c.conflicted.size()}});
    }
    return json{{"n_rows", n_rows},
                {"columns", cols},
                {"coverage", coverage()},
                {"confident_cells", confident_cells()}};
  }
};

/// Groups bits into columns and assigns covered rows.
inline ReconstructionReport reconstruct(const ServerView& view,
                                        std::size_t n_rows) {
  ReconstructionReport report;
  report.n_rows = n_rows;
  if (view.observations.empty()) return report;

  std::map<std::size_t, std::set<std::uint32_t>> covered;
  for (const auto& obs : view.observations)
    covered[obs.bit].insert(obs.idx.begin(), obs.idx.end());

  std::vector<std::size_t> bits;
  for (const auto& [bit, rows] : covered) bits.push_back(bit);

  auto collide = [&](std::size_t a, std::size_t b) {
    const auto& ra = covered[a];
    const auto& rb = covered[b];
    const auto& small = ra.size() <= rb.size() ? ra : rb;
    const auto& big = ra.size() <= rb.size() ? rb : ra;
    for (std::uint32_t r : small)
      if (big.count(r)) return true;
    return false;
  };

  // greedy grouping: a bit joins the first column it never collides with
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t bit : bits) {
    bool placed = false;
    for (auto& g : groups) {
      bool ok = true;
      for (std::size_t other : g)
        if (collide(bit, other)) {
          ok = false;
          break;
        }
      if (ok) {
        g.push_back(bit);
        placed = true;
        break;
      }
    }
    if (!placed) groups.push_back({bit});
  }

  for (const auto& g : groups) {
    InferredColumn col;
    col.bits = g;
    std::map<std::uint32_t, std::set<std::size_t>> row_bits;
    for (std::size_t bit : g) {
      col.covered_counts[bit] = covered[bit].size();
      for (std::uint32_t r : covered[bit]) row_bits[r].insert(bit);
    }
    for (const auto& [row, bs] : row_bits) {
      if (bs.size() == 1)
        col.assignment[row] = *bs.begin();
      else
        col.conflicted.insert(row);
    }
    report.columns.push_back(std::move(col));
  }
  return report;
}

struct AccuracyResult {
  std::size_t confident = 0;
  std::size_t matches = 0;
  double coverage = 0.0;
  // accuracy over confident cells; meaningless (0) when confident == 0 —
  // the caller distinguishes by coverage
  double accuracy = 0.0;
};

/// Scores confident claims against ground-truth tables at their current
/// ordering: claim "position r carries bit b" matches when the owning
/// client's table holds that category at position r.
inline AccuracyResult reconstruction_accuracy(
    const ReconstructionReport& report, const CvLayout& layout,
    const std::vector<RawTable>& truth_tables) {
  AccuracyResult res;
  for (const auto& col : report.columns) {
    for (const auto& [row, bit] : col.assignment) {
      auto [span_idx, category] = layout.locate_bit(bit);
      const auto& span = layout.spans[span_idx];
      require<ValidationError>(span.client < truth_tables.size(),
                               "truth tables do not cover client ",
                               span.client);
      const RawTable& t = truth_tables[span.client];
      require<ValidationError>(row < t.n_rows(), "truth table lacks row ",
                               row);
      std::size_t c = t.schema.column_index(span.column);
      const auto& expected =
          t.schema.columns[c].categories.at(category);
      res.confident += 1;
      if (cat(t.rows[row][c]) == expected) res.matches += 1;
    }
  }
  res.coverage = report.coverage();
  res.accuracy = res.confident == 0
                     ? 0.0
                     : static_cast<double>(res.matches) /
                           static_cast<double>(res.confident);
  return res;
}

/// Per-round coverage trajectory (how much of the table the server could
/// claim after each round).
inline std::vector<std::pair<int, double>> coverage_by_round(
    const ServerView& view, std::size_t n_rows) {
  std::vector<std::pair<int, double>> out;
  std::set<int> rounds;
  for (const auto& o : view.observations) rounds.insert(o.round);
  for (int r : rounds) {
    ServerView prefix;
    for (const auto& o : view.observations)
      if (o.round <= r) prefix.observe(o.round, o.bit, o.idx);
    auto report = reconstruct(prefix, n_rows);
    out.emplace_back(r, report.coverage());
  }
  return out;
}

}  // namespace gtv

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
#include <string>
#include <vector>

#include "gtv/common.hpp"
#include "gtv/rng.hpp"
#include "gtv/table.hpp"
#include "gtv/tensor.hpp"

namespace gtv {

// Conditional-vector machinery. One client per round contributes a batch of
// one-hot condition rows plus the positions of real rows carrying the
// indicated category. Mixed columns' categorical parts stay out of the CV;
// only pure categorical columns condition the generator.

/// Per-client feature-count proportions. Drives both contributor selection
/// and proportional shard widths.
struct RatioVector {
  std::vector<double> weights;

  void validate() const {
    double sum = 0.0;
    for (double w : weights) {
      require<ValidationError>(w >= 0.0, "negative ratio weight");
      sum += w;
    }
    require<ValidationError>(std::abs(sum - 1.0) <= 1e-9,
                             "ratio vector sums to ", sum);
  }
};

inline RatioVector compute_ratio_vector(const ColumnAssignment& assignment) {
  RatioVector rv;
  std::size_t total = 0;
  for (const auto& cols : assignment.client_columns) {
    require<ValidationError>(!cols.empty(), "client without columns");
    total += cols.size();
  }
  for (const auto& cols : assignment.client_columns)
    rv.weights.push_back(static_cast<double>(cols.size()) /
                         static_cast<double>(total));
  rv.validate();
  return rv;
}

struct CvSpan {
  std::size_t client = 0;
  std::string column;
  std::size_t n_categories = 0;
  std::size_t offset = 0;  // global bit offset
};

struct CvLayout {
  std::vector<CvSpan> spans;
  std::size_t width = 0;

  std::vector<std::size_t> spans_of_client(std::size_t client) const {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < spans.size(); ++s)
      if (spans[s].client == client) out.push_back(s);
    return out;
  }

  /// Maps a global bit to (span index, category index).
  std::pair<std::size_t, std::size_t> locate_bit(std::size_t bit) const {
    for (std::size_t s = 0; s < spans.size(); ++s)
      if (bit >= spans[s].offset && bit < spans[s].offset + spans[s].n_categories)
        return {s, bit - spans[s].offset};
    fail<ValidationError>("cv bit ", bit, " outside layout");
  }
};

/// Builds the global CV layout: for each client in order, one span per
/// categorical column it owns, in that client's column order.
inline CvLayout build_cv_layout(const TableSchema& schema,
                                const ColumnAssignment& assignment) {
  assignment.validate(schema);
  CvLayout layout;
  std::size_t off = 0;
  for (std::size_t i = 0; i < assignment.n_clients(); ++i) {
    for (const auto& name : assignment.client_columns[i]) {
      const auto& col = schema.columns[schema.column_index(name)];
      if (col.kind != ColumnKind::Categorical) continue;
      layout.spans.push_back({i, name, col.categories.size(), off});
      off += col.categories.size();
    }
  }
  layout.width = off;
  return layout;
}

/// Per-category row positions of one client's table; rebuilt after every
/// shuffle because positions are the protocol's row identity.
class CategoryIndex {
 public:
  CategoryIndex() = default;

  static CategoryIndex build(const RawTable& table) {
    CategoryIndex ci;
    for (std::size_t c = 0; c < table.schema.columns.size(); ++c) {
      const auto& col = table.schema.columns[c];
      if (col.kind != ColumnKind::Categorical) continue;
      ci.columns_.push_back(col.name);
      std::vector<std::vector<std::uint32_t>> per_cat(col.categories.size());
      for (std::size_t r = 0; r < table.n_rows(); ++r) {
        const std::string& v = cat(table.rows[r][c]);
        for (std::size_t k = 0; k < col.categories.size(); ++k)
          if (col.categories[k] == v) {
            per_cat[k].push_back(static_cast<std::uint32_t>(r));
            break;
          }
      }
      ci.rows_.push_back(std::move(per_cat));
    }
    return ci;
  }

  std::size_t n_columns() const { return columns_.size(); }
  const std::string& column_name(std::size_t i) const { return columns_[i]; }
  const std::vector<std::vector<std::uint32_t>>& rows_by_category(
      std::size_t i) const {
    return rows_[i];
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::vector<std::uint32_t>>> rows_;
};

/// One round's conditional batch: one-hot rows inside the contributor's
/// spans, matching row positions, and the per-row (column, category) choice.
struct CvDraw {
  Tensor2 cv;                          // batch × layout width
  std::size_t contributor = 0;
  std::vector<std::uint32_t> idx;      // positions at the contributor
  std::vector<std::size_t> chosen_span;      // span index in the layout
  std::vector<std::size_t> chosen_category;  // category within the span
};

/// Contributor selection: P_r restricted to clients owning at least one
/// categorical column, renormalized.
inline std::size_t pick_cv_contributor(const RatioVector& ratios,
                                       const CvLayout& layout,
                                       RngStream& rng) {
  std::vector<double> weights(ratios.weights.size(), 0.0);
  bool any = false;
  for (const auto& span : layout.spans) {
    weights[span.client] = ratios.weights[span.client];
    any = true;
  }
  require<ValidationError>(any,
                           "no client owns a categorical column; conditional "
                           "vectors are unavailable");
  return rng.categorical(weights);
}

/// The contributor's local draw: per batch row, a uniform categorical column,
/// a category with probability proportional to log(1 + count), and a row
/// position uniform among rows carrying that category. Zero-count categories
/// are never drawn.
inline CvDraw generate_cv_for_client(const CategoryIndex& cat_index,
                                     const CvLayout& layout,
                                     std::size_t client, std::size_t batch,
                                     RngStream& rng) {
  require(batch >= 1, "cv batch must be >= 1");
  auto client_spans = layout.spans_of_client(client);
  require<ValidationError>(!client_spans.empty(), "client ", client,
                           " owns no categorical column");
  require<ValidationError>(cat_index.n_columns() == client_spans.size(),
                           "category index does not match layout");

  CvDraw draw;
  draw.contributor = client;
  draw.cv = Tensor2(batch, layout.width);
  draw.idx.resize(batch);
  draw.chosen_span.resize(batch);
  draw.chosen_category.resize(batch);

  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t local = rng.uniform_below(client_spans.size());
    const auto& span = layout.spans[client_spans[local]];
    const auto& per_cat = cat_index.rows_by_category(local);
    std::vector<double> w(per_cat.size(), 0.0);
    for (std::size_t k = 0; k < per_cat.size(); ++k)
      w[k] = per_cat[k].empty()
                 ? 0.0
                 : std::log1p(static_cast<double>(per_cat[k].size()));
    std::size_t category = rng.categorical(w);
    const auto& rows = per_cat[category];
    std::uint32_t pos = rows[rng.uniform_below(rows.size())];

    draw.cv.at(b, span.offset + category) = 1.0;
    draw.idx[b] = pos;
    draw.chosen_span[b] = client_spans[local];
    draw.chosen_category[b] = category;
  }
  return draw;
}

/// Combined draw matching the per-round protocol semantics: one contributor
/// for the whole batch, then the contributor's local draws.
inline CvDraw generate_cv(const std::vector<RawTable>& tables,
                          const CvLayout& layout, const RatioVector& ratios,
                          std::size_t batch, std::uint64_t seed) {
  RngStream pick = derived_stream(seed, "cv.pick");
  std::size_t p = pick_cv_contributor(ratios, layout, pick);
  auto ci = CategoryIndex::build(tables[p]);
  RngStream rows = derived_stream(seed, "cv.draw", p);
  return generate_cv_for_client(ci, layout, p, batch, rows);
}

}  // namespace gtv

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

#include <cstddef>
#include <string>
#include <vector>

#include "gtv/common.hpp"
#include "gtv/conditioning.hpp"
#include "gtv/tensor.hpp"

namespace gtv {

// The D^{n3}_{n4} G^{n1}_{n2} layout: n1/n3 blocks live on the server, n2/n4
// on each client. Per-level output width is block_dim in total, divided
// proportionally to the clients' feature counts.

struct PartitionConfig {
  std::size_t gen_server_blocks = 2;   // n1
  std::size_t gen_client_blocks = 0;   // n2
  std::size_t disc_server_blocks = 2;  // n3
  std::size_t disc_client_blocks = 0;  // n4
  std::size_t block_dim = 256;

  std::string notation() const {
    return "D" + std::to_string(disc_server_blocks) + "_" +
           std::to_string(disc_client_blocks) + "G" +
           std::to_string(gen_server_blocks) + "_" +
           std::to_string(gen_client_blocks);
  }

  /// The nine two-block partitions used by the experiment matrix.
  bool is_two_block() const {
    return gen_server_blocks + gen_client_blocks == 2 &&
           disc_server_blocks + disc_client_blocks == 2;
  }
};

/// floor(ratio * total) per client, remainder to the lowest-indexed clients.
inline std::vector<std::size_t> proportional_split(std::size_t total,
                                                   const RatioVector& ratios) {
  std::vector<std::size_t> widths(ratios.weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    widths[i] = static_cast<std::size_t>(
        std::floor(ratios.weights[i] * static_cast<double>(total)));
    assigned += widths[i];
  }
  require<ValidationError>(assigned <= total, "rounding overflow");
  std::size_t rem = total - assigned;
  for (std::size_t i = 0; i < widths.size() && rem > 0; ++i, --rem)
    widths[i] += 1;
  return widths;
}

struct PartitionPlan {
  PartitionConfig config;
  RatioVector ratios;
  std::vector<std::size_t> client_share;  // per-client block output width

  std::size_t n_clients() const { return ratios.weights.size(); }
};

inline PartitionPlan plan_partition(const PartitionConfig& config,
                                    const RatioVector& ratios) {
  ratios.validate();
  PartitionPlan plan;
  plan.config = config;
  plan.ratios = ratios;
  plan.client_share = proportional_split(config.block_dim, ratios);
  for (std::size_t i = 0; i < plan.client_share.size(); ++i)
    require<ValidationError>(plan.client_share[i] >= 1, "client ", i,
                             " receives width 0; block_dim ", config.block_dim,
                             " is too small for this ratio vector");
  return plan;
}

/// Contiguous per-client column slices of a server-side tensor.
inline std::vector<Tensor2> split_logits(const Tensor2& tensor,
                                         const std::vector<std::size_t>& widths) {
  std::size_t sum = 0;
  for (std::size_t w : widths) sum += w;
  require<ShapeError>(sum == tensor.cols, "split widths sum to ", sum,
                      " but tensor has ", tensor.cols, " columns");
  std::vector<Tensor2> out;
  std::size_t off = 0;
  for (std::size_t w : widths) {
    out.push_back(col_slice(tensor, off, w));
    off += w;
  }
  return out;
}

/// [piece_1 | ... | piece_N | cv_embedding], fixed client order.
inline Tensor2 concat_logits(const std::vector<Tensor2>& pieces,
                             const Tensor2& cv_embedding) {
  require<ShapeError>(!pieces.empty(), "concat of zero client pieces");
  std::vector<const Tensor2*> parts;
  for (const auto& p : pieces) parts.push_back(&p);
  parts.push_back(&cv_embedding);
  return hconcat(parts);
}

}  // namespace gtv

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

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gtv/nn.hpp"
#include "gtv/partition.hpp"

namespace gtv {

// Shard construction. Generator levels are residual blocks
// (Dense -> BatchNorm -> ReLU, input concatenated or added back);
// discriminator levels are plain Dense -> LeakyReLU -> Dropout stacks.
// The data-facing ends always live on a client: the generator's output
// Dense and the discriminator's first transformation.

enum class ResidualMode { Concat, Add };

struct NetHyper {
  ResidualMode residual = ResidualMode::Concat;
  double leaky_slope = 0.2;
  double dropout_rate = 0.5;
};

namespace model_detail {

inline BlockSpec rn_block(std::size_t in, std::size_t out, ResidualMode mode) {
  BlockSpec b;
  std::size_t dense_out = mode == ResidualMode::Add ? in : out;
  b.layers = {LayerSpec::dense(in, dense_out),
              LayerSpec::batch_norm(dense_out), LayerSpec::relu()};
  b.concat_input = mode == ResidualMode::Concat;
  b.add_input = mode == ResidualMode::Add;
  return b;
}

inline BlockSpec fn_block(std::size_t in, std::size_t out,
                          const NetHyper& hp) {
  BlockSpec b;
  b.layers = {LayerSpec::dense(in, out), LayerSpec::leaky_relu(hp.leaky_slope),
              LayerSpec::dropout(hp.dropout_rate)};
  return b;
}

}  // namespace model_detail

/// G^t: n1 residual blocks at full block width. With n1 = 0 this is the
/// identity and the full Z‖CV goes to every client, keeping the shared-noise
/// coupling that cross-client correlations need.
inline Net build_gen_top(const PartitionPlan& plan, std::size_t z_dim,
                         std::size_t cv_width, const NetHyper& hp) {
  NetSpec spec;
  spec.input_dim = z_dim + cv_width;
  std::size_t w = spec.input_dim;
  for (std::size_t k = 0; k < plan.config.gen_server_blocks; ++k) {
    auto b = model_detail::rn_block(w, plan.config.block_dim, hp.residual);
    spec.blocks.push_back(b);
    w = hp.residual == ResidualMode::Concat ? w + plan.config.block_dim : w;
  }
  return Net(spec);
}

/// Widths each client receives at the generator boundary.
inline std::vector<std::size_t> gen_boundary_widths(const PartitionPlan& plan,
                                                    std::size_t gen_top_out) {
  if (plan.config.gen_server_blocks == 0)
    return std::vector<std::size_t>(plan.n_clients(), gen_top_out);  // broadcast
  return proportional_split(gen_top_out, plan.ratios);
}

/// G^b_i: n2 residual blocks at the client's share width, then the output
/// Dense producing that client's encoded columns.
inline Net build_gen_bottom(const PartitionPlan& plan, std::size_t client,
                            std::size_t boundary_width,
                            std::size_t encoded_width, const NetHyper& hp) {
  NetSpec spec;
  spec.input_dim = boundary_width;
  std::size_t w = boundary_width;
  for (std::size_t k = 0; k < plan.config.gen_client_blocks; ++k) {
    auto b = model_detail::rn_block(w, plan.client_share[client], hp.residual);
    spec.blocks.push_back(b);
    w = hp.residual == ResidualMode::Concat ? w + plan.client_share[client] : w;
  }
  BlockSpec out;
  out.layers = {LayerSpec::dense(w, encoded_width)};
  spec.blocks.push_back(out);
  return Net(spec);
}

/// D^b_i: n4 FN blocks at the client's share width. With n4 = 0 a single
/// Dense -> LeakyReLU embedding stands in so raw encoded rows never leave
/// the client.
inline Net build_disc_bottom(const PartitionPlan& plan, std::size_t client,
                             std::size_t encoded_width, const NetHyper& hp) {
  NetSpec spec;
  spec.input_dim = encoded_width;
  std::size_t w = encoded_width;
  if (plan.config.disc_client_blocks == 0) {
    BlockSpec b;
    b.layers = {LayerSpec::dense(w, plan.client_share[client]),
                LayerSpec::leaky_relu(hp.leaky_slope)};
    spec.blocks.push_back(b);
    return Net(spec);
  }
  for (std::size_t k = 0; k < plan.config.disc_client_blocks; ++k) {
    spec.blocks.push_back(
        model_detail::fn_block(w, plan.client_share[client], hp));
    w = plan.client_share[client];
  }
  return Net(spec);
}

/// D^s: one trainable Dense + LeakyReLU mapping the CV batch to an embedding
/// of the same width.
inline Net build_cv_filter(std::size_t cv_width, const NetHyper& hp) {
  NetSpec spec;
  spec.input_dim = cv_width;
  BlockSpec b;
  b.layers = {LayerSpec::dense(cv_width, cv_width),
              LayerSpec::leaky_relu(hp.leaky_slope)};
  spec.blocks.push_back(b);
  return Net(spec);
}

/// D^t: n3 FN blocks at full block width, ending in the scalar head.
inline Net build_disc_top(const PartitionPlan& plan, std::size_t cv_width,
                          const NetHyper& hp) {
  NetSpec spec;
  spec.input_dim = plan.config.block_dim + cv_width;
  std::size_t w = spec.input_dim;
  for (std::size_t k = 0; k < plan.config.disc_server_blocks; ++k) {
    spec.blocks.push_back(
        model_detail::fn_block(w, plan.config.block_dim, hp));
    w = plan.config.block_dim;
  }
  BlockSpec head;
  head.layers = {LayerSpec::dense(w, 1)};
  spec.blocks.push_back(head);
  return Net(spec);
}

struct ModelShards {
  Net gen_top;
  std::vector<Net> gen_bottoms;
  Net disc_top;
  Net cv_filter;
  std::vector<Net> disc_bottoms;

  AdamState gen_top_opt;
  std::vector<AdamState> gen_bottom_opt;
  AdamState disc_top_opt;
  AdamState cv_filter_opt;
  std::vector<AdamState> disc_bottom_opt;

  std::vector<std::size_t> boundary_widths;
};

inline ModelShards build_shards(const PartitionPlan& plan, std::size_t z_dim,
                                std::size_t cv_width,
                                const std::vector<std::size_t>& encoded_widths,
                                const NetHyper& hp, std::uint64_t seed) {
  require<ValidationError>(encoded_widths.size() == plan.n_clients(),
                           "encoded widths do not match client count");
  ModelShards s;
  s.gen_top = build_gen_top(plan, z_dim, cv_width, hp);
  s.boundary_widths = gen_boundary_widths(plan, s.gen_top.output_dim());
  for (std::size_t i = 0; i < plan.n_clients(); ++i) {
    s.gen_bottoms.push_back(build_gen_bottom(plan, i, s.boundary_widths[i],
                                             encoded_widths[i], hp));
    s.disc_bottoms.push_back(
        build_disc_bottom(plan, i, encoded_widths[i], hp));
  }
  s.disc_top = build_disc_top(plan, cv_width, hp);
  s.cv_filter = build_cv_filter(cv_width, hp);

  {
    auto rng = derived_stream(seed, "init.gen_top");
    s.gen_top.init_params(rng);
  }
  {
    auto rng = derived_stream(seed, "init.disc_top");
    s.disc_top.init_params(rng);
  }
  {
    auto rng = derived_stream(seed, "init.cv_filter");
    s.cv_filter.init_params(rng);
  }
  for (std::size_t i = 0; i < plan.n_clients(); ++i) {
    auto g = derived_stream(seed, "init.gen_bottom", i);
    s.gen_bottoms[i].init_params(g);
    auto d = derived_stream(seed, "init.disc_bottom", i);
    s.disc_bottoms[i].init_params(d);
  }
  s.gen_bottom_opt.resize(plan.n_clients());
  s.disc_bottom_opt.resize(plan.n_clients());
  return s;
}

// ---------------------------------------------------------------------------
// checkpoint serialization: JSON manifest + length-prefixed LE f64 arrays
// ---------------------------------------------------------------------------

inline json netspec_to_json(const NetSpec& spec) {
  json blocks = json::array();
  for (const auto& b : spec.blocks) {
    json layers = json::array();
    for (const auto& l : b.layers) {
      json jl;
      switch (l.kind) {
        case LayerKind::Dense:
          jl = {{"kind", "dense"}, {"in", l.in}, {"out", l.out}};
          break;
        case LayerKind::BatchNorm:
          jl = {{"kind", "batch_norm"}, {"dim", l.dim}};
          break;
        case LayerKind::ReLU: jl = {{"kind", "relu"}}; break;
        case LayerKind::LeakyReLU:
          jl = {{"kind", "leaky_relu"}, {"slope", l.slope}};
          break;
        case LayerKind::Dropout:
          jl = {{"kind", "dropout"}, {"rate", l.rate}};
          break;
        case LayerKind::Tanh: jl = {{"kind", "tanh"}}; break;
      }
      layers.push_back(jl);
    }
    blocks.push_back({{"layers", layers},
                      {"concat_input", b.concat_input},
                      {"add_input", b.add_input}});
  }
  return json{{"input_dim", spec.input_dim}, {"blocks", blocks}};
}

inline NetSpec netspec_from_json(const json& j) {
  NetSpec spec;
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  for (const auto& jb : j.at("blocks")) {
    BlockSpec b;
    b.concat_input = jb.at("concat_input").get<bool>();
    b.add_input = jb.at("add_input").get<bool>();
    for (const auto& jl : jb.at("layers")) {
      std::string kind = jl.at("kind").get<std::string>();
      if (kind == "dense")
        b.layers.push_back(LayerSpec::dense(jl.at("in").get<std::size_t>(),
                                            jl.at("out").get<std::size_t>()));
      else if (kind == "batch_norm")
        b.layers.push_back(
            LayerSpec::batch_norm(jl.at("dim").get<std::size_t>()));
      else if (kind == "relu")
        b.layers.push_back(LayerSpec::relu());
      else if (kind == "leaky_relu")
        b.layers.push_back(LayerSpec::leaky_relu(jl.at("slope").get<double>()));
      else if (kind == "dropout")
        b.layers.push_back(LayerSpec::dropout(jl.at("rate").get<double>()));
      else if (kind == "tanh")
        b.layers.push_back(LayerSpec::tanh());
      else
        fail<ParseError>("unknown layer kind '", kind, "'");
    }
    spec.blocks.push_back(std::move(b));
  }
  return spec;
}

namespace model_detail {

inline void write_f64_array(std::ostream& out, const std::vector<double>& v) {
  std::uint64_t n = v.size();
  unsigned char hdr[8];
  for (int i = 0; i < 8; ++i) hdr[i] = static_cast<unsigned char>(n >> (8 * i));
  out.write(reinterpret_cast<const char*>(hdr), 8);
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline std::vector<double> read_f64_array(std::istream& in) {
  unsigned char hdr[8];
  in.read(reinterpret_cast<char*>(hdr), 8);
  require<ParseError>(in.good(), "checkpoint truncated (length prefix)");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(hdr[i]) << (8 * i);
  std::vector<double> v(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    require<ParseError>(in.good(), "checkpoint truncated (payload)");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    std::memcpy(&v[k], &bits, 8);
  }
  return v;
}

inline json shard_manifest(const std::string& name, const Net& net,
                           const AdamState& opt) {
  return json{{"name", name},
              {"spec", netspec_to_json(net.spec())},
              {"param_count", net.param_count()},
              {"state_count", net.bn_state().size()},
              {"adam_step", opt.step}};
}

}  // namespace model_detail

/// Writes manifest.json + shards.bin under `dir` (which must exist).
/// Binary layout: per shard, a length-prefixed params array followed by a
/// length-prefixed BN-state array, in manifest order.
inline void save_shards(const ModelShards& s, const json& extra_manifest,
                        const std::string& dir) {
  json shards = json::array();
  std::ofstream bin(dir + "/shards.bin", std::ios::binary);
  require<ParseError>(bin.good(), "cannot write ", dir, "/shards.bin");
  auto dump = [&](const std::string& name, const Net& net,
                  const AdamState& opt) {
    shards.push_back(model_detail::shard_manifest(name, net, opt));
    model_detail::write_f64_array(bin, net.params);
    model_detail::write_f64_array(bin, net.bn_state());
  };
  dump("gen_top", s.gen_top, s.gen_top_opt);
  for (std::size_t i = 0; i < s.gen_bottoms.size(); ++i)
    dump("gen_bottom." + std::to_string(i), s.gen_bottoms[i],
         s.gen_bottom_opt[i]);
  dump("disc_top", s.disc_top, s.disc_top_opt);
  dump("cv_filter", s.cv_filter, s.cv_filter_opt);
  for (std::size_t i = 0; i < s.disc_bottoms.size(); ++i)
    dump("disc_bottom." + std::to_string(i), s.disc_bottoms[i],
         s.disc_bottom_opt[i]);

  json manifest = extra_manifest;
  manifest["format"] = "gtv-checkpoint-v1";
  manifest["shards"] = shards;
  std::ofstream mf(dir + "/manifest.json");
  require<ParseError>(mf.good(), "cannot write ", dir, "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

/// Loads shards saved by save_shards. Optimizer moments are not persisted;
/// step counts come back from the manifest (enough to resume synthesis).
inline ModelShards load_shards(const json& manifest, const std::string& dir) {
  require<ParseError>(manifest.at("format") == "gtv-checkpoint-v1",
                      "unsupported checkpoint format");
  std::ifstream bin(dir + "/shards.bin", std::ios::binary);
  require<ParseError>(bin.good(), "cannot open ", dir, "/shards.bin");
  ModelShards s;
  for (const auto& js : manifest.at("shards")) {
    std::string name = js.at("name").get<std::string>();
    Net net(netspec_from_json(js.at("spec")));
    auto params = model_detail::read_f64_array(bin);
    auto state = model_detail::read_f64_array(bin);
    require<ParseError>(params.size() == net.param_count(),
                        "checkpoint param count mismatch for ", name);
    require<ParseError>(state.size() == net.bn_state().size(),
                        "checkpoint state count mismatch for ", name);
    net.params = params;
    net.bn_state() = state;
    AdamState opt;
    opt.step = js.at("adam_step").get<std::uint64_t>();
    if (name == "gen_top") {
      s.gen_top = std::move(net);
      s.gen_top_opt = opt;
    } else if (name.rfind("gen_bottom.", 0) == 0) {
      s.gen_bottoms.push_back(std::move(net));
      s.gen_bottom_opt.push_back(opt);
    } else if (name == "disc_top") {
      s.disc_top = std::move(net);
      s.disc_top_opt = opt;
    } else if (name == "cv_filter") {
      s.cv_filter = std::move(net);
      s.cv_filter_opt = opt;
    } else if (name.rfind("disc_bottom.", 0) == 0) {
      s.disc_bottoms.push_back(std::move(net));
      s.disc_bottom_opt.push_back(opt);
    } else {
      fail<ParseError>("unknown shard '", name, "' in checkpoint");
    }
  }
  return s;
}

}  // namespace gtv

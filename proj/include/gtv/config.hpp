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

#include <cctype>
#include <fstream>
#include <optional>
#include <string>

#include "gtv/model.hpp"
#include "gtv/protocol.hpp"
#include "gtv/table.hpp"

namespace gtv {

// Experiment configuration. Accepted as JSON, or as a TOML subset
// ([section] headers, key = scalar/array assignments, # comments) that
// lowers into the same JSON tree. Snapshots written next to run outputs
// materialize every default so a run is reproducible from its snapshot
// alone.

// ---------------------------------------------------------------------------
// TOML subset reader
// ---------------------------------------------------------------------------

namespace toml_detail {

inline void skip_ws(const std::string& s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

inline json parse_value(const std::string& s, std::size_t& i);

inline json parse_array(const std::string& s, std::size_t& i) {
  require<ParseError>(s[i] == '[', "expected '['");
  ++i;
  json arr = json::array();
  for (;;) {
    skip_ws(s, i);
    require<ParseError>(i < s.size(), "unterminated array");
    if (s[i] == ']') {
      ++i;
      return arr;
    }
    arr.push_back(parse_value(s, i));
    skip_ws(s, i);
    require<ParseError>(i < s.size(), "unterminated array");
    if (s[i] == ',') {
      ++i;
      continue;
    }
    require<ParseError>(s[i] == ']', "expected ',' or ']' in array");
  }
}

inline json parse_value(const std::string& s, std::size_t& i) {
  skip_ws(s, i);
  require<ParseError>(i < s.size(), "missing value");
  if (s[i] == '[') return parse_array(s, i);
  if (s[i] == '"') {
    std::string out;
    ++i;
    while (i < s.size() && s[i] != '"') {
      if (s[i] == '\\' && i + 1 < s.size()) ++i;
      out += s[i++];
    }
    require<ParseError>(i < s.size(), "unterminated string");
    ++i;
    return json(out);
  }
  std::size_t start = i;
  while (i < s.size() && s[i] != ',' && s[i] != ']' && s[i] != '#') ++i;
  std::string tok = s.substr(start, i - start);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t'))
    tok.pop_back();
  require<ParseError>(!tok.empty(), "empty value");
  if (tok == "true") return json(true);
  if (tok == "false") return json(false);
  try {
    if (tok.find_first_of(".eE") == std::string::npos &&
        tok.find_first_not_of("+-0123456789_") == std::string::npos) {
      std::string digits;
      for (char c : tok)
        if (c != '_') digits += c;
      return json(std::stoll(digits));
    }
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    require<ParseError>(pos == tok.size(), "bad number");
    return json(v);
  } catch (const std::exception&) {
    fail<ParseError>("cannot parse TOML value '", tok, "'");
  }
}

}  // namespace toml_detail

/// Lowers a TOML-subset document into a JSON object tree.
inline json toml_to_json(std::istream& in) {
  json root = json::object();
  json* section = &root;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t i = 0;
    toml_detail::skip_ws(line, i);
    if (i >= line.size() || line[i] == '#') continue;
    if (line[i] == '[') {
      std::size_t end = line.find(']', i);
      require<ParseError>(end != std::string::npos, "line ", line_no,
                          ": unterminated section header");
      std::string name = line.substr(i + 1, end - i - 1);
      require<ParseError>(!name.empty() && name.find('[') == std::string::npos,
                          "line ", line_no, ": malformed section header");
      section = &root[name];
      if (section->is_null()) *section = json::object();
      continue;
    }
    std::size_t eq = line.find('=', i);
    require<ParseError>(eq != std::string::npos, "line ", line_no,
                        ": expected 'key = value'");
    std::string key = line.substr(i, eq - i);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t'))
      key.pop_back();
    require<ParseError>(!key.empty(), "line ", line_no, ": empty key");
    std::size_t vi = eq + 1;
    try {
      (*section)[key] = toml_detail::parse_value(line, vi);
    } catch (const ParseError& e) {
      fail<ParseError>("line ", line_no, ": ", e.what());
    }
  }
  return root;
}

// ---------------------------------------------------------------------------
// experiment config
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string csv_path;
  std::string schema_path;
  ColumnAssignment assignment;
  PartitionConfig partition;
  bool strict_paper_mode = false;
  TrainingConfig training;
  std::optional<std::size_t> epochs;  // alternative to explicit rounds
  std::string output_dir = "gtv-out";
  std::string transport = "inproc";
  bool log_payloads = false;
};

namespace config_detail {

template <class T>
T get_or(const json& j, const char* section, const char* key, T fallback) {
  if (!j.contains(section) || !j[section].contains(key)) return fallback;
  try {
    return j[section][key].get<T>();
  } catch (const std::exception& e) {
    fail<ValidationError>("config field ", section, ".", key, ": ", e.what());
  }
}

}  // namespace config_detail

inline ExperimentConfig config_from_json(const json& j) {
  using config_detail::get_or;
  ExperimentConfig c;
  require<ValidationError>(j.contains("data"), "config needs a [data] section");
  require<ValidationError>(j["data"].contains("csv"), "config field data.csv missing");
  require<ValidationError>(j["data"].contains("schema"),
                           "config field data.schema missing");
  c.csv_path = j["data"]["csv"].get<std::string>();
  c.schema_path = j["data"]["schema"].get<std::string>();
  require<ValidationError>(j["data"].contains("assignment"),
                           "config field data.assignment missing");
  for (const auto& client : j["data"]["assignment"]) {
    std::vector<std::string> cols;
    for (const auto& name : client) cols.push_back(name.get<std::string>());
    c.assignment.client_columns.push_back(std::move(cols));
  }

  c.partition.gen_server_blocks =
      get_or<std::size_t>(j, "partition", "gen_server_blocks", 2);
  c.partition.gen_client_blocks =
      get_or<std::size_t>(j, "partition", "gen_client_blocks", 0);
  c.partition.disc_server_blocks =
      get_or<std::size_t>(j, "partition", "disc_server_blocks", 2);
  c.partition.disc_client_blocks =
      get_or<std::size_t>(j, "partition", "disc_client_blocks", 0);
  c.partition.block_dim = get_or<std::size_t>(j, "partition", "block_dim", 256);
  c.strict_paper_mode = get_or<bool>(j, "partition", "strict_paper_mode", false);

  auto& t = c.training;
  if (j.contains("training") && j["training"].contains("epochs"))
    c.epochs = j["training"]["epochs"].get<std::size_t>();
  t.rounds = get_or<std::size_t>(j, "training", "rounds", 1);
  t.disc_epochs = get_or<std::size_t>(j, "training", "disc_epochs", 5);
  t.batch = get_or<std::size_t>(j, "training", "batch", 500);
  t.z_dim = get_or<std::size_t>(j, "training", "z_dim", 128);
  t.server_seed = get_or<std::uint64_t>(j, "training", "server_seed", 1);
  t.shuffle_seed = get_or<std::uint64_t>(j, "training", "shuffle_seed", 2);
  t.publication_seed =
      get_or<std::uint64_t>(j, "training", "publication_seed", 3);
  t.adam.lr = get_or<double>(j, "training", "lr", 2e-4);
  t.adam.beta1 = get_or<double>(j, "training", "beta1", 0.5);
  t.adam.beta2 = get_or<double>(j, "training", "beta2", 0.9);
  t.adam.eps = get_or<double>(j, "training", "adam_eps", 1e-8);
  t.gp_lambda = get_or<double>(j, "training", "gp_lambda", 10.0);
  t.gumbel_temperature =
      get_or<double>(j, "training", "gumbel_temperature", 0.2);
  t.conditional_loss = get_or<bool>(j, "training", "conditional_loss", true);
  t.shuffle_enabled = get_or<bool>(j, "training", "shuffling", true);
  t.cache_real_logits =
      get_or<bool>(j, "training", "cache_real_logits", false);
  std::string residual =
      get_or<std::string>(j, "training", "residual_mode", "concat");
  require<ValidationError>(residual == "concat" || residual == "add",
                           "config field training.residual_mode must be "
                           "'concat' or 'add'");
  t.net.residual =
      residual == "concat" ? ResidualMode::Concat : ResidualMode::Add;
  t.net.leaky_slope = get_or<double>(j, "training", "leaky_slope", 0.2);
  t.net.dropout_rate = get_or<double>(j, "training", "dropout_rate", 0.5);

  t.encoder.max_modes = get_or<std::size_t>(j, "encoder", "max_modes", 10);
  t.encoder.weight_threshold =
      get_or<double>(j, "encoder", "weight_threshold", 0.005);
  t.encoder.em_tol = get_or<double>(j, "encoder", "em_tol", 1e-4);
  t.encoder.em_max_iters =
      get_or<std::size_t>(j, "encoder", "em_max_iters", 100);
  t.encoder.std_floor = get_or<double>(j, "encoder", "std_floor", 1e-4);
  t.encoder.merge_tol = get_or<double>(j, "encoder", "merge_tol", 0.01);

  c.output_dir = get_or<std::string>(j, "run", "output_dir", "gtv-out");
  c.transport = get_or<std::string>(j, "run", "transport", "inproc");
  require<ValidationError>(c.transport == "inproc" || c.transport == "tcp",
                           "config field run.transport must be 'inproc' or "
                           "'tcp'");
  c.log_payloads = get_or<bool>(j, "run", "log_payloads", false);
  return c;
}

inline json config_to_json(const ExperimentConfig& c,
                           std::size_t resolved_rounds) {
  json assignment = json::array();
  for (const auto& cols : c.assignment.client_columns)
    assignment.push_back(cols);
  const auto& t = c.training;
  json j;
  j["data"] = {{"csv", c.csv_path},
               {"schema", c.schema_path},
               {"assignment", assignment}};
  j["partition"] = {{"gen_server_blocks", c.partition.gen_server_blocks},
                    {"gen_client_blocks", c.partition.gen_client_blocks},
                    {"disc_server_blocks", c.partition.disc_server_blocks},
                    {"disc_client_blocks", c.partition.disc_client_blocks},
                    {"block_dim", c.partition.block_dim},
                    {"strict_paper_mode", c.strict_paper_mode}};
  j["training"] = {
      {"rounds", resolved_rounds},
      {"disc_epochs", t.disc_epochs},
      {"batch", t.batch},
      {"z_dim", t.z_dim},
      {"server_seed", t.server_seed},
      {"shuffle_seed", t.shuffle_seed},
      {"publication_seed", t.publication_seed},
      {"lr", t.adam.lr},
      {"beta1", t.adam.beta1},
      {"beta2", t.adam.beta2},
      {"adam_eps", t.adam.eps},
      {"gp_lambda", t.gp_lambda},
      {"gumbel_temperature", t.gumbel_temperature},
      {"conditional_loss", t.conditional_loss},
      {"shuffling", t.shuffle_enabled},
      {"cache_real_logits", t.cache_real_logits},
      {"residual_mode",
       t.net.residual == ResidualMode::Concat ? "concat" : "add"},
      {"leaky_slope", t.net.leaky_slope},
      {"dropout_rate", t.net.dropout_rate}};
  j["encoder"] = {{"max_modes", t.encoder.max_modes},
                  {"weight_threshold", t.encoder.weight_threshold},
                  {"em_tol", t.encoder.em_tol},
                  {"em_max_iters", t.encoder.em_max_iters},
                  {"std_floor", t.encoder.std_floor},
                  {"merge_tol", t.encoder.merge_tol}};
  j["run"] = {{"output_dir", c.output_dir},
              {"transport", c.transport},
              {"log_payloads", c.log_payloads}};
  return j;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  require<ParseError>(in.good(), "cannot open config '", path, "'");
  json j;
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    try {
      in >> j;
    } catch (const std::exception& e) {
      fail<ParseError>("config JSON parse failed: ", e.what());
    }
  } else {
    j = toml_to_json(in);
  }
  return config_from_json(j);
}

/// The nine two-block partitions; strict mode rejects anything else.
inline void check_strict_partitions(const PartitionConfig& pc) {
  auto ok = [](std::size_t server, std::size_t client) {
    return server + client == 2;
  };
  if (ok(pc.gen_server_blocks, pc.gen_client_blocks) &&
      ok(pc.disc_server_blocks, pc.disc_client_blocks))
    return;
  fail<ValidationError>(
      "strict mode allows exactly the nine two-block partitions: "
      "D2_0G2_0, D2_0G1_1, D2_0G0_2, D1_1G2_0, D1_1G1_1, D1_1G0_2, "
      "D0_2G2_0, D0_2G1_1, D0_2G0_2 (got ", pc.notation(), ")");
}

}  // namespace gtv

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

#include <filesystem>
#include <iostream>
#include <string>

#include "gtv/attack.hpp"
#include "gtv/config.hpp"
#include "gtv/gradcheck.hpp"
#include "gtv/metrics.hpp"
#include "gtv/ml_utility.hpp"
#include "gtv/protocol.hpp"
#include "gtv/reference.hpp"

namespace gtv {

// End-to-end run drivers behind the CLI subcommands. Everything here is
// callable from tests so the acceptance suite exercises the same paths.

struct TrainArtifacts {
  std::string output_dir;
  std::string checkpoint_dir;
  std::string loss_log_path;
  std::string message_log_path;
  std::string snapshot_path;
  std::size_t rounds = 0;
};

inline std::size_t resolve_rounds(const ExperimentConfig& cfg,
                                  std::size_t n_rows) {
  if (!cfg.epochs) return cfg.training.rounds;
  std::size_t steps_per_epoch =
      (n_rows + cfg.training.batch - 1) / cfg.training.batch;
  return *cfg.epochs * steps_per_epoch;
}

inline json round_logs_to_json(const std::vector<RoundLog>& logs) {
  json arr = json::array();
  for (const auto& rl : logs)
    arr.push_back(json{{"round", rl.round},
                       {"disc_losses", rl.disc_losses},
                       {"gen_loss", rl.gen_loss},
                       {"cond_loss", rl.cond_loss}});
  return arr;
}

inline TrainArtifacts run_train(const ExperimentConfig& cfg,
                                std::ostream& out = std::cout) {
  namespace fs = std::filesystem;
  if (cfg.strict_paper_mode) check_strict_partitions(cfg.partition);
  TableSchema schema = load_schema(cfg.schema_path);
  RawTable table = load_table_file(cfg.csv_path, schema);
  cfg.assignment.validate(schema);

  TrainingConfig tc = cfg.training;
  tc.rounds = resolve_rounds(cfg, table.n_rows());

  TrainArtifacts art;
  art.output_dir = cfg.output_dir;
  art.rounds = tc.rounds;
  fs::create_directories(cfg.output_dir);
  art.message_log_path = cfg.output_dir + "/messages.jsonl";
  art.loss_log_path = cfg.output_dir + "/losses.json";
  art.snapshot_path = cfg.output_dir + "/config_snapshot.json";
  art.checkpoint_dir = cfg.output_dir + "/checkpoint";
  fs::create_directories(art.checkpoint_dir);

  {
    ExperimentConfig snap = cfg;
    std::ofstream sf(art.snapshot_path);
    json js = config_to_json(snap, tc.rounds);
    js["training"].erase("epochs");
    sf << js.dump(2) << "\n";
  }

  MessageLog log;
  log.open(art.message_log_path, cfg.log_payloads);
  auto transport = cfg.transport == "tcp" ? Federation::Transport::TcpLoopback
                                          : Federation::Transport::InProcess;
  Federation fed(schema, table, cfg.assignment, cfg.partition, tc, &log,
                 transport);
  out << "training " << cfg.partition.notation() << " for " << tc.rounds
      << " rounds (" << fed.n_clients() << " clients)\n";
  std::vector<RoundLog> logs;
  try {
    logs = fed.train();
  } catch (const NumericError&) {
    // keep the last-good shards so the run can be inspected, then abort
    std::ofstream lf(art.loss_log_path);
    lf << round_logs_to_json(logs).dump(2) << "\n";
    save_shards(fed.collect_shards(),
                json{{"aborted", "numeric divergence"}}, art.checkpoint_dir);
    fed.stop();
    log.close();
    throw;
  }
  {
    std::ofstream lf(art.loss_log_path);
    lf << round_logs_to_json(logs).dump(2) << "\n";
  }

  ModelShards shards = fed.collect_shards();
  json extra;
  extra["schema"] = schema_to_json(schema);
  json assignment = json::array();
  for (const auto& cols : cfg.assignment.client_columns)
    assignment.push_back(cols);
  extra["assignment"] = assignment;
  extra["csv"] = cfg.csv_path;
  extra["config_snapshot"] = config_to_json(cfg, tc.rounds);
  json codecs = json::array();
  for (std::size_t i = 0; i < fed.n_clients(); ++i)
    codecs.push_back(fed.client(i).codec().to_json());
  extra["codecs"] = codecs;
  save_shards(shards, extra, art.checkpoint_dir);
  fed.stop();
  log.close();
  if (!logs.empty())
    out << "final losses: disc " << logs.back().disc_losses.back() << ", gen "
        << logs.back().gen_loss << "\n";
  out << "checkpoint: " << art.checkpoint_dir << "\n";
  return art;
}

/// Rebuilds a federation from a checkpoint (data reloaded from the paths
/// recorded in the manifest) and publishes n rows of synthetic data.
inline RawTable run_synthesize(const std::string& checkpoint_dir,
                               std::size_t n_rows,
                               std::optional<std::uint64_t> publication_seed,
                               const std::string& csv_override = "") {
  require<ValidationError>(n_rows >= 1, "n_rows must be >= 1");
  std::ifstream mf(checkpoint_dir + "/manifest.json");
  require<ParseError>(mf.good(), "cannot open ", checkpoint_dir,
                      "/manifest.json");
  json manifest;
  mf >> manifest;
  ModelShards saved = load_shards(manifest, checkpoint_dir);

  TableSchema schema = schema_from_json(manifest.at("schema"));
  ColumnAssignment assignment;
  for (const auto& cols : manifest.at("assignment"))
    assignment.client_columns.push_back(
        cols.get<std::vector<std::string>>());
  ExperimentConfig cfg = config_from_json(manifest.at("config_snapshot"));
  std::string csv = csv_override.empty() ? manifest.at("csv").get<std::string>()
                                         : csv_override;
  RawTable table = load_table_file(csv, schema);
  TrainingConfig tc = cfg.training;
  tc.rounds = 0;
  if (publication_seed) tc.publication_seed = *publication_seed;

  Federation fed(schema, table, assignment, cfg.partition, tc, nullptr,
                 Federation::Transport::InProcess, &saved);
  auto pieces = fed.synthesize(n_rows);
  RawTable synth = assemble_synthetic(schema, assignment, pieces);
  fed.stop();
  return synth;
}

inline MetricReport run_evaluate(const RawTable& real, const RawTable& synth,
                                 const ColumnAssignment* assignment,
                                 bool with_utility, std::uint64_t eval_seed,
                                 const RawTable* test = nullptr) {
  MetricReport report = statistical_similarity(real, synth, assignment);
  if (with_utility && real.schema.target_column) {
    RawTable train_real, test_real;
    if (test) {
      train_real = real;
      test_real = *test;
    } else {
      // deterministic 80/20 split of the real table
      auto rng = derived_stream(eval_seed, "eval.split");
      auto perm = rng.permutation(real.n_rows());
      std::size_t n_test = std::max<std::size_t>(1, real.n_rows() / 5);
      train_real.schema = test_real.schema = real.schema;
      for (std::size_t k = 0; k < perm.size(); ++k) {
        auto& dst = k < n_test ? test_real : train_real;
        dst.rows.push_back(real.rows[perm[k]]);
      }
      for (auto* t : {&train_real, &test_real}) {
        t->row_ids.resize(t->rows.size());
        for (std::size_t i = 0; i < t->row_ids.size(); ++i)
          t->row_ids[i] = static_cast<std::uint32_t>(i);
      }
    }
    UtilityOptions uo;
    uo.seed = eval_seed;
    report.ml_utility = ml_utility(train_real, synth, test_real,
                                   *real.schema.target_column, uo)
                            .to_json();
  }
  return report;
}

/// Small mixed-type table used by the selftest and examples: one numeric
/// column per client with a planted cross-client Pearson correlation, a
/// balanced categorical column, and a 9:1 imbalanced categorical target
/// that depends on the first numeric column.
inline RawTable make_demo_table(std::size_t n_rows, std::uint64_t seed,
                                double planted_corr = 0.8) {
  TableSchema schema;
  schema.columns.push_back({"x1", ColumnKind::Continuous, {}, {}});
  schema.columns.push_back({"g1", ColumnKind::Categorical, {"A", "B"}, {}});
  schema.columns.push_back({"x2", ColumnKind::Continuous, {}, {}});
  schema.columns.push_back({"g2", ColumnKind::Categorical, {"Y", "N"}, {}});
  schema.target_column = "g2";

  RawTable t;
  t.schema = schema;
  auto rng = derived_stream(seed, "demo.table");
  double beta = planted_corr / std::sqrt(1.0 - planted_corr * planted_corr);
  for (std::size_t r = 0; r < n_rows; ++r) {
    double u = rng.normal();
    double x1 = u;
    double x2 = beta * u + rng.normal();  // corr(x1, x2) = planted_corr
    std::string g1 = rng.uniform() < 0.5 ? "A" : "B";
    // x1 + 0.3 n ~ N(0, 1.09): the -1.33798 threshold leaves 10% below,
    // giving a 9:1 class balance that a classifier can still learn from x1
    std::string g2 = x1 + 0.3 * rng.normal() > -1.33798 ? "Y" : "N";
    t.rows.push_back({Cell{x1}, Cell{g1}, Cell{x2}, Cell{g2}});
  }
  t.row_ids.resize(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i)
    t.row_ids[i] = static_cast<std::uint32_t>(i);
  return t;
}

struct AttackDemoResult {
  ReconstructionReport report;
  AccuracyResult accuracy;
  std::vector<std::pair<int, double>> coverage_trajectory;
};

/// Replays a message log as the curious server and scores the
/// reconstruction against the supplied per-client truth tables.
inline AttackDemoResult run_attack_demo(
    const std::vector<json>& log_entries, const CvLayout& layout,
    const std::vector<RawTable>& truth_tables, std::ostream& out) {
  AttackDemoResult res;
  ServerView view = ServerView::from_log(log_entries);
  std::size_t n_rows = truth_tables.empty() ? 0 : truth_tables[0].n_rows();
  res.report = reconstruct(view, n_rows);
  res.accuracy = reconstruction_accuracy(res.report, layout, truth_tables);
  res.coverage_trajectory = coverage_by_round(view, n_rows);
  for (const auto& [round, cov] : res.coverage_trajectory)
    out << "round " << round << ": coverage " << cov << "\n";
  out << "inferred columns: " << res.report.columns.size() << "\n";
  out << "confident cells: " << res.accuracy.confident << ", coverage "
      << res.accuracy.coverage << "\n";
  if (res.accuracy.coverage < 1.0)
    out << "note: coverage below 1; the log covers only part of the table\n";
  if (res.accuracy.confident == 0)
    out << "no confident cells (0 coverage); accuracy not defined\n";
  else
    out << "reconstruction accuracy: " << res.accuracy.accuracy << "\n";
  return res;
}

/// Gradient checks plus a short federated-vs-monolithic equivalence run.
/// Returns true when everything passes.
inline bool run_selftest(std::ostream& out) {
  bool ok = true;
  auto report = [&](const std::string& name, bool pass, double value) {
    out << (pass ? "PASS" : "FAIL") << "  " << name << " (" << value << ")\n";
    ok = ok && pass;
  };

  double worst_param = 0.0, worst_input = 0.0;
  for (std::uint64_t s = 1; s <= 6; ++s) {
    auto c = random_net_case(s, false);
    Net net(c.spec);
    auto rng = derived_stream(s, "init");
    net.init_params(rng);
    auto res = finite_difference_check(net, c.input, s);
    worst_param = std::max(worst_param, res.max_param_rel_err);
    worst_input = std::max(worst_input, res.max_input_rel_err);
  }
  report("gradient check: parameters vs central differences",
         worst_param < 1e-4, worst_param);
  report("gradient check: inputs vs central differences", worst_input < 1e-4,
         worst_input);

  double worst_pen = 0.0;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    auto c = random_net_case(s, true);
    Net net(c.spec);
    auto rng = derived_stream(s, "init");
    net.init_params(rng);
    Tensor2 real = c.input;
    Tensor2 fake = c.input;
    auto nr = derived_stream(s, "fake");
    for (double& v : fake.data) v += nr.normal();
    worst_pen = std::max(worst_pen, penalty_finite_difference_check(
                                        net, real, fake, 10.0, s));
  }
  report("gradient penalty double backprop vs central differences",
         worst_pen < 1e-3, worst_pen);

  // short federated-vs-monolithic equivalence on a small fixture
  RawTable table = make_demo_table(120, 99);
  ColumnAssignment all;
  all.client_columns = {{"x1", "g1", "x2", "g2"}};
  PartitionConfig pc;  // D2_0 G2_0
  pc.block_dim = 32;
  TrainingConfig tc;
  tc.rounds = 10;
  tc.batch = 30;
  tc.z_dim = 16;
  tc.shuffle_enabled = false;
  tc.encoder.max_modes = 4;
  Federation fed(table.schema, table, all, pc, tc);
  auto fed_logs = fed.train();
  fed.stop();
  CentralizedTrainer mono(table.schema, table, pc, tc);
  auto mono_logs = mono.train();
  double max_dev = 0.0;
  for (std::size_t r = 0; r < fed_logs.size(); ++r) {
    for (std::size_t j = 0; j < fed_logs[r].disc_losses.size(); ++j)
      max_dev = std::max(max_dev,
                         std::abs(fed_logs[r].disc_losses[j] -
                                  mono_logs[r].disc_losses[j]) /
                             std::max(1.0, std::abs(mono_logs[r].disc_losses[j])));
    max_dev = std::max(max_dev, std::abs(fed_logs[r].gen_loss -
                                         mono_logs[r].gen_loss) /
                                    std::max(1.0, std::abs(mono_logs[r].gen_loss)));
  }
  report("federated run matches monolithic reference", max_dev < 1e-9,
         max_dev);
  return ok;
}

}  // namespace gtv

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

// Command-line driver: train a vertically federated tabular GAN, publish
// synthetic data, evaluate it against the real table, and replay the
// curious-server reconstruction on a recorded message log.
//
// Exit codes: 0 success, 2 validation/parse error, 3 numeric failure,
// 4 protocol desynchronization.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "gtv/driver.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitProtocol = 4;

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const gtv::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kExitProtocol;
  } catch (const gtv::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const gtv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

gtv::ColumnAssignment assignment_from_json_file(const std::string& path) {
  std::ifstream in(path);
  gtv::require<gtv::ParseError>(in.good(), "cannot open assignment '", path,
                                "'");
  gtv::json j;
  in >> j;
  gtv::ColumnAssignment a;
  for (const auto& cols : j)
    a.client_columns.push_back(cols.get<std::vector<std::string>>());
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vertically federated conditional tabular GAN"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run the federated training loop");
  std::string config_path;
  train->add_option("config", config_path, "experiment config (.toml or .json)")
      ->required();

  // synthesize
  auto* synth = app.add_subcommand("synthesize",
                                   "publish synthetic rows from a checkpoint");
  std::string checkpoint_dir, synth_out = "synthetic.csv", csv_override;
  std::size_t n_rows = 1000;
  std::uint64_t pub_seed = 0;
  bool pub_seed_set = false;
  synth->add_option("checkpoint", checkpoint_dir, "checkpoint directory")
      ->required();
  synth->add_option("-n,--rows", n_rows, "rows to publish");
  synth->add_option("-o,--out", synth_out, "output CSV path");
  synth->add_option("--csv", csv_override,
                    "override the training CSV recorded in the checkpoint");
  synth
      ->add_option("--publication-seed", pub_seed,
                   "fresh shared seed for the publication shuffle")
      ->each([&](const std::string&) { pub_seed_set = true; });

  // evaluate
  auto* eval = app.add_subcommand("evaluate",
                                  "fidelity metrics real vs synthetic");
  std::string real_csv, synth_csv, schema_path, assignment_path, test_csv,
      report_out = "metrics.json";
  std::uint64_t eval_seed = 1234;
  bool no_utility = false;
  eval->add_option("real", real_csv, "real CSV")->required();
  eval->add_option("synthetic", synth_csv, "synthetic CSV")->required();
  eval->add_option("--schema", schema_path, "schema JSON")->required();
  eval->add_option("--assignment", assignment_path,
                   "per-client column lists (JSON array of arrays); enables "
                   "the client-scoped correlation metrics");
  eval->add_option("--test", test_csv,
                   "held-out real test CSV (default: 80/20 split of real)");
  eval->add_option("-o,--out", report_out, "metric report JSON path");
  eval->add_option("--seed", eval_seed, "seed for the split and classifiers");
  eval->add_flag("--no-utility", no_utility, "skip classifier utility");

  // attack-demo
  auto* attack = app.add_subcommand(
      "attack-demo", "replay a message log as the curious server");
  std::string log_path, attack_schema, attack_csv, attack_assignment,
      attack_out = "attack_report.json";
  attack->add_option("log", log_path, "messages.jsonl from train")->required();
  attack->add_option("--csv", attack_csv, "ground-truth CSV")->required();
  attack->add_option("--schema", attack_schema, "schema JSON")->required();
  attack->add_option("--assignment", attack_assignment,
                     "per-client column lists (JSON)")
      ->required();
  attack->add_option("-o,--out", attack_out, "report JSON path");

  // selftest
  auto* selftest = app.add_subcommand(
      "selftest", "gradient checks and the monolithic-equivalence oracle");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed())
    return guarded([&] {
      auto cfg = gtv::load_config_file(config_path);
      gtv::run_train(cfg);
      return 0;
    });

  if (synth->parsed())
    return guarded([&] {
      std::optional<std::uint64_t> seed;
      if (pub_seed_set) seed = pub_seed;
      gtv::RawTable out =
          gtv::run_synthesize(checkpoint_dir, n_rows, seed, csv_override);
      gtv::save_table_file(out, synth_out);
      std::cout << "wrote " << out.n_rows() << " rows to " << synth_out
                << "\n";
      return 0;
    });

  if (eval->parsed())
    return guarded([&] {
      auto schema = gtv::load_schema(schema_path);
      auto real = gtv::load_table_file(real_csv, schema);
      auto synthetic = gtv::load_table_file(synth_csv, schema);
      gtv::ColumnAssignment assignment;
      bool have_assignment = !assignment_path.empty();
      if (have_assignment)
        assignment = assignment_from_json_file(assignment_path);
      gtv::RawTable test;
      bool have_test = !test_csv.empty();
      if (have_test) test = gtv::load_table_file(test_csv, schema);
      auto report = gtv::run_evaluate(
          real, synthetic, have_assignment ? &assignment : nullptr,
          !no_utility, eval_seed, have_test ? &test : nullptr);
      std::ofstream out(report_out);
      out << report.to_json().dump(2) << "\n";
      std::cout << report.to_json().dump(2) << "\n";
      return 0;
    });

  if (attack->parsed())
    return guarded([&] {
      auto schema = gtv::load_schema(attack_schema);
      auto table = gtv::load_table_file(attack_csv, schema);
      auto assignment = assignment_from_json_file(attack_assignment);
      assignment.validate(schema);
      auto layout = gtv::build_cv_layout(schema, assignment);
      auto truth = gtv::split_columns(table, assignment);
      auto entries = gtv::read_message_log(log_path);
      auto res = gtv::run_attack_demo(entries, layout, truth, std::cout);
      std::ofstream out(attack_out);
      gtv::json j = res.report.to_json();
      j["accuracy"] = res.accuracy.accuracy;
      j["confident"] = res.accuracy.confident;
      out << j.dump(2) << "\n";
      return 0;
    });

  if (selftest->parsed())
    return guarded([&] { return gtv::run_selftest(std::cout) ? 0 : 1; });

  return 0;
}

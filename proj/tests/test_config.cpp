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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "gtv/config.hpp"
#include "gtv/rng.hpp"

using namespace gtv;

TEST_CASE("toml subset: sections, scalars, arrays, comments") {
  std::istringstream in(R"(# top comment
[data]
csv = "table.csv"            # trailing comment
schema = "table.schema.json"
assignment = [["a", "b"], ["c"]]

[training]
rounds = 50
lr = 2e-4
batch = 1_000
conditional_loss = true
shuffling = false
)");
  json j = toml_to_json(in);
  REQUIRE(j["data"]["csv"] == "table.csv");
  REQUIRE(j["data"]["assignment"][1][0] == "c");
  REQUIRE(j["training"]["rounds"] == 50);
  REQUIRE(j["training"]["lr"].get<double>() == Catch::Approx(2e-4));
  REQUIRE(j["training"]["batch"] == 1000);
  REQUIRE(j["training"]["conditional_loss"] == true);
  REQUIRE(j["training"]["shuffling"] == false);
}

TEST_CASE("toml subset reports the offending line") {
  std::istringstream in("[data]\ncsv \"missing equals\"\n");
  try {
    toml_to_json(in);
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("config defaults materialize and snapshot round-trips") {
  json j;
  j["data"] = {{"csv", "a.csv"},
               {"schema", "a.schema.json"},
               {"assignment", {{"x"}, {"y"}}}};
  auto cfg = config_from_json(j);
  REQUIRE(cfg.training.batch == 500);
  REQUIRE(cfg.training.z_dim == 128);
  REQUIRE(cfg.training.adam.lr == Catch::Approx(2e-4));
  REQUIRE(cfg.training.adam.beta1 == Catch::Approx(0.5));
  REQUIRE(cfg.training.adam.beta2 == Catch::Approx(0.9));
  REQUIRE(cfg.training.gp_lambda == 10.0);
  REQUIRE(cfg.training.gumbel_temperature == Catch::Approx(0.2));
  REQUIRE(cfg.training.conditional_loss);
  REQUIRE(cfg.training.shuffle_enabled);
  REQUIRE(cfg.partition.block_dim == 256);
  REQUIRE(cfg.training.encoder.max_modes == 10);
  REQUIRE(cfg.training.encoder.weight_threshold == Catch::Approx(0.005));

  json snap = config_to_json(cfg, 123);
  auto cfg2 = config_from_json(snap);
  REQUIRE(cfg2.training.rounds == 123);
  REQUIRE(cfg2.training.batch == cfg.training.batch);
  REQUIRE(config_to_json(cfg2, 123) == snap);
}

TEST_CASE("config type errors carry the field path") {
  json j;
  j["data"] = {{"csv", "a.csv"},
               {"schema", "s.json"},
               {"assignment", {{"x"}}}};
  j["training"]["rounds"] = "many";
  try {
    config_from_json(j);
    FAIL("expected validation error");
  } catch (const ValidationError& e) {
    REQUIRE(std::string(e.what()).find("training.rounds") !=
            std::string::npos);
  }
}

TEST_CASE("strict mode admits exactly the nine two-block partitions") {
  for (std::size_t g = 0; g <= 2; ++g)
    for (std::size_t d = 0; d <= 2; ++d) {
      PartitionConfig pc;
      pc.gen_server_blocks = g;
      pc.gen_client_blocks = 2 - g;
      pc.disc_server_blocks = d;
      pc.disc_client_blocks = 2 - d;
      REQUIRE_NOTHROW(check_strict_partitions(pc));
    }
  PartitionConfig bad;
  bad.gen_server_blocks = 3;
  bad.gen_client_blocks = 0;
  try {
    check_strict_partitions(bad);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("D2_0G2_0") != std::string::npos);
    REQUIRE(msg.find("D0_2G0_2") != std::string::npos);
  }
}

#ifdef GTV_CLI_PATH
TEST_CASE("the cli rejects invalid configs with exit code 2") {
  std::string cmd = std::string(GTV_CLI_PATH) + " train /nonexistent.toml";
  cmd += " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  REQUIRE(WEXITSTATUS(rc) == 2);
}

TEST_CASE("the cli selftest passes") {
  std::string cmd = std::string(GTV_CLI_PATH) + " selftest > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  REQUIRE(WEXITSTATUS(rc) == 0);
}
#endif

#ifdef GTV_CLI_PATH
TEST_CASE("the cli trains, synthesizes and evaluates a toy end to end") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "gtv_cli_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::ofstream csv(dir / "toy.csv");
  csv << "v,c\n";
  auto rng = gtv::derived_stream(5, "cli");
  for (int i = 0; i < 200; ++i)
    csv << rng.normal() << "," << (rng.uniform() < 0.5 ? "a" : "b") << "\n";
  csv.close();
  std::ofstream schema(dir / "toy.schema.json");
  schema << R"({"columns":[{"name":"v","kind":"continuous"},)"
         << R"({"name":"c","kind":"categorical","categories":["a","b"]}]})";
  schema.close();
  std::ofstream cfgf(dir / "toy.toml");
  cfgf << "[data]\n"
       << "csv = \"" << (dir / "toy.csv").string() << "\"\n"
       << "schema = \"" << (dir / "toy.schema.json").string() << "\"\n"
       << "assignment = [[\"v\"], [\"c\"]]\n"
       << "[partition]\nblock_dim = 16\n"
       << "[training]\nrounds = 3\nbatch = 32\nz_dim = 8\n"
       << "[run]\noutput_dir = \"" << (dir / "out").string() << "\"\n";
  cfgf.close();

  std::string cli = GTV_CLI_PATH;
  std::string q = " > /dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(
              (cli + " train " + (dir / "toy.toml").string() + q).c_str())) ==
          0);
  REQUIRE(fs::exists(dir / "out/checkpoint/shards.bin"));
  REQUIRE(fs::exists(dir / "out/messages.jsonl"));
  REQUIRE(fs::exists(dir / "out/losses.json"));
  REQUIRE(fs::exists(dir / "out/config_snapshot.json"));

  REQUIRE(WEXITSTATUS(std::system(
              (cli + " synthesize " + (dir / "out/checkpoint").string() +
               " -n 50 -o " + (dir / "synth.csv").string() + q)
                  .c_str())) == 0);
  REQUIRE(fs::exists(dir / "synth.csv"));

  std::ofstream af(dir / "assignment.json");
  af << R"([["v"],["c"]])";
  af.close();
  REQUIRE(WEXITSTATUS(std::system(
              (cli + " evaluate " + (dir / "toy.csv").string() + " " +
               (dir / "synth.csv").string() + " --schema " +
               (dir / "toy.schema.json").string() + " --assignment " +
               (dir / "assignment.json").string() + " --no-utility -o " +
               (dir / "metrics.json").string() + q)
                  .c_str())) == 0);
  REQUIRE(fs::exists(dir / "metrics.json"));

  REQUIRE(WEXITSTATUS(std::system(
              (cli + " attack-demo " + (dir / "out/messages.jsonl").string() +
               " --csv " + (dir / "toy.csv").string() + " --schema " +
               (dir / "toy.schema.json").string() + " --assignment " +
               (dir / "assignment.json").string() + " -o " +
               (dir / "attack.json").string() + q)
                  .c_str())) == 0);
  REQUIRE(fs::exists(dir / "attack.json"));
}
#endif

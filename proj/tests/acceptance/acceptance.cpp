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

// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavy criteria share one fixture and one federated
// training run. Select single criteria with `acceptance --only N`.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gtv/driver.hpp"
#include "gtv/gradcheck.hpp"
#include "gtv/stats.hpp"

namespace fs = std::filesystem;
using namespace gtv;

namespace {

struct Outcome {
  int id;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Outcome> outcomes;

template <class F>
void criterion(int id, const std::string& title, bool enabled, F&& body) {
  if (!enabled) return;
  auto t0 = std::chrono::steady_clock::now();
  Outcome o{id, false, "", 0.0};
  try {
    o.pass = body(o.detail);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  o.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": "
            << title << "  [" << o.detail << "]  (" << o.seconds << "s)\n"
            << std::flush;
  outcomes.push_back(o);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<ParseError>(in.good(), "cannot read ", path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// fixture for the partition matrix: six columns so five clients fit
RawTable make_wide_table(std::size_t n_rows, std::uint64_t seed) {
  TableSchema s;
  s.columns.push_back({"n0", ColumnKind::Continuous, {}, {}});
  s.columns.push_back({"c0", ColumnKind::Categorical, {"a", "b"}, {}});
  s.columns.push_back({"n1", ColumnKind::Continuous, {}, {}});
  s.columns.push_back({"c1", ColumnKind::Categorical, {"p", "q", "r"}, {}});
  s.columns.push_back({"n2", ColumnKind::Continuous, {}, {}});
  s.columns.push_back({"c2", ColumnKind::Categorical, {"u", "v"}, {}});
  RawTable t;
  t.schema = s;
  auto rng = derived_stream(seed, "wide");
  const char* c0[2] = {"a", "b"};
  const char* c1[3] = {"p", "q", "r"};
  const char* c2[2] = {"u", "v"};
  for (std::size_t r = 0; r < n_rows; ++r) {
    double u = rng.normal();
    t.rows.push_back({Cell{u}, Cell{std::string(c0[rng.uniform_below(2)])},
                      Cell{0.5 * u + rng.normal()},
                      Cell{std::string(c1[rng.uniform_below(3)])},
                      Cell{rng.normal()},
                      Cell{std::string(c2[rng.uniform() < 0.8 ? 0 : 1])}});
    t.row_ids.push_back(static_cast<std::uint32_t>(r));
  }
  return t;
}

ColumnAssignment round_robin_assignment(const TableSchema& schema,
                                        std::size_t n_clients) {
  ColumnAssignment a;
  a.client_columns.resize(n_clients);
  for (std::size_t c = 0; c < schema.columns.size(); ++c)
    a.client_columns[c % n_clients].push_back(schema.columns[c].name);
  return a;
}

// ---------------------------------------------------------------------------
// shared desk-scale configuration (criteria 2, 7, 9, 10)
// ---------------------------------------------------------------------------

constexpr std::size_t kDeskRows = 5000;
constexpr std::uint64_t kDeskSeed = 20260809;

ExperimentConfig desk_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.csv_path = out_dir + "/fixture.csv";
  cfg.schema_path = out_dir + "/fixture.schema.json";
  cfg.assignment.client_columns = {{"x1", "g1"}, {"x2", "g2"}};
  cfg.partition.gen_server_blocks = 0;   // D2_0 G0_2
  cfg.partition.gen_client_blocks = 2;
  cfg.partition.disc_server_blocks = 2;
  cfg.partition.disc_client_blocks = 0;
  cfg.partition.block_dim = 256;
  cfg.epochs = 100;
  cfg.training.batch = 500;
  cfg.training.z_dim = 128;
  cfg.training.server_seed = kDeskSeed;
  cfg.training.shuffle_seed = kDeskSeed + 1;
  cfg.training.publication_seed = kDeskSeed + 2;
  cfg.output_dir = out_dir;
  return cfg;
}

void write_desk_fixture(const std::string& out_dir) {
  fs::create_directories(out_dir);
  RawTable fixture = make_demo_table(kDeskRows, kDeskSeed);
  save_table_file(fixture, out_dir + "/fixture.csv");
  std::ofstream sf(out_dir + "/fixture.schema.json");
  sf << schema_to_json(fixture.schema).dump(2) << "\n";
}

struct DeskRun {
  TrainArtifacts artifacts;
  MetricReport fed_report;
  MetricReport cent_report;
  double planted_delta = 0.0;
  std::string metrics_json;
};

DeskRun desk_run(const std::string& out_dir) {
  write_desk_fixture(out_dir);
  ExperimentConfig cfg = desk_config(out_dir);
  std::ostringstream sink;
  DeskRun run;
  run.artifacts = run_train(cfg, sink);

  RawTable real = load_table_file(cfg.csv_path, load_schema(cfg.schema_path));
  RawTable synth =
      run_synthesize(run.artifacts.checkpoint_dir, kDeskRows, std::nullopt);
  run.fed_report = statistical_similarity(real, synth, &cfg.assignment);
  run.metrics_json = run.fed_report.to_json().dump(2);
  {
    std::ofstream mf(out_dir + "/metrics.json");
    mf << run.metrics_json << "\n";
  }

  // planted-pair recovery, reported alongside the norm bound
  auto pearson_pair = [&](const RawTable& t) {
    std::size_t a = t.schema.column_index("x1");
    std::size_t b = t.schema.column_index("x2");
    double ma = 0, mb = 0;
    for (const auto& row : t.rows) {
      ma += num(row[a]);
      mb += num(row[b]);
    }
    ma /= double(t.n_rows());
    mb /= double(t.n_rows());
    double sab = 0, saa = 0, sbb = 0;
    for (const auto& row : t.rows) {
      sab += (num(row[a]) - ma) * (num(row[b]) - mb);
      saa += (num(row[a]) - ma) * (num(row[a]) - ma);
      sbb += (num(row[b]) - mb) * (num(row[b]) - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  run.planted_delta = std::abs(pearson_pair(real) - pearson_pair(synth));
  return run;
}

MetricReport centralized_twin(const std::string& out_dir) {
  ExperimentConfig cfg = desk_config(out_dir);
  TableSchema schema = load_schema(cfg.schema_path);
  RawTable real = load_table_file(cfg.csv_path, schema);
  PartitionConfig pc;  // the all-central baseline: D2_0 G2_0 with one holder
  pc.block_dim = cfg.partition.block_dim;
  TrainingConfig tc = cfg.training;
  tc.rounds = resolve_rounds(cfg, real.n_rows());
  CentralizedTrainer mono(schema, real, pc, tc);
  mono.train();
  RawTable synth = mono.synthesize(kDeskRows);
  return statistical_similarity(real, synth, &cfg.assignment);
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc)
      only = std::atoi(argv[i + 1]);
  auto enabled = [&](int id) { return only == 0 || only == id; };

  const std::string work =
      (fs::temp_directory_path() / "gtv_acceptance").string();
  fs::remove_all(work);
  fs::create_directories(work);

  // -------------------------------------------------------------- 1
  criterion(1, "gradient correctness suite", enabled(1), [](std::string& d) {
    auto t0 = std::chrono::steady_clock::now();
    double worst_param = 0, worst_input = 0, worst_pen = 0;
    std::size_t checked = 0;
    // every layer kind in isolation
    std::vector<NetSpec> singles;
    auto one = [&](std::vector<LayerSpec> layers, std::size_t in) {
      NetSpec s;
      s.input_dim = in;
      BlockSpec b;
      b.layers = std::move(layers);
      s.blocks.push_back(b);
      singles.push_back(s);
    };
    one({LayerSpec::dense(6, 5)}, 6);
    one({LayerSpec::dense(6, 6), LayerSpec::batch_norm(6)}, 6);
    one({LayerSpec::relu()}, 5);
    one({LayerSpec::leaky_relu(0.2)}, 5);
    one({LayerSpec::dropout(0.4)}, 5);
    one({LayerSpec::tanh()}, 5);
    std::uint64_t seed = 100;
    for (auto& spec : singles) {
      Net net(spec);
      auto rng = derived_stream(seed, "init");
      net.init_params(rng);
      Tensor2 x(8, spec.input_dim);
      auto xr = derived_stream(seed, "x");
      for (double& v : x.data) v = xr.normal();
      auto res = finite_difference_check(net, x, seed++);
      worst_param = std::max(worst_param, res.max_param_rel_err);
      worst_input = std::max(worst_input, res.max_input_rel_err);
      checked += res.checked;
    }
    // random composed nets within the stated envelope
    for (std::uint64_t s = 1; s <= 10; ++s) {
      auto c = random_net_case(s, false, 3, 32, 16);
      Net net(c.spec);
      auto rng = derived_stream(s, "init");
      net.init_params(rng);
      auto res = finite_difference_check(net, c.input, s);
      worst_param = std::max(worst_param, res.max_param_rel_err);
      worst_input = std::max(worst_input, res.max_input_rel_err);
      checked += res.checked;
    }
    for (std::uint64_t s = 1; s <= 4; ++s) {
      auto c = random_net_case(s, true, 3, 32, 16);
      Net net(c.spec);
      auto rng = derived_stream(s, "init");
      net.init_params(rng);
      Tensor2 fake = c.input;
      auto nr = derived_stream(s, "fake");
      for (double& v : fake.data) v += nr.normal();
      worst_pen = std::max(worst_pen, penalty_finite_difference_check(
                                          net, c.input, fake, 10.0, s));
    }
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::ostringstream os;
    os << "param " << worst_param << ", input " << worst_input << ", penalty "
       << worst_pen << ", coords " << checked;
    d = os.str();
    return worst_param < 1e-4 && worst_input < 1e-4 && worst_pen < 1e-3 &&
           checked > 1000 && secs < 60.0;
  });

  // -------------------------------------------------------------- 2
  criterion(2, "centralized equivalence over 50+ steps", enabled(2),
            [&](std::string& d) {
              auto t0 = std::chrono::steady_clock::now();
              write_desk_fixture(work + "/c2");
              ExperimentConfig cfg = desk_config(work + "/c2");
              TableSchema schema = load_schema(cfg.schema_path);
              RawTable real = load_table_file(cfg.csv_path, schema);
              ColumnAssignment all;
              all.client_columns = {{"x1", "g1", "x2", "g2"}};
              PartitionConfig pc;  // D2_0 G2_0
              TrainingConfig tc = cfg.training;
              tc.rounds = 11;  // 55 disc steps + 11 gen steps
              tc.shuffle_enabled = false;
              Federation fed(schema, real, all, pc, tc);
              auto fed_logs = fed.train();
              fed.stop();
              CentralizedTrainer mono(schema, real, pc, tc);
              auto mono_logs = mono.train();
              double max_rel = 0;
              std::size_t steps = 0;
              for (std::size_t r = 0; r < fed_logs.size(); ++r) {
                for (std::size_t j = 0; j < fed_logs[r].disc_losses.size();
                     ++j) {
                  double a = fed_logs[r].disc_losses[j];
                  double b = mono_logs[r].disc_losses[j];
                  max_rel = std::max(max_rel, std::abs(a - b) /
                                                  std::max(1e-12, std::abs(b)));
                  ++steps;
                }
                double a = fed_logs[r].gen_loss, b = mono_logs[r].gen_loss;
                max_rel = std::max(
                    max_rel, std::abs(a - b) / std::max(1e-12, std::abs(b)));
                ++steps;
              }
              double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
              std::ostringstream os;
              os << steps << " steps, max rel dev " << max_rel;
              d = os.str();
              return steps >= 50 && max_rel < 1e-9 && secs < 120.0;
            });

  // -------------------------------------------------------------- 3
  criterion(3, "encoder round trip on 1k-row randomized tables", enabled(3),
            [](std::string& d) {
              std::size_t exact = 0, close = 0, clamped = 0, total = 0;
              for (std::uint64_t seed = 1; seed <= 3; ++seed) {
                TableSchema s;
                s.columns.push_back(
                    {"c", ColumnKind::Categorical, {"u", "v", "w"}, {}});
                s.columns.push_back({"n1", ColumnKind::Continuous, {}, {}});
                s.columns.push_back({"n2", ColumnKind::Continuous, {}, {}});
                s.columns.push_back({"m", ColumnKind::Mixed, {}, {-5.0}});
                RawTable t;
                t.schema = s;
                auto rng = derived_stream(seed, "c3");
                const char* cats[3] = {"u", "v", "w"};
                for (int i = 0; i < 1000; ++i) {
                  double n1 = rng.uniform() < 0.5 ? rng.normal()
                                                  : 6 + 0.5 * rng.normal();
                  double n2 = 100 + 10 * rng.normal();
                  double m =
                      rng.uniform() < 0.25 ? -5.0 : 2 + 0.8 * rng.normal();
                  t.rows.push_back({Cell{std::string(cats[rng.uniform_below(3)])},
                                    Cell{n1}, Cell{n2}, Cell{m}});
                  t.row_ids.push_back(i);
                }
                auto codec = TableCodec::fit(t, EncoderOptions{}, seed);
                auto enc = codec.encode(t, seed);
                auto back = codec.decode(enc.matrix);
                // scalar offsets per column for the in-range test
                std::map<std::size_t, std::size_t> scalar_off;
                std::size_t part_i = 0;
                for (std::size_t c = 0; c < s.columns.size(); ++c) {
                  if (s.columns[c].kind == ColumnKind::Categorical) {
                    part_i += 1;
                    continue;
                  }
                  scalar_off[c] = codec.layout().parts[part_i].offset;
                  part_i += 2;
                }
                for (std::size_t r = 0; r < t.n_rows(); ++r)
                  for (std::size_t c = 0; c < t.n_cols(); ++c) {
                    ++total;
                    if (s.columns[c].kind == ColumnKind::Categorical) {
                      if (cat(back.rows[r][c]) != cat(t.rows[r][c])) return false;
                      ++exact;
                      continue;
                    }
                    double orig = num(t.rows[r][c]);
                    if (s.columns[c].kind == ColumnKind::Mixed &&
                        orig == -5.0) {
                      if (num(back.rows[r][c]) != -5.0) return false;
                      ++exact;
                      continue;
                    }
                    double sc = enc.matrix.at(r, scalar_off.at(c));
                    if (std::abs(sc) < 1.0) {
                      double rec = num(back.rows[r][c]);
                      if (std::abs(rec - orig) >
                          1e-9 * std::max(1.0, std::abs(orig)))
                        return false;
                      ++close;
                    } else {
                      ++clamped;
                    }
                  }
              }
              std::ostringstream os;
              os << total << " cells: " << exact << " exact, " << close
                 << " within 1e-9, " << clamped << " clamped out of range";
              d = os.str();
              return clamped < total / 50;
            });

  // -------------------------------------------------------------- 4
  criterion(4, "shuffle alignment across clients and rounds", enabled(4),
            [](std::string& d) {
              std::size_t rounds_run = 0;
              for (std::size_t n_clients = 2; n_clients <= 5; ++n_clients) {
                RawTable t = make_wide_table(64, 17 + n_clients);
                auto a = round_robin_assignment(t.schema, n_clients);
                auto parts = split_columns(t, a);
                ShuffleState st{555 + n_clients, 0};
                std::vector<std::vector<std::uint32_t>> perms;
                for (int round = 0; round < 100; ++round) {
                  st = shuffle_rows(parts, st);
                  for (std::size_t i = 1; i < parts.size(); ++i)
                    if (parts[i].row_ids != parts[0].row_ids) return false;
                  perms.push_back(parts[0].row_ids);
                  ++rounds_run;
                }
                std::sort(perms.begin(), perms.end());
                if (std::adjacent_find(perms.begin(), perms.end()) !=
                    perms.end())
                  return false;  // collision: 64! makes this impossible
              }
              std::ostringstream os;
              os << rounds_run << " aligned rounds, all permutations distinct";
              d = os.str();
              return true;
            });

  // -------------------------------------------------------------- 5
  criterion(5, "cv category and contributor distributions", enabled(5),
            [](std::string& d) {
              // contributor: two categorical columns at client 0 with known
              // counts; a second client with 1 of 4 columns -> P_r = 3/4, 1/4
              TableSchema s;
              s.columns.push_back(
                  {"c1", ColumnKind::Categorical, {"A", "B"}, {}});
              s.columns.push_back(
                  {"c2", ColumnKind::Categorical, {"X", "Y", "Z"}, {}});
              s.columns.push_back({"v", ColumnKind::Continuous, {}, {}});
              s.columns.push_back(
                  {"c3", ColumnKind::Categorical, {"q", "r"}, {}});
              RawTable t;
              t.schema = s;
              auto rng = derived_stream(71, "c5");
              std::size_t n = 500;
              std::size_t cnt1[2] = {0, 0}, cnt2[3] = {0, 0, 0};
              for (std::size_t i = 0; i < n; ++i) {
                std::size_t a = rng.uniform() < 0.8 ? 0 : 1;
                double u = rng.uniform();
                std::size_t b = u < 0.6 ? 0 : (u < 0.9 ? 1 : 2);
                cnt1[a]++;
                cnt2[b]++;
                t.rows.push_back({Cell{std::string(a == 0 ? "A" : "B")},
                                  Cell{std::string(b == 0 ? "X"
                                                          : b == 1 ? "Y" : "Z")},
                                  Cell{rng.normal()},
                                  Cell{std::string(i % 2 ? "q" : "r")}});
                t.row_ids.push_back(static_cast<std::uint32_t>(i));
              }
              ColumnAssignment assignment;
              assignment.client_columns = {{"c1", "c2", "v"}, {"c3"}};
              auto layout = build_cv_layout(s, assignment);
              auto ratios = compute_ratio_vector(assignment);

              // category draws at client 0: expected mass = uniform column
              // pick x normalized log(1 + count)
              auto parts = split_columns(t, assignment);
              auto ci = CategoryIndex::build(parts[0]);
              auto cr = derived_stream(72, "draws");
              auto draw = generate_cv_for_client(ci, layout, 0, 10000, cr);
              std::vector<std::size_t> obs(5, 0);
              for (std::size_t r = 0; r < 10000; ++r) {
                std::size_t span = draw.chosen_span[r];
                std::size_t base = span == 0 ? 0 : 2;
                obs[base + draw.chosen_category[r]] += 1;
              }
              double w1a = std::log1p(double(cnt1[0]));
              double w1b = std::log1p(double(cnt1[1]));
              double w2x = std::log1p(double(cnt2[0]));
              double w2y = std::log1p(double(cnt2[1]));
              double w2z = std::log1p(double(cnt2[2]));
              std::vector<double> expected{
                  0.5 * w1a / (w1a + w1b), 0.5 * w1b / (w1a + w1b),
                  0.5 * w2x / (w2x + w2y + w2z), 0.5 * w2y / (w2x + w2y + w2z),
                  0.5 * w2z / (w2x + w2y + w2z)};
              auto cat_res = chi2_test(obs, expected);

              std::vector<std::size_t> picks(2, 0);
              for (int i = 0; i < 10000; ++i) {
                auto pr = derived_stream(73, "pick", i);
                picks[pick_cv_contributor(ratios, layout, pr)] += 1;
              }
              auto pick_res = chi2_test(picks, {0.75, 0.25});

              std::ostringstream os;
              os << "category p " << cat_res.p_value << ", contributor p "
                 << pick_res.p_value;
              d = os.str();
              return cat_res.p_value > 0.01 && pick_res.p_value > 0.01;
            });

  // -------------------------------------------------------------- 6
  criterion(6, "privacy leak without shuffling, defense with it", enabled(6),
            [&](std::string& d) {
              auto t0 = std::chrono::steady_clock::now();
              TableSchema s;
              s.columns.push_back({"gender",
                                   ColumnKind::Categorical,
                                   {"male", "female"},
                                   {}});
              s.columns.push_back(
                  {"loan", ColumnKind::Categorical, {"yes", "no"}, {}});
              RawTable toy;
              toy.schema = s;
              const char* g[6] = {"male", "male", "male",
                                  "female", "female", "female"};
              const char* l[6] = {"yes", "yes", "no", "no", "no", "no"};
              for (int i = 0; i < 6; ++i) {
                toy.rows.push_back(
                    {Cell{std::string(g[i])}, Cell{std::string(l[i])}});
                toy.row_ids.push_back(i);
              }
              ColumnAssignment assignment;
              assignment.client_columns = {{"gender"}, {"loan"}};
              auto layout = build_cv_layout(s, assignment);

              auto run_toy = [&](bool shuffling, std::uint64_t seed,
                                 std::vector<RawTable>& end_tables) {
                TrainingConfig tc;
                tc.rounds = 40;
                tc.disc_epochs = 2;
                tc.batch = 4;
                tc.z_dim = 8;
                tc.server_seed = seed;
                tc.shuffle_seed = seed * 31 + 7;
                tc.shuffle_enabled = shuffling;
                tc.encoder.max_modes = 2;
                PartitionConfig pc;
                pc.block_dim = 8;
                pc.gen_server_blocks = 1;
                pc.gen_client_blocks = 1;
                pc.disc_server_blocks = 1;
                pc.disc_client_blocks = 1;
                auto dir = fs::path(work) / ("c6_" + std::to_string(seed) +
                                             (shuffling ? "s" : "n"));
                fs::create_directories(dir);
                auto log_path = (dir / "m.jsonl").string();
                MessageLog log;
                log.open(log_path, false);
                Federation fed(s, toy, assignment, pc, tc, &log);
                fed.train();
                end_tables = {fed.client(0).table(), fed.client(1).table()};
                fed.stop();
                log.close();
                auto view = ServerView::from_log(read_message_log(log_path));
                return reconstruct(view, 6);
              };

              // leak: shuffling off reconstructs everything
              std::vector<RawTable> truth;
              auto leak_report = run_toy(false, 1, truth);
              auto leak = reconstruction_accuracy(leak_report, layout, truth);
              bool ratios_ok = false;
              {
                bool saw11 = false, saw12 = false;
                for (const auto& col : leak_report.columns) {
                  std::vector<std::size_t> counts;
                  for (auto& [bit, c] : col.covered_counts)
                    counts.push_back(c);
                  std::sort(counts.begin(), counts.end());
                  if (counts == std::vector<std::size_t>{3, 3}) saw11 = true;
                  if (counts == std::vector<std::size_t>{2, 4}) saw12 = true;
                }
                ratios_ok = saw11 && saw12;
              }
              bool leak_ok = leak.coverage == 1.0 && leak.accuracy == 1.0 &&
                             ratios_ok;

              // defense: mean accuracy over 100 seeds inside the permuted-
              // truth null band
              std::vector<double> attack_acc;
              std::vector<double> null_acc;
              for (std::uint64_t seed = 1; seed <= 100; ++seed) {
                std::vector<RawTable> end_tables;
                auto report = run_toy(true, seed, end_tables);
                auto acc =
                    reconstruction_accuracy(report, layout, end_tables);
                if (acc.confident == 0) continue;
                attack_acc.push_back(acc.accuracy);
                for (std::uint64_t k = 0; k < 20; ++k) {
                  auto rng = derived_stream(seed, "null", k);
                  auto perm = rng.permutation(6);
                  std::vector<RawTable> permuted = end_tables;
                  for (auto& pt : permuted) {
                    pt.rows = apply_permutation(pt.rows, perm);
                    pt.row_ids = apply_permutation(pt.row_ids, perm);
                  }
                  null_acc.push_back(
                      reconstruction_accuracy(report, layout, permuted)
                          .accuracy);
                }
              }
              double mean_attack = mean_of(attack_acc);
              double mu0 = mean_of(null_acc);
              double sigma0 = stddev_of(null_acc);
              bool defense_ok =
                  std::abs(mean_attack - mu0) <= 3.0 * sigma0;
              double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
              std::ostringstream os;
              os << "leak acc " << leak.accuracy << " cov " << leak.coverage
                 << (ratios_ok ? ", ratios 1:1 & 1:2" : ", ratios wrong")
                 << "; shuffled mean acc " << mean_attack << " vs null "
                 << mu0 << " +- 3*" << sigma0;
              d = os.str();
              return leak_ok && defense_ok && secs < 60.0;
            });

  // -------------------------------------------------------------- 7
  static DeskRun desk;
  criterion(7, "desk-scale fidelity vs the centralized baseline", enabled(7),
            [&](std::string& d) {
              auto t0 = std::chrono::steady_clock::now();
              desk = desk_run(work + "/c7");
              MetricReport cent = centralized_twin(work + "/c7");
              desk.cent_report = cent;
              double jsd_f = desk.fed_report.jsd.value_or(1e9);
              double wd_f = desk.fed_report.wd.value_or(1e9);
              double across = desk.fed_report.corr_across_client.value_or(1e9);
              double jsd_c = cent.jsd.value_or(1e9);
              double wd_c = cent.wd.value_or(1e9);
              bool abs_ok = jsd_f <= 0.1 && across <= 0.25;
              // lower is better for all three: the band bounds degradation
              // relative to the centralized twin (outperforming it passes)
              auto rel_ok = [](double fed, double c) {
                return fed <= 1.25 * c;
              };
              bool band_ok = rel_ok(jsd_f, jsd_c) && rel_ok(wd_f, wd_c) &&
                             rel_ok(desk.fed_report.corr_overall,
                                    cent.corr_overall);
              double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
              std::ostringstream os;
              os << "fed jsd " << jsd_f << " wd " << wd_f << " corr "
                 << desk.fed_report.corr_overall << " across " << across
                 << " planted-pair dev " << desk.planted_delta << "; cent jsd "
                 << jsd_c << " wd " << wd_c << " corr " << cent.corr_overall;
              d = os.str();
              return abs_ok && band_ok && secs < 1200.0;
            });

  // -------------------------------------------------------------- 8
  criterion(8, "nine partitions, 2/3/5 clients, finite losses", enabled(8),
            [](std::string& d) {
              RawTable t = make_wide_table(600, 88);
              std::size_t runs = 0;
              for (std::size_t n_clients : {2, 3, 5}) {
                auto assignment =
                    round_robin_assignment(t.schema, n_clients);
                for (std::size_t g = 0; g <= 2; ++g)
                  for (std::size_t dsc = 0; dsc <= 2; ++dsc) {
                    PartitionConfig pc;
                    pc.gen_server_blocks = g;
                    pc.gen_client_blocks = 2 - g;
                    pc.disc_server_blocks = dsc;
                    pc.disc_client_blocks = 2 - dsc;
                    TrainingConfig tc;
                    tc.rounds = 10;
                    tc.disc_epochs = 2;
                    tc.batch = 100;
                    tc.z_dim = 64;
                    tc.server_seed = 1000 + runs;
                    tc.shuffle_seed = 2000 + runs;
                    Federation fed(t.schema, t, assignment, pc, tc);
                    auto logs = fed.train();
                    fed.stop();
                    for (const auto& rl : logs) {
                      for (double v : rl.disc_losses)
                        if (!std::isfinite(v)) return false;
                      if (!std::isfinite(rl.gen_loss)) return false;
                    }
                    ++runs;
                  }
              }
              std::ostringstream os;
              os << runs << " configurations x 10 rounds";
              d = os.str();
              return runs == 27;
            });

  // -------------------------------------------------------------- 9
  criterion(9, "message hygiene on the desk-scale log", enabled(9),
            [&](std::string& d) {
              std::string log_path = desk.artifacts.message_log_path;
              if (log_path.empty() || !fs::exists(log_path)) {
                d = "criterion 7 must run first (use --only 0)";
                return false;
              }
              auto entries = read_message_log(log_path);
              std::size_t idx_msgs = 0, scanned = 0;
              for (const auto& e : entries) {
                ++scanned;
                if (e.at("leak_matches").get<int>() != 0) return false;
                if (e.at("has_idx").get<bool>()) {
                  ++idx_msgs;
                  if (e.at("kind") != "cv_announce") return false;
                  if (e.at("sender").get<int>() !=
                      e.at("contributor").get<int>())
                    return false;
                  if (e.at("recipient").get<int>() != kServerId) return false;
                }
              }
              std::ostringstream os;
              os << scanned << " messages scanned, " << idx_msgs
                 << " idx-bearing announces, zero raw-cell matches";
              d = os.str();
              return scanned > 1000 && idx_msgs > 0;
            });

  // -------------------------------------------------------------- 10
  criterion(10, "bit-identical re-run of the desk-scale config", enabled(10),
            [&](std::string& d) {
              if (desk.artifacts.checkpoint_dir.empty()) {
                d = "criterion 7 must run first (use --only 0)";
                return false;
              }
              DeskRun rerun = desk_run(work + "/c10");
              std::string a =
                  read_file(desk.artifacts.checkpoint_dir + "/shards.bin");
              std::string b =
                  read_file(rerun.artifacts.checkpoint_dir + "/shards.bin");
              bool shards_equal = a == b;
              bool metrics_equal = desk.metrics_json == rerun.metrics_json;
              std::ostringstream os;
              os << "checkpoint bytes " << (shards_equal ? "equal" : "DIFFER")
                 << ", metric reports "
                 << (metrics_equal ? "equal" : "DIFFER");
              d = os.str();
              return shards_equal && metrics_equal;
            });

  bool all_pass = true;
  double total = 0;
  for (const auto& o : outcomes) {
    all_pass = all_pass && o.pass;
    total += o.seconds;
  }
  std::cout << (all_pass ? "ALL CRITERIA PASS" : "CRITERIA FAILED") << " ("
            << outcomes.size() << " run, " << total << "s)\n";
  return all_pass ? 0 : 1;
}

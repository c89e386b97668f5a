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

#include <vector>

#include "gtv/conditioning.hpp"
#include "gtv/encoder.hpp"
#include "gtv/model.hpp"
#include "gtv/nn.hpp"
#include "gtv/partition.hpp"
#include "gtv/protocol.hpp"
#include "gtv/table.hpp"

namespace gtv {

// Single-process trainer with one implicit client holding every column.
// No messages, no actors: the same shard networks are chained directly.
// Draws come from the same derived streams as the federated run, so with
// one client and identical seeds the two paths must produce identical
// per-step losses — any deviation is a protocol plumbing bug.
// Doubles as the centralized baseline for fidelity comparisons.

class CentralizedTrainer {
 public:
  CentralizedTrainer(const TableSchema& schema, const RawTable& table,
                     const PartitionConfig& pc, const TrainingConfig& cfg)
      : cfg_(cfg) {
    require<ValidationError>(cfg.batch >= 1 && cfg.batch <= table.n_rows(),
                             "batch must be in [1, n_rows]");
    ColumnAssignment all;
    all.client_columns.emplace_back();
    for (const auto& c : schema.columns)
      all.client_columns[0].push_back(c.name);
    RatioVector ratios;
    ratios.weights = {1.0};
    plan_ = plan_partition(pc, ratios);
    cv_layout_ = build_cv_layout(schema, all);
    raw_ = table;
    codec_ = TableCodec::fit(raw_, cfg.encoder, cfg.server_seed);
    enc_ = codec_.encode(raw_, cfg.server_seed);
    cat_index_ = CategoryIndex::build(raw_);
    shuffle_.shared_seed = cfg.shuffle_seed;

    auto shards = build_shards(plan_, cfg.z_dim, cv_layout_.width,
                               {enc_.layout.total_width}, cfg.net,
                               cfg.server_seed);
    gen_top_ = std::move(shards.gen_top);
    gen_bottom_ = std::move(shards.gen_bottoms[0]);
    disc_top_ = std::move(shards.disc_top);
    disc_bottom_ = std::move(shards.disc_bottoms[0]);
    cv_filter_ = std::move(shards.cv_filter);
    boundary_widths_ = shards.boundary_widths;

    for (std::size_t s : cv_layout_.spans_of_client(0)) {
      const auto& span = cv_layout_.spans[s];
      for (const auto& part : enc_.layout.parts)
        if (part.column == span.column && part.kind == SpanKind::OneHot)
          span_to_enc_[s] = {part.offset, part.width};
    }
  }

  std::vector<RoundLog> train() {
    std::vector<RoundLog> logs;
    for (std::size_t r = 0; r < cfg_.rounds; ++r) {
      RoundLog rl;
      rl.round = static_cast<int>(r);
      for (std::size_t j = 0; j < cfg_.disc_epochs; ++j)
        rl.disc_losses.push_back(
            disc_step(static_cast<int>(r), static_cast<int>(j)));
      auto [gl, ce] = gen_step(static_cast<int>(r));
      rl.gen_loss = gl;
      rl.cond_loss = ce;
      end_round(static_cast<int>(r));
      logs.push_back(std::move(rl));
    }
    return logs;
  }

  RawTable synthesize(std::size_t n_rows) {
    require<ValidationError>(n_rows >= 1, "synthesize needs n_rows >= 1");
    std::vector<std::vector<Cell>> buffer;
    std::size_t batches = (n_rows + cfg_.batch - 1) / cfg_.batch;
    for (std::size_t b = 0; b < batches; ++b) {
      CvDraw draw = draw_cv(0, phase::kSynth, static_cast<int>(b));
      auto zr = derived_stream(cfg_.server_seed, "synth.z", b);
      Tensor2 z(cfg_.batch, cfg_.z_dim);
      for (double& v : z.data) v = zr.normal();
      Tensor2 gt_in = hconcat({&z, &draw.cv});
      auto unused = derived_stream(0, "gt");
      Tensor2 gt_out = gen_top_.forward(gt_in, Mode::Eval, unused, nullptr);
      Tensor2 raw_out =
          gen_bottom_.forward(gt_out, Mode::Eval, unused, nullptr);
      Tensor2 out =
          apply_output_activations(raw_out, enc_.layout,
                                   cfg_.gumbel_temperature, Mode::Eval,
                                   unused, nullptr);
      RawTable piece = codec_.decode(out);
      for (auto& row : piece.rows) buffer.push_back(std::move(row));
    }
    buffer.resize(n_rows);
    auto rng = derived_stream(cfg_.publication_seed, "publish");
    auto perm = rng.permutation(buffer.size());
    auto published = apply_permutation(buffer, perm);
    RawTable out;
    out.schema = codec_.schema();
    out.rows = std::move(published);
    out.row_ids.resize(out.rows.size());
    for (std::size_t i = 0; i < out.row_ids.size(); ++i)
      out.row_ids[i] = static_cast<std::uint32_t>(i);
    return out;
  }

  const Net& gen_top() const { return gen_top_; }
  const Net& gen_bottom() const { return gen_bottom_; }
  const Net& disc_top() const { return disc_top_; }
  const Net& disc_bottom() const { return disc_bottom_; }
  const Net& cv_filter() const { return cv_filter_; }
  const TableCodec& codec() const { return codec_; }

 private:
  CvDraw draw_cv(int round, const std::string& ph, int step) {
    auto pick = derived_stream(cfg_.server_seed, "cv.pick", round, ph, step);
    std::size_t p = pick_cv_contributor(plan_.ratios, cv_layout_, pick);
    auto rng =
        derived_stream(cfg_.server_seed, "cv.draw", p, round, ph, step);
    return generate_cv_for_client(cat_index_, cv_layout_, p, cfg_.batch, rng);
  }

  Tensor2 noise(int round, const std::string& ph, int step) {
    auto zr = derived_stream(cfg_.server_seed, "z", round, ph, step);
    Tensor2 z(cfg_.batch, cfg_.z_dim);
    for (double& v : z.data) v = zr.normal();
    return z;
  }

  static double mean(const Tensor2& t) {
    double s = 0.0;
    for (double v : t.data) s += v;
    return s / static_cast<double>(t.rows);
  }
  static Tensor2 constant(std::size_t rows, double v) {
    Tensor2 t(rows, 1);
    for (double& x : t.data) x = v;
    return t;
  }

  double disc_step(int round, int epoch) {
    const std::size_t B = cfg_.batch;
    CvDraw draw = draw_cv(round, phase::kDisc, epoch);

    Tensor2 z = noise(round, phase::kDisc, epoch);
    Tensor2 gt_in = hconcat({&z, &draw.cv});
    auto unused = derived_stream(0, "gt");
    Tensor2 gt_out = gen_top_.forward(gt_in, Mode::Train, unused, nullptr);

    auto gum = derived_stream(cfg_.server_seed, "gumbel", 0, round,
                              phase::kDisc, epoch);
    Tensor2 raw_out = gen_bottom_.forward(gt_out, Mode::Train, gum, nullptr);
    ActivationTape act;
    Tensor2 fake_enc = apply_output_activations(
        raw_out, enc_.layout, cfg_.gumbel_temperature, Mode::Train, gum, &act);

    Net::Tape fake_tape;
    auto dropf = derived_stream(cfg_.server_seed, "drop.db.fake", 0, round,
                                phase::kDisc, epoch);
    Tensor2 fake_logits =
        disc_bottom_.forward(fake_enc, Mode::Train, dropf, &fake_tape);

    Tensor2 real_rows = row_gather(enc_.matrix, draw.idx);
    Net::Tape real_tape;
    auto dropr = derived_stream(cfg_.server_seed, "drop.db.real", 0, round,
                                phase::kDisc, epoch);
    Tensor2 real_logits =
        disc_bottom_.forward(real_rows, Mode::Train, dropr, &real_tape);

    Net::Tape cv_tape;
    auto cvr =
        derived_stream(cfg_.server_seed, "cvf", round, phase::kDisc, epoch);
    Tensor2 cv_emb = cv_filter_.forward(draw.cv, Mode::Train, cvr, &cv_tape);

    Tensor2 in_s = concat_logits({fake_logits}, cv_emb);
    Tensor2 in_r = concat_logits({real_logits}, cv_emb);

    Net::Tape tape_s, tape_r;
    auto ds = derived_stream(cfg_.server_seed, "drop.dt.fake", round,
                             phase::kDisc, epoch);
    Tensor2 s_fake = disc_top_.forward(in_s, Mode::Train, ds, &tape_s);
    auto dr = derived_stream(cfg_.server_seed, "drop.dt.real", round,
                             phase::kDisc, epoch);
    Tensor2 s_real = disc_top_.forward(in_r, Mode::Train, dr, &tape_r);

    auto eps = derived_stream(cfg_.server_seed, "gp.eps", round, phase::kDisc,
                              epoch);
    auto dgp = derived_stream(cfg_.server_seed, "drop.dt.gp", round,
                              phase::kDisc, epoch);
    PenaltyResult pen = gradient_penalty(disc_top_, in_r, in_s,
                                         cfg_.gp_lambda, eps, dgp);

    double loss = mean(s_fake) - mean(s_real) + pen.value;
    check_finite(loss, "discriminator loss");

    std::vector<double> top_grads(disc_top_.param_count(), 0.0);
    Tensor2 d_in_s =
        disc_top_.backward(tape_s, constant(B, 1.0 / double(B)), top_grads);
    Tensor2 d_in_r =
        disc_top_.backward(tape_r, constant(B, -1.0 / double(B)), top_grads);
    for (std::size_t i = 0; i < top_grads.size(); ++i)
      top_grads[i] += pen.param_grads[i];
    disc_top_.apply_adam(top_grads, disc_top_opt_, cfg_.adam);

    std::size_t cv_off = in_s.cols - cv_emb.cols;
    Tensor2 d_cv = col_slice(d_in_s, cv_off, cv_emb.cols);
    {
      Tensor2 d_cv_r = col_slice(d_in_r, cv_off, cv_emb.cols);
      for (std::size_t i = 0; i < d_cv.size(); ++i)
        d_cv.data[i] += d_cv_r.data[i];
    }
    std::vector<double> cv_grads(cv_filter_.param_count(), 0.0);
    cv_filter_.backward(cv_tape, d_cv, cv_grads);
    cv_filter_.apply_adam(cv_grads, cv_filter_opt_, cfg_.adam);

    std::vector<double> db_grads(disc_bottom_.param_count(), 0.0);
    disc_bottom_.backward(fake_tape, col_slice(d_in_s, 0, fake_logits.cols),
                          db_grads);
    disc_bottom_.backward(real_tape, col_slice(d_in_r, 0, real_logits.cols),
                          db_grads);
    disc_bottom_.apply_adam(db_grads, disc_bottom_opt_, cfg_.adam);
    return loss;
  }

  std::pair<double, double> gen_step(int round) {
    const std::size_t B = cfg_.batch;
    CvDraw draw = draw_cv(round, phase::kGen, 0);

    Tensor2 z = noise(round, phase::kGen, 0);
    Tensor2 gt_in = hconcat({&z, &draw.cv});
    Net::Tape gt_tape;
    auto unused = derived_stream(0, "gt");
    Tensor2 gt_out = gen_top_.forward(gt_in, Mode::Train, unused, &gt_tape);

    Net::Tape gb_tape;
    auto gum = derived_stream(cfg_.server_seed, "gumbel", 0, round,
                              phase::kGen, 0);
    Tensor2 raw_out = gen_bottom_.forward(gt_out, Mode::Train, gum, &gb_tape);
    ActivationTape act;
    Tensor2 fake_enc = apply_output_activations(
        raw_out, enc_.layout, cfg_.gumbel_temperature, Mode::Train, gum, &act);

    Net::Tape db_tape;
    auto dropf = derived_stream(cfg_.server_seed, "drop.db.fake", 0, round,
                                phase::kGen, 0);
    Tensor2 fake_logits =
        disc_bottom_.forward(fake_enc, Mode::Train, dropf, &db_tape);

    Net::Tape cv_tape;
    auto cvr =
        derived_stream(cfg_.server_seed, "cvf", round, phase::kGen, 0);
    Tensor2 cv_emb = cv_filter_.forward(draw.cv, Mode::Train, cvr, &cv_tape);
    Tensor2 in_s = concat_logits({fake_logits}, cv_emb);

    Net::Tape tape_s;
    auto ds = derived_stream(cfg_.server_seed, "drop.dt.gen", round,
                             phase::kGen, 0);
    Tensor2 s_fake = disc_top_.forward(in_s, Mode::Train, ds, &tape_s);
    double loss = -mean(s_fake);
    check_finite(loss, "generator loss");

    std::vector<double> scratch_top;
    Tensor2 d_in_s = disc_top_.backward(tape_s, constant(B, -1.0 / double(B)),
                                        scratch_top, false, false);
    std::vector<double> scratch_db;
    Tensor2 d_fake_enc = disc_bottom_.backward(
        db_tape, col_slice(d_in_s, 0, fake_logits.cols), scratch_db, false,
        false);
    Tensor2 d_raw =
        output_activations_backward(act, enc_.layout, d_fake_enc);

    double cond = 0.0;
    if (cfg_.conditional_loss) {
      double invb = 1.0 / static_cast<double>(B);
      for (std::size_t r = 0; r < B; ++r) {
        auto [off, width] = span_to_enc_.at(draw.chosen_span[r]);
        std::size_t target = draw.chosen_category[r];
        double mx = -1e300;
        for (std::size_t i = 0; i < width; ++i)
          mx = std::max(mx, raw_out.at(r, off + i));
        double s = 0.0;
        for (std::size_t i = 0; i < width; ++i)
          s += std::exp(raw_out.at(r, off + i) - mx);
        double logz = mx + std::log(s);
        cond += logz - raw_out.at(r, off + target);
        for (std::size_t i = 0; i < width; ++i) {
          double p = std::exp(raw_out.at(r, off + i) - logz);
          d_raw.at(r, off + i) += (p - (i == target ? 1.0 : 0.0)) * invb;
        }
      }
      cond *= invb;
    }

    std::vector<double> gb_grads(gen_bottom_.param_count(), 0.0);
    Tensor2 d_boundary = gen_bottom_.backward(gb_tape, d_raw, gb_grads);
    gen_bottom_.apply_adam(gb_grads, gen_bottom_opt_, cfg_.adam);

    if (plan_.config.gen_server_blocks > 0 && gen_top_.param_count() > 0) {
      std::vector<double> gt_grads(gen_top_.param_count(), 0.0);
      gen_top_.backward(gt_tape, d_boundary, gt_grads);
      gen_top_.apply_adam(gt_grads, gen_top_opt_, cfg_.adam);
    }
    return {loss + cond, cond};
  }

  void end_round(int round) {
    (void)round;
    if (cfg_.shuffle_enabled) {
      auto perm = shuffle_.permutation(raw_.n_rows());
      raw_.rows = apply_permutation(raw_.rows, perm);
      raw_.row_ids = apply_permutation(raw_.row_ids, perm);
      Tensor2 shuffled(enc_.matrix.rows, enc_.matrix.cols);
      for (std::size_t r = 0; r < perm.size(); ++r)
        std::copy(enc_.matrix.data.begin() + perm[r] * enc_.matrix.cols,
                  enc_.matrix.data.begin() + (perm[r] + 1) * enc_.matrix.cols,
                  shuffled.data.begin() + r * enc_.matrix.cols);
      enc_.matrix = std::move(shuffled);
      cat_index_ = CategoryIndex::build(raw_);
    }
    shuffle_.round_counter += 1;
    round_ += 1;
  }

  TrainingConfig cfg_;
  PartitionPlan plan_;
  CvLayout cv_layout_;
  RawTable raw_;
  TableCodec codec_;
  EncodedTable enc_;
  CategoryIndex cat_index_;
  ShuffleState shuffle_;
  Net gen_top_, gen_bottom_, disc_top_, disc_bottom_, cv_filter_;
  AdamState gen_top_opt_, gen_bottom_opt_, disc_top_opt_, disc_bottom_opt_,
      cv_filter_opt_;
  std::vector<std::size_t> boundary_widths_;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> span_to_enc_;
  int round_ = 0;
};

}  // namespace gtv

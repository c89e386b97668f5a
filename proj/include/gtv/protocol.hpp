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
#include <memory>
#include <thread>
#include <vector>

#include "gtv/conditioning.hpp"
#include "gtv/encoder.hpp"
#include "gtv/messages.hpp"
#include "gtv/model.hpp"
#include "gtv/nn.hpp"
#include "gtv/partition.hpp"
#include "gtv/table.hpp"
#include "gtv/transport.hpp"

namespace gtv {

// Lock-step training rounds between one server and N clients. Per round the
// discriminator trains for `disc_epochs` steps, the generator for one, and
// every client then applies the same secret-seeded permutation to its rows.
// All stochastic draws come from streams derived by (seed, purpose, entity,
// round, phase, step), so a run is reproducible regardless of transport or
// thread scheduling.

struct TrainingConfig {
  std::size_t rounds = 1;
  std::size_t disc_epochs = 5;
  std::size_t batch = 500;
  std::size_t z_dim = 128;
  std::uint64_t server_seed = 1;
  std::uint64_t shuffle_seed = 2;
  std::uint64_t publication_seed = 3;
  AdamHyper adam;
  double gp_lambda = 10.0;
  double gumbel_temperature = 0.2;
  bool conditional_loss = true;
  bool shuffle_enabled = true;
  // reuse a non-contributor's full-table bottom logits while its bottom
  // discriminator is unchanged within a round; dormant in normal training
  // because that net updates every step
  bool cache_real_logits = false;
  NetHyper net;
  EncoderOptions encoder;
};

namespace phase {
inline constexpr const char* kDisc = "disc";
inline constexpr const char* kGen = "gen";
inline constexpr const char* kSynth = "synth";
}  // namespace phase

// ---------------------------------------------------------------------------
// client actor
// ---------------------------------------------------------------------------

class ClientNode {
 public:
  ClientNode(std::size_t id, RawTable table, TableCodec codec,
             const PartitionPlan& plan, const CvLayout& cv_layout,
             const TrainingConfig& cfg, Net gen_bottom, Net disc_bottom)
      : id_(id),
        cfg_(cfg),
        plan_(plan),
        cv_layout_(cv_layout),
        raw_(std::move(table)),
        codec_(std::move(codec)),
        gen_bottom_(std::move(gen_bottom)),
        disc_bottom_(std::move(disc_bottom)) {
    enc_ = codec_.encode(raw_, cfg_.server_seed);
    cat_index_ = CategoryIndex::build(raw_);
    shuffle_.shared_seed = cfg_.shuffle_seed;
    // spans this client conditions on, mapped into its encoded layout
    for (std::size_t s : cv_layout_.spans_of_client(id_)) {
      const auto& span = cv_layout_.spans[s];
      for (const auto& part : enc_.layout.parts)
        if (part.column == span.column && part.kind == SpanKind::OneHot)
          span_to_enc_[s] = {part.offset, part.width};
    }
  }

  std::size_t n_rows() const { return raw_.n_rows(); }
  std::size_t encoded_width() const { return enc_.layout.total_width; }
  const RawTable& table() const { return raw_; }
  const EncodedTable& encoded() const { return enc_; }
  const TableCodec& codec() const { return codec_; }
  const Net& gen_bottom() const { return gen_bottom_; }
  const Net& disc_bottom() const { return disc_bottom_; }
  Net& gen_bottom() { return gen_bottom_; }
  Net& disc_bottom() { return disc_bottom_; }
  const AdamState& gen_opt() const { return gen_opt_; }
  const AdamState& disc_opt() const { return disc_opt_; }

  /// Actor loop; returns on Shutdown.
  void serve(Duplex& link) {
    for (;;) {
      Message m = link.recv();
      if (m.kind == MsgKind::Shutdown) return;
      handle(m, link);
    }
  }

  void handle(const Message& m, Duplex& link) {
    switch (m.kind) {
      case MsgKind::CvRequest: on_cv_request(m, link); break;
      case MsgKind::SplitGenLogits: on_gen_logits(m, link); break;
      case MsgKind::GradDown: on_grad_down(m, link); break;
      case MsgKind::ShuffleBarrier: on_shuffle(m, link); break;
      case MsgKind::SynthRequest: on_synth_request(m, link); break;
      default:
        fail<ProtocolError>("client ", id_, ": unexpected message kind ",
                            to_string(m.kind));
    }
  }

 private:
  Message reply(const Message& req) const {
    Message r;
    r.round = req.round;
    r.phase = req.phase;
    r.step = req.step;
    r.sender = static_cast<int>(id_);
    r.recipient = kServerId;
    return r;
  }

  void check_round(const Message& m) const {
    if (m.phase == phase::kSynth) return;  // synthesis is post-training
    require<ProtocolError>(m.round == round_, "client ", id_,
                           " desynchronized: round tag ", m.round,
                           " but local round ", round_);
  }

  void on_cv_request(const Message& m, Duplex& link) {
    check_round(m);
    auto rng = derived_stream(cfg_.server_seed, "cv.draw", id_, m.round,
                              m.phase, m.step);
    draw_ = generate_cv_for_client(cat_index_, cv_layout_, id_, cfg_.batch,
                                   rng);
    Message r = reply(m);
    r.kind = MsgKind::CvAnnounce;
    r.contributor = static_cast<int>(id_);
    r.matrix = draw_.cv;
    if (m.phase != phase::kSynth) r.idx = draw_.idx;  // idx: server only
    link.send(std::move(r));
  }

  void on_gen_logits(const Message& m, Duplex& link) {
    check_round(m);
    if (m.phase == phase::kSynth) {
      // eval path: generate, decode, buffer until publication
      auto unused = derived_stream(0, "eval");
      Tensor2 raw_out =
          gen_bottom_.forward(m.matrix, Mode::Eval, unused, nullptr);
      Tensor2 out = apply_output_activations(raw_out, enc_.layout,
                                             cfg_.gumbel_temperature,
                                             Mode::Eval, unused, nullptr);
      RawTable piece = codec_.decode(out);
      for (auto& row : piece.rows) synth_buffer_.push_back(std::move(row));
      Message r = reply(m);
      r.kind = MsgKind::SynthRows;
      r.count = synth_buffer_.size();
      link.send(std::move(r));
      return;
    }

    const bool gen_phase = m.phase == phase::kGen;
    pending_ = PendingStep{};
    pending_.contributor = m.contributor;

    auto gum = derived_stream(cfg_.server_seed, "gumbel", id_, m.round,
                              m.phase, m.step);
    Tensor2 raw_out = gen_bottom_.forward(m.matrix, Mode::Train, gum,
                                          gen_phase ? &pending_.gen_tape
                                                    : nullptr);
    pending_.raw_out = raw_out;
    Tensor2 fake_enc = apply_output_activations(
        raw_out, enc_.layout, cfg_.gumbel_temperature, Mode::Train, gum,
        &pending_.act_tape);

    auto dropf = derived_stream(cfg_.server_seed, "drop.db.fake", id_, m.round,
                                m.phase, m.step);
    Tensor2 fake_logits = disc_bottom_.forward(fake_enc, Mode::Train, dropf,
                                               &pending_.disc_fake_tape);
    Message rf = reply(m);
    rf.kind = MsgKind::BottomDiscLogits;
    rf.tag = "fake";
    rf.matrix = std::move(fake_logits);
    link.send(std::move(rf));

    if (!gen_phase) {
      // real path: contributor selects its idx rows, everyone else runs the
      // whole table and lets the server pick rows from the logits
      if (m.contributor == static_cast<int>(id_)) {
        Tensor2 rows = row_gather(enc_.matrix, draw_.idx);
        auto dropr = derived_stream(cfg_.server_seed, "drop.db.real", id_,
                                    m.round, m.phase, m.step);
        Tensor2 real_logits = disc_bottom_.forward(
            rows, Mode::Train, dropr, &pending_.disc_real_tape);
        Message rr = reply(m);
        rr.kind = MsgKind::BottomDiscLogits;
        rr.tag = "real";
        rr.matrix = std::move(real_logits);
        link.send(std::move(rr));
        return;
      }
      // the cache is only sound when the bottom is deterministic (no
      // dropout layer) and untouched since the cached pass
      bool cacheable = cfg_.cache_real_logits && !net_has_dropout();
      if (cacheable && real_cache_version_ == disc_bottom_.version() &&
          real_cache_round_ == m.round) {
        pending_.disc_real_tape = real_cache_tape_;
        Message rr = reply(m);
        rr.kind = MsgKind::BottomDiscLogits;
        rr.tag = "real";
        rr.matrix = real_cache_logits_;
        link.send(std::move(rr));
        return;
      }
      auto dropr = derived_stream(cfg_.server_seed, "drop.db.real", id_,
                                  m.round, m.phase, m.step);
      Tensor2 real_logits = disc_bottom_.forward(enc_.matrix, Mode::Train,
                                                 dropr,
                                                 &pending_.disc_real_tape);
      if (cacheable) {
        real_cache_version_ = disc_bottom_.version();
        real_cache_round_ = m.round;
        real_cache_tape_ = pending_.disc_real_tape;
        real_cache_logits_ = real_logits;
      }
      Message rr = reply(m);
      rr.kind = MsgKind::BottomDiscLogits;
      rr.tag = "real";
      rr.matrix = std::move(real_logits);
      link.send(std::move(rr));
    }
  }

  bool net_has_dropout() const {
    for (const auto& b : disc_bottom_.spec().blocks)
      for (const auto& l : b.layers)
        if (l.kind == LayerKind::Dropout && l.rate > 0.0) return true;
    return false;
  }

  void on_grad_down(const Message& m, Duplex& link) {
    check_round(m);
    if (m.tag == "fake") {
      pending_.disc_grads.assign(disc_bottom_.param_count(), 0.0);
      disc_bottom_.backward(pending_.disc_fake_tape, m.matrix,
                            pending_.disc_grads);
      return;
    }
    if (m.tag == "real") {
      disc_bottom_.backward(pending_.disc_real_tape, m.matrix,
                            pending_.disc_grads);
      disc_bottom_.apply_adam(pending_.disc_grads, disc_opt_, cfg_.adam);
      return;
    }
    require<ProtocolError>(m.tag == "gen", "unknown grad tag '", m.tag, "'");

    // generator chain: through the frozen bottom discriminator, the output
    // activations (plus the conditional term at the contributor), then the
    // bottom generator
    std::vector<double> scratch;
    Tensor2 d_fake_enc = disc_bottom_.backward(pending_.disc_fake_tape,
                                               m.matrix, scratch, false,
                                               false);
    Tensor2 d_raw = output_activations_backward(pending_.act_tape,
                                                enc_.layout, d_fake_enc);
    double ce = 0.0;
    if (cfg_.conditional_loss &&
        pending_.contributor == static_cast<int>(id_)) {
      ce = conditional_loss_grad(d_raw);
    }
    std::vector<double> ggrads(gen_bottom_.param_count(), 0.0);
    Tensor2 d_boundary =
        gen_bottom_.backward(pending_.gen_tape, d_raw, ggrads);
    gen_bottom_.apply_adam(ggrads, gen_opt_, cfg_.adam);

    Message r = reply(m);
    r.kind = MsgKind::GradUp;
    r.tag = "gen";
    r.aux = ce;
    if (plan_.config.gen_server_blocks > 0) r.matrix = std::move(d_boundary);
    link.send(std::move(r));
  }

  /// Mean softmax cross-entropy between the generated one-hot span and the
  /// conditioned category, per row (rows may condition different columns).
  /// Adds the gradient into d_raw and returns the loss value.
  double conditional_loss_grad(Tensor2& d_raw) {
    double total = 0.0;
    double invb = 1.0 / static_cast<double>(d_raw.rows);
    for (std::size_t r = 0; r < d_raw.rows; ++r) {
      auto it = span_to_enc_.find(draw_.chosen_span[r]);
      require<ProtocolError>(it != span_to_enc_.end(),
                             "conditioned span missing from encoded layout");
      auto [off, width] = it->second;
      std::size_t target = draw_.chosen_category[r];
      double mx = -1e300;
      for (std::size_t i = 0; i < width; ++i)
        mx = std::max(mx, pending_.raw_out.at(r, off + i));
      double s = 0.0;
      for (std::size_t i = 0; i < width; ++i)
        s += std::exp(pending_.raw_out.at(r, off + i) - mx);
      double logz = mx + std::log(s);
      total += logz - pending_.raw_out.at(r, off + target);
      for (std::size_t i = 0; i < width; ++i) {
        double p = std::exp(pending_.raw_out.at(r, off + i) - logz);
        d_raw.at(r, off + i) += (p - (i == target ? 1.0 : 0.0)) * invb;
      }
    }
    return total * invb;
  }

  void on_shuffle(const Message& m, Duplex& link) {
    check_round(m);
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
    Message r = reply(m);
    r.kind = MsgKind::ShuffleBarrier;
    link.send(std::move(r));
  }

  void on_synth_request(const Message& m, Duplex& link) {
    if (m.tag == "begin") {
      synth_buffer_.clear();
      return;
    }
    require<ProtocolError>(m.tag == "publish", "unknown synth tag");
    require<ProtocolError>(synth_buffer_.size() >= m.count,
                           "synthesis buffer underrun");
    synth_buffer_.resize(m.count);
    // publication shuffle: same fresh shared seed at every client, never
    // visible to the server
    auto rng = derived_stream(cfg_.publication_seed, "publish");
    auto perm = rng.permutation(synth_buffer_.size());
    auto published = apply_permutation(synth_buffer_, perm);

    json cols = json::array();
    for (const auto& c : codec_.schema().columns) cols.push_back(c.name);
    json rows = json::array();
    for (const auto& row : published) {
      json jr = json::array();
      for (const auto& cell : row) {
        if (std::holds_alternative<std::string>(cell))
          jr.push_back(cat(cell));
        else
          jr.push_back(num(cell));
      }
      rows.push_back(std::move(jr));
    }
    Message r = reply(m);
    r.kind = MsgKind::SynthRows;
    r.count = published.size();
    r.cells = json{{"columns", cols}, {"rows", rows}};
    link.send(std::move(r));
  }

  struct PendingStep {
    int contributor = -1;
    Net::Tape gen_tape;
    ActivationTape act_tape;
    Tensor2 raw_out;
    Net::Tape disc_fake_tape;
    Net::Tape disc_real_tape;
    std::vector<double> disc_grads;
  };

  std::size_t id_;
  TrainingConfig cfg_;
  PartitionPlan plan_;
  CvLayout cv_layout_;
  RawTable raw_;
  TableCodec codec_;
  EncodedTable enc_;
  CategoryIndex cat_index_;
  ShuffleState shuffle_;
  Net gen_bottom_;
  Net disc_bottom_;
  AdamState gen_opt_;
  AdamState disc_opt_;
  CvDraw draw_;
  PendingStep pending_;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> span_to_enc_;
  std::vector<std::vector<Cell>> synth_buffer_;
  std::uint64_t real_cache_version_ = 0;
  int real_cache_round_ = -1;
  Net::Tape real_cache_tape_;
  Tensor2 real_cache_logits_;
  int round_ = 0;
};

// ---------------------------------------------------------------------------
// server orchestrator
// ---------------------------------------------------------------------------

struct RoundLog {
  int round = 0;
  std::vector<double> disc_losses;
  double gen_loss = 0.0;
  double cond_loss = 0.0;
};

class ServerNode {
 public:
  ServerNode(const PartitionPlan& plan, const CvLayout& cv_layout,
             const TrainingConfig& cfg, Net gen_top, Net disc_top,
             Net cv_filter, std::vector<std::size_t> boundary_widths,
             std::vector<std::unique_ptr<Duplex>> links)
      : plan_(plan),
        cv_layout_(cv_layout),
        cfg_(cfg),
        gen_top_(std::move(gen_top)),
        disc_top_(std::move(disc_top)),
        cv_filter_(std::move(cv_filter)),
        boundary_widths_(std::move(boundary_widths)),
        links_(std::move(links)) {}

  std::size_t n_clients() const { return links_.size(); }
  const Net& gen_top() const { return gen_top_; }
  const Net& disc_top() const { return disc_top_; }
  const Net& cv_filter() const { return cv_filter_; }
  Net& gen_top() { return gen_top_; }
  Net& disc_top() { return disc_top_; }
  Net& cv_filter() { return cv_filter_; }
  const AdamState& gen_top_opt() const { return gen_top_opt_; }
  const AdamState& disc_top_opt() const { return disc_top_opt_; }
  const AdamState& cv_filter_opt() const { return cv_filter_opt_; }
  AdamState& gen_top_opt() { return gen_top_opt_; }
  AdamState& disc_top_opt() { return disc_top_opt_; }
  AdamState& cv_filter_opt() { return cv_filter_opt_; }

  std::vector<RoundLog> train() {
    std::vector<RoundLog> logs;
    for (std::size_t r = 0; r < cfg_.rounds; ++r) {
      RoundLog rl;
      rl.round = static_cast<int>(r);
      for (std::size_t j = 0; j < cfg_.disc_epochs; ++j)
        rl.disc_losses.push_back(disc_step(static_cast<int>(r),
                                           static_cast<int>(j)));
      auto [gl, ce] = gen_step(static_cast<int>(r));
      rl.gen_loss = gl;
      rl.cond_loss = ce;
      shuffle_barrier(static_cast<int>(r));
      logs.push_back(std::move(rl));
    }
    return logs;
  }

  double disc_step(int round, int epoch) {
    const std::size_t B = cfg_.batch;
    auto [cv, idx, contributor] = request_cv(round, phase::kDisc, epoch, true);

    // fake path through the split generator (frozen; no tape)
    Tensor2 gt_out = gen_top_forward(round, phase::kDisc, epoch, cv, nullptr);
    send_pieces(round, phase::kDisc, epoch, contributor, gt_out);

    std::vector<Tensor2> fake(n_clients());
    std::vector<Tensor2> real_sel(n_clients());
    client_rows_.assign(n_clients(), 0);
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message mf = expect(i, MsgKind::BottomDiscLogits, "fake");
      fake[i] = std::move(mf.matrix);
      Message mr = expect(i, MsgKind::BottomDiscLogits, "real");
      client_rows_[i] = mr.matrix.rows;
      real_sel[i] = static_cast<int>(i) == contributor
                        ? std::move(mr.matrix)
                        : row_gather(mr.matrix, idx);
    }

    Net::Tape cv_tape;
    auto cvr = derived_stream(cfg_.server_seed, "cvf", round, phase::kDisc,
                              epoch);
    Tensor2 cv_emb = cv_filter_.forward(cv, Mode::Train, cvr, &cv_tape);

    Tensor2 in_s = concat_logits(fake, cv_emb);
    Tensor2 in_r = concat_logits(real_sel, cv_emb);

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
    PenaltyResult pen = gradient_penalty(disc_top_, in_r, in_s, cfg_.gp_lambda,
                                         eps, dgp);

    double wterm = mean(s_fake) - mean(s_real);
    double loss = wterm + pen.value;
    check_finite(loss, "discriminator loss");

    // backward: top, cv filter, then per-client bottoms via GradDown
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

    std::size_t off = 0;
    for (std::size_t i = 0; i < n_clients(); ++i) {
      std::size_t w = fake[i].cols;
      Message gf = to_client(i, round, phase::kDisc, epoch);
      gf.kind = MsgKind::GradDown;
      gf.tag = "fake";
      gf.matrix = col_slice(d_in_s, off, w);
      links_[i]->send(std::move(gf));

      Tensor2 d_real_i = col_slice(d_in_r, off, w);
      Message gr = to_client(i, round, phase::kDisc, epoch);
      gr.kind = MsgKind::GradDown;
      gr.tag = "real";
      gr.matrix = static_cast<int>(i) == contributor
                      ? std::move(d_real_i)
                      : row_scatter(d_real_i, idx, client_rows_[i]);
      links_[i]->send(std::move(gr));
      off += w;
    }
    return loss;
  }

  std::pair<double, double> gen_step(int round) {
    const std::size_t B = cfg_.batch;
    auto [cv, idx, contributor] = request_cv(round, phase::kGen, 0, true);

    Net::Tape gt_tape;
    Tensor2 gt_out =
        gen_top_forward(round, phase::kGen, 0, cv, &gt_tape);
    send_pieces(round, phase::kGen, 0, contributor, gt_out);

    std::vector<Tensor2> fake(n_clients());
    for (std::size_t i = 0; i < n_clients(); ++i)
      fake[i] = expect(i, MsgKind::BottomDiscLogits, "fake").matrix;

    Net::Tape cv_tape;
    auto cvr = derived_stream(cfg_.server_seed, "cvf", round, phase::kGen, 0);
    Tensor2 cv_emb = cv_filter_.forward(cv, Mode::Train, cvr, &cv_tape);
    Tensor2 in_s = concat_logits(fake, cv_emb);

    Net::Tape tape_s;
    auto ds = derived_stream(cfg_.server_seed, "drop.dt.gen", round,
                             phase::kGen, 0);
    Tensor2 s_fake = disc_top_.forward(in_s, Mode::Train, ds, &tape_s);
    double loss = -mean(s_fake);
    check_finite(loss, "generator loss");

    // frozen discriminator: gradients pass through, parameters stay put
    std::vector<double> scratch_top;
    Tensor2 d_in_s = disc_top_.backward(tape_s, constant(B, -1.0 / double(B)),
                                        scratch_top, false, false);

    double cond = 0.0;
    std::size_t off = 0;
    Tensor2 d_gt_out(gt_out.rows, gt_out.cols);
    for (std::size_t i = 0; i < n_clients(); ++i) {
      std::size_t w = fake[i].cols;
      Message g = to_client(i, round, phase::kGen, 0);
      g.kind = MsgKind::GradDown;
      g.tag = "gen";
      g.matrix = col_slice(d_in_s, off, w);
      links_[i]->send(std::move(g));
      off += w;
    }
    std::size_t boundary_off = 0;
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message up = expect(i, MsgKind::GradUp, "gen");
      if (contributor == static_cast<int>(i)) cond = up.aux;
      if (plan_.config.gen_server_blocks > 0) {
        for (std::size_t r = 0; r < up.matrix.rows; ++r)
          for (std::size_t c = 0; c < up.matrix.cols; ++c)
            d_gt_out.at(r, boundary_off + c) += up.matrix.at(r, c);
        boundary_off += up.matrix.cols;
      }
    }
    if (plan_.config.gen_server_blocks > 0 && gen_top_.param_count() > 0) {
      std::vector<double> gt_grads(gen_top_.param_count(), 0.0);
      gen_top_.backward(gt_tape, d_gt_out, gt_grads);
      gen_top_.apply_adam(gt_grads, gen_top_opt_, cfg_.adam);
    }
    return {loss + cond, cond};
  }

  void shuffle_barrier(int round) {
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message m = to_client(i, round, "shuffle", 0);
      m.kind = MsgKind::ShuffleBarrier;
      links_[i]->send(std::move(m));
    }
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message ack = expect(i, MsgKind::ShuffleBarrier, "");
      require<ProtocolError>(ack.round == round, "client ", i,
                             " out of sync at round barrier ", round);
    }
    round_ += 1;
  }

  /// Eval-mode generation; every client buffers decoded rows and publishes
  /// them after applying the shared publication permutation.
  std::vector<RawTable> synthesize(std::size_t n_rows) {
    require<ValidationError>(n_rows >= 1, "synthesize needs n_rows >= 1");
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message m = to_client(i, 0, phase::kSynth, 0);
      m.kind = MsgKind::SynthRequest;
      m.tag = "begin";
      links_[i]->send(std::move(m));
    }
    std::size_t batches = (n_rows + cfg_.batch - 1) / cfg_.batch;
    for (std::size_t b = 0; b < batches; ++b) {
      auto [cv, idx, contributor] =
          request_cv(0, phase::kSynth, static_cast<int>(b), false);
      Tensor2 gt_out = gen_top_eval(static_cast<int>(b), cv);
      send_pieces(0, phase::kSynth, static_cast<int>(b), contributor,
                  gt_out, "eval");
      for (std::size_t i = 0; i < n_clients(); ++i)
        expect(i, MsgKind::SynthRows, "");
    }
    std::vector<RawTable> pieces;
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message m = to_client(i, 0, phase::kSynth, 0);
      m.kind = MsgKind::SynthRequest;
      m.tag = "publish";
      m.count = n_rows;
      links_[i]->send(std::move(m));
    }
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message rows = expect(i, MsgKind::SynthRows, "");
      pieces.push_back(parse_rows(rows.cells));
    }
    return pieces;
  }

  void shutdown() {
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message m;
      m.kind = MsgKind::Shutdown;
      m.recipient = static_cast<int>(i);
      links_[i]->send(std::move(m));
    }
  }

 private:
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

  Message to_client(std::size_t i, int round, const std::string& ph,
                    int step) const {
    Message m;
    m.round = round;
    m.phase = ph;
    m.step = step;
    m.sender = kServerId;
    m.recipient = static_cast<int>(i);
    return m;
  }

  Message expect(std::size_t i, MsgKind kind, const std::string& tag) {
    Message m = links_[i]->recv();
    if (m.kind == MsgKind::Shutdown && m.tag == "client_error")
      fail<ProtocolError>("client ", i, " failed: ", m.phase);
    require<ProtocolError>(m.kind == kind, "expected ", to_string(kind),
                           " from client ", i, ", got ", to_string(m.kind));
    if (!tag.empty())
      require<ProtocolError>(m.tag == tag, "expected tag '", tag, "', got '",
                             m.tag, "'");
    return m;
  }

  std::tuple<Tensor2, std::vector<std::uint32_t>, int> request_cv(
      int round, const std::string& ph, int step, bool expect_idx) {
    auto pick = derived_stream(cfg_.server_seed, "cv.pick", round, ph, step);
    std::size_t p = pick_cv_contributor(plan_.ratios, cv_layout_, pick);
    Message req = to_client(p, round, ph, step);
    req.kind = MsgKind::CvRequest;
    links_[p]->send(std::move(req));
    Message ann = expect(p, MsgKind::CvAnnounce, "");
    require<ProtocolError>(ann.contributor == static_cast<int>(p),
                           "cv announce from wrong contributor");
    if (expect_idx)
      require<ProtocolError>(ann.idx.size() == cfg_.batch,
                             "cv announce idx batch mismatch");
    return {std::move(ann.matrix), std::move(ann.idx), static_cast<int>(p)};
  }

  Tensor2 gen_top_forward(int round, const std::string& ph, int step,
                          const Tensor2& cv, Net::Tape* tape) {
    auto zr = derived_stream(cfg_.server_seed, "z", round, ph, step);
    Tensor2 z(cfg_.batch, cfg_.z_dim);
    for (double& v : z.data) v = zr.normal();
    Tensor2 gt_in = hconcat({&z, &cv});
    auto unused = derived_stream(0, "gt");
    return gen_top_.forward(gt_in, Mode::Train, unused, tape);
  }

  Tensor2 gen_top_eval(int batch_no, const Tensor2& cv) {
    auto zr = derived_stream(cfg_.server_seed, "synth.z", batch_no);
    Tensor2 z(cv.rows, cfg_.z_dim);
    for (double& v : z.data) v = zr.normal();
    Tensor2 gt_in = hconcat({&z, &cv});
    auto unused = derived_stream(0, "gt");
    return gen_top_.forward(gt_in, Mode::Eval, unused, nullptr);
  }

  void send_pieces(int round, const std::string& ph, int step, int contributor,
                   const Tensor2& gt_out, const std::string& tag = "") {
    std::vector<Tensor2> pieces;
    if (plan_.config.gen_server_blocks == 0) {
      for (std::size_t i = 0; i < n_clients(); ++i) pieces.push_back(gt_out);
    } else {
      pieces = split_logits(gt_out, boundary_widths_);
    }
    for (std::size_t i = 0; i < n_clients(); ++i) {
      Message m = to_client(i, round, ph, step);
      m.kind = MsgKind::SplitGenLogits;
      m.contributor = contributor;
      m.tag = tag;
      m.matrix = std::move(pieces[i]);
      links_[i]->send(std::move(m));
    }
  }

  static RawTable parse_rows(const json& cells) {
    require<ProtocolError>(cells.is_object(), "publish reply carries no rows");
    RawTable t;
    for (const auto& name : cells.at("columns"))
      t.schema.columns.push_back({name.get<std::string>()});
    for (const auto& jr : cells.at("rows")) {
      std::vector<Cell> row;
      for (const auto& v : jr) {
        if (v.is_string())
          row.push_back(v.get<std::string>());
        else
          row.push_back(v.get<double>());
      }
      t.rows.push_back(std::move(row));
    }
    t.row_ids.resize(t.rows.size());
    for (std::size_t i = 0; i < t.row_ids.size(); ++i)
      t.row_ids[i] = static_cast<std::uint32_t>(i);
    return t;
  }

  PartitionPlan plan_;
  CvLayout cv_layout_;
  TrainingConfig cfg_;
  Net gen_top_;
  Net disc_top_;
  Net cv_filter_;
  AdamState gen_top_opt_;
  AdamState disc_top_opt_;
  AdamState cv_filter_opt_;
  std::vector<std::size_t> boundary_widths_;
  std::vector<std::unique_ptr<Duplex>> links_;
  std::vector<std::size_t> client_rows_;
  int round_ = 0;
};

// ---------------------------------------------------------------------------
// in-process federation driver
// ---------------------------------------------------------------------------

/// Owns the server, the clients, and their threads for one simulated run.
class Federation {
 public:
  enum class Transport { InProcess, TcpLoopback };

  Federation(const TableSchema& schema, const RawTable& table,
             const ColumnAssignment& assignment, const PartitionConfig& pc,
             const TrainingConfig& cfg, MessageLog* log = nullptr,
             Transport transport = Transport::InProcess,
             const ModelShards* restore = nullptr)
      : cfg_(cfg) {
    assignment.validate(schema);
    require<ValidationError>(cfg.rounds >= 0 && cfg.disc_epochs >= 1,
                             "need disc_epochs >= 1");
    require<ValidationError>(cfg.batch >= 1 && cfg.batch <= table.n_rows(),
                             "batch must be in [1, n_rows]");
    auto ratios = compute_ratio_vector(assignment);
    plan_ = plan_partition(pc, ratios);
    cv_layout_ = build_cv_layout(schema, assignment);
    auto parts = split_columns(table, assignment);

    std::vector<TableCodec> codecs;
    std::vector<std::size_t> enc_widths;
    for (const auto& part : parts) {
      codecs.push_back(TableCodec::fit(part, cfg.encoder, cfg.server_seed));
      enc_widths.push_back(codecs.back().layout().total_width);
    }
    auto shards = build_shards(plan_, cfg.z_dim, cv_layout_.width, enc_widths,
                               cfg.net, cfg.server_seed);
    if (restore) restore_into(shards, *restore);

    if (log) {
      LeakScanner scanner;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        // protect the encoded rows and the numeric projections of raw rows
        Tensor2 enc = codecs[i].encode(parts[i], cfg.server_seed).matrix;
        scanner.protect_matrix(enc);
        std::size_t numeric = 0;
        for (const auto& col : parts[i].schema.columns)
          if (col.kind != ColumnKind::Categorical) ++numeric;
        if (numeric > 0) {
          Tensor2 rawm(parts[i].n_rows(), numeric);
          for (std::size_t r = 0; r < parts[i].n_rows(); ++r) {
            std::size_t c = 0;
            for (std::size_t k = 0; k < parts[i].schema.columns.size(); ++k)
              if (parts[i].schema.columns[k].kind != ColumnKind::Categorical)
                rawm.at(r, c++) = num(parts[i].rows[r][k]);
          }
          scanner.protect_matrix(rawm);
        }
      }
      log->set_scanner(std::move(scanner));
    }

    std::vector<std::unique_ptr<Duplex>> server_links(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i)
      clients_.push_back(std::make_unique<ClientNode>(
          i, std::move(parts[i]), std::move(codecs[i]), plan_, cv_layout_, cfg,
          std::move(shards.gen_bottoms[i]), std::move(shards.disc_bottoms[i])));

    // a client-side failure must not terminate the process: report it over
    // the link so the server fails with a protocol error instead
    auto guarded_serve = [](ClientNode& client, Duplex& link) {
      try {
        client.serve(link);
      } catch (const std::exception& e) {
        Message err;
        err.kind = MsgKind::Shutdown;
        err.tag = "client_error";
        err.phase = e.what();
        try {
          link.send(std::move(err));
        } catch (...) {
        }
      }
    };

    if (transport == Transport::InProcess) {
      for (std::size_t i = 0; i < parts.size(); ++i) {
        auto [server_end, client_end] = InProcessDuplex::make_pair(log);
        server_links[i] = std::move(server_end);
        client_links_.push_back(std::move(client_end));
      }
      for (std::size_t i = 0; i < clients_.size(); ++i)
        threads_.emplace_back([this, i, guarded_serve] {
          guarded_serve(*clients_[i], *client_links_[i]);
        });
    } else {
      listener_ = std::make_unique<TcpListener>(0);
      int port = listener_->port();
      for (std::size_t i = 0; i < clients_.size(); ++i)
        threads_.emplace_back([this, i, port, log, guarded_serve] {
          int fd = tcp_connect_loopback(port);
          std::string hello = "HELLO " + std::to_string(i) + "\n";
          ::send(fd, hello.data(), hello.size(), 0);
          TcpDuplex link(fd, log);
          guarded_serve(*clients_[i], link);
        });
      for (std::size_t k = 0; k < clients_.size(); ++k) {
        int fd = listener_->accept_one();
        std::string line;
        char ch;
        while (::recv(fd, &ch, 1, 0) == 1 && ch != '\n') line += ch;
        require<ProtocolError>(line.rfind("HELLO ", 0) == 0,
                               "malformed client hello");
        std::size_t id = std::stoul(line.substr(6));
        require<ProtocolError>(id < clients_.size() && !server_links[id],
                               "duplicate or invalid client hello");
        server_links[id] = std::make_unique<TcpDuplex>(fd, log);
      }
    }
    server_ = std::make_unique<ServerNode>(
        plan_, cv_layout_, cfg, std::move(shards.gen_top),
        std::move(shards.disc_top), std::move(shards.cv_filter),
        shards.boundary_widths, std::move(server_links));
    running_ = true;
  }

  ~Federation() {
    if (running_) stop();
  }

  std::vector<RoundLog> train() { return server_->train(); }
  std::vector<RawTable> synthesize(std::size_t n) {
    return server_->synthesize(n);
  }

  void stop() {
    server_->shutdown();
    for (auto& t : threads_) t.join();
    threads_.clear();
    running_ = false;
  }

  ServerNode& server() { return *server_; }
  ClientNode& client(std::size_t i) { return *clients_[i]; }
  std::size_t n_clients() const { return clients_.size(); }
  const PartitionPlan& plan() const { return plan_; }
  const CvLayout& cv_layout() const { return cv_layout_; }

  /// Copies the current shard parameters/state out for checkpointing.
  /// Call only between protocol operations (clients idle at their mailbox).
  ModelShards collect_shards() const {
    ModelShards s;
    s.gen_top = server_->gen_top();
    s.disc_top = server_->disc_top();
    s.cv_filter = server_->cv_filter();
    s.gen_top_opt = server_->gen_top_opt();
    s.disc_top_opt = server_->disc_top_opt();
    s.cv_filter_opt = server_->cv_filter_opt();
    for (const auto& c : clients_) {
      s.gen_bottoms.push_back(c->gen_bottom());
      s.disc_bottoms.push_back(c->disc_bottom());
      s.gen_bottom_opt.push_back(c->gen_opt());
      s.disc_bottom_opt.push_back(c->disc_opt());
    }
    return s;
  }

 private:
  static void restore_net(Net& dst, const Net& src, const char* what) {
    require<ValidationError>(dst.param_count() == src.param_count() &&
                                 dst.bn_state().size() == src.bn_state().size(),
                             "checkpoint does not match the configured ", what);
    dst.params = src.params;
    dst.bn_state() = src.bn_state();
  }

  static void restore_into(ModelShards& fresh, const ModelShards& saved) {
    require<ValidationError>(
        saved.gen_bottoms.size() == fresh.gen_bottoms.size(),
        "checkpoint client count mismatch");
    restore_net(fresh.gen_top, saved.gen_top, "generator top");
    restore_net(fresh.disc_top, saved.disc_top, "discriminator top");
    restore_net(fresh.cv_filter, saved.cv_filter, "cv filter");
    for (std::size_t i = 0; i < fresh.gen_bottoms.size(); ++i) {
      restore_net(fresh.gen_bottoms[i], saved.gen_bottoms[i],
                  "generator bottom");
      restore_net(fresh.disc_bottoms[i], saved.disc_bottoms[i],
                  "discriminator bottom");
    }
  }

  TrainingConfig cfg_;
  PartitionPlan plan_;
  CvLayout cv_layout_;
  std::vector<std::unique_ptr<ClientNode>> clients_;
  std::vector<std::unique_ptr<Duplex>> client_links_;
  std::unique_ptr<TcpListener> listener_;
  std::unique_ptr<ServerNode> server_;
  std::vector<std::thread> threads_;
  bool running_ = false;
};

/// Assembles the published per-client pieces into one schema-ordered table.
inline RawTable assemble_synthetic(const TableSchema& schema,
                                   const ColumnAssignment& assignment,
                                   const std::vector<RawTable>& pieces) {
  require<ValidationError>(pieces.size() == assignment.n_clients(),
                           "piece count mismatch");
  std::size_t n = pieces.empty() ? 0 : pieces[0].n_rows();
  for (const auto& p : pieces)
    require<ValidationError>(p.n_rows() == n, "piece row counts differ");
  RawTable out;
  out.schema = schema;
  out.rows.assign(n, std::vector<Cell>(schema.columns.size()));
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const std::string& name = schema.columns[c].name;
    std::size_t client = assignment.client_of(name);
    std::size_t local = pieces[client].schema.column_index(name);
    for (std::size_t r = 0; r < n; ++r)
      out.rows[r][c] = pieces[client].rows[r][local];
  }
  out.row_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.row_ids[i] = static_cast<std::uint32_t>(i);
  return out;
}

}  // namespace gtv

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
#include <cstdint>
#include <string>
#include <vector>

#include "gtv/common.hpp"
#include "gtv/encoder.hpp"
#include "gtv/rng.hpp"
#include "gtv/tensor.hpp"

namespace gtv {

// Minimal reverse-mode kernel for the split WGAN-GP nets. All math is f64;
// forward passes record a tape, backward returns input gradients and
// accumulates parameter gradients into a flat buffer aligned with Params.

enum class Mode { Train, Eval };

enum class LayerKind { Dense, BatchNorm, ReLU, LeakyReLU, Dropout, Tanh };

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t in = 0;   // Dense
  std::size_t out = 0;  // Dense
  std::size_t dim = 0;  // BatchNorm
  double slope = 0.2;   // LeakyReLU
  double rate = 0.5;    // Dropout

  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in = in;
    s.out = out;
    return s;
  }
  static LayerSpec batch_norm(std::size_t dim) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.dim = dim;
    return s;
  }
  static LayerSpec relu() {
    LayerSpec s;
    s.kind = LayerKind::ReLU;
    return s;
  }
  static LayerSpec leaky_relu(double slope) {
    LayerSpec s;
    s.kind = LayerKind::LeakyReLU;
    s.slope = slope;
    return s;
  }
  static LayerSpec dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
  }
  static LayerSpec tanh() {
    LayerSpec s;
    s.kind = LayerKind::Tanh;
    return s;
  }
};

/// A block is a layer sequence with an optional residual combination of its
/// input: `concat` grows the width (generator RN style), `add` keeps it.
struct BlockSpec {
  std::vector<LayerSpec> layers;
  bool concat_input = false;
  bool add_input = false;
};

struct NetSpec {
  std::size_t input_dim = 0;
  std::vector<BlockSpec> blocks;
};

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// Standard Adam with bias correction on a flat parameter vector.
inline void adam_step(std::vector<double>& params,
                      const std::vector<double>& grads, AdamState& state,
                      const AdamHyper& hp) {
  require<ShapeError>(params.size() == grads.size(),
                      "adam: grad size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  require<ShapeError>(state.m.size() == params.size(),
                      "adam: state size mismatch");
  state.step += 1;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grads[i];
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
    double mh = state.m[i] / c1;
    double vh = state.v[i] / c2;
    params[i] -= hp.lr * mh / (std::sqrt(vh) + hp.eps);
  }
}

namespace nn_detail {

struct LayerOffsets {
  std::size_t params = 0;       // offset into flat params
  std::size_t param_count = 0;
  std::size_t state = 0;        // offset into flat state (BN running stats)
  std::size_t state_count = 0;
};

struct LayerTape {
  Tensor2 input;      // Dense (x), LeakyReLU/ReLU/Tanh (z or y), BN (xhat)
  Tensor2 mask;       // Dropout scaled mask
  std::vector<double> inv_std;  // BN
  Tensor2 delta_out;  // filled by backward_with_deltas at Dense layers
};

struct BlockTape {
  Tensor2 input;
  std::vector<LayerTape> layers;
};

}  // namespace nn_detail

class Net {
 public:
  struct Tape {
    std::uint64_t version = 0;
    Mode mode = Mode::Train;
    std::vector<nn_detail::BlockTape> blocks;
    Tensor2 output;
  };

  Net() = default;

  explicit Net(NetSpec spec) : spec_(std::move(spec)) {
    std::size_t p = 0, st = 0;
    std::size_t width = spec_.input_dim;
    for (const auto& block : spec_.blocks) {
      std::size_t w = width;
      offsets_.emplace_back();
      for (const auto& layer : block.layers) {
        nn_detail::LayerOffsets off;
        off.params = p;
        off.state = st;
        switch (layer.kind) {
          case LayerKind::Dense:
            require<ShapeError>(layer.in == w, "dense expects width ", layer.in,
                                " but gets ", w);
            off.param_count = layer.in * layer.out + layer.out;
            w = layer.out;
            break;
          case LayerKind::BatchNorm:
            require<ShapeError>(layer.dim == w, "batchnorm width mismatch");
            off.param_count = 2 * layer.dim;
            off.state_count = 2 * layer.dim;
            break;
          case LayerKind::Dropout:
            require(layer.rate >= 0.0 && layer.rate < 1.0,
                    "dropout rate out of [0,1)");
            break;
          default: break;
        }
        p += off.param_count;
        st += off.state_count;
        offsets_.back().push_back(off);
      }
      if (block.concat_input)
        width += w;
      else if (block.add_input) {
        require<ShapeError>(w == width, "additive block must preserve width");
      } else {
        width = w;
      }
      if (block.add_input) width = w;
    }
    output_dim_ = width;
    params.assign(p, 0.0);
    state_.assign(st, 0.0);
    // BN defaults: gamma 1, beta 0, running mean 0, running var 1
    for (std::size_t b = 0; b < spec_.blocks.size(); ++b)
      for (std::size_t l = 0; l < spec_.blocks[b].layers.size(); ++l)
        if (spec_.blocks[b].layers[l].kind == LayerKind::BatchNorm) {
          const auto& off = offsets_[b][l];
          std::size_t d = spec_.blocks[b].layers[l].dim;
          for (std::size_t i = 0; i < d; ++i) {
            params[off.params + i] = 1.0;
            state_[off.state + d + i] = 1.0;
          }
        }
  }

  const NetSpec& spec() const { return spec_; }
  std::size_t input_dim() const { return spec_.input_dim; }
  std::size_t output_dim() const { return output_dim_; }
  std::size_t param_count() const { return params.size(); }
  std::uint64_t version() const { return version_; }
  const std::vector<double>& bn_state() const { return state_; }
  std::vector<double>& bn_state() { return state_; }

  void init_params(RngStream& rng) {
    for (std::size_t b = 0; b < spec_.blocks.size(); ++b)
      for (std::size_t l = 0; l < spec_.blocks[b].layers.size(); ++l) {
        const auto& layer = spec_.blocks[b].layers[l];
        if (layer.kind != LayerKind::Dense) continue;
        const auto& off = offsets_[b][l];
        double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (std::size_t i = 0; i < off.param_count; ++i)
          params[off.params + i] = (2.0 * rng.uniform() - 1.0) * bound;
      }
    version_ += 1;
  }

  /// Forward pass. Train mode records batch statistics into the BN running
  /// stats and draws dropout masks from `rng`; eval mode is deterministic.
  Tensor2 forward(const Tensor2& x, Mode mode, RngStream& rng,
                  Tape* tape = nullptr) {
    require<ShapeError>(x.cols == spec_.input_dim, "net expects ",
                        spec_.input_dim, " inputs, got ", x.cols);
    if (tape) {
      tape->version = version_;
      tape->mode = mode;
      tape->blocks.clear();
    }
    Tensor2 cur = x;
    for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
      const auto& block = spec_.blocks[b];
      Tensor2 y = cur;
      nn_detail::BlockTape bt;
      if (tape) bt.input = cur;
      for (std::size_t l = 0; l < block.layers.size(); ++l) {
        nn_detail::LayerTape lt;
        y = layer_forward(block.layers[l], offsets_[b][l], y, mode, rng,
                          tape ? &lt : nullptr);
        if (tape) bt.layers.push_back(std::move(lt));
      }
      if (block.concat_input) {
        y = hconcat({&cur, &y});
      } else if (block.add_input) {
        require<ShapeError>(y.cols == cur.cols, "residual width mismatch");
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += cur.data[i];
      }
      if (tape) tape->blocks.push_back(std::move(bt));
      cur = std::move(y);
    }
    if (!all_finite(cur)) fail<NumericError>("non-finite activation");
    if (tape) tape->output = cur;
    return cur;
  }

  /// Backward pass: accumulates parameter gradients into `grads` (sized
  /// param_count) and returns the input gradient. `record_deltas` keeps the
  /// gradient at every Dense output in the tape for the penalty double pass;
  /// `with_param_grads = false` skips the weight-gradient products when the
  /// caller only chains through a frozen net.
  Tensor2 backward(Tape& tape, const Tensor2& dy, std::vector<double>& grads,
                   bool record_deltas = false,
                   bool with_param_grads = true) const {
    require(tape.version == version_,
            "stale tape: parameters changed since forward");
    if (with_param_grads)
      require<ShapeError>(grads.size() == params.size(),
                          "grad buffer size mismatch");
    Tensor2 cur = dy;
    for (std::size_t bi = spec_.blocks.size(); bi-- > 0;) {
      const auto& block = spec_.blocks[bi];
      auto& bt = tape.blocks[bi];
      Tensor2 d_block;
      Tensor2 d_skip;
      if (block.concat_input) {
        std::size_t in_w = bt.input.cols;
        d_skip = col_slice(cur, 0, in_w);
        d_block = col_slice(cur, in_w, cur.cols - in_w);
      } else if (block.add_input) {
        d_skip = cur;
        d_block = cur;
      } else {
        d_block = cur;
      }
      for (std::size_t li = block.layers.size(); li-- > 0;) {
        d_block = layer_backward(block.layers[li], offsets_[bi][li],
                                 bt.layers[li], d_block, grads, tape.mode,
                                 record_deltas, with_param_grads);
      }
      if (!d_skip.empty()) {
        for (std::size_t i = 0; i < d_block.size(); ++i)
          d_block.data[i] += d_skip.data[i];
      }
      cur = std::move(d_block);
    }
    return cur;
  }

  void apply_adam(const std::vector<double>& grads, AdamState& st,
                  const AdamHyper& hp) {
    adam_step(params, grads, st, hp);
    version_ += 1;
  }

  /// True when every layer is piecewise linear, which the gradient-penalty
  /// double pass relies on.
  bool piecewise_linear() const {
    for (const auto& b : spec_.blocks) {
      if (b.concat_input || b.add_input) return false;
      for (const auto& l : b.layers)
        if (l.kind == LayerKind::BatchNorm || l.kind == LayerKind::Tanh)
          return false;
    }
    return true;
  }

  std::vector<double> params;

 private:
  friend struct PenaltyPass;

  Tensor2 layer_forward(const LayerSpec& layer,
                        const nn_detail::LayerOffsets& off, const Tensor2& x,
                        Mode mode, RngStream& rng,
                        nn_detail::LayerTape* lt) {
    switch (layer.kind) {
      case LayerKind::Dense: {
        if (lt) lt->input = x;
        auto W = map_mat(params.data() + off.params, layer.in, layer.out);
        const double* b = params.data() + off.params + layer.in * layer.out;
        Tensor2 y(x.rows, layer.out);
        as_eigen(y).noalias() = as_eigen(x) * W;
        for (std::size_t r = 0; r < y.rows; ++r)
          for (std::size_t c = 0; c < y.cols; ++c) y.at(r, c) += b[c];
        return y;
      }
      case LayerKind::ReLU:
      case LayerKind::LeakyReLU: {
        if (lt) lt->input = x;
        double slope = layer.kind == LayerKind::ReLU ? 0.0 : layer.slope;
        Tensor2 y = x;
        for (double& v : y.data)
          if (v < 0.0) v *= slope;
        return y;
      }
      case LayerKind::Tanh: {
        Tensor2 y = x;
        for (double& v : y.data) v = std::tanh(v);
        if (lt) lt->input = y;  // derivative needs the output
        return y;
      }
      case LayerKind::Dropout: {
        if (mode == Mode::Eval || layer.rate == 0.0) {
          if (lt) lt->mask = Tensor2();  // identity marker
          return x;
        }
        double keep = 1.0 - layer.rate;
        Tensor2 mask(x.rows, x.cols);
        for (double& v : mask.data)
          v = rng.uniform() < keep ? 1.0 / keep : 0.0;
        Tensor2 y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= mask.data[i];
        if (lt) lt->mask = std::move(mask);
        return y;
      }
      case LayerKind::BatchNorm: {
        std::size_t d = layer.dim;
        double* gamma = params.data() + off.params;
        double* beta = gamma + d;
        double* run_mean = state_.data() + off.state;
        double* run_var = run_mean + d;
        Tensor2 y(x.rows, x.cols);
        if (mode == Mode::Eval) {
          Tensor2 xhat(x.rows, x.cols);
          std::vector<double> inv_std(d);
          for (std::size_t c = 0; c < d; ++c) {
            double inv = 1.0 / std::sqrt(run_var[c] + kBnEps);
            inv_std[c] = inv;
            for (std::size_t r = 0; r < x.rows; ++r) {
              xhat.at(r, c) = (x.at(r, c) - run_mean[c]) * inv;
              y.at(r, c) = gamma[c] * xhat.at(r, c) + beta[c];
            }
          }
          if (lt) {
            lt->input = std::move(xhat);
            lt->inv_std = std::move(inv_std);
          }
          return y;
        }
        require<ShapeError>(x.rows >= 2, "batchnorm needs batch >= 2");
        Tensor2 xhat(x.rows, x.cols);
        std::vector<double> inv_std(d);
        double nb = static_cast<double>(x.rows);
        for (std::size_t c = 0; c < d; ++c) {
          double mean = 0.0;
          for (std::size_t r = 0; r < x.rows; ++r) mean += x.at(r, c);
          mean /= nb;
          double var = 0.0;
          for (std::size_t r = 0; r < x.rows; ++r) {
            double dv = x.at(r, c) - mean;
            var += dv * dv;
          }
          var /= nb;
          double inv = 1.0 / std::sqrt(var + kBnEps);
          inv_std[c] = inv;
          for (std::size_t r = 0; r < x.rows; ++r) {
            xhat.at(r, c) = (x.at(r, c) - mean) * inv;
            y.at(r, c) = gamma[c] * xhat.at(r, c) + beta[c];
          }
          run_mean[c] = (1.0 - kBnMomentum) * run_mean[c] + kBnMomentum * mean;
          double unbiased = var * nb / std::max(nb - 1.0, 1.0);
          run_var[c] =
              (1.0 - kBnMomentum) * run_var[c] + kBnMomentum * unbiased;
        }
        if (lt) {
          lt->input = std::move(xhat);
          lt->inv_std = std::move(inv_std);
        }
        return y;
      }
    }
    fail<ShapeError>("unreachable layer kind");
  }

  Tensor2 layer_backward(const LayerSpec& layer,
                         const nn_detail::LayerOffsets& off,
                         nn_detail::LayerTape& lt, const Tensor2& dy,
                         std::vector<double>& grads, Mode mode,
                         bool record_deltas, bool with_param_grads) const {
    switch (layer.kind) {
      case LayerKind::Dense: {
        if (record_deltas) lt.delta_out = dy;
        auto W = map_mat(params.data() + off.params, layer.in, layer.out);
        if (with_param_grads) {
          auto dW = map_mat(grads.data() + off.params, layer.in, layer.out);
          double* db = grads.data() + off.params + layer.in * layer.out;
          dW.noalias() += as_eigen(lt.input).transpose() * as_eigen(dy);
          for (std::size_t r = 0; r < dy.rows; ++r)
            for (std::size_t c = 0; c < dy.cols; ++c) db[c] += dy.at(r, c);
        }
        Tensor2 dx(dy.rows, layer.in);
        as_eigen(dx).noalias() = as_eigen(dy) * W.transpose();
        return dx;
      }
      case LayerKind::ReLU:
      case LayerKind::LeakyReLU: {
        double slope = layer.kind == LayerKind::ReLU ? 0.0 : layer.slope;
        Tensor2 dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (lt.input.data[i] < 0.0) dx.data[i] *= slope;
        return dx;
      }
      case LayerKind::Tanh: {
        Tensor2 dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx.data[i] *= 1.0 - lt.input.data[i] * lt.input.data[i];
        return dx;
      }
      case LayerKind::Dropout: {
        if (lt.mask.empty()) return dy;  // eval/identity: pass through
        Tensor2 dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx.data[i] *= lt.mask.data[i];
        return dx;
      }
      case LayerKind::BatchNorm: {
        std::size_t d = layer.dim;
        const double* gamma = params.data() + off.params;
        double* dgamma = grads.data() + off.params;
        double* dbeta = dgamma + d;
        Tensor2 dx(dy.rows, dy.cols);
        double nb = static_cast<double>(dy.rows);
        if (mode == Mode::Eval) {
          for (std::size_t c = 0; c < d; ++c)
            for (std::size_t r = 0; r < dy.rows; ++r) {
              if (with_param_grads) {
                dgamma[c] += dy.at(r, c) * lt.input.at(r, c);
                dbeta[c] += dy.at(r, c);
              }
              dx.at(r, c) = dy.at(r, c) * gamma[c] * lt.inv_std[c];
            }
          return dx;
        }
        for (std::size_t c = 0; c < d; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t r = 0; r < dy.rows; ++r) {
            sum_dy += dy.at(r, c);
            sum_dy_xhat += dy.at(r, c) * lt.input.at(r, c);
          }
          if (with_param_grads) {
            dgamma[c] += sum_dy_xhat;
            dbeta[c] += sum_dy;
          }
          double k = gamma[c] * lt.inv_std[c];
          for (std::size_t r = 0; r < dy.rows; ++r)
            dx.at(r, c) = k * (dy.at(r, c) - sum_dy / nb -
                               lt.input.at(r, c) * sum_dy_xhat / nb);
        }
        return dx;
      }
    }
    fail<ShapeError>("unreachable layer kind");
  }

  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  NetSpec spec_;
  std::vector<std::vector<nn_detail::LayerOffsets>> offsets_;
  std::vector<double> state_;
  std::size_t output_dim_ = 0;
  std::uint64_t version_ = 1;
};

// ---------------------------------------------------------------------------
// WGAN gradient penalty with double backprop through a piecewise-linear net
// ---------------------------------------------------------------------------

struct PenaltyResult {
  double value = 0.0;
  std::vector<double> param_grads;
  Tensor2 mix;  // the interpolated batch, kept for inspection in tests
};

struct PenaltyPass {
  /// penalty = lambda * mean_b (||grad_x D(x_mix)||_2 - 1)^2 with
  /// x_mix = eps*real + (1-eps)*fake, eps ~ U(0,1) per row.
  ///
  /// D must be piecewise linear (Dense/ReLU/LeakyReLU/Dropout): the second
  /// pass then only carries the two first-order terms; activation-derivative
  /// and bias second derivatives vanish almost everywhere.
  static PenaltyResult run(Net& disc, const Tensor2& real_in,
                           const Tensor2& fake_in, double lambda,
                           RngStream& eps_rng, RngStream& dropout_rng) {
    require<ShapeError>(real_in.rows == fake_in.rows &&
                            real_in.cols == fake_in.cols,
                        "penalty batches differ in shape");
    require(disc.piecewise_linear(),
            "gradient penalty needs a piecewise-linear discriminator");
    const std::size_t B = real_in.rows;
    Tensor2 mix(B, real_in.cols);
    for (std::size_t r = 0; r < B; ++r) {
      double e = eps_rng.uniform();
      for (std::size_t c = 0; c < mix.cols; ++c)
        mix.at(r, c) =
            e * real_in.at(r, c) + (1.0 - e) * fake_in.at(r, c);
    }

    Net::Tape tape;
    Tensor2 s = disc.forward(mix, Mode::Train, dropout_rng, &tape);
    require<ShapeError>(s.cols == 1, "penalty expects a scalar-head net");

    PenaltyResult res;
    res.param_grads.assign(disc.param_count(), 0.0);
    res.mix = mix;

    // first backward: input gradient g, recording per-Dense deltas
    std::vector<double> scratch;
    Tensor2 ones(B, 1);
    for (double& v : ones.data) v = 1.0;
    Tensor2 g = disc.backward(tape, ones, scratch, /*record_deltas=*/true,
                              /*with_param_grads=*/false);

    double value = 0.0;
    Tensor2 u(B, g.cols);
    for (std::size_t r = 0; r < B; ++r) {
      double nrm2 = 0.0;
      for (std::size_t c = 0; c < g.cols; ++c)
        nrm2 += g.at(r, c) * g.at(r, c);
      double nrm = std::sqrt(nrm2);
      check_finite(nrm, "penalty gradient norm");
      value += (nrm - 1.0) * (nrm - 1.0);
      if (nrm > 1e-12) {
        double coef = lambda * 2.0 * (nrm - 1.0) /
                      (nrm * static_cast<double>(B));
        for (std::size_t c = 0; c < g.cols; ++c)
          u.at(r, c) = coef * g.at(r, c);
      }
    }
    res.value = lambda * value / static_cast<double>(B);

    // second pass: walk the layers forward, propagating rho = dP/d(delta)
    Tensor2 rho = u;
    const auto& spec = disc.spec();
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
      for (std::size_t l = 0; l < spec.blocks[b].layers.size(); ++l) {
        const auto& layer = spec.blocks[b].layers[l];
        const auto& off = disc.offsets_[b][l];
        auto& lt = tape.blocks[b].layers[l];
        switch (layer.kind) {
          case LayerKind::Dense: {
            auto W =
                map_mat(disc.params.data() + off.params, layer.in, layer.out);
            auto dW = map_mat(res.param_grads.data() + off.params, layer.in,
                              layer.out);
            dW.noalias() +=
                as_eigen(rho).transpose() * as_eigen(lt.delta_out);
            Tensor2 next(rho.rows, layer.out);
            as_eigen(next).noalias() = as_eigen(rho) * W;
            rho = std::move(next);
            break;
          }
          case LayerKind::ReLU:
          case LayerKind::LeakyReLU: {
            double slope = layer.kind == LayerKind::ReLU ? 0.0 : layer.slope;
            for (std::size_t i = 0; i < rho.size(); ++i)
              if (lt.input.data[i] < 0.0) rho.data[i] *= slope;
            break;
          }
          case LayerKind::Dropout: {
            if (!lt.mask.empty())
              for (std::size_t i = 0; i < rho.size(); ++i)
                rho.data[i] *= lt.mask.data[i];
            break;
          }
          default:
            fail<ShapeError>("penalty pass hit a non-linear layer");
        }
      }
    }
    return res;
  }
};

inline PenaltyResult gradient_penalty(Net& disc, const Tensor2& real_in,
                                      const Tensor2& fake_in, double lambda,
                                      RngStream& eps_rng,
                                      RngStream& dropout_rng) {
  return PenaltyPass::run(disc, real_in, fake_in, lambda, eps_rng,
                          dropout_rng);
}

// ---------------------------------------------------------------------------
// generator output activations: tanh on scalar spans, gumbel-softmax on
// one-hot spans (hard argmax one-hot in eval mode)
// ---------------------------------------------------------------------------

struct ActivationTape {
  Tensor2 out;
  double temperature = 0.2;
};

inline Tensor2 apply_output_activations(const Tensor2& raw,
                                        const EncodedLayout& layout,
                                        double temperature, Mode mode,
                                        RngStream& rng,
                                        ActivationTape* tape = nullptr) {
  require<ShapeError>(raw.cols == layout.total_width,
                      "activation: raw width ", raw.cols, " != layout width ",
                      layout.total_width);
  Tensor2 out(raw.rows, raw.cols);
  for (const auto& part : layout.parts) {
    if (part.kind == SpanKind::Scalar) {
      for (std::size_t r = 0; r < raw.rows; ++r)
        out.at(r, part.offset) = std::tanh(raw.at(r, part.offset));
      continue;
    }
    for (std::size_t r = 0; r < raw.rows; ++r) {
      if (mode == Mode::Eval) {
        std::size_t best = 0;
        double bv = raw.at(r, part.offset);
        for (std::size_t i = 1; i < part.width; ++i)
          if (raw.at(r, part.offset + i) > bv) {
            bv = raw.at(r, part.offset + i);
            best = i;
          }
        out.at(r, part.offset + best) = 1.0;
        continue;
      }
      double m = -1e300;
      std::vector<double> z(part.width);
      for (std::size_t i = 0; i < part.width; ++i) {
        z[i] = (raw.at(r, part.offset + i) + rng.gumbel()) / temperature;
        m = std::max(m, z[i]);
      }
      double s = 0.0;
      for (std::size_t i = 0; i < part.width; ++i) {
        z[i] = std::exp(z[i] - m);
        s += z[i];
      }
      for (std::size_t i = 0; i < part.width; ++i)
        out.at(r, part.offset + i) = z[i] / s;
    }
  }
  if (tape) {
    tape->out = out;
    tape->temperature = temperature;
  }
  return out;
}

/// Backward of the train-mode activations (tanh and gumbel-softmax).
inline Tensor2 output_activations_backward(const ActivationTape& tape,
                                           const EncodedLayout& layout,
                                           const Tensor2& dout) {
  Tensor2 din(dout.rows, dout.cols);
  for (const auto& part : layout.parts) {
    if (part.kind == SpanKind::Scalar) {
      for (std::size_t r = 0; r < dout.rows; ++r) {
        double y = tape.out.at(r, part.offset);
        din.at(r, part.offset) = dout.at(r, part.offset) * (1.0 - y * y);
      }
      continue;
    }
    for (std::size_t r = 0; r < dout.rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < part.width; ++i)
        dot += dout.at(r, part.offset + i) * tape.out.at(r, part.offset + i);
      for (std::size_t i = 0; i < part.width; ++i) {
        double y = tape.out.at(r, part.offset + i);
        din.at(r, part.offset + i) =
            y * (dout.at(r, part.offset + i) - dot) / tape.temperature;
      }
    }
  }
  return din;
}

/// Softmax cross-entropy over a logit span; returns the mean loss and adds
/// (softmax - onehot)/batch into dlogits at the span.
inline double softmax_cross_entropy_span(const Tensor2& raw,
                                         std::size_t offset, std::size_t width,
                                         const std::vector<std::size_t>& target,
                                         Tensor2& dlogits) {
  require<ShapeError>(raw.rows == target.size(), "cross-entropy batch mismatch");
  double loss = 0.0;
  double invb = 1.0 / static_cast<double>(raw.rows);
  for (std::size_t r = 0; r < raw.rows; ++r) {
    double m = -1e300;
    for (std::size_t i = 0; i < width; ++i)
      m = std::max(m, raw.at(r, offset + i));
    double s = 0.0;
    for (std::size_t i = 0; i < width; ++i)
      s += std::exp(raw.at(r, offset + i) - m);
    double logz = m + std::log(s);
    require(target[r] < width, "cross-entropy target out of range");
    loss += logz - raw.at(r, offset + target[r]);
    for (std::size_t i = 0; i < width; ++i) {
      double p = std::exp(raw.at(r, offset + i) - logz);
      dlogits.at(r, offset + i) +=
          (p - (i == target[r] ? 1.0 : 0.0)) * invb;
    }
  }
  return loss * invb;
}

}  // namespace gtv

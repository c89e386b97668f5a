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

#include <string>
#include <vector>

#include "gtv/nn.hpp"
#include "gtv/rng.hpp"

namespace gtv {

// Central-finite-difference verification of the analytic gradients. The
// differencing side only calls forward passes (with replayed dropout
// streams), so it stays independent of the backward implementation.

struct GradCheckResult {
  double max_param_rel_err = 0.0;
  double max_input_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_nonsmooth = 0;  // FD stencil straddled an activation kink
};

namespace gradcheck_detail {

inline double rel_err(double analytic, double numeric) {
  // below ~1e-8 a central difference is cancellation noise; a gradient that
  // small is indistinguishable from an exact zero (e.g. a dense bias feeding
  // straight into batchnorm)
  if (std::abs(analytic - numeric) <= 1e-8) return 0.0;
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

inline double weighted_sum(const Tensor2& y, const Tensor2& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * w.data[i];
  return s;
}

}  // namespace gradcheck_detail

/// Checks d(sum(w ⊙ net(x)))/dparams and /dx against central differences.
/// Dropout masks are replayed by reseeding the same stream per evaluation.
inline GradCheckResult finite_difference_check(Net& net, const Tensor2& x,
                                               std::uint64_t seed,
                                               double fd_eps = 1e-5) {
  auto forward_loss = [&](const Tensor2& input) {
    auto rng = derived_stream(seed, "drop");
    Tensor2 y = net.forward(input, Mode::Train, rng, nullptr);
    auto wr = derived_stream(seed, "w");
    Tensor2 w(y.rows, y.cols);
    for (double& v : w.data) v = 2.0 * wr.uniform() - 1.0;
    return gradcheck_detail::weighted_sum(y, w);
  };

  Net::Tape tape;
  auto rng = derived_stream(seed, "drop");
  Tensor2 y = net.forward(x, Mode::Train, rng, &tape);
  auto wr = derived_stream(seed, "w");
  Tensor2 w(y.rows, y.cols);
  for (double& v : w.data) v = 2.0 * wr.uniform() - 1.0;
  std::vector<double> grads(net.param_count(), 0.0);
  Tensor2 dx = net.backward(tape, w, grads);

  // Central difference at eps plus a half-step consistency probe: when the
  // two estimates disagree the stencil sits on a ReLU/LeakyReLU kink and the
  // coordinate carries no information about the analytic gradient.
  auto numeric_at = [&](auto&& set, double base, double h) {
    set(base + h);
    double up = forward_loss(x);
    set(base - h);
    double dn = forward_loss(x);
    set(base);
    return (up - dn) / (2.0 * h);
  };

  GradCheckResult res;
  for (std::size_t i = 0; i < net.param_count(); ++i) {
    double keep = net.params[i];
    auto set = [&](double v) { net.params[i] = v; };
    double n1 = numeric_at(set, keep, fd_eps);
    double n2 = numeric_at(set, keep, fd_eps / 2.0);
    if (gradcheck_detail::rel_err(n1, n2) > 1e-3) {
      res.skipped_nonsmooth += 1;
      continue;
    }
    res.checked += 1;
    res.max_param_rel_err = std::max(res.max_param_rel_err,
                                     gradcheck_detail::rel_err(grads[i], n1));
  }
  {
    Tensor2 xp = x;
    auto forward_loss_x = [&]() {
      auto rng2 = derived_stream(seed, "drop");
      Tensor2 y2 = net.forward(xp, Mode::Train, rng2, nullptr);
      auto wr2 = derived_stream(seed, "w");
      Tensor2 w2(y2.rows, y2.cols);
      for (double& v : w2.data) v = 2.0 * wr2.uniform() - 1.0;
      return gradcheck_detail::weighted_sum(y2, w2);
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
      double keep = xp.data[i];
      auto probe = [&](double h) {
        xp.data[i] = keep + h;
        double up = forward_loss_x();
        xp.data[i] = keep - h;
        double dn = forward_loss_x();
        xp.data[i] = keep;
        return (up - dn) / (2.0 * h);
      };
      double n1 = probe(fd_eps);
      double n2 = probe(fd_eps / 2.0);
      if (gradcheck_detail::rel_err(n1, n2) > 1e-3) {
        res.skipped_nonsmooth += 1;
        continue;
      }
      res.checked += 1;
      res.max_input_rel_err = std::max(
          res.max_input_rel_err, gradcheck_detail::rel_err(dx.data[i], n1));
    }
  }
  return res;
}

/// Checks the penalty's parameter gradients (double backprop) against
/// central differences of the penalty value itself.
inline double penalty_finite_difference_check(Net& net, const Tensor2& real_in,
                                              const Tensor2& fake_in,
                                              double lambda,
                                              std::uint64_t seed,
                                              double fd_eps = 1e-5) {
  auto run = [&]() {
    auto eps = derived_stream(seed, "eps");
    auto drop = derived_stream(seed, "drop");
    return gradient_penalty(net, real_in, fake_in, lambda, eps, drop);
  };
  PenaltyResult analytic = run();
  double max_err = 0.0;
  for (std::size_t i = 0; i < net.param_count(); ++i) {
    double keep = net.params[i];
    net.params[i] = keep + fd_eps;
    double up = run().value;
    net.params[i] = keep - fd_eps;
    double dn = run().value;
    net.params[i] = keep;
    double numeric = (up - dn) / (2.0 * fd_eps);
    // absolute comparison floor keeps near-zero bias entries from
    // dominating with noise
    double denom =
        std::max({std::abs(analytic.param_grads[i]), std::abs(numeric), 1e-3});
    max_err = std::max(max_err,
                       std::abs(analytic.param_grads[i] - numeric) / denom);
  }
  return max_err;
}

/// Random composed nets for the gradient suite: up to `max_blocks` blocks,
/// widths <= max_width, batch <= max_batch, mixing every layer kind.
struct RandomNetCase {
  NetSpec spec;
  Tensor2 input;
};

inline RandomNetCase random_net_case(std::uint64_t seed, bool for_penalty,
                                     std::size_t max_blocks = 3,
                                     std::size_t max_width = 32,
                                     std::size_t max_batch = 16) {
  auto rng = derived_stream(seed, "netcase");
  RandomNetCase c;
  std::size_t batch = 2 + rng.uniform_below(max_batch - 1);
  std::size_t width = 2 + rng.uniform_below(max_width - 1);
  c.spec.input_dim = width;
  std::size_t blocks = 1 + rng.uniform_below(max_blocks);
  std::size_t w = width;
  for (std::size_t b = 0; b < blocks; ++b) {
    BlockSpec block;
    std::size_t out = 2 + rng.uniform_below(max_width - 1);
    block.layers.push_back(LayerSpec::dense(w, out));
    if (for_penalty) {
      block.layers.push_back(LayerSpec::leaky_relu(0.2));
      if (rng.uniform() < 0.5) block.layers.push_back(LayerSpec::dropout(0.3));
    } else {
      switch (rng.uniform_below(5)) {
        case 0: block.layers.push_back(LayerSpec::relu()); break;
        case 1: block.layers.push_back(LayerSpec::leaky_relu(0.2)); break;
        case 2:
          block.layers.push_back(LayerSpec::batch_norm(out));
          block.layers.push_back(LayerSpec::relu());
          break;
        case 3: block.layers.push_back(LayerSpec::tanh()); break;
        case 4: block.layers.push_back(LayerSpec::dropout(0.4)); break;
      }
      if (rng.uniform() < 0.3 && !for_penalty) {
        block.concat_input = true;
        w += out;
      } else {
        w = out;
      }
    }
    if (for_penalty) w = out;
    if (!block.concat_input) w = out;
    c.spec.blocks.push_back(std::move(block));
  }
  if (for_penalty) {
    BlockSpec head;
    head.layers.push_back(LayerSpec::dense(w, 1));
    c.spec.blocks.push_back(head);
  }
  c.input = Tensor2(batch, width);
  for (double& v : c.input.data) v = rng.normal();
  return c;
}

}  // namespace gtv

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

#include <algorithm>
#include <string>
#include <vector>

#include "gtv/nn.hpp"
#include "gtv/table.hpp"

namespace gtv {

// Downstream-task utility: train the same classifier once on real and once
// on synthetic data, evaluate both on held-out real rows, and report the
// metric gaps. Two families share the training loop: multinomial logistic
// regression and a one-hidden-layer MLP.

struct ClassifierMetrics {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double auc_macro = 0.0;
};

struct UtilityDeltas {
  ClassifierMetrics real_trained;
  ClassifierMetrics synth_trained;
  double accuracy_delta = 0.0;
  double f1_delta = 0.0;
  double auc_delta = 0.0;
};

struct UtilityReport {
  UtilityDeltas logreg;
  UtilityDeltas mlp;
  double mean_accuracy_delta = 0.0;
  double mean_f1_delta = 0.0;
  double mean_auc_delta = 0.0;

  json to_json() const {
    auto dj = [](const UtilityDeltas& d) {
      return json{{"accuracy_delta", d.accuracy_delta},
                  {"f1_delta", d.f1_delta},
                  {"auc_delta", d.auc_delta},
                  {"real", {{"accuracy", d.real_trained.accuracy},
                            {"f1", d.real_trained.f1_macro},
                            {"auc", d.real_trained.auc_macro}}},
                  {"synthetic", {{"accuracy", d.synth_trained.accuracy},
                                 {"f1", d.synth_trained.f1_macro},
                                 {"auc", d.synth_trained.auc_macro}}}};
    };
    return json{{"logistic_regression", dj(logreg)},
                {"mlp", dj(mlp)},
                {"mean_accuracy_delta", mean_accuracy_delta},
                {"mean_f1_delta", mean_f1_delta},
                {"mean_auc_delta", mean_auc_delta}};
  }
};

namespace ml_detail {

struct Design {
  Tensor2 x;
  std::vector<std::size_t> y;
  std::size_t n_classes = 0;
};

/// One-hot categoricals, z-scored numerics (statistics from the fitting
/// table itself). The target column is excluded from features.
struct Featurizer {
  TableSchema schema;
  std::string target;
  std::vector<double> means, stds;  // per numeric column in schema order

  static Featurizer fit(const RawTable& t, const std::string& target) {
    Featurizer f;
    f.schema = t.schema;
    f.target = target;
    for (std::size_t c = 0; c < t.schema.columns.size(); ++c) {
      if (t.schema.columns[c].kind == ColumnKind::Categorical ||
          t.schema.columns[c].name == target) {
        f.means.push_back(0.0);
        f.stds.push_back(1.0);
        continue;
      }
      double m = 0.0;
      for (const auto& row : t.rows) m += num(row[c]);
      m /= static_cast<double>(t.n_rows());
      double v = 0.0;
      for (const auto& row : t.rows) v += (num(row[c]) - m) * (num(row[c]) - m);
      v /= static_cast<double>(t.n_rows());
      f.means.push_back(m);
      f.stds.push_back(v > 0.0 ? std::sqrt(v) : 1.0);
    }
    return f;
  }

  Design transform(const RawTable& t) const {
    std::size_t ti = schema.column_index(target);
    require<ValidationError>(
        schema.columns[ti].kind == ColumnKind::Categorical,
        "utility target must be categorical");
    std::size_t width = 0;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      if (c == ti) continue;
      width += schema.columns[c].kind == ColumnKind::Categorical
                   ? schema.columns[c].categories.size()
                   : 1;
    }
    Design d;
    d.n_classes = schema.columns[ti].categories.size();
    d.x = Tensor2(t.n_rows(), width);
    d.y.resize(t.n_rows());
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      std::size_t off = 0;
      for (std::size_t c = 0; c < schema.columns.size(); ++c) {
        if (c == ti) continue;
        const auto& spec = schema.columns[c];
        if (spec.kind == ColumnKind::Categorical) {
          const std::string& v = cat(t.rows[r][c]);
          for (std::size_t k = 0; k < spec.categories.size(); ++k)
            if (spec.categories[k] == v) {
              d.x.at(r, off + k) = 1.0;
              break;
            }
          off += spec.categories.size();
        } else {
          d.x.at(r, off) = (num(t.rows[r][c]) - means[c]) / stds[c];
          off += 1;
        }
      }
      const std::string& label = cat(t.rows[r][ti]);
      const auto& cats = schema.columns[ti].categories;
      d.y[r] = static_cast<std::size_t>(
          std::find(cats.begin(), cats.end(), label) - cats.begin());
      require<ValidationError>(d.y[r] < cats.size(), "unknown target label '",
                               label, "'");
    }
    return d;
  }
};

/// Full-batch Adam on softmax cross-entropy; net must end in n_classes
/// logits.
inline void train_classifier(Net& net, const Design& d, std::size_t iters,
                             std::uint64_t seed) {
  AdamState opt;
  AdamHyper hp;
  hp.lr = 0.05;
  hp.beta1 = 0.9;
  hp.beta2 = 0.999;
  auto rng = derived_stream(seed, "clf.init");
  net.init_params(rng);
  for (std::size_t it = 0; it < iters; ++it) {
    Net::Tape tape;
    auto drop = derived_stream(seed, "clf.drop", it);
    Tensor2 logits = net.forward(d.x, Mode::Train, drop, &tape);
    Tensor2 dlogits(logits.rows, logits.cols);
    softmax_cross_entropy_span(logits, 0, logits.cols, d.y, dlogits);
    std::vector<double> grads(net.param_count(), 0.0);
    net.backward(tape, dlogits, grads);
    net.apply_adam(grads, opt, hp);
  }
}

inline Tensor2 predict_proba(Net& net, const Tensor2& x) {
  auto unused = derived_stream(0, "eval");
  Tensor2 logits = net.forward(x, Mode::Eval, unused, nullptr);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    double mx = -1e300;
    for (std::size_t c = 0; c < logits.cols; ++c)
      mx = std::max(mx, logits.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      logits.at(r, c) = std::exp(logits.at(r, c) - mx);
      s += logits.at(r, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) logits.at(r, c) /= s;
  }
  return logits;
}

/// Rank-based ROC AUC of one class vs the rest (ties get average ranks).
inline double auc_binary(const std::vector<double>& score,
                         const std::vector<int>& positive) {
  std::vector<std::size_t> order(score.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<double> rank(score.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && score[order[j + 1]] == score[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < score.size(); ++k)
    if (positive[k]) {
      rank_sum += rank[k];
      ++n_pos;
    }
  std::size_t n_neg = score.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  return (rank_sum - double(n_pos) * (double(n_pos) + 1.0) / 2.0) /
         (double(n_pos) * double(n_neg));
}

inline ClassifierMetrics score(const Tensor2& proba,
                               const std::vector<std::size_t>& y,
                               std::size_t n_classes) {
  ClassifierMetrics m;
  const std::size_t n = y.size();
  std::vector<std::size_t> pred(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (proba.at(r, c) > proba.at(r, best)) best = c;
    pred[r] = best;
  }
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r)
    if (pred[r] == y[r]) ++correct;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (pred[r] == c && y[r] == c) ++tp;
      if (pred[r] == c && y[r] != c) ++fp;
      if (pred[r] != c && y[r] == c) ++fn;
    }
    double denom = 2.0 * tp + fp + fn;
    f1_sum += denom == 0.0 ? 0.0 : 2.0 * tp / denom;
  }
  m.f1_macro = f1_sum / static_cast<double>(n_classes);

  double auc_sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<double> s(n);
    std::vector<int> pos(n);
    for (std::size_t r = 0; r < n; ++r) {
      s[r] = proba.at(r, c);
      pos[r] = y[r] == c ? 1 : 0;
    }
    auc_sum += auc_binary(s, pos);
  }
  m.auc_macro = auc_sum / static_cast<double>(n_classes);
  return m;
}

}  // namespace ml_detail

struct UtilityOptions {
  std::size_t iters = 300;
  std::size_t mlp_hidden = 100;
  std::uint64_t seed = 17;
};

/// Trains each model family on real vs synthetic training data, evaluates
/// both on the real test set, and reports absolute metric differences.
inline UtilityReport ml_utility(const RawTable& real_train,
                                const RawTable& synth_train,
                                const RawTable& test,
                                const std::string& target,
                                const UtilityOptions& opts = {}) {
  {
    std::size_t ti = real_train.schema.column_index(target);
    std::set<std::string> seen;
    for (const auto& row : real_train.rows) seen.insert(cat(row[ti]));
    require<ValidationError>(seen.size() >= 2,
                             "utility undefined: target has a single class");
  }
  auto run_family = [&](bool mlp) {
    UtilityDeltas d;
    ClassifierMetrics per_side[2];
    const RawTable* trains[2] = {&real_train, &synth_train};
    for (int side = 0; side < 2; ++side) {
      auto feat = ml_detail::Featurizer::fit(*trains[side], target);
      auto dtrain = feat.transform(*trains[side]);
      auto dtest = feat.transform(test);
      NetSpec spec;
      spec.input_dim = dtrain.x.cols;
      if (mlp) {
        BlockSpec hidden;
        hidden.layers = {LayerSpec::dense(dtrain.x.cols, opts.mlp_hidden),
                         LayerSpec::relu()};
        spec.blocks.push_back(hidden);
        BlockSpec head;
        head.layers = {LayerSpec::dense(opts.mlp_hidden, dtrain.n_classes)};
        spec.blocks.push_back(head);
      } else {
        BlockSpec head;
        head.layers = {LayerSpec::dense(dtrain.x.cols, dtrain.n_classes)};
        spec.blocks.push_back(head);
      }
      // one stream per family, shared by both sides: identical training
      // data must give identical models and zero deltas
      Net net(spec);
      ml_detail::train_classifier(net, dtrain, opts.iters,
                                  derive_seed(opts.seed, mlp ? "mlp" : "lr"));
      Tensor2 proba = ml_detail::predict_proba(net, dtest.x);
      per_side[side] = ml_detail::score(proba, dtest.y, dtrain.n_classes);
    }
    d.real_trained = per_side[0];
    d.synth_trained = per_side[1];
    d.accuracy_delta =
        std::abs(per_side[0].accuracy - per_side[1].accuracy);
    d.f1_delta = std::abs(per_side[0].f1_macro - per_side[1].f1_macro);
    d.auc_delta = std::abs(per_side[0].auc_macro - per_side[1].auc_macro);
    return d;
  };

  UtilityReport rep;
  rep.logreg = run_family(false);
  rep.mlp = run_family(true);
  rep.mean_accuracy_delta =
      0.5 * (rep.logreg.accuracy_delta + rep.mlp.accuracy_delta);
  rep.mean_f1_delta = 0.5 * (rep.logreg.f1_delta + rep.mlp.f1_delta);
  rep.mean_auc_delta = 0.5 * (rep.logreg.auc_delta + rep.mlp.auc_delta);
  return rep;
}

}  // namespace gtv

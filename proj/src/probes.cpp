/*
 * Copyright 2026 The probens Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "probens/probes.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace probens {

Standardizer Standardizer::fit(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.inv_std.assign(d, 1.0);
  if (n == 0) return s;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += x(i, k);
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = x(i, k) - s.mean[k];
      var[k] += diff * diff;
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    const double sd = std::sqrt(var[k] / static_cast<double>(n));
    s.inv_std[k] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw ValidationError("standardizer: dimension mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < x.cols(); ++k) out(i, k) = (x(i, k) - mean[k]) * inv_std[k];
  }
  return out;
}

ProbeModel ProbeModel::zeros(std::size_t dim, std::size_t n_classes, std::size_t tap_index) {
  ProbeModel m;
  m.weights = Matrix(dim, n_classes, 0.0);
  m.bias.assign(n_classes, 0.0);
  m.tap_index = tap_index;
  return m;
}

ProbeModel ProbeModel::core() const {
  ProbeModel m = *this;
  m.standardizer.reset();
  return m;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(cfg.weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
}

Matrix probe_logits(const ProbeModel& model, const Matrix& x) {
  if (x.cols() != model.dim()) {
    throw ValidationError("probe expects dim " + std::to_string(model.dim()) + ", got " +
                          std::to_string(x.cols()));
  }
  const std::size_t n = x.rows(), d = model.dim(), c = model.n_classes();
  Matrix z(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    auto zi = z.row(i);
    std::copy(model.bias.begin(), model.bias.end(), zi.begin());
    auto xi = x.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      const double xv = xi[k];
      if (xv == 0.0) continue;
      auto wk = model.weights.row(k);
      for (std::size_t j = 0; j < c; ++j) zi[j] += xv * wk[j];
    }
  }
  return z;
}

void softmax_rows(Matrix& z) {
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    double mx = r[0];
    for (double v : r) mx = std::max(mx, v);
    double sum = 0.0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : r) v /= sum;
  }
}

namespace {

Matrix forward_core(const ProbeModel& model, const Matrix& x) {
  Matrix p = probe_logits(model, x);
  softmax_rows(p);
  return p;
}

const Matrix& standardized(const ProbeModel& model, const Matrix& x, Matrix& scratch) {
  if (!model.standardizer) return x;
  scratch = model.standardizer->apply(x);
  return scratch;
}

// Accumulates X^T G and column sums of G into a LossGrad.
void backprop(const Matrix& x, const Matrix& g, LossGrad& out) {
  const std::size_t n = x.rows(), d = x.cols(), c = g.cols();
  out.grad_weights = Matrix(d, c, 0.0);
  out.grad_bias.assign(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto gi = g.row(i);
    auto xi = x.row(i);
    for (std::size_t j = 0; j < c; ++j) out.grad_bias[j] += gi[j];
    for (std::size_t k = 0; k < d; ++k) {
      const double xv = xi[k];
      if (xv == 0.0) continue;
      auto gw = out.grad_weights.row(k);
      for (std::size_t j = 0; j < c; ++j) gw[j] += xv * gi[j];
    }
  }
}

void check_targets(const ProbeModel& model, const Matrix& x, const Matrix& targets) {
  if (targets.rows() != x.rows() || targets.cols() != model.n_classes()) {
    throw ValidationError("targets shape does not match features x classes");
  }
}

}  // namespace

Matrix probe_forward(const ProbeModel& model, const Matrix& features) {
  Matrix scratch;
  return forward_core(model, standardized(model, features, scratch));
}

LossGrad ce_loss_and_grad(const ProbeModel& model, const Matrix& features, const Matrix& targets,
                          double weight_decay) {
  Matrix scratch;
  const Matrix& x = standardized(model, features, scratch);
  check_targets(model, x, targets);
  const std::size_t n = x.rows(), c = model.n_classes();
  const Matrix p = forward_core(model, x);
  const double inv_n = 1.0 / static_cast<double>(n);

  LossGrad out;
  Matrix g(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto pi = p.row(i);
    auto ti = targets.row(i);
    // d/dz_k of -sum_c t_c log(p_c + eps) = -t_k r_k + p_k sum_c t_c r_c, r_c = p_c / (p_c + eps)
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      loss -= ti[j] * std::log(pi[j] + kLogEps);
      s += ti[j] * pi[j] / (pi[j] + kLogEps);
    }
    for (std::size_t j = 0; j < c; ++j) {
      const double r = pi[j] / (pi[j] + kLogEps);
      g(i, j) = inv_n * (pi[j] * s - ti[j] * r);
    }
  }
  out.loss = loss * inv_n;
  backprop(x, g, out);
  if (weight_decay > 0.0) {
    double sq = 0.0;
    auto w = model.weights.values();
    auto gw = out.grad_weights.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      sq += w[k] * w[k];
      gw[k] += weight_decay * w[k];
    }
    out.loss += 0.5 * weight_decay * sq;
  }
  return out;
}

LossGrad brier_loss_and_grad(const ProbeModel& model, const Matrix& features,
                             const Matrix& targets) {
  Matrix scratch;
  const Matrix& x = standardized(model, features, scratch);
  check_targets(model, x, targets);
  const std::size_t n = x.rows(), c = model.n_classes();
  const Matrix p = forward_core(model, x);
  const double scale = 1.0 / static_cast<double>(n * c);

  LossGrad out;
  Matrix g(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto pi = p.row(i);
    auto qi = targets.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = pi[j] - qi[j];
      loss += e * e;
      dot += e * pi[j];
    }
    for (std::size_t j = 0; j < c; ++j) {
      g(i, j) = 2.0 * scale * pi[j] * ((pi[j] - qi[j]) - dot);
    }
  }
  out.loss = loss * scale;
  backprop(x, g, out);
  return out;
}

void sgd_step(ProbeModel& core, const LossGrad& grad, double learning_rate) {
  auto w = core.weights.values();
  auto gw = grad.grad_weights.values();
  for (std::size_t k = 0; k < w.size(); ++k) w[k] -= learning_rate * gw[k];
  for (std::size_t j = 0; j < core.bias.size(); ++j) core.bias[j] -= learning_rate * grad.grad_bias[j];
}

std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order.begin(), order.end(), rng);
  return order;
}

ProbeModel train_probe(const FeatureBank& bank, std::size_t tap_index, const Matrix& targets,
                       const TrainConfig& cfg, TrainCurve* curve) {
  validate(cfg);
  if (tap_index >= bank.n_taps()) {
    throw ValidationError("tap index " + std::to_string(tap_index) + " not in bank");
  }
  const std::size_t n = bank.n_samples();
  if (targets.rows() != n || targets.cols() != bank.n_classes()) {
    throw ValidationError("targets must be N x C");
  }
  require_row_stochastic(targets, 1e-6, "targets");

  const Matrix raw = to_double(bank.features[tap_index]);
  ProbeModel model = ProbeModel::zeros(raw.cols(), bank.n_classes(), tap_index);
  std::optional<Standardizer> standardizer;
  if (cfg.standardize) standardizer = Standardizer::fit(raw);
  const Matrix x = standardizer ? standardizer->apply(raw) : raw;

  const std::size_t batch = std::min(cfg.batch_size, n);
  Rng rng = make_rng(cfg.seed, "shuffle");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_order(n, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
      const std::size_t stop = std::min(start + batch, n);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix xb = gather_rows(x, idx);
      const Matrix tb = gather_rows(targets, idx);
      const LossGrad lg = ce_loss_and_grad(model, xb, tb, cfg.weight_decay);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b));
      }
      epoch_loss += lg.loss * static_cast<double>(idx.size());
      sgd_step(model, lg, cfg.learning_rate);
    }
    if (curve) curve->push_back(epoch_loss / static_cast<double>(n));
  }
  model.standardizer = std::move(standardizer);
  return model;
}

AnnotationTensor predict_all(const ProbeEnsemble& ensemble, const FeatureBank& bank) {
  const std::size_t n = bank.n_samples(), c = bank.n_classes();
  const std::size_t k = ensemble.n_annotators();
  if (k == 0) throw ValidationError("ensemble has no annotators");
  AnnotationTensor ann(n, k, c);
  std::size_t slot = 0;
  if (ensemble.include_original) {
    if (!bank.original_preds) {
      throw ValidationError("ensemble includes original predictions but bank has none");
    }
    Matrix orig = to_double(*bank.original_preds);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = orig.row(i);
      double s = 0.0;
      for (double v : r) s += v;
      for (auto& v : r) v /= s;
    }
    ann.set_annotator(slot++, orig);
  }
  for (const auto& probe : ensemble.probes) {
    if (probe.tap_index >= bank.n_taps()) {
      throw ValidationError("probe reads tap " + std::to_string(probe.tap_index) +
                            " which the bank does not have");
    }
    if (probe.n_classes() != c) throw ValidationError("probe class count differs from bank");
    ann.set_annotator(slot++, probe_forward(probe, to_double(bank.features[probe.tap_index])));
  }
  return ann;
}

double accuracy(const Matrix& probs, std::span<const std::uint16_t> labels) {
  if (probs.rows() != labels.size()) throw ValidationError("accuracy: size mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax(probs.row(i)) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace probens

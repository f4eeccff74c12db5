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

#include "probens/semisup.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "probens/rng.hpp"

namespace probens {

void validate(const MixMatchConfig& cfg) {
  if (!(cfg.sharpen_temp > 0.0)) throw ValidationError("sharpen_temp must be > 0");
  if (cfg.n_augment < 1) throw ValidationError("n_augment must be >= 1");
  if (!(cfg.aug_sigma_scale >= 0.0)) throw ValidationError("aug_sigma_scale must be >= 0");
  if (!(cfg.mixup_alpha > 0.0)) throw ValidationError("mixup_alpha must be > 0");
  if (!(cfg.lambda_u >= 0.0)) throw ValidationError("lambda_u must be >= 0");
  if (!(cfg.rampup_fraction >= 0.0 && cfg.rampup_fraction <= 1.0)) {
    throw ValidationError("rampup_fraction must lie in [0,1]");
  }
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(cfg.weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
}

Matrix feature_augment(const Matrix& features, std::span<const double> sigma, double scale,
                       std::uint64_t seed) {
  if (sigma.size() != features.cols()) throw ValidationError("augment: sigma size mismatch");
  if (scale == 0.0) return features;
  Matrix out = features;
  Rng rng(seed);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t d = 0; d < r.size(); ++d) r[d] += scale * sigma[d] * standard_normal(rng);
  }
  return out;
}

std::vector<double> sharpen(std::span<const double> p, double temp) {
  if (!(temp > 0.0)) throw ValidationError("sharpen: temperature must be > 0");
  std::vector<double> q(p.size(), 0.0);
  double mx = -INFINITY;
  for (double v : p) {
    if (v > 0.0) mx = std::max(mx, std::log(v) / temp);
  }
  double z = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) {
      q[c] = std::exp(std::log(p[c]) / temp - mx);
      z += q[c];
    }
  }
  for (auto& v : q) v /= z;
  return q;
}

std::uint64_t augmentation_seed(std::uint64_t seed, std::size_t a) {
  return derive_seed(seed, "augment", a);
}

Matrix guess_labels(const ProbeModel& model, const Matrix& unlabeled,
                    std::span<const double> sigma, const MixMatchConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Matrix mean(unlabeled.rows(), model.n_classes(), 0.0);
  for (std::size_t a = 0; a < cfg.n_augment; ++a) {
    const Matrix p = probe_forward(
        model, feature_augment(unlabeled, sigma, cfg.aug_sigma_scale, augmentation_seed(seed, a)));
    auto dst = mean.values();
    auto src = p.values();
    for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
  }
  const double inv = 1.0 / static_cast<double>(cfg.n_augment);
  for (auto& v : mean.values()) v *= inv;
  for (std::size_t i = 0; i < mean.rows(); ++i) {
    const auto q = sharpen(mean.row(i), cfg.sharpen_temp);
    std::copy(q.begin(), q.end(), mean.row(i).begin());
  }
  return mean;
}

double draw_mix_weight(Rng& rng, double alpha) {
  const double lambda = beta_deviate(rng, alpha, alpha);
  return std::max(lambda, 1.0 - lambda);
}

MixedPair mix_with_weight(std::span<const double> xa, std::span<const double> ya,
                          std::span<const double> xb, std::span<const double> yb, double weight) {
  if (xa.size() != xb.size() || ya.size() != yb.size()) {
    throw ValidationError("mixup: operand sizes differ");
  }
  MixedPair out{std::vector<double>(xa.size()), std::vector<double>(ya.size())};
  const double rest = 1.0 - weight;
  for (std::size_t d = 0; d < xa.size(); ++d) out.x[d] = weight * xa[d] + rest * xb[d];
  for (std::size_t c = 0; c < ya.size(); ++c) out.y[c] = weight * ya[c] + rest * yb[c];
  return out;
}

MixedPair mixup_pair(std::span<const double> xa, std::span<const double> ya,
                     std::span<const double> xb, std::span<const double> yb, double alpha,
                     std::uint64_t seed) {
  Rng rng(seed);
  return mix_with_weight(xa, ya, xb, yb, draw_mix_weight(rng, alpha));
}

std::vector<double> column_std(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  if (n == 0) return var;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += x(i, k);
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double e = x(i, k) - mean[k];
      var[k] += e * e;
    }
  }
  for (auto& v : var) v = std::sqrt(v / static_cast<double>(n));
  return var;
}

namespace {

// Cycles through a reshuffled unlabeled pool, one batch at a time.
class UnlabeledCursor {
 public:
  UnlabeledCursor(const std::vector<std::size_t>& pool, Rng rng)
      : pool_(pool), rng_(std::move(rng)) {}

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    count = std::min(count, pool_.size());
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        order_ = shuffled_order(pool_.size(), rng_);
        pos_ = 0;
      }
      out.push_back(pool_[order_[pos_++]]);
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& pool_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void accumulate(LossGrad& into, const LossGrad& add, double weight) {
  into.loss += weight * add.loss;
  auto gw = into.grad_weights.values();
  auto aw = add.grad_weights.values();
  for (std::size_t e = 0; e < gw.size(); ++e) gw[e] += weight * aw[e];
  for (std::size_t c = 0; c < into.grad_bias.size(); ++c) {
    into.grad_bias[c] += weight * add.grad_bias[c];
  }
}

}  // namespace

ProbeModel semisup_train_probe(const ProbeModel& model, const FeatureBank& bank,
                               const SplitAssignment& split, const MixMatchConfig& cfg,
                               TrainCurve* curve) {
  validate(cfg);
  validate(split, bank.n_samples());
  if (!bank.labels) throw ValidationError("semisup: bank has no labels");
  if (split.labeled_empty()) throw ValidationError("semisup: labeled set is empty");
  if (model.tap_index >= bank.n_taps()) throw ValidationError("semisup: tap not in bank");
  if (cfg.epochs == 0) return model;

  const Matrix raw = to_double(bank.features[model.tap_index]);
  const Matrix x = model.standardizer ? model.standardizer->apply(raw) : raw;
  ProbeModel core = model.core();
  if (x.cols() != core.dim()) throw ValidationError("semisup: probe dim differs from tap dim");
  const std::size_t c = core.n_classes();
  const auto sigma = column_std(x);
  const auto& labeled = split.labeled_indices;
  const auto& unlabeled = split.unlabeled_indices;
  const auto& labels = *bank.labels;

  const std::size_t batch = std::min(cfg.batch_size, labeled.size());
  const std::size_t steps_per_epoch = (labeled.size() + batch - 1) / batch;
  const double rampup_steps =
      cfg.rampup_fraction * static_cast<double>(steps_per_epoch * cfg.epochs);

  Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
  Rng mix_rng = make_rng(cfg.seed, "mixup");
  UnlabeledCursor cursor(unlabeled, make_rng(cfg.seed, "unlabeled"));

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_order(labeled.size(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0, b = 0; start < labeled.size(); start += batch, ++b, ++step) {
      const std::size_t stop = std::min(start + batch, labeled.size());
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < stop; ++k) idx.push_back(labeled[order[k]]);
      const std::size_t nl = idx.size();

      Matrix xl = feature_augment(gather_rows(x, std::span<const std::size_t>(idx)), sigma,
                                  cfg.aug_sigma_scale, derive_seed(cfg.seed, "aug-labeled", step));
      Matrix tl(nl, c, 0.0);
      for (std::size_t r = 0; r < nl; ++r) tl(r, labels[idx[r]]) = 1.0;

      Matrix xu, tu;
      const auto uidx = cursor.next(nl);
      if (!uidx.empty()) {
        const Matrix base = gather_rows(x, std::span<const std::size_t>(uidx));
        tu = guess_labels(core, base, sigma, cfg, derive_seed(cfg.seed, "guess", step));
        xu = feature_augment(base, sigma, cfg.aug_sigma_scale,
                             derive_seed(cfg.seed, "aug-unlabeled", step));
      }
      const std::size_t nu = uidx.size();

      if (cfg.mixup) {
        // Mix every row of [labeled; unlabeled] with a row of a shuffled copy.
        const std::size_t total = nl + nu;
        auto row_x = [&](std::size_t r) { return r < nl ? xl.row(r) : xu.row(r - nl); };
        auto row_y = [&](std::size_t r) { return r < nl ? tl.row(r) : tu.row(r - nl); };
        const Matrix all_x = [&] {
          Matrix m(total, x.cols());
          for (std::size_t r = 0; r < total; ++r) std::ranges::copy(row_x(r), m.row(r).begin());
          return m;
        }();
        const Matrix all_y = [&] {
          Matrix m(total, c);
          for (std::size_t r = 0; r < total; ++r) std::ranges::copy(row_y(r), m.row(r).begin());
          return m;
        }();
        const auto partner = shuffled_order(total, mix_rng);
        for (std::size_t r = 0; r < total; ++r) {
          const double w = draw_mix_weight(mix_rng, cfg.mixup_alpha);
          const auto mixed = mix_with_weight(all_x.row(r), all_y.row(r), all_x.row(partner[r]),
                                             all_y.row(partner[r]), w);
          std::ranges::copy(mixed.x, row_x(r).begin());
          std::ranges::copy(mixed.y, row_y(r).begin());
        }
      }

      LossGrad grad = ce_loss_and_grad(core, xl, tl, cfg.weight_decay);
      const double ramp = rampup_steps > 0.0
                              ? std::min(1.0, static_cast<double>(step) / rampup_steps)
                              : 1.0;
      const double unl_weight = ramp * cfg.lambda_u;
      if (nu > 0 && unl_weight > 0.0) {
        accumulate(grad, brier_loss_and_grad(core, xu, tu), unl_weight);
      }
      if (!std::isfinite(grad.loss)) {
        throw NumericalError("semisup: non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(b));
      }
      epoch_loss += grad.loss * static_cast<double>(nl);
      sgd_step(core, grad, cfg.learning_rate);
    }
    if (curve) curve->push_back(epoch_loss / static_cast<double>(labeled.size()));
  }
  core.standardizer = model.standardizer;
  return core;
}

}  // namespace probens

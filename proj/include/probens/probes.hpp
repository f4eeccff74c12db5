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

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "probens/aggregation.hpp"
#include "probens/feature_bank.hpp"
#include "probens/matrix.hpp"
#include "probens/rng.hpp"

namespace probens {

/// Per-dimension affine map to zero mean / unit variance, fitted on a
/// training split and carried with the probe so inference sees the same map.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> inv_std;

  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;

  bool operator==(const Standardizer&) const = default;
};

/// Affine softmax head reading one tap point.
struct ProbeModel {
  Matrix weights;             // dim x C
  std::vector<double> bias;   // C
  std::size_t tap_index = 0;
  std::optional<Standardizer> standardizer;

  static ProbeModel zeros(std::size_t dim, std::size_t n_classes, std::size_t tap_index);

  std::size_t dim() const noexcept { return weights.rows(); }
  std::size_t n_classes() const noexcept { return weights.cols(); }

  /// Same parameters with the standardizer removed; expects pre-standardized input.
  ProbeModel core() const;

  bool operator==(const ProbeModel&) const = default;
};

struct ProbeEnsemble {
  std::vector<ProbeModel> probes;
  bool include_original = false;

  /// Annotator count K.
  std::size_t n_annotators() const noexcept {
    return probes.size() + (include_original ? 1 : 0);
  }

  bool operator==(const ProbeEnsemble&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  bool standardize = true;
};

void validate(const TrainConfig& cfg);

inline constexpr double kLogEps = 1e-12;

/// Row-wise softmax(x W + b), applying the model's standardizer if present.
Matrix probe_forward(const ProbeModel& model, const Matrix& features);

/// Raw logits x W + b (no standardization).
Matrix probe_logits(const ProbeModel& model, const Matrix& features);

void softmax_rows(Matrix& logits);

struct LossGrad {
  double loss = 0.0;
  Matrix grad_weights;
  std::vector<double> grad_bias;
};

/// Soft-target cross-entropy  -(1/n) sum_i sum_c t_ic log(p_ic + kLogEps)
/// plus (weight_decay / 2) ||W||^2, with its exact analytic gradient.
/// Uses the model's standardizer if present.
LossGrad ce_loss_and_grad(const ProbeModel& model, const Matrix& features, const Matrix& targets,
                          double weight_decay = 0.0);

/// Mean over samples and classes of (p_ic - q_ic)^2, with its gradient.
LossGrad brier_loss_and_grad(const ProbeModel& model, const Matrix& features,
                             const Matrix& targets);

/// Per-epoch mean training loss.
using TrainCurve = std::vector<double>;

/// Minibatch gradient descent from a zero-initialized probe on one tap
/// point. `targets` is N x C (one-hot or soft). Deterministic given cfg.seed.
ProbeModel train_probe(const FeatureBank& bank, std::size_t tap_index, const Matrix& targets,
                       const TrainConfig& cfg, TrainCurve* curve = nullptr);

/// In-place parameter update W -= lr * dW, b -= lr * db. Shared by
/// train_probe and the semi-supervised trainer so both take arithmetically
/// identical steps.
void sgd_step(ProbeModel& core, const LossGrad& grad, double learning_rate);

/// Random permutation of [0, n).
std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng);

/// Soft annotations for every sample: slot 0 holds the backbone's original
/// predictions when the ensemble includes them, then one slot per probe.
AnnotationTensor predict_all(const ProbeEnsemble& ensemble, const FeatureBank& bank);

double accuracy(const Matrix& probs, std::span<const std::uint16_t> labels);

}  // namespace probens

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
#include <span>
#include <vector>

#include "probens/feature_bank.hpp"
#include "probens/noise_split.hpp"
#include "probens/probes.hpp"

namespace probens {

/// MixMatch-style retraining knobs. Augmentation happens in feature space:
/// Gaussian noise with per-dimension std aug_sigma_scale * feature std.
struct MixMatchConfig {
  double sharpen_temp = 0.5;
  std::size_t n_augment = 2;
  double aug_sigma_scale = 0.1;
  double mixup_alpha = 0.75;
  double lambda_u = 10.0;
  double rampup_fraction = 0.3;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double learning_rate = 1e-2;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  bool mixup = true;  // false pins the mix weight at 1 (no mixing)
};

void validate(const MixMatchConfig& cfg);

/// x + noise, noise[i,d] ~ N(0, (scale * sigma[d])^2). scale == 0 returns x unchanged.
Matrix feature_augment(const Matrix& features, std::span<const double> sigma, double scale,
                       std::uint64_t seed);

/// Temperature sharpening q_c proportional to p_c^(1/temp).
std::vector<double> sharpen(std::span<const double> p, double temp);

/// Seed used for the a-th augmentation inside guess_labels.
std::uint64_t augmentation_seed(std::uint64_t seed, std::size_t a);

/// Sharpened mean prediction over cfg.n_augment augmented copies.
/// `sigma` is the per-dimension feature std in the model's input space.
Matrix guess_labels(const ProbeModel& model, const Matrix& unlabeled_features,
                    std::span<const double> sigma, const MixMatchConfig& cfg, std::uint64_t seed);

struct MixedPair {
  std::vector<double> x;
  std::vector<double> y;
};

/// lambda ~ Beta(alpha, alpha), returned as max(lambda, 1 - lambda).
double draw_mix_weight(Rng& rng, double alpha);

/// weight * a + (1 - weight) * b for both features and targets.
MixedPair mix_with_weight(std::span<const double> xa, std::span<const double> ya,
                          std::span<const double> xb, std::span<const double> yb, double weight);

MixedPair mixup_pair(std::span<const double> xa, std::span<const double> ya,
                     std::span<const double> xb, std::span<const double> yb, double alpha,
                     std::uint64_t seed);

/// Per-dimension population std over all rows.
std::vector<double> column_std(const Matrix& x);

/// Semi-supervised update of one probe, warm-started from `model`. Labeled
/// samples keep their bank labels; unlabeled samples get sharpened guesses.
/// Each step mixes the concatenated labeled+unlabeled batch with a shuffled
/// copy of itself and descends on CE(labeled) + w(t) * lambda_u * Brier(unlabeled),
/// where w ramps linearly from 0 to 1 over the first rampup_fraction of steps.
ProbeModel semisup_train_probe(const ProbeModel& model, const FeatureBank& bank,
                               const SplitAssignment& split, const MixMatchConfig& cfg,
                               TrainCurve* curve = nullptr);

}  // namespace probens

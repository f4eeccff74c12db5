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
#include <string>
#include <vector>

#include "probens/aggregation.hpp"
#include "probens/feature_bank.hpp"
#include "probens/noise_split.hpp"
#include "probens/probes.hpp"
#include "probens/semisup.hpp"

namespace probens {

enum class Aggregator { avg, softds, hardds };

std::string to_string(Aggregator a);
Aggregator parse_aggregator(const std::string& name);

struct PipelineConfig {
  Aggregator agg_train = Aggregator::softds;
  Aggregator agg_infer = Aggregator::softds;
  std::size_t max_rounds = 3;
  SplitConfig split_cfg;
  MixMatchConfig mixmatch_cfg;
  TrainConfig train_cfg;
  DSConfig ds_cfg;
  std::vector<std::size_t> tap_selection;  // empty means every tap in the bank
  bool include_original = false;
  double stop_delta = 0.02;
  std::uint64_t seed = 0;  // top-level seed; sub-seeds are derived from it
};

void validate(const PipelineConfig& cfg);

/// Taps that participate: the explicit selection, or all taps of the bank.
std::vector<std::size_t> resolve_taps(const PipelineConfig& cfg, const FeatureBank& bank);

struct RoundSummary {
  std::size_t round = 0;
  std::optional<double> loglik;  // present when the round aggregated with DS
  bool ds_converged = false;
  std::size_t ds_iters = 0;
  double split_change = 1.0;
  std::size_t n_labeled = 0;
  std::size_t n_unlabeled = 0;
  double train_accuracy = 0.0;  // posterior argmax vs the (noisy) bank labels
  bool trained = false;         // false when the round stopped before retraining
  std::string diagnostic;
};

struct PipelineState {
  std::size_t round = 0;  // completed semi-supervised rounds
  ProbeEnsemble ensemble;
  SplitAssignment split;
  Matrix train_posteriors;
  std::vector<RoundSummary> history;
  std::vector<TrainCurve> warmup_curves;
  std::vector<std::vector<TrainCurve>> round_curves;  // [round][probe]
};

/// Training config used for the warm-up probe on `tap` (seed derived per tap).
TrainConfig warmup_config(const PipelineConfig& cfg, std::size_t tap);

/// Step 1: one supervised probe per selected tap on the bank's labels.
ProbeEnsemble warm_up(const FeatureBank& train_bank, const PipelineConfig& cfg,
                      std::vector<TrainCurve>* curves = nullptr);

/// Aggregates annotations with the chosen strategy; fills `ds` when DS ran.
Matrix aggregate(const AnnotationTensor& ann, Aggregator how, const DSConfig& ds_cfg,
                 AggregateResult* ds = nullptr);

/// Warm-up, then rounds of aggregate -> entropy split -> semi-supervised
/// retraining, until split churn falls below stop_delta or max_rounds.
PipelineState run_pipeline(const FeatureBank& train_bank, const PipelineConfig& cfg);

struct Inference {
  Matrix posteriors;
  std::vector<std::size_t> hard_labels;
};

Inference infer(const PipelineState& state, const FeatureBank& test_bank,
                const PipelineConfig& cfg);

struct MetricsReport {
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  std::optional<double> noise_fit_accuracy;
  std::optional<std::size_t> n_flipped;
  std::vector<std::pair<std::uint16_t, double>> per_domain_accuracy;
};

MetricsReport evaluate(const Matrix& posteriors, std::span<const std::uint16_t> true_labels,
                       std::optional<std::span<const std::uint16_t>> noisy_labels = std::nullopt,
                       std::optional<std::vector<bool>> flip_mask = std::nullopt,
                       std::optional<std::span<const std::uint16_t>> domain_ids = std::nullopt);

}  // namespace probens

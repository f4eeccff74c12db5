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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "probens/pipeline.hpp"
#include "probens/synth_bench.hpp"

namespace probens {

using nlohmann::json;

// JSON views of configs and results. Parsing accepts partial documents:
// missing keys keep their defaults, unknown keys are rejected.

json to_json(const TrainConfig& cfg);
json to_json(const MixMatchConfig& cfg);
json to_json(const DSConfig& cfg);
json to_json(const SplitConfig& cfg);
json to_json(const PipelineConfig& cfg);
json to_json(const SynthConfig& cfg);
json to_json(const SplitAssignment& split);
json to_json(const RoundSummary& summary);
json to_json(const MetricsReport& report);
json to_json(const ProbeModel& model);
json to_json(const ProbeEnsemble& ensemble);
json to_json(const AggregateResult& result, bool include_posteriors);

PipelineConfig pipeline_config_from_json(const json& j);
SynthConfig synth_config_from_json(const json& j);
SplitAssignment split_from_json(const json& j);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

/// Probe binary: magic "FPRB1", u32le JSON header length, JSON header
/// {tap_index, dim, n_classes, standardized, dtype:"f64le"}, then weights
/// (row-major), bias, and (when standardized) mean and inv_std, all f64le.
std::vector<std::uint8_t> encode_probe(const ProbeModel& model);
ProbeModel decode_probe(std::span<const std::uint8_t> bytes);

/// Posterior matrix: magic "FPST1", u32le JSON header length, JSON header
/// {rows, cols, dtype:"f32le"}, then the matrix as row-major f32le.
std::vector<std::uint8_t> encode_posteriors(const Matrix& posteriors);
MatrixF decode_posteriors(std::span<const std::uint8_t> bytes);
void write_posteriors(const std::filesystem::path& path, const Matrix& posteriors);
MatrixF read_posteriors(const std::filesystem::path& path);

/// Writes state.json plus probes/probe_<k>.fprb into `dir`.
void save_state(const std::filesystem::path& dir, const PipelineState& state,
                const PipelineConfig& cfg);

struct LoadedState {
  PipelineState state;
  PipelineConfig config;
};

LoadedState load_state(const std::filesystem::path& state_json);

/// Training curves as JSON lines: {"phase", "round", "tap", "epoch", "loss"}.
void write_curves(const std::filesystem::path& path, const PipelineState& state);

/// Sidecar with ground truth for synthetic banks.
struct Truth {
  std::vector<std::uint16_t> true_labels;
  std::optional<std::vector<std::uint16_t>> noisy_labels;
  std::optional<std::vector<bool>> flip_mask;
};

json to_json(const Truth& truth);
Truth truth_from_json(const json& j);

}  // namespace probens

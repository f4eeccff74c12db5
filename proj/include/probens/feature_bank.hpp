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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probens/matrix.hpp"

namespace probens {

struct TapPoint {
  std::string name;
  std::size_t dim = 0;

  bool operator==(const TapPoint&) const = default;
};

struct BankManifest {
  std::size_t n_samples = 0;
  std::size_t n_classes = 0;
  std::vector<TapPoint> tap_points;
  bool has_labels = false;
  bool has_original_preds = false;
  bool domain_ids_present = false;
  std::string dtype = "f32le";

  bool operator==(const BankManifest&) const = default;
};

/// Per-sample features at each tap point of a frozen backbone, plus optional
/// (possibly noisy) labels, the backbone's own softmax output, and domain ids.
/// Immutable once built; share freely across threads.
struct FeatureBank {
  BankManifest manifest;
  std::vector<MatrixF> features;  // one N x dim matrix per tap point
  std::optional<std::vector<std::uint16_t>> labels;
  std::optional<MatrixF> original_preds;  // N x C, rows sum to 1
  std::optional<std::vector<std::uint16_t>> domain_ids;

  std::size_t n_samples() const noexcept { return manifest.n_samples; }
  std::size_t n_classes() const noexcept { return manifest.n_classes; }
  std::size_t n_taps() const noexcept { return manifest.tap_points.size(); }

  /// Compares every field; floats are compared by bit pattern.
  bool bit_equal(const FeatureBank& other) const;
};

inline constexpr char kBankMagic[5] = {'F', 'B', 'N', 'K', '1'};
inline constexpr double kOriginalPredsRowTol = 1e-5;

/// Builds the manifest from the payload so callers cannot get it out of sync.
BankManifest derive_manifest(std::size_t n_classes, const std::vector<TapPoint>& taps,
                             const FeatureBank& payload);

/// Throws ValidationError naming the first violated invariant.
void validate(const FeatureBank& bank);

/// FBNK1 layout: magic "FBNK1", u32le manifest byte length, UTF-8 JSON
/// manifest, each tap matrix as row-major f32le, labels u16le, original
/// predictions f32le, domain ids u16le. Optional blocks appear only when the
/// manifest flags them.
std::vector<std::uint8_t> encode_bank(const FeatureBank& bank);
FeatureBank decode_bank(std::span<const std::uint8_t> bytes);

void write_bank(const FeatureBank& bank, const std::filesystem::path& path);
FeatureBank read_bank(const std::filesystem::path& path);

/// Rows in the given order across every per-sample field.
FeatureBank slice_rows(const FeatureBank& bank, std::span<const std::size_t> indices);

/// Copy of the bank with labels replaced.
FeatureBank with_labels(const FeatureBank& bank, std::vector<std::uint16_t> labels);

}  // namespace probens

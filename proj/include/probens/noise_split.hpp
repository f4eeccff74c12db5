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
#include <vector>

#include "probens/matrix.hpp"

namespace probens {

struct SplitConfig {
  double gamma = 0.25;  // fraction routed to the unlabeled set
  std::uint64_t seed = 0;
};

void validate(const SplitConfig& cfg);

/// Labeled (low-entropy, trusted) vs unlabeled (high-entropy, suspect)
/// training indices. Both index lists are sorted ascending.
struct SplitAssignment {
  std::vector<std::size_t> labeled_indices;
  std::vector<std::size_t> unlabeled_indices;
  std::vector<double> entropies;

  std::size_t n_samples() const noexcept { return entropies.size(); }
  bool labeled_empty() const noexcept { return labeled_indices.empty(); }

  /// Per-sample membership flag (true = unlabeled).
  std::vector<bool> unlabeled_mask() const;

  bool operator==(const SplitAssignment&) const = default;
};

/// round(gamma * n) with halves rounded up.
std::size_t unlabeled_count(double gamma, std::size_t n);

/// Ranks samples by posterior entropy (descending) and routes the top
/// round(gamma * N) to the unlabeled set. Runs of exactly equal entropy are
/// ordered by a seeded shuffle.
SplitAssignment split_by_entropy(const Matrix& posteriors, const SplitConfig& cfg);

/// Fraction of samples whose labeled/unlabeled membership differs.
double split_change_fraction(const SplitAssignment& a, const SplitAssignment& b);

/// Throws ValidationError if the split is not a partition of [0, n).
void validate(const SplitAssignment& split, std::size_t n);

}  // namespace probens

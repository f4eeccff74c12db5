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

#include "probens/noise_split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "probens/aggregation.hpp"
#include "probens/rng.hpp"

namespace probens {

void validate(const SplitConfig& cfg) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw ValidationError("gamma must lie in [0,1]");
}

std::vector<bool> SplitAssignment::unlabeled_mask() const {
  std::vector<bool> mask(n_samples(), false);
  for (auto i : unlabeled_indices) mask[i] = true;
  return mask;
}

std::size_t unlabeled_count(double gamma, std::size_t n) {
  const auto m = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n) + 0.5));
  return std::min(m, n);
}

SplitAssignment split_by_entropy(const Matrix& posteriors, const SplitConfig& cfg) {
  validate(cfg);
  require_row_stochastic(posteriors, 1e-6, "split posteriors");
  const std::size_t n = posteriors.rows();

  SplitAssignment out;
  out.entropies = entropy_of(posteriors);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.entropies[a] > out.entropies[b];
  });
  Rng rng = make_rng(cfg.seed, "split-ties");
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && out.entropies[order[hi]] == out.entropies[order[lo]]) ++hi;
    if (hi - lo > 1) shuffle(order.begin() + static_cast<std::ptrdiff_t>(lo),
                             order.begin() + static_cast<std::ptrdiff_t>(hi), rng);
    lo = hi;
  }

  const std::size_t m = unlabeled_count(cfg.gamma, n);
  out.unlabeled_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  out.labeled_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
  std::sort(out.unlabeled_indices.begin(), out.unlabeled_indices.end());
  std::sort(out.labeled_indices.begin(), out.labeled_indices.end());
  return out;
}

double split_change_fraction(const SplitAssignment& a, const SplitAssignment& b) {
  if (a.n_samples() != b.n_samples()) throw ValidationError("splits cover different sample counts");
  if (a.n_samples() == 0) return 0.0;
  const auto ma = a.unlabeled_mask(), mb = b.unlabeled_mask();
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) changed += ma[i] != mb[i];
  return static_cast<double>(changed) / static_cast<double>(ma.size());
}

void validate(const SplitAssignment& split, std::size_t n) {
  if (split.entropies.size() != n) throw ValidationError("split entropies must have N entries");
  std::vector<int> seen(n, 0);
  for (const auto* list : {&split.labeled_indices, &split.unlabeled_indices}) {
    for (auto i : *list) {
      if (i >= n) throw ValidationError("split index out of range: " + std::to_string(i));
      if (seen[i]++) throw ValidationError("split index appears twice: " + std::to_string(i));
    }
  }
  if (split.labeled_indices.size() + split.unlabeled_indices.size() != n) {
    throw ValidationError("split does not cover every sample");
  }
}

}  // namespace probens

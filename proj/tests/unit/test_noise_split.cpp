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

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "probens/aggregation.hpp"
#include "probens/noise_split.hpp"
#include "probens/rng.hpp"

using namespace probens;

namespace {

Matrix random_posteriors(std::uint64_t seed, std::size_t n, std::size_t c) {
  Rng rng(seed);
  Matrix p(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (auto& v : p.row(i)) s += (v = std::exp(2.0 * standard_normal(rng)));
    for (auto& v : p.row(i)) v /= s;
  }
  return p;
}

void check_partition(const SplitAssignment& s, std::size_t n, std::size_t expected_unlabeled) {
  validate(s, n);
  CHECK(s.unlabeled_indices.size() == expected_unlabeled);
  double min_unlabeled = INFINITY, max_labeled = -INFINITY;
  for (auto i : s.unlabeled_indices) min_unlabeled = std::min(min_unlabeled, s.entropies[i]);
  for (auto i : s.labeled_indices) max_labeled = std::max(max_labeled, s.entropies[i]);
  if (!s.unlabeled_indices.empty() && !s.labeled_indices.empty()) {
    CHECK(min_unlabeled >= max_labeled);
  }
}

}  // namespace

TEST_CASE("split sizes follow round-half-up") {
  CHECK(unlabeled_count(0.3, 10) == 3);
  CHECK(unlabeled_count(0.25, 10) == 3);  // 2.5 rounds up
  CHECK(unlabeled_count(0.0, 10) == 0);
  CHECK(unlabeled_count(1.0, 10) == 10);

  const Matrix p = random_posteriors(1, 10, 3);
  check_partition(split_by_entropy(p, {0.3, 0}), 10, 3);
  const auto none = split_by_entropy(p, {0.0, 0});
  CHECK(none.unlabeled_indices.empty());
  CHECK(none.labeled_indices.size() == 10);
  const auto all = split_by_entropy(p, {1.0, 0});
  CHECK(all.labeled_empty());
}

TEST_CASE("highest-entropy rows are routed to the unlabeled set") {
  Matrix p(10, 4, 0.0);
  for (std::size_t i = 0; i < 10; ++i) p(i, i % 4) = 1.0;
  for (std::size_t c = 0; c < 4; ++c) {
    p(3, c) = 0.25;
    p(7, c) = 0.25;
  }
  const auto s = split_by_entropy(p, {0.2, 5});
  CHECK(s.unlabeled_indices == std::vector<std::size_t>{3, 7});
}

TEST_CASE("partition and ordering invariants on random posteriors") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + uniform_index(rng, 200), c = 2 + uniform_index(rng, 6);
    const double gamma = uniform01(rng);
    check_partition(split_by_entropy(random_posteriors(seed, n, c), {gamma, seed}), n,
                    unlabeled_count(gamma, n));
  }
}

TEST_CASE("ties are broken by the seed, deterministically") {
  const Matrix p(50, 3, 1.0 / 3);
  const auto a = split_by_entropy(p, {0.5, 1});
  const auto b = split_by_entropy(p, {0.5, 1});
  const auto other = split_by_entropy(p, {0.5, 2});
  CHECK(a == b);
  CHECK_FALSE(a.unlabeled_indices == other.unlabeled_indices);
  // Not simply the first indices.
  std::vector<std::size_t> first(25);
  for (std::size_t i = 0; i < 25; ++i) first[i] = i;
  CHECK_FALSE(a.unlabeled_indices == first);
  check_partition(a, 50, 25);
}

TEST_CASE("split validation and churn") {
  const Matrix p = random_posteriors(3, 8, 2);
  CHECK_THROWS_AS(split_by_entropy(p, {1.5, 0}), ValidationError);
  const auto a = split_by_entropy(p, {0.25, 0});
  const auto b = split_by_entropy(p, {0.5, 0});
  CHECK(split_change_fraction(a, a) == 0.0);
  CHECK(split_change_fraction(a, b) == doctest::Approx(2.0 / 8));

  SplitAssignment broken = a;
  broken.labeled_indices.push_back(broken.unlabeled_indices.front());
  CHECK_THROWS_AS(validate(broken, 8), ValidationError);
}

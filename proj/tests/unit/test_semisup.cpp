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

#include <cmath>
#include <numeric>

#include "probens/rng.hpp"
#include "probens/semisup.hpp"

using namespace probens;

namespace {

// Three well-separated classes in 4-D with 20% of labels flipped.
struct Toy {
  FeatureBank bank;
  std::vector<std::uint16_t> truth;
};

Toy toy(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Toy t;
  MatrixF f(n, 4);
  std::vector<std::uint16_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint16_t>(i % 3);
    t.truth.push_back(c);
    for (std::size_t d = 0; d < 4; ++d) {
      f(i, d) = static_cast<float>((d == c ? 3.0 : 0.0) + standard_normal(rng));
    }
    y[i] = uniform01(rng) < 0.2 ? static_cast<std::uint16_t>((c + 1) % 3) : c;
  }
  t.bank.features.push_back(std::move(f));
  t.bank.labels = y;
  t.bank.manifest = derive_manifest(3, {{"feat", 4}}, t.bank);
  return t;
}

SplitAssignment all_labeled(std::size_t n) {
  SplitAssignment s;
  s.labeled_indices.resize(n);
  std::iota(s.labeled_indices.begin(), s.labeled_indices.end(), std::size_t{0});
  s.entropies.assign(n, 0.0);
  return s;
}

SplitAssignment every_kth_unlabeled(std::size_t n, std::size_t k) {
  SplitAssignment s;
  for (std::size_t i = 0; i < n; ++i) (i % k == 0 ? s.unlabeled_indices : s.labeled_indices).push_back(i);
  s.entropies.assign(n, 0.0);
  return s;
}

double max_abs_diff(const ProbeModel& a, const ProbeModel& b) {
  double m = 0.0;
  for (std::size_t e = 0; e < a.weights.size(); ++e) {
    m = std::max(m, std::abs(a.weights.values()[e] - b.weights.values()[e]));
  }
  for (std::size_t c = 0; c < a.bias.size(); ++c) m = std::max(m, std::abs(a.bias[c] - b.bias[c]));
  return m;
}

}  // namespace

TEST_CASE("feature_augment") {
  Matrix x(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<double> sigma = {1.0, 2.0};
  CHECK(feature_augment(x, sigma, 0.0, 1) == x);
  CHECK(feature_augment(x, sigma, 0.1, 1) == feature_augment(x, sigma, 0.1, 1));
  CHECK_FALSE(feature_augment(x, sigma, 0.1, 1) == feature_augment(x, sigma, 0.1, 2));

  SUBCASE("noise is zero-mean (Monte Carlo)") {
    const std::size_t reps = 10000;
    Matrix row(reps, 2);
    for (std::size_t r = 0; r < reps; ++r) {
      row(r, 0) = 1.5;
      row(r, 1) = -0.5;
    }
    const double scale = 0.3;
    const Matrix aug = feature_augment(row, sigma, scale, 99);
    for (std::size_t d = 0; d < 2; ++d) {
      double mean = 0.0;
      for (std::size_t r = 0; r < reps; ++r) mean += aug(r, d);
      mean /= reps;
      const double se = scale * sigma[d] / std::sqrt(static_cast<double>(reps));
      CHECK(std::abs(mean - row(0, d)) < 3 * se);
    }
  }
}

TEST_CASE("sharpen") {
  const std::vector<double> uniform(5, 0.2);
  for (double t : {0.1, 0.5, 2.0}) {
    for (double v : sharpen(uniform, t)) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
  }
  const std::vector<double> p = {0.1, 0.6, 0.3};
  const auto same = sharpen(p, 1.0);
  for (std::size_t c = 0; c < 3; ++c) CHECK(same[c] == doctest::Approx(p[c]).epsilon(1e-14));
  const auto q = sharpen(std::vector<double>{0.8, 0.2}, 0.5);
  CHECK(q[0] == doctest::Approx(0.64 / 0.68).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(0.04 / 0.68).epsilon(1e-14));
  CHECK(q[0] == doctest::Approx(0.9412).epsilon(1e-4));
  // Very low temperatures do not underflow.
  const auto sharp = sharpen(std::vector<double>{0.3, 0.7}, 1e-3);
  CHECK(sharp[1] == doctest::Approx(1.0));
}

TEST_CASE("guess_labels") {
  Rng rng(5);
  ProbeModel m = ProbeModel::zeros(3, 4, 0);
  for (auto& v : m.weights.values()) v = standard_normal(rng);
  Matrix x(6, 3);
  for (auto& v : x.values()) v = standard_normal(rng);
  const std::vector<double> sigma = {1.0, 0.5, 2.0};

  SUBCASE("identity augmentation and temperature reduce to probe_forward") {
    MixMatchConfig cfg;
    cfg.aug_sigma_scale = 0.0;
    cfg.sharpen_temp = 1.0;
    const Matrix g = guess_labels(m, x, sigma, cfg, 3);
    const Matrix p = probe_forward(m, x);
    for (std::size_t e = 0; e < g.size(); ++e) {
      CHECK(g.values()[e] == doctest::Approx(p.values()[e]).epsilon(1e-12));
    }
  }
  SUBCASE("two augmentations compose from single ones") {
    MixMatchConfig cfg;
    cfg.n_augment = 2;
    const Matrix g = guess_labels(m, x, sigma, cfg, 11);
    const Matrix a = probe_forward(m, feature_augment(x, sigma, cfg.aug_sigma_scale, augmentation_seed(11, 0)));
    const Matrix b = probe_forward(m, feature_augment(x, sigma, cfg.aug_sigma_scale, augmentation_seed(11, 1)));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      std::vector<double> mean(4);
      for (std::size_t c = 0; c < 4; ++c) mean[c] = (a(i, c) + b(i, c)) / 2;
      const auto expected = sharpen(mean, cfg.sharpen_temp);
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(g(i, c) == doctest::Approx(expected[c]).epsilon(1e-12));
        sum += g(i, c);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("mixup") {
  const std::vector<double> xa = {1, 2}, ya = {1, 0, 0}, xb = {-3, 5}, yb = {0, 0.5, 0.5};
  const auto keep = mix_with_weight(xa, ya, xb, yb, 1.0);
  CHECK(keep.x == xa);
  CHECK(keep.y == ya);
  const auto same = mixup_pair(xa, ya, xa, ya, 0.75, 4);
  for (std::size_t d = 0; d < 2; ++d) CHECK(same.x[d] == doctest::Approx(xa[d]));
  for (std::size_t c = 0; c < 3; ++c) CHECK(same.y[c] == doctest::Approx(ya[c]));
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto m = mixup_pair(xa, ya, xb, yb, 0.75, s);
    CHECK(m.y[0] + m.y[1] + m.y[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.y[0] >= 0.5);  // the first operand always dominates
  }
}

TEST_CASE("semisup_train_probe reduces to supervised training") {
  const Toy t = toy(90, 1);
  TrainConfig tc;
  tc.epochs = 7;
  tc.batch_size = 16;
  tc.learning_rate = 0.05;
  tc.weight_decay = 1e-3;
  tc.seed = 21;

  MixMatchConfig mc;
  mc.epochs = tc.epochs;
  mc.batch_size = tc.batch_size;
  mc.learning_rate = tc.learning_rate;
  mc.weight_decay = tc.weight_decay;
  mc.seed = tc.seed;
  mc.aug_sigma_scale = 0.0;
  mc.mixup = false;

  SUBCASE("no unlabeled samples") {
    const Matrix targets = one_hot(std::span<const std::uint16_t>(*t.bank.labels), 3);
    const ProbeModel supervised = train_probe(t.bank, 0, targets, tc);
    TrainConfig zero = tc;
    zero.epochs = 0;
    const ProbeModel start = train_probe(t.bank, 0, targets, zero);
    const ProbeModel semi = semisup_train_probe(start, t.bank, all_labeled(90), mc);
    CHECK(max_abs_diff(semi, supervised) < 1e-9);
  }
  SUBCASE("unlabeled samples ignored when lambda_u = 0 and mixing is off") {
    const auto split = every_kth_unlabeled(90, 4);
    const FeatureBank labeled = slice_rows(t.bank, split.labeled_indices);
    const Matrix targets = one_hot(std::span<const std::uint16_t>(*labeled.labels), 3);
    const ProbeModel supervised = train_probe(labeled, 0, targets, tc);
    TrainConfig zero = tc;
    zero.epochs = 0;
    const ProbeModel start = train_probe(labeled, 0, targets, zero);
    mc.lambda_u = 0.0;
    const ProbeModel semi = semisup_train_probe(start, t.bank, split, mc);
    CHECK(max_abs_diff(semi, supervised) < 1e-9);
  }
}

TEST_CASE("semisup_train_probe behaviour") {
  const Toy t = toy(120, 2);
  const Matrix targets = one_hot(std::span<const std::uint16_t>(*t.bank.labels), 3);
  TrainConfig tc;
  tc.epochs = 5;
  const ProbeModel start = train_probe(t.bank, 0, targets, tc);
  const auto split = every_kth_unlabeled(120, 3);
  MixMatchConfig mc;
  mc.epochs = 5;
  mc.batch_size = 32;
  mc.seed = 8;

  CHECK(semisup_train_probe(start, t.bank, split, [&] {
          auto c = mc;
          c.epochs = 0;
          return c;
        }()) == start);
  const auto a = semisup_train_probe(start, t.bank, split, mc);
  const auto b = semisup_train_probe(start, t.bank, split, mc);
  CHECK(a == b);
  CHECK_FALSE(a == start);
  CHECK(a.standardizer == start.standardizer);

  TrainCurve curve;
  semisup_train_probe(start, t.bank, split, mc, &curve);
  CHECK(curve.size() == 5);
  for (double v : curve) CHECK(std::isfinite(v));

  SplitAssignment empty;
  empty.unlabeled_indices.resize(120);
  std::iota(empty.unlabeled_indices.begin(), empty.unlabeled_indices.end(), std::size_t{0});
  empty.entropies.assign(120, 0.0);
  CHECK_THROWS_WITH_AS(semisup_train_probe(start, t.bank, empty, mc), doctest::Contains("empty"),
                       ValidationError);
}

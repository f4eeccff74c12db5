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

#include "probens/aggregation.hpp"
#include "probens/rng.hpp"

using namespace probens;

namespace {

AnnotationTensor random_soft(std::uint64_t seed, std::size_t n, std::size_t k, std::size_t c,
                             bool hard = false) {
  Rng rng(seed);
  const double temp = 0.5 + 2.5 * uniform01(rng);
  AnnotationTensor ann(n, k, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      auto s = ann.slice(i, j);
      double z = 0.0;
      for (auto& v : s) z += (v = std::exp(temp * standard_normal(rng)));
      for (auto& v : s) v /= z;
    }
  }
  return hard ? harden(ann) : ann;
}

AnnotationTensor hard_from_labels(const std::vector<std::vector<std::size_t>>& per_annotator,
                                  std::size_t c) {
  const std::size_t k = per_annotator.size(), n = per_annotator[0].size();
  AnnotationTensor ann(n, k, c, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < n; ++i) ann(i, j, per_annotator[j][i]) = 1.0;
  }
  return ann;
}

// Direct product form: log prod_i prod_c [prior_c prod_j prod_c' pi^ann]^post.
double direct_objective(const AnnotationTensor& ann, const Matrix& post,
                        const std::vector<ConfusionMatrix>& pis, const std::vector<double>& prior) {
  double product = 1.0;
  for (std::size_t i = 0; i < ann.n_samples(); ++i) {
    for (std::size_t c = 0; c < ann.n_classes(); ++c) {
      double inner = prior[c];
      for (std::size_t j = 0; j < ann.n_annotators(); ++j) {
        for (std::size_t e = 0; e < ann.n_classes(); ++e) {
          inner *= std::pow(std::max(pis[j].values(c, e), kPiFloor), ann(i, j, e));
        }
      }
      product *= std::pow(inner, post(i, c));
    }
  }
  return std::log(product);
}

std::vector<ConfusionMatrix> random_confusions(Rng& rng, std::size_t k, std::size_t c) {
  std::vector<ConfusionMatrix> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    out[j].values = Matrix(c, c);
    out[j].annotator_index = j;
    for (std::size_t r = 0; r < c; ++r) {
      double s = 0.0;
      for (std::size_t e = 0; e < c; ++e) s += (out[j].values(r, e) = 0.05 + uniform01(rng));
      for (std::size_t e = 0; e < c; ++e) out[j].values(r, e) /= s;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("avg_aggregate") {
  AnnotationTensor ann(1, 2, 2);
  ann(0, 0, 0) = 0.8;
  ann(0, 0, 1) = 0.2;
  ann(0, 1, 0) = 0.4;
  ann(0, 1, 1) = 0.6;
  const Matrix p = avg_aggregate(ann);
  CHECK(p(0, 0) == doctest::Approx(0.6));
  CHECK(p(0, 1) == doctest::Approx(0.4));

  const auto single = random_soft(3, 10, 1, 4);
  CHECK(avg_aggregate(single) == single.annotator(0));

  AnnotationTensor same(5, 3, 4);
  const auto base = random_soft(4, 5, 1, 4);
  for (std::size_t j = 0; j < 3; ++j) same.set_annotator(j, base.annotator(0));
  const Matrix q = avg_aggregate(same);
  for (std::size_t e = 0; e < q.size(); ++e) {
    CHECK(q.values()[e] == doctest::Approx(base.annotator(0).values()[e]).epsilon(1e-15));
  }
}

TEST_CASE("annotation tensor validation") {
  AnnotationTensor ann(1, 1, 2);
  ann(0, 0, 0) = 0.5;
  ann(0, 0, 1) = 0.4;
  CHECK_THROWS_AS(ann.validate(), ValidationError);
  ann(0, 0, 1) = NAN;
  CHECK_THROWS_AS(ds_aggregate(ann, {}), ValidationError);
}

TEST_CASE("ds_loglikelihood") {
  SUBCASE("single consistent one-hot term") {
    AnnotationTensor ann(1, 1, 2, 0.0);
    ann(0, 0, 0) = 1.0;
    Matrix post(1, 2, 0.0);
    post(0, 0) = 1.0;
    std::vector<ConfusionMatrix> pi(1);
    pi[0].values = Matrix(2, 2, std::vector<double>{1, 0, 0, 1});
    const double v = ds_loglikelihood(ann, post, pi, uniform_prior(2));
    CHECK(v == doctest::Approx(std::log(0.5) + std::log1p(-kPiFloor)).epsilon(1e-12));
  }
  SUBCASE("uniform closed form") {
    const std::size_t n = 6, k = 3, c = 4;
    const auto ann = random_soft(8, n, k, c);
    Matrix post(n, c, 0.25);
    std::vector<ConfusionMatrix> pi(k);
    for (auto& p : pi) p.values = Matrix(c, c, 0.25);
    const double expected = n * (std::log(0.25) + k * std::log(0.25));
    CHECK(ds_loglikelihood(ann, post, pi, uniform_prior(c)) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("matches the direct product form") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const std::size_t n = 4, k = 3, c = 3;
      const auto ann = random_soft(seed + 50, n, k, c);
      const Matrix post = avg_aggregate(random_soft(seed + 60, n, 2, c));
      const auto pis = random_confusions(rng, k, c);
      const auto prior = uniform_prior(c);
      CHECK(std::abs(ds_loglikelihood(ann, post, pis, prior) -
                     direct_objective(ann, post, pis, prior)) < 1e-9);
    }
  }
}

TEST_CASE("ds_aggregate one EM iteration on a hand-worked instance") {
  // annotator 1: c1 c1 c2, annotator 2: c1 c2 c2
  const auto ann = hard_from_labels({{0, 0, 1}, {0, 1, 1}}, 2);
  DSConfig cfg;
  cfg.maxiter = 1;
  cfg.epsilon_smooth = 0.0;
  const auto res = ds_aggregate(ann, cfg);
  CHECK(res.n_iters == 1);
  const auto& p1 = res.confusions[0].values;
  const auto& p2 = res.confusions[1].values;
  const double tol = 1e-9;
  CHECK(std::abs(p1(0, 0) - 1.0) < tol);
  CHECK(std::abs(p1(0, 1) - 0.0) < tol);
  CHECK(std::abs(p1(1, 0) - 1.0 / 3) < tol);
  CHECK(std::abs(p1(1, 1) - 2.0 / 3) < tol);
  CHECK(std::abs(p2(0, 0) - 2.0 / 3) < tol);
  CHECK(std::abs(p2(0, 1) - 1.0 / 3) < tol);
  CHECK(std::abs(p2(1, 0) - 0.0) < tol);
  CHECK(std::abs(p2(1, 1) - 1.0) < tol);
  const double expected[3][2] = {{1, 0}, {0.5, 0.5}, {0, 1}};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(res.posteriors(i, c) - expected[i][c]) < tol);
  }
}

TEST_CASE("ds_aggregate fixed points and variants") {
  SUBCASE("unanimous one-hot annotators") {
    const std::vector<std::size_t> labels = {0, 2, 1, 1, 0, 2, 2};
    const auto ann = hard_from_labels({labels, labels, labels, labels}, 3);
    const auto res = ds_aggregate(ann, {});
    CHECK(res.converged);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      CHECK(std::abs(res.posteriors(i, labels[i]) - 1.0) < 1e-6);
    }
    for (const auto& pi : res.confusions) {
      for (std::size_t c = 0; c < 3; ++c) CHECK(pi.values(c, c) > 1.0 - 1e-5);
    }
  }
  SUBCASE("hardening is the identity on one-hot input") {
    const auto ann = random_soft(21, 30, 4, 3, true);
    DSConfig soft, hard;
    hard.hard_inputs = true;
    const auto a = ds_aggregate(ann, soft);
    const auto b = ds_aggregate(ann, hard);
    CHECK(a.posteriors == b.posteriors);
    CHECK(a.n_iters == b.n_iters);
  }
  SUBCASE("hardening breaks ties toward the lowest class") {
    AnnotationTensor ann(1, 1, 3, 0.0);
    ann(0, 0, 1) = 0.5;
    ann(0, 0, 2) = 0.5;
    CHECK(harden(ann)(0, 0, 1) == 1.0);
  }
  SUBCASE("posteriors stay row-stochastic every iteration") {
    const auto ann = random_soft(22, 40, 5, 4);
    std::size_t calls = 0;
    ds_aggregate(ann, {}, [&](std::size_t, const Matrix& post, const std::vector<ConfusionMatrix>& pis) {
      ++calls;
      require_row_stochastic(post, 1e-9, "posteriors");
      for (const auto& pi : pis) {
        require_row_stochastic(pi.values, 1e-9, "confusion");
        for (double v : pi.values.values()) CHECK(v >= kPiFloor);
      }
    });
    CHECK(calls > 0);
  }
  SUBCASE("a class that never receives posterior mass is smoothed, not an error") {
    // Every annotator always says class 0; class 1 columns get no mass.
    AnnotationTensor ann(5, 2, 2, 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
      ann(i, 0, 0) = 1.0;
      ann(i, 1, 0) = 1.0;
    }
    const auto res = ds_aggregate(ann, {});
    require_row_stochastic(res.posteriors, 1e-9, "posteriors");
  }
}

TEST_CASE("EM never decreases the free energy") {
  std::size_t decreases_of_expected_objective = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + uniform_index(rng, 49), k = 1 + uniform_index(rng, 5),
                      c = 2 + uniform_index(rng, 3);
    const auto ann = random_soft(seed + 500, n, k, c, seed % 2 == 1);
    const DSConfig cfg;
    const auto prior = uniform_prior(c);
    std::vector<double> fe, ll;
    ds_aggregate(ann, cfg, [&](std::size_t, const Matrix& post, const std::vector<ConfusionMatrix>& pis) {
      fe.push_back(ds_free_energy(ann, post, pis, prior, cfg.epsilon_smooth));
      ll.push_back(ds_loglikelihood(ann, post, pis, prior));
    });
    for (std::size_t t = 1; t < fe.size(); ++t) {
      CHECK(fe[t] - fe[t - 1] >= -1e-8);
      if (ll[t] - ll[t - 1] < -1e-8) ++decreases_of_expected_objective;
    }
  }
  // The posterior-weighted objective alone is not an EM ascent quantity: the
  // E-step trades it against posterior entropy.
  CHECK(decreases_of_expected_objective > 0);
}

TEST_CASE("permutation equivariance") {
  const std::size_t n = 25, k = 4, c = 3;
  const auto ann = random_soft(77, n, k, c);
  const auto base = ds_aggregate(ann, {});

  SUBCASE("annotators") {
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    AnnotationTensor shuffled(n, k, c);
    for (std::size_t j = 0; j < k; ++j) shuffled.set_annotator(j, ann.annotator(perm[j]));
    const auto res = ds_aggregate(shuffled, {});
    for (std::size_t e = 0; e < base.posteriors.size(); ++e) {
      CHECK(std::abs(res.posteriors.values()[e] - base.posteriors.values()[e]) < 1e-9);
    }
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t e = 0; e < c * c; ++e) {
        CHECK(std::abs(res.confusions[j].values.values()[e] -
                       base.confusions[perm[j]].values.values()[e]) < 1e-9);
      }
    }
  }
  SUBCASE("classes") {
    const std::vector<std::size_t> perm = {1, 2, 0};  // new class q holds old class perm[q]
    AnnotationTensor relabeled(n, k, c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t q = 0; q < c; ++q) relabeled(i, j, q) = ann(i, j, perm[q]);
      }
    }
    const auto res = ds_aggregate(relabeled, {});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < c; ++q) {
        CHECK(std::abs(res.posteriors(i, q) - base.posteriors(i, perm[q])) < 1e-9);
      }
    }
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = 0; b < c; ++b) {
          CHECK(std::abs(res.confusions[j].values(a, b) -
                         base.confusions[j].values(perm[a], perm[b])) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("entropy_of") {
  Matrix p(3, 2);
  p(0, 0) = 1.0;
  p(0, 1) = 0.0;
  p(1, 0) = 0.5;
  p(1, 1) = 0.5;
  p(2, 0) = 0.8;
  p(2, 1) = 0.2;
  const auto h = entropy_of(p);
  CHECK(h[0] == 0.0);
  CHECK(h[1] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(h[2] == doctest::Approx(-0.8 * std::log(0.8) - 0.2 * std::log(0.2)).epsilon(1e-15));
  CHECK(h[2] == doctest::Approx(0.5004).epsilon(1e-4));

  Matrix u(1, 7, 1.0 / 7);
  CHECK(entropy_of(u)[0] == doctest::Approx(std::log(7.0)).epsilon(1e-14));
}

TEST_CASE("majority vote ties go to the lowest class") {
  const auto ann = hard_from_labels({{2}, {1}}, 3);
  const Matrix mv = majority_vote(ann);
  CHECK(mv(0, 1) == 1.0);
}

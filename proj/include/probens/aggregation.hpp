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
#include <functional>
#include <span>
#include <vector>

#include "probens/matrix.hpp"

namespace probens {

/// N x K x C soft annotations; slice (i, j) is annotator j's distribution for sample i.
class AnnotationTensor {
 public:
  AnnotationTensor() = default;
  AnnotationTensor(std::size_t n, std::size_t k, std::size_t c, double fill = 0.0)
      : n_(n), k_(k), c_(c), values_(n * k * c, fill) {}

  std::size_t n_samples() const noexcept { return n_; }
  std::size_t n_annotators() const noexcept { return k_; }
  std::size_t n_classes() const noexcept { return c_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t c) noexcept {
    return values_[(i * k_ + j) * c_ + c];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t c) const noexcept {
    return values_[(i * k_ + j) * c_ + c];
  }

  std::span<double> slice(std::size_t i, std::size_t j) noexcept {
    return {values_.data() + (i * k_ + j) * c_, c_};
  }
  std::span<const double> slice(std::size_t i, std::size_t j) const noexcept {
    return {values_.data() + (i * k_ + j) * c_, c_};
  }

  /// Writes an N x C matrix into annotator slot j.
  void set_annotator(std::size_t j, const Matrix& m);
  Matrix annotator(std::size_t j) const;

  /// Throws ValidationError unless every slice is a distribution within tol.
  void validate(double tol = 1e-5) const;

  bool operator==(const AnnotationTensor&) const = default;

 private:
  std::size_t n_ = 0, k_ = 0, c_ = 0;
  std::vector<double> values_;
};

struct ConfusionMatrix {
  Matrix values;  // row = true class, column = emitted class
  std::size_t annotator_index = 0;
};

struct DSConfig {
  std::size_t maxiter = 100;
  double pi_tol = 1e-6;
  bool hard_inputs = false;
  double epsilon_smooth = 1e-6;
};

void validate(const DSConfig& cfg);

inline constexpr double kPiFloor = 1e-12;

struct AggregateResult {
  Matrix posteriors;
  std::vector<ConfusionMatrix> confusions;
  std::size_t n_iters = 0;
  double final_loglik = 0.0;
  bool converged = false;
};

/// Called after every EM iteration with the freshly updated confusions and
/// posteriors.
using EmObserver = std::function<void(std::size_t iter, const Matrix& posteriors,
                                      const std::vector<ConfusionMatrix>& confusions)>;

/// Mean over annotators.
Matrix avg_aggregate(const AnnotationTensor& ann);

/// One-hot of each slice's argmax (ties to the lowest class).
AnnotationTensor harden(const AnnotationTensor& ann);

/// Per-sample plurality of annotator argmaxes, one-hot; ties to the lowest class.
Matrix majority_vote(const AnnotationTensor& ann);

std::vector<double> uniform_prior(std::size_t n_classes);

/// Expected complete-data log-likelihood of the soft Dawid-Skene model:
///   sum_i sum_c post_ic (log prior_c + sum_j sum_c' ann_ijc' log pi_j(c,c')),
/// with pi clamped below at kPiFloor.
double ds_loglikelihood(const AnnotationTensor& ann, const Matrix& posteriors,
                        const std::vector<ConfusionMatrix>& confusions,
                        std::span<const double> prior);

/// ds_loglikelihood plus the posterior entropy plus the smoothing term
/// epsilon_smooth * sum log pi. EM with additive smoothing never decreases
/// this quantity; at an exact E-step it equals the marginal log-likelihood
/// (plus the smoothing term).
double ds_free_energy(const AnnotationTensor& ann, const Matrix& posteriors,
                      const std::vector<ConfusionMatrix>& confusions,
                      std::span<const double> prior, double epsilon_smooth);

/// Soft-label Dawid-Skene EM. Posteriors start at the annotator mean and
/// confusions at 1/C; each iteration runs the M-step (confusions) then the
/// E-step (posteriors, in log space), stopping once the largest confusion
/// entry change drops below pi_tol.
AggregateResult ds_aggregate(const AnnotationTensor& ann, const DSConfig& cfg,
                             const EmObserver& observer = {});

/// Shannon entropy (natural log) of each row, with 0 log 0 = 0.
std::vector<double> entropy_of(const Matrix& posteriors);

}  // namespace probens

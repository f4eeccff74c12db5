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

#include "probens/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace probens {

void AnnotationTensor::set_annotator(std::size_t j, const Matrix& m) {
  if (j >= k_ || m.rows() != n_ || m.cols() != c_) {
    throw ValidationError("annotator matrix shape does not match tensor");
  }
  for (std::size_t i = 0; i < n_; ++i) {
    auto src = m.row(i);
    std::copy(src.begin(), src.end(), slice(i, j).begin());
  }
}

Matrix AnnotationTensor::annotator(std::size_t j) const {
  Matrix m(n_, c_);
  for (std::size_t i = 0; i < n_; ++i) {
    auto src = slice(i, j);
    std::copy(src.begin(), src.end(), m.row(i).begin());
  }
  return m;
}

void AnnotationTensor::validate(double tol) const {
  if (n_ == 0 || k_ == 0 || c_ == 0) throw ValidationError("annotation tensor is empty");
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < k_; ++j) {
      double sum = 0.0;
      for (double v : slice(i, j)) {
        if (std::isnan(v) || v < 0.0 || v > 1.0 + tol) {
          throw ValidationError("annotation (" + std::to_string(i) + "," + std::to_string(j) +
                                ") has an entry outside [0,1]");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol) {
        throw ValidationError("annotation (" + std::to_string(i) + "," + std::to_string(j) +
                              ") sums to " + std::to_string(sum));
      }
    }
  }
}

void validate(const DSConfig& cfg) {
  if (cfg.maxiter < 1) throw ValidationError("ds maxiter must be >= 1");
  if (!(cfg.pi_tol > 0.0)) throw ValidationError("ds pi_tol must be > 0");
  if (!(cfg.epsilon_smooth >= 0.0)) throw ValidationError("ds epsilon_smooth must be >= 0");
}

Matrix avg_aggregate(const AnnotationTensor& ann) {
  ann.validate();
  const std::size_t n = ann.n_samples(), k = ann.n_annotators(), c = ann.n_classes();
  Matrix out(n, c, 0.0);
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      auto s = ann.slice(i, j);
      for (std::size_t cc = 0; cc < c; ++cc) r[cc] += s[cc];
    }
    for (auto& v : r) v *= inv_k;
  }
  return out;
}

AnnotationTensor harden(const AnnotationTensor& ann) {
  AnnotationTensor out(ann.n_samples(), ann.n_annotators(), ann.n_classes(), 0.0);
  for (std::size_t i = 0; i < ann.n_samples(); ++i) {
    for (std::size_t j = 0; j < ann.n_annotators(); ++j) {
      out(i, j, argmax(ann.slice(i, j))) = 1.0;
    }
  }
  return out;
}

Matrix majority_vote(const AnnotationTensor& ann) {
  const std::size_t n = ann.n_samples(), c = ann.n_classes();
  Matrix out(n, c, 0.0);
  std::vector<std::size_t> votes(c);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t j = 0; j < ann.n_annotators(); ++j) ++votes[argmax(ann.slice(i, j))];
    const auto best = static_cast<std::size_t>(
        std::max_element(votes.begin(), votes.end()) - votes.begin());
    out(i, best) = 1.0;
  }
  return out;
}

std::vector<double> uniform_prior(std::size_t n_classes) {
  return std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes));
}

namespace {

void check_shapes(const AnnotationTensor& ann, const Matrix& post,
                  const std::vector<ConfusionMatrix>& confusions, std::span<const double> prior) {
  const std::size_t c = ann.n_classes();
  if (post.rows() != ann.n_samples() || post.cols() != c || prior.size() != c ||
      confusions.size() != ann.n_annotators()) {
    throw ValidationError("ds: inconsistent shapes");
  }
  for (const auto& pi : confusions) {
    if (pi.values.rows() != c || pi.values.cols() != c) {
      throw ValidationError("ds: confusion matrix is not C x C");
    }
  }
}

// log max(pi, floor) for every annotator, flattened K x C x C.
std::vector<double> log_confusions(const std::vector<ConfusionMatrix>& confusions) {
  std::vector<double> out;
  for (const auto& pi : confusions) {
    for (double v : pi.values.values()) out.push_back(std::log(std::max(v, kPiFloor)));
  }
  return out;
}

// score(i, c) = sum_j sum_c' ann_ijc' log pi_j(c, c')
Matrix annotation_scores(const AnnotationTensor& ann, const std::vector<double>& log_pi) {
  const std::size_t n = ann.n_samples(), k = ann.n_annotators(), c = ann.n_classes();
  Matrix s(n, c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto si = s.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      auto a = ann.slice(i, j);
      const double* lp = log_pi.data() + j * c * c;
      for (std::size_t t = 0; t < c; ++t) {
        double acc = 0.0;
        for (std::size_t e = 0; e < c; ++e) {
          if (a[e] != 0.0) acc += a[e] * lp[t * c + e];
        }
        si[t] += acc;
      }
    }
  }
  return s;
}

void m_step(const AnnotationTensor& ann, const Matrix& post, double eps,
            std::vector<ConfusionMatrix>& confusions) {
  const std::size_t n = ann.n_samples(), k = ann.n_annotators(), c = ann.n_classes();
  std::vector<double> mass(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < c; ++t) mass[t] += post(i, t);
  }
  for (std::size_t j = 0; j < k; ++j) {
    Matrix num(c, c, eps);
    for (std::size_t i = 0; i < n; ++i) {
      auto a = ann.slice(i, j);
      for (std::size_t t = 0; t < c; ++t) {
        const double w = post(i, t);
        if (w == 0.0) continue;
        auto r = num.row(t);
        for (std::size_t e = 0; e < c; ++e) r[e] += w * a[e];
      }
    }
    for (std::size_t t = 0; t < c; ++t) {
      auto r = num.row(t);
      const double den = mass[t] + static_cast<double>(c) * eps;
      if (!(den > 0.0)) {
        std::fill(r.begin(), r.end(), 1.0 / static_cast<double>(c));
        continue;
      }
      double sum = 0.0;
      for (auto& v : r) {
        v = std::max(v / den, kPiFloor);
        sum += v;
      }
      for (auto& v : r) v /= sum;
    }
    confusions[j].values = std::move(num);
  }
}

void e_step(const AnnotationTensor& ann, const std::vector<ConfusionMatrix>& confusions,
            std::span<const double> prior, std::size_t iter, Matrix& post) {
  Matrix s = annotation_scores(ann, log_confusions(confusions));
  const std::size_t c = ann.n_classes();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto r = s.row(i);
    double mx = -INFINITY;
    for (std::size_t t = 0; t < c; ++t) {
      r[t] += std::log(prior[t]);
      mx = std::max(mx, r[t]);
    }
    double z = 0.0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      z += v;
    }
    for (std::size_t t = 0; t < c; ++t) {
      const double p = r[t] / z;
      if (!std::isfinite(p)) {
        throw NumericalError("ds_aggregate: non-finite posterior for sample " + std::to_string(i) +
                             " at iteration " + std::to_string(iter));
      }
      post(i, t) = p;
    }
  }
}

}  // namespace

double ds_loglikelihood(const AnnotationTensor& ann, const Matrix& posteriors,
                        const std::vector<ConfusionMatrix>& confusions,
                        std::span<const double> prior) {
  check_shapes(ann, posteriors, confusions, prior);
  const Matrix s = annotation_scores(ann, log_confusions(confusions));
  double total = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t t = 0; t < s.cols(); ++t) {
      const double w = posteriors(i, t);
      if (w != 0.0) total += w * (std::log(prior[t]) + s(i, t));
    }
  }
  return total;
}

double ds_free_energy(const AnnotationTensor& ann, const Matrix& posteriors,
                      const std::vector<ConfusionMatrix>& confusions,
                      std::span<const double> prior, double epsilon_smooth) {
  double value = ds_loglikelihood(ann, posteriors, confusions, prior);
  for (double h : entropy_of(posteriors)) value += h;
  if (epsilon_smooth > 0.0) {
    double penalty = 0.0;
    for (double lp : log_confusions(confusions)) penalty += lp;
    value += epsilon_smooth * penalty;
  }
  return value;
}

AggregateResult ds_aggregate(const AnnotationTensor& input, const DSConfig& cfg,
                             const EmObserver& observer) {
  validate(cfg);
  input.validate();
  const AnnotationTensor ann = cfg.hard_inputs ? harden(input) : input;
  const std::size_t k = ann.n_annotators(), c = ann.n_classes();
  const auto prior = uniform_prior(c);

  AggregateResult res;
  res.posteriors = avg_aggregate(ann);
  res.confusions.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    res.confusions[j].values = Matrix(c, c, 1.0 / static_cast<double>(c));
    res.confusions[j].annotator_index = j;
  }

  for (std::size_t iter = 0; iter < cfg.maxiter; ++iter) {
    std::vector<ConfusionMatrix> previous = res.confusions;
    m_step(ann, res.posteriors, cfg.epsilon_smooth, res.confusions);
    double delta = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      auto now = res.confusions[j].values.values();
      auto before = previous[j].values.values();
      for (std::size_t e = 0; e < now.size(); ++e) {
        if (std::isnan(now[e])) {
          throw NumericalError("ds_aggregate: NaN confusion entry at iteration " +
                               std::to_string(iter));
        }
        delta = std::max(delta, std::abs(now[e] - before[e]));
      }
    }
    e_step(ann, res.confusions, prior, iter, res.posteriors);
    res.n_iters = iter + 1;
    if (observer) observer(iter, res.posteriors, res.confusions);
    if (delta < cfg.pi_tol) {
      res.converged = true;
      break;
    }
  }
  res.final_loglik = ds_loglikelihood(ann, res.posteriors, res.confusions, prior);
  return res;
}

std::vector<double> entropy_of(const Matrix& posteriors) {
  std::vector<double> h(posteriors.rows(), 0.0);
  for (std::size_t i = 0; i < posteriors.rows(); ++i) {
    double acc = 0.0;
    for (double p : posteriors.row(i)) {
      if (p > 0.0) acc -= p * std::log(p);
    }
    h[i] = std::max(acc, 0.0);
  }
  return h;
}

}  // namespace probens

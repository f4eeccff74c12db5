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

#include "probens/pipeline.hpp"

#include <cmath>
#include <future>
#include <map>
#include <string>

#include "probens/rng.hpp"

namespace probens {

std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::avg: return "avg";
    case Aggregator::softds: return "softds";
    case Aggregator::hardds: return "hardds";
  }
  return "?";
}

Aggregator parse_aggregator(const std::string& name) {
  if (name == "avg") return Aggregator::avg;
  if (name == "softds") return Aggregator::softds;
  if (name == "hardds") return Aggregator::hardds;
  throw ValidationError("unknown aggregator '" + name + "' (expected avg, softds or hardds)");
}

void validate(const PipelineConfig& cfg) {
  if (cfg.agg_train == Aggregator::hardds) {
    throw ValidationError("training aggregation must be avg or softds");
  }
  validate(cfg.split_cfg);
  validate(cfg.mixmatch_cfg);
  validate(cfg.train_cfg);
  validate(cfg.ds_cfg);
  if (!(cfg.stop_delta >= 0.0 && cfg.stop_delta <= 1.0)) {
    throw ValidationError("stop_delta must lie in [0,1]");
  }
}

std::vector<std::size_t> resolve_taps(const PipelineConfig& cfg, const FeatureBank& bank) {
  std::vector<std::size_t> taps = cfg.tap_selection;
  if (taps.empty()) {
    for (std::size_t t = 0; t < bank.n_taps(); ++t) taps.push_back(t);
  }
  for (auto t : taps) {
    if (t >= bank.n_taps()) throw ValidationError("tap_selection names tap " + std::to_string(t) +
                                                  " but the bank has " +
                                                  std::to_string(bank.n_taps()));
  }
  return taps;
}

namespace {

// Runs fn(0..n-1) on worker threads; results are index-ordered so the
// outcome does not depend on scheduling.
template <typename Fn>
auto parallel_map(std::size_t n, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::future<R>> jobs;
  for (std::size_t i = 0; i < n; ++i) jobs.push_back(std::async(std::launch::async, fn, i));
  std::vector<R> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

Matrix labels_one_hot(const FeatureBank& bank) {
  return one_hot(std::span<const std::uint16_t>(*bank.labels), bank.n_classes());
}

}  // namespace

TrainConfig warmup_config(const PipelineConfig& cfg, std::size_t tap) {
  TrainConfig tc = cfg.train_cfg;
  tc.seed = derive_seed(cfg.seed ^ cfg.train_cfg.seed, "warmup", tap);
  return tc;
}

ProbeEnsemble warm_up(const FeatureBank& bank, const PipelineConfig& cfg,
                      std::vector<TrainCurve>* curves) {
  validate(cfg);
  if (!bank.labels) throw ValidationError("training bank has no labels");
  const auto taps = resolve_taps(cfg, bank);
  const Matrix targets = labels_one_hot(bank);
  auto trained = parallel_map(taps.size(), [&](std::size_t p) {
    TrainCurve curve;
    ProbeModel m = train_probe(bank, taps[p], targets, warmup_config(cfg, taps[p]), &curve);
    return std::make_pair(std::move(m), std::move(curve));
  });
  ProbeEnsemble ens;
  ens.include_original = cfg.include_original;
  for (auto& [model, curve] : trained) {
    ens.probes.push_back(std::move(model));
    if (curves) curves->push_back(std::move(curve));
  }
  if (ens.include_original && !bank.original_preds) {
    throw ValidationError("include_original set but the bank carries no original predictions");
  }
  return ens;
}

Matrix aggregate(const AnnotationTensor& ann, Aggregator how, const DSConfig& ds_cfg,
                 AggregateResult* ds) {
  if (how == Aggregator::avg) return avg_aggregate(ann);
  DSConfig cfg = ds_cfg;
  cfg.hard_inputs = how == Aggregator::hardds;
  AggregateResult res = ds_aggregate(ann, cfg);
  Matrix post = res.posteriors;
  if (ds) *ds = std::move(res);
  return post;
}

PipelineState run_pipeline(const FeatureBank& bank, const PipelineConfig& cfg) {
  validate(cfg);
  if (!bank.labels) throw ValidationError("training bank has no labels");

  PipelineState state;
  state.ensemble = warm_up(bank, cfg, &state.warmup_curves);
  const auto& labels = *bank.labels;
  std::optional<SplitAssignment> previous;

  for (std::size_t r = 1; r <= cfg.max_rounds; ++r) {
    RoundSummary summary;
    summary.round = r;
    const AnnotationTensor ann = predict_all(state.ensemble, bank);
    AggregateResult ds;
    state.train_posteriors = aggregate(ann, cfg.agg_train, cfg.ds_cfg, &ds);
    if (cfg.agg_train != Aggregator::avg) {
      if (!std::isfinite(ds.final_loglik)) {
        throw NumericalError("non-finite DS log-likelihood in round " + std::to_string(r));
      }
      summary.loglik = ds.final_loglik;
      summary.ds_converged = ds.converged;
      summary.ds_iters = ds.n_iters;
    }
    summary.train_accuracy = accuracy(state.train_posteriors, labels);

    SplitConfig split_cfg = cfg.split_cfg;
    split_cfg.seed = derive_seed(cfg.seed ^ cfg.split_cfg.seed, "split", r);
    SplitAssignment split = split_by_entropy(state.train_posteriors, split_cfg);
    validate(split, bank.n_samples());
    summary.split_change = previous ? split_change_fraction(*previous, split) : 1.0;
    summary.n_labeled = split.labeled_indices.size();
    summary.n_unlabeled = split.unlabeled_indices.size();
    state.split = split;

    if (split.labeled_empty()) {
      summary.diagnostic = "labeled split is empty (gamma too large); round aborted";
      state.history.push_back(std::move(summary));
      break;
    }
    if (previous && summary.split_change < cfg.stop_delta) {
      summary.diagnostic = "split churn below stop_delta; converged";
      state.history.push_back(std::move(summary));
      break;
    }

    auto updated = parallel_map(state.ensemble.probes.size(), [&](std::size_t p) {
      MixMatchConfig mc = cfg.mixmatch_cfg;
      mc.seed = derive_seed(cfg.seed ^ cfg.mixmatch_cfg.seed, "semisup",
                            r * 1000 + state.ensemble.probes[p].tap_index);
      TrainCurve curve;
      ProbeModel m = semisup_train_probe(state.ensemble.probes[p], bank, split, mc, &curve);
      return std::make_pair(std::move(m), std::move(curve));
    });
    std::vector<TrainCurve> curves;
    for (std::size_t p = 0; p < updated.size(); ++p) {
      state.ensemble.probes[p] = std::move(updated[p].first);
      curves.push_back(std::move(updated[p].second));
    }
    state.round_curves.push_back(std::move(curves));
    summary.trained = true;
    state.round = r;
    state.history.push_back(std::move(summary));
    previous = std::move(split);
  }
  return state;
}

Inference infer(const PipelineState& state, const FeatureBank& test_bank,
                const PipelineConfig& cfg) {
  for (const auto& p : state.ensemble.probes) {
    if (p.tap_index >= test_bank.n_taps() ||
        test_bank.manifest.tap_points[p.tap_index].dim != p.dim()) {
      throw ValidationError("test bank taps do not match the trained probes");
    }
  }
  Inference out;
  out.posteriors = aggregate(predict_all(state.ensemble, test_bank), cfg.agg_infer, cfg.ds_cfg);
  out.hard_labels = argmax_rows(out.posteriors);
  return out;
}

MetricsReport evaluate(const Matrix& posteriors, std::span<const std::uint16_t> true_labels,
                       std::optional<std::span<const std::uint16_t>> noisy_labels,
                       std::optional<std::vector<bool>> flip_mask,
                       std::optional<std::span<const std::uint16_t>> domain_ids) {
  const std::size_t n = posteriors.rows();
  if (true_labels.size() != n) throw ValidationError("evaluate: label count differs from rows");
  MetricsReport rep;
  rep.n_samples = n;
  const auto pred = argmax_rows(posteriors);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += pred[i] == true_labels[i];
  rep.accuracy = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;

  if (flip_mask) {
    if (!noisy_labels || noisy_labels->size() != n || flip_mask->size() != n) {
      throw ValidationError("evaluate: flip mask needs noisy labels of matching length");
    }
    std::size_t flipped = 0, fitted = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(*flip_mask)[i]) continue;
      ++flipped;
      fitted += pred[i] == (*noisy_labels)[i];
    }
    rep.n_flipped = flipped;
    rep.noise_fit_accuracy = flipped ? static_cast<double>(fitted) / static_cast<double>(flipped) : 0.0;
  }
  if (domain_ids) {
    if (domain_ids->size() != n) throw ValidationError("evaluate: domain id count differs");
    std::map<std::uint16_t, std::pair<std::size_t, std::size_t>> per;
    for (std::size_t i = 0; i < n; ++i) {
      auto& [h, total] = per[(*domain_ids)[i]];
      h += pred[i] == true_labels[i];
      ++total;
    }
    for (const auto& [d, ht] : per) {
      rep.per_domain_accuracy.emplace_back(
          d, static_cast<double>(ht.first) / static_cast<double>(ht.second));
    }
  }
  return rep;
}

}  // namespace probens

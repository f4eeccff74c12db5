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

#include "probens/io.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "probens/bytes.hpp"

namespace probens {
namespace {

constexpr char kProbeMagic[5] = {'F', 'P', 'R', 'B', '1'};
constexpr char kPosteriorMagic[5] = {'F', 'P', 'S', 'T', '1'};

// Reads known keys from a JSON object into fields; unknown keys are an error.
class FieldReader {
 public:
  FieldReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& field) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!known_.count(k)) throw ValidationError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  }
  return rows;
}

void put_header(std::vector<std::uint8_t>& out, const char (&magic)[5], const json& header) {
  bytes::put_raw(out, std::string_view(magic, 5));
  const std::string h = header.dump();
  bytes::put_u32(out, static_cast<std::uint32_t>(h.size()));
  bytes::put_raw(out, h);
}

json take_header(bytes::Reader& in, std::span<const std::uint8_t> data, const char (&magic)[5],
                 const char* what) {
  if (data.size() < 5 || std::memcmp(data.data(), magic, 5) != 0) {
    throw ValidationError(std::string("bad magic: not a ") + what + " file");
  }
  in.take(5, "magic");
  const auto len = in.u32("header length");
  auto h = in.take(len, "header");
  try {
    return json::parse(h.begin(), h.end());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed ") + what + " header: " + e.what());
  }
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"weight_decay", c.weight_decay},
          {"seed", c.seed},                   {"standardize", c.standardize}};
}

json to_json(const MixMatchConfig& c) {
  return {{"sharpen_temp", c.sharpen_temp},       {"n_augment", c.n_augment},
          {"aug_sigma_scale", c.aug_sigma_scale}, {"mixup_alpha", c.mixup_alpha},
          {"lambda_u", c.lambda_u},               {"rampup_fraction", c.rampup_fraction},
          {"epochs", c.epochs},                   {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},     {"weight_decay", c.weight_decay},
          {"seed", c.seed},                       {"mixup", c.mixup}};
}

json to_json(const DSConfig& c) {
  return {{"maxiter", c.maxiter},
          {"pi_tol", c.pi_tol},
          {"hard_inputs", c.hard_inputs},
          {"epsilon_smooth", c.epsilon_smooth}};
}

json to_json(const SplitConfig& c) { return {{"gamma", c.gamma}, {"seed", c.seed}}; }

json to_json(const PipelineConfig& c) {
  return {{"agg_train", to_string(c.agg_train)},
          {"agg_infer", to_string(c.agg_infer)},
          {"max_rounds", c.max_rounds},
          {"split", to_json(c.split_cfg)},
          {"mixmatch", to_json(c.mixmatch_cfg)},
          {"train", to_json(c.train_cfg)},
          {"ds", to_json(c.ds_cfg)},
          {"tap_selection", c.tap_selection},
          {"include_original", c.include_original},
          {"stop_delta", c.stop_delta},
          {"seed", c.seed}};
}

json to_json(const SynthConfig& c) {
  return {{"n_domains", c.n_domains}, {"n_per_domain", c.n_per_domain},
          {"n_classes", c.n_classes}, {"n_taps", c.n_taps},
          {"tap_dims", c.tap_dims},   {"tap_signal", c.tap_signal},
          {"domain_shift_scale", c.domain_shift_scale}, {"seed", c.seed}};
}

json to_json(const SplitAssignment& s) {
  return {{"labeled_indices", s.labeled_indices},
          {"unlabeled_indices", s.unlabeled_indices},
          {"entropies", s.entropies}};
}

json to_json(const RoundSummary& s) {
  json j = {{"round", s.round},
            {"loglik", s.loglik ? json(*s.loglik) : json(nullptr)},
            {"ds_converged", s.ds_converged},
            {"ds_iters", s.ds_iters},
            {"split_change", s.split_change},
            {"n_labeled", s.n_labeled},
            {"n_unlabeled", s.n_unlabeled},
            {"train_accuracy", s.train_accuracy},
            {"trained", s.trained}};
  if (!s.diagnostic.empty()) j["diagnostic"] = s.diagnostic;
  return j;
}

json to_json(const MetricsReport& r) {
  json j = {{"n_samples", r.n_samples}, {"accuracy", r.accuracy}};
  if (r.noise_fit_accuracy) j["noise_fit_accuracy"] = *r.noise_fit_accuracy;
  if (r.n_flipped) j["n_flipped"] = *r.n_flipped;
  if (!r.per_domain_accuracy.empty()) {
    json per = json::object();
    for (const auto& [d, a] : r.per_domain_accuracy) per[std::to_string(d)] = a;
    j["per_domain_accuracy"] = per;
  }
  return j;
}

json to_json(const ProbeModel& m) {
  json j = {{"tap_index", m.tap_index}, {"weights", matrix_json(m.weights)}, {"bias", m.bias}};
  if (m.standardizer) {
    j["standardizer"] = {{"mean", m.standardizer->mean}, {"inv_std", m.standardizer->inv_std}};
  }
  return j;
}

json to_json(const ProbeEnsemble& e) {
  json probes = json::array();
  for (const auto& p : e.probes) probes.push_back(to_json(p));
  return {{"include_original", e.include_original}, {"probes", probes}};
}

json to_json(const AggregateResult& r, bool include_posteriors) {
  json conf = json::array();
  for (const auto& c : r.confusions) {
    conf.push_back({{"annotator", c.annotator_index}, {"values", matrix_json(c.values)}});
  }
  json j = {{"n_iters", r.n_iters},
            {"final_loglik", r.final_loglik},
            {"converged", r.converged},
            {"confusions", conf}};
  if (include_posteriors) j["posteriors"] = matrix_json(r.posteriors);
  return j;
}

namespace {

void read_train(const json& j, TrainConfig& c) {
  FieldReader f(j, "train");
  f.get("learning_rate", c.learning_rate);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("weight_decay", c.weight_decay);
  f.get("seed", c.seed);
  f.get("standardize", c.standardize);
  f.finish();
}

void read_mixmatch(const json& j, MixMatchConfig& c) {
  FieldReader f(j, "mixmatch");
  f.get("sharpen_temp", c.sharpen_temp);
  f.get("n_augment", c.n_augment);
  f.get("aug_sigma_scale", c.aug_sigma_scale);
  f.get("mixup_alpha", c.mixup_alpha);
  f.get("lambda_u", c.lambda_u);
  f.get("rampup_fraction", c.rampup_fraction);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("learning_rate", c.learning_rate);
  f.get("weight_decay", c.weight_decay);
  f.get("seed", c.seed);
  f.get("mixup", c.mixup);
  f.finish();
}

void read_ds(const json& j, DSConfig& c) {
  FieldReader f(j, "ds");
  f.get("maxiter", c.maxiter);
  f.get("pi_tol", c.pi_tol);
  f.get("hard_inputs", c.hard_inputs);
  f.get("epsilon_smooth", c.epsilon_smooth);
  f.finish();
}

void read_split(const json& j, SplitConfig& c) {
  FieldReader f(j, "split");
  f.get("gamma", c.gamma);
  f.get("seed", c.seed);
  f.finish();
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  FieldReader f(j, "config");
  std::string agg_train = to_string(c.agg_train), agg_infer = to_string(c.agg_infer);
  f.get("agg_train", agg_train);
  f.get("agg_infer", agg_infer);
  c.agg_train = parse_aggregator(agg_train);
  c.agg_infer = parse_aggregator(agg_infer);
  f.get("max_rounds", c.max_rounds);
  if (auto* s = f.sub("split")) read_split(*s, c.split_cfg);
  if (auto* s = f.sub("mixmatch")) read_mixmatch(*s, c.mixmatch_cfg);
  if (auto* s = f.sub("train")) read_train(*s, c.train_cfg);
  if (auto* s = f.sub("ds")) read_ds(*s, c.ds_cfg);
  f.get("tap_selection", c.tap_selection);
  f.get("include_original", c.include_original);
  f.get("stop_delta", c.stop_delta);
  f.get("seed", c.seed);
  f.finish();
  validate(c);
  return c;
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  FieldReader f(j, "synth");
  f.get("n_domains", c.n_domains);
  f.get("n_per_domain", c.n_per_domain);
  f.get("n_classes", c.n_classes);
  f.get("n_taps", c.n_taps);
  f.get("tap_dims", c.tap_dims);
  f.get("tap_signal", c.tap_signal);
  f.get("domain_shift_scale", c.domain_shift_scale);
  f.get("seed", c.seed);
  f.finish();
  validate(c);
  return c;
}

SplitAssignment split_from_json(const json& j) {
  SplitAssignment s;
  FieldReader f(j, "split");
  f.get("labeled_indices", s.labeled_indices);
  f.get("unlabeled_indices", s.unlabeled_indices);
  f.get("entropies", s.entropies);
  f.finish();
  return s;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

std::vector<std::uint8_t> encode_probe(const ProbeModel& m) {
  std::vector<std::uint8_t> out;
  put_header(out, kProbeMagic,
             {{"tap_index", m.tap_index},
              {"dim", m.dim()},
              {"n_classes", m.n_classes()},
              {"standardized", m.standardizer.has_value()},
              {"dtype", "f64le"}});
  for (double v : m.weights.values()) bytes::put_f64(out, v);
  for (double v : m.bias) bytes::put_f64(out, v);
  if (m.standardizer) {
    for (double v : m.standardizer->mean) bytes::put_f64(out, v);
    for (double v : m.standardizer->inv_std) bytes::put_f64(out, v);
  }
  return out;
}

ProbeModel decode_probe(std::span<const std::uint8_t> data) {
  bytes::Reader in(data);
  const json h = take_header(in, data, kProbeMagic, "probe");
  std::size_t dim = 0, classes = 0;
  ProbeModel m;
  bool standardized = false;
  try {
    m.tap_index = h.at("tap_index").get<std::size_t>();
    dim = h.at("dim").get<std::size_t>();
    classes = h.at("n_classes").get<std::size_t>();
    standardized = h.at("standardized").get<bool>();
    if (h.at("dtype").get<std::string>() != "f64le") throw ValidationError("probe: bad dtype");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed probe header: ") + e.what());
  }
  m.weights = Matrix(dim, classes);
  for (auto& v : m.weights.values()) v = in.f64("probe weights");
  m.bias.resize(classes);
  for (auto& v : m.bias) v = in.f64("probe bias");
  if (standardized) {
    Standardizer s;
    s.mean.resize(dim);
    s.inv_std.resize(dim);
    for (auto& v : s.mean) v = in.f64("standardizer mean");
    for (auto& v : s.inv_std) v = in.f64("standardizer inv_std");
    m.standardizer = std::move(s);
  }
  if (in.remaining() != 0) throw ValidationError("size mismatch: trailing bytes in probe file");
  for (double v : m.weights.values()) {
    if (!std::isfinite(v)) throw ValidationError("probe: non-finite weight");
  }
  return m;
}

std::vector<std::uint8_t> encode_posteriors(const Matrix& p) {
  std::vector<std::uint8_t> out;
  put_header(out, kPosteriorMagic, {{"rows", p.rows()}, {"cols", p.cols()}, {"dtype", "f32le"}});
  for (double v : p.values()) bytes::put_f32(out, static_cast<float>(v));
  return out;
}

MatrixF decode_posteriors(std::span<const std::uint8_t> data) {
  bytes::Reader in(data);
  const json h = take_header(in, data, kPosteriorMagic, "posterior");
  std::size_t rows = 0, cols = 0;
  try {
    rows = h.at("rows").get<std::size_t>();
    cols = h.at("cols").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed posterior header: ") + e.what());
  }
  if (in.remaining() != rows * cols * 4) {
    throw ValidationError("size mismatch: posterior payload");
  }
  MatrixF m(rows, cols);
  for (auto& v : m.values()) v = in.f32("posteriors");
  return m;
}

void write_posteriors(const std::filesystem::path& path, const Matrix& posteriors) {
  bytes::write_file(path, encode_posteriors(posteriors));
}

MatrixF read_posteriors(const std::filesystem::path& path) {
  return decode_posteriors(bytes::read_file(path));
}

void save_state(const std::filesystem::path& dir, const PipelineState& state,
                const PipelineConfig& cfg) {
  std::filesystem::create_directories(dir / "probes");
  json probes = json::array();
  for (std::size_t k = 0; k < state.ensemble.probes.size(); ++k) {
    const std::string name = "probes/probe_" + std::to_string(k) + ".fprb";
    bytes::write_file(dir / name, encode_probe(state.ensemble.probes[k]));
    probes.push_back({{"file", name}, {"tap_index", state.ensemble.probes[k].tap_index}});
  }
  json history = json::array();
  for (const auto& h : state.history) history.push_back(to_json(h));
  json j = {{"round", state.round},
            {"config", to_json(cfg)},
            {"include_original", state.ensemble.include_original},
            {"probes", probes},
            {"history", history}};
  if (state.split.n_samples() > 0) j["split"] = to_json(state.split);
  write_json(dir / "state.json", j);
  write_json(dir / "ensemble.json", to_json(state.ensemble));
}

LoadedState load_state(const std::filesystem::path& state_json) {
  const json j = read_json(state_json);
  const auto dir = state_json.parent_path();
  LoadedState out;
  try {
    out.config = pipeline_config_from_json(j.at("config"));
    out.state.round = j.at("round").get<std::size_t>();
    out.state.ensemble.include_original = j.at("include_original").get<bool>();
    for (const auto& p : j.at("probes")) {
      out.state.ensemble.probes.push_back(
          decode_probe(bytes::read_file(dir / p.at("file").get<std::string>())));
    }
    if (j.contains("split")) out.state.split = split_from_json(j.at("split"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed state.json: ") + e.what());
  }
  return out;
}

void write_curves(const std::filesystem::path& path, const PipelineState& state) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  auto emit = [&](const char* phase, std::size_t round, std::size_t tap, const TrainCurve& c) {
    for (std::size_t e = 0; e < c.size(); ++e) {
      out << json{{"phase", phase}, {"round", round}, {"tap", tap}, {"epoch", e}, {"loss", c[e]}}
                 .dump()
          << '\n';
    }
  };
  for (std::size_t p = 0; p < state.warmup_curves.size(); ++p) {
    emit("warmup", 0, state.ensemble.probes[p].tap_index, state.warmup_curves[p]);
  }
  for (std::size_t r = 0; r < state.round_curves.size(); ++r) {
    for (std::size_t p = 0; p < state.round_curves[r].size(); ++p) {
      emit("semisup", r + 1, state.ensemble.probes[p].tap_index, state.round_curves[r][p]);
    }
  }
}

json to_json(const Truth& t) {
  json j = {{"true_labels", t.true_labels}};
  if (t.noisy_labels) j["noisy_labels"] = *t.noisy_labels;
  if (t.flip_mask) j["flip_mask"] = std::vector<bool>(*t.flip_mask);
  return j;
}

Truth truth_from_json(const json& j) {
  Truth t;
  FieldReader f(j, "truth");
  f.get("true_labels", t.true_labels);
  if (auto* n = f.sub("noisy_labels")) t.noisy_labels = n->get<std::vector<std::uint16_t>>();
  if (auto* m = f.sub("flip_mask")) t.flip_mask = m->get<std::vector<bool>>();
  f.finish();
  return t;
}

}  // namespace probens

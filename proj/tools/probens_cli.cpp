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

// probens command-line driver.
//
//   probens synth        --config synth.json --out DIR [--noise-rate R --noise-seed S]
//   probens inject-noise --bank IN.fbnk --rate R --seed S --out DIR
//   probens warmup       --bank TRAIN.fbnk [--config cfg.json] --out DIR
//   probens pipeline     --bank TRAIN.fbnk [--config cfg.json] --out DIR
//   probens infer        --bank TEST.fbnk --state DIR/state.json --out DIR
//   probens eval         --posteriors P.fbnk-post --truth truth.json [--bank B] --out DIR
//
// Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "probens/errors.hpp"
#include "probens/feature_bank.hpp"
#include "probens/io.hpp"
#include "probens/pipeline.hpp"
#include "probens/synth_bench.hpp"

namespace fs = std::filesystem;
using namespace probens;

namespace {

constexpr int kValidationExit = 2;
constexpr int kNumericalExit = 3;

// Flags that override fields of the JSON pipeline config.
struct Overrides {
  std::optional<std::string> agg, agg_train;
  std::optional<std::size_t> ds_maxiter, max_rounds, n_augment, epochs;
  std::optional<double> ds_tol, gamma, lambda_u, sharpen_temp, mixup_alpha, rampup, stop_delta;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> taps;

  void attach(CLI::App* cmd, bool training) {
    cmd->add_option("--agg", agg, "inference aggregator: avg, softds or hardds");
    cmd->add_option("--ds-maxiter", ds_maxiter, "maximum DS EM iterations");
    cmd->add_option("--ds-tol", ds_tol, "DS convergence threshold on confusion entries");
    if (!training) return;
    cmd->add_option("--agg-train", agg_train, "training aggregator: avg or softds");
    cmd->add_option("--gamma", gamma, "fraction of samples routed to the unlabeled split");
    cmd->add_option("--max-rounds", max_rounds, "maximum semi-supervised rounds");
    cmd->add_option("--stop-delta", stop_delta, "split churn below which rounds stop");
    cmd->add_option("--seed", seed, "top-level seed");
    cmd->add_option("--taps", taps, "tap indices that get a probe")->delimiter(',');
    cmd->add_option("--epochs", epochs, "epochs for warm-up and semi-supervised training");
    cmd->add_option("--lambda-u", lambda_u, "unlabeled loss weight");
    cmd->add_option("--sharpen-temp", sharpen_temp, "label-guess sharpening temperature");
    cmd->add_option("--mixup-alpha", mixup_alpha, "Beta(alpha, alpha) mixup parameter");
    cmd->add_option("--n-augment", n_augment, "augmentations averaged per label guess");
    cmd->add_option("--rampup", rampup, "fraction of steps over which the unlabeled weight ramps");
  }

  void apply(PipelineConfig& c) const {
    if (agg) c.agg_infer = parse_aggregator(*agg);
    if (agg_train) c.agg_train = parse_aggregator(*agg_train);
    if (ds_maxiter) c.ds_cfg.maxiter = *ds_maxiter;
    if (ds_tol) c.ds_cfg.pi_tol = *ds_tol;
    if (gamma) c.split_cfg.gamma = *gamma;
    if (max_rounds) c.max_rounds = *max_rounds;
    if (stop_delta) c.stop_delta = *stop_delta;
    if (seed) c.seed = *seed;
    if (!taps.empty()) c.tap_selection = taps;
    if (epochs) c.train_cfg.epochs = c.mixmatch_cfg.epochs = *epochs;
    if (lambda_u) c.mixmatch_cfg.lambda_u = *lambda_u;
    if (sharpen_temp) c.mixmatch_cfg.sharpen_temp = *sharpen_temp;
    if (mixup_alpha) c.mixmatch_cfg.mixup_alpha = *mixup_alpha;
    if (n_augment) c.mixmatch_cfg.n_augment = *n_augment;
    if (rampup) c.mixmatch_cfg.rampup_fraction = *rampup;
    validate(c);
  }
};

PipelineConfig load_config(const std::string& path, const Overrides& o) {
  PipelineConfig c = path.empty() ? PipelineConfig{} : pipeline_config_from_json(read_json(path));
  o.apply(c);
  return c;
}

json history_json(const PipelineState& st) {
  json h = json::array();
  for (const auto& r : st.history) h.push_back(to_json(r));
  return h;
}

void write_training_outputs(const fs::path& out, const PipelineState& st, const PipelineConfig& cfg,
                            const FeatureBank& bank) {
  fs::create_directories(out);
  save_state(out, st, cfg);
  write_curves(out / "curves.jsonl", st);

  // Final ensemble on the training bank.
  const Matrix post = aggregate(predict_all(st.ensemble, bank), cfg.agg_infer, cfg.ds_cfg);
  write_posteriors(out / "posteriors.fbnk-post", post);

  const auto rep = evaluate(post, *bank.labels, std::nullopt, std::nullopt,
                            bank.domain_ids ? std::optional(std::span<const std::uint16_t>(*bank.domain_ids))
                                            : std::nullopt);
  json m = to_json(rep);
  m["agreement_with_bank_labels"] = m["accuracy"];
  m.erase("accuracy");
  m["rounds"] = st.round;
  m["history"] = history_json(st);
  write_json(out / "metrics.json", m);
}

int run_synth(const std::string& config, const fs::path& out, double rate, std::uint64_t noise_seed) {
  SynthConfig sc = config.empty() ? SynthConfig{} : synth_config_from_json(read_json(config));
  const auto d = gen_domains(sc);
  fs::create_directories(out);
  Truth train_truth{d.train_true_labels, std::nullopt, std::nullopt};
  FeatureBank train = d.train_bank;
  if (rate > 0.0) {
    const auto noisy = inject_noise(d.train_true_labels, sc.n_classes, {rate, noise_seed});
    train = with_labels(d.train_bank, noisy.labels);
    train_truth.noisy_labels = noisy.labels;
    train_truth.flip_mask = noisy.flip_mask;
  }
  write_bank(train, out / "train.fbnk");
  write_bank(d.test_bank, out / "test.fbnk");
  write_json(out / "truth_train.json", to_json(train_truth));
  write_json(out / "truth_test.json", to_json(Truth{d.test_true_labels, std::nullopt, std::nullopt}));
  write_json(out / "synth.json", to_json(sc));
  std::printf("train %zu rows, test %zu rows, %zu taps\n", train.n_samples(),
              d.test_bank.n_samples(), train.n_taps());
  return 0;
}

int run_inject(const fs::path& bank_path, double rate, std::uint64_t seed, const fs::path& out) {
  const auto bank = read_bank(bank_path);
  if (!bank.labels) throw ValidationError("bank has no labels to corrupt");
  const auto noisy = inject_noise(*bank.labels, bank.n_classes(), {rate, seed});
  fs::create_directories(out);
  write_bank(with_labels(bank, noisy.labels), out / "noisy.fbnk");
  write_json(out / "truth.json", to_json(Truth{*bank.labels, noisy.labels, noisy.flip_mask}));
  std::size_t flips = 0;
  for (bool f : noisy.flip_mask) flips += f;
  std::printf("flipped %zu of %zu labels\n", flips, noisy.labels.size());
  return 0;
}

int run_infer(const fs::path& bank_path, const fs::path& state_path, const std::string& config,
              const Overrides& o, const fs::path& out) {
  auto loaded = load_state(state_path);
  PipelineConfig cfg = config.empty() ? loaded.config : pipeline_config_from_json(read_json(config));
  o.apply(cfg);
  const auto bank = read_bank(bank_path);
  const auto inf = infer(loaded.state, bank, cfg);
  fs::create_directories(out);
  write_posteriors(out / "posteriors.fbnk-post", inf.posteriors);
  json m = {{"n_samples", bank.n_samples()}, {"aggregator", to_string(cfg.agg_infer)}};
  if (bank.labels) {
    m = to_json(evaluate(inf.posteriors, *bank.labels, std::nullopt, std::nullopt,
                         bank.domain_ids ? std::optional(std::span<const std::uint16_t>(*bank.domain_ids))
                                         : std::nullopt));
    m["aggregator"] = to_string(cfg.agg_infer);
  }
  write_json(out / "metrics.json", m);
  if (bank.labels) std::printf("accuracy %.4f\n", m["accuracy"].get<double>());
  return 0;
}

int run_eval(const fs::path& post_path, const fs::path& truth_path, const std::string& bank_path,
             const fs::path& out) {
  const Matrix post = to_double(read_posteriors(post_path));
  const Truth t = truth_from_json(read_json(truth_path));
  std::optional<FeatureBank> bank;
  if (!bank_path.empty()) bank = read_bank(bank_path);
  std::optional<std::span<const std::uint16_t>> noisy, domains;
  if (t.noisy_labels) noisy = std::span<const std::uint16_t>(*t.noisy_labels);
  if (bank && bank->domain_ids) domains = std::span<const std::uint16_t>(*bank->domain_ids);
  const auto rep = evaluate(post, t.true_labels, noisy, t.flip_mask, domains);
  fs::create_directories(out);
  write_json(out / "metrics.json", to_json(rep));
  std::printf("accuracy %.4f\n", rep.accuracy);
  if (rep.noise_fit_accuracy) std::printf("noise-fit accuracy %.4f\n", *rep.noise_fit_accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probe ensembles over frozen feature banks"};
  app.require_subcommand(1);

  std::string bank, config, out, state, posteriors, truth;
  double rate = 0.0;
  std::uint64_t noise_seed = 0;
  Overrides train_over, infer_over;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain benchmark");
  synth->add_option("--config", config, "synth config JSON")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--noise-rate", rate, "fraction of training labels to flip")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--noise-seed", noise_seed, "seed for label flips");

  auto* inject = app.add_subcommand("inject-noise", "flip a fraction of a bank's labels");
  inject->add_option("--bank", bank, "input FBNK1 bank")->required()->check(CLI::ExistingFile);
  inject->add_option("--rate", rate, "fraction of labels to flip")->required()->check(CLI::Range(0.0, 1.0));
  inject->add_option("--seed", noise_seed, "seed for label flips");
  inject->add_option("--out", out, "output directory")->required();

  auto* warmup = app.add_subcommand("warmup", "train one supervised probe per tap");
  auto* pipeline = app.add_subcommand("pipeline", "warm-up followed by semi-supervised rounds");
  for (auto* cmd : {warmup, pipeline}) {
    cmd->add_option("--bank", bank, "training FBNK1 bank")->required()->check(CLI::ExistingFile);
    cmd->add_option("--config", config, "pipeline config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output directory")->required();
    train_over.attach(cmd, true);
  }

  auto* inf = app.add_subcommand("infer", "aggregate probe predictions on a bank");
  inf->add_option("--bank", bank, "FBNK1 bank to predict")->required()->check(CLI::ExistingFile);
  inf->add_option("--state", state, "state.json written by warmup or pipeline")
      ->required()
      ->check(CLI::ExistingFile);
  inf->add_option("--config", config, "config JSON replacing the stored one")->check(CLI::ExistingFile);
  inf->add_option("--out", out, "output directory")->required();
  infer_over.attach(inf, false);

  auto* ev = app.add_subcommand("eval", "score posteriors against ground truth");
  ev->add_option("--posteriors", posteriors, "posterior file")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", truth, "truth JSON sidecar")->required()->check(CLI::ExistingFile);
  ev->add_option("--bank", bank, "bank supplying domain ids")->check(CLI::ExistingFile);
  ev->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidationExit;
  }

  try {
    if (*synth) return run_synth(config, out, rate, noise_seed);
    if (*inject) return run_inject(bank, rate, noise_seed, out);
    if (*warmup || *pipeline) {
      PipelineConfig cfg = load_config(config, train_over);
      if (*warmup) cfg.max_rounds = 0;
      const auto b = read_bank(bank);
      const auto st = run_pipeline(b, cfg);
      write_training_outputs(out, st, cfg, b);
      std::printf("%zu probes, %zu round(s)\n", st.ensemble.probes.size(), st.round);
      for (const auto& h : st.history) {
        if (!h.diagnostic.empty()) std::printf("round %zu: %s\n", h.round, h.diagnostic.c_str());
      }
      return 0;
    }
    if (*inf) return run_infer(bank, state, config, infer_over, out);
    if (*ev) return run_eval(posteriors, truth, bank, out);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationExit;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumericalExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationExit;
  }
  return 0;
}

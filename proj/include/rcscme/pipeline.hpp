// include/rcscme/pipeline.hpp

// Copyright 2026  The rcscme Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef RCSCME_PIPELINE_HPP_
#define RCSCME_PIPELINE_HPP_

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rcscme/config.hpp"
#include "rcscme/demix.hpp"
#include "rcscme/error.hpp"
#include "rcscme/eval_sim.hpp"
#include "rcscme/rcscme.hpp"
#include "rcscme/signal_io.hpp"
#include "rcscme/source_models.hpp"

namespace rcscme {

enum class Mode { kIlrma, kIdlma, kIlrmaRcscme, kIdlmaRcscme, kIdlmaRcscmeSs };

inline const char *mode_name(Mode m) {
  switch (m) {
    case Mode::kIlrma: return "ilrma";
    case Mode::kIdlma: return "idlma";
    case Mode::kIlrmaRcscme: return "ilrma+rcscme";
    case Mode::kIdlmaRcscme: return "idlma+rcscme";
    case Mode::kIdlmaRcscmeSs: return "idlma+rcscme-ss";
  }
  return "?";
}

inline Mode parse_mode(const std::string &s) {
  for (Mode m : {Mode::kIlrma, Mode::kIdlma, Mode::kIlrmaRcscme, Mode::kIdlmaRcscme, Mode::kIdlmaRcscmeSs})
    if (s == mode_name(m)) return m;
  throw ConfigError("field 'mode': unknown mode '" + s +
                    "' (expected ilrma, idlma, ilrma+rcscme, idlma+rcscme or idlma+rcscme-ss)");
}

inline bool uses_idlma(Mode m) { return m == Mode::kIdlma || m == Mode::kIdlmaRcscme || m == Mode::kIdlmaRcscmeSs; }
inline bool uses_rcscme(Mode m) { return m == Mode::kIlrmaRcscme || m == Mode::kIdlmaRcscme || m == Mode::kIdlmaRcscmeSs; }

/// How the noise-only frames for the self-supervised prior are obtained.
enum class NoiseFrameSource { kDetect, kSchedule };

struct PipelineConfig {
  Mode mode = Mode::kIdlmaRcscmeSs;

  int ilrma_iterations = 50;
  int idlma_iterations = 90;
  int idlma_refresh = 30;
  int rcscme_iterations = 10;

  double alpha = 1.3;
  double beta = 1e-16;
  double alpha_p = 8e2;
  double beta_p = 1e4;
  double theta = 1e-3;
  double epsilon_scale = 0.1;
  Index nmf_bases = 10;

  double window_ms = 64.0;
  double hop_ms = 32.0;

  std::string adapter_command;  // empty: none
  std::string exchange_dir;
  bool oracle = false;  // ground-truth denoiser; requires a simulated scenario
  NoiseFrameSource noise_frames = NoiseFrameSource::kDetect;
  Index target_index = -1;  // -1: select automatically
  std::uint64_t seed = 0;

  /// Throws ConfigError naming every offending field. `have_truth` tells
  /// whether ground truth (a simulated scenario) is available.
  void validate(bool have_truth) const {
    std::vector<std::string> bad;
    if (ilrma_iterations < 1) bad.push_back("iterations.ilrma must be >= 1");
    if (idlma_iterations < 1) bad.push_back("iterations.idlma must be >= 1");
    if (idlma_refresh < 1) bad.push_back("iterations.idlma_refresh must be >= 1");
    if (rcscme_iterations < 1) bad.push_back("iterations.rcscme must be >= 1");
    if (!(alpha > 0.0)) bad.push_back("hyperparameters.alpha must be > 0");
    if (!(beta > 0.0)) bad.push_back("hyperparameters.beta must be > 0");
    if (!(beta_p > 0.0)) bad.push_back("hyperparameters.beta_prime must be > 0");
    if (!(theta > 0.0)) bad.push_back("hyperparameters.theta must be > 0");
    if (!(epsilon_scale > 0.0)) bad.push_back("hyperparameters.epsilon_scale must be > 0");
    if (nmf_bases < 1) bad.push_back("hyperparameters.nmf_bases must be >= 1");
    if (uses_idlma(mode) && adapter_command.empty() && !oracle)
      bad.push_back(std::string("pipeline.adapter_command (or pipeline.oracle) is required for mode ") + mode_name(mode));
    if (oracle && !have_truth) bad.push_back("pipeline.oracle requires a simulated scenario");
    if (noise_frames == NoiseFrameSource::kSchedule && !have_truth)
      bad.push_back("pipeline.noise_frames = schedule requires a simulated scenario");
    if (!bad.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto &b : bad) msg += "\n  " + b;
      throw ConfigError(msg);
    }
  }
};

inline void apply_config(PipelineConfig &cfg, const KeyValueConfig &kv) {
  static const std::map<std::string, std::vector<std::string>> known = {
      {"pipeline", {"mode", "adapter_command", "exchange_dir", "oracle", "noise_frames", "target_index", "seed"}},
      {"iterations", {"ilrma", "idlma", "idlma_refresh", "rcscme"}},
      {"hyperparameters", {"alpha", "beta", "alpha_prime", "beta_prime", "theta", "epsilon_scale", "nmf_bases"}},
      {"stft", {"window_ms", "hop_ms"}},
  };
  for (const auto &[name, sec] : kv.sections()) {
    if (name == "scenario") continue;
    const auto it = known.find(name);
    if (it == known.end()) throw ConfigError("unknown config section [" + name + "]");
    for (const auto &[key, val] : sec) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ConfigError("unknown config field '" + name + "." + key + "'");
      const std::string f = name + "." + key;
      if (f == "pipeline.mode") cfg.mode = parse_mode(val);
      else if (f == "pipeline.adapter_command") cfg.adapter_command = val;
      else if (f == "pipeline.exchange_dir") cfg.exchange_dir = val;
      else if (f == "pipeline.oracle") cfg.oracle = parse_bool(f, val);
      else if (f == "pipeline.noise_frames") {
        if (val == "detect") cfg.noise_frames = NoiseFrameSource::kDetect;
        else if (val == "schedule") cfg.noise_frames = NoiseFrameSource::kSchedule;
        else throw ConfigError("field 'pipeline.noise_frames': expected detect or schedule");
      } else if (f == "pipeline.target_index") cfg.target_index = parse_int(f, val);
      else if (f == "pipeline.seed") cfg.seed = static_cast<std::uint64_t>(parse_int(f, val));
      else if (f == "iterations.ilrma") cfg.ilrma_iterations = static_cast<int>(parse_int(f, val));
      else if (f == "iterations.idlma") cfg.idlma_iterations = static_cast<int>(parse_int(f, val));
      else if (f == "iterations.idlma_refresh") cfg.idlma_refresh = static_cast<int>(parse_int(f, val));
      else if (f == "iterations.rcscme") cfg.rcscme_iterations = static_cast<int>(parse_int(f, val));
      else if (f == "hyperparameters.alpha") cfg.alpha = parse_double(f, val);
      else if (f == "hyperparameters.beta") cfg.beta = parse_double(f, val);
      else if (f == "hyperparameters.alpha_prime") cfg.alpha_p = parse_double(f, val);
      else if (f == "hyperparameters.beta_prime") cfg.beta_p = parse_double(f, val);
      else if (f == "hyperparameters.theta") cfg.theta = parse_double(f, val);
      else if (f == "hyperparameters.epsilon_scale") cfg.epsilon_scale = parse_double(f, val);
      else if (f == "hyperparameters.nmf_bases") cfg.nmf_bases = parse_int(f, val);
      else if (f == "stft.window_ms") cfg.window_ms = parse_double(f, val);
      else if (f == "stft.hop_ms") cfg.hop_ms = parse_double(f, val);
    }
  }
}

/// Reads the [scenario] section; missing keys keep their defaults.
inline Scenario parse_scenario(const KeyValueConfig &kv) {
  Scenario s;
  for (const auto &[key, val] : kv.section("scenario")) {
    const std::string f = "scenario." + key;
    if (key == "id") s.id = val;
    else if (key == "mics") s.mics = parse_int(f, val);
    else if (key == "noise_sources") s.noise_sources = parse_int(f, val);
    else if (key == "target_filter_len") s.target_filter_len = parse_int(f, val);
    else if (key == "noise_filter_len") s.noise_filter_len = parse_int(f, val);
    else if (key == "input_snr_db") s.input_snr_db = parse_double(f, val);
    else if (key == "duration_s") s.duration_s = parse_double(f, val);
    else if (key == "sample_rate") s.sample_rate = static_cast<int>(parse_int(f, val));
    else if (key == "target_rms") s.target_rms = parse_double(f, val);
    else if (key == "seed") s.seed = static_cast<std::uint64_t>(parse_int(f, val));
    else if (key == "silence") {
      for (const auto &iv : split(val, ',')) {
        const auto dash = iv.find('-', 1);
        if (dash == std::string::npos) throw ConfigError("field 'scenario.silence': expected start-end pairs");
        s.silence.push_back({parse_double(f, iv.substr(0, dash)), parse_double(f, iv.substr(dash + 1))});
      }
    } else {
      throw ConfigError("unknown config field '" + f + "'");
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Report

struct IterationMetrics {
  int iteration = 0;  // 0: rank-1 output, 1..: RCSCME iterations
  SeparationMetrics metrics;
  double sdr_improvement = 0.0;
};

struct PipelineReport {
  std::string mode;
  std::string scenario_id;
  std::uint64_t seed = 0;
  Index target_index = 0;
  std::vector<double> rank_one_cost;
  double rcscme_initial_objective = 0.0;
  std::vector<double> rcscme_objective;
  std::vector<std::vector<double>> lambda_trace;  // per iteration, per bin
  std::vector<CMatrix> demixing;                  // rank-1 W_i after projection back
  std::vector<CMatrix> noise_scm;                 // R'_i (RCSCME modes)

  bool has_truth = false;
  SeparationMetrics input_metrics;
  std::vector<IterationMetrics> iterations;
  IterationMetrics final_metrics;
  double max_sdr_improvement = 0.0;
  int best_iteration = 0;

  std::optional<Index> noise_frame_count;
  std::optional<double> mean_prior_scale_norm;
  std::vector<Index> noise_frames;

  Waveform output;
};

/// Ground truth and the oracle denoiser built from it.
struct TruthContext {
  GroundTruth truth;
  Scenario scenario;
  std::shared_ptr<SeparationEvaluator> evaluator;
};

/// Shared per-input state so several modes can reuse one rank-1 run.
class PipelineRunner {
 public:
  PipelineRunner(Waveform mixture, std::optional<TruthContext> truth, const PipelineConfig &cfg)
      : mixture_(std::move(mixture)), truth_(std::move(truth)) {
    x_ = stft(mixture_, make_stft_params(mixture_.sample_rate, cfg.window_ms, cfg.hop_ms));
    if (truth_) {
      if (!truth_->evaluator)
        truth_->evaluator = std::make_shared<SeparationEvaluator>(truth_->truth.target_image.channels[0],
                                                                  truth_->truth.noise_image.channels[0]);
      input_metrics_ = truth_->evaluator->evaluate(mixture_.channels[0]);
    }
  }

  const Spectrogram &observation() const { return x_; }

  PipelineReport run(const PipelineConfig &cfg) {
    cfg.validate(truth_.has_value());
    PipelineReport rep;
    rep.mode = mode_name(cfg.mode);
    rep.seed = cfg.seed;
    rep.has_truth = truth_.has_value();
    if (truth_) {
      rep.scenario_id = truth_->scenario.id;
      rep.input_metrics = input_metrics_;
    }

    const RankOneResult &r1 = uses_idlma(cfg.mode) ? idlma(cfg) : ilrma(cfg);
    rep.rank_one_cost = r1.cost_trace;
    rep.demixing = r1.state.demixing;
    rep.target_index = r1.state.target;

    Spectrogram enhanced;
    if (!uses_rcscme(cfg.mode)) {
      enhanced = rank_one_image(r1.state);
      rep.final_metrics = score(0, enhanced);
      rep.iterations.push_back(rep.final_metrics);
    } else {
      if (truth_) rep.iterations.push_back(score(0, rank_one_image(r1.state)));
      RcscmeOptions opt;
      opt.iterations = cfg.rcscme_iterations;
      opt.speech = {cfg.alpha, cfg.beta};
      opt.epsilon_scale = cfg.epsilon_scale;
      if (cfg.mode == Mode::kIdlmaRcscmeSs) {
        rep.noise_frames = noise_frames(cfg);
        rep.noise_frame_count = static_cast<Index>(rep.noise_frames.size());
        if (rep.noise_frames.empty()) {
          log::warn("no noise-only frames detected; running without the noise prior");
        } else {
          opt.noise_prior = estimate_noise_prior(x_, rep.noise_frames, cfg.alpha_p, cfg.beta_p);
          double acc = 0.0;
          for (const auto &s : opt.noise_prior->scale) acc += s.norm();
          rep.mean_prior_scale_norm = acc / static_cast<double>(opt.noise_prior->scale.size());
        }
      }
      const MixingEstimate mix = mixing_estimate(r1.state);
      auto observer = [&](int it, const ScmModel &model, const EmState &em) {
        std::vector<double> lambdas;
        for (const auto &c : model.noise) lambdas.push_back(c.lambda);
        rep.lambda_trace.push_back(std::move(lambdas));
        if (truth_) rep.iterations.push_back(score(it, wiener_extract(x_, model, em)));
      };
      const RcscmeResult res = run_rcscme(x_, mix, r1.state, opt, observer);
      for (const auto &c : res.model.noise) rep.noise_scm.push_back(c.base);
      rep.rcscme_initial_objective = res.initial_objective;
      rep.rcscme_objective = res.objective_trace;
      enhanced = res.enhanced;
      if (truth_) rep.final_metrics = rep.iterations.back();
    }

    if (truth_) {
      rep.max_sdr_improvement = -std::numeric_limits<double>::infinity();
      for (const auto &it : rep.iterations) {
        if (uses_rcscme(cfg.mode) && it.iteration == 0) continue;
        if (it.sdr_improvement > rep.max_sdr_improvement) {
          rep.max_sdr_improvement = it.sdr_improvement;
          rep.best_iteration = it.iteration;
        }
      }
    }
    rep.output = istft(enhanced);
    return rep;
  }

  const RankOneResult &ilrma(const PipelineConfig &cfg) {
    if (!ilrma_) {
      IlrmaOptions opt{cfg.ilrma_iterations, cfg.nmf_bases, cfg.seed};
      ilrma_ = run_ilrma(x_, opt);
      ilrma_->state.target = pick_target(cfg, ilrma_->state);
    }
    return *ilrma_;
  }

  const RankOneResult &idlma(const PipelineConfig &cfg) {
    if (!idlma_) {
      IdlmaOptions opt{cfg.idlma_iterations, cfg.idlma_refresh, cfg.epsilon_scale,
                       cfg.target_index >= 0 ? cfg.target_index : 0};
      idlma_ = run_idlma(x_, denoiser(cfg), opt);
    }
    return *idlma_;
  }

  std::vector<Index> noise_frames(const PipelineConfig &cfg) {
    if (cfg.noise_frames == NoiseFrameSource::kSchedule) return silent_frames(truth_->scenario, x_.params());
    return detect_noise_frames(x_, denoiser(cfg), cfg.theta, 0);
  }

  const Denoiser &denoiser(const PipelineConfig &cfg) {
    if (!dnn_) {
      if (cfg.oracle) {
        const Spectrogram t = stft(truth_->truth.target_image, x_.params());
        dnn_ = std::make_unique<OracleDenoiser>(x_, t);
      } else {
        dnn_ = std::make_unique<CommandDenoiser>(cfg.adapter_command, cfg.exchange_dir, mixture_.sample_rate);
      }
    }
    return *dnn_;
  }

 private:
  Index pick_target(const PipelineConfig &cfg, const DemixingState &s) {
    if (cfg.target_index >= 0) {
      if (cfg.target_index >= s.separated.channels()) throw ConfigError("field 'pipeline.target_index' out of range");
      return cfg.target_index;
    }
    if (truth_) return select_target_oracle(s.separated, stft(truth_->truth.target_image, x_.params()).channel(0));
    if (!cfg.adapter_command.empty()) return select_target_adapter(s.separated, denoiser(cfg));
    throw ConfigError("pipeline.target_index is required for ilrma modes without ground truth or adapter");
  }

  // Target image on every channel: a_{i,nt} y_{ij,nt}.
  Spectrogram rank_one_image(const DemixingState &s) const {
    const MixingEstimate mix = mixing_estimate(s);
    Spectrogram out(x_.bins(), x_.frames(), x_.channels(), x_.params());
    for (Index i = 0; i < x_.bins(); ++i) {
      const CVector a = mix.steering(i);
      for (Index j = 0; j < x_.frames(); ++j) out.vec(i, j) = a * s.separated(i, j, s.target);
    }
    return out;
  }

  IterationMetrics score(int iteration, const Spectrogram &image) const {
    IterationMetrics m;
    m.iteration = iteration;
    if (!truth_) return m;
    const Waveform w = istft(image.channel(0));
    m.metrics = truth_->evaluator->evaluate(w.channels[0]);
    m.sdr_improvement = improvement(m.metrics.sdr, input_metrics_.sdr);
    return m;
  }

  Waveform mixture_;
  std::optional<TruthContext> truth_;
  Spectrogram x_;
  SeparationMetrics input_metrics_;
  std::optional<RankOneResult> ilrma_;
  std::optional<RankOneResult> idlma_;
  std::unique_ptr<Denoiser> dnn_;
};

inline PipelineRunner make_simulated_runner(const Scenario &scn, const PipelineConfig &cfg) {
  Simulation sim = simulate(scn);
  TruthContext truth{std::move(sim.truth), scn, nullptr};
  return PipelineRunner(std::move(sim.mixture), std::move(truth), cfg);
}

inline PipelineReport run_pipeline(const PipelineConfig &cfg, const Waveform &input) {
  PipelineRunner runner(input, std::nullopt, cfg);
  return runner.run(cfg);
}

inline PipelineReport run_pipeline(const PipelineConfig &cfg, const Scenario &scn) {
  PipelineRunner runner = make_simulated_runner(scn, cfg);
  return runner.run(cfg);
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentRow {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string method;
  int best_iteration = 0;
  SeparationMetrics metrics;  // at the best iteration
  double sdr_improvement = 0.0;
  std::string status = "ok";
};

struct ExperimentSummary {
  std::string method;
  double mean_sdr_improvement = 0.0;
  double max_sdr_improvement = 0.0;
  int runs = 0;
  int failures = 0;
};

struct ExperimentTable {
  std::vector<ExperimentRow> rows;
  std::vector<ExperimentSummary> summary;
};

inline std::vector<ExperimentSummary> summarize(const std::vector<ExperimentRow> &rows, const std::vector<Mode> &modes) {
  std::vector<ExperimentSummary> out;
  for (Mode m : modes) {
    ExperimentSummary s;
    s.method = mode_name(m);
    s.max_sdr_improvement = -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (const auto &r : rows) {
      if (r.method != s.method) continue;
      if (r.status != "ok") {
        ++s.failures;
        continue;
      }
      ++s.runs;
      acc += r.sdr_improvement;
      s.max_sdr_improvement = std::max(s.max_sdr_improvement, r.sdr_improvement);
    }
    s.mean_sdr_improvement = s.runs > 0 ? acc / s.runs : 0.0;
    if (s.runs == 0) s.max_sdr_improvement = 0.0;
    out.push_back(s);
  }
  return out;
}

/// Cross product of scenarios x seeds x modes. Each (scenario, seed) is
/// simulated once and its rank-1 results are shared between modes. A failing
/// row is recorded and the run continues.
inline ExperimentTable run_experiment(const std::vector<Scenario> &scenarios, const std::vector<Mode> &modes,
                                      const std::vector<std::uint64_t> &seeds, const PipelineConfig &base,
                                      const std::function<void(const ExperimentRow &, const PipelineReport *)> &on_row = {}) {
  if (scenarios.empty()) throw ConfigError("run_experiment: at least one scenario required");
  ExperimentTable table;
  for (const auto &scn0 : scenarios) {
    for (auto seed : seeds) {
      Scenario scn = scn0;
      scn.seed = seed;
      std::optional<PipelineRunner> runner;
      std::string setup_error;
      try {
        runner.emplace(make_simulated_runner(scn, base));
      } catch (const std::exception &e) {
        setup_error = e.what();
      }
      for (Mode m : modes) {
        ExperimentRow row{scn.id, seed, mode_name(m)};
        std::optional<PipelineReport> rep;
        try {
          if (!runner) throw Error(setup_error);
          PipelineConfig cfg = base;
          cfg.mode = m;
          cfg.seed = seed;
          rep = runner->run(cfg);
          row.best_iteration = rep->best_iteration;
          row.sdr_improvement = rep->max_sdr_improvement;
          for (const auto &it : rep->iterations)
            if (it.iteration == rep->best_iteration) row.metrics = it.metrics;
        } catch (const std::exception &e) {
          row.status = std::string("error: ") + e.what();
          std::replace(row.status.begin(), row.status.end(), ',', ';');
          std::replace(row.status.begin(), row.status.end(), '\n', ' ');
        }
        if (on_row) on_row(row, rep ? &*rep : nullptr);
        table.rows.push_back(std::move(row));
      }
    }
  }
  table.summary = summarize(table.rows, modes);
  return table;
}

/// One CSV: `run` rows, then `mean` and `max` rows per method.
inline void write_experiment_csv(std::ostream &os, const ExperimentTable &t) {
  os << "kind,scenario,seed,method,best_iteration,sdr,sir,sar,sdr_improvement,status\n";
  os << std::setprecision(10);
  for (const auto &r : t.rows)
    os << "run," << r.scenario << ',' << r.seed << ',' << r.method << ',' << r.best_iteration << ','
       << r.metrics.sdr << ',' << r.metrics.sir << ',' << r.metrics.sar << ',' << r.sdr_improvement << ','
       << r.status << '\n';
  for (const auto &s : t.summary) {
    os << "mean,all,," << s.method << ",,,,," << s.mean_sdr_improvement << ",runs=" << s.runs
       << ";failures=" << s.failures << '\n';
    os << "max,all,," << s.method << ",,,,," << s.max_sdr_improvement << ",runs=" << s.runs
       << ";failures=" << s.failures << '\n';
  }
}

/// Per-iteration metric rows for a single run.
inline void write_metrics_csv(std::ostream &os, const PipelineReport &r) {
  os << "scenario,seed,method,iteration,sdr,sir,sar,sdr_improvement\n";
  os << std::setprecision(10);
  for (const auto &it : r.iterations)
    os << r.scenario_id << ',' << r.seed << ',' << r.mode << ',' << it.iteration << ',' << it.metrics.sdr << ','
       << it.metrics.sir << ',' << it.metrics.sar << ',' << it.sdr_improvement << '\n';
}

}  // namespace rcscme

#endif  // RCSCME_PIPELINE_HPP_

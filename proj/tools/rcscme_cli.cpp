// tools/rcscme_cli.cpp

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

// Command-line front end: enhances a WAV file, or runs one or more methods on
// simulated scenarios and reports separation metrics.
//
// Exit status: 0 success, 2 configuration or input error, 3 numerical
// failure, 4 denoiser adapter failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcscme/pipeline.hpp"

namespace {

using nlohmann::json;
using namespace rcscme;

std::vector<std::uint64_t> parse_seeds(const std::string &spec) {
  std::vector<std::uint64_t> seeds;
  for (const auto &tok : split(spec, ',')) {
    const auto dash = tok.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(static_cast<std::uint64_t>(parse_int("--seeds", tok)));
      continue;
    }
    const auto lo = parse_int("--seeds", tok.substr(0, dash));
    const auto hi = parse_int("--seeds", tok.substr(dash + 1));
    if (lo < 0 || hi < lo) throw ConfigError("--seeds: bad range '" + tok + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (seeds.empty()) throw ConfigError("--seeds: empty list");
  return seeds;
}

json complex_matrix(const CMatrix &a) {
  json rows = json::array();
  for (Index r = 0; r < a.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < a.cols(); ++c) row.push_back({a(r, c).real(), a(r, c).imag()});
    rows.push_back(std::move(row));
  }
  return rows;
}

json metrics_json(const SeparationMetrics &m) { return {{"sdr", m.sdr}, {"sir", m.sir}, {"sar", m.sar}}; }

json report_json(const PipelineReport &r) {
  json j;
  j["mode"] = r.mode;
  j["seed"] = r.seed;
  j["target_index"] = r.target_index;
  j["rank_one_cost"] = r.rank_one_cost;
  if (!r.rcscme_objective.empty()) {
    j["rcscme_initial_objective"] = r.rcscme_initial_objective;
    j["rcscme_objective"] = r.rcscme_objective;
  }
  if (r.noise_frame_count) j["noise_frame_count"] = *r.noise_frame_count;
  if (r.mean_prior_scale_norm) j["mean_prior_scale_norm"] = *r.mean_prior_scale_norm;
  if (r.has_truth) {
    j["scenario"] = r.scenario_id;
    j["input"] = metrics_json(r.input_metrics);
    json its = json::array();
    for (const auto &it : r.iterations) {
      json e = metrics_json(it.metrics);
      e["iteration"] = it.iteration;
      e["sdr_improvement"] = it.sdr_improvement;
      its.push_back(std::move(e));
    }
    j["iterations"] = std::move(its);
    j["max_sdr_improvement"] = r.max_sdr_improvement;
    j["best_iteration"] = r.best_iteration;
    j["best_iteration_within_5"] = r.best_iteration <= 5;
  }
  return j;
}

void write_json(const std::filesystem::path &p, const json &j) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  os << j.dump(1) << '\n';
}

void dump_intermediates(const std::filesystem::path &dir, const PipelineReport &r) {
  std::filesystem::create_directories(dir);
  json w = json::array();
  for (const auto &m : r.demixing) w.push_back(complex_matrix(m));
  write_json(dir / "demixing.json", w);
  if (!r.noise_scm.empty()) {
    json rn = json::array();
    for (const auto &m : r.noise_scm) rn.push_back(complex_matrix(m));
    write_json(dir / "noise_scm.json", rn);
    write_json(dir / "lambda_trace.json", r.lambda_trace);
  }
  if (r.noise_frame_count) write_json(dir / "noise_frames.json", r.noise_frames);
  write_json(dir / "report.json", report_json(r));
}

void print_summary(const PipelineReport &r) {
  std::cout << "mode " << r.mode << ", target output " << r.target_index << '\n';
  if (!r.rcscme_objective.empty())
    std::cout << "  objective " << r.rcscme_initial_objective << " -> " << r.rcscme_objective.back() << '\n';
  if (r.noise_frame_count)
    std::cout << "  noise-only frames " << *r.noise_frame_count << ", mean |R| " << r.mean_prior_scale_norm.value_or(0.0)
              << '\n';
  if (r.has_truth) {
    std::cout << "  input SDR " << r.input_metrics.sdr << " dB\n";
    for (const auto &it : r.iterations)
      std::cout << "  iter " << it.iteration << ": SDR " << it.metrics.sdr << " SIR " << it.metrics.sir << " SAR "
                << it.metrics.sar << " (SDRi " << it.sdr_improvement << ")\n";
    std::cout << "  best SDRi " << r.max_sdr_improvement << " dB at iteration " << r.best_iteration << '\n';
  }
}

struct Args {
  std::string modes;
  std::string config;
  std::string input;
  std::string output;
  std::string simulate;
  std::string seeds;
  std::string dump_dir;
  std::string metrics_csv;
  std::string adapter;
  bool oracle = false;
  bool schedule = false;
};

int run(const Args &a) {
  PipelineConfig cfg;
  if (!a.config.empty()) apply_config(cfg, KeyValueConfig::load(a.config));
  if (const char *env = std::getenv("RCSCME_DENOISER_CMD"); env && *env) cfg.adapter_command = env;
  if (!a.adapter.empty()) cfg.adapter_command = a.adapter;
  if (a.oracle) cfg.oracle = true;
  if (a.schedule) cfg.noise_frames = NoiseFrameSource::kSchedule;

  std::vector<Mode> modes;
  if (!a.modes.empty())
    for (const auto &m : split(a.modes, ',')) modes.push_back(parse_mode(m));
  else
    modes.push_back(cfg.mode);

  if (a.simulate.empty() == a.input.empty()) throw ConfigError("exactly one of --input and --simulate is required");

  if (!a.input.empty()) {
    if (modes.size() != 1) throw ConfigError("--mode: a WAV input takes a single mode");
    if (!a.seeds.empty()) throw ConfigError("--seeds requires --simulate");
    cfg.mode = modes[0];
    cfg.validate(false);
    const Waveform in = read_wav(a.input);
    const PipelineReport rep = run_pipeline(cfg, in);
    print_summary(rep);
    if (!a.output.empty()) write_wav(a.output, rep.output);
    if (!a.dump_dir.empty()) dump_intermediates(a.dump_dir, rep);
    return 0;
  }

  const Scenario scn = parse_scenario(KeyValueConfig::load(a.simulate));
  if (!a.seeds.empty()) {
    if (!a.output.empty()) throw ConfigError("--output is not used with --seeds");
    for (Mode m : modes) {
      PipelineConfig c = cfg;
      c.mode = m;
      c.validate(true);
    }
    const auto seeds = parse_seeds(a.seeds);
    auto on_row = [&](const ExperimentRow &row, const PipelineReport *rep) {
      log::info("seed " + std::to_string(row.seed) + " " + row.method + ": SDRi " +
                std::to_string(row.sdr_improvement) + " (" + row.status + ")");
      if (rep && !a.dump_dir.empty())
        dump_intermediates(std::filesystem::path(a.dump_dir) / (std::to_string(row.seed) + "_" + row.method), *rep);
    };
    const ExperimentTable table = run_experiment({scn}, modes, seeds, cfg, on_row);
    if (!a.metrics_csv.empty()) {
      std::ofstream os(a.metrics_csv);
      if (!os) throw IoError("cannot write '" + a.metrics_csv + "'");
      write_experiment_csv(os, table);
    } else {
      write_experiment_csv(std::cout, table);
    }
    for (const auto &s : table.summary)
      if (s.failures > 0) return 3;
    return 0;
  }

  if (modes.size() != 1) throw ConfigError("--mode: several modes need --seeds");
  cfg.mode = modes[0];
  cfg.seed = scn.seed;
  cfg.validate(true);
  const PipelineReport rep = run_pipeline(cfg, scn);
  print_summary(rep);
  if (!a.output.empty()) write_wav(a.output, rep.output);
  if (!a.metrics_csv.empty()) {
    std::ofstream os(a.metrics_csv);
    if (!os) throw IoError("cannot write '" + a.metrics_csv + "'");
    write_metrics_csv(os, rep);
  }
  if (!a.dump_dir.empty()) dump_intermediates(a.dump_dir, rep);
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multichannel speech enhancement with rank-constrained SCM estimation"};
  Args a;
  app.add_option("--mode", a.modes, "ilrma, idlma, ilrma+rcscme, idlma+rcscme or idlma+rcscme-ss (comma list with --seeds)");
  app.add_option("--config", a.config, "Configuration file");
  app.add_option("--input", a.input, "Multichannel input WAV");
  app.add_option("--output", a.output, "Enhanced multichannel target image (float WAV)");
  app.add_option("--simulate", a.simulate, "Scenario file; runs on a simulated mixture with ground truth");
  app.add_option("--seeds", a.seeds, "Seed list for experiments, e.g. 1-10 or 1,4,7");
  app.add_option("--dump-intermediates", a.dump_dir, "Directory for W, R', lambda trace, noise frames and report");
  app.add_option("--metrics-csv", a.metrics_csv, "Per-iteration metrics (single run) or experiment table");
  app.add_option("--adapter", a.adapter, "Denoiser command template with {in} and {out}");
  app.add_flag("--oracle", a.oracle, "Use the ground-truth denoiser (simulation only)");
  app.add_flag("--schedule-noise-frames", a.schedule, "Take noise-only frames from the silence schedule");
  app.add_flag("-v,--verbose", log::verbose(), "Verbose logging");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    return run(a);
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError &e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const AdapterError &e) {
    std::cerr << "adapter failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

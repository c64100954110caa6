// include/rcscme/eval_sim.hpp

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

#ifndef RCSCME_EVAL_SIM_HPP_
#define RCSCME_EVAL_SIM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rcscme/error.hpp"
#include "rcscme/signal_io.hpp"
#include "rcscme/types.hpp"

namespace rcscme {

/// Silent interval of the target, in seconds, [start, end).
struct Interval {
  double start = 0.0;
  double end = 0.0;
};

/// Directional target plus diffuse noise made of `noise_sources` filtered
/// point sources.
struct Scenario {
  std::string id = "standard";
  Index mics = 4;
  Index noise_sources = 19;
  Index target_filter_len = 16;
  Index noise_filter_len = 64;
  double input_snr_db = 0.0;
  double duration_s = 3.0;
  int sample_rate = 16000;
  double target_rms = 0.05;
  std::uint64_t seed = 0;
  std::vector<Interval> silence;  // empty: default schedule

  void validate() const {
    if (mics < 2) throw ConfigError("scenario: mics must be at least 2");
    if (noise_sources < 1) throw ConfigError("scenario: noise_sources must be positive");
    if (target_filter_len < 1 || noise_filter_len < 1) throw ConfigError("scenario: filter lengths must be positive");
    if (!(duration_s > 0.0) || sample_rate <= 0) throw ConfigError("scenario: duration and sample rate must be positive");
    for (const auto &s : silence)
      if (!(s.end > s.start) || s.start < 0.0) throw ConfigError("scenario: malformed silence interval");
  }

  Index num_samples() const { return static_cast<Index>(std::llround(duration_s * sample_rate)); }
};

/// Two contiguous silent blocks covering about 20% of the frames, aligned to
/// the hop grid so that whole frames fall inside them.
inline std::vector<Interval> default_silence_schedule(double duration_s, int sample_rate, Index window = 1024,
                                                      Index hop = 512, double fraction = 0.2, int blocks = 2) {
  const auto length = static_cast<Index>(std::llround(duration_s * sample_rate));
  const Index frames = stft_frame_count(length, window, hop);
  const auto per_block = std::max<Index>(1, static_cast<Index>(std::llround(fraction * static_cast<double>(frames) / blocks)));
  const Index span = (per_block - 1) * hop + window;
  std::vector<Interval> out;
  for (int b = 0; b < blocks; ++b) {
    const double centre = (b + 1.0) / (blocks + 1.0) * static_cast<double>(length);
    Index start = static_cast<Index>(std::llround((centre - static_cast<double>(span) / 2.0) / static_cast<double>(hop))) * hop;
    start = std::clamp<Index>(start, 0, std::max<Index>(0, length - span));
    out.push_back({static_cast<double>(start) / sample_rate, static_cast<double>(start + span) / sample_rate});
  }
  return out;
}

inline std::vector<Interval> effective_silence(const Scenario &scn) {
  return scn.silence.empty() ? default_silence_schedule(scn.duration_s, scn.sample_rate) : scn.silence;
}

struct GroundTruth {
  Waveform target_image;
  Waveform noise_image;
  Waveform clean_target;
};

struct Simulation {
  Waveform mixture;
  GroundTruth truth;
};

namespace detail {

inline std::vector<double> convolve(const std::vector<double> &x, const std::vector<double> &h) {
  std::vector<double> y(x.size(), 0.0);
  for (size_t n = 0; n < x.size(); ++n) {
    const size_t kmax = std::min(h.size(), n + 1);
    double acc = 0.0;
    for (size_t k = 0; k < kmax; ++k) acc += h[k] * x[n - k];
    y[n] = acc;
  }
  return y;
}

inline std::vector<double> random_filter(Index len, double decay, Index max_delay, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<Index> d(0, std::max<Index>(0, std::min(max_delay, len - 1)));
  std::vector<double> h(static_cast<size_t>(len));
  const Index delay = d(rng);
  for (Index k = 0; k < len; ++k) h[static_cast<size_t>(k)] = g(rng) * std::exp(-static_cast<double>(k) / decay);
  h[static_cast<size_t>(delay)] += 2.0;
  return h;
}

inline double energy(const std::vector<double> &x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// Syllable train: harmonic complex with a gliding f0 under a floored sin^2
// envelope. Only the silence schedule produces pauses.
inline std::vector<double> speech_like(Index length, int fs, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> s(static_cast<size_t>(length), 0.0);
  Index pos = 0;
  double phase = 0.0;
  while (pos < length) {
    const auto syl = static_cast<Index>((0.12 + 0.18 * unif(rng)) * fs);
    const double f_start = 100.0 + 120.0 * unif(rng);
    const double f_end = f_start * (0.8 + 0.4 * unif(rng));
    const double level = 0.5 + unif(rng);
    const int harmonics = static_cast<int>(4000.0 / std::max(f_start, f_end));
    std::vector<double> amp(static_cast<size_t>(harmonics));
    for (int h = 0; h < harmonics; ++h) amp[static_cast<size_t>(h)] = (0.5 + unif(rng)) / (h + 1.0);
    for (Index k = 0; k < syl && pos + k < length; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(syl);
      const double f0 = f_start + (f_end - f_start) * t;
      phase += 2.0 * std::numbers::pi * f0 / fs;
      const double env = (0.15 + 0.85 * std::pow(std::sin(std::numbers::pi * t), 2.0)) * level;
      double v = 0.0;
      for (int h = 0; h < harmonics; ++h) v += amp[static_cast<size_t>(h)] * std::sin((h + 1.0) * phase);
      s[static_cast<size_t>(pos + k)] = env * v;
    }
    pos += syl;
  }
  return s;
}

}  // namespace detail

/// Deterministic for a given scenario (including its seed).
inline Simulation simulate(const Scenario &scn) {
  scn.validate();
  const Index length = scn.num_samples();
  const int fs = scn.sample_rate;
  std::mt19937_64 rng(scn.seed * 0x9E3779B97F4A7C15ULL + 12345);

  std::vector<double> dry = detail::speech_like(length, fs, rng);
  // Silence the dry source early enough that the filtered image is exactly
  // zero over each interval; ramp the edges over 8 ms.
  const auto ramp = static_cast<Index>(0.008 * fs);
  for (const auto &iv : effective_silence(scn)) {
    const Index s0 = std::max<Index>(0, static_cast<Index>(std::llround(iv.start * fs)) - (scn.target_filter_len - 1));
    const Index s1 = std::min<Index>(length, static_cast<Index>(std::llround(iv.end * fs)));
    for (Index n = std::max<Index>(0, s0 - ramp); n < std::min<Index>(length, s1 + ramp); ++n) {
      double g = 0.0;
      if (n < s0) g = std::pow(std::cos(0.5 * std::numbers::pi * static_cast<double>(n - (s0 - ramp)) / ramp), 2.0);
      else if (n >= s1) g = std::pow(std::sin(0.5 * std::numbers::pi * static_cast<double>(n - s1 + 1) / ramp), 2.0);
      dry[static_cast<size_t>(n)] *= g;
    }
  }

  Simulation sim;
  sim.truth.clean_target = Waveform(1, length, fs);
  sim.truth.target_image = Waveform(scn.mics, length, fs);
  sim.truth.noise_image = Waveform(scn.mics, length, fs);
  for (Index m = 0; m < scn.mics; ++m) {
    const auto h = detail::random_filter(scn.target_filter_len, static_cast<double>(scn.target_filter_len) / 4.0, 4, rng);
    sim.truth.target_image.channels[static_cast<size_t>(m)] = detail::convolve(dry, h);
  }
  const double target_energy = detail::energy(sim.truth.target_image.channels[0]);
  if (!(target_energy > 0.0)) throw Error("simulate: target is silent");
  const double gain = scn.target_rms * std::sqrt(static_cast<double>(length) / target_energy);
  for (auto &ch : sim.truth.target_image.channels)
    for (double &v : ch) v *= gain;
  for (Index n = 0; n < length; ++n)
    sim.truth.clean_target.channels[0][static_cast<size_t>(n)] = gain * dry[static_cast<size_t>(n)];

  std::normal_distribution<double> g(0.0, 1.0);
  for (Index k = 0; k < scn.noise_sources; ++k) {
    std::vector<double> src(static_cast<size_t>(length));
    for (double &v : src) v = g(rng);
    for (Index m = 0; m < scn.mics; ++m) {
      const auto h = detail::random_filter(scn.noise_filter_len, static_cast<double>(scn.noise_filter_len) / 4.0,
                                           scn.noise_filter_len / 4, rng);
      const auto img = detail::convolve(src, h);
      auto &dst = sim.truth.noise_image.channels[static_cast<size_t>(m)];
      for (Index n = 0; n < length; ++n) dst[static_cast<size_t>(n)] += img[static_cast<size_t>(n)];
    }
  }
  const double noise_energy = detail::energy(sim.truth.noise_image.channels[0]);
  const double target_energy_scaled = detail::energy(sim.truth.target_image.channels[0]);
  const double noise_gain = std::sqrt(target_energy_scaled / (noise_energy * std::pow(10.0, scn.input_snr_db / 10.0)));
  for (auto &ch : sim.truth.noise_image.channels)
    for (double &v : ch) v *= noise_gain;

  sim.mixture = Waveform(scn.mics, length, fs);
  for (Index m = 0; m < scn.mics; ++m)
    for (Index n = 0; n < length; ++n)
      sim.mixture.channels[static_cast<size_t>(m)][static_cast<size_t>(n)] =
          sim.truth.target_image.channels[static_cast<size_t>(m)][static_cast<size_t>(n)] +
          sim.truth.noise_image.channels[static_cast<size_t>(m)][static_cast<size_t>(n)];
  return sim;
}

/// Frames whose analysis window (clipped to the signal) lies inside one
/// silent interval.
inline std::vector<Index> silent_frames(const Scenario &scn, const StftParams &p) {
  const Index length = scn.num_samples();
  const Index frames = stft_frame_count(length, p.window_length, p.hop_length);
  std::vector<Index> out;
  for (Index j = 0; j < frames; ++j) {
    const Index a = std::max<Index>(0, j * p.hop_length - p.pad());
    const Index b = std::min<Index>(length, j * p.hop_length - p.pad() + p.window_length);
    for (const auto &iv : effective_silence(scn)) {
      const auto s0 = static_cast<Index>(std::llround(iv.start * scn.sample_rate));
      const auto s1 = static_cast<Index>(std::llround(iv.end * scn.sample_rate));
      if (a >= s0 && b <= s1) {
        out.push_back(j);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Separation metrics

struct SeparationMetrics {
  double sdr = 0.0;
  double sir = 0.0;
  double sar = 0.0;
};

/// Orthogonal decomposition of an estimate into target, interference and
/// artifact parts (time domain, length N + L - 1).
struct Decomposition {
  Eigen::VectorXd target;
  Eigen::VectorXd interference;
  Eigen::VectorXd artifact;
};

inline constexpr double kMetricCapDb = 100.0;

inline double ratio_db(double num, double den) {
  if (!(den > 0.0) || num / den > std::pow(10.0, kMetricCapDb / 10.0)) return kMetricCapDb;
  if (!(num > 0.0)) return -kMetricCapDb;
  return std::max(-kMetricCapDb, 10.0 * std::log10(num / den));
}

/// Projection-based SDR/SIR/SAR for one reference channel. The estimate may
/// be distorted by any `filter_len`-tap filter of the target image and still
/// count as target. The QR factorisation of the delayed references is done
/// once, so many estimates can be scored cheaply against the same truth.
class SeparationEvaluator {
 public:
  SeparationEvaluator(const std::vector<double> &target, const std::vector<double> &interference,
                      Index filter_len = 32)
      : n_(static_cast<Index>(std::min(target.size(), interference.size()))), taps_(filter_len) {
    if (n_ == 0 || detail::energy(target) == 0.0) throw Error("sdr: zero-energy reference");
    if (taps_ < 1) throw Error("sdr: filter length must be positive");
    const Index rows = n_ + taps_ - 1;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, 2 * taps_);
    for (Index k = 0; k < taps_; ++k)
      for (Index n = 0; n < n_; ++n) {
        a(n + k, k) = target[static_cast<size_t>(n)];
        a(n + k, taps_ + k) = interference[static_cast<size_t>(n)];
      }
    qr_.compute(a);
  }

  Index length() const { return n_; }

  Decomposition decompose(const std::vector<double> &estimate) const {
    const Index rows = n_ + taps_ - 1;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(rows);
    const Index len = std::min<Index>(n_, static_cast<Index>(estimate.size()));
    for (Index n = 0; n < len; ++n) e(n) = estimate[static_cast<size_t>(n)];
    Eigen::VectorXd z = qr_.householderQ().adjoint() * e;

    auto back = [&](Index from, Index to) {
      Eigen::VectorXd part = Eigen::VectorXd::Zero(rows);
      part.segment(from, to - from) = z.segment(from, to - from);
      return Eigen::VectorXd(qr_.householderQ() * part);
    };
    Decomposition d;
    d.target = back(0, taps_);
    d.interference = back(taps_, 2 * taps_);
    d.artifact = e - d.target - d.interference;
    return d;
  }

  SeparationMetrics evaluate(const std::vector<double> &estimate) const {
    const auto d = decompose(estimate);
    const double st = d.target.squaredNorm();
    const double ei = d.interference.squaredNorm();
    const double ea = d.artifact.squaredNorm();
    return {ratio_db(st, (d.interference + d.artifact).squaredNorm()), ratio_db(st, ei),
            ratio_db((d.target + d.interference).squaredNorm(), ea)};
  }

 private:
  Index n_;
  Index taps_;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_;
};

/// Metrics of `estimate` against the ground truth on `channel`.
inline SeparationMetrics sdr_sir_sar(const std::vector<double> &estimate, const GroundTruth &truth,
                                     Index channel = 0, Index filter_len = 32) {
  const SeparationEvaluator ev(truth.target_image.channels[static_cast<size_t>(channel)],
                               truth.noise_image.channels[static_cast<size_t>(channel)], filter_len);
  return ev.evaluate(estimate);
}

inline double improvement(double metric_out, double metric_in) { return metric_out - metric_in; }

}  // namespace rcscme

#endif  // RCSCME_EVAL_SIM_HPP_

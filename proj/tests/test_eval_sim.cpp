// tests/test_eval_sim.cpp

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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rcscme/eval_sim.hpp"
#include "rcscme/hermitian_linalg.hpp"

namespace rcscme {
namespace {

Scenario short_scenario(std::uint64_t seed) {
  Scenario s;
  s.duration_s = 2.0;
  s.seed = seed;
  return s;
}

TEST(Simulate, InputSnrIsExactOnReferenceChannel) {
  for (double snr : {-5.0, 0.0, 10.0}) {
    Scenario s = short_scenario(1);
    s.input_snr_db = snr;
    const Simulation sim = simulate(s);
    const double et = oracle::dot(sim.truth.target_image.channels[0], sim.truth.target_image.channels[0]);
    const double en = oracle::dot(sim.truth.noise_image.channels[0], sim.truth.noise_image.channels[0]);
    EXPECT_NEAR(10.0 * std::log10(et / en), snr, 1e-9);
    EXPECT_NEAR(std::sqrt(et / static_cast<double>(s.num_samples())), s.target_rms, 1e-12);
  }
}

TEST(Simulate, DeterministicPerSeed) {
  const Simulation a = simulate(short_scenario(7));
  const Simulation b = simulate(short_scenario(7));
  const Simulation c = simulate(short_scenario(8));
  EXPECT_EQ(a.mixture.channels, b.mixture.channels);
  EXPECT_NE(a.mixture.channels, c.mixture.channels);
  const Scenario s = short_scenario(7);
  EXPECT_EQ(a.mixture.num_channels(), s.mics);
  EXPECT_EQ(a.mixture.length(), s.num_samples());
  for (Index m = 0; m < s.mics; ++m)
    for (Index n = 0; n < s.num_samples(); n += 97)
      EXPECT_DOUBLE_EQ(a.mixture.channels[static_cast<size_t>(m)][static_cast<size_t>(n)],
                       a.truth.target_image.channels[static_cast<size_t>(m)][static_cast<size_t>(n)] +
                           a.truth.noise_image.channels[static_cast<size_t>(m)][static_cast<size_t>(n)]);
}

// Point-source target gives a near rank-1 SCM per bin; the noise field is
// full rank.
TEST(Simulate, SpatialRank) {
  const Scenario s = short_scenario(3);
  const Simulation sim = simulate(s);
  const Spectrogram t = stft(sim.truth.target_image, 64.0, 32.0);
  const Spectrogram n = stft(sim.truth.noise_image, 64.0, 32.0);
  for (Index i : {40, 100, 200}) {
    CMatrix rt = CMatrix::Zero(4, 4), rn = CMatrix::Zero(4, 4);
    for (Index j = 0; j < t.frames(); ++j) {
      rt += t.vec(i, j) * t.vec(i, j).adjoint();
      rn += n.vec(i, j) * n.vec(i, j).adjoint();
    }
    const auto et = eig_hermitian(rt).values;
    const auto en = eig_hermitian(rn).values;
    EXPECT_LT(et(2) / et(3), 0.05) << "bin " << i;
    EXPECT_GT(en(0) / en(3), 1e-3) << "bin " << i;
  }
}

TEST(Simulate, ScheduledSilenceIsExact) {
  const Scenario s = short_scenario(4);
  const Simulation sim = simulate(s);
  const auto silence = effective_silence(s);
  ASSERT_EQ(silence.size(), 2u);
  for (const auto &iv : silence)
    for (auto n = static_cast<Index>(std::llround(iv.start * s.sample_rate)); n < static_cast<Index>(std::llround(iv.end * s.sample_rate)); ++n)
      for (const auto &ch : sim.truth.target_image.channels) ASSERT_EQ(ch[static_cast<size_t>(n)], 0.0);

  const Spectrogram t = stft(sim.truth.target_image, 64.0, 32.0);
  const auto frames = silent_frames(s, t.params());
  EXPECT_NEAR(static_cast<double>(frames.size()) / static_cast<double>(t.frames()), 0.2, 0.05);
  for (Index j : frames)
    for (Index i = 0; i < t.bins(); ++i) ASSERT_EQ(std::norm(t(i, j, 0)), 0.0);
}

TEST(Simulate, ExplicitScheduleAndValidation) {
  Scenario s = short_scenario(5);
  s.silence = {{0.5, 0.9}};
  const Simulation sim = simulate(s);
  EXPECT_EQ(sim.truth.target_image.channels[1][static_cast<size_t>(0.7 * s.sample_rate)], 0.0);
  s.silence = {{0.9, 0.5}};
  EXPECT_THROW(simulate(s), ConfigError);
  Scenario bad = short_scenario(5);
  bad.mics = 1;
  EXPECT_THROW(simulate(bad), ConfigError);
}

struct MetricsFixture : ::testing::Test {
  void SetUp() override {
    sim = simulate(short_scenario(6));
    t = sim.truth.target_image.channels[0];
    n = sim.truth.noise_image.channels[0];
  }
  Simulation sim;
  std::vector<double> t, n;
};

TEST_F(MetricsFixture, PerfectEstimateHitsCap) {
  const auto m = sdr_sir_sar(t, sim.truth);
  EXPECT_DOUBLE_EQ(m.sdr, kMetricCapDb);
  EXPECT_DOUBLE_EQ(m.sir, kMetricCapDb);
  EXPECT_DOUBLE_EQ(m.sar, kMetricCapDb);
}

// The target ends in silence so the filtered copy is not truncated.
TEST(Metrics, ShortFilterOfTargetCountsAsTarget) {
  Scenario s = short_scenario(6);
  s.silence = {{1.9, 2.0}};
  const Simulation sim = simulate(s);
  const auto &t = sim.truth.target_image.channels[0];
  const std::vector<double> h = {0.7, -0.2, 0.1, 0.05};
  std::vector<double> e(t.size(), 0.0);
  for (size_t k = 0; k < t.size(); ++k)
    for (size_t d = 0; d < h.size() && d <= k; ++d) e[k] += h[d] * t[k - d];
  EXPECT_GT(sdr_sir_sar(e, sim.truth).sdr, 90.0);
}

TEST_F(MetricsFixture, WhiteArtifactAtTwentyDb) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(t.size());
  for (double &v : a) v = g(rng);
  const double scale = std::sqrt(oracle::dot(t, t) / oracle::dot(a, a) / 100.0);
  std::vector<double> e(t.size());
  for (size_t k = 0; k < t.size(); ++k) e[k] = t[k] + scale * a[k];
  const auto m = sdr_sir_sar(e, sim.truth);
  EXPECT_NEAR(m.sar, 20.0, 0.2);
  EXPECT_NEAR(m.sdr, 20.0, 0.2);
  EXPECT_GT(m.sir, 35.0);
}

TEST_F(MetricsFixture, InterferenceAtTwentyDb) {
  const double scale = std::sqrt(oracle::dot(t, t) / oracle::dot(n, n) / 100.0);
  std::vector<double> e(t.size());
  for (size_t k = 0; k < t.size(); ++k) e[k] = t[k] + scale * n[k];
  const auto m = sdr_sir_sar(e, sim.truth);
  EXPECT_NEAR(m.sir, 20.0, 0.2);
  EXPECT_DOUBLE_EQ(m.sar, kMetricCapDb);
}

TEST_F(MetricsFixture, DecompositionIsOrthogonalAndComplete) {
  const SeparationEvaluator ev(t, n);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<double> e(t.size());
  for (size_t k = 0; k < t.size(); ++k) e[k] = 0.8 * t[k] + 0.3 * n[k] + g(rng);
  const Decomposition d = ev.decompose(e);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(d.target.size());
  for (size_t k = 0; k < e.size(); ++k) full(static_cast<Index>(k)) = e[k];
  const double total = full.squaredNorm();
  EXPECT_LT((d.target + d.interference + d.artifact - full).norm(), 1e-8 * std::sqrt(total));
  EXPECT_NEAR(d.target.squaredNorm() + d.interference.squaredNorm() + d.artifact.squaredNorm(), total, 1e-8 * total);
  EXPECT_LT(std::abs(d.target.dot(d.interference)), 1e-8 * total);
  EXPECT_LT(std::abs(d.target.dot(d.artifact)), 1e-8 * total);
}

TEST_F(MetricsFixture, MoreNoiseMeansLowerSdr) {
  double prev = kMetricCapDb + 1.0;
  for (double level : {0.01, 0.1, 0.3, 1.0, 3.0}) {
    std::vector<double> e(t.size());
    for (size_t k = 0; k < t.size(); ++k) e[k] = t[k] + level * n[k];
    const double sdr = sdr_sir_sar(e, sim.truth).sdr;
    EXPECT_LT(sdr, prev);
    prev = sdr;
  }
}

TEST_F(MetricsFixture, MixtureImprovementIsZero) {
  const auto in = sdr_sir_sar(sim.mixture.channels[0], sim.truth);
  EXPECT_NEAR(in.sdr, 0.0, 0.2);
  EXPECT_EQ(improvement(in.sdr, in.sdr), 0.0);
}

TEST(Metrics, RatioCaps) {
  EXPECT_EQ(ratio_db(1.0, 0.0), kMetricCapDb);
  EXPECT_EQ(ratio_db(0.0, 1.0), -kMetricCapDb);
  EXPECT_NEAR(ratio_db(100.0, 1.0), 20.0, 1e-12);
  EXPECT_THROW(SeparationEvaluator(std::vector<double>(10, 0.0), std::vector<double>(10, 1.0)), Error);
}

}  // namespace
}  // namespace rcscme

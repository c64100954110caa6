// tests/test_rcscme.cpp

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
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rcscme/rcscme.hpp"

namespace rcscme {
namespace {

StftParams small_params(Index bins) {
  StftParams p;
  p.window_length = 2 * (bins - 1);
  p.hop_length = p.window_length / 2;
  return p;
}

ScmModel random_model(Index bins, Index m, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> lam(0.2, 3.0);
  ScmModel model;
  for (Index i = 0; i < bins; ++i) {
    model.steering.push_back(oracle::random_complex(m, 1, rng));
    const CMatrix base = oracle::random_psd(m, m - 1, rng);
    RankOneCompletion c = make_completion(base, lam(rng));
    model.base_pinv.push_back(pinv_psd(base));
    model.log_offset.push_back(completion_log_offset(base, c.v));
    model.noise.push_back(std::move(c));
  }
  return model;
}

EmState random_state(Index bins, Index frames, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.05, 4.0);
  EmState em{RMatrix(bins, frames), RMatrix(bins, frames)};
  for (Index k = 0; k < em.target_var.size(); ++k) {
    em.target_var.data()[k] = u(rng);
    em.noise_var.data()[k] = u(rng);
  }
  return em;
}

// Observation drawn from the model itself.
Spectrogram sample(const ScmModel &model, const EmState &em, Index frames, std::mt19937_64 &rng) {
  const Index bins = model.bins(), m = model.channels();
  Spectrogram x(bins, frames, m, small_params(bins));
  for (Index i = 0; i < bins; ++i) {
    const CMatrix ln = model.noise_scm(i).llt().matrixL();
    for (Index j = 0; j < frames; ++j) {
      const CVector z = oracle::random_complex(m, 1, rng) / std::sqrt(2.0);
      const CVector s = oracle::random_complex(1, 1, rng) / std::sqrt(2.0);
      x.vec(i, j) = std::sqrt(em.target_var(i, j)) * model.steering[static_cast<size_t>(i)] * s(0) +
                    std::sqrt(em.noise_var(i, j)) * (ln * z);
    }
  }
  return x;
}

// Posterior moments written directly with a dense inverse of R^(o).
void literal_moments(const CVector &a, const CMatrix &rn_scm, double rt, double rn, const CVector &x, double &rt_hat,
                     CMatrix &rn_hat) {
  const CMatrix ro = rt * a * a.adjoint() + rn * rn_scm;
  const CMatrix ro_inv = ro.fullPivLu().inverse();
  const Complex ax = (a.adjoint() * ro_inv * x)(0, 0);
  rt_hat = rt - rt * rt * (a.adjoint() * ro_inv * a)(0, 0).real() + rt * rt * std::norm(ax);
  const CVector g = rn * rn_scm * ro_inv * x;
  rn_hat = rn * rn_scm - rn * rn * rn_scm * ro_inv * rn_scm + g * g.adjoint();
}

// Log-posterior written with dense determinants and inverses.
double literal_objective(const Spectrogram &x, const ScmModel &model, const EmState &em, const SpeechPrior &sp,
                         const NoisePrior *np) {
  double total = 0.0;
  for (Index i = 0; i < x.bins(); ++i) {
    const CVector &a = model.steering[static_cast<size_t>(i)];
    const CMatrix rn_scm = model.noise_scm(i);
    for (Index j = 0; j < x.frames(); ++j) {
      const double rt = em.target_var(i, j), rn = em.noise_var(i, j);
      const CMatrix ro = rt * a * a.adjoint() + rn * rn_scm;
      const CVector xv = x.vec(i, j);
      total -= (xv.adjoint() * ro.fullPivLu().inverse() * xv)(0, 0).real() + oracle::logdet(ro) +
               (sp.alpha + 1.0) * std::log(rt) + sp.beta / rt;
    }
    if (np) {
      const CMatrix &scale = np->scale[static_cast<size_t>(i)];
      total -= (np->alpha_p + static_cast<double>(x.channels())) * oracle::logdet(rn_scm) +
               (scale * rn_scm.fullPivLu().inverse()).trace().real() / np->beta_p;
    }
  }
  return total;
}

TEST(EStep, MatchesDenseExpressions) {
  std::mt19937_64 rng(1);
  for (Index m : {2, 3, 4}) {
    const ScmModel model = random_model(3, m, rng);
    const EmState em = random_state(3, 7, rng);
    const Spectrogram x = sample(model, em, 7, rng);
    const EStepStats st = e_step(x, model, em);
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 7; ++j) {
        double rt_hat;
        CMatrix rn_hat;
        literal_moments(model.steering[static_cast<size_t>(i)], model.noise_scm(i), em.target_var(i, j),
                        em.noise_var(i, j), x.vec(i, j), rt_hat, rn_hat);
        EXPECT_NEAR(st.target_moment(i, j), rt_hat, 1e-9 * std::max(1.0, rt_hat));
        EXPECT_LT((st.noise(i, j) - rn_hat).norm(), 1e-9 * std::max(1.0, rn_hat.norm()));
      }
  }
}

TEST(EStep, MomentsArePositive) {
  std::mt19937_64 rng(2);
  for (Index m : {2, 3}) {
    for (int t = 0; t < 20; ++t) {
      const ScmModel model = random_model(2, m, rng);
      const EmState em = random_state(2, 5, rng);
      const Spectrogram x = sample(model, em, 5, rng);
      const EStepStats st = e_step(x, model, em);
      EXPECT_GE(st.target_moment.minCoeff(), 0.0);
      for (const auto &r : st.noise_moment) {
        EXPECT_LT((r - r.adjoint()).norm(), 1e-12 * std::max(1.0, r.norm()));
        EXPECT_GE(eig_hermitian(r).values(0), -1e-10 * std::max(1.0, r.norm()));
      }
    }
  }
}

TEST(EStep, ZeroObservationIsPureShrinkage) {
  std::mt19937_64 rng(3);
  const ScmModel model = random_model(1, 3, rng);
  const EmState em = random_state(1, 1, rng);
  Spectrogram x(1, 1, 3, small_params(1));
  const EStepStats st = e_step(x, model, em);
  const CVector a = model.steering[0];
  const double rt = em.target_var(0, 0);
  const CMatrix ro = rt * a * a.adjoint() + em.noise_var(0, 0) * model.noise_scm(0);
  const double expected = rt - rt * rt * (a.adjoint() * ro.inverse() * a)(0, 0).real();
  EXPECT_NEAR(st.target_moment(0, 0), expected, 1e-12 * rt);
}

// a = e1, R^(n) = I, r^(t) = r^(n) = 1, x = (1, 0):
// R^(o) = diag(2, 1), r-hat^(t) = 1 - 1/2 + 1/4 = 3/4,
// R-hat^(n) = I - diag(1/2, 1) + diag(1/4, 0) = diag(3/4, 0).
TEST(EStep, TwoChannelHandExample) {
  ScmModel model;
  model.steering.push_back(CVector::Unit(2, 0));
  CMatrix base = CMatrix::Zero(2, 2);
  base(0, 0) = 1.0;
  RankOneCompletion c = make_completion(base, 1.0);
  model.base_pinv.push_back(pinv_psd(base));
  model.log_offset.push_back(completion_log_offset(base, c.v));
  model.noise.push_back(c);
  EXPECT_LT((model.noise_scm(0) - CMatrix::Identity(2, 2)).norm(), 1e-15);
  EmState em{RMatrix::Ones(1, 1), RMatrix::Ones(1, 1)};
  Spectrogram x(1, 1, 2, small_params(1));
  x(0, 0, 0) = 1.0;
  const EStepStats st = e_step(x, model, em);
  EXPECT_NEAR(st.target_moment(0, 0), 0.75, 1e-15);
  CMatrix expected = CMatrix::Zero(2, 2);
  expected(0, 0) = 0.75;
  EXPECT_LT((st.noise(0, 0) - expected).norm(), 1e-15);
}

TEST(LambdaRule, SelfSupervisedReducesToBaseline) {
  std::mt19937_64 rng(4);
  for (Index m : {2, 3, 4}) {
    const CVector u = oracle::random_complex(m, 1, rng);
    const CMatrix sum = oracle::random_psd(m, m, rng) * 37.0;
    const double base = lambda_baseline(u, sum, 96);
    const double ss = lambda_self_supervised(u, sum, 96, CMatrix::Zero(m, m), -static_cast<double>(m), 1.0);
    EXPECT_NEAR(ss, base, 1e-14 * base);
  }
}

TEST(LambdaRule, LargeBetaPrimeLimit) {
  std::mt19937_64 rng(5);
  const CVector u = oracle::random_complex(4, 1, rng);
  const CMatrix sum = oracle::random_psd(4, 4, rng);
  const CMatrix scale = oracle::random_psd(4, 4, rng);
  const double base = lambda_baseline(u, sum, 96);
  const double ss = lambda_self_supervised(u, sum, 96, scale, 800.0, 1e300);
  EXPECT_NEAR(ss / base, 96.0 / (800.0 + 4.0 + 96.0), 1e-12);
}

TEST(MStep, TargetVarianceRuleAndClamp) {
  std::mt19937_64 rng(6);
  ScmModel model = random_model(1, 2, rng);
  EmState em = random_state(1, 3, rng);
  EStepStats st;
  st.frames = 3;
  st.target_moment = RMatrix::Zero(1, 3);
  st.target_moment(0, 1) = 2.3;
  for (int j = 0; j < 3; ++j) st.noise_moment.push_back(CMatrix::Identity(2, 2));
  m_step_baseline(st, SpeechPrior{1.3, 0.0}, model, em);
  EXPECT_EQ(em.target_var(0, 0), kMinVariance);
  EXPECT_NEAR(em.target_var(0, 1), 2.3 / 3.3, 1e-15);
  EXPECT_GT(em.noise_var.minCoeff(), 0.0);
}

TEST(MStep, NoiseVarianceUsesCompletedInverse) {
  std::mt19937_64 rng(7);
  ScmModel model = random_model(2, 3, rng);
  EmState em = random_state(2, 6, rng);
  const Spectrogram x = sample(model, em, 6, rng);
  const EStepStats st = e_step(x, model, em);
  m_step_baseline(st, SpeechPrior{}, model, em);
  for (Index i = 0; i < 2; ++i) {
    const CMatrix inv = model.noise_scm(i).fullPivLu().inverse();
    for (Index j = 0; j < 6; ++j)
      EXPECT_NEAR(em.noise_var(i, j), (st.noise(i, j) * inv).trace().real() / 3.0, 1e-9 * em.noise_var(i, j));
  }
}

TEST(Objective, MatchesDenseEvaluation) {
  std::mt19937_64 rng(8);
  const ScmModel model = random_model(3, 3, rng);
  const EmState em = random_state(3, 5, rng);
  const Spectrogram x = sample(model, em, 5, rng);
  const SpeechPrior sp;
  NoisePrior np;
  for (Index i = 0; i < 3; ++i) np.scale.push_back(oracle::random_psd(3, 3, rng));
  const double base = literal_objective(x, model, em, sp, nullptr);
  EXPECT_NEAR(log_posterior(x, model, em, sp), base, 1e-9 * std::abs(base));
  const double with_prior = literal_objective(x, model, em, sp, &np);
  EXPECT_NEAR(log_posterior(x, model, em, sp, &np), with_prior, 1e-9 * std::abs(with_prior));
}

TEST(Em, ObjectiveAscendsOnRandomInstances) {
  std::mt19937_64 rng(9);
  const SpeechPrior sp;
  for (int t = 0; t < 20; ++t) {
    const Index m = 2 + t % 3;
    ScmModel model = random_model(3, m, rng);
    const EmState truth = random_state(3, 40, rng);
    const Spectrogram x = sample(model, truth, 40, rng);
    NoisePrior np;
    np.alpha_p = 10.0;
    np.beta_p = 0.5;
    for (Index i = 0; i < 3; ++i) np.scale.push_back(oracle::random_psd(m, m, rng));
    for (const NoisePrior *prior : {static_cast<const NoisePrior *>(nullptr), static_cast<const NoisePrior *>(&np)}) {
      ScmModel mdl = model;
      EmState em = random_state(3, 40, rng);
      double prev = log_posterior(x, mdl, em, sp, prior);
      for (int it = 0; it < 10; ++it) {
        const EStepStats st = e_step(x, mdl, em);
        if (prior)
          m_step_self_supervised(st, sp, *prior, mdl, em);
        else
          m_step_baseline(st, sp, mdl, em);
        const double obj = log_posterior(x, mdl, em, sp, prior);
        ASSERT_GE(obj, prev - 1e-8 * std::abs(prev)) << "instance " << t << " iteration " << it;
        prev = obj;
      }
    }
  }
}

TEST(Wiener, ImagesAddUpToObservation) {
  std::mt19937_64 rng(10);
  const ScmModel model = random_model(4, 3, rng);
  const EmState em = random_state(4, 9, rng);
  const Spectrogram x = sample(model, em, 9, rng);
  const WienerImages w = wiener_images(x, model, em);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 9; ++j)
      EXPECT_LT((w.target.vec(i, j) + w.noise.vec(i, j) - x.vec(i, j)).norm(), 1e-8 * std::max(1.0, x.vec(i, j).norm()));
  EmState silent = em;
  silent.target_var.setZero();
  EXPECT_EQ(wiener_extract(x, model, silent).energy(), 0.0);
}

TEST(NoiseFrames, StrictThreshold) {
  Spectrogram x(3, 4, 2, small_params(3));
  for (auto &z : x.data()) z = 1.0;
  const FunctionDenoiser zero([](const Spectrogram &y) {
    Spectrogram o = y;
    for (auto &z : o.data()) z = 0.0;
    return o;
  });
  EXPECT_EQ(detect_noise_frames(x, zero, 1e-3), (std::vector<Index>{0, 1, 2, 3}));
  // Frame 1 has norm exactly 0.5, frame 2 slightly less.
  const FunctionDenoiser shaped([](const Spectrogram &y) {
    Spectrogram o = y;
    for (auto &z : o.data()) z = 1.0;
    for (Index i = 0; i < 3; ++i) o(i, 1, 0) = 0.0, o(i, 2, 0) = 0.0;
    o(0, 1, 0) = 0.5;
    o(0, 2, 0) = 0.4999;
    return o;
  });
  EXPECT_EQ(detect_noise_frames(x, shaped, 0.5), (std::vector<Index>{2}));
  EXPECT_THROW(detect_noise_frames(x, zero, 0.0), ConfigError);
}

TEST(NoisePrior, SingleFrameAndValidation) {
  std::mt19937_64 rng(11);
  Spectrogram x(2, 5, 3, small_params(2));
  for (auto &z : x.data()) z = Complex(rng() % 7 - 3.0, rng() % 5 - 2.0);
  const NoisePrior np = estimate_noise_prior(x, {3}, 800.0, 1e4);
  for (Index i = 0; i < 2; ++i) EXPECT_LT((np.scale[static_cast<size_t>(i)] - x.vec(i, 3) * x.vec(i, 3).adjoint()).norm(), 1e-14);
  EXPECT_THROW(estimate_noise_prior(x, {}, 800.0, 1e4), NumericalError);
  EXPECT_THROW(estimate_noise_prior(x, {0}, 1.5, 1e4), ConfigError);
  EXPECT_THROW(estimate_noise_prior(x, {0}, 800.0, 0.0), ConfigError);
}

TEST(NoisePrior, ConvergesToTrueCovariance) {
  std::mt19937_64 rng(12);
  const CMatrix c = oracle::random_psd(4, 4, rng);
  const CMatrix l = c.llt().matrixL();
  Spectrogram x(1, 5000, 4, small_params(1));
  std::vector<Index> frames;
  for (Index j = 0; j < 5000; ++j) {
    x.vec(0, j) = l * oracle::random_complex(4, 1, rng) / std::sqrt(2.0);
    frames.push_back(j);
  }
  const NoisePrior np = estimate_noise_prior(x, frames, 800.0, 1e4);
  EXPECT_LT((np.scale[0] - c).norm() / c.norm(), 0.1);
}

}  // namespace
}  // namespace rcscme

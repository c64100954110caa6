// include/rcscme/rcscme.hpp

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

#ifndef RCSCME_RCSCME_HPP_
#define RCSCME_RCSCME_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcscme/demix.hpp"
#include "rcscme/error.hpp"
#include "rcscme/hermitian_linalg.hpp"
#include "rcscme/signal_io.hpp"
#include "rcscme/source_models.hpp"
#include "rcscme/types.hpp"

namespace rcscme {

/// Inverse-gamma prior on the target variances.
struct SpeechPrior {
  double alpha = 1.3;
  double beta = 1e-16;
};

/// Complex inverse matrix gamma prior on the noise SCM, with the empirical
/// SCM of noise-only frames as its scale matrix.
struct NoisePrior {
  double alpha_p = 8e2;
  double beta_p = 1e4;
  std::vector<CMatrix> scale;  // one per bin
  std::vector<Index> frames;   // the noise-only frame set
};

/// Target SCM a a^H and noise SCM R' + lambda v v^H for every bin.
struct ScmModel {
  std::vector<CVector> steering;
  std::vector<RankOneCompletion> noise;
  std::vector<CMatrix> base_pinv;   // R'^+
  std::vector<double> log_offset;   // log det(R' + v v^H)

  Index bins() const { return static_cast<Index>(steering.size()); }
  Index channels() const { return steering.empty() ? 0 : steering[0].size(); }

  CMatrix target_scm(Index i) const {
    const CVector &a = steering[static_cast<size_t>(i)];
    return a * a.adjoint();
  }
  CMatrix noise_scm(Index i) const { return noise[static_cast<size_t>(i)].dense(); }
  CMatrix noise_inverse(Index i) const {
    const auto &c = noise[static_cast<size_t>(i)];
    return completed_inverse_from_pinv(base_pinv[static_cast<size_t>(i)], c.u, c.v, c.lambda);
  }
  double noise_logdet(Index i) const {
    const auto &c = noise[static_cast<size_t>(i)];
    if (!(c.lambda > 0.0)) throw NumericalError("noise_logdet: lambda must be positive");
    return std::log(c.lambda) + log_offset[static_cast<size_t>(i)];
  }
};

/// Time-varying variances r^(t)_ij and r^(n)_ij.
struct EmState {
  RMatrix target_var;
  RMatrix noise_var;
};

/// Posterior statistics: r-hat^(t)_ij and R-hat^(n)_ij (row-major in (i, j)).
struct EStepStats {
  RMatrix target_moment;
  std::vector<CMatrix> noise_moment;
  Index frames = 0;

  const CMatrix &noise(Index i, Index j) const { return noise_moment[static_cast<size_t>(i * frames + j)]; }
};

// ---------------------------------------------------------------------------
// Model construction

/// Noise SCM of the rank-1 result: R'_i = (1/J) sum_j yhat yhat^H where yhat
/// is the observation re-synthesised from every output except the target.
inline CMatrix rank_one_noise_scm(const Spectrogram &y, const CMatrix &mixing, Index target, Index bin) {
  const Index m = mixing.rows();
  CMatrix r = CMatrix::Zero(m, m);
  CVector yz(y.channels());
  for (Index j = 0; j < y.frames(); ++j) {
    yz = y.vec(bin, j);
    yz(target) = 0.0;
    const CVector yhat = mixing * yz;
    r.noalias() += yhat * yhat.adjoint();
  }
  r /= static_cast<double>(y.frames());
  return 0.5 * (r + r.adjoint());
}

inline ScmModel build_scm_model(const Spectrogram &x, const MixingEstimate &mix, const DemixingState &state) {
  if (static_cast<Index>(mix.mixing.size()) != x.bins() || state.bins() != x.bins())
    throw Error("build_scm_model: inconsistent bin count");
  const Spectrogram y = apply_demixing(x, state.demixing);
  const Index m = x.channels();
  ScmModel model;
  for (Index i = 0; i < x.bins(); ++i) {
    model.steering.push_back(mix.steering(i));
    const CMatrix base = rank_one_noise_scm(y, mix.mixing[static_cast<size_t>(i)], mix.target, i);
    RankOneCompletion c;
    try {
      c = make_completion(base, 1.0);
    } catch (const NumericalError &e) {
      throw NumericalError(std::string(e.what()) + " (noise SCM at bin " + std::to_string(i) + ")");
    }
    c.lambda = base.trace().real() / static_cast<double>(m - 1);
    if (!(c.lambda > 0.0)) throw NumericalError("build_scm_model: zero noise SCM at bin " + std::to_string(i));
    model.base_pinv.push_back(pinv_psd(base));
    model.log_offset.push_back(completion_log_offset(base, c.v));
    model.noise.push_back(std::move(c));
  }
  return model;
}

/// r^(t) from the rank-1 target output (floored), r^(n) = 1.
inline EmState init_em_state(const DemixingState &state, double epsilon_scale) {
  EmState em;
  em.target_var = floor_power(power(state.separated, state.target), epsilon_scale).first;
  em.noise_var = RMatrix::Ones(em.target_var.rows(), em.target_var.cols());
  return em;
}

// ---------------------------------------------------------------------------
// EM

/// Posterior moments of the target coefficient s (x = a s + n) and of the
/// noise image n, evaluated at the current parameters. Uses the information
/// form, which is algebraically identical to the direct expressions through
/// R^(o)^{-1} but keeps both moments nonnegative.
inline EStepStats e_step(const Spectrogram &x, const ScmModel &model, const EmState &em) {
  const Index frames = x.frames();
  EStepStats st;
  st.frames = frames;
  st.target_moment.resize(x.bins(), frames);
  st.noise_moment.resize(static_cast<size_t>(x.bins() * frames));
  for (Index i = 0; i < x.bins(); ++i) {
    const CVector &a = model.steering[static_cast<size_t>(i)];
    const CMatrix rn_inv = model.noise_inverse(i);
    const CVector rn_inv_a = rn_inv * a;
    const double a_rn_a = std::max(a.dot(rn_inv_a).real(), 0.0);
    for (Index j = 0; j < frames; ++j) {
      const double rt = em.target_var(i, j);
      const double rn = em.noise_var(i, j);
      if (!(rt > 0.0) || !(rn > 0.0)) throw NumericalError("e_step: variances must be positive");
      const auto xv = x.vec(i, j);
      const double post_var = 1.0 / (1.0 / rt + a_rn_a / rn);
      const Complex post_mean = post_var * rn_inv_a.dot(xv) / rn;  // a^H Rn^{-1} x
      st.target_moment(i, j) = post_var + std::norm(post_mean);
      const CVector resid = xv - a * post_mean;
      CMatrix &rh = st.noise_moment[static_cast<size_t>(i * frames + j)];
      rh.noalias() = resid * resid.adjoint();
      rh.noalias() += post_var * (a * a.adjoint());
    }
  }
  return st;
}

inline double lambda_baseline(const CVector &u, const CMatrix &weighted_sum, Index frames) {
  return u.dot((weighted_sum / static_cast<double>(frames)) * u).real();
}

inline double lambda_self_supervised(const CVector &u, const CMatrix &weighted_sum, Index frames,
                                     const CMatrix &prior_scale, double alpha_p, double beta_p) {
  const double m = static_cast<double>(u.size());
  return u.dot((prior_scale / beta_p + weighted_sum) * u).real() / (alpha_p + m + static_cast<double>(frames));
}

namespace detail {

inline void m_step_impl(const EStepStats &st, const SpeechPrior &sp, const NoisePrior *np, ScmModel &model,
                        EmState &em) {
  const Index frames = st.frames;
  const Index bins = model.bins();
  const Index m = model.channels();
  for (Index i = 0; i < bins; ++i) {
    for (Index j = 0; j < frames; ++j)
      em.target_var(i, j) = std::max((st.target_moment(i, j) + sp.beta) / (sp.alpha + 2.0), kMinVariance);

    auto &c = model.noise[static_cast<size_t>(i)];
    CMatrix weighted = CMatrix::Zero(m, m);
    for (Index j = 0; j < frames; ++j) weighted += st.noise(i, j) / em.noise_var(i, j);
    double lambda = np ? lambda_self_supervised(c.u, weighted, frames, np->scale[static_cast<size_t>(i)], np->alpha_p,
                                                np->beta_p)
                       : lambda_baseline(c.u, weighted, frames);
    if (!(lambda > 0.0)) {
      lambda = 1e-12 * c.base.trace().real() / static_cast<double>(m);
      log::info("m_step: lambda clamped at bin " + std::to_string(i));
    }
    c.lambda = lambda;

    const CMatrix rn_inv = model.noise_inverse(i);
    for (Index j = 0; j < frames; ++j) {
      const double tr = (st.noise(i, j).cwiseProduct(rn_inv.transpose())).sum().real();
      em.noise_var(i, j) = std::max(tr / static_cast<double>(m), kMinVariance);
    }
  }
}

}  // namespace detail

inline void m_step_baseline(const EStepStats &st, const SpeechPrior &sp, ScmModel &model, EmState &em) {
  detail::m_step_impl(st, sp, nullptr, model, em);
}

inline void m_step_self_supervised(const EStepStats &st, const SpeechPrior &sp, const NoisePrior &np,
                                   ScmModel &model, EmState &em) {
  if (static_cast<Index>(np.scale.size()) != model.bins())
    throw Error("m_step_self_supervised: noise prior has the wrong number of bins");
  detail::m_step_impl(st, sp, &np, model, em);
}

namespace detail {

struct ObservedCov {
  Eigen::LLT<CMatrix> llt;
  bool loaded = false;
};

// Cholesky of R^(o) with relative diagonal loading when ill-conditioned.
inline ObservedCov factor_observed(const CMatrix &ro) {
  ObservedCov out;
  out.llt.compute(ro);
  if (out.llt.info() != Eigen::Success || !(out.llt.rcond() > 1e-12)) {
    CMatrix loaded = ro;
    loaded.diagonal().array() += 1e-10 * ro.trace().real() / static_cast<double>(ro.rows());
    out.llt.compute(loaded);
    out.loaded = true;
    if (out.llt.info() != Eigen::Success) throw NumericalError("observed covariance is not positive definite");
  }
  return out;
}

}  // namespace detail

/// Log-posterior up to constants: the observation likelihood plus the
/// inverse-gamma target prior, plus the noise SCM prior when given.
inline double log_posterior(const Spectrogram &x, const ScmModel &model, const EmState &em, const SpeechPrior &sp,
                            const NoisePrior *np = nullptr) {
  const Index m = x.channels();
  double total = 0.0;
  for (Index i = 0; i < x.bins(); ++i) {
    const CMatrix rt_scm = model.target_scm(i);
    const CMatrix rn_scm = model.noise_scm(i);
    for (Index j = 0; j < x.frames(); ++j) {
      const double rt = em.target_var(i, j);
      const double rn = em.noise_var(i, j);
      const CMatrix ro = rt * rt_scm + rn * rn_scm;
      const auto f = detail::factor_observed(ro);
      const auto xv = x.vec(i, j);
      const double quad = xv.dot(f.llt.solve(CVector(xv))).real();
      double logdet = 0.0;
      for (Index k = 0; k < m; ++k) logdet += 2.0 * std::log(f.llt.matrixL()(k, k).real());
      total -= quad + logdet + (sp.alpha + 1.0) * std::log(rt) + sp.beta / rt;
    }
    if (np) {
      const CMatrix &scale = np->scale[static_cast<size_t>(i)];
      const double tr = (scale.cwiseProduct(model.noise_inverse(i).transpose())).sum().real();
      total -= (np->alpha_p + static_cast<double>(m)) * model.noise_logdet(i) + tr / np->beta_p;
    }
  }
  return total;
}

/// Multichannel Wiener estimates of the target and noise images:
///   r^(t) R^(t) R^(o)^{-1} x  and  r^(n) R^(n) R^(o)^{-1} x.
struct WienerImages {
  Spectrogram target;
  Spectrogram noise;
};

inline WienerImages wiener_images(const Spectrogram &x, const ScmModel &model, const EmState &em) {
  WienerImages out{Spectrogram(x.bins(), x.frames(), x.channels(), x.params()),
                   Spectrogram(x.bins(), x.frames(), x.channels(), x.params())};
  for (Index i = 0; i < x.bins(); ++i) {
    const CMatrix rt_scm = model.target_scm(i);
    const CMatrix rn_scm = model.noise_scm(i);
    for (Index j = 0; j < x.frames(); ++j) {
      const double rt = em.target_var(i, j);
      const double rn = em.noise_var(i, j);
      const auto f = detail::factor_observed(rt * rt_scm + rn * rn_scm);
      const CVector h = f.llt.solve(CVector(x.vec(i, j)));
      out.target.vec(i, j) = rt * (rt_scm * h);
      out.noise.vec(i, j) = rn * (rn_scm * h);
    }
  }
  return out;
}

inline Spectrogram wiener_extract(const Spectrogram &x, const ScmModel &model, const EmState &em) {
  return wiener_images(x, model, em).target;
}

// ---------------------------------------------------------------------------
// Noise prior

/// Frames whose denoised energy sqrt(sum_i |DNN(X_ref)_ij|^2) is below theta.
inline std::vector<Index> detect_noise_frames(const Spectrogram &x, const Denoiser &dnn, double theta,
                                              Index channel = 0) {
  if (!(theta > 0.0)) throw ConfigError("detect_noise_frames: theta must be positive");
  const Spectrogram d = denoise(dnn, x.channel(channel));
  std::vector<Index> frames;
  for (Index j = 0; j < d.frames(); ++j) {
    double e = 0.0;
    for (Index i = 0; i < d.bins(); ++i) e += std::norm(d(i, j, 0));
    if (std::sqrt(e) < theta) frames.push_back(j);
  }
  return frames;
}

/// Empirical SCM of the given frames, one matrix per bin.
inline NoisePrior estimate_noise_prior(const Spectrogram &x, const std::vector<Index> &frames, double alpha_p,
                                       double beta_p) {
  if (frames.empty()) throw NumericalError("estimate_noise_prior: empty noise frame set");
  const Index m = x.channels();
  if (!(alpha_p > static_cast<double>(m - 1))) throw ConfigError("noise prior: alpha' must exceed M-1");
  if (!(beta_p > 0.0)) throw ConfigError("noise prior: beta' must be positive");
  NoisePrior np{alpha_p, beta_p, {}, frames};
  for (Index i = 0; i < x.bins(); ++i) {
    CMatrix r = CMatrix::Zero(m, m);
    for (Index j : frames) {
      if (j < 0 || j >= x.frames()) throw Error("estimate_noise_prior: frame index out of range");
      const auto xv = x.vec(i, j);
      r.noalias() += xv * xv.adjoint();
    }
    r /= static_cast<double>(frames.size());
    np.scale.push_back(0.5 * (r + r.adjoint()));
  }
  return np;
}

// ---------------------------------------------------------------------------
// Driver

struct RcscmeOptions {
  int iterations = 10;
  SpeechPrior speech;
  std::optional<NoisePrior> noise_prior;  // set for the self-supervised variant
  double epsilon_scale = 0.1;
};

struct RcscmeResult {
  ScmModel model;
  EmState em;
  double initial_objective = 0.0;
  std::vector<double> objective_trace;  // after each iteration
  Spectrogram enhanced;                 // M-channel target image
};

/// Called after every EM iteration with the 1-based iteration number.
using RcscmeObserver = std::function<void(int, const ScmModel &, const EmState &)>;

inline RcscmeResult run_rcscme(const Spectrogram &x, const MixingEstimate &mix, const DemixingState &state,
                               const RcscmeOptions &opt, const RcscmeObserver &observer = {}) {
  RcscmeResult res;
  res.model = build_scm_model(x, mix, state);
  res.em = init_em_state(state, opt.epsilon_scale);
  const NoisePrior *np = opt.noise_prior ? &*opt.noise_prior : nullptr;
  res.initial_objective = log_posterior(x, res.model, res.em, opt.speech, np);
  for (int it = 1; it <= opt.iterations; ++it) {
    const EStepStats st = e_step(x, res.model, res.em);
    if (np)
      m_step_self_supervised(st, opt.speech, *np, res.model, res.em);
    else
      m_step_baseline(st, opt.speech, res.model, res.em);
    res.objective_trace.push_back(log_posterior(x, res.model, res.em, opt.speech, np));
    if (observer) observer(it, res.model, res.em);
  }
  res.enhanced = wiener_extract(x, res.model, res.em);
  return res;
}

}  // namespace rcscme

#endif  // RCSCME_RCSCME_HPP_

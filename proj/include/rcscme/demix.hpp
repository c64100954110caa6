// include/rcscme/demix.hpp

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

#ifndef RCSCME_DEMIX_HPP_
#define RCSCME_DEMIX_HPP_

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcscme/error.hpp"
#include "rcscme/signal_io.hpp"
#include "rcscme/source_models.hpp"
#include "rcscme/types.hpp"

namespace rcscme {

/// Rank-1 separation result: W_i (N x M, rows w_{i,n}^H), outputs Y = W X,
/// and the variances that produced W.
struct DemixingState {
  std::vector<CMatrix> demixing;
  Spectrogram separated;
  VarianceMap variances;
  Index target = 0;

  Index bins() const { return static_cast<Index>(demixing.size()); }
};

struct MixingEstimate {
  std::vector<CMatrix> mixing;  // A_i = W_i^{-1}
  Index target = 0;

  CVector steering(Index i) const { return mixing[static_cast<size_t>(i)].col(target); }
};

inline Spectrogram apply_demixing(const Spectrogram &x, const std::vector<CMatrix> &w) {
  if (static_cast<Index>(w.size()) != x.bins()) throw Error("demix: one demixing matrix per bin required");
  const Index n_src = w.empty() ? 0 : w[0].rows();
  Spectrogram y(x.bins(), x.frames(), n_src, x.params());
  for (Index i = 0; i < x.bins(); ++i)
    for (Index j = 0; j < x.frames(); ++j) y.vec(i, j).noalias() = w[static_cast<size_t>(i)] * x.vec(i, j);
  return y;
}

/// Identity demixing, Y = X.
inline DemixingState init_demixing(const Spectrogram &x) {
  DemixingState s;
  s.demixing.assign(static_cast<size_t>(x.bins()), CMatrix::Identity(x.channels(), x.channels()));
  s.separated = x;
  return s;
}

/// Negative log-likelihood of the observation under the rank-1 model, up to
/// a constant:
///   sum_{ijn} |w_in^H x_ij|^2 / sigma^2 + log sigma^2  -  2 J sum_i log|det W_i|
inline double cost(const Spectrogram &x, const DemixingState &s) {
  const Index n_src = s.variances.num_sources();
  if (s.bins() != x.bins() || n_src != x.channels()) throw Error("cost: inconsistent dimensions");
  const double frames = static_cast<double>(x.frames());
  double total = 0.0;
  for (Index i = 0; i < x.bins(); ++i) {
    const CMatrix &w = s.demixing[static_cast<size_t>(i)];
    const double det = std::abs(w.determinant());
    if (!(det > 0.0) || !std::isfinite(det)) {
      log::warn("cost: singular demixing matrix at bin " + std::to_string(i));
      return std::numeric_limits<double>::infinity();
    }
    for (Index j = 0; j < x.frames(); ++j) {
      const CVector y = w * x.vec(i, j);
      for (Index n = 0; n < n_src; ++n) {
        const double var = s.variances(i, j, n);
        total += std::norm(y(n)) / var + std::log(var);
      }
    }
    total -= 2.0 * frames * std::log(det);
  }
  return total;
}

/// One iterative-projection sweep over every bin and source.
inline DemixingState ip_update(const Spectrogram &x, DemixingState s) {
  const Index m = x.channels();
  const Index frames = x.frames();
  if (s.variances.num_sources() != m || s.bins() != x.bins())
    throw Error("ip_update: demixing state does not match the observation");
  for (Index i = 0; i < x.bins(); ++i) {
    CMatrix &w = s.demixing[static_cast<size_t>(i)];
    for (Index n = 0; n < m; ++n) {
      CMatrix u = CMatrix::Zero(m, m);
      for (Index j = 0; j < frames; ++j) {
        const auto xv = x.vec(i, j);
        u.noalias() += (1.0 / s.variances(i, j, n)) * (xv * xv.adjoint());
      }
      u /= static_cast<double>(frames);

      const CVector e = CVector::Unit(m, n);
      auto solve = [&](const CMatrix &cov) -> std::optional<CVector> {
        Eigen::PartialPivLU<CMatrix> lu(w * cov);
        if (!(lu.rcond() > 1e-14)) return std::nullopt;
        CVector wn = lu.solve(e);
        const double q = (wn.adjoint() * cov * wn)(0, 0).real();
        if (!(q > 0.0) || !wn.allFinite()) return std::nullopt;
        return CVector(wn / std::sqrt(q));
      };
      auto wn = solve(u);
      if (!wn) {
        CMatrix loaded = u;
        loaded.diagonal().array() += 1e-8 * u.trace().real() / static_cast<double>(m);
        log::info("ip_update: diagonal loading at bin " + std::to_string(i));
        wn = solve(loaded);
        if (!wn) throw NumericalError("ip_update: singular weighted covariance at bin " + std::to_string(i));
      }
      w.row(n) = wn->adjoint();
    }
  }
  s.separated = apply_demixing(x, s.demixing);
  return s;
}

/// Rescales every output to its image on channel 0: row n of W_i is
/// multiplied by (W_i^{-1})_{0n}. Variances follow so the cost is unchanged.
inline DemixingState projection_back(DemixingState s, const Spectrogram &x) {
  for (Index i = 0; i < s.bins(); ++i) {
    CMatrix &w = s.demixing[static_cast<size_t>(i)];
    Eigen::PartialPivLU<CMatrix> lu(w);
    if (!(lu.rcond() > 1e-14)) throw NumericalError("projection_back: singular demixing matrix at bin " + std::to_string(i));
    const CMatrix a = lu.inverse();
    for (Index n = 0; n < w.rows(); ++n) {
      const Complex c = a(0, n);
      w.row(n) *= c;
      if (n < s.variances.num_sources()) {
        const double g = std::max(std::norm(c), kMinVariance);
        s.variances.sources[static_cast<size_t>(n)].row(i) *= g;
      }
    }
  }
  s.separated = apply_demixing(x, s.demixing);
  return s;
}

inline MixingEstimate mixing_estimate(const DemixingState &s) {
  MixingEstimate out;
  out.target = s.target;
  out.mixing.reserve(s.demixing.size());
  for (Index i = 0; i < s.bins(); ++i) {
    const CMatrix &w = s.demixing[static_cast<size_t>(i)];
    Eigen::JacobiSVD<CMatrix> svd(w);
    const auto &sv = svd.singularValues();
    const double cond = sv(0) / sv(sv.size() - 1);
    if (!(cond <= 1e12)) throw NumericalError("mixing_estimate: ill-conditioned demixing matrix at bin " + std::to_string(i));
    out.mixing.push_back(w.inverse());
  }
  return out;
}

/// Picks the output most correlated (power-spectrogram Pearson correlation)
/// with a reference target spectrogram.
inline Index select_target_oracle(const Spectrogram &y, const Spectrogram &reference) {
  if (y.channels() < 2) throw ConfigError("select_target: at least two sources required");
  const RMatrix ref = power(reference);
  const double ref_mean = ref.mean();
  const RMatrix ref_c = ref.array() - ref_mean;
  Index best = -1;
  double best_score = 0.0;
  for (Index n = 0; n < y.channels(); ++n) {
    const RMatrix p = power(y, n);
    const RMatrix pc = p.array() - p.mean();
    const double den = std::sqrt(pc.squaredNorm() * ref_c.squaredNorm());
    const double score = den > 0.0 ? pc.cwiseProduct(ref_c).sum() / den : 0.0;
    if (score > best_score) {
      best_score = score;
      best = n;
    }
  }
  if (best < 0) throw NumericalError("no speech detected");
  return best;
}

/// Picks the output whose energy survives the denoiser best:
/// argmax_n |DNN(Y_n)|^2 / |Y_n|^2.
inline Index select_target_adapter(const Spectrogram &y, const Denoiser &dnn) {
  if (y.channels() < 2) throw ConfigError("select_target: at least two sources required");
  Index best = -1;
  double best_score = 0.0;
  for (Index n = 0; n < y.channels(); ++n) {
    const Spectrogram yn = y.channel(n);
    const double e = yn.energy();
    const double score = e > 0.0 ? denoise(dnn, yn).energy() / e : 0.0;
    if (score > best_score) {
      best_score = score;
      best = n;
    }
  }
  if (best < 0) throw NumericalError("no speech detected");
  return best;
}

// ---------------------------------------------------------------------------
// Drivers

struct IlrmaOptions {
  int iterations = 50;
  Index nmf_bases = 10;
  std::uint64_t seed = 0;
  // NMF model offset, relative to the mean observed power
  double variance_offset = 1e-6;
};

struct IdlmaOptions {
  int iterations = 90;
  int refresh_interval = 30;
  double epsilon_scale = 0.1;
  Index target = 0;
};

struct RankOneResult {
  DemixingState state;
  std::vector<double> cost_trace;  // cost after each sweep
};

/// ILRMA: alternating IS-NMF variance updates and IP demixing updates. The
/// returned state is projected back onto channel 0; its target index is left
/// at 0 and must be chosen by the caller.
inline RankOneResult run_ilrma(const Spectrogram &x, const IlrmaOptions &opt) {
  std::mt19937_64 rng(opt.seed);
  const Index n_src = x.channels();
  RankOneResult res;
  res.state = init_demixing(x);
  std::vector<NmfModel> nmf;
  if (!(opt.variance_offset >= 0.0)) throw ConfigError("ilrma: variance offset must be nonnegative");
  const double offset = std::max(opt.variance_offset * x.energy() / static_cast<double>(x.data().size()), kMinVariance);
  for (Index n = 0; n < n_src; ++n) {
    nmf.push_back(init_nmf(x.bins(), x.frames(), opt.nmf_bases, rng));
    nmf.back().offset = offset;
  }
  res.state.variances.sources.resize(static_cast<size_t>(n_src));
  res.state.variances.floors.assign(static_cast<size_t>(n_src), offset);

  for (int it = 0; it < opt.iterations; ++it) {
    for (Index n = 0; n < n_src; ++n) {
      auto &model = nmf[static_cast<size_t>(n)];
      model = nmf_update(power(res.state.separated, n), model, 1);
      res.state.variances.sources[static_cast<size_t>(n)] = model.model();
    }
    res.state = ip_update(x, std::move(res.state));
    res.cost_trace.push_back(cost(x, res.state));
  }
  res.state = projection_back(std::move(res.state), x);
  return res;
}

/// IDLMA: IP updates with variances from the denoiser, refreshed every
/// `refresh_interval` sweeps after projecting back to calibrated scale.
inline RankOneResult run_idlma(const Spectrogram &x, const Denoiser &dnn, const IdlmaOptions &opt) {
  if (opt.refresh_interval < 1) throw ConfigError("idlma: refresh interval must be positive");
  RankOneResult res;
  res.state = init_demixing(x);
  res.state.target = opt.target;
  for (int it = 0; it < opt.iterations; ++it) {
    if (it % opt.refresh_interval == 0) {
      if (it > 0) res.state = projection_back(std::move(res.state), x);
      res.state.variances = idlma_variances(res.state.separated, opt.target, dnn, opt.epsilon_scale).variances;
    }
    res.state = ip_update(x, std::move(res.state));
    res.cost_trace.push_back(cost(x, res.state));
  }
  res.state = projection_back(std::move(res.state), x);
  return res;
}

/// Target image on the reference channel, a_{0,nt} y_nt after projection back.
inline Spectrogram rank_one_target(const DemixingState &s) { return s.separated.channel(s.target); }

}  // namespace rcscme

#endif  // RCSCME_DEMIX_HPP_

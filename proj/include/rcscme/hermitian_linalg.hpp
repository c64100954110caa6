// include/rcscme/hermitian_linalg.hpp

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

#ifndef RCSCME_HERMITIAN_LINALG_HPP_
#define RCSCME_HERMITIAN_LINALG_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Dense>

#include "rcscme/error.hpp"
#include "rcscme/types.hpp"

namespace rcscme {

/// Relative eigenvalue threshold below which an eigenvalue counts as zero.
inline constexpr double kRankTol = 1e-10;

struct HermitianEig {
  RVector values;   // ascending
  CMatrix vectors;  // unitary, columns match `values`
};

inline bool is_hermitian(const CMatrix &a, double tol = 1e-12) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline HermitianEig eig_hermitian(const CMatrix &a) {
  if (!is_hermitian(a)) throw NumericalError("eig_hermitian: matrix is not Hermitian");
  // Symmetrise so round-off in the strictly lower part does not leak in.
  const CMatrix h = 0.5 * (a + a.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
  if (es.info() != Eigen::Success) throw NumericalError("eig_hermitian: eigensolver did not converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

namespace detail {

// Rotate so the entry of largest magnitude is real and positive.
inline CVector fix_phase(CVector v) {
  Index k = 0;
  v.cwiseAbs().maxCoeff(&k);
  if (std::abs(v(k)) > 0.0) v *= std::conj(v(k)) / std::abs(v(k));
  return v;
}

}  // namespace detail

/// Unit eigenvector of the smallest eigenvalue of a PSD matrix whose
/// numerical rank is M-1. Fails when two or more eigenvalues vanish since the
/// null direction is then not unique.
inline CVector null_vector(const CMatrix &a, double rtol = kRankTol) {
  const auto eig = eig_hermitian(a);
  const Index m = a.rows();
  const double top = eig.values(m - 1);
  if (m < 2 || top <= 0.0 || eig.values(1) <= rtol * top)
    throw NumericalError("rank deficiency exceeds one");
  return detail::fix_phase(eig.vectors.col(0));
}

/// Null-space vector u of `a` normalised so that u^H v = 1.
inline CVector dual_vector(const CMatrix &a, const CVector &v) {
  const double vv = v.squaredNorm();
  if (!(vv > 0.0)) throw NumericalError("dual_vector: v must be nonzero");
  const CVector e0 = null_vector(a);
  const Complex proj = e0.dot(v);  // e0^H v
  if (std::abs(proj) <= 1e-12 * std::sqrt(vv))
    throw NumericalError("dual_vector: v lies in the column space of the matrix");
  return e0 / std::conj(proj);
}

/// Moore-Penrose inverse of a PSD matrix; eigenvalues below rtol * max are
/// treated as zero.
inline CMatrix pinv_psd(const CMatrix &a, double rtol = kRankTol) {
  const Index m = a.rows();
  if (m == 0 || a.cwiseAbs().maxCoeff() == 0.0) return CMatrix::Zero(m, m);
  const auto eig = eig_hermitian(a);
  const double cut = rtol * eig.values.cwiseAbs().maxCoeff();
  RVector inv = RVector::Zero(m);
  for (Index k = 0; k < m; ++k)
    if (eig.values(k) > cut) inv(k) = 1.0 / eig.values(k);
  return eig.vectors * inv.asDiagonal() * eig.vectors.adjoint();
}

/// Full-rank matrix base + lambda v v^H built from a rank-(M-1) PSD base.
/// u spans the null space of base and satisfies u^H v = 1.
struct RankOneCompletion {
  CMatrix base;
  CVector v;
  CVector u;
  double lambda = 1.0;

  CMatrix dense() const { return base + lambda * v * v.adjoint(); }
};

/// Builds a completion with the unit null eigenvector as v (so u == v).
inline RankOneCompletion make_completion(const CMatrix &base, double lambda) {
  RankOneCompletion c;
  c.base = base;
  c.v = null_vector(base);
  c.u = dual_vector(base, c.v);
  c.lambda = lambda;
  return c;
}

/// log det(base + v v^H). det(base + lambda v v^H) is linear in lambda and
/// vanishes at zero, so log det(base + lambda v v^H) = log lambda + this.
inline double completion_log_offset(const CMatrix &base, const CVector &v) {
  const CMatrix r = base + v * v.adjoint();
  Eigen::LLT<CMatrix> llt(0.5 * (r + r.adjoint()));
  if (llt.info() != Eigen::Success)
    throw NumericalError("completion_log_offset: completed matrix is not positive definite");
  double acc = 0.0;
  for (Index k = 0; k < r.rows(); ++k) acc += std::log(llt.matrixL()(k, k).real());
  return 2.0 * acc;
}

inline double completed_logdet(const RankOneCompletion &c) {
  if (!(c.lambda > 0.0)) throw NumericalError("completed_logdet: lambda must be positive");
  return std::log(c.lambda) + completion_log_offset(c.base, c.v);
}

/// (E - u v^H) base^+ (E - v u^H) + u u^H / lambda, given base^+.
inline CMatrix completed_inverse_from_pinv(const CMatrix &base_pinv, const CVector &u, const CVector &v,
                                           double lambda) {
  if (!(lambda > 0.0)) throw NumericalError("completed_inverse: lambda must be positive");
  const Index m = base_pinv.rows();
  const CMatrix left = CMatrix::Identity(m, m) - u * v.adjoint();
  return left * base_pinv * left.adjoint() + (1.0 / lambda) * u * u.adjoint();
}

inline CMatrix completed_inverse(const RankOneCompletion &c) {
  return completed_inverse_from_pinv(pinv_psd(c.base), c.u, c.v, c.lambda);
}

}  // namespace rcscme

#endif  // RCSCME_HERMITIAN_LINALG_HPP_

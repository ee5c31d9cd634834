#pragma once

// Principal angles between column spaces.
//
// Cosines come from the singular values of Qa^T Qb; for angles below pi/4 the
// sines of (I - Qa Qa^T) Qb are used instead, since arccos loses half the
// significant digits near zero.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mtdgrid/error.hpp"

namespace mtdgrid {

/// Orthonormal basis of the column space; throws if `a` lacks full column rank.
inline Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& a) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < a.cols())
    throw RankDeficientError("matrix has rank " + std::to_string(qr.rank()) + " < " +
                             std::to_string(a.cols()) + " columns");
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  return q;
}

/// All principal angles between col(a) and col(b), ascending, in [0, pi/2].
/// Returns min(cols(a), cols(b)) angles.
inline Eigen::VectorXd principal_angles(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw PreconditionError("principal_angles: row counts differ");
  Eigen::MatrixXd qa = orthonormal_basis(a);
  Eigen::MatrixXd qb = orthonormal_basis(b);
  if (qa.cols() < qb.cols()) std::swap(qa, qb);  // qb spans the smaller space
  const Eigen::Index k = qb.cols();

  Eigen::JacobiSVD<Eigen::MatrixXd> cos_svd(qa.transpose() * qb);
  const Eigen::VectorXd cosines = cos_svd.singularValues();  // descending
  const Eigen::MatrixXd residual = qb - qa * (qa.transpose() * qb);
  Eigen::JacobiSVD<Eigen::MatrixXd> sin_svd(residual);
  Eigen::VectorXd sines = sin_svd.singularValues();  // descending
  std::sort(sines.data(), sines.data() + sines.size());  // ascending

  Eigen::VectorXd angles(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double c = std::clamp(cosines[i], 0.0, 1.0);
    if (c * c < 0.5)
      angles[i] = std::acos(c);
    else
      angles[i] = std::asin(std::clamp(i < sines.size() ? sines[i] : 0.0, 0.0, 1.0));
  }
  return angles;
}

/// Smallest principal angle between the column spaces of h and h2.
inline double spa(const Eigen::MatrixXd& h, const Eigen::MatrixXd& h2) {
  const Eigen::VectorXd angles = principal_angles(h, h2);
  return angles.size() == 0 ? 0.0 : angles.minCoeff();
}

/// Largest principal angle (the convention of MATLAB's `subspace`).
inline double largest_principal_angle(const Eigen::MatrixXd& h, const Eigen::MatrixXd& h2) {
  const Eigen::VectorXd angles = principal_angles(h, h2);
  return angles.size() == 0 ? 0.0 : angles.maxCoeff();
}

}  // namespace mtdgrid

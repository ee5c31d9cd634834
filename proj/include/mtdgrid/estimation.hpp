#pragma once

// DC measurements, weighted least squares state estimation and the
// residual-based bad data detector.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mtdgrid/error.hpp"
#include "mtdgrid/grid.hpp"
#include "mtdgrid/opf.hpp"
#include "mtdgrid/random.hpp"

namespace mtdgrid {

/// Zero-mean Gaussian sensor noise. `per_sensor`, when non-empty, overrides
/// the scalar sigma.
struct NoiseModel {
  double sigma = 0.02;
  Eigen::VectorXd per_sensor;

  double sigma_at(Eigen::Index i) const { return per_sensor.size() ? per_sensor[i] : sigma; }

  Eigen::VectorXd sigmas(Eigen::Index m) const {
    if (per_sensor.size()) {
      if (per_sensor.size() != m) throw PreconditionError("noise model length differs from M");
      return per_sensor;
    }
    return Eigen::VectorXd::Constant(m, sigma);
  }

  void validate() const {
    if (!(sigma > 0.0)) throw PreconditionError("noise sigma must be positive");
    for (Eigen::Index i = 0; i < per_sensor.size(); ++i)
      if (!(per_sensor[i] > 0.0)) throw PreconditionError("noise sigma must be positive");
  }
};

/// W = diag(sigma^-2).
inline Eigen::VectorXd weights_from_noise(const NoiseModel& noise, Eigen::Index m) {
  return noise.sigmas(m).array().square().inverse().matrix();
}

/// z = H theta + e.
inline Eigen::VectorXd measure(const Eigen::MatrixXd& h, const Eigen::VectorXd& theta,
                               const NoiseModel& noise, Rng& rng) {
  if (h.cols() != theta.size()) throw PreconditionError("measure: state length differs from H");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z = h * theta;
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += noise.sigma_at(i) * normal(rng);
  return z;
}

struct OperatingPoint {
  std::vector<double> loads_mw;
  Eigen::VectorXd dispatch_mw;
  Eigen::VectorXd theta;  // non-slack angles, length N-1
};

/// DC-OPF dispatch and angles at fixed loads. Returns false if infeasible.
inline bool operating_point(const GridTopology& grid, const std::vector<double>& loads_mw,
                            const Eigen::VectorXd& reactances, OperatingPoint& op) {
  OpfSolution sol = dc_opf(grid, loads_mw, reactances);
  if (!sol.feasible) return false;
  op.loads_mw = loads_mw;
  op.dispatch_mw = std::move(sol.dispatch_mw);
  op.theta.resize(grid.state_count());
  for (int r = 0; r < grid.state_count(); ++r) op.theta[r] = sol.angles[grid.state_bus(r)];
  return true;
}

/// Loads drawn independently per bus from U(lo, hi) x base, dispatched by
/// DC-OPF. Infeasible draws are resampled up to `max_retries` times.
inline OperatingPoint sample_operating_point(const GridTopology& grid,
                                             const Eigen::VectorXd& reactances, double scale_lo,
                                             double scale_hi, Rng& rng, int max_retries = 20) {
  if (!(scale_lo > 0.0) || scale_hi < scale_lo)
    throw PreconditionError("load scale range must satisfy 0 < lo <= hi");
  std::uniform_real_distribution<double> scale(scale_lo, scale_hi);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::vector<double> loads = grid.base_loads_mw();
    if (scale_hi > scale_lo)
      for (double& p : loads) p *= scale(rng);
    else
      for (double& p : loads) p *= scale_lo;
    OperatingPoint op;
    if (operating_point(grid, loads, reactances, op)) return op;
  }
  throw InfeasibleError("no feasible operating point after " + std::to_string(max_retries + 1) +
                        " load draws");
}

/// Throws unless W^{1/2} H has full column rank. Checked on the weighted
/// Jacobian rather than the gain, whose Cholesky can succeed on round-off.
inline void require_observable(const Eigen::MatrixXd& h, const Eigen::VectorXd& w) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(w.cwiseSqrt().asDiagonal() * h);
  if (qr.rank() < h.cols())
    throw RankDeficientError("gain matrix H^T W H has rank " + std::to_string(qr.rank()) + " < " +
                             std::to_string(h.cols()));
}

/// theta_hat = (H^T W H)^{-1} H^T W z via Cholesky. `w` holds the diagonal of W.
inline Eigen::VectorXd wls_estimate(const Eigen::MatrixXd& h, const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& z) {
  if (h.rows() != z.size() || w.size() != z.size())
    throw PreconditionError("wls_estimate: dimensions disagree");
  require_observable(h, w);
  const Eigen::MatrixXd hw = h.transpose() * w.asDiagonal();
  return Eigen::LLT<Eigen::MatrixXd>(hw * h).solve(hw * z);
}

inline double residual(const Eigen::VectorXd& z, const Eigen::MatrixXd& h,
                       const Eigen::VectorXd& theta_hat) {
  if (h.rows() != z.size() || h.cols() != theta_hat.size())
    throw PreconditionError("residual: dimensions disagree");
  return (z - h * theta_hat).norm();
}

/// Alarm iff r >= tau.
inline bool bdd_detect(double r, double tau) { return r >= tau; }

/// Empirical (1 - alpha) quantile of a sample (inverse-CDF definition).
inline double upper_quantile(std::vector<double> values, double alpha) {
  if (values.empty()) throw PreconditionError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::ceil((1.0 - alpha) * static_cast<double>(values.size()));
  const auto idx = static_cast<std::size_t>(std::clamp(pos, 1.0, double(values.size()))) - 1;
  return values[idx];
}

/// WLS estimator bound to one Jacobian. Caches the factorisation and the
/// residual projector I - H (H^T W H)^{-1} H^T W so residuals are one
/// matrix-vector product.
class Estimator {
 public:
  Estimator(Eigen::MatrixXd h, const NoiseModel& noise) : h_(std::move(h)), noise_(noise) {
    noise_.validate();
    w_ = weights_from_noise(noise_, h_.rows());
    require_observable(h_, w_);
    const Eigen::MatrixXd hw = h_.transpose() * w_.asDiagonal();
    gain_inv_hw_ = Eigen::LLT<Eigen::MatrixXd>(hw * h_).solve(hw);
    projector_ = Eigen::MatrixXd::Identity(h_.rows(), h_.rows()) - h_ * gain_inv_hw_;
  }

  const Eigen::MatrixXd& h() const noexcept { return h_; }
  const Eigen::VectorXd& weights() const noexcept { return w_; }
  const NoiseModel& noise() const noexcept { return noise_; }
  double threshold() const noexcept { return tau_; }
  void set_threshold(double tau) {
    if (!(tau >= 0.0)) throw PreconditionError("BDD threshold must be nonnegative");
    tau_ = tau;
  }

  Eigen::VectorXd estimate(const Eigen::VectorXd& z) const { return gain_inv_hw_ * z; }
  double residual(const Eigen::VectorXd& z) const { return (projector_ * z).norm(); }
  bool detect(const Eigen::VectorXd& z) const { return bdd_detect(residual(z), tau_); }

  /// Residuals of the rows of `zs` (one measurement per row).
  Eigen::VectorXd residuals(const Eigen::MatrixXd& zs) const {
    return (zs * projector_.transpose()).rowwise().norm();
  }

  /// Sets tau to the (1 - alpha) quantile of clean residuals. The residual
  /// does not depend on theta, so noise-only measurements suffice.
  double calibrate(double alpha_fpr, int n_samples, Rng& rng) {
    if (!(alpha_fpr > 0.0 && alpha_fpr < 1.0)) throw PreconditionError("alpha_fpr must be in (0,1)");
    if (n_samples < 1000) throw PreconditionError("calibration needs at least 1000 samples");
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(h_.cols());
    std::vector<double> r(n_samples);
    for (int i = 0; i < n_samples; ++i) r[i] = residual(measure(h_, zero, noise_, rng));
    tau_ = upper_quantile(std::move(r), alpha_fpr);
    return tau_;
  }

 private:
  Eigen::MatrixXd h_;
  NoiseModel noise_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd gain_inv_hw_;
  Eigen::MatrixXd projector_;
  double tau_ = 0.0;
};

/// Free-function form: tau for (H, noise, alpha).
inline double calibrate_threshold(const Eigen::MatrixXd& h, const NoiseModel& noise,
                                  double alpha_fpr, int n_samples, Rng& rng) {
  Estimator est(h, noise);
  return est.calibrate(alpha_fpr, n_samples, rng);
}

}  // namespace mtdgrid

#pragma once

// Dense strictly convex quadratic programming by the Goldfarb-Idnani dual
// active-set method:
//
//   minimize    0.5 x^T G x + g^T x
//   subject to  CE^T x + ce = 0
//               CI^T x + ci >= 0
//
// G must be symmetric positive definite. Constraint normals are the columns
// of CE / CI. The dual method starts from the unconstrained minimum and adds
// violated constraints one at a time, so no feasible starting point is needed
// and infeasibility is detected when no dual step exists.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mtdgrid/error.hpp"

namespace mtdgrid {

enum class QpStatus { kOptimal, kInfeasible };

struct QpResult {
  QpStatus status = QpStatus::kInfeasible;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<int> active_inequalities;
};

namespace qp_detail {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();

// Append the constraint whose transformed normal is d = J^T n to the
// factorisation, rotating J so that d has zeros below position iq.
inline bool add_constraint(Eigen::MatrixXd& r, Eigen::MatrixXd& j, Eigen::VectorXd& d, int& iq,
                           double& r_norm) {
  const int n = static_cast<int>(d.size());
  for (int col = n - 1; col >= iq + 1; --col) {
    double cc = d[col - 1];
    double ss = d[col];
    const double h = std::hypot(cc, ss);
    if (std::abs(h) < kEps) continue;
    d[col] = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d[col - 1] = -h;
    } else {
      d[col - 1] = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
      const double t1 = j(k, col - 1);
      const double t2 = j(k, col);
      j(k, col - 1) = t1 * cc + t2 * ss;
      j(k, col) = xny * (t1 + j(k, col - 1)) - t2;
    }
  }
  ++iq;
  for (int i = 0; i < iq; ++i) r(i, iq - 1) = d[i];
  if (std::abs(d[iq - 1]) <= kEps * r_norm) return false;  // linearly dependent
  r_norm = std::max(r_norm, std::abs(d[iq - 1]));
  return true;
}

inline void delete_constraint(Eigen::MatrixXd& r, Eigen::MatrixXd& j, std::vector<int>& active,
                              Eigen::VectorXd& u, int n_eq, int& iq, int constraint) {
  const int n = static_cast<int>(j.rows());
  int qq = -1;
  for (int i = n_eq; i < iq; ++i)
    if (active[i] == constraint) {
      qq = i;
      break;
    }
  if (qq < 0) return;
  for (int i = qq; i < iq - 1; ++i) {
    active[i] = active[i + 1];
    u[i] = u[i + 1];
    r.col(i) = r.col(i + 1);
  }
  active[iq - 1] = active[iq];
  u[iq - 1] = u[iq];
  active[iq] = 0;
  u[iq] = 0.0;
  for (int k = 0; k < iq; ++k) r(k, iq - 1) = 0.0;
  --iq;
  if (iq == 0) return;

  for (int col = qq; col < iq; ++col) {
    double cc = r(col, col);
    double ss = r(col + 1, col);
    const double h = std::hypot(cc, ss);
    if (std::abs(h) < kEps) continue;
    cc /= h;
    ss /= h;
    r(col + 1, col) = 0.0;
    if (cc < 0.0) {
      r(col, col) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      r(col, col) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = col + 1; k < iq; ++k) {
      const double t1 = r(col, k);
      const double t2 = r(col + 1, k);
      r(col, k) = t1 * cc + t2 * ss;
      r(col + 1, k) = xny * (t1 + r(col, k)) - t2;
    }
    for (int k = 0; k < n; ++k) {
      const double t1 = j(k, col);
      const double t2 = j(k, col + 1);
      j(k, col) = t1 * cc + t2 * ss;
      j(k, col + 1) = xny * (j(k, col) + t1) - t2;
    }
  }
}

}  // namespace qp_detail

inline QpResult solve_qp(const Eigen::MatrixXd& g, const Eigen::VectorXd& g0,
                         const Eigen::MatrixXd& ce, const Eigen::VectorXd& ce0,
                         const Eigen::MatrixXd& ci, const Eigen::VectorXd& ci0) {
  using qp_detail::kEps;
  const int n = static_cast<int>(g.rows());
  const int p = static_cast<int>(ce.cols());
  const int m = static_cast<int>(ci.cols());
  const double inf = std::numeric_limits<double>::infinity();
  if (g.cols() != n || g0.size() != n || (p > 0 && ce.rows() != n) || ce0.size() != p ||
      (m > 0 && ci.rows() != n) || ci0.size() != m)
    throw PreconditionError("solve_qp: inconsistent dimensions");

  QpResult result;
  if (n == 0) {
    result.x = Eigen::VectorXd();
    for (int i = 0; i < p; ++i)
      if (std::abs(ce0[i]) > 1e-9) return result;
    for (int i = 0; i < m; ++i)
      if (ci0[i] < -1e-9) return result;
    result.status = QpStatus::kOptimal;
    result.objective = 0.0;
    return result;
  }

  Eigen::LLT<Eigen::MatrixXd> chol(g);
  if (chol.info() != Eigen::Success) throw RankDeficientError("solve_qp: G is not positive definite");
  const double c1 = g.trace();
  Eigen::MatrixXd j = chol.matrixU().solve(Eigen::MatrixXd::Identity(n, n));  // L^{-T}
  const double c2 = j.trace();
  double r_norm = 1.0;

  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd x = chol.solve(-g0);
  double f = 0.5 * g0.dot(x);

  const int cap = m + p + 1;
  std::vector<int> active(cap, 0), active_old(cap, 0);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(cap), u_old = Eigen::VectorXd::Zero(cap);
  Eigen::VectorXd d(n), z(n), rvec = Eigen::VectorXd::Zero(cap), s(m), x_old(n);
  int iq = 0;

  auto step_direction = [&](const Eigen::VectorXd& np) {
    d.noalias() = j.transpose() * np;
    z.noalias() = j.rightCols(n - iq) * d.tail(n - iq);
    if (iq > 0)
      rvec.head(iq) = r.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(d.head(iq));
  };

  for (int i = 0; i < p; ++i) {
    const Eigen::VectorXd np = ce.col(i);
    step_direction(np);
    double t2 = 0.0;
    if (z.squaredNorm() > kEps) t2 = (-np.dot(x) - ce0[i]) / z.dot(np);
    x += t2 * z;
    u[iq] = t2;
    u.head(iq) -= t2 * rvec.head(iq);
    f += 0.5 * t2 * t2 * z.dot(np);
    active[i] = -i - 1;
    if (!qp_detail::add_constraint(r, j, d, iq, r_norm))
      throw RankDeficientError("solve_qp: equality constraints are linearly dependent");
  }

  std::vector<int> iai(m);
  std::vector<bool> allowed(m, true);
  for (int i = 0; i < m; ++i) iai[i] = i;

  int ip = 0;
  double ss = 0.0;
  Eigen::VectorXd np(n);
  const int max_iter = 50 * (m + p + n) + 100;
  int iter = 0;

  while (true) {
    // Step 1: evaluate constraints at the current primal point.
    if (++iter > max_iter) throw Error("solve_qp: iteration limit reached");
    for (int i = p; i < iq; ++i) iai[active[i]] = -1;
    double psi = 0.0;
    ss = 0.0;
    for (int i = 0; i < m; ++i) {
      allowed[i] = true;
      s[i] = ci.col(i).dot(x) + ci0[i];
      psi += std::min(0.0, s[i]);
    }
    if (std::abs(psi) <= m * kEps * c1 * c2 * 100.0) break;
    for (int i = 0; i < iq; ++i) {
      u_old[i] = u[i];
      active_old[i] = active[i];
    }
    x_old = x;

  choose_violated:
    // Step 2: pick the most violated admissible constraint.
    ss = 0.0;
    for (int i = 0; i < m; ++i)
      if (s[i] < ss && iai[i] != -1 && allowed[i]) {
        ss = s[i];
        ip = i;
      }
    if (ss >= 0.0) break;
    np = ci.col(ip);
    u[iq] = 0.0;
    active[iq] = ip;

    while (true) {
      step_direction(np);
      // Partial step: largest dual step keeping multipliers nonnegative.
      int l = 0;
      double t1 = inf;
      for (int k = p; k < iq; ++k)
        if (rvec[k] > 0.0 && u[k] / rvec[k] < t1) {
          t1 = u[k] / rvec[k];
          l = active[k];
        }
      // Full step: makes constraint ip active.
      double t2 = inf;
      if (z.squaredNorm() > kEps) {
        t2 = -s[ip] / z.dot(np);
        if (t2 < 0.0) t2 = inf;
      }
      const double t = std::min(t1, t2);
      if (t >= inf) {
        result.status = QpStatus::kInfeasible;
        result.x = x;
        return result;
      }
      if (t2 >= inf) {
        u.head(iq) -= t * rvec.head(iq);
        u[iq] += t;
        iai[l] = l;
        qp_detail::delete_constraint(r, j, active, u, p, iq, l);
        continue;
      }
      x += t * z;
      f += t * z.dot(np) * (0.5 * t + u[iq]);
      u.head(iq) -= t * rvec.head(iq);
      u[iq] += t;

      if (std::abs(t - t2) < kEps) {
        if (!qp_detail::add_constraint(r, j, d, iq, r_norm)) {
          allowed[ip] = false;
          qp_detail::delete_constraint(r, j, active, u, p, iq, ip);
          for (int i = 0; i < m; ++i) iai[i] = i;
          for (int i = p; i < iq; ++i) {
            active[i] = active_old[i];
            u[i] = u_old[i];
            iai[active[i]] = -1;
          }
          x = x_old;
          goto choose_violated;
        }
        iai[ip] = -1;
        break;  // back to step 1
      }
      iai[l] = l;
      qp_detail::delete_constraint(r, j, active, u, p, iq, l);
      s[ip] = ci.col(ip).dot(x) + ci0[ip];
    }
  }

  result.x = x;
  for (int i = 0; i < m; ++i)
    if (ci.col(i).dot(x) + ci0[i] < -1e-7 * (1.0 + std::abs(ci0[i]))) return result;
  result.status = QpStatus::kOptimal;
  result.objective = f;
  for (int i = p; i < iq; ++i) result.active_inequalities.push_back(active[i]);
  return result;
}

/// Convenience overload for problems with inequality constraints only.
inline QpResult solve_qp(const Eigen::MatrixXd& g, const Eigen::VectorXd& g0,
                         const Eigen::MatrixXd& ci, const Eigen::VectorXd& ci0) {
  const auto n = g.rows();
  return solve_qp(g, g0, Eigen::MatrixXd(n, 0), Eigen::VectorXd(0), ci, ci0);
}

}  // namespace mtdgrid

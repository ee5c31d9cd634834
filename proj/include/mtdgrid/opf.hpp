#pragma once

// DC optimal power flow: least quadratic generation cost subject to power
// balance, branch flow limits and generator bounds.
//
// The balance equality is eliminated by expressing the last generator's
// output as total load minus the others, leaving a strictly convex QP in the
// remaining dispatch variables that solve_qp handles with inequality rows
// only. Branch flows are linear in the injections through the PTDF matrix
// D A^T (A D A^T)^{-1}.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mtdgrid/grid.hpp"
#include "mtdgrid/qp.hpp"

namespace mtdgrid {

struct OpfSolution {
  bool feasible = false;
  std::string message;
  Eigen::VectorXd dispatch_mw;  // one entry per generator
  Eigen::VectorXd angles;       // per bus, radians, slack = 0
  Eigen::VectorXd flows_mw;     // per branch, from -> to
  double cost = 0.0;            // $/h
};

/// Power transfer distribution factors, L x (N-1): flow (pu) per unit of
/// injection at each non-slack bus, withdrawn at the slack.
inline Eigen::MatrixXd ptdf(const GridTopology& grid, const Eigen::VectorXd& reactances) {
  const Eigen::MatrixXd a = incidence_matrix(grid);
  const Eigen::MatrixXd flow = reactances.cwiseInverse().asDiagonal() * a.transpose();
  const Eigen::MatrixXd b = a * flow;
  Eigen::LLT<Eigen::MatrixXd> llt(b);
  if (llt.info() != Eigen::Success) throw RankDeficientError("susceptance matrix is singular");
  // flow * B^{-1} = (B^{-1} flow^T)^T since B is symmetric.
  return llt.solve(flow.transpose()).transpose();
}

inline double generation_cost(const GridTopology& grid, const Eigen::VectorXd& dispatch_mw) {
  double c = 0.0;
  for (std::size_t k = 0; k < grid.generators().size(); ++k) {
    const Generator& g = grid.generators()[k];
    c += g.cost_c2 * dispatch_mw[k] * dispatch_mw[k] + g.cost_c1 * dispatch_mw[k];
  }
  return c;
}

inline OpfSolution dc_opf(const GridTopology& grid, const std::vector<double>& loads_mw,
                          const Eigen::VectorXd& reactances) {
  const int n_bus = grid.bus_count();
  const int n_br = grid.branch_count();
  const int n_gen = static_cast<int>(grid.generators().size());
  if (static_cast<int>(loads_mw.size()) != n_bus)
    throw PreconditionError("dc_opf: load vector length differs from bus count");

  OpfSolution sol;
  if (n_gen == 0) {
    sol.message = "no generators";
    return sol;
  }
  const auto& gens = grid.generators();
  double total_load = 0.0;
  for (double p : loads_mw) total_load += p;
  double capacity = 0.0, floor = 0.0;
  for (const Generator& g : gens) {
    capacity += g.pmax_mw;
    floor += g.pmin_mw;
  }
  if (capacity < total_load || floor > total_load) {
    sol.message = "generation bounds cannot meet total load";
    return sol;
  }

  const Eigen::MatrixXd shift = ptdf(grid, reactances);  // L x (N-1)
  // Flow contribution of each generator (MW per MW) and of the loads.
  Eigen::MatrixXd gen_shift = Eigen::MatrixXd::Zero(n_br, n_gen);
  for (int k = 0; k < n_gen; ++k)
    if (int r = grid.state_index(gens[k].bus); r >= 0) gen_shift.col(k) = shift.col(r);
  Eigen::VectorXd load_flow = Eigen::VectorXd::Zero(n_br);
  for (int b = 0; b < n_bus; ++b)
    if (int r = grid.state_index(b); r >= 0) load_flow -= shift.col(r) * loads_mw[b];

  // Reduced variables y = dispatch[0..n_gen-2]; dispatch[last] = T - 1^T y.
  const int nv = n_gen - 1;
  const Generator& last = gens.back();
  Eigen::MatrixXd hess = Eigen::MatrixXd::Constant(nv, nv, 2.0 * last.cost_c2);
  Eigen::VectorXd lin(nv);
  for (int k = 0; k < nv; ++k) {
    hess(k, k) += 2.0 * gens[k].cost_c2;
    lin[k] = gens[k].cost_c1 - 2.0 * last.cost_c2 * total_load - last.cost_c1;
  }
  // Linear-cost generators make the Hessian singular; a tiny ridge keeps the
  // QP strictly convex without moving the optimum measurably.
  for (int k = 0; k < nv; ++k) hess(k, k) += 1e-9;

  // Rows: y_k >= pmin, y_k <= pmax, last bounds, flow <= limit, flow >= -limit.
  const int m = 2 * nv + 2 + 2 * n_br;
  Eigen::MatrixXd ci = Eigen::MatrixXd::Zero(nv, m);
  Eigen::VectorXd ci0(m);
  int row = 0;
  for (int k = 0; k < nv; ++k) {
    ci(k, row) = 1.0;
    ci0[row++] = -gens[k].pmin_mw;
    ci(k, row) = -1.0;
    ci0[row++] = gens[k].pmax_mw;
  }
  ci.col(row).setConstant(-1.0);
  ci0[row++] = total_load - last.pmin_mw;
  ci.col(row).setConstant(1.0);
  ci0[row++] = last.pmax_mw - total_load;

  // flow = gen_shift[:, <last] y + gen_shift[:, last] (T - 1^T y) + load_flow
  const Eigen::VectorXd flow_offset = gen_shift.col(n_gen - 1) * total_load + load_flow;
  for (int l = 0; l < n_br; ++l) {
    const double limit = grid.branches()[l].flow_limit_mw;
    Eigen::VectorXd coeff(nv);
    for (int k = 0; k < nv; ++k) coeff[k] = gen_shift(l, k) - gen_shift(l, n_gen - 1);
    ci.col(row) = -coeff;
    ci0[row++] = limit - flow_offset[l];
    ci.col(row) = coeff;
    ci0[row++] = limit + flow_offset[l];
  }

  const QpResult qp = solve_qp(hess, lin, ci, ci0);
  if (qp.status != QpStatus::kOptimal) {
    sol.message = "flow limits and generator bounds are unsatisfiable";
    return sol;
  }

  sol.dispatch_mw.resize(n_gen);
  sol.dispatch_mw.head(nv) = qp.x;
  sol.dispatch_mw[n_gen - 1] = total_load - qp.x.sum();
  sol.cost = generation_cost(grid, sol.dispatch_mw);

  Eigen::VectorXd inj_pu = Eigen::VectorXd::Zero(grid.state_count());
  for (int b = 0; b < n_bus; ++b)
    if (int r = grid.state_index(b); r >= 0) inj_pu[r] -= loads_mw[b] / kBaseMva;
  for (int k = 0; k < n_gen; ++k)
    if (int r = grid.state_index(gens[k].bus); r >= 0) inj_pu[r] += sol.dispatch_mw[k] / kBaseMva;
  sol.flows_mw = shift * inj_pu * kBaseMva;

  const Eigen::MatrixXd a = incidence_matrix(grid);
  const Eigen::MatrixXd b = a * reactances.cwiseInverse().asDiagonal() * a.transpose();
  const Eigen::VectorXd theta = b.llt().solve(inj_pu);
  sol.angles = Eigen::VectorXd::Zero(n_bus);
  for (int r = 0; r < grid.state_count(); ++r) sol.angles[grid.state_bus(r)] = theta[r];
  sol.feasible = true;
  return sol;
}

inline OpfSolution dc_opf(const GridTopology& grid, const std::vector<double>& loads_mw) {
  return dc_opf(grid, loads_mw, grid.reactances());
}

}  // namespace mtdgrid

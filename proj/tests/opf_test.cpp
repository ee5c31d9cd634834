#include <gtest/gtest.h>

#include "support.hpp"

using namespace mtdgrid;
using namespace testing_support;

namespace {

// Enumerates active sets of inequality constraints and keeps the best KKT
// point. Only usable for tiny problems.
double brute_force_qp(const Eigen::MatrixXd& g, const Eigen::VectorXd& g0, const Eigen::MatrixXd& ci,
                      const Eigen::VectorXd& ci0, Eigen::VectorXd* best_x) {
  const int n = static_cast<int>(g.rows()), m = static_cast<int>(ci.cols());
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < (1 << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask & (1 << i)) act.push_back(i);
    if (static_cast<int>(act.size()) > n) continue;
    const int k = static_cast<int>(act.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = g;
    rhs.head(n) = -g0;
    for (int j = 0; j < k; ++j) {
      kkt.block(0, n + j, n, 1) = -ci.col(act[j]);
      kkt.block(n + j, 0, 1, n) = ci.col(act[j]).transpose();
      rhs[n + j] = -ci0[act[j]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    if (((ci.transpose() * x + ci0).array() < -1e-9).any()) continue;
    if ((sol.tail(k).array() < -1e-9).any()) continue;
    const double f = 0.5 * x.dot(g * x) + g0.dot(x);
    if (f < best) {
      best = f;
      *best_x = x;
    }
  }
  return best;
}

}  // namespace

TEST(Qp, MatchesActiveSetEnumeration) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 3, m = 5;
    const Eigen::MatrixXd a = random_matrix(n, n, rng);
    const Eigen::MatrixXd g = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd g0 = random_matrix(n, 1, rng);
    const Eigen::MatrixXd ci = random_matrix(n, m, rng);
    const Eigen::VectorXd ci0 = random_matrix(m, 1, rng).array().abs() + 0.1;  // x = 0 feasible
    Eigen::VectorXd x_ref;
    const double f_ref = brute_force_qp(g, g0, ci, ci0, &x_ref);
    const QpResult r = solve_qp(g, g0, ci, ci0);
    ASSERT_EQ(r.status, QpStatus::kOptimal);
    EXPECT_NEAR(r.objective, f_ref, 1e-8 * (1 + std::abs(f_ref)));
    EXPECT_LT((r.x - x_ref).norm(), 1e-6);
  }
}

TEST(Qp, DetectsInfeasibility) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd g0 = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd ci(1, 2);
  ci << 1, -1;
  Eigen::VectorXd ci0(2);
  ci0 << -2, 1;  // x >= 2 and x <= 1
  EXPECT_EQ(solve_qp(g, g0, ci, ci0).status, QpStatus::kInfeasible);
}

TEST(Opf, SingleGeneratorServesAllLoad) {
  const GridTopology g = parse_case("[bus]\n1 0 slack\n2 30\n3 20\n[branch]\n1 2 0.1 100\n2 3 0.1 100\n[gen]\n1 0.01 10 0 100\n");
  const OpfSolution s = dc_opf(g, g.base_loads_mw());
  ASSERT_TRUE(s.feasible);
  EXPECT_NEAR(s.dispatch_mw[0], 50.0, 1e-9);
  EXPECT_NEAR(s.flows_mw[0], 50.0, 1e-7);
  EXPECT_NEAR(s.flows_mw[1], 20.0, 1e-7);
  EXPECT_NEAR(s.cost, 0.01 * 2500 + 10 * 50, 1e-7);
}

TEST(Opf, IdenticalGeneratorsSplitEvenly) {
  const GridTopology g = parse_case(
      "[bus]\n1 0 slack\n2 80\n3 0\n[branch]\n1 2 0.1 500\n2 3 0.1 500\n[gen]\n1 0.02 10 0 100\n3 0.02 10 0 100\n");
  const OpfSolution s = dc_opf(g, g.base_loads_mw());
  ASSERT_TRUE(s.feasible);
  EXPECT_NEAR(s.dispatch_mw[0], 40.0, 1e-5);
  EXPECT_NEAR(s.dispatch_mw[1], 40.0, 1e-5);
}

TEST(Opf, CongestionRaisesCost) {
  const std::string base = "[bus]\n1 0 slack\n2 80\n3 0\n[branch]\n1 2 0.1 LIM\n2 3 0.1 500\n[gen]\n1 0.001 10 0 100\n3 0.001 30 0 100\n";
  auto with = [&](const std::string& lim) {
    std::string s = base;
    s.replace(s.find("LIM"), 3, lim);
    return parse_case(s);
  };
  const OpfSolution free = dc_opf(with("500"), {0, 80, 0});
  const GridTopology tight = with("50");
  const OpfSolution congested = dc_opf(tight, {0, 80, 0});
  ASSERT_TRUE(free.feasible && congested.feasible);
  EXPECT_NEAR(congested.flows_mw[0], 50.0, 1e-6);
  EXPECT_GT(congested.cost, free.cost);
}

TEST(Opf, Ieee14BaseCaseBalances) {
  const GridTopology g = ieee14();
  const OpfSolution s = dc_opf(g, g.base_loads_mw());
  ASSERT_TRUE(s.feasible) << s.message;
  double load = 0.0;
  for (double p : g.base_loads_mw()) load += p;
  EXPECT_NEAR(s.dispatch_mw.sum(), load, 1e-6);
  for (int l = 0; l < g.branch_count(); ++l) EXPECT_LE(std::abs(s.flows_mw[l]), g.branches()[l].flow_limit_mw + 1e-6);
}

TEST(Opf, ReportsInfeasibleLoad) {
  const GridTopology g = parse_case(kThreeBus);
  EXPECT_FALSE(dc_opf(g, {0, 500, 500}).feasible);
}

TEST(Opf, PtdfReproducesFlows) {
  const GridTopology g = ieee14();
  const OpfSolution s = dc_opf(g, g.base_loads_mw());
  const Eigen::MatrixXd f = ptdf(g, g.reactances());
  Eigen::VectorXd inj = Eigen::VectorXd::Zero(g.state_count());
  for (int b = 0; b < g.bus_count(); ++b)
    if (int r = g.state_index(b); r >= 0) inj[r] -= g.base_loads_mw()[b];
  for (std::size_t k = 0; k < g.generators().size(); ++k)
    if (int r = g.state_index(g.generators()[k].bus); r >= 0) inj[r] += s.dispatch_mw[k];
  EXPECT_LT((f * inj - s.flows_mw).norm(), 1e-6);
}

#pragma once

// Reactance-perturbation moving target defense.
//
// The operator runs the grid at cost-optimal D-FACTS reactances x_op and
// moves to x' with effectiveness(H(x_op), H(x')) >= target at least cost.
// Effectiveness is a principal angle between the two column spaces; the
// smallest angle is identically zero whenever some measurement direction is
// untouched by every D-FACTS line (radial buses, lines outside the D-FACTS
// forest), so the largest angle is selectable and is the default.
//
// The optimiser is multi-start projected coordinate descent over the
// perturbation box |x'_l - x_l| <= limit * x_l, where x is the nominal
// reactance. All evaluated candidates go into one archive, and each target
// takes the cheapest archived candidate meeting it, so the reported
// cost frontier is nondecreasing in the target.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mtdgrid/attack.hpp"
#include "mtdgrid/detector.hpp"
#include "mtdgrid/error.hpp"
#include "mtdgrid/estimation.hpp"
#include "mtdgrid/grid.hpp"
#include "mtdgrid/opf.hpp"
#include "mtdgrid/random.hpp"
#include "mtdgrid/subspace.hpp"

namespace mtdgrid {

enum class AngleMetric { kSmallest, kLargest };

inline double effectiveness(const Eigen::MatrixXd& h, const Eigen::MatrixXd& h2, AngleMetric metric) {
  return metric == AngleMetric::kSmallest ? spa(h, h2) : largest_principal_angle(h, h2);
}

struct MtdConfig {
  double perturbation_limit = 0.2;  // fraction of nominal reactance
  AngleMetric metric = AngleMetric::kLargest;
  int starts = 50;         // local descents per target
  int candidates = 2000;   // random box samples seeding the archive
  double min_step = 1e-4;  // coordinate step floor, as a fraction of nominal
  bool cost_optimal_baseline = true;

  void validate() const {
    if (!(perturbation_limit > 0.0 && perturbation_limit < 1.0))
      throw PreconditionError("perturbation limit must be in (0, 1)");
    if (starts < 1 || candidates < 1 || !(min_step > 0.0))
      throw PreconditionError("invalid MTD search budget");
  }
};

struct MtdPerturbation {
  double target = 0.0;
  double achieved = 0.0;       // effectiveness under the configured metric
  double smallest_angle = 0.0;
  double largest_angle = 0.0;
  Eigen::VectorXd x_before;    // operating reactances
  Eigen::VectorXd x_after;
  Eigen::VectorXd delta_x;     // x_after - x_before, zero off D-FACTS lines
  double cost_before = 0.0;
  double cost_after = 0.0;

  double relative_increase() const { return (cost_after - cost_before) / cost_before; }
};

/// Search space of one grid: D-FACTS reactances parameterised by relative
/// offsets u in [-limit, limit] from nominal.
class ReactanceSpace {
 public:
  ReactanceSpace(const GridTopology& grid, double limit) : grid_(&grid), limit_(limit) {
    if (grid.dfacts_lines().empty()) throw PreconditionError("grid has no D-FACTS lines");
    nominal_ = grid.reactances();
  }

  int dims() const { return static_cast<int>(grid_->dfacts_lines().size()); }
  double limit() const { return limit_; }
  const GridTopology& grid() const { return *grid_; }

  Eigen::VectorXd reactances(const Eigen::VectorXd& u) const {
    Eigen::VectorXd x = nominal_;
    for (int i = 0; i < dims(); ++i) x[grid_->dfacts_lines()[i]] *= 1.0 + u[i];
    return x;
  }

  Eigen::VectorXd offsets(const Eigen::VectorXd& x) const {
    Eigen::VectorXd u(dims());
    for (int i = 0; i < dims(); ++i) {
      const int l = grid_->dfacts_lines()[i];
      u[i] = x[l] / nominal_[l] - 1.0;
    }
    return u;
  }

  /// OPF cost at base loads; +inf when infeasible.
  double cost(const Eigen::VectorXd& u) const {
    const OpfSolution s = dc_opf(*grid_, grid_->base_loads_mw(), reactances(u));
    return s.feasible ? s.cost : std::numeric_limits<double>::infinity();
  }

  Eigen::VectorXd clamp(Eigen::VectorXd u) const { return u.cwiseMax(-limit_).cwiseMin(limit_); }

 private:
  const GridTopology* grid_;
  double limit_;
  Eigen::VectorXd nominal_;
};

/// Coordinate descent on f over the box, accepting only moves for which
/// `admissible` holds. Step halves when no coordinate improves.
template <class F, class A>
Eigen::VectorXd coordinate_descent(const ReactanceSpace& space, Eigen::VectorXd u, double& fu, F&& f,
                                   A&& admissible, double min_step) {
  for (double step = space.limit() / 2.0; step >= min_step; step /= 2.0) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (int i = 0; i < space.dims(); ++i)
        for (int dir = -1; dir <= 1; dir += 2) {
          Eigen::VectorXd v = u;
          v[i] = std::clamp(v[i] + dir * step, -space.limit(), space.limit());
          if (v[i] == u[i]) continue;
          const double fv = f(v);
          if (fv < fu - 1e-12 * std::abs(fu) && admissible(v)) {
            u = std::move(v);
            fu = fv;
            improved = true;
          }
        }
    }
  }
  return u;
}

/// Least-cost D-FACTS reactances at base loads within the perturbation box.
inline Eigen::VectorXd operating_reactances(const GridTopology& grid, const MtdConfig& config,
                                            std::uint64_t seed) {
  config.validate();
  if (!config.cost_optimal_baseline) return grid.reactances();
  const ReactanceSpace space(grid, config.perturbation_limit);
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  auto f = [&](const Eigen::VectorXd& u) { return space.cost(u); };
  auto any = [](const Eigen::VectorXd&) { return true; };

  Eigen::VectorXd best = Eigen::VectorXd::Zero(space.dims());
  double best_cost = f(best);
  best = coordinate_descent(space, best, best_cost, f, any, config.min_step);
  const int restarts = std::max(1, config.starts / 2);
  for (int s = 0; s < restarts; ++s) {
    Eigen::VectorXd u(space.dims());
    for (int i = 0; i < space.dims(); ++i) u[i] = config.perturbation_limit * u01(rng);
    double c = f(u);
    if (!std::isfinite(c)) continue;
    u = coordinate_descent(space, u, c, f, any, config.min_step);
    if (c < best_cost) {
      best_cost = c;
      best = u;
    }
  }
  return space.reactances(best);
}

/// Cheapest perturbations meeting each target, from one shared search.
/// Targets that no explored candidate reaches throw InfeasibleError unless
/// `allow_unreachable` is set, in which case they come back with
/// achieved < target and infinite cost.
inline std::vector<MtdPerturbation> cost_frontier(const GridTopology& grid, const Eigen::VectorXd& x_op,
                                                  const std::vector<double>& targets, const MtdConfig& config,
                                                  std::uint64_t seed, bool allow_unreachable = false) {
  config.validate();
  for (double t : targets)
    if (!(t > 0.0 && t < std::numbers::pi / 2))
      throw PreconditionError("effectiveness target must be in (0, pi/2)");
  const ReactanceSpace space(grid, config.perturbation_limit);
  const Eigen::MatrixXd h_op = jacobian(grid, x_op).h;
  const double cost_op = dc_opf(grid, grid.base_loads_mw(), x_op).cost;

  struct Candidate {
    Eigen::VectorXd u;
    double metric;
    double cost;
  };
  std::vector<Candidate> archive;
  auto metric_of = [&](const Eigen::VectorXd& u) {
    return effectiveness(h_op, jacobian(grid, space.reactances(u)).h, config.metric);
  };
  auto record = [&](const Eigen::VectorXd& u, double cost) {
    if (std::isfinite(cost)) archive.push_back({u, metric_of(u), cost});
  };

  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  const Eigen::VectorXd u_op = space.offsets(x_op);
  record(u_op, space.cost(u_op));
  for (int c = 0; c < config.candidates; ++c) {
    Eigen::VectorXd u(space.dims());
    // A third of the samples sit on box corners, where the angles are largest.
    for (int i = 0; i < space.dims(); ++i)
      u[i] = config.perturbation_limit * (c % 3 ? u01(rng) : (u01(rng) > 0.0 ? 1.0 : -1.0));
    record(u, space.cost(u));
  }

  std::vector<double> sorted = targets;
  std::sort(sorted.begin(), sorted.end());
  for (double t : sorted) {
    std::vector<std::size_t> feasible;
    for (std::size_t k = 0; k < archive.size(); ++k)
      if (archive[k].metric >= t) feasible.push_back(k);
    std::sort(feasible.begin(), feasible.end(),
              [&](std::size_t a, std::size_t b) { return archive[a].cost < archive[b].cost; });
    if (feasible.size() > static_cast<std::size_t>(config.starts)) feasible.resize(config.starts);
    std::vector<Eigen::VectorXd> starts;
    for (std::size_t k : feasible) starts.push_back(archive[k].u);
    for (Eigen::VectorXd u : starts) {
      double c = space.cost(u);
      auto f = [&](const Eigen::VectorXd& v) { return space.cost(v); };
      auto ok = [&](const Eigen::VectorXd& v) { return metric_of(v) >= t; };
      u = coordinate_descent(space, u, c, f, ok, config.min_step);
      record(u, c);
    }
  }

  std::vector<MtdPerturbation> out;
  for (double t : targets) {
    const Candidate* best = nullptr;
    for (const Candidate& c : archive)
      if (c.metric >= t && (!best || c.cost < best->cost)) best = &c;
    MtdPerturbation p;
    p.target = t;
    p.x_before = x_op;
    p.cost_before = cost_op;
    if (!best) {
      if (!allow_unreachable)
        throw InfeasibleError("effectiveness target " + format_double(t) +
                              " is unreachable within the perturbation limits");
      double reach = 0.0;
      for (const Candidate& c : archive) reach = std::max(reach, c.metric);
      p.achieved = reach;
      p.x_after = x_op;
      p.delta_x = Eigen::VectorXd::Zero(x_op.size());
      p.cost_after = std::numeric_limits<double>::infinity();
      out.push_back(std::move(p));
      continue;
    }
    p.x_after = space.reactances(best->u);
    p.delta_x = p.x_after - x_op;
    p.achieved = best->metric;
    const Eigen::MatrixXd h2 = jacobian(grid, p.x_after).h;
    const Eigen::VectorXd angles = principal_angles(h_op, h2);
    p.smallest_angle = angles.minCoeff();
    p.largest_angle = angles.maxCoeff();
    p.cost_after = best->cost;
    out.push_back(std::move(p));
  }
  return out;
}

inline MtdPerturbation optimize_perturbation(const GridTopology& grid, const Eigen::VectorXd& x_op, double target,
                                             const MtdConfig& config, std::uint64_t seed) {
  return cost_frontier(grid, x_op, {target}, config, seed).front();
}

/// Header: target,achieved,smallest_angle,largest_angle,dx_<line>...,cost_before,cost_after,relative_increase
/// Line numbers in the header are 1-based branch indices.
inline void write_perturbation_csv(std::ostream& os, const GridTopology& grid,
                                   const std::vector<MtdPerturbation>& rows) {
  os << "target,achieved,smallest_angle,largest_angle";
  for (int l : grid.dfacts_lines()) os << ",dx_" << (l + 1);
  os << ",cost_before,cost_after,relative_increase\n";
  for (const MtdPerturbation& p : rows) {
    os << format_double(p.target) << ',' << format_double(p.achieved) << ',' << format_double(p.smallest_angle)
       << ',' << format_double(p.largest_angle);
    for (int l : grid.dfacts_lines()) os << ',' << format_double(p.delta_x[l]);
    os << ',' << format_double(p.cost_before) << ',' << format_double(p.cost_after) << ','
       << format_double(p.relative_increase()) << '\n';
  }
}

/// Detector setup for one reactance setting: its Jacobian, calibrated BDD
/// and measurement source.
struct GridView {
  Eigen::VectorXd reactances;
  Estimator estimator;
  MeasurementSource source;

  GridView(const GridTopology& grid, Eigen::VectorXd x, const NoiseModel& noise, double alpha_fpr,
           int calibration_samples, std::uint64_t seed, double load_lo = 0.8, double load_hi = 1.2)
      : reactances(std::move(x)), estimator(jacobian(grid, reactances).h, noise) {
    Rng rng = make_rng(seed);
    estimator.calibrate(alpha_fpr, calibration_samples, rng);
    source = MeasurementSource{&grid, reactances, &estimator, load_lo, load_hi};
  }
  GridView(const GridView&) = delete;
  GridView& operator=(const GridView&) = delete;
};

/// Retrains the base detector on data generated under the perturbed
/// reactances. Weights start from the base model; standardisation is refit.
inline Mlp adapt_base_model(const Mlp& base, const MeasurementSource& perturbed, double nu, int n_clean,
                            int n_attacked, TrainConfig train_config, std::uint64_t seed,
                            TrainReport* report = nullptr) {
  AttackConfig ac;
  ac.nu = nu;
  const Dataset data = build_dataset(perturbed, ac, n_clean, n_attacked, derive_seed(seed, "data"));
  Mlp adapted = base;
  train_config.fit_standardization = true;
  train_config.seed = derive_seed(seed, "train");
  TrainReport r = train(adapted, data.z, data.labels, train_config);
  if (report) *report = std::move(r);
  return adapted;
}

}  // namespace mtdgrid

#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>

#include "mtdgrid/mtdgrid.hpp"

namespace testing_support {

using namespace mtdgrid;

inline const char* kThreeBus = R"(
[bus]
1 0 slack
2 60
3 40
[branch]
1 2 0.1 200
2 3 0.2 200
1 3 0.25 200
[gen]
1 0.01 20 0 300
3 0.02 15 0 300
[dfacts]
1 3
)";

inline GridTopology ieee14() { return load_case(bundled_case_path("ieee14")); }

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

/// The 14-bus grid at nominal reactances with a calibrated BDD and a small
/// trained detector, shared by the slower tests.
struct Bench {
  GridTopology grid = ieee14();
  std::unique_ptr<GridView> view;
  Mlp model;

  explicit Bench(int n = 1500, int epochs = 30) {
    NoiseModel noise;
    view = std::make_unique<GridView>(grid, grid.reactances(), noise, 0.05, 4000, 11);
    AttackConfig ac;
    const Dataset d = build_dataset(view->source, ac, n, n, 12);
    model = Mlp::init(default_layer_sizes(grid.measurement_count()), 13);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.seed = 14;
    train(model, d.z, d.labels, tc);
  }

  static Bench& shared() {
    static Bench b;
    return b;
  }
};

}  // namespace testing_support

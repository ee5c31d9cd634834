#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace mtdgrid;
using namespace testing_support;

TEST(Replay, UnchangedReactancesReproduceData) {
  const Bench& b = Bench::shared();
  const Dataset d = build_dataset(b.view->source, AttackConfig{}, 30, 30, 61);
  const ReplaySet r = replay(d, attack_vectors(d), b.view->source);
  EXPECT_EQ(r.dropped, 0);
  EXPECT_EQ(r.labels, d.labels);
  EXPECT_LT((r.z - d.z).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Replay, AdversarialInjectionReproducesSamples) {
  const Bench& b = Bench::shared();
  const AdversarialSet s = adversarial_test_set(b.model, b.view->source, 0.05, 20, AdvConfig{}, 62);
  ASSERT_EQ(s.data.size(), 20);
  const ReplaySet r = replay(s.data, s.injection, b.view->source);
  EXPECT_LT((r.z - s.data.z).cwiseAbs().maxCoeff(), 1e-12);
  // Every sample evades the model it was crafted against.
  EXPECT_DOUBLE_EQ(detection_rate(b.model.predict(r.z)), 0.0);
}

TEST(Replay, PerturbedReactancesChangeMeasurements) {
  const Bench& b = Bench::shared();
  const Dataset d = build_dataset(b.view->source, AttackConfig{}, 10, 0, 63);
  Eigen::VectorXd x = b.grid.reactances();
  for (int l : b.grid.dfacts_lines()) x[l] *= 1.3;
  const GridView moved(b.grid, x, NoiseModel{}, 0.05, 2000, 64);
  const ReplaySet r = replay(d, attack_vectors(d), moved.source);
  EXPECT_EQ(r.dropped + r.z.rows(), d.size());
  EXPECT_GT((r.z - d.z.topRows(r.z.rows())).norm(), 1e-3);
  Dataset bare = d;
  bare.loads.resize(0, 0);
  EXPECT_THROW(replay(bare, attack_vectors(d), moved.source), PreconditionError);
}

TEST(Defense, OrCombination) {
  const Bench& b = Bench::shared();
  const Dataset d = build_dataset(b.view->source, AttackConfig{}, 40, 40, 65);
  const std::vector<int> bdd = Defense{&b.view->estimator, nullptr, nullptr}.detect(d.z);
  const std::vector<int> dnn = Defense{nullptr, &b.model, nullptr}.detect(d.z);
  const std::vector<int> both = Defense{&b.view->estimator, &b.model, nullptr}.detect(d.z);
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_EQ(both[i], bdd[i] | dnn[i]);
  EXPECT_EQ(Defense{}.detect(d.z), std::vector<int>(80, 0));
}

TEST(Manifest, SeparatesTimings) {
  const auto dir = std::filesystem::temp_directory_path() / "mtdgrid_manifest_test";
  std::filesystem::remove_all(dir);
  RunManifest m("demo", 5, dir);
  std::ofstream(m.file("a.csv")) << "x\n";
  m.seed("run", 9);
  m.timing("total", 1.25);
  m.write();
  std::ifstream f(dir / "manifest.txt");
  std::stringstream ss;
  ss << f.rdbuf();
  EXPECT_EQ(ss.str(), "mtdgrid-run 1\nexperiment demo\nmaster_seed 5\nseed run 9\nfile a.csv\ntimings timings.txt\n");
  EXPECT_TRUE(std::filesystem::exists(dir / "timings.txt"));
  std::filesystem::remove_all(dir);
}

TEST(Experiments, UnknownName) {
  EXPECT_THROW(run_experiment("nope", ExperimentConfig{}, std::filesystem::temp_directory_path()),
               PreconditionError);
  EXPECT_EQ(experiment_names().size(), 6u);
}

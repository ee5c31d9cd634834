#include <gtest/gtest.h>

#include <sstream>

#include "checks.hpp"
#include "support.hpp"

using namespace mtdgrid;
using namespace testing_support;

TEST(Mlp, ShapesAndInit) {
  const Mlp m = Mlp::init(default_layer_sizes(54), 1);
  EXPECT_EQ(m.sizes(), (std::vector<int>{54, 100, 50, 25, 2}));
  EXPECT_EQ(m.parameter_count(), 54u * 100 + 100 + 100 * 50 + 50 + 50 * 25 + 25 + 25 * 2 + 2);
  const double bound = 1.0 / std::sqrt(54.0);
  EXPECT_LE(m.layers()[0].w.cwiseAbs().maxCoeff(), bound);
  EXPECT_THROW(Mlp::init({4, 3}, 1), PreconditionError);
  EXPECT_THROW(m.logits(Eigen::VectorXd(Eigen::VectorXd::Zero(5))), PreconditionError);
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) { EXPECT_LE(checks::detector_input_gradient_error(100, 2), 1e-4); }

TEST(Mlp, ParameterGradientMatchesFiniteDifferences) {
  EXPECT_LE(checks::detector_parameter_gradient_error(100, 3), 1e-4);
}

TEST(Mlp, FlatRoundTrip) {
  Mlp m = checks::random_model(7);
  const Eigen::VectorXd w = m.flat();
  m.set_flat(2.0 * w);
  EXPECT_EQ(m.flat(), 2.0 * w);
  EXPECT_THROW(m.set_flat(Eigen::VectorXd::Zero(3)), PreconditionError);
}

TEST(Mlp, SaveLoadIsExact) {
  const Mlp m = checks::random_model(8);
  std::stringstream ss;
  m.save(ss);
  const Mlp back = Mlp::load(ss);
  EXPECT_EQ(back.sizes(), m.sizes());
  EXPECT_EQ(back.flat(), m.flat());
  EXPECT_EQ(back.mean(), m.mean());
  EXPECT_EQ(back.scale(), m.scale());
  std::stringstream bad("mtdgrid-mlp 1\nlayers 6 2\nW 1 2\n");
  EXPECT_THROW(Mlp::load(bad), Error);
}

TEST(Mlp, LossClipsProbabilities) {
  EXPECT_NEAR(Mlp::cross_entropy(0.0, 1), -std::log(kProbabilityClip), 1e-12);
  EXPECT_NEAR(Mlp::cross_entropy(1.0, 0), -std::log(kProbabilityClip), 1e-9);
  EXPECT_NEAR(Mlp::cross_entropy(0.5, 1), std::log(2.0), 1e-12);
}

TEST(Training, LearnsSeparableData) {
  Rng rng = make_rng(4);
  const int n = 600;
  Eigen::MatrixXd x = random_matrix(n, 6, rng);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = x(i, 0) + 0.5 * x(i, 3) > 0.0;
  Mlp m = Mlp::init({6, 16, 2}, 5);
  TrainConfig tc;
  tc.epochs = 60;
  tc.learning_rate = 1e-2;
  const TrainReport r = train(m, x, y, tc);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  EXPECT_GT(r.validation_accuracy, 0.9);
}

TEST(Training, DeterministicAndValidated) {
  Rng rng = make_rng(6);
  Eigen::MatrixXd x = random_matrix(100, 6, rng);
  std::vector<int> y(100);
  for (int i = 0; i < 100; ++i) y[i] = i % 2;
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 9;
  Mlp a = Mlp::init({6, 4, 2}, 1), b = a;
  train(a, x, y, tc);
  train(b, x, y, tc);
  EXPECT_EQ(a.flat(), b.flat());
  std::vector<int> one_class(100, 1);
  EXPECT_THROW(train(a, x, one_class, tc), PreconditionError);
  tc.learning_rate = 0;
  EXPECT_THROW(train(a, x, y, tc), PreconditionError);
}

TEST(Training, DetectsPlainFdia) {
  const Bench& b = Bench::shared();
  const Dataset test = build_dataset(b.view->source, AttackConfig{}, 300, 300, 99);
  EXPECT_GT(accuracy(b.model, test.z, test.labels), 0.9);
}

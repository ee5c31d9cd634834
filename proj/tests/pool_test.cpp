#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace mtdgrid;
using namespace testing_support;

namespace {

PoolConfig small_pool(int k, int p) {
  PoolConfig pc;
  pc.k = k;
  pc.p = p;
  pc.n_clean = 200;
  pc.n_attacked = 200;
  pc.retrain.epochs = 2;
  pc.adv_rounds = 1;
  pc.adv_samples = 40;
  pc.adv.rounds = 2;
  pc.adv.iterations = 30;
  return pc;
}

}  // namespace

TEST(Pool, PerturbationWithinBounds) {
  const Mlp base = Mlp::init({6, 8, 2}, 1);
  const Eigen::VectorXd w = base.flat();
  Rng rng = make_rng(2);
  const Eigen::VectorXd s = perturb_weights(base, 0.1, WeightNoise::kUniform, rng).flat();
  EXPECT_TRUE(((s - w).cwiseAbs().array() <= 0.1 * w.cwiseAbs().array() + 1e-15).all());
  EXPECT_NE(s, w);
  // Laplace noise is unbounded but still scaled by |w|; its mean absolute
  // relative change is the scale.
  const Eigen::VectorXd lap = perturb_weights(base, 0.1, WeightNoise::kLaplace, rng).flat();
  EXPECT_NEAR(((lap - w).cwiseAbs().array() / w.cwiseAbs().array()).mean(), 0.1, 0.03);
}

TEST(Pool, ZeroFractionGivesIdenticalStudents) {
  const Mlp base = Mlp::init({6, 8, 2}, 1);
  PoolConfig pc;
  pc.k = 4;
  pc.perturbation_fraction = 0.0;
  for (const Mlp& m : spawn_students(base, pc, 9)) EXPECT_EQ(m.flat(), base.flat());
}

TEST(Pool, MajorityRule) {
  EXPECT_EQ(majority(5, 10), 1);
  EXPECT_EQ(majority(4, 10), 0);
  EXPECT_EQ(majority(1, 2), 1);
  EXPECT_EQ(majority(1, 3), 0);
  EXPECT_EQ(majority(2, 3), 1);
  EXPECT_EQ(majority(0, 1), 0);
  EXPECT_THROW(majority(0, 0), PreconditionError);
}

TEST(Pool, VoteMatchesSingleModelForIdenticalStudents) {
  const Bench& b = Bench::shared();
  ModelPool pool;
  for (int i = 0; i < 5; ++i) pool.students.push_back(Student{b.model});
  const Dataset d = build_dataset(b.view->source, AttackConfig{}, 50, 50, 41);
  EXPECT_EQ(vote(pool, d.z), b.model.predict(d.z));
  EXPECT_EQ(vote(pool, Eigen::VectorXd(d.z.row(3).transpose())), b.model.predict(Eigen::VectorXd(d.z.row(3).transpose())));
}

TEST(Pool, IdenticalStudentsTransferFully) {
  const Bench& b = Bench::shared();
  ModelPool pool;
  for (int i = 0; i < 3; ++i) pool.students.push_back(Student{b.model});
  const Dataset fdia = build_dataset(b.view->source, AttackConfig{}, 0, 30, 42);
  const AdversarialSet adv = build_adversarial_set(b.model, fdia, b.view->estimator.h(), AdvConfig{});
  ASSERT_GT(adv.data.size(), 0);
  const Transferability t = transferability(pool, adv.data);
  EXPECT_DOUBLE_EQ(t.eta_av, 1.0);
  EXPECT_TRUE(t.excluded.empty());
  EXPECT_EQ(t.crafted[0], adv.data.size());
}

TEST(Pool, TransferabilityWithoutEvasionIsUndefined) {
  const Bench& b = Bench::shared();
  ModelPool pool;
  for (int i = 0; i < 2; ++i) pool.students.push_back(Student{b.model});
  const Dataset fdia = build_dataset(b.view->source, AttackConfig{}, 0, 30, 43);
  std::vector<Eigen::Index> flagged;
  const auto pred = b.model.predict(fdia.z);
  for (Eigen::Index i = 0; i < fdia.size(); ++i)
    if (pred[i]) flagged.push_back(i);
  EXPECT_THROW(transferability(pool, fdia.subset(flagged)), MetricError);
}

TEST(Pool, AssembledPrefixEqualsBuiltPool) {
  const Bench& b = Bench::shared();
  const StudentCache cache = train_students(b.model, b.view->source, small_pool(3, 1), 77);
  const ModelPool built = build_pool(b.model, b.view->source, small_pool(2, 1), 77);
  const ModelPool assembled = assemble_pool(cache, 2, 1);
  ASSERT_EQ(built.size(), 2);
  for (int s = 0; s < 2; ++s) {
    EXPECT_EQ(built.students[s].model.flat(), assembled.students[s].model.flat());
    EXPECT_EQ(built.students[s].hardened, assembled.students[s].hardened);
    EXPECT_EQ(built.students[s].nu, assembled.students[s].nu);
  }
  EXPECT_TRUE(assembled.students[0].hardened);
  EXPECT_FALSE(assembled.students[1].hardened);
  for (const Student& s : cache.plain) {
    EXPECT_GE(s.nu, 0.05);
    EXPECT_LE(s.nu, 0.3);
    EXPECT_EQ(s.model.mean(), b.model.mean());  // standardisation is inherited
  }
  EXPECT_THROW(assemble_pool(cache, 4, 0), PreconditionError);
  EXPECT_THROW(assemble_pool(cache, 3, 2), PreconditionError);
}

TEST(Pool, SaveLoadRoundTrip) {
  const Bench& b = Bench::shared();
  const ModelPool pool = randomized_pool(b.model, small_pool(3, 0), 5);
  const auto dir = std::filesystem::temp_directory_path() / "mtdgrid_pool_test";
  std::filesystem::remove_all(dir);
  save_pool(pool, dir);
  const ModelPool back = load_pool(dir);
  ASSERT_EQ(back.size(), 3);
  for (int s = 0; s < 3; ++s) EXPECT_EQ(back.students[s].model.flat(), pool.students[s].model.flat());
  EXPECT_EQ(back.seed, pool.seed);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_pool(dir), Error);
}

TEST(Pool, ConfigValidation) {
  PoolConfig pc;
  pc.p = 11;
  EXPECT_THROW(pc.validate(), PreconditionError);
  pc.p = 0;
  pc.k = 0;
  EXPECT_THROW(pc.validate(), PreconditionError);
}

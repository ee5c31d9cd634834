#include <gtest/gtest.h>

#include "mtdgrid/metrics.hpp"

using namespace mtdgrid;

TEST(Metrics, AlwaysAndNeverAlarm) {
  const std::vector<int> labels{1, 1, 0, 0, 1};
  const Confusion always = confusion(std::vector<int>(5, 1), labels);
  EXPECT_DOUBLE_EQ(always.recall(), 1.0);
  EXPECT_DOUBLE_EQ(always.false_positive_rate(), 1.0);
  const Confusion never = confusion(std::vector<int>(5, 0), labels);
  EXPECT_DOUBLE_EQ(never.recall(), 0.0);
  EXPECT_DOUBLE_EQ(never.false_positive_rate(), 0.0);
  EXPECT_DOUBLE_EQ(never.accuracy(), 0.4);
  EXPECT_THROW(never.precision(), MetricError);
}

TEST(Metrics, Counts) {
  const Confusion c = confusion({1, 0, 1, 0, 1, 1}, {1, 1, 0, 0, 1, 0});
  EXPECT_EQ(c.tp, 2);
  EXPECT_EQ(c.fn, 1);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(c.tn, 1);
  EXPECT_DOUBLE_EQ(c.recall(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.precision(), 0.5);
  EXPECT_THROW(confusion({1}, {1, 0}), PreconditionError);
}

TEST(Metrics, UndefinedMetrics) {
  EXPECT_THROW(recall({0, 1}, {0, 0}), MetricError);
  EXPECT_THROW(detection_rate({}), MetricError);
  EXPECT_THROW(mean({}), MetricError);
  EXPECT_THROW(Confusion{}.accuracy(), MetricError);
  EXPECT_DOUBLE_EQ(detection_rate({1, 0, 1, 1}), 0.75);
}

TEST(Metrics, AverageRanks) {
  EXPECT_EQ(average_ranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Metrics, SpearmanKnownValue) {
  const RankCorrelation rc = spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5});
  EXPECT_NEAR(rc.rho, 0.8, 1e-12);
  EXPECT_NEAR(rc.p_two_sided, 0.1040880, 1e-6);
  EXPECT_NEAR(rc.p_greater + rc.p_less, 1.0, 1e-12);
  const RankCorrelation neg = spearman({1, 2, 3, 4}, {4, 3, 2, 1});
  EXPECT_DOUBLE_EQ(neg.rho, -1.0);
  EXPECT_DOUBLE_EQ(neg.p_less, 0.0);
  EXPECT_THROW(spearman({1, 2}, {2, 1}), MetricError);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), MetricError);
}

TEST(Metrics, SignTest) {
  const SignTest s = sign_test({1, 1, 1, 1, 1, 1, 1, 1, -1, -1, 0});
  EXPECT_EQ(s.positive, 8);
  EXPECT_EQ(s.negative, 2);
  EXPECT_EQ(s.ties, 1);
  EXPECT_NEAR(s.p_greater, 56.0 / 1024.0, 1e-12);
  EXPECT_NEAR(sign_test({1, 1, 1}).p_greater, 0.125, 1e-12);
  EXPECT_DOUBLE_EQ(sign_test({-1, -2}).p_greater, 1.0);
  EXPECT_DOUBLE_EQ(sign_test({0, 0}).p_greater, 1.0);
}

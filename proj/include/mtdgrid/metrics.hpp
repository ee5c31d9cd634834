#pragma once

// Detection metrics and the rank statistics used for trend checks.

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mtdgrid/error.hpp"

namespace mtdgrid {

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;

  long positives() const { return tp + fn; }
  long negatives() const { return tn + fp; }
  long total() const { return tp + fp + tn + fn; }

  double recall() const {
    if (positives() == 0) throw MetricError("recall undefined: no positive labels");
    return double(tp) / double(positives());
  }
  double precision() const {
    if (tp + fp == 0) throw MetricError("precision undefined: no positive predictions");
    return double(tp) / double(tp + fp);
  }
  double false_positive_rate() const {
    if (negatives() == 0) throw MetricError("false-positive rate undefined: no negative labels");
    return double(fp) / double(negatives());
  }
  double accuracy() const {
    if (total() == 0) throw MetricError("accuracy of an empty set");
    return double(tp + tn) / double(total());
  }
};

inline Confusion confusion(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw PreconditionError("prediction and label counts differ");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predicted[i] != 0, y = labels[i] != 0;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double recall(const std::vector<int>& predicted, const std::vector<int>& labels) {
  return confusion(predicted, labels).recall();
}

/// Fraction of ones; the recall of a set whose labels are all 1.
inline double detection_rate(const std::vector<int>& predicted) {
  if (predicted.empty()) throw MetricError("detection rate of an empty set");
  return double(std::count_if(predicted.begin(), predicted.end(), [](int p) { return p != 0; })) /
         double(predicted.size());
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw MetricError("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

/// Ranks starting at 1, ties get their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw MetricError("correlation needs two equal samples of size >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("correlation undefined for a constant sample");
  return sxy / std::sqrt(sxx * syy);
}

struct RankCorrelation {
  double rho = 0.0;
  double p_two_sided = 1.0;
  double p_less = 1.0;     // H1: rho < 0
  double p_greater = 1.0;  // H1: rho > 0
};

/// Spearman's rho with the t approximation t = rho sqrt((n-2)/(1-rho^2)).
inline RankCorrelation spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 3) throw MetricError("spearman needs at least 3 pairs");
  RankCorrelation rc;
  rc.rho = pearson(average_ranks(x), average_ranks(y));
  const double n = double(x.size());
  if (std::abs(rc.rho) >= 1.0) {
    rc.p_two_sided = 0.0;
    rc.p_less = rc.rho < 0 ? 0.0 : 1.0;
    rc.p_greater = rc.rho > 0 ? 0.0 : 1.0;
    return rc;
  }
  const double t = rc.rho * std::sqrt((n - 2.0) / (1.0 - rc.rho * rc.rho));
  const boost::math::students_t dist(n - 2.0);
  rc.p_less = boost::math::cdf(dist, t);
  rc.p_greater = boost::math::cdf(boost::math::complement(dist, t));
  rc.p_two_sided = 2.0 * std::min(rc.p_less, rc.p_greater);
  return rc;
}

struct SignTest {
  int positive = 0;  // pairs with difference > 0
  int negative = 0;
  int ties = 0;
  double p_greater = 1.0;  // one-sided, H1: differences tend to be positive
};

/// Exact binomial sign test on paired differences; ties are dropped.
inline SignTest sign_test(const std::vector<double>& differences) {
  SignTest s;
  for (double d : differences) {
    if (d > 0) ++s.positive;
    else if (d < 0) ++s.negative;
    else ++s.ties;
  }
  const int n = s.positive + s.negative;
  if (n == 0) return s;
  const boost::math::binomial dist(n, 0.5);
  s.p_greater = s.positive == 0 ? 1.0 : boost::math::cdf(boost::math::complement(dist, s.positive - 1));
  return s;
}

}  // namespace mtdgrid

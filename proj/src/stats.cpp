#include "ssrem/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "ssrem/rng.hpp"

namespace ssrem {
namespace {

void check_pair(std::span<const double> x, std::span<const double> y, std::size_t min_n) {
  if (x.size() != y.size()) throw StatisticError("samples differ in length");
  if (x.size() < min_n) {
    throw StatisticError("need at least " + std::to_string(min_n) + " points");
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double raw_pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw StatisticError("zero variance: correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

double t_two_sided_p(double t, double df) {
  if (!(df > 0)) throw StatisticError("degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  if (x >= 1.0) return 1.0;
  return boost::math::ibeta(df / 2.0, 0.5, x);
}

double correlation_p_value(double r, std::size_t n) {
  if (n < 3) throw StatisticError("p-value needs at least 3 points");
  const double df = static_cast<double>(n - 2);
  if (std::abs(r) >= 1.0) return 0.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  return t_two_sided_p(t, df);
}

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 3);
  const double r = raw_pearson(x, y);
  return {r, correlation_p_value(r, x.size()), x.size()};
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 3);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double permutation_p_value(std::span<const double> x, std::span<const double> y,
                           std::size_t shuffles, std::uint64_t seed) {
  check_pair(x, y, 3);
  const double observed = std::abs(raw_pearson(x, y));
  std::vector<double> permuted(y.begin(), y.end());
  Rng rng(seed);
  std::size_t extreme = 1;
  for (std::size_t s = 0; s < shuffles; ++s) {
    rng.shuffle(permuted);
    if (std::abs(raw_pearson(x, permuted)) >= observed - 1e-12) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(shuffles + 1);
}

MeanCI mean_ci(std::span<const double> values, double level) {
  if (values.size() < 2) throw StatisticError("confidence interval needs at least 2 values");
  if (!(level > 0.0 && level < 1.0)) throw StatisticError("confidence level must be in (0, 1)");
  const double n = static_cast<double>(values.size());
  const double mean = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  const double t = boost::math::quantile(dist, 0.5 + level / 2.0);
  return {mean, t * sd / std::sqrt(n), level, values.size()};
}

double fleiss_kappa(const std::vector<std::vector<int>>& ratings) {
  if (ratings.empty()) throw StatisticError("no subjects");
  const std::size_t k = ratings.front().size();
  const int raters = std::accumulate(ratings.front().begin(), ratings.front().end(), 0);
  if (raters < 2) throw StatisticError("need at least 2 raters per subject");
  std::vector<double> category(k, 0.0);
  double agreement = 0.0;
  for (const auto& row : ratings) {
    if (row.size() != k) throw StatisticError("subjects have different category counts");
    if (std::accumulate(row.begin(), row.end(), 0) != raters) {
      throw StatisticError("subjects have unequal rater counts");
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j] < 0) throw StatisticError("negative rating count");
      category[j] += row[j];
      sq += static_cast<double>(row[j]) * row[j];
    }
    agreement += (sq - raters) / (static_cast<double>(raters) * (raters - 1));
  }
  const double subjects = static_cast<double>(ratings.size());
  const double p_bar = agreement / subjects;
  double p_e = 0.0;
  for (double c : category) {
    const double p = c / (subjects * raters);
    p_e += p * p;
  }
  if (p_e >= 1.0) throw StatisticError("chance agreement is 1: kappa undefined");
  return (p_bar - p_e) / (1.0 - p_e);
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 2);
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw StatisticError("zero variance in x: fit undefined");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

ModeScore mode_score(std::span<const int> ratings) {
  if (ratings.empty()) throw StatisticError("no ratings");
  std::map<int, int> counts;
  for (int r : ratings) ++counts[r];
  int best = 0;
  for (const auto& [score, count] : counts) best = std::max(best, count);
  ModeScore out;
  int winners = 0;
  for (const auto& [score, count] : counts) {
    if (count != best) continue;
    if (winners++ == 0) out.score = score;
  }
  out.tied = winners > 1;
  return out;
}

}  // namespace ssrem

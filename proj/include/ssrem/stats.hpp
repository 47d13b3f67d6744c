#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace ssrem {

// A statistic is undefined for the given sample (zero variance, too few points).
class StatisticError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct CorrelationResult {
  double coefficient = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

struct MeanCI {
  double mean = 0.0;
  double half_width = 0.0;
  double level = 0.95;
  std::size_t n = 0;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Two-sided p-value of Student's t with df degrees of freedom,
// I_{df/(df+t^2)}(df/2, 1/2).
double t_two_sided_p(double t, double df);
// p-value of a correlation coefficient r from n points via t = r sqrt((n-2)/(1-r^2)).
double correlation_p_value(double r, std::size_t n);

CorrelationResult pearson(std::span<const double> x, std::span<const double> y);
// Pearson on average ranks.
CorrelationResult spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> values);

// Two-sided permutation p-value for Pearson's r: share of shuffles of y whose
// |r| reaches the observed |r| (with the observed arrangement counted once).
double permutation_p_value(std::span<const double> x, std::span<const double> y,
                           std::size_t shuffles, std::uint64_t seed);

MeanCI mean_ci(std::span<const double> values, double level = 0.95);

// ratings[i][j] = number of raters assigning subject i to category j.
double fleiss_kappa(const std::vector<std::vector<int>>& ratings);

LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

struct ModeScore {
  int score = 0;
  bool tied = false;
};

// Most frequent rating; ties resolve to the lowest tied score and are flagged.
ModeScore mode_score(std::span<const int> ratings);

}  // namespace ssrem

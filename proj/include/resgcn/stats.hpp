#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace resgcn {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::string method;
};

struct MannWhitneyResult : TestResult {
  double u_a = 0.0;  // pairs (x in a, y in b) with x > y, ties counting 1/2
  double u_b = 0.0;
};

/// Two-sided Mann-Whitney U test on midranks. Exact permutation p-value when
/// both samples have at most 8 values, otherwise the tie-corrected normal
/// approximation with continuity correction. statistic = min(U_a, U_b).
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

/// Tie-corrected Kruskal-Wallis H with a chi-square(k - 1) p-value.
TestResult kruskal_wallis(std::span<const std::vector<double>> groups);

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
  std::size_t below = 0;  // clamped into the first bin
  std::size_t above = 0;  // clamped into the last bin
};

/// Uniform bins over [lo, hi]; bins are right-open except the last. NaN
/// values are skipped.
Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

/// CSV with header bin_lo,bin_hi,count.
std::string histogram_csv(const Histogram& h);

// Distribution helpers, accurate to about 1e-10.
double normal_cdf(double z);
/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
double chi_square_sf(double x, double dof);

}  // namespace resgcn

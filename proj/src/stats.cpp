#include "resgcn/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

#include "resgcn/errors.hpp"

namespace resgcn {

namespace {

struct Ranking {
  std::vector<double> ranks;  // midranks, in input order
  double tie_term = 0.0;      // sum of t^3 - t over tie groups
};

Ranking midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  Ranking r;
  r.ranks.assign(n, 0.0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r.ranks[order[k]] = rank;
    const double t = static_cast<double>(j - i + 1);
    r.tie_term += t * t * t - t;
    i = j + 1;
  }
  return r;
}

// Two-sided exact p: share of all C(n, na) rank assignments whose U is at
// least as far from the null centre as the observed one.
double exact_p(const std::vector<double>& ranks, std::size_t na, double u_obs) {
  const std::size_t n = ranks.size();
  const double nb = static_cast<double>(n - na);
  const double centre = 0.5 * static_cast<double>(na) * nb;
  const double dev = std::abs(u_obs - centre) - 1e-9;
  const double offset = 0.5 * static_cast<double>(na) * static_cast<double>(na + 1);
  std::uint64_t extreme = 0;
  std::uint64_t total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != na) continue;
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) rank_sum += ranks[i];
    }
    ++total;
    if (std::abs(rank_sum - offset - centre) >= dev) ++extreme;
  }
  return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(total));
}

double gamma_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper tail Q(a, x) by Lentz's continued fraction, for x >= a + 1.
double gamma_cf(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_series(a, x);
  return gamma_cf(a, x);
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double gamma_p(double a, double x) {
  if (!(a > 0.0)) throw ContractError("gamma_p needs a > 0");
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) return gamma_series(a, x);
  return 1.0 - gamma_cf(a, x);
}

double chi_square_sf(double x, double dof) {
  if (!(dof > 0.0)) throw ContractError("chi-square needs positive degrees of freedom");
  return std::clamp(gamma_q(0.5 * dof, 0.5 * x), 0.0, 1.0);
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ContractError("mann_whitney_u needs two non-empty samples");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const Ranking r = midranks(pooled);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum_a += r.ranks[i];

  MannWhitneyResult res;
  res.u_a = rank_sum_a - 0.5 * na * (na + 1.0);
  res.u_b = na * nb - res.u_a;
  res.statistic = std::min(res.u_a, res.u_b);

  if (a.size() <= 8 && b.size() <= 8) {
    res.method = "mann-whitney-exact";
    res.p_value = exact_p(r.ranks, a.size(), res.u_a);
    return res;
  }
  res.method = "mann-whitney-normal";
  const double n = na + nb;
  const double var = na * nb / 12.0 * ((n + 1.0) - r.tie_term / (n * (n - 1.0)));
  if (!(var > 0.0)) {
    res.p_value = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::abs(res.u_a - 0.5 * na * nb) - 0.5) / std::sqrt(var);
  res.p_value = std::clamp(std::erfc(z / std::sqrt(2.0)), 0.0, 1.0);
  return res;
}

TestResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw ContractError("kruskal_wallis needs at least two groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (g.empty()) throw ContractError("kruskal_wallis groups must be non-empty");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const Ranking r = midranks(pooled);
  const double n = static_cast<double>(pooled.size());
  double s = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) rank_sum += r.ranks[offset + i];
    s += rank_sum * rank_sum / static_cast<double>(g.size());
    offset += g.size();
  }
  TestResult res;
  res.method = "kruskal-wallis";
  const double correction = 1.0 - r.tie_term / (n * n * n - n);
  if (!(correction > 0.0)) return res;  // all values tied
  const double h = (12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction;
  res.statistic = std::max(0.0, h);
  res.p_value = chi_square_sf(res.statistic, static_cast<double>(groups.size() - 1));
  return res;
}

Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins == 0) throw ContractError("histogram needs at least one bin");
  if (!(hi > lo)) throw ContractError("histogram range needs hi > lo");
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0), 0, 0};
  const double nb = static_cast<double>(bins);
  for (double v : values) {
    if (std::isnan(v)) continue;
    std::size_t idx = 0;
    if (v < lo) {
      ++h.below;
    } else if (v > hi) {
      ++h.above;
      idx = bins - 1;
    } else {
      idx = std::min(bins - 1, static_cast<std::size_t>(std::floor((v - lo) * nb / (hi - lo))));
    }
    ++h.counts[idx];
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count\n";
  const double bins = static_cast<double>(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double a = h.lo + (h.hi - h.lo) * static_cast<double>(i) / bins;
    const double b = h.lo + (h.hi - h.lo) * static_cast<double>(i + 1) / bins;
    out << a << "," << b << "," << h.counts[i] << "\n";
  }
  return out.str();
}

}  // namespace resgcn

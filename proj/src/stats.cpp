#include "selena/stats.hpp"

#include "selena/types.hpp"

#include <algorithm>
#include <cmath>

namespace selena {

double ks_p_value(std::size_t n1, std::size_t n2, double d) {
  const double ne = static_cast<double>(n1) * static_cast<double>(n2) /
                    static_cast<double>(n1 + n2);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0.0;
  double sign = 1.0;
  bool converged = false;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    p += sign * term;
    sign = -sign;
    if (term < 1e-12) {
      converged = true;
      break;
    }
  }
  if (!converged) return 1.0;
  return std::clamp(2.0 * p, 0.0, 1.0);
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n1 = a.size(), n2 = b.size();
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < n1 && j < n2) {
    const double x = std::min(a[i], b[j]);
    while (i < n1 && a[i] <= x) ++i;
    while (j < n2 && b[j] <= x) ++j;
    const double gap =
        std::fabs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2);
    d = std::max(d, gap);
  }
  return {d, ks_p_value(n1, n2, d)};
}

double binomial_ci_halfwidth(double p_hat, std::size_t trials) {
  if (trials == 0) throw Error("binomial_ci_halfwidth: zero trials");
  return 1.96 * std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(trials));
}

double mean(const std::vector<double>& v) {
  if (v.empty()) throw Error("mean: empty vector");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace selena

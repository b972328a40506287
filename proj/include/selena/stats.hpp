#pragma once

#include <cstddef>
#include <vector>

namespace selena {

struct KsResult {
  double d;  // max CDF gap
  double p;  // two-sided asymptotic p-value
};

// Asymptotic two-sample KS p-value: p = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2)
// with lambda = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * d and ne = n1*n2/(n1+n2).
// Returns 1 when the series does not converge (d near 0).
double ks_p_value(std::size_t n1, std::size_t n2, double d);

// Two-sample Kolmogorov-Smirnov test.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

// Half-width of the normal-approximation 95% confidence interval for a
// binomial proportion: 1.96 * sqrt(p(1-p)/n).
double binomial_ci_halfwidth(double p_hat, std::size_t trials);

double mean(const std::vector<double>& v);

}  // namespace selena

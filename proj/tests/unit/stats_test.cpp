#include "selena/stats.hpp"

#include "selena/rng.hpp"
#include "selena/types.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace selena;

TEST_CASE("ks p-value matches independently computed golden values") {
  // Golden values from a 30-digit reference evaluation of the series.
  CHECK(ks_p_value(100, 100, 0.2) == doctest::Approx(0.031376652153072552).epsilon(1e-12));
  CHECK(ks_p_value(50, 60, 0.35) == doctest::Approx(0.001738871024107379).epsilon(1e-12));
}

TEST_CASE("ks statistic for a clean 20-step shift is 0.2") {
  std::vector<double> a, b;
  for (int i = 1; i <= 100; ++i) {
    a.push_back(i);
    b.push_back(i + 20);
  }
  const KsResult r = ks_two_sample(a, b);
  CHECK(r.d == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(0.031376652153072552).epsilon(1e-9));
}

TEST_CASE("ks on identical samples reports no evidence") {
  std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
  const KsResult r = ks_two_sample(a, a);
  CHECK(r.d == 0.0);
  CHECK(r.p == 1.0);
}

TEST_CASE("ks separates far-apart samples") {
  std::vector<double> a, b;
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    a.push_back(rng.uniform());
    b.push_back(rng.uniform() + 10.0);
  }
  const KsResult r = ks_two_sample(a, b);
  CHECK(r.d == 1.0);
  CHECK(r.p < 1e-6);
}

TEST_CASE("ks accepts same-distribution samples at the 1% level") {
  std::vector<double> a, b;
  Rng rng(1234);
  for (int i = 0; i < 500; ++i) a.push_back(rng.uniform());
  for (int i = 0; i < 500; ++i) b.push_back(rng.uniform());
  CHECK(ks_two_sample(a, b).p > 0.01);
}

TEST_CASE("binomial CI half-width") {
  CHECK(binomial_ci_halfwidth(0.5, 300) ==
        doctest::Approx(1.96 * std::sqrt(0.25 / 300.0)).epsilon(1e-15));
  CHECK(binomial_ci_halfwidth(0.0, 100) == 0.0);
  CHECK_THROWS_AS(binomial_ci_halfwidth(0.5, 0), Error);
}

TEST_CASE("mean") {
  CHECK(mean({1.0, 2.0, 3.0}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(mean({}), Error);
}

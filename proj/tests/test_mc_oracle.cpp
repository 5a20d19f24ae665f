#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fracdrift/mc_oracle.hpp"

using namespace fracdrift;

namespace {

Endpoints run(double alpha, const DriftSpec& b, Point x0, std::int64_t n, int steps,
              std::uint64_t seed = 7, int workers = 0) {
  MCConfig c;
  c.n_paths = n;
  c.t = 1.0;
  c.h = 1.0 / steps;
  c.seed = seed;
  c.workers = workers;
  return simulate_endpoints(StableParams{alpha, static_cast<int>(x0.size())}, b, x0, c);
}

}  // namespace

TEST_CASE("positive stable sampler") {
  PathRng rng(1, 0);
  const int n = 1000000;
  double s = 0.0, s2 = 0.0;
  std::vector<double> a(100000);
  bool positive = true;
  for (int i = 0; i < n; ++i) {
    const double v = sample_positive_stable(0.5, rng);
    positive = positive && v > 0.0;
    const double e = std::exp(-v);
    s += e;
    s2 += e * e;
    if (i < static_cast<int>(a.size())) a[i] = v;
  }
  CHECK(positive);
  const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - std::exp(-1.0)) < 3 * se);

  // beta = 1/2 is the Levy law with cdf erfc(1 / (2 sqrt a))
  std::sort(a.begin(), a.end());
  const auto ks = ks_test(a, [](double v) { return std::erfc(0.5 / std::sqrt(v)); });
  CHECK(ks.p_value > 0.01);

  // another index through its Laplace transform at lambda = 2
  double t = 0.0;
  for (int i = 0; i < 200000; ++i) t += std::exp(-2.0 * sample_positive_stable(0.75, rng));
  CHECK(t / 200000 == doctest::Approx(std::exp(-std::pow(2.0, 0.75))).epsilon(5e-3));

  CHECK_THROWS_AS(sample_positive_stable(1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_positive_stable(0.0, rng), std::invalid_argument);
}

TEST_CASE("isotropic stable sampler") {
  PathRng rng(2, 0);
  const int n = 1000000;
  double v2 = 0.0;
  for (int i = 0; i < 200000; ++i) v2 += std::pow(sample_isotropic_stable(2.0, 1, rng)[0], 2);
  CHECK(v2 / 200000 == doctest::Approx(2.0).epsilon(0.02));

  // characteristic function at |xi| = 1
  const double xi[2] = {0.6, 0.8};
  double c = 0.0, c2 = 0.0;
  std::vector<double> p1, p2;
  for (int i = 0; i < n; ++i) {
    const auto x = sample_isotropic_stable(1.5, 2, rng);
    const double v = std::cos(xi[0] * x[0] + xi[1] * x[1]);
    c += v;
    c2 += v * v;
    if (i % 2 == 0 && p1.size() < 50000) p1.push_back(x[0]);
    if (i % 2 == 1 && p2.size() < 50000) p2.push_back((x[0] + x[1]) / std::numbers::sqrt2);
  }
  const double mean = c / n, se = std::sqrt((c2 / n - mean * mean) / n);
  CHECK(std::abs(mean - std::exp(-1.0)) < 3 * se);

  // isotropy: two projections of independent draws have one law
  std::sort(p1.begin(), p1.end());
  std::sort(p2.begin(), p2.end());
  CHECK(ks_test_2(p1, p2).p_value > 0.01);
}

TEST_CASE("driftless Euler scheme") {
  const StableParams P{1.5, 2};
  const Point x0 = {0.5, -0.3};

  SUBCASE("one step is exact") {
    const auto ep = run(1.5, zero_field(2), x0, 20000, 1);
    std::vector<double> rho(ep.size());
    for (std::size_t i = 0; i < rho.size(); ++i)
      rho[i] = std::hypot(ep[i][0] - x0[0], ep[i][1] - x0[1]);
    std::sort(rho.begin(), rho.end());
    const auto F = radial_cdf(P, 1.0, rho);
    std::size_t k = 0;
    const auto ks = ks_test(rho, [&](double) { return F[k++]; });
    CHECK(ks.p_value > 0.01);
  }

  SUBCASE("many steps reproduce the kernel") {
    const auto ep = run(1.5, zero_field(2), x0, 200000, 16);
    for (const Point y : {Point{0.5, -0.3}, Point{1.5, 0.2}, Point{-0.5, -1.0}}) {
      const auto k = kde_density(ep, y);
      REQUIRE(k.reliable);
      const double p = density(P, 1.0, Point{y[0] - x0[0], y[1] - x0[1]});
      CHECK(std::abs(k.value - p) <= 3 * k.error + k.bias_allowance);
    }
  }

  SUBCASE("radial cdf") {
    const double r[3] = {0.0, 1.0, 1e4};
    const auto F = radial_cdf(P, 1.0, r);
    CHECK(F[0] == 0.0);
    CHECK(F[2] == doctest::Approx(1.0).epsilon(1e-5));
    // d = 1 Cauchy: P(|X| <= 1) = (2/pi) atan(1)
    const double one[1] = {1.0};
    CHECK(radial_cdf(StableParams{1.0, 1}, 1.0, one)[0] == doctest::Approx(0.5).epsilon(1e-9));
  }
}

TEST_CASE("drift sign and determinism") {
  const Point x0 = {0.0, 0.0};
  // constant drift: X_1 = x0 + r b + S, symmetric about x0 + r b
  const auto ep = run(1.5, constant_field({1.0, 0.0}).with_r(0.5), x0, 40000, 1);
  std::vector<double> c(ep.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = ep[i][0];
  std::nth_element(c.begin(), c.begin() + c.size() / 2, c.end());
  CHECK(c[c.size() / 2] == doctest::Approx(0.5).epsilon(0.05));

  const auto b = rotational_field(1.5).with_r(0.3);
  const Point x1 = {1.0, 0.0};
  const auto ser = run(1.5, b, x1, 3000, 32, 11, 1);
  const auto par = run(1.5, b, x1, 3000, 32, 11, 4);
  CHECK(ser.coords == par.coords);
  CHECK(run(1.5, b, x1, 3000, 32, 12, 1).coords != ser.coords);
}

TEST_CASE("rotational field started at the origin is isotropic") {
  const Point o = {0.0, 0.0};
  const auto ep = run(1.5, rotational_field(1.5).with_r(0.5), o, 40000, 64);
  CHECK(angular_uniformity(ep, o).p_value > 0.01);
  // negative control: a constant drift breaks the symmetry
  const auto moved = run(1.5, constant_field({1.0, 0.0}), o, 40000, 4);
  CHECK(angular_uniformity(moved, o).p_value < 1e-6);
}

TEST_CASE("clipping is immaterial at small r") {
  const auto b = rotational_field(1.5).with_r(0.05);
  const Point x0 = {1.0, 0.0}, y = {0.3, 0.8};
  MCConfig c;
  c.n_paths = 100000;
  c.h = 1.0 / 64;
  const StableParams P{1.5, 2};
  const auto a = kde_density(simulate_endpoints(P, b, x0, c), y);
  c.drift_cap *= 0.5;
  const auto h = kde_density(simulate_endpoints(P, b, x0, c), y);
  CHECK(std::abs(a.value - h.value) < a.error);
}

TEST_CASE("kernel density estimate") {
  SUBCASE("degenerate spike") {
    Endpoints s{2, std::vector<double>(20, 0.0)};
    const double o[2] = {0.0, 0.0};
    CHECK_THROWS_AS(kde_density(s, o), std::invalid_argument);
    const auto k = kde_density(s, o, 0.1);
    CHECK(k.value == doctest::Approx(1.0 / (2 * std::numbers::pi * 0.01)));
  }

  SUBCASE("gaussian samples") {
    PathRng rng(5, 0);
    Endpoints s{1, std::vector<double>(1000000)};
    for (double& v : s.coords) v = rng.normal();
    const double o[1] = {0.0};
    const auto k = kde_density(s, o);
    CHECK(std::abs(k.value - 1.0 / std::sqrt(2 * std::numbers::pi)) <= 3 * k.error + k.bias_allowance);

    Endpoints lo{1, {s.coords.begin(), s.coords.begin() + 500000}};
    Endpoints hi{1, {s.coords.begin() + 500000, s.coords.end()}};
    const auto a = kde_density(lo, o, k.bandwidth), b = kde_density(hi, o, k.bandwidth);
    CHECK(std::abs(a.value - b.value) < 3 * std::hypot(a.error, b.error));

    const double far[1] = {50.0};
    CHECK_FALSE(kde_density(s, far).reliable);
  }
}

TEST_CASE("configuration") {
  MCConfig c;
  CHECK(c.steps() == 512);
  c.h = 0.3;
  CHECK(c.steps() == 4);
  c.h = 2.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.h = 0.1;
  c.drift_cap = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.drift_cap = 1.0;
  c.n_paths = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  const Point o = {0.0, 0.0};
  MCConfig ok;
  CHECK_THROWS_AS(simulate_endpoints(StableParams{2.0, 2}, zero_field(2), o, ok), std::invalid_argument);
  CHECK_THROWS_AS(simulate_endpoints(StableParams{1.5, 1}, zero_field(2), o, ok), std::invalid_argument);
}

TEST_CASE("coupled difference") {
  const StableParams P{1.5, 2};
  const Point x0 = {1.0, 0.0}, y = {0.3, 0.8};
  MCConfig c;
  c.n_paths = 20000;
  c.h = 1.0 / 16;
  const auto a = simulate_endpoints(P, rotational_field(1.5).with_r(0.05), x0, c);
  const auto b = simulate_endpoints(P, zero_field(2), x0, c);
  const auto ka = kde_density(a, y, 0.2), kb = kde_density(b, y, 0.2);
  const auto diff = kde_difference(a, b, y, 0.2);
  CHECK(diff.value == doctest::Approx(ka.value - kb.value).epsilon(1e-9));
  CHECK(diff.error < 0.2 * ka.error);
  CHECK(kde_difference(b, b, y, 0.2).value == 0.0);
  CHECK_THROWS_AS(kde_difference(a, Endpoints{2, {0.0, 0.0}}, y, 0.2), std::invalid_argument);
}

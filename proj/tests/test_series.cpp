#include <doctest.h>

#include <cmath>
#include <random>

#include "fracdrift/series.hpp"

using namespace fracdrift;

namespace {

using u128 = unsigned __int128;

std::vector<u128> motzkin_wide(int n) {
  std::vector<u128> m = {1, 1};
  for (int k = 2; k <= n; ++k) {
    u128 acc = m[k - 1];
    for (int j = 0; j <= k - 2; ++j) acc += m[j] * m[k - 2 - j];
    m.push_back(acc);
  }
  return m;
}

QuadConfig light() {
  QuadConfig q;
  q.angular_nodes = 48;
  q.radial_nodes = 12;
  q.split_grid = 128;
  q.grid = 256;
  return q;
}

}  // namespace

TEST_CASE("motzkin numbers") {
  CHECK(motzkin(0) == 1);
  CHECK(motzkin(1) == 1);
  CHECK(motzkin(4) == 9);
  CHECK(motzkin(6) == 51);
  CHECK(motzkin(10) == 2188);
  const auto wide = motzkin_wide(61);
  for (int n = 0; n <= 60; ++n) CHECK(wide[n + 1] <= 3 * wide[n]);
  int last = 0;
  for (int n = 0; n < 61; ++n) {
    std::uint64_t v = 0;
    try {
      v = motzkin(n);
    } catch (const std::overflow_error&) {
      break;
    }
    CHECK(static_cast<u128>(v) == wide[n]);
    last = n;
  }
  CHECK(last > 30);
  CHECK(wide[last + 1] > static_cast<u128>(UINT64_MAX));
  CHECK_THROWS_AS(motzkin(last + 1), std::overflow_error);
  CHECK_THROWS_AS(motzkin(-1), std::invalid_argument);
}

TEST_CASE("generating function") {
  CHECK(motzkin_gf(0.0) == 1.0);
  CHECK(motzkin_gf(1e-6) == doctest::Approx(1.000001).epsilon(1e-11));
  const auto wide = motzkin_wide(31);
  double partial = 0.0, xn = 1.0;
  for (int n = 0; n <= 30; ++n, xn *= 0.1) partial += static_cast<double>(wide[n]) * xn;
  CHECK(std::abs(motzkin_gf(0.1) - partial) < 1e-10);
  CHECK(std::isfinite(motzkin_gf(0.25)));
  CHECK(std::isfinite(motzkin_gf(eta_threshold())));
  CHECK_THROWS(motzkin_gf(1.0 / 3.0));
  CHECK_THROWS(motzkin_gf(-0.4));
}

TEST_CASE("tail bound") {
  CHECK(tail_bound(0.0, 5) == 0.0);
  CHECK(tail_bound(0.1, 5) == doctest::Approx(51e-6 / 0.7).epsilon(1e-12));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ue(0.01, 0.3);
  std::uniform_int_distribution<int> un(0, 12);
  const auto wide = motzkin_wide(20);
  for (int i = 0; i < 20; ++i) {
    const double eta = ue(rng);
    const int N = un(rng);
    double partial = 0.0;
    for (int n = 0; n <= N; ++n) partial += static_cast<double>(wide[n]) * std::pow(eta, n);
    CHECK(tail_bound(eta, N) >= motzkin_gf(eta) - partial - 1e-15);
  }
  CHECK_THROWS(tail_bound(1.0 / 3.0, 2));
}

TEST_CASE("comparability envelope") {
  const auto e = comparability_envelope(0.1);
  CHECK(e.upper == doctest::Approx(1.1252).epsilon(1e-4));
  CHECK(e.lower == doctest::Approx(0.8748).epsilon(1e-4));
  // eta = 0.05 against the partial sums of M_n eta^n
  const auto e5 = comparability_envelope(0.05);
  const auto wide = motzkin_wide(40);
  double sum = 0.0;
  for (int n = 0; n <= 40; ++n) sum += static_cast<double>(wide[n]) * std::pow(0.05, n);
  CHECK(e5.upper == doctest::Approx(sum).epsilon(1e-13));
  CHECK(e5.lower == doctest::Approx(2.0 - sum).epsilon(1e-13));
  CHECK(e5.upper == doctest::Approx(1.05556).epsilon(1e-5));
  // the closed forms of the lower line and of 2 - upper coincide
  const double eta = 0.2, s = std::sqrt(1 - 2 * eta - 3 * eta * eta);
  CHECK(comparability_envelope(eta).lower ==
        doctest::Approx((4 * eta * eta - 1 + eta + s) / (2 * eta * eta)).epsilon(1e-13));
  const auto tiny = comparability_envelope(1e-8);
  CHECK(tiny.upper == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(tiny.lower == doctest::Approx(1.0).epsilon(1e-7));
  // lower crosses zero at the threshold
  CHECK(comparability_envelope(eta_threshold() - 1e-9).lower < 1e-6);
  CHECK(eta_threshold() == doctest::Approx(0.30902).epsilon(1e-5));
  CHECK_THROWS(comparability_envelope(eta_threshold()));
  CHECK_THROWS(comparability_envelope(0.0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1e-6, eta_threshold() - 1e-6);
  for (int i = 0; i < 50; ++i) {
    const auto en = comparability_envelope(u(rng));
    CHECK(en.lower < 1.0);
    CHECK(en.upper > 1.0);
  }
}

TEST_CASE("p1 direct evaluator") {
  StableParams P{1.5, 2};
  const auto b = rotational_field(1.5).with_r(0.05);
  const auto q = light();
  const double o[2] = {0.0, 0.0};
  const double x[2] = {1.0, 0.0}, y[2] = {0.3, 0.8};

  CHECK(p1(P, zero_field(2), 1.0, x, y, q).value == 0.0);
  // rotation by pi maps the integrand to minus itself
  CHECK(std::abs(p1(P, b, 1.0, o, o, q).value) < 1e-12);
  // p_1(t,x,0) = -p_1^{(-b)}(t,0,x) by the adjoint relation, and p(t,0,.) is radial
  CHECK(std::abs(p1(P, b, 1.0, x, o, q).value) < 1e-10);

  const auto split = p1(P, b, 1.0, x, y, q);
  CHECK(split.value < 0.0);
  CHECK(split.error < 1e-3 * std::abs(split.value));
  // linear in r b
  CHECK(p1(P, b.negated(), 1.0, x, y, q).value == doctest::Approx(-split.value).epsilon(1e-12));

  // the naive form on (eps, t/2) approaches the split form as eps -> 0
  double prev_gap = 1.0;
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    const auto naive = p1(P, b, 1.0, x, y, q, {eps});
    const double gap = std::abs(naive.value - split.value);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 3e-4 * std::abs(split.value));

  CHECK_THROWS_AS(p1(P, radial_field(2), 1.0, x, y, q), std::invalid_argument);
  CHECK_THROWS_AS(p1(StableParams{2.0, 2}, b, 1.0, x, y, q), std::invalid_argument);
}

TEST_CASE("p2 split evaluator") {
  StableParams P{1.5, 2};
  const auto b = rotational_field(1.5);
  auto q = light();
  q.time_nodes = 4;
  const double x[2] = {1.0, 0.0}, y[2] = {0.3, 0.8};

  SplitEvaluator ev(P, b, q);
  // the spectral p1 field reproduces the cubature value
  const double cub = p1(P, b, 1.0, x, y, light()).value;
  CHECK(ev.p1_spectral(1.0, x, y) == doctest::Approx(cub).epsilon(1e-3));

  const auto v = ev.p2(1.0, x, y);
  CHECK(v.value > 0.0);
  // even in r b
  SplitEvaluator neg(P, b.negated(), q);
  CHECK(neg.p2(1.0, x, y).value == doctest::Approx(v.value).epsilon(1e-12));

  SplitEvaluator zero(P, zero_field(2), q);
  CHECK(zero.p2(1.0, x, y).value == 0.0);
}

TEST_CASE("Picard iteration") {
  StableParams P{1.5, 2};
  const auto b = rotational_field(1.5);
  auto q = light();
  const double x[2] = {1.0, 0.0};
  const std::vector<Point> ys = {{0.3, 0.8}, {-1.0, 0.5}, {2.0, 1.0}};

  SUBCASE("r = 0 returns p") {
    const auto res = duhamel_solve(P, b.with_r(0.0), 1.0, x, ys, q, 3);
    for (std::size_t j = 0; j < ys.size(); ++j) {
      CHECK(res.total(j) == res.terms[0][j].value);
      CHECK(res.terms[0][j].value == doctest::Approx(density(P, 1.0, Point{ys[j][0] - 1.0, ys[j][1]})));
    }
  }

  SUBCASE("first term matches cubature, serial equals parallel") {
    const auto res = duhamel_solve(P, b, 1.0, x, ys, q, 2);
    for (std::size_t j = 0; j < ys.size(); ++j) {
      const double cub = p1(P, b, 1.0, x, ys[j], q).value;
      CHECK(res.terms[1][j].value == doctest::Approx(cub).epsilon(2e-3));
    }
    auto qs = q;
    qs.workers = 1;
    const auto ser = duhamel_solve(P, b, 1.0, x, ys, qs, 2);
    for (std::size_t j = 0; j < ys.size(); ++j) CHECK(ser.terms[2][j].value == res.terms[2][j].value);
  }

  SUBCASE("adjoint relation") {
    const auto bw = b.with_r(0.1);
    const auto fwd = duhamel_solve(P, bw, 1.0, x, ys, q, 3);
    for (std::size_t j = 0; j < 2; ++j) {
      const auto back = duhamel_solve(P, bw.negated(), 1.0, ys[j], {Point{x[0], x[1]}}, q, 3);
      CHECK(back.total(0) == doctest::Approx(fwd.total(j)).epsilon(1e-4));
    }
  }

  SUBCASE("eta bookkeeping and divergence") {
    const auto res = duhamel_solve(P, b.with_r(0.05), 1.0, x, ys, q, 3, 1.0, {false});
    CHECK(res.converged);
    CHECK(res.eta == doctest::Approx(0.05));
    CHECK(res.tail_bound == doctest::Approx(tail_bound(0.05, 3)));
    CHECK(res.envelope.lower < 1.0);
    const auto wide = duhamel_solve(P, b.with_r(0.05), 1.0, x, ys, q, 1, 6.4, {false});
    CHECK_FALSE(wide.converged);
    CHECK(wide.upper_bound_only);
    CHECK_THROWS_AS(duhamel_solve(P, b.with_r(20.0), 1.0, x, ys, q, 4, 0.0, {false}),
                    NumericalError);
  }
}

TEST_CASE("calibration") {
  StableParams P{1.5, 2};
  auto q = light();
  q.time_nodes = 2;
  q.split_grid = 64;
  CHECK_THROWS_AS(calibrate_C(P, rotational_field(1.5), {}, q), std::invalid_argument);
  const std::vector<SamplePoint> one = {{1.0, {1.0, 0.0}, {0.3, 0.8}}};
  CHECK(calibrate_C(P, zero_field(2), one, q).c_hat == 0.0);
  // r is factored out
  const auto c = calibrate_C(P, rotational_field(1.5).with_r(0.01), one, q);
  const auto c1 = calibrate_C(P, rotational_field(1.5), one, q);
  CHECK(c.c_hat == doctest::Approx(c1.c_hat).epsilon(1e-12));
  auto two = one;
  two.push_back({1.0, {1.0, 0.0}, {-1.0, 0.5}});
  CHECK(calibrate_C(P, rotational_field(1.5), two, q).c_hat >= c1.c_hat);
  CHECK(c1.empirical_lower_estimate);
}

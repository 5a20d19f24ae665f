// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// An optional argument names a file that receives the same lines.
// Reference values are computed here from closed forms or independent
// quadrature, never read back from the library under test.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fracdrift/mc_oracle.hpp"
#include "fracdrift/series.hpp"
#include "fracdrift/verify.hpp"

using namespace fracdrift;
using std::numbers::pi;

namespace {

struct Outcome {
  bool passed = false;
  std::string summary;
};

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// p(t, x) by its radial Fourier integral at the given t, with no scale reduction:
//   d = 1: (1/pi) int_0^inf cos(r s) e^{-t s^alpha} ds
//   d = 2: (1/2pi) int_0^inf J_0(r s) e^{-t s^alpha} s ds
double fourier_density(double alpha, int dim, double t, double r) {
  const double top = std::pow(45.0 / t, 1.0 / alpha);  // e^{-t s^alpha} < 3e-20 beyond
  auto f = [&](double s) {
    const double damp = std::exp(-t * std::pow(s, alpha));
    return dim == 1 ? std::cos(r * s) * damp : std::cyl_bessel_j(0.0, r * s) * damp * s;
  };
  // panels of about one oscillation each
  const int panels = std::max(8, static_cast<int>(std::ceil(r * top / 3.0)));
  double sum = 0.0;
  for (int k = 0; k < panels; ++k)
    sum += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        f, top * k / panels, top * (k + 1) / panels, 8, 1e-14);
  return dim == 1 ? sum / pi : sum / (2.0 * pi);
}

Point random_point(std::mt19937_64& rng, int dim, double radius) {
  std::normal_distribution<double> g;
  Point p(dim);
  double n = 0.0;
  for (double& v : p) {
    v = g(rng);
    n += v * v;
  }
  for (double& v : p) v *= radius / std::sqrt(n);
  return p;
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
}

// ---------------------------------------------------------------------------

Outcome closed_forms() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (double alpha : {1.0, 2.0})
    for (int dim : {1, 2}) {
      const StableParams P{alpha, dim};
      for (int i = 0; i < 50; ++i) {
        const double t = log_uniform(rng, 1e-2, 1e2);
        // Gaussian points stay where the density is representable
        const double rho = alpha == 2.0 ? std::uniform_real_distribution<double>(0.0, 6.0)(rng)
                                        : log_uniform(rng, 1e-3, 1e3);
        const Point x = random_point(rng, dim, rho * std::pow(t, 1.0 / alpha));
        double r2 = 0.0;
        for (double v : x) r2 += v * v;
        const double exact = alpha == 1.0
                                 ? (dim == 1 ? t / (pi * (t * t + r2)) : t / (2.0 * pi * std::pow(t * t + r2, 1.5)))
                                 : std::pow(4.0 * pi * t, -0.5 * dim) * std::exp(-r2 / (4.0 * t));
        worst = std::max(worst, rel(density(P, t, x), exact));
      }
    }
  return {worst <= 1e-6, fmt("Cauchy and Gaussian, d = 1, 2, 200 points: max rel err %.2e (tol 1e-6)", worst)};
}

Outcome scaling() {
  std::mt19937_64 rng(202);
  double structural = 0.0, direct = 0.0;
  for (double alpha : {1.2, 1.5, 1.8})
    for (int i = 0; i < 100; ++i) {
      const int dim = 1 + i % 2;
      const StableParams P{alpha, dim};
      const double t = log_uniform(rng, 0.1, 10.0);
      const double rho = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
      const double s = std::pow(t, 1.0 / alpha);
      const Point x = random_point(rng, dim, rho * s);
      Point u = x;
      for (double& v : u) v /= s;
      const double rhs = std::pow(t, -dim / alpha) * density(P, 1.0, u);
      structural = std::max(structural, rel(density(P, t, x), rhs));
      // the left side from the Fourier integral at time t itself
      direct = std::max(direct, rel(fourier_density(alpha, dim, t, rho * s), rhs));
    }
  const double worst = std::max(structural, direct);
  return {worst <= 1e-8,
          fmt("300 points, alpha in {1.2,1.5,1.8}: library %.2e, Fourier integral at t %.2e (tol 1e-8)",
              structural, direct)};
}

Outcome gradient_identity() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  const double alphas[3] = {1.2, 1.5, 1.8};
  for (int i = 0; i < 100; ++i) {
    const double alpha = alphas[i % 3];
    const int dim = 1 + (i / 3) % 2;
    const StableParams P{alpha, dim};
    const double t = log_uniform(rng, 0.1, 10.0);
    const double s = std::pow(t, 1.0 / alpha);
    const Point x = random_point(rng, dim, std::uniform_real_distribution<double>(0.2, 5.0)(rng) * s);
    const Point g = gradient(P, t, x);
    double err = 0.0, norm = 0.0;
    for (int k = 0; k < dim; ++k) {
      // fourth-order central difference
      const double h = 1e-3 * s;
      auto at = [&](double off) {
        Point y = x;
        y[k] += off;
        return density(P, t, y);
      };
      const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      err += (g[k] - fd) * (g[k] - fd);
      norm += fd * fd;
    }
    worst = std::max(worst, std::sqrt(err / norm));
  }
  const auto& kc = kappa_calibration();
  const bool ok = worst <= 1e-4 && kc.max_relative_spread <= 1e-4;
  return {ok, fmt("dimension shift vs finite differences, 100 points: max rel err %.2e (tol 1e-4); "
                  "kappa = %.10g, spread %.2e over %g points (tol 1e-4)",
                  worst, kc.kappa, kc.max_relative_spread, static_cast<double>(kc.points))};
}

Outcome mixed_kernel() {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  for (int i = 0; i < 30; ++i) {
    const double alpha = 1.2 + 0.6 * (i % 4) / 3.0;
    const StableParams P{alpha, 2};
    const double t = log_uniform(rng, 0.3, 3.0);
    const double s = std::pow(t, 1.0 / alpha);
    const Point z = random_point(rng, 2, 0.5 * s);
    Point w = random_point(rng, 2, std::uniform_real_distribution<double>(0.3, 3.0)(rng) * s);
    for (int k = 0; k < 2; ++k) w[k] += z[k];
    const Point u = random_point(rng, 2, 1.0), v = random_point(rng, 2, 1.0);
    const double h = 1e-3 * s;
    auto p = [&](double a, double b) {
      const Point d = {w[0] + b * v[0] - z[0] - a * u[0], w[1] + b * v[1] - z[1] - a * u[1]};
      return density(P, t, d);
    };
    const double fd = (p(h, h) - p(h, -h) - p(-h, h) + p(-h, -h)) / (4 * h * h);
    worst = std::max(worst, rel(second_mixed_kernel(P, t, z, w, u, v), fd));
  }
  return {worst <= 1e-3, fmt("vs nested finite differences, 30 points: max rel err %.2e (tol 1e-3)", worst)};
}

Outcome inequality_sweeps() {
  std::vector<std::string> notes;
  bool ok = true;
  auto take = [&](const ConstantReport& r, int dim) {
    const bool good = r.stable_under_refinement && std::isfinite(r.value);
    ok = ok && good;
    notes.push_back(r.name + "(d=" + std::to_string(dim) + ")=" + fmt("%.4g", r.value) +
                    (good ? "" : fmt(" UNSTABLE->%.4g", r.refined_value)));
  };
  for (int dim : {1, 2}) {
    const StableParams P{1.5, dim};
    take(check_two_sided(P), dim);
    take(check_3p(P), dim);
    take(check_grad_bound(P), dim);
    // in d = 1 the only divergence-free fields are constant
    take(check_aux1(P, dim == 2 ? rotational_field(1.5) : constant_field({1.0})), dim);
  }
  const auto g3 = three_point_growth(StableParams{2.0, 2});
  const auto gg = grad_bound_growth(StableParams{2.0, 1});
  ok = ok && g3.growth_detected && gg.growth_detected;
  std::string s = "refinement-stable at alpha = 1.5:";
  for (const auto& n : notes) s += " " + n;
  s += fmt("; alpha = 2 controls grow: 3P %.3g -> %.3g, gradient %.3g -> %.3g", g3.ratio.front(), g3.ratio.back(),
           gg.ratio.front(), gg.ratio.back());
  return {ok, s};
}

Outcome aux2() {
  double worst = 0.0;
  std::string s;
  for (double alpha : {1.2, 1.5, 1.8}) {
    const auto rep = check_aux2(alpha, {0.5, 1.0, 10.0, 100.0});
    worst = std::max(worst, rep.detail("spread"));
    s += fmt(" C5(%.1f)=%.6g", alpha, rep.value);
  }
  return {worst < 5e-3, "t in {0.5,1,10,100}:" + s + fmt(", max spread %.2e (tol 5e-3)", worst)};
}

Outcome motzkin_checks() {
  // independent recurrence (n+2) M_n = (2n+1) M_{n-1} + 3(n-1) M_{n-2}, in long double
  std::vector<long double> M = {1.0L, 1.0L};
  for (int n = 2; n <= 400; ++n) M.push_back(((2 * n + 1) * M[n - 1] + 3.0L * (n - 1) * M[n - 2]) / (n + 2));
  bool ok = motzkin(4) == 9 && motzkin(10) == 2188;
  for (int n = 0; n <= 30; ++n) ok = ok && static_cast<long double>(motzkin(n)) == std::round(M[n]);
  double gf_err = 0.0;
  for (double x : {0.05, 0.1, 0.25}) {
    long double sum = 0.0L, p = 1.0L;
    for (int n = 0; n <= 400; ++n, p *= x) sum += M[n] * p;
    gf_err = std::max(gf_err, static_cast<double>(std::abs(sum - motzkin_gf(x))));
  }
  std::mt19937_64 rng(707);
  int dominated = 0;
  for (int i = 0; i < 20; ++i) {
    const double eta = std::uniform_real_distribution<double>(0.01, 0.3)(rng);
    const int N = 1 + static_cast<int>(rng() % 12);
    long double head = 0.0L, p = 1.0L;
    for (int n = 0; n <= N; ++n, p *= eta) head += M[n] * p;
    const double remainder = static_cast<double>(motzkin_gf(eta) - head);
    if (tail_bound(eta, N) >= remainder) ++dominated;
  }
  ok = ok && gf_err <= 1e-10 && dominated == 20;
  return {ok, fmt("M4 = %g, M10 = %g; generating function partial sums max err %.2e (tol 1e-10); "
                  "tail bound dominates %g/20",
                  static_cast<double>(motzkin(4)), static_cast<double>(motzkin(10)), gf_err, static_cast<double>(dominated))};
}

// ---------------------------------------------------------------------------
// Perturbed criteria share one calibration and one set of Picard solves.

struct Perturbed {
  StableParams params{1.5, 2};
  std::vector<Point> xs = {{1.0, 0.0}, {0.5, 0.5}, {-0.8, 0.3}, {0.0, -1.5}, {2.0, 0.5}};
  std::vector<Point> ys = {{0.3, 0.8}, {-1.0, 0.5}, {2.0, 1.0}, {-0.5, -1.0}, {1.2, -0.4}};
  QuadConfig quad;
  Calibration cal;
  double r = 0.0, eta = 0.0;
  std::vector<SeriesResult> rows;  // one Picard solve per x
};

Perturbed& perturbed() {
  static Perturbed P = [] {
    Perturbed s;
    // the split evaluator for p_2 is the expensive part: calibrate on the
  // diagonal pairs, so the bound is tested off the calibration sample too
    std::vector<SamplePoint> sample;
    for (std::size_t i = 0; i < s.xs.size(); ++i) sample.push_back({1.0, s.xs[i], s.ys[i]});
    s.cal = calibrate_C(s.params, rotational_field(1.5), sample, s.quad);
    s.r = 0.05 / s.cal.c_hat;
    s.eta = s.r * s.cal.c_hat;
    for (const auto& x : s.xs)
      s.rows.push_back(duhamel_solve(s.params, rotational_field(1.5).with_r(s.r), 1.0, x, s.ys, s.quad, 3, s.cal.c_hat));
    return s;
  }();
  return P;
}

Outcome series_consistency() {
  auto& S = perturbed();
  double p1_err = 0.0, p2_err = 0.0;
  for (std::size_t i = 0; i < S.xs.size(); ++i) {
    const auto& terms = S.rows[i].terms;
    p1_err = std::max(p1_err, rel(terms[1][i].value, S.r * S.cal.p1_unit[i].value));
    p2_err = std::max(p2_err, rel(terms[2][i].value, S.r * S.r * S.cal.p2_unit[i].value));
  }
  double worst = 0.0;  // max over n <= 3 and the 5x5 grid of |p_n| / (M_n C^n r^n p)
  for (const auto& row : S.rows)
    for (std::size_t j = 0; j < S.ys.size(); ++j)
      for (int n = 1; n <= 3; ++n) {
        const double bound = static_cast<double>(motzkin(n)) * std::pow(S.cal.c_hat * S.r, n) * row.terms[0][j].value;
        worst = std::max(worst, std::abs(row.terms[n][j].value) / bound);
      }
  const bool ok = p1_err <= 1e-2 && p2_err <= 1e-2 && worst <= 1.0;
  return {ok, fmt("eta = %.3g (C_hat = %.4g, r = %.4g): split vs Picard p1 %.2e, p2 %.2e (tol 1e-2); "
                  "max |p_n|/(M_n C^n r^n p) over n <= 3 and 5x5 grid = %.3g (must be <= 1)",
                  S.eta, S.cal.c_hat, S.r, p1_err, p2_err, worst)};
}

Outcome envelope() {
  auto& S = perturbed();
  const double tol = 1e-3;
  double lo = 1e300, hi = -1e300;
  for (const auto& row : S.rows)
    for (std::size_t j = 0; j < S.ys.size(); ++j) {
      const double q = row.total(j) / row.terms[0][j].value;
      lo = std::min(lo, q);
      hi = std::max(hi, q);
    }
  const auto env = comparability_envelope(S.eta);
  // r = 0: the ratio is exactly one
  const auto free = duhamel_solve(S.params, rotational_field(1.5).with_r(0.0), 1.0, S.xs[0], S.ys, S.quad, 3, S.cal.c_hat);
  bool exact = true;
  for (std::size_t j = 0; j < S.ys.size(); ++j) exact = exact && free.total(j) / free.terms[0][j].value == 1.0;
  const bool ok = lo >= 0.9441 - tol && hi <= 1.0559 + tol && exact;
  return {ok, fmt("p~/p over 5x5 grid in [%.5f, %.5f]; band [0.9441, 1.0559] +- 1e-3 (closed-form envelope [%.5f, %.5f]); ",
                  lo, hi, env.lower, env.upper) +
                  (exact ? "ratio == 1 at r = 0" : "ratio != 1 at r = 0")};
}

Outcome identities() {
  auto& S = perturbed();
  const Point x = S.xs[0], y = S.ys[0];
  const auto phi = space_time_bump({0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])}, 1.5, -1.0, 1.0);
  std::string s;
  bool ok = true;
  for (double r : {S.r, 0.0}) {
    PerturbedKernel k;
    k.params = S.params;
    k.drift = rotational_field(1.5).with_r(r);
    k.quad = S.quad;
    k.c_hat = S.cal.c_hat;
    const auto ck = check_chapman_kolmogorov(k, 0.5, 0.5, x, y);
    const auto mass = check_mass(k, 1.0, x, 3.0);
    const auto weak = check_weak_solution(k, phi, 0.0, x);
    // at r = 0 the residual is the floor itself; with drift, 5x the combined error
    const double factor = r > 0.0 ? 5.0 : 1.0;
    ok = ok && ck.passes(factor) && mass.passes(factor) && weak.passes(factor);
    s += fmt(r > 0.0 ? "eta = 0.05: CK %.2e/%.2e, " : "r = 0: CK %.2e/%.2e, ", ck.value, ck.error);
    s += fmt("mass %.2e/%.2e, ", mass.value, mass.error);
    s += fmt("weak %.2e/%.2e; ", weak.value, weak.error);
  }
  return {ok, "residual/error: " + s + "limit 5x error with drift, 1x at r = 0"};
}

Outcome monte_carlo() {
  auto& S = perturbed();
  MCConfig mc;
  mc.n_paths = 1000000;
  mc.h = 1.0 / 512.0;
  mc.seed = 11;
  const auto ep = simulate_endpoints(S.params, rotational_field(1.5).with_r(S.r), S.xs[0], mc);
  std::vector<KdeEstimate> kde;
  for (const auto& y : S.ys) kde.push_back(kde_density(ep, y));
  const auto agree = check_mc_agreement(S.rows[0], kde);
  double worst = 0.0;
  for (const auto& row : agree.rows) worst = std::max(worst, std::abs(row.series - row.mc.value) / row.allowed);

  MCConfig one = mc;
  one.h = 1.0;
  one.n_paths = 100000;
  const auto free = simulate_endpoints(S.params, zero_field(2), S.xs[0], one);
  std::vector<double> rho(free.size());
  for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = std::hypot(free[i][0] - S.xs[0][0], free[i][1] - S.xs[0][1]);
  std::sort(rho.begin(), rho.end());
  const auto F = radial_cdf(S.params, 1.0, rho);
  std::size_t idx = 0;
  const auto ks = ks_test(rho, [&](double) { return F[idx++]; });
  const bool ok = agree.passed && ks.p_value > 0.01;
  return {ok, fmt("10^6 Euler paths, h = 1/512: max |p~ - KDE| / (3 x combined error) = %.3g over 5 points; "
                  "one-step KS p-value %.3g (level 0.01)",
                  worst, ks.p_value)};
}

Outcome drift_module() {
  const StableParams P{1.5, 2};
  auto b = rotational_field(1.5);
  const auto div = divergence_residual_weak(b, bump_function({0.3, -0.2}, 1.0));
  const Point o = {0.0, 0.0};
  const auto kato = kato_modulus(b, P, 1.0, o);
  const auto cb = drift_kernel_bound(b, P, {0.25, 1.0, 4.0});
  const auto [lo, hi] = std::minmax_element(cb.per_t.begin(), cb.per_t.end());
  const double spread = *hi / *lo - 1.0;
  const bool ok = div.passes(1e-8) && kato.divergent && spread < 0.01;
  return {ok, fmt("weak divergence residual %.2e (scale %.2e); ", div.value, div.scale) +
                  "Kato modulus at 0: " + (kato.divergent ? "divergent (" + kato.rate + ")" : "finite") +
                  fmt("; C_b = %.5g, t-spread %.2e (tol 1e-2)", cb.value, spread)};
}

}  // namespace

int main(int argc, char** argv) {
  std::FILE* report = argc > 1 ? std::fopen(argv[1], "w") : nullptr;
  if (argc > 1 && !report) {
    std::fprintf(stderr, "cannot open %s\n", argv[1]);
    return 2;
  }
  auto emit = [&](const std::string& line) {
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    if (report) {
      std::fputs(line.c_str(), report);
      std::fflush(report);
    }
  };
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"closed-form oracles", closed_forms},
      {"scaling identity", scaling},
      {"gradient identity and kappa", gradient_identity},
      {"second mixed kernel", mixed_kernel},
      {"inequality sweeps", inequality_sweeps},
      {"aux2 integral", aux2},
      {"Motzkin numbers", motzkin_checks},
      {"series self-consistency", series_consistency},
      {"comparability envelope", envelope},
      {"identities", identities},
      {"Monte Carlo cross-validation", monte_carlo},
      {"drift module", drift_module},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.passed) ++failed;
    emit(fmt("%s %2zu %s: %s [%.1fs]\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].first, o.summary.c_str(), sec));
  }
  emit(fmt("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size()));
  if (report) std::fclose(report);
  return failed == 0 ? 0 : 1;
}

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace fracdrift {

/// A numeric value paired with a nonnegative error indication.
struct Estimate {
  double value = 0.0;
  double error = 0.0;
};

struct QuadRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule on [-1, 1]. Rules are cached per size; the returned
/// reference stays valid for the lifetime of the process.
const QuadRule& gauss_legendre(int n);

/// Gauss-Legendre rule mapped to [a, b].
QuadRule gauss_legendre(int n, double a, double b);

/// Result of a double-exponential integration of an N-vector integrand.
template <std::size_t N>
struct DEResult {
  std::array<double, N> value{};
  double error = 0.0;  // max componentwise difference between the last two levels
  int evaluations = 0;
};

/// Tanh-sinh quadrature of a vector integrand on (a, b).
///
/// The integrand is called as f(x, dl, dr) where dl = x - a and dr = b - x
/// are computed without cancellation, so integrands with endpoint
/// singularities can use the complement directly. Levels are refined by
/// step halving until every component's relative change drops below
/// 0.1 sqrt(rel_tol), at which point the error is of order rel_tol.
template <std::size_t N, class F>
DEResult<N> tanh_sinh(F&& f, double a, double b, double rel_tol = 1e-12,
                      int max_level = 8, double t_max = 4.0) {
  constexpr double half_pi = std::numbers::pi / 2;
  const double half = 0.5 * (b - a);
  DEResult<N> res;
  auto node = [&](double t, std::array<double, N>& acc) {
    const double u = half_pi * std::sinh(t);
    const double e = std::exp(-2.0 * std::abs(u));
    // distance to the nearer endpoint: half * (1 - tanh|u|) = half * 2e/(1+e)
    const double near = half * 2.0 * e / (1.0 + e);
    if (near <= 0.0) return;
    const double ch = std::cosh(u);
    const double w = half * half_pi * std::cosh(t) / (ch * ch);
    double dl, dr;
    if (t < 0) {
      dl = near;
      dr = (b - a) - near;
    } else {
      dr = near;
      dl = (b - a) - near;
    }
    const double x = t < 0 ? a + dl : b - dr;
    const auto v = f(x, dl, dr);
    ++res.evaluations;
    for (std::size_t i = 0; i < N; ++i) acc[i] += w * v[i];
  };

  double h = 0.5;
  std::array<double, N> sum{};
  for (double t = -t_max; t <= t_max + 1e-12; t += h) node(t, sum);
  std::array<double, N> prev{};
  for (std::size_t i = 0; i < N; ++i) prev[i] = sum[i] * h;
  for (int level = 1; level <= max_level; ++level) {
    h *= 0.5;
    for (double t = -t_max + h; t <= t_max; t += 2 * h) node(t, sum);
    std::array<double, N> cur{};
    double diff = 0.0;
    bool converged = true;
    for (std::size_t i = 0; i < N; ++i) {
      cur[i] = sum[i] * h;
      const double di = std::abs(cur[i] - prev[i]);
      diff = std::max(diff, di);
      // the error roughly squares per level, so the next-to-last difference
      // bounds the final error once it is below sqrt(rel_tol)
      if (di > 0.1 * std::sqrt(rel_tol) * std::abs(cur[i])) converged = false;
    }
    res.value = cur;
    res.error = diff;
    if (level >= 2 && converged) break;
    prev = cur;
  }
  return res;
}

/// Double-exponential quadrature on (0, inf) via v = exp((pi/2) sinh t).
/// Suited to integrands with algebraic behaviour at 0 and algebraic or faster
/// decay at infinity. The integrand is called as f(v).
template <std::size_t N, class F>
DEResult<N> exp_sinh(F&& f, double rel_tol = 1e-12, int max_level = 8,
                     double t_max = 4.5) {
  constexpr double half_pi = std::numbers::pi / 2;
  DEResult<N> res;
  auto node = [&](double t, std::array<double, N>& acc) {
    const double u = half_pi * std::sinh(t);
    const double v = std::exp(u);
    if (v == 0.0 || !std::isfinite(v)) return;
    const double w = v * half_pi * std::cosh(t);
    const auto val = f(v);
    ++res.evaluations;
    for (std::size_t i = 0; i < N; ++i) acc[i] += w * val[i];
  };
  double h = 0.5;
  std::array<double, N> sum{};
  for (double t = -t_max; t <= t_max + 1e-12; t += h) node(t, sum);
  std::array<double, N> prev{};
  for (std::size_t i = 0; i < N; ++i) prev[i] = sum[i] * h;
  for (int level = 1; level <= max_level; ++level) {
    h *= 0.5;
    for (double t = -t_max + h; t <= t_max; t += 2 * h) node(t, sum);
    std::array<double, N> cur{};
    double diff = 0.0;
    bool converged = true;
    for (std::size_t i = 0; i < N; ++i) {
      cur[i] = sum[i] * h;
      const double di = std::abs(cur[i] - prev[i]);
      diff = std::max(diff, di);
      // the error roughly squares per level, so the next-to-last difference
      // bounds the final error once it is below sqrt(rel_tol)
      if (di > 0.1 * std::sqrt(rel_tol) * std::abs(cur[i])) converged = false;
    }
    res.value = cur;
    res.error = diff;
    if (level >= 2 && converged) break;
    prev = cur;
  }
  return res;
}

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace fracdrift

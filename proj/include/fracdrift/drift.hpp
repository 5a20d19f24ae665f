#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fracdrift/config.hpp"
#include "fracdrift/stable_kernel.hpp"

namespace fracdrift {

/// A vector field b on R^dim, evaluated into a caller-provided buffer.
using FieldFn = std::function<void(std::span<const double> y, std::span<double> out)>;

struct DriftSpec {
  std::string name;
  int dim = 2;
  FieldFn field;
  double r = 1.0;  // perturbation strength; the equation carries r b
  bool claimed_divergence_free = false;
  std::vector<Point> singular_points;  // where |b| is unbounded
  std::optional<double> cb_estimate;   // empirical lower estimate of C_b

  Point operator()(std::span<const double> y) const;
  double magnitude(std::span<const double> y) const;
  /// Same field with r replaced.
  DriftSpec with_r(double r_new) const;
  /// The field -b (used by the adjoint relation).
  DriftSpec negated() const;
  void validate() const;
};

/// y -> (y2 |y|^{-alpha}, -y1 |y|^{-alpha}), alpha in (1,2).
DriftSpec rotational_field(double alpha);
DriftSpec zero_field(int dim);
DriftSpec constant_field(Point c);
/// Bounded, smooth, divergence-free: y -> g(|y|) (y2, -y1) with g(s) = e^{-s^2}.
DriftSpec smooth_rotational_field();
/// b(y) = y; not divergence-free. Negative control for the weak divergence test.
DriftSpec radial_field(int dim);

struct DivergenceResidual {
  double value = 0.0;      // int b . grad phi over |y - s| > eps at the smallest eps
  double error = 0.0;      // change between the two smallest exclusion radii plus quadrature
  double scale = 0.0;      // int |b . grad phi|, the natural size of the pairing
  std::vector<double> by_radius;  // value for each exclusion radius, largest first

  bool passes(double rel_tol) const { return std::abs(value) <= rel_tol * scale + error; }
};

/// Weak divergence pairing int b(y) . grad phi(y) dy in dim 1 or 2, computed
/// in polar coordinates about the first singular point (or phi's center)
/// with a shrinking exclusion ball.
DivergenceResidual divergence_residual_weak(const DriftSpec& spec, const TestFunction& phi,
                                            const QuadConfig& quad = {});

/// int p(t,x,y) |b(y)| dy (dim 1 or 2).
double kernel_field_integral(const DriftSpec& spec, const StableParams& params, double t,
                             std::span<const double> x, const QuadConfig& quad = {});

struct DriftKernelBound {
  double value = 0.0;  // max of t^{1-1/alpha} int p(t,x,y)|b(y)| dy over the sweep
  double worst_t = 0.0;
  Point worst_x;
  std::vector<double> per_t;  // max over the x grid, for each t
};

/// Sweeps t in t_list and x = t^{1/alpha} rho (cos theta, sin theta) for
/// rho in {0, 0.5, 1, 2, 4} and a few angles; stores the maximum in
/// spec.cb_estimate. The result is an empirical lower estimate of C_b.
DriftKernelBound drift_kernel_bound(DriftSpec& spec, const StableParams& params,
                                    const std::vector<double>& t_list,
                                    const QuadConfig& quad = {});

struct KatoModulus {
  bool divergent = false;
  double value = 0.0;           // the integral when finite
  double small_time_exponent;   // local exponent g of the integrand s^{-1/alpha} m(s) ~ s^g near 0
  std::string rate;             // "finite", "logarithmic" or "power"
  double rate_coefficient = 0.0;  // c in c log(1/eps) or c eps^{g+1}
};

/// int_0^t s^{-1/alpha} int p(s,x,y) |b(y)| dy ds, or a divergence report.
KatoModulus kato_modulus(const DriftSpec& spec, const StableParams& params, double t,
                         std::span<const double> x, const QuadConfig& quad = {});

}  // namespace fracdrift

#pragma once

#include <array>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fracdrift/quadrature.hpp"

namespace fracdrift {

using Point = std::vector<double>;

/// Raised when an iterative numerical procedure fails to reach its tolerance.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index alpha in (0, 2] and spatial dimension of an isotropic stable kernel.
struct StableParams {
  double alpha = 1.5;
  int dim = 1;

  /// Throws std::invalid_argument unless alpha is in (0,2] and dim >= 1.
  void validate() const;
  /// Additionally requires alpha in (1,2), the range of the perturbation theory.
  void validate_series() const;
};

// ---------------------------------------------------------------------------
// Unit-time radial profiles P_m(r) = p^{(m)}(1, x) with |x| = r.

/// Reference evaluator for the unit-time radial profile in dimensions m, m+2
/// and m+4, computed from the subordinated-Gaussian representation
///
///   p^{(m)}(1,r) = (1/pi) int_0^pi (4 pi c)^{-m/2} I_m(r^2 / 4c) dphi,
///   c = K(phi)^{(1-beta)/beta},  beta = alpha/2,
///
/// where K is Kanter's function and I_m is a smooth one-dimensional Laplace
/// type integral. All integrands are positive, so relative accuracy holds in
/// the far field as well.
std::array<double, 3> unit_profile_direct(double alpha, int m, double r,
                                          double rel_tol = 1e-12);

/// Convergent power series in r (alpha in (1,2]); accurate for small r.
double unit_profile_power_series(double alpha, int m, double r);

/// Far-field expansion sum_{k=1}^{terms} c_k r^{-m - alpha k} (alpha < 2).
double unit_profile_asymptotic(double alpha, int m, double r, int terms = 12);

/// Tabulated radial profiles for dimensions dim, dim+2, dim+4.
///
/// Profiles are stored as piecewise Chebyshev interpolants of log P_m on
/// graded panels; beyond the last panel the far-field expansion is used,
/// rescaled to match the table at the threshold shell. Evaluation is
/// thread-safe and allocation-free.
class StableKernel {
 public:
  StableKernel(double alpha, int dim);

  double alpha() const { return alpha_; }
  int dim() const { return dim_; }
  double far_field_threshold() const;
  double far_field_fit(int shift) const { return fit_[shift]; }

  /// P_{dim + 2 shift}(r), shift in {0,1,2}.
  double unit(int shift, double r) const;

  /// p^{(dim + 2 shift)}(t, x) for |x| = r.
  double at(int shift, double t, double r) const;

  double density(double t, double r) const { return at(0, t, r); }

 private:
  double alpha_;
  int dim_;
  int degree_;
  std::vector<double> breaks_;
  std::array<std::vector<double>, 3> coeffs_;  // panel-major Chebyshev coefficients
  std::array<double, 3> fit_{1.0, 1.0, 1.0};
};

/// Process-wide cache of kernels keyed by (alpha, dim).
const StableKernel& stable_kernel(double alpha, int dim);

// ---------------------------------------------------------------------------
// Public evaluators.

/// p^{(dim)}(t, x) = (2 pi)^{-d} int e^{-i x.xi} e^{-t |xi|^alpha} dxi.
double density(const StableParams& params, double t, std::span<const double> x);

/// Closed forms for alpha = 1 (Cauchy) and alpha = 2 (Gaussian).
double reference_density(const StableParams& params, double t,
                         std::span<const double> x);

/// Dimension-shift constant: grad p^{(d)}(t,x) = -kappa x p^{(d+2)}(t,x).
/// Calibrated once against finite differences of the reference evaluator.
double convention_constant();

struct KappaCalibration {
  double kappa = 0.0;
  double max_relative_spread = 0.0;  // max |kappa_i / kappa - 1| over the set
  int points = 0;
};
const KappaCalibration& kappa_calibration();

/// grad_x p^{(dim)}(t, x) via the dimension shift.
Point gradient(const StableParams& params, double t, std::span<const double> x);

/// u . grad_z ( v . grad_w p(t, z, w) ) with p(t, z, w) = p(t, w - z).
double second_mixed_kernel(const StableParams& params, double t,
                           std::span<const double> z, std::span<const double> w,
                           std::span<const double> u, std::span<const double> v);

struct ScaleReduction {
  Point unit_point;  // t^{-1/alpha} x
  double factor;     // t^{-dim/alpha}
};

/// density(t, x) == factor * density(1, unit_point).
ScaleReduction scale_reduce(const StableParams& params, double t,
                            std::span<const double> x);

// ---------------------------------------------------------------------------
// Test functions and the fractional Laplacian.

/// Smooth compactly supported function of (time, point).
struct TestFunction {
  std::function<double(double, std::span<const double>)> value;
  std::function<Point(double, std::span<const double>)> gradient;
  std::function<double(double, std::span<const double>)> time_derivative;
  Point center;              // spatial support is the ball |y - center| <= support_radius
  double support_radius = 1.0;
  double time_lo = -1e300;   // value vanishes for u outside [time_lo, time_hi]
  double time_hi = 1e300;
};

/// Radial C-infinity bump a * exp(1 - 1/(1 - |y-c|^2/R^2)), constant in time.
TestFunction bump_function(Point center, double radius, double amplitude = 1.0);

/// psi(u) * g(y) with psi a smooth bump supported on [u_lo, u_hi].
TestFunction space_time_bump(Point center, double radius, double u_lo, double u_hi,
                             double amplitude = 1.0);

struct FractionalLaplacianOptions {
  double h0 = 0.0;        // first step; 0 picks a default from the support radius
  int ladder = 6;         // number of halvings
  double rel_tol = 1e-6;  // convergence target of the extrapolated value
};

/// Delta^{alpha/2} phi(t_eval, x) as the Richardson-extrapolated limit of
/// (1/h) int p(h,x,y) (phi(y) - phi(x)) dy. Supports dim 1 and 2.
Estimate fractional_laplacian(const StableParams& params, const TestFunction& phi,
                              double t_eval, std::span<const double> x,
                              const FractionalLaplacianOptions& opts = {});

/// Spectral evaluation: multiplies the DFT of periodic samples by -|xi|^alpha.
/// `samples` is a one-dimensional grid of spacing dx.
std::vector<double> fractional_laplacian_spectral_1d(double alpha,
                                                     std::span<const double> samples,
                                                     double dx);

}  // namespace fracdrift

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fracdrift/config.hpp"
#include "fracdrift/drift.hpp"
#include "fracdrift/quadrature.hpp"
#include "fracdrift/spectral.hpp"
#include "fracdrift/stable_kernel.hpp"

namespace fracdrift {

// ---------------------------------------------------------------------------
// Motzkin numbers and the comparability envelope.

/// M_0 = M_1 = 1, M_n = M_{n-1} + sum_{k=0}^{n-2} M_k M_{n-2-k}. Throws
/// std::overflow_error when M_n does not fit in 64 bits.
std::uint64_t motzkin(int n);

/// sum_n M_n x^n = (1 - x - sqrt(1 - 2x - 3x^2)) / (2 x^2), |x| < 1/3.
double motzkin_gf(double x);

/// (sqrt 5 - 1)/4: below it the lower envelope coefficient is positive.
double eta_threshold();

/// Upper bound on sum_{n > N} M_n eta^n from M_{n+1} <= 3 M_n.
double tail_bound(double eta, int N);

struct Envelope {
  double lower = 1.0;
  double upper = 1.0;
};

/// Coefficients with lower p <= p_tilde <= upper p when eta = r C < eta_threshold().
Envelope comparability_envelope(double eta);

// ---------------------------------------------------------------------------
// Direct evaluation of the first two terms.

struct P1Options {
  /// Evaluate s in (eps, t/2) without moving the gradient (the naive form).
  /// Only meaningful as a consistency check; eps = 0 selects the split form.
  double naive_eps = 0.0;
};

/// p_1(t,x,y) = int_0^t int p(t-s,x,z) r b(z) . grad_z p(s,z,y) dz ds by
/// physical-space cubature. On s in (0,t/2) the gradient is moved onto the
/// left factor. Requires a divergence-free drift, d in {1,2}.
Estimate p1(const StableParams& params, const DriftSpec& drift, double t,
            std::span<const double> x, std::span<const double> y, const QuadConfig& quad = {},
            const P1Options& opt = {});

/// Spectral evaluator of p_2 by the three-region split of the time simplex
/// {0 < u < v < t} (u: end of the first leg, v: end of the second):
///   A: v < t/2, inner p_1(v,x,.) paired with r b . grad p(t-v,.,y);
///   B: u > t/2, -grad p(u,x,.) . r b paired with p_1(t-u,.,y);
///   C: u < t/2 < v, the second mixed kernel applied through its symbol
///      k_i k_j e^{-(v-u)|k|^alpha} between r b p(u,x,.) and r b p(t-v,.,y).
/// Narrow kernels at short times are split into the drift frozen at the
/// kernel's center (transformed analytically) plus a sampled remainder.
/// Only d = 2. Fields of p_1 are cached per (t, point).
class SplitEvaluator {
 public:
  SplitEvaluator(const StableParams& params, const DriftSpec& drift, const QuadConfig& quad = {});
  ~SplitEvaluator();

  Estimate p2(double t, std::span<const double> x, std::span<const double> y);
  /// Spectral p_1(t, x, .) evaluated at y (cross-check of the cubature value).
  double p1_spectral(double t, std::span<const double> x, std::span<const double> y);

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

Estimate p2(const StableParams& params, const DriftSpec& drift, double t,
            std::span<const double> x, std::span<const double> y, const QuadConfig& quad = {});

// ---------------------------------------------------------------------------
// Picard iteration of the Duhamel identity.

struct SeriesResult {
  std::vector<Point> points;                 // evaluation points y
  std::vector<std::vector<Estimate>> terms;  // terms[n][j] = p_n(t, x, y_j), n = 0..N
  double eta = 0.0;                          // r C_hat
  double tail_bound = 0.0;                   // bound on sum_{n > N} M_n eta^n
  Envelope envelope;
  bool converged = false;                    // eta < eta_threshold()
  bool upper_bound_only = false;             // eta_threshold() <= eta < 1/3
  double resolution = 0.0;                   // dt (pi/h)^alpha; below ~10 the first step is under-resolved

  double total(std::size_t j) const;  // sum_n terms[n][j]
};

/// Time-marching data of one Picard solve, kept for the verification checks.
struct PicardFields {
  std::shared_ptr<SpectralGrid> grid;
  std::vector<double> times;               // tau_0 = 0 < tau_1 < ... < tau_J = t
  std::vector<RealField> total;            // p_tilde(tau_j, x, .) for j >= 1 (index 0 unused)
  std::vector<ComplexField> term_hat;      // p_n(t, x, .) spectra, n = 0..N
  std::shared_ptr<PicardFields> coarse;    // the doubled-step run (same grid), if computed

  /// Spectrum of sum_n p_n(t, x, .).
  ComplexField total_hat() const;
};

struct PicardOptions {
  bool keep_history = false;  // fill PicardFields::total
  bool error_estimate = true; // repeat with doubled step for per-term errors
  double box = 0.0;           // grid half-width; 0 selects quad.half_width t^{1/alpha}
};

/// p_tilde^{(k+1)}(t,x,.) = p + r int_0^t int p_tilde^{(k)}(t-s,x,z) b(z) . grad_z p(s,z,.) dz ds
/// on a periodic spectral grid of half-width quad.half_width t^{1/alpha}. In the
/// forward variable the gradient sits on the kernel side, so the step is
///   u_n(tau) = -r div int_0^tau e^{(tau-s) Delta^{alpha/2}} (b u_{n-1}(s)) ds,
/// integrated exactly in time for piecewise-linear b u_{n-1}; the first step
/// freezes b at x. c_hat feeds eta; pass 0 if uncalibrated (converged is then false).
/// Throws NumericalError if max_j |p_n|/p grows for two consecutive n.
SeriesResult duhamel_solve(const StableParams& params, const DriftSpec& drift, double t,
                           std::span<const double> x, const std::vector<Point>& y_grid,
                           const QuadConfig& quad, int n_iter, double c_hat = 0.0,
                           const PicardOptions& opt = {}, PicardFields* fields = nullptr);

struct SamplePoint {
  double t;
  Point x, y;
};
struct Calibration {
  double c_hat = 0.0;
  double c1 = 0.0;  // max |p1|/p
  double c2 = 0.0;  // max |p2|/(2p)
  bool empirical_lower_estimate = true;
  std::vector<Estimate> p1_unit, p2_unit;  // per sample point, at r = 1 (p_n scales as r^n)
};
/// C_hat = max_s |p1|/p + sqrt(max_s |p2|/(M_2 p)) over the sample, at r = 1.
/// An empirical lower estimate of the constant in |p_n| <= M_n C^n p.
Calibration calibrate_C(const StableParams& params, const DriftSpec& drift,
                        const std::vector<SamplePoint>& sample, const QuadConfig& quad = {});

}  // namespace fracdrift

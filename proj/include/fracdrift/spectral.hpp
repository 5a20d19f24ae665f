#pragma once

#include <complex>
#include <span>
#include <vector>

#include "fracdrift/stable_kernel.hpp"

namespace fracdrift {

using RealField = std::vector<double>;                  // n x n, row-major (index i * n + j, y = (x_i, x_j))
using ComplexField = std::vector<std::complex<double>>;  // n x (n/2 + 1) half spectrum

/// Periodic n x n grid on [-L, L)^2 with cell-centred nodes x_i = -L + (i + 1/2) h,
/// so the node set is symmetric under y -> -y.
///
/// Spectral coefficients use the continuous-transform scaling
///   c(k) = h^2 sum_j f(y_j) e^{-i k . y_j}  ~  int f(y) e^{-i k . y} dy,
/// so analytic transforms (e.g. of shifted stable kernels) can be mixed with
/// transformed samples. Nyquist modes are discarded.
class SpectralGrid {
 public:
  SpectralGrid(int n, double half_width);
  ~SpectralGrid();
  SpectralGrid(const SpectralGrid&) = delete;
  SpectralGrid& operator=(const SpectralGrid&) = delete;

  int n() const { return n_; }
  int nk() const { return n_ / 2 + 1; }
  double half_width() const { return L_; }
  double spacing() const { return h_; }
  double node(int i) const { return -L_ + (i + 0.5) * h_; }
  std::size_t real_size() const { return static_cast<std::size_t>(n_) * n_; }
  std::size_t spectral_size() const { return static_cast<std::size_t>(n_) * nk(); }

  /// Wavenumbers of spectral index (a, b): a in [0,n) along the first axis, b in [0, n/2].
  double k1(int a) const { return kx_[a]; }
  double k2(int b) const { return ky_[b]; }

  ComplexField forward(const RealField& f) const;
  RealField inverse(const ComplexField& c) const;

  /// sum_j h^2 f_j g_j evaluated in spectral space.
  double inner(const ComplexField& a, const ComplexField& b) const;
  /// Trigonometric interpolant at an arbitrary point.
  double evaluate(const ComplexField& c, std::span<const double> y) const;

  /// Analytic transform of p(tau, . - center): e^{-i k.c - tau |k|^alpha}.
  ComplexField kernel_hat(double alpha, double tau, std::span<const double> center) const;

  /// Samples of p(tau, y - center) on the nodes (whole-space kernel, not periodised).
  RealField sample_kernel(const StableKernel& k, double tau, std::span<const double> center,
                          bool parallel = true) const;

 private:
  int n_;
  double L_, h_;
  std::vector<double> kx_, ky_;
  std::vector<std::complex<double>> phase_x_, phase_y_;  // e^{-i k x_0} per axis
  void* plan_fwd_;
  void* plan_inv_;
};

/// Smooth radial cutoff equal to 1 for |y| <= a and 0 for |y| >= b.
double radial_taper(double rho, double a, double b);

}  // namespace fracdrift

#include "fracdrift/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace fracdrift {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

SpectralGrid::SpectralGrid(int n, double half_width) : n_(n), L_(half_width) {
  if (n < 8 || n % 2 != 0) throw std::invalid_argument("SpectralGrid: n must be even and >= 8");
  if (!(half_width > 0.0)) throw std::invalid_argument("SpectralGrid: half_width must be positive");
  h_ = 2.0 * L_ / n_;
  const double dk = std::numbers::pi / L_;
  const double x0 = node(0);
  kx_.resize(n_);
  phase_x_.resize(n_);
  for (int a = 0; a < n_; ++a) {
    kx_[a] = dk * (a < n_ / 2 ? a : a - n_);
    phase_x_[a] = std::polar(1.0, -kx_[a] * x0);
  }
  ky_.resize(nk());
  phase_y_.resize(nk());
  for (int b = 0; b < nk(); ++b) {
    ky_[b] = dk * b;
    phase_y_[b] = std::polar(1.0, -ky_[b] * x0);
  }
  RealField r(real_size());
  ComplexField c(spectral_size());
  std::lock_guard lock(planner_mutex());
  plan_fwd_ = fftw_plan_dft_r2c_2d(n_, n_, r.data(), reinterpret_cast<fftw_complex*>(c.data()),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  plan_inv_ = fftw_plan_dft_c2r_2d(n_, n_, reinterpret_cast<fftw_complex*>(c.data()), r.data(),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!plan_fwd_ || !plan_inv_) throw std::runtime_error("SpectralGrid: FFT planning failed");
}

SpectralGrid::~SpectralGrid() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
}

ComplexField SpectralGrid::forward(const RealField& f) const {
  if (f.size() != real_size()) throw std::invalid_argument("SpectralGrid::forward: size mismatch");
  RealField in = f;  // FFTW may use the input as scratch
  ComplexField c(spectral_size());
  fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_fwd_), in.data(),
                       reinterpret_cast<fftw_complex*>(c.data()));
  const int m = nk();
  const double h2 = h_ * h_;
  for (int a = 0; a < n_; ++a)
    for (int b = 0; b < m; ++b) {
      auto& v = c[static_cast<std::size_t>(a) * m + b];
      if (a == n_ / 2 || b == n_ / 2)
        v = 0.0;
      else
        v *= h2 * phase_x_[a] * phase_y_[b];
    }
  return c;
}

RealField SpectralGrid::inverse(const ComplexField& c) const {
  if (c.size() != spectral_size())
    throw std::invalid_argument("SpectralGrid::inverse: size mismatch");
  const int m = nk();
  const double s = 1.0 / (static_cast<double>(n_) * n_ * h_ * h_);
  ComplexField tmp(spectral_size());
  for (int a = 0; a < n_; ++a)
    for (int b = 0; b < m; ++b) {
      const std::size_t i = static_cast<std::size_t>(a) * m + b;
      tmp[i] = (a == n_ / 2 || b == n_ / 2) ? 0.0 : c[i] * std::conj(phase_x_[a] * phase_y_[b]) * s;
    }
  RealField out(real_size());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(plan_inv_), reinterpret_cast<fftw_complex*>(tmp.data()),
                       out.data());
  return out;
}

double SpectralGrid::inner(const ComplexField& x, const ComplexField& y) const {
  const int m = nk();
  std::vector<double> rows(n_, 0.0);
#pragma omp parallel for schedule(static)
  for (int a = 0; a < n_; ++a) {
    double acc = 0.0;
    for (int b = 0; b < m; ++b) {
      const std::size_t i = static_cast<std::size_t>(a) * m + b;
      const double w = b == 0 ? 1.0 : 2.0;
      acc += w * (x[i].real() * y[i].real() + x[i].imag() * y[i].imag());
    }
    rows[a] = acc;
  }
  double total = 0.0;
  for (double v : rows) total += v;
  return total / (static_cast<double>(n_) * n_ * h_ * h_);
}

double SpectralGrid::evaluate(const ComplexField& c, std::span<const double> y) const {
  const int m = nk();
  std::vector<std::complex<double>> ex(n_), ey(m);
  for (int a = 0; a < n_; ++a) ex[a] = std::polar(1.0, kx_[a] * y[0]);
  for (int b = 0; b < m; ++b) ey[b] = std::polar(1.0, ky_[b] * y[1]);
  double total = 0.0;
  for (int a = 0; a < n_; ++a) {
    double acc = 0.0;
    for (int b = 0; b < m; ++b) {
      const double w = b == 0 ? 1.0 : 2.0;
      acc += w * (c[static_cast<std::size_t>(a) * m + b] * ex[a] * ey[b]).real();
    }
    total += acc;
  }
  return total / (static_cast<double>(n_) * n_ * h_ * h_);
}

ComplexField SpectralGrid::kernel_hat(double alpha, double tau,
                                      std::span<const double> center) const {
  const int m = nk();
  ComplexField c(spectral_size());
#pragma omp parallel for schedule(static)
  for (int a = 0; a < n_; ++a)
    for (int b = 0; b < m; ++b) {
      if (a == n_ / 2 || b == n_ / 2) continue;
      const double k2 = kx_[a] * kx_[a] + ky_[b] * ky_[b];
      const double decay = tau * std::pow(k2, 0.5 * alpha);
      if (decay > 745.0) continue;
      c[static_cast<std::size_t>(a) * m + b] =
          std::polar(std::exp(-decay), -(kx_[a] * center[0] + ky_[b] * center[1]));
    }
  return c;
}

RealField SpectralGrid::sample_kernel(const StableKernel& k, double tau,
                                      std::span<const double> center, bool parallel) const {
  RealField f(real_size());
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j) {
      const double d1 = node(i) - center[0], d2 = node(j) - center[1];
      f[static_cast<std::size_t>(i) * n_ + j] = k.at(0, tau, std::hypot(d1, d2));
    }
  return f;
}

double radial_taper(double rho, double a, double b) {
  if (rho <= a) return 1.0;
  if (rho >= b) return 0.0;
  const double s = (rho - a) / (b - a);
  const double f0 = std::exp(-1.0 / (1.0 - s)), f1 = std::exp(-1.0 / s);
  return f0 / (f0 + f1);
}

}  // namespace fracdrift

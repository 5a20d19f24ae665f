#include "fracdrift/stable_kernel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>

namespace fracdrift {

namespace {

constexpr double kPi = std::numbers::pi;

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

double gaussian_profile(int m, double r) {
  return std::pow(4.0 * kPi, -0.5 * m) * std::exp(-0.25 * r * r);
}

}  // namespace

void StableParams::validate() const {
  if (!(alpha > 0.0 && alpha <= 2.0)) {
    std::ostringstream os;
    os << "alpha=" << alpha << " outside (0,2]";
    throw std::invalid_argument(os.str());
  }
  if (dim < 1) throw std::invalid_argument("dim must be >= 1");
}

void StableParams::validate_series() const {
  validate();
  if (!(alpha > 1.0 && alpha < 2.0)) {
    std::ostringstream os;
    os << "alpha=" << alpha << " outside (1,2) required by the perturbation series";
    throw std::invalid_argument(os.str());
  }
}

// ---------------------------------------------------------------------------
// Reference evaluator.

std::array<double, 3> unit_profile_direct(double alpha, int m, double r,
                                          double rel_tol) {
  if (alpha == 2.0)
    return {gaussian_profile(m, r), gaussian_profile(m + 2, r),
            gaussian_profile(m + 4, r)};
  const double beta = 0.5 * alpha;
  const double delta = (1.0 - beta) / beta;
  const double gamma = 1.0 / delta;
  const double half_m = 0.5 * m;
  const double r2 = r * r;

  auto outer = [&](double phi, double dl, double dr) -> std::array<double, 3> {
    const double sin_phi = dl < dr ? std::sin(dl) : std::sin(dr);
    const double log_k = std::log(std::sin((1.0 - beta) * phi)) +
                         beta / (1.0 - beta) * std::log(std::sin(beta * phi)) -
                         std::log(sin_phi) / (1.0 - beta);
    const double log_c = delta * log_k;
    const double k = r2 * 0.25 * std::exp(-log_c);
    // v = s w with s near the mode of the integrand
    const double a = gamma + half_m;
    const double s = a / (a + k);
    const double ls = std::log(s);
    auto inner = exp_sinh<3>(
        [&](double w) -> std::array<double, 3> {
          const double v = s * w;
          const double e =
              std::exp((a - 1.0) * (ls + std::log(w)) - std::pow(v, gamma) - k * v);
          return {e, e * v, e * v * v};
        },
        1e-1 * rel_tol, 8, 3.2);
    for (double& x : inner.value) x *= s;
    const double log4pic = std::log(4.0 * kPi) + log_c;
    std::array<double, 3> out{};
    for (int j = 0; j < 3; ++j)
      out[j] = gamma * inner.value[j] * std::exp(-(half_m + j) * log4pic);
    return out;
  };
  auto res = tanh_sinh<3>(outer, 0.0, kPi, rel_tol, 10);
  for (double& v : res.value) v /= kPi;
  return res.value;
}

double unit_profile_power_series(double alpha, int m, double r) {
  if (!(alpha > 1.0 && alpha <= 2.0))
    throw std::invalid_argument("power series requires alpha in (1,2]");
  long double sum = 0.0L;
  const long double x = 0.25L * r * r;
  const long double lx = x > 0 ? std::log(x) : -1e300L;
  for (int k = 0; k < 400; ++k) {
    const long double lt = std::lgamma((2.0L * k + m) / alpha) - std::lgamma(k + 1.0L) -
                           std::lgamma(k + 0.5L * m) + (k > 0 ? k * lx : 0.0L);
    const long double term = std::exp(lt);
    sum += (k % 2 ? -term : term);
    if (k > 4 && term < 1e-22L * std::abs(sum)) break;
    if (x == 0) break;
  }
  return static_cast<double>(2.0L / alpha * std::pow(4.0L * kPi, -0.5L * m) * sum);
}

double unit_profile_asymptotic(double alpha, int m, double r, int terms) {
  if (!(alpha > 0.0 && alpha < 2.0))
    throw std::invalid_argument("asymptotic expansion requires alpha in (0,2)");
  const double pref = std::pow(kPi, -(0.5 * m + 1.0));
  double sum = 0.0;
  double prev_mag = INFINITY;
  for (int k = 1; k <= terms; ++k) {
    const double lmag = -std::lgamma(k + 1.0) + alpha * k * std::log(2.0) +
                        std::lgamma(0.5 * alpha * k + 1.0) +
                        std::lgamma(0.5 * (alpha * k + m)) -
                        (alpha * k + m) * std::log(r);
    const double s = std::sin(0.5 * kPi * alpha * k);
    const double mag = std::exp(lmag);
    if (mag > prev_mag) break;  // optimal truncation
    prev_mag = mag;
    sum += (k % 2 ? 1.0 : -1.0) * s * mag;
  }
  return pref * sum;
}

// ---------------------------------------------------------------------------
// Tabulated kernel.

namespace {

const std::vector<double>& panel_breaks() {
  static const std::vector<double> b = {0.0, 0.25, 0.5, 0.75, 1.0,  1.5,  2.0,  3.0,
                                        4.0, 6.0,  8.0, 12.0, 16.0, 24.0, 32.0, 48.0,
                                        64.0, 96.0, 128.0, 192.0, 256.0, 384.0, 512.0};
  return b;
}

}  // namespace

StableKernel::StableKernel(double alpha, int dim)
    : alpha_(alpha), dim_(dim), degree_(18), breaks_(panel_breaks()) {
  StableParams{alpha, dim}.validate();
  if (alpha == 2.0) return;
  const int n = degree_;
  const int panels = static_cast<int>(breaks_.size()) - 1;
  for (auto& c : coeffs_) c.assign(static_cast<std::size_t>(panels) * n, 0.0);
  std::vector<std::array<double, 3>> vals(static_cast<std::size_t>(panels) * n);
#pragma omp parallel for schedule(dynamic)
  for (int idx = 0; idx < panels * n; ++idx) {
    const int p = idx / n, j = idx % n;
    const double a = breaks_[p], b = breaks_[p + 1];
    const double u = std::cos(kPi * (j + 0.5) / n);
    vals[idx] = unit_profile_direct(alpha, dim, 0.5 * (a + b) + 0.5 * (b - a) * u);
  }
  for (int p = 0; p < panels; ++p) {
    for (int s = 0; s < 3; ++s) {
      for (int k = 0; k < n; ++k) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j)
          acc += std::log(vals[static_cast<std::size_t>(p) * n + j][s]) * std::cos(kPi * k * (j + 0.5) / n);
        coeffs_[s][static_cast<std::size_t>(p) * n + k] = (k == 0 ? 1.0 : 2.0) * acc / n;
      }
    }
  }
  const double rmax = breaks_.back();
  for (int s = 0; s < 3; ++s) {
    // evaluate the last panel at its right end and match the far-field form
    const double* c = &coeffs_[s][static_cast<std::size_t>(panels - 1) * n];
    double b1 = 0.0, b2 = 0.0;
    const double u = 1.0;
    for (int k = n - 1; k >= 1; --k) {
      const double b0 = 2.0 * u * b1 - b2 + c[k];
      b2 = b1;
      b1 = b0;
    }
    const double table_end = std::exp(u * b1 - b2 + c[0]);
    fit_[s] = table_end / unit_profile_asymptotic(alpha, dim + 2 * s, rmax);
  }
}

double StableKernel::far_field_threshold() const { return breaks_.back(); }

double StableKernel::unit(int shift, double r) const {
  if (alpha_ == 2.0) return gaussian_profile(dim_ + 2 * shift, r);
  if (r >= breaks_.back())
    return fit_[shift] * unit_profile_asymptotic(alpha_, dim_ + 2 * shift, r);
  const auto it = std::upper_bound(breaks_.begin(), breaks_.end(), r);
  const int p = static_cast<int>(it - breaks_.begin()) - 1;
  const double a = breaks_[p], b = breaks_[p + 1];
  const double u = (2.0 * r - a - b) / (b - a);
  const int n = degree_;
  const double* c = &coeffs_[shift][static_cast<std::size_t>(p) * n];
  double b1 = 0.0, b2 = 0.0;
  for (int k = n - 1; k >= 1; --k) {
    const double b0 = 2.0 * u * b1 - b2 + c[k];
    b2 = b1;
    b1 = b0;
  }
  return std::exp(u * b1 - b2 + c[0]);
}

double StableKernel::at(int shift, double t, double r) const {
  const double scale = std::pow(t, -1.0 / alpha_);
  return std::pow(scale, dim_ + 2 * shift) * unit(shift, r * scale);
}

const StableKernel& stable_kernel(double alpha, int dim) {
  static std::mutex mu;
  static std::map<std::pair<double, int>, std::unique_ptr<StableKernel>> cache;
  std::unique_lock lock(mu);
  auto& slot = cache[{alpha, dim}];
  if (!slot) slot = std::make_unique<StableKernel>(alpha, dim);
  return *slot;
}

// ---------------------------------------------------------------------------
// Public evaluators.

double density(const StableParams& params, double t, std::span<const double> x) {
  params.validate();
  if (!(t > 0.0)) throw std::invalid_argument("density: t must be positive");
  if (static_cast<int>(x.size()) != params.dim)
    throw std::invalid_argument("density: point dimension mismatch");
  return stable_kernel(params.alpha, params.dim).density(t, norm(x));
}

double reference_density(const StableParams& params, double t,
                         std::span<const double> x) {
  params.validate();
  if (!(t > 0.0)) throw std::invalid_argument("reference_density: t must be positive");
  const double d = params.dim;
  const double r2 = std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
  if (params.alpha == 1.0)
    return std::tgamma(0.5 * (d + 1)) * std::pow(kPi, -0.5 * (d + 1)) * t *
           std::pow(t * t + r2, -0.5 * (d + 1));
  if (params.alpha == 2.0)
    return std::pow(4.0 * kPi * t, -0.5 * d) * std::exp(-r2 / (4.0 * t));
  throw std::invalid_argument("reference_density: closed form only for alpha in {1,2}");
}

namespace {

KappaCalibration calibrate_kappa() {
  // Least-squares fit of -dp/dr = kappa r p^{(d+2)} with fourth-order central
  // differences of the reference evaluator.
  double num = 0.0, den = 0.0;
  std::vector<double> ratios;
  for (double alpha : {1.2, 1.5, 1.8}) {
    for (int d : {1, 2}) {
      for (double t : {0.5, 1.0, 2.0}) {
        for (double r : {0.4, 1.0, 2.5}) {
          const double s = std::pow(t, -1.0 / alpha);
          auto p = [&](double rr) {
            return std::pow(s, d) * unit_profile_direct(alpha, d, rr * s)[0];
          };
          const double h = 1e-3 * std::max(1.0, r);
          const double dp =
              (-p(r + 2 * h) + 8 * p(r + h) - 8 * p(r - h) + p(r - 2 * h)) / (12 * h);
          const double shifted = std::pow(s, d + 2) * unit_profile_direct(alpha, d, r * s)[1];
          const double a = -dp, b = r * shifted;
          num += a * b;
          den += b * b;
          ratios.push_back(a / b);
        }
      }
    }
  }
  KappaCalibration cal;
  cal.kappa = num / den;
  cal.points = static_cast<int>(ratios.size());
  for (double k : ratios)
    cal.max_relative_spread = std::max(cal.max_relative_spread, std::abs(k / cal.kappa - 1.0));
  if (cal.max_relative_spread > 1e-4)
    throw NumericalError("dimension-shift constant is not constant across the calibration set");
  return cal;
}

}  // namespace

const KappaCalibration& kappa_calibration() {
  static const KappaCalibration cal = calibrate_kappa();
  return cal;
}

double convention_constant() { return kappa_calibration().kappa; }

Point gradient(const StableParams& params, double t, std::span<const double> x) {
  params.validate();
  if (!(t > 0.0)) throw std::invalid_argument("gradient: t must be positive");
  if (static_cast<int>(x.size()) != params.dim)
    throw std::invalid_argument("gradient: point dimension mismatch");
  const double kappa = convention_constant();
  const double shifted = stable_kernel(params.alpha, params.dim).at(1, t, norm(x));
  Point g(x.begin(), x.end());
  for (double& v : g) v *= -kappa * shifted;
  return g;
}

double second_mixed_kernel(const StableParams& params, double t,
                           std::span<const double> z, std::span<const double> w,
                           std::span<const double> u, std::span<const double> v) {
  params.validate();
  if (!(t > 0.0)) throw std::invalid_argument("second_mixed_kernel: t must be positive");
  const auto d = static_cast<std::size_t>(params.dim);
  if (z.size() != d || w.size() != d || u.size() != d || v.size() != d)
    throw std::invalid_argument("second_mixed_kernel: dimension mismatch");
  const double kappa = convention_constant();
  double uv = 0.0, vd = 0.0, ud = 0.0, r2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = z[i] - w[i];
    uv += u[i] * v[i];
    vd += v[i] * diff;
    ud += u[i] * diff;
    r2 += diff * diff;
  }
  const auto& k = stable_kernel(params.alpha, params.dim);
  const double r = std::sqrt(r2);
  return kappa * uv * k.at(1, t, r) - kappa * kappa * vd * ud * k.at(2, t, r);
}

ScaleReduction scale_reduce(const StableParams& params, double t,
                            std::span<const double> x) {
  params.validate();
  if (!(t > 0.0)) throw std::invalid_argument("scale_reduce: t must be positive");
  const double s = std::pow(t, -1.0 / params.alpha);
  ScaleReduction out{Point(x.begin(), x.end()), std::pow(t, -params.dim / params.alpha)};
  for (double& v : out.unit_point) v *= s;
  return out;
}

// ---------------------------------------------------------------------------
// Test functions.

namespace {

// exp(1 - 1/(1-q)) for q in [0,1), and its derivative with respect to q.
std::pair<double, double> bump_profile(double q) {
  if (q >= 1.0) return {0.0, 0.0};
  const double om = 1.0 - q;
  const double v = std::exp(1.0 - 1.0 / om);
  return {v, -v / (om * om)};
}

}  // namespace

TestFunction bump_function(Point center, double radius, double amplitude) {
  TestFunction f;
  f.center = center;
  f.support_radius = radius;
  const double r2 = radius * radius;
  f.value = [center, r2, amplitude](double, std::span<const double> y) {
    double q = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) q += (y[i] - center[i]) * (y[i] - center[i]);
    return amplitude * bump_profile(q / r2).first;
  };
  f.gradient = [center, r2, amplitude](double, std::span<const double> y) {
    double q = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) q += (y[i] - center[i]) * (y[i] - center[i]);
    const double dq = amplitude * bump_profile(q / r2).second;
    Point g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = dq * 2.0 * (y[i] - center[i]) / r2;
    return g;
  };
  f.time_derivative = [](double, std::span<const double>) { return 0.0; };
  return f;
}

TestFunction space_time_bump(Point center, double radius, double u_lo, double u_hi,
                             double amplitude) {
  TestFunction g = bump_function(center, radius, amplitude);
  const double mid = 0.5 * (u_lo + u_hi), hw = 0.5 * (u_hi - u_lo);
  auto psi = [mid, hw](double u) {
    const double s = (u - mid) / hw;
    return bump_profile(s * s);
  };
  auto space_value = g.value;
  auto space_grad = g.gradient;
  TestFunction f = g;
  f.time_lo = u_lo;
  f.time_hi = u_hi;
  f.value = [=](double u, std::span<const double> y) { return psi(u).first * space_value(u, y); };
  f.gradient = [=](double u, std::span<const double> y) {
    Point gr = space_grad(u, y);
    const double p = psi(u).first;
    for (double& v : gr) v *= p;
    return gr;
  };
  f.time_derivative = [=](double u, std::span<const double> y) {
    const double s = (u - mid) / hw;
    return psi(u).second * 2.0 * s / hw * space_value(u, y);
  };
  return f;
}

// ---------------------------------------------------------------------------
// Fractional Laplacian.

namespace {

// Graded Gauss-Legendre panels covering [lo, hi] with breakpoints clustered at 0.
std::vector<double> graded_breaks(double lo, double hi, double max_width) {
  std::vector<double> pts;
  auto side = [&](double end, double sign) {
    double w = 0.5;
    double x = 0.0;
    while (sign * (end - x) > 0) {
      const double step = std::min(w, max_width);
      x += sign * step;
      if (sign * (x - end) > 0) x = end;
      pts.push_back(x);
      w *= 2.0;
    }
  };
  pts.push_back(std::clamp(0.0, lo, hi));
  if (hi > 0) side(hi, 1.0);
  if (lo < 0) side(lo, -1.0);
  if (lo > 0 || hi < 0) {
    pts.clear();
    const int n = static_cast<int>(std::ceil((hi - lo) / max_width));
    for (int i = 0; i <= n; ++i) pts.push_back(lo + (hi - lo) * i / n);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

// Tail mass of the unit profile outside the ball of radius rho in dimension d.
double tail_mass(const StableKernel& k, int d, double rho) {
  const double surface = d == 1 ? 2.0 : 2.0 * kPi;
  auto res = exp_sinh<1>(
      [&](double v) -> std::array<double, 1> {
        const double r = rho + v;
        return {surface * std::pow(r, d - 1) * k.unit(0, r)};
      },
      1e-12);
  return res.value[0];
}

double semigroup_quotient(const StableKernel& k, const TestFunction& phi, double t_eval,
                          std::span<const double> x, double h) {
  const int d = k.dim();
  const double s = std::pow(h, 1.0 / k.alpha());
  const double fx = phi.value(t_eval, x);
  const auto& gl = gauss_legendre(24);
  double dist = 0.0;
  for (int i = 0; i < d; ++i) dist += (x[i] - phi.center[i]) * (x[i] - phi.center[i]);
  dist = std::sqrt(dist);
  const double R = phi.support_radius;
  CompensatedSum acc;
  if (d == 1) {
    const double lo = (phi.center[0] - R - x[0]) / s, hi = (phi.center[0] + R - x[0]) / s;
    const auto br = graded_breaks(std::min(lo, 0.0), std::max(hi, 0.0), 0.05 * R / s);
    double y[1];
    for (std::size_t p = 0; p + 1 < br.size(); ++p) {
      const double a = br[p], b = br[p + 1];
      for (int i = 0; i < 24; ++i) {
        const double w = a + 0.5 * (b - a) * (gl.nodes[i] + 1.0);
        y[0] = x[0] + s * w;
        acc.add(0.5 * (b - a) * gl.weights[i] * k.unit(0, std::abs(w)) *
                (phi.value(t_eval, y) - fx));
      }
    }
    const double left = -std::min(lo, 0.0), right = std::max(hi, 0.0);
    acc.add(-fx * 0.5 * (tail_mass(k, 1, left) + tail_mass(k, 1, right)));
  } else if (d == 2) {
    const double rho_max = (dist + R) / s;
    const auto br = graded_breaks(0.0, rho_max, 0.05 * R / s);
    const int nt = 128;
    double y[2];
    for (std::size_t p = 0; p + 1 < br.size(); ++p) {
      const double a = br[p], b = br[p + 1];
      for (int i = 0; i < 24; ++i) {
        const double rho = a + 0.5 * (b - a) * (gl.nodes[i] + 1.0);
        double ring = 0.0;
        for (int j = 0; j < nt; ++j) {
          const double th = 2.0 * kPi * j / nt;
          y[0] = x[0] + s * rho * std::cos(th);
          y[1] = x[1] + s * rho * std::sin(th);
          ring += phi.value(t_eval, y) - fx;
        }
        ring *= 2.0 * kPi / nt;
        acc.add(0.5 * (b - a) * gl.weights[i] * rho * k.unit(0, rho) * ring);
      }
    }
    acc.add(-fx * tail_mass(k, 2, rho_max));
  } else {
    throw std::invalid_argument("fractional_laplacian: only dim 1 and 2 are supported");
  }
  return acc.value() / h;
}

}  // namespace

Estimate fractional_laplacian(const StableParams& params, const TestFunction& phi,
                              double t_eval, std::span<const double> x,
                              const FractionalLaplacianOptions& opts) {
  params.validate();
  if (static_cast<int>(x.size()) != params.dim)
    throw std::invalid_argument("fractional_laplacian: point dimension mismatch");
  const auto& k = stable_kernel(params.alpha, params.dim);
  const double h0 = opts.h0 > 0 ? opts.h0 : std::pow(0.05 * phi.support_radius, params.alpha);
  const int n = std::max(2, opts.ladder);
  // Neville tableau in h with h_j = h0 2^{-j}; error expansion in integer powers.
  std::vector<double> hs(n), tab(n);
  for (int j = 0; j < n; ++j) {
    hs[j] = h0 * std::pow(0.5, j);
    tab[j] = semigroup_quotient(k, phi, t_eval, x, hs[j]);
  }
  double prev_diag = tab[n - 1];
  double err = INFINITY;
  for (int level = 1; level < n; ++level) {
    for (int j = n - 1; j >= level; --j) {
      const double hj = hs[j], hjl = hs[j - level];
      tab[j] = (hjl * tab[j] - hj * tab[j - 1]) / (hjl - hj);
    }
    err = std::abs(tab[n - 1] - prev_diag);
    prev_diag = tab[n - 1];
  }
  Estimate e{tab[n - 1], err};
  const double scale = std::max(std::abs(e.value), std::abs(phi.value(t_eval, phi.center)));
  if (!(err <= std::max(opts.rel_tol * scale, 1e-300)))
    throw NumericalError("fractional_laplacian: Richardson extrapolation did not converge");
  return e;
}

std::vector<double> fractional_laplacian_spectral_1d(double alpha,
                                                     std::span<const double> samples,
                                                     double dx) {
  const int n = static_cast<int>(samples.size());
  if (n < 2) throw std::invalid_argument("fractional_laplacian_spectral_1d: need samples");
  std::vector<double> buf(samples.begin(), samples.end());
  auto* spec = fftw_alloc_complex(n / 2 + 1);
  static std::mutex plan_mu;  // FFTW planning is not thread-safe
  fftw_plan fwd, bwd;
  {
    std::lock_guard lock(plan_mu);
    fwd = fftw_plan_dft_r2c_1d(n, buf.data(), spec, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_c2r_1d(n, spec, buf.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (int k = 0; k <= n / 2; ++k) {
    const double xi = 2.0 * kPi * k / (n * dx);
    const double mult = -std::pow(xi, alpha) / n;
    spec[k][0] *= mult;
    spec[k][1] *= mult;
  }
  fftw_execute(bwd);
  {
    std::lock_guard lock(plan_mu);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  fftw_free(spec);
  return buf;
}

}  // namespace fracdrift

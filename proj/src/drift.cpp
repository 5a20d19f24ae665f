#include "fracdrift/drift.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fracdrift/cubature.hpp"

namespace fracdrift {

namespace {

constexpr double kPi = std::numbers::pi;

double dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

void QuadConfig::validate() const {
  if (time_nodes < 1 || max_doublings < 0 || radial_nodes < 1 || angular_nodes < 4 ||
      grid < 16 || split_grid < 16 || grid % 2 || split_grid % 2 || exclusion_levels < 1 ||
      workers < 0)
    throw std::invalid_argument("QuadConfig: counts must be positive");
  if (!(tol > 0) || !(half_width > 0) || !(split_half_width > 0) || !(time_step > 0) ||
      !(exclusion_radius > 0))
    throw std::invalid_argument("QuadConfig: tol, half_width, time_step and exclusion_radius must be positive");
}

Point DriftSpec::operator()(std::span<const double> y) const {
  Point out(dim);
  field(y, out);
  return out;
}

double DriftSpec::magnitude(std::span<const double> y) const {
  double buf[8];
  std::span<double> out(buf, dim);
  field(y, out);
  double s = 0.0;
  for (double v : out) s += v * v;
  return std::sqrt(s);
}

DriftSpec DriftSpec::with_r(double r_new) const {
  DriftSpec d = *this;
  d.r = r_new;
  d.validate();
  return d;
}

DriftSpec DriftSpec::negated() const {
  DriftSpec d = *this;
  d.name = "-" + name;
  d.field = [f = field](std::span<const double> y, std::span<double> out) {
    f(y, out);
    for (double& v : out) v = -v;
  };
  d.cb_estimate = cb_estimate;
  return d;
}

void DriftSpec::validate() const {
  if (!(r >= 0.0)) throw std::invalid_argument("DriftSpec: r must be nonnegative");
  if (dim < 1 || dim > 8) throw std::invalid_argument("DriftSpec: dim must be in [1,8]");
  if (!field) throw std::invalid_argument("DriftSpec: field is empty");
}

DriftSpec rotational_field(double alpha) {
  if (!(alpha > 1.0 && alpha < 2.0)) {
    std::ostringstream os;
    os << "rotational_field: alpha=" << alpha << " outside (1,2)";
    throw std::invalid_argument(os.str());
  }
  DriftSpec d;
  d.name = "rotational";
  d.dim = 2;
  d.field = [alpha](std::span<const double> y, std::span<double> out) {
    const double r2 = y[0] * y[0] + y[1] * y[1];
    const double s = std::pow(r2, -0.5 * alpha);
    out[0] = y[1] * s;
    out[1] = -y[0] * s;
  };
  d.claimed_divergence_free = true;
  d.singular_points = {{0.0, 0.0}};
  return d;
}

DriftSpec zero_field(int dim) {
  DriftSpec d;
  d.name = "zero";
  d.dim = dim;
  d.field = [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  d.claimed_divergence_free = true;
  return d;
}

DriftSpec constant_field(Point c) {
  DriftSpec d;
  d.name = "constant";
  d.dim = static_cast<int>(c.size());
  d.field = [c](std::span<const double>, std::span<double> out) {
    std::copy(c.begin(), c.end(), out.begin());
  };
  d.claimed_divergence_free = true;
  return d;
}

DriftSpec smooth_rotational_field() {
  DriftSpec d;
  d.name = "smooth_rotational";
  d.dim = 2;
  d.field = [](std::span<const double> y, std::span<double> out) {
    const double g = std::exp(-(y[0] * y[0] + y[1] * y[1]));
    out[0] = g * y[1];
    out[1] = -g * y[0];
  };
  d.claimed_divergence_free = true;
  return d;
}

DriftSpec radial_field(int dim) {
  DriftSpec d;
  d.name = "radial";
  d.dim = dim;
  d.field = [](std::span<const double> y, std::span<double> out) {
    std::copy(y.begin(), y.end(), out.begin());
  };
  d.claimed_divergence_free = false;
  return d;
}

// ---------------------------------------------------------------------------

DivergenceResidual divergence_residual_weak(const DriftSpec& spec, const TestFunction& phi,
                                            const QuadConfig& quad) {
  spec.validate();
  quad.validate();
  const int d = spec.dim;
  if (d != 1 && d != 2)
    throw std::invalid_argument("divergence_residual_weak: dim must be 1 or 2");
  const Point c = spec.singular_points.empty() ? phi.center : spec.singular_points.front();
  const double R = phi.support_radius;
  const double far = dist(c, phi.center) + R;
  const double near = std::max(0.0, dist(c, phi.center) - R);
  const QuadRule& gl = gauss_legendre(quad.radial_nodes);
  const double D = dist(c, phi.center);
  const double theta_c = d == 2 ? std::atan2(phi.center[1] - c[1], phi.center[0] - c[0]) : 0.0;
  const QuadRule& gl_ang = gauss_legendre(quad.angular_nodes);

  // integral of b . grad phi (and of its absolute value) over lo < |y-c| < hi
  auto annulus = [&](double lo, double hi, bool absolute) {
    if (hi <= lo) return 0.0;
    std::vector<double> br = {lo};
    // geometric towards the inner radius, uniform (width R/16) across the support
    double b = std::max(lo, near);
    for (double g = lo * 2.0; g < b; g *= 2.0) br.push_back(g);
    const int m = std::max(1, static_cast<int>(std::ceil((hi - b) / (R / 16.0))));
    for (int i = 0; i <= m; ++i) br.push_back(b + (hi - b) * i / m);
    std::sort(br.begin(), br.end());
    br.erase(std::unique(br.begin(), br.end()), br.end());
    CompensatedSum acc;
    double y[2], bv[2];
    auto integrand = [&]() {
      std::span<const double> ys(y, d);
      const Point g = phi.gradient(0.0, ys);
      spec.field(ys, std::span<double>(bv, d));
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += bv[i] * g[i];
      return absolute ? std::abs(dot) : dot;
    };
    for (std::size_t p = 0; p + 1 < br.size(); ++p) {
      const double a = br[p], e = br[p + 1];
      for (int q = 0; q < quad.radial_nodes; ++q) {
        const double rho = a + 0.5 * (e - a) * (gl.nodes[q] + 1.0);
        const double wr = 0.5 * (e - a) * gl.weights[q] * (d == 2 ? rho : 1.0);
        double ring = 0.0;
        if (d == 1) {
          for (double sgn : {1.0, -1.0}) {
            y[0] = c[0] + sgn * rho;
            ring += integrand();
          }
        } else if (rho + D <= R) {
          // circle inside the support: periodic trapezoid
          const int n = 4 * quad.angular_nodes;
          for (int j = 0; j < n; ++j) {
            const double th = 2.0 * kPi * (j + 0.5) / n;
            y[0] = c[0] + rho * std::cos(th);
            y[1] = c[1] + rho * std::sin(th);
            ring += integrand() * 2.0 * kPi / n;
          }
        } else if (std::abs(rho - D) < R) {
          // arc inside the support; phi vanishes to all orders at its ends
          const double half = std::acos(
              std::clamp((rho * rho + D * D - R * R) / (2.0 * rho * D), -1.0, 1.0));
          for (int j = 0; j < quad.angular_nodes; ++j) {
            const double th = theta_c + half * gl_ang.nodes[j];
            y[0] = c[0] + rho * std::cos(th);
            y[1] = c[1] + rho * std::sin(th);
            ring += integrand() * half * gl_ang.weights[j];
          }
        }
        acc.add(wr * ring);
      }
    }
    return acc.value();
  };

  DivergenceResidual res;
  double eps = quad.exclusion_radius;
  for (int k = 0; k < quad.exclusion_levels; ++k) {
    res.by_radius.push_back(annulus(eps, far, false));
    eps /= 16.0;
  }
  res.scale = annulus(eps * 16.0, far, true);
  res.value = res.by_radius.back();
  const std::size_t n = res.by_radius.size();
  res.error = n > 1 ? std::abs(res.by_radius[n - 1] - res.by_radius[n - 2]) : 0.0;
  // quadrature floor: rounding across the ring sums
  res.error += 1e-12 * res.scale;
  if (n > 2) {
    const double d1 = std::abs(res.by_radius[n - 2] - res.by_radius[n - 3]);
    if (res.error > 10.0 * d1 + 1e-10 * res.scale)
      throw NumericalError("divergence_residual_weak: values do not settle as the exclusion radius shrinks");
  }
  return res;
}

double kernel_field_integral(const DriftSpec& spec, const StableParams& params, double t,
                             std::span<const double> x, const QuadConfig& quad) {
  spec.validate();
  params.validate();
  if (spec.dim != params.dim)
    throw std::invalid_argument("kernel_field_integral: drift and kernel dimensions differ");
  if (!(t > 0)) throw std::invalid_argument("kernel_field_integral: t must be positive");
  const int d = params.dim;
  const auto& k = stable_kernel(params.alpha, d);
  const double scale = std::pow(t, 1.0 / params.alpha);
  std::vector<CubatureCenter> centers = {{Point(x.begin(), x.end()), scale}};
  for (const auto& s : spec.singular_points) centers.push_back({s, std::max(scale, dist(s, x))});
  CubatureOptions opt;
  opt.radial_nodes = quad.radial_nodes;
  opt.angular_nodes = quad.angular_nodes;
  double bv[8];
  auto f = [&](const double* y) {
    double r2 = 0.0;
    for (int i = 0; i < d; ++i) r2 += (y[i] - x[i]) * (y[i] - x[i]);
    std::span<const double> ys(y, d);
    spec.field(ys, std::span<double>(bv, d));
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += bv[i] * bv[i];
    return k.density(t, std::sqrt(r2)) * std::sqrt(m);
  };
  try {
    return multi_center_integral(d, centers, f, opt);
  } catch (const std::runtime_error&) {
    throw NumericalError("kernel_field_integral: spatial integral diverges (condition on |b| violated)");
  }
}

DriftKernelBound drift_kernel_bound(DriftSpec& spec, const StableParams& params,
                                    const std::vector<double>& t_list, const QuadConfig& quad) {
  params.validate_series();
  if (t_list.empty()) throw std::invalid_argument("drift_kernel_bound: empty t_list");
  DriftKernelBound out;
  const int d = params.dim;
  const std::vector<double> radii = {0.0, 0.5, 1.0, 2.0, 4.0};
  const std::vector<double> angles = d == 1 ? std::vector<double>{0.0, kPi}
                                            : std::vector<double>{0.0, 2.0 * kPi / 3, 4.0 * kPi / 3};
  for (double t : t_list) {
    const double s = std::pow(t, 1.0 / params.alpha);
    double best = 0.0;
    for (double rho : radii) {
      for (double th : angles) {
        Point x(d, 0.0);
        x[0] = s * rho * std::cos(th);
        if (d == 2) x[1] = s * rho * std::sin(th);
        const double v = std::pow(t, 1.0 - 1.0 / params.alpha) *
                         kernel_field_integral(spec, params, t, x, quad);
        if (v > best) best = v;
        if (v > out.value) {
          out.value = v;
          out.worst_t = t;
          out.worst_x = x;
        }
        if (rho == 0.0) break;
      }
    }
    out.per_t.push_back(best);
  }
  spec.cb_estimate = out.value;
  return out;
}

KatoModulus kato_modulus(const DriftSpec& spec, const StableParams& params, double t,
                         std::span<const double> x, const QuadConfig& quad) {
  params.validate_series();
  if (!(t > 0)) throw std::invalid_argument("kato_modulus: t must be positive");
  const double a = params.alpha;
  auto m = [&](double s) { return kernel_field_integral(spec, params, s, x, quad); };
  KatoModulus out;
  // local exponent of f(s) = s^{-1/alpha} m(s) at small s
  const double s1 = t * 1e-8, s2 = t * 1e-10;
  const double m1 = m(s1), m2 = m(s2);
  if (m1 == 0.0 && m2 == 0.0) {
    out.small_time_exponent = INFINITY;
    out.rate = "finite";
    return out;
  }
  const double g = -1.0 / a + std::log(m1 / m2) / std::log(s1 / s2);
  out.small_time_exponent = g;
  if (g < -1.0 + 1e-3) {
    out.divergent = true;
    if (std::abs(g + 1.0) < 1e-3) {
      out.rate = "logarithmic";
      out.rate_coefficient = std::pow(s1, -1.0 / a) * m1 * s1;  // f(s) ~ c / s
    } else {
      out.rate = "power";
      out.rate_coefficient = std::pow(s1, -1.0 / a) * m1 * std::pow(s1, -g) / -(g + 1.0);
    }
    out.value = INFINITY;
    return out;
  }
  // s = t sigma^{alpha/(alpha-1)} absorbs the s^{-1/alpha} weight
  // below s2 the kernel is narrower than double resolution of y near x; the
  // integrand is flat there (m -> |b(x)|), so m(s2) is reused
  const double p = a / (a - 1.0);
  auto res = tanh_sinh<1>(
      [&](double sigma, double, double) -> std::array<double, 1> {
        const double s = t * std::pow(sigma, p);
        return {std::pow(t, 1.0 - 1.0 / a) * p * (s > s2 ? m(s) : m2)};
      },
      0.0, 1.0, quad.tol * quad.tol, 6);
  out.value = res.value[0];
  out.rate = "finite";
  return out;
}

}  // namespace fracdrift

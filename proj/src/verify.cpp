#include "fracdrift/verify.hpp"

#include <algorithm>
#include <boost/random/sobol.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "fracdrift/quadrature.hpp"

namespace fracdrift {

namespace {

double lookup(const Details& d, const std::string& key) {
  for (const auto& [k, v] : d)
    if (k == key) return v;
  throw std::out_of_range("no detail named " + key);
}

// Sobol points in [0,1)^dims, one coordinate per call.
class Sweep {
 public:
  Sweep(int dims, std::uint64_t skip) : q_(dims) { q_.discard(skip * dims); }
  double next() {
    return (static_cast<double>(q_()) + 0.5) /
           (static_cast<double>(boost::random::sobol::max()) + 1.0);
  }

 private:
  boost::random::sobol q_;
};

double log_uniform(double u, double lo, double hi) { return lo * std::pow(hi / lo, u); }

// A point of radius rho in direction u (angle in dim 2, sign in dim 1).
Point place(int dim, double rho, double u) {
  Point x(dim, 0.0);
  if (dim == 1) {
    x[0] = u < 0.5 ? -rho : rho;
  } else {
    x[0] = rho * std::cos(2.0 * std::numbers::pi * u);
    x[1] = rho * std::sin(2.0 * std::numbers::pi * u);
  }
  return x;
}

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

Point diff(std::span<const double> a, std::span<const double> b) {
  Point d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

// max of f over 2n Sobol points; value after n and after 2n.
template <class F>
ConstantReport sweep_max(const std::string& name, int dims, const SampleSpec& spec, F&& f) {
  spec.validate();
  Sweep q(dims, spec.seed);
  ConstantReport rep;
  rep.name = name;
  rep.n_samples = spec.n_samples;
  std::vector<double> u(dims);
  double best = -1.0;
  WorstCase wc;
  for (int i = 0; i < 2 * spec.n_samples; ++i) {
    for (double& v : u) v = q.next();
    const double v = f(u, wc);
    if (!std::isfinite(v)) throw NumericalError(name + ": non-finite ratio in the sweep");
    if (v > best) {
      best = v;
      rep.worst_case = wc;
    }
    if (i + 1 == spec.n_samples) rep.value = best;
  }
  rep.refined_value = best;
  rep.stable_under_refinement =
      rep.value > 0.0 ? (rep.refined_value - rep.value) < 0.05 * rep.value : rep.refined_value == 0.0;
  return rep;
}

void require_stable_range(const StableParams& params, const char* who) {
  params.validate();
  if (!(params.alpha < 2.0))
    throw std::invalid_argument(std::string(who) + ": alpha must be in (0,2); alpha = 2 is a negative control");
  if (params.dim > 2) throw std::invalid_argument(std::string(who) + ": dim must be 1 or 2");
}

}  // namespace

void SampleSpec::validate() const {
  if (n_samples < 1) throw std::invalid_argument("SampleSpec: n_samples must be >= 1");
  if (!(t_min > 0.0 && t_max >= t_min)) throw std::invalid_argument("SampleSpec: bad time range");
  if (!(rho_min > 0.0 && rho_max >= rho_min)) throw std::invalid_argument("SampleSpec: bad radius range");
  if (!(scale > 0.0)) throw std::invalid_argument("SampleSpec: scale must be positive");
}

double ConstantReport::detail(const std::string& key) const { return lookup(details, key); }
double Residual::detail(const std::string& key) const { return lookup(details, key); }

ConstantReport check_two_sided(const StableParams& params, const SampleSpec& spec) {
  require_stable_range(params, "check_two_sided");
  const double a = params.alpha;
  const int d = params.dim;
  auto ratio = [&](double t, std::span<const double> x) {
    const double r = norm(x);
    const double bound = r > 0.0 ? std::min(std::pow(t, -d / a), t * std::pow(r, -d - a))
                                 : std::pow(t, -d / a);
    return density(params, t, x) / bound;
  };
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  auto rep = sweep_max("C1", 3, spec, [&](const std::vector<double>& u, WorstCase& wc) {
    const double t = spec.scale * log_uniform(u[0], spec.t_min, spec.t_max);
    // a tenth of the samples sit on the diagonal
    const double rho = u[1] < 0.1 ? 0.0 : log_uniform((u[1] - 0.1) / 0.9, spec.rho_min, spec.rho_max);
    const Point x = place(d, std::pow(t, 1.0 / a) * rho, u[2]);
    const double q = ratio(t, x);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
    wc = {t, 0.0, x, {}, {}};
    return std::max(q, 1.0 / q);
  });
  const Point o(d, 0.0);
  const Point far = place(d, spec.rho_max, 0.3);
  rep.details = {{"max_ratio", hi},
                 {"min_ratio", lo},
                 {"on_diagonal", ratio(1.0, o)},
                 {"far_field", ratio(1.0, far)}};
  return rep;
}

ConstantReport check_3p(const StableParams& params, const SampleSpec& spec) {
  require_stable_range(params, "check_3p");
  const double a = params.alpha;
  const int d = params.dim;
  const Point x(d, 0.0);
  return sweep_max("C2", 7, spec, [&](const std::vector<double>& u, WorstCase& wc) {
    const double t = spec.scale * log_uniform(u[0], spec.t_min, spec.t_max);
    const double s = spec.scale * log_uniform(u[1], spec.t_min, spec.t_max);
    const double scale = std::pow(t + s, 1.0 / a);
    const Point y = place(d, scale * log_uniform(u[2], spec.rho_min, spec.rho_max), u[3]);
    // z near x, near y, or near the segment [x, y] where the far-field supremum lives
    Point z;
    const int mode = std::min(2, static_cast<int>(3.0 * u[6]));
    if (mode < 2) {
      z = place(d, scale * log_uniform(u[4], spec.rho_min, spec.rho_max), u[5]);
      if (mode == 1)
        for (int i = 0; i < d; ++i) z[i] += y[i];
    } else {
      z = y;
      for (double& v : z) v *= u[4];
      if (d == 2) {
        const double off = 0.5 * (u[5] - 0.5);
        z[0] -= off * y[1];
        z[1] += off * y[0];
      }
    }
    const double pxz = density(params, t, diff(z, x));
    const double pzy = density(params, s, diff(y, z));
    const double pxy = density(params, t + s, diff(y, x));
    wc = {t, s, x, y, z};
    return pxz * pzy / (pxy * (pxz + pzy));
  });
}

ConstantReport check_grad_bound(const StableParams& params, const SampleSpec& spec) {
  require_stable_range(params, "check_grad_bound");
  const double a = params.alpha;
  const int d = params.dim;
  return sweep_max("C3", 3, spec, [&](const std::vector<double>& u, WorstCase& wc) {
    const double t = spec.scale * log_uniform(u[0], spec.t_min, spec.t_max);
    const double rho = u[1] < 0.05 ? 0.0 : log_uniform((u[1] - 0.05) / 0.95, spec.rho_min, spec.rho_max);
    const Point x = place(d, std::pow(t, 1.0 / a) * rho, u[2]);
    wc = {t, 0.0, x, {}, {}};
    return norm(gradient(params, t, x)) * std::pow(t, 1.0 / a) / density(params, t, x);
  });
}

ConstantReport check_aux1(const StableParams& params, const DriftSpec& drift, const SampleSpec& spec) {
  require_stable_range(params, "check_aux1");
  drift.validate();
  if (drift.dim != params.dim) throw std::invalid_argument("check_aux1: dimension mismatch");
  const double a = params.alpha;
  const int d = params.dim;
  return sweep_max("C4", 5, spec, [&](const std::vector<double>& u, WorstCase& wc) {
    const double t = spec.scale * log_uniform(u[0], spec.t_min, spec.t_max);
    const double scale = std::pow(t, 1.0 / a);
    const Point z = place(d, scale * log_uniform(u[1], spec.rho_min, spec.rho_max), u[2]);
    Point w = place(d, scale * log_uniform(u[3], spec.rho_min, spec.rho_max), u[4]);
    if (u[4] >= 0.5)
      for (int i = 0; i < d; ++i) w[i] += z[i];
    const Point bz = drift(z), bw = drift(w);
    const double nz = norm(bz), nw = norm(bw);
    wc = {t, 0.0, {}, w, z};
    if (!(nz > 0.0 && nw > 0.0) || !std::isfinite(nz * nw)) return 0.0;
    const double k = second_mixed_kernel(params, t, z, w, bz, bw);
    return std::abs(k) * std::pow(t, 2.0 / a) / (nz * nw * density(params, t, diff(w, z)));
  });
}

Estimate aux2_integral(double alpha, double t, double rel_tol) {
  if (!(alpha > 1.0 && alpha < 2.0)) throw std::invalid_argument("aux2_integral: alpha must be in (1,2)");
  if (!(t > 0.0)) throw std::invalid_argument("aux2_integral: t must be positive");
  const double e = 1.0 / alpha - 1.0, h = 0.5 * t;
  // a = t/2 - u, c = r - t/2 in polar coordinates (rho, theta) about the corner
  auto inner = [&](double theta) {
    const double ct = std::cos(theta), st = std::sin(theta);
    const double rmax = h / std::max(ct, st);
    auto res = tanh_sinh<1>(
        [&](double rho, double, double to_edge) -> std::array<double, 1> {
          const double a = rho * ct, c = rho * st;
          const double ru = a + c;
          // near the outer edge the vanishing factor is taken from the complement
          const double uu = ct >= st ? ct * to_edge : h - a;
          const double tr = st > ct ? st * to_edge : h - c;
          const double f = std::pow(ru, -2.0 / alpha) * (std::pow(tr, e) + std::pow(ru, e)) *
                           (std::pow(t - (h - a), e) + std::pow(uu, e));
          return {rho * f};
        },
        0.0, rmax, rel_tol, 10);
    return std::pair{res.value[0], res.error};
  };
  double value = 0.0, error = 0.0;
  for (auto [lo, hi] : {std::pair{0.0, std::numbers::pi / 4}, std::pair{std::numbers::pi / 4, std::numbers::pi / 2}}) {
    double inner_err = 0.0;
    auto res = tanh_sinh<1>(
        [&](double th, double, double) -> std::array<double, 1> {
          const auto [v, er] = inner(th);
          inner_err = std::max(inner_err, er);
          return {v};
        },
        lo, hi, rel_tol, 10);
    value += res.value[0];
    error += res.error + inner_err * (hi - lo);
  }
  return {value, error};
}

ConstantReport check_aux2(double alpha, const std::vector<double>& t_list) {
  if (t_list.empty()) throw std::invalid_argument("check_aux2: empty t_list");
  ConstantReport rep;
  rep.name = "C5";
  rep.n_samples = static_cast<std::int64_t>(t_list.size());
  const Estimate first = aux2_integral(alpha, t_list.front());
  rep.value = first.value;
  rep.refined_value = aux2_integral(alpha, t_list.front(), 1e-13).value;
  rep.stable_under_refinement = std::abs(rep.refined_value - rep.value) < 0.05 * rep.value;
  rep.worst_case.t = t_list.front();
  double spread = 0.0;
  for (double t : t_list) {
    const double v = aux2_integral(alpha, t).value;
    rep.details.emplace_back("t=" + std::to_string(t), v);
    if (std::abs(v / rep.value - 1.0) > spread) {
      spread = std::abs(v / rep.value - 1.0);
      rep.worst_case.t = t;
    }
  }
  rep.details.emplace_back("spread", spread);
  rep.details.emplace_back("error", first.error);
  return rep;
}

GrowthScan three_point_growth(const StableParams& params, double t) {
  params.validate();
  GrowthScan g;
  g.name = "3P ratio along z = (x+y)/2";
  const int d = params.dim;
  const Point x(d, 0.0);
  for (double D = 1.0; D <= 16.0; D += 1.0) {
    const Point y = place(d, D * std::pow(t, 1.0 / params.alpha), 0.0);
    Point z = y;
    for (double& v : z) v *= 0.5;
    const double pxz = density(params, t, diff(z, x)), pzy = density(params, t, diff(y, z));
    const double pxy = density(params, 2 * t, diff(y, x));
    if (!(pxy > 0.0)) break;  // the Gaussian underflows first
    g.abscissa.push_back(D);
    g.ratio.push_back(pxz * pzy / (pxy * (pxz + pzy)));
  }
  g.growth_detected = g.ratio.size() > 1 && g.ratio.back() > 10.0 * g.ratio.front();
  return g;
}

GrowthScan grad_bound_growth(const StableParams& params, double t) {
  params.validate();
  GrowthScan g;
  g.name = "|grad p| t^{1/alpha} / p along a ray";
  const int d = params.dim;
  for (double rho = 0.5; rho <= 64.0; rho *= 2.0) {
    const Point x = place(d, rho * std::pow(t, 1.0 / params.alpha), 0.0);
    const double p = density(params, t, x);
    if (!(p > 0.0)) break;
    g.abscissa.push_back(rho);
    g.ratio.push_back(norm(gradient(params, t, x)) * std::pow(t, 1.0 / params.alpha) / p);
  }
  g.growth_detected = g.ratio.size() > 1 && g.ratio.back() > 10.0 * g.ratio.front();
  return g;
}

// ---------------------------------------------------------------------------
// Perturbed identities.

namespace {

void require_kernel(const PerturbedKernel& k, const char* who) {
  k.params.validate_series();
  k.drift.validate();
  k.quad.validate();
  if (k.params.dim != 2 || k.drift.dim != 2)
    throw std::invalid_argument(std::string(who) + ": the grid solver needs dim 2");
  if (k.n_iter < 0) throw std::invalid_argument(std::string(who) + ": n_iter must be >= 0");
}

// Relative size of the terms beyond n_iter, from the Motzkin bound.
double series_tail(const PerturbedKernel& k) {
  if (!(k.c_hat > 0.0) || k.drift.r == 0.0) return 0.0;
  const double eta = std::abs(k.drift.r) * k.c_hat;
  if (!(eta < 1.0 / 3.0)) return std::numeric_limits<double>::infinity();
  return tail_bound(eta, k.n_iter);
}

struct Solve {
  SeriesResult series;
  PicardFields fields;
};

Solve solve(const PerturbedKernel& k, const DriftSpec& b, double t, std::span<const double> x,
            const std::vector<Point>& ys, double box, bool history) {
  Solve s;
  PicardOptions opt;
  opt.keep_history = history;
  opt.box = box;
  s.series = duhamel_solve(k.params, b, t, x, ys, k.quad, k.n_iter, k.c_hat, opt, &s.fields);
  return s;
}

// Fine and coarse value of a functional of the fields, Richardson-combined.
template <class F>
Estimate richardson(const PicardFields& f, F&& functional) {
  const double fine = functional(f);
  if (!f.coarse) return {fine, 0.0};
  const double d = fine - functional(*f.coarse);
  return {fine + d / 3.0, std::abs(d) / 3.0};
}

double term_error(const SeriesResult& r, std::size_t j) {
  double e = 0.0;
  for (const auto& term : r.terms) e += term[j].error;
  return e;
}

// Transform of the indicator of the disk |y - c| <= R.
ComplexField ball_hat(const SpectralGrid& g, std::span<const double> c, double R) {
  ComplexField out(g.spectral_size());
  const int n = g.n(), m = g.nk();
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < m; ++b) {
      if (a == n / 2 || b == n / 2) continue;
      const double k = std::hypot(g.k1(a), g.k2(b));
      const double mag = k > 0.0 ? 2.0 * std::numbers::pi * R * std::cyl_bessel_j(1.0, k * R) / k
                                 : std::numbers::pi * R * R;
      out[static_cast<std::size_t>(a) * m + b] = std::polar(mag, -(g.k1(a) * c[0] + g.k2(b) * c[1]));
    }
  return out;
}

// Composite Simpson on uniform samples (3/8 rule on the last panel if odd).
double simpson(const std::vector<double>& g, double dt) {
  const int J = static_cast<int>(g.size()) - 1;
  if (J < 2) return J == 1 ? 0.5 * dt * (g[0] + g[1]) : 0.0;
  const int even = J % 2 == 0 ? J : J - 3;
  double s = 0.0;
  for (int j = 0; j + 2 <= even; j += 2) s += dt / 3.0 * (g[j] + 4.0 * g[j + 1] + g[j + 2]);
  if (even != J) s += 3.0 * dt / 8.0 * (g[J - 3] + 3.0 * g[J - 2] + 3.0 * g[J - 1] + g[J]);
  return s;
}

}  // namespace

Residual check_chapman_kolmogorov(const PerturbedKernel& k, double s, double t,
                                  std::span<const double> x, std::span<const double> y) {
  require_kernel(k, "check_chapman_kolmogorov");
  if (!(s > 0.0 && t > 0.0)) throw std::invalid_argument("check_chapman_kolmogorov: s, t must be positive");
  const double alpha = k.params.alpha;
  const double box = k.quad.half_width * std::pow(s + t, 1.0 / alpha);
  const Point yp(y.begin(), y.end());

  const Solve A = solve(k, k.drift, s, x, {}, box, false);
  const Solve B = solve(k, k.drift.negated(), t, y, {}, box, false);
  const Solve C = solve(k, k.drift, s + t, x, {yp}, box, false);
  const SpectralGrid& g = *A.fields.grid;

  const double lhs_f = g.inner(A.fields.total_hat(), B.fields.total_hat());
  Estimate lhs{lhs_f, 0.0};
  if (A.fields.coarse && B.fields.coarse) {
    const double d = lhs_f - g.inner(A.fields.coarse->total_hat(), B.fields.coarse->total_hat());
    lhs = {lhs_f + d / 3.0, std::abs(d) / 3.0};
  }
  const double rhs = C.series.total(0);
  const double rhs_err = term_error(C.series, 0);

  // the same pipeline for the unperturbed kernel
  const auto& K = stable_kernel(alpha, 2);
  const double p_st = K.at(0, s + t, norm(diff(y, x)));
  const double floor =
      std::abs(g.inner(g.kernel_hat(alpha, s, x), g.kernel_hat(alpha, t, y)) - p_st) / p_st;

  Residual res;
  res.value = std::abs(lhs.value - rhs) / rhs;
  res.floor = floor;
  res.error = (lhs.error + rhs_err) / rhs + 3.0 * series_tail(k) + floor;
  // both sides on the torus: the box truncation cancels and only the time stepping remains
  const double torus = std::abs(lhs.value - g.evaluate(C.fields.total_hat(), y)) / rhs;
  res.details = {{"lhs", lhs.value}, {"rhs", rhs}, {"time_error", (lhs.error + rhs_err) / rhs},
                 {"tail", 3.0 * series_tail(k)}, {"periodic_residual", torus}};
  return res;
}

Residual check_mass(const PerturbedKernel& k, double t, std::span<const double> x, double R) {
  require_kernel(k, "check_mass");
  if (!(t > 0.0 && R > 0.0)) throw std::invalid_argument("check_mass: t and R must be positive");
  const Solve S = solve(k, k.drift, t, x, {}, 0.0, false);
  const SpectralGrid& g = *S.fields.grid;
  if (R + std::max(std::abs(x[0]), std::abs(x[1])) > 0.9 * g.half_width())
    throw std::invalid_argument("check_mass: the ball must lie inside 0.9 of the grid half-width");
  const ComplexField ball = ball_hat(g, x, R);
  const Estimate inside =
      richardson(S.fields, [&](const PicardFields& f) { return g.inner(f.total_hat(), ball); });

  const double rho[1] = {R};
  const double tail = 1.0 - radial_cdf(k.params, t, rho)[0];
  double spread = 1.0;  // unknown without an envelope: the tail is known only up to its own size
  if (k.c_hat > 0.0 && k.drift.r != 0.0) {
    const double eta = std::abs(k.drift.r) * k.c_hat;
    if (eta < eta_threshold()) {
      const Envelope e = comparability_envelope(eta);
      spread = std::max(e.upper - 1.0, 1.0 - e.lower);
    }
  } else if (k.drift.r == 0.0) {
    spread = 0.0;
  }
  const double floor =
      std::abs(g.inner(g.kernel_hat(k.params.alpha, t, x), ball) + tail - 1.0);

  Residual res;
  res.value = std::abs(inside.value + tail - 1.0);
  res.floor = floor;
  res.error = inside.error + tail * spread + floor;
  res.details = {{"inside", inside.value}, {"tail", tail}, {"untailed", std::abs(inside.value - 1.0)},
                 {"time_error", inside.error}};
  return res;
}

Residual check_weak_solution(const PerturbedKernel& k, const TestFunction& phi, double s,
                             std::span<const double> x) {
  require_kernel(k, "check_weak_solution");
  if (!std::isfinite(phi.time_hi) || phi.time_hi > 1e100)
    throw std::invalid_argument("check_weak_solution: phi must have bounded support in time");
  const double T = phi.time_hi - s;
  if (!(T > 0.0)) throw std::invalid_argument("check_weak_solution: phi vanishes after s");
  const double alpha = k.params.alpha, r = k.drift.r;

  const Solve S = solve(k, k.drift, T, x, {}, 0.0, true);
  const SpectralGrid& g = *S.fields.grid;
  const int n = g.n(), m = g.nk();
  const double L = g.half_width();
  if (norm(phi.center) + phi.support_radius > 0.75 * L)
    throw std::invalid_argument("check_weak_solution: phi's support must lie where the drift is untapered");

  // symbol of Delta^{alpha/2}
  std::vector<double> sym(g.spectral_size());
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < m; ++b)
      sym[static_cast<std::size_t>(a) * m + b] =
          -std::pow(g.k1(a) * g.k1(a) + g.k2(b) * g.k2(b), 0.5 * alpha);

  // (d_u phi + Delta^{alpha/2} phi + r b . grad phi)(u, .) on the nodes, with and without drift
  struct Forcing {
    RealField full, free;
    double at_x_full, at_x_free;
  };
  auto forcing = [&](double u) {
    RealField val(g.real_size(), 0.0), dt(g.real_size(), 0.0), drift_term(g.real_size(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double z[2] = {g.node(i), g.node(j)};
        if (std::hypot(z[0] - phi.center[0], z[1] - phi.center[1]) >= phi.support_radius) continue;
        const std::size_t idx = static_cast<std::size_t>(i) * n + j;
        val[idx] = phi.value(u, z);
        dt[idx] = phi.time_derivative(u, z);
        if (r != 0.0) {
          const Point gr = phi.gradient(u, z);
          double bz[2];
          k.drift.field(std::span<const double>(z, 2), std::span<double>(bz, 2));
          const double v = r * (bz[0] * gr[0] + bz[1] * gr[1]);
          drift_term[idx] = std::isfinite(v) ? v : 0.0;
        }
      }
    ComplexField c = g.forward(val);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= sym[i];
    const RealField lap = g.inverse(c);
    Forcing f;
    f.free.resize(g.real_size());
    f.full.resize(g.real_size());
    for (std::size_t i = 0; i < f.free.size(); ++i) {
      f.free[i] = dt[i] + lap[i];
      f.full[i] = f.free[i] + drift_term[i];
    }
    const ComplexField ff = g.forward(f.free), fd = g.forward(drift_term);
    f.at_x_free = g.evaluate(ff, x);
    f.at_x_full = f.at_x_free + g.evaluate(fd, x);
    return f;
  };

  const std::vector<double>& times = S.fields.times;
  const int J = static_cast<int>(times.size()) - 1;
  const double h2 = g.spacing() * g.spacing();
  auto dot = [&](const RealField& a, const RealField& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc * h2;
  };

  std::vector<double> G_fine(J + 1), G_free(J + 1);
  double G_abs = 0.0;
  for (int j = 0; j <= J; ++j) {
    const Forcing f = forcing(s + times[j]);
    if (j == 0) {
      G_fine[0] = f.at_x_full;
      G_free[0] = f.at_x_free;
      continue;
    }
    const RealField p = g.inverse(g.kernel_hat(alpha, times[j], x));
    G_free[j] = dot(p, f.free);
    G_fine[j] = r != 0.0 && !S.fields.total.empty() ? dot(S.fields.total[j], f.full) : G_free[j];
    G_abs = std::max(G_abs, std::abs(G_fine[j]));
  }
  const double phi_sx = phi.value(s, x);
  const double dt = T / J;
  const double fine = simpson(G_fine, dt) + phi_sx;
  const double floor = std::abs(simpson(G_free, dt) + phi_sx);

  double time_error = 0.0, value = fine;
  if (S.fields.coarse && !S.fields.coarse->total.empty()) {
    const auto& c = *S.fields.coarse;
    const int Jc = static_cast<int>(c.times.size()) - 1;
    std::vector<double> G_coarse(Jc + 1);
    G_coarse[0] = G_fine[0];
    for (int j = 1; j <= Jc; ++j) {
      const Forcing f = forcing(s + c.times[j]);
      G_coarse[j] = dot(c.total[j], f.full);
    }
    const double d = fine - (simpson(G_coarse, T / Jc) + phi_sx);
    value = fine + d / 3.0;
    time_error = std::abs(d) / 3.0;
  }

  Residual res;
  res.value = std::abs(value);
  res.floor = floor;
  const double tail = series_tail(k) * G_abs * T;
  res.error = time_error + tail + floor;
  res.details = {{"phi_sx", phi_sx}, {"time_error", time_error}, {"tail", tail}};
  return res;
}

ComparabilityReport check_comparability(const SeriesResult& series, double tol) {
  ComparabilityReport rep;
  if (series.terms.empty() || series.points.empty())
    throw std::invalid_argument("check_comparability: empty series result");
  rep.min_ratio = std::numeric_limits<double>::infinity();
  rep.max_ratio = -std::numeric_limits<double>::infinity();
  double worst = -1.0;
  for (std::size_t j = 0; j < series.points.size(); ++j) {
    const double q = series.total(j) / series.terms[0][j].value;
    rep.min_ratio = std::min(rep.min_ratio, q);
    rep.max_ratio = std::max(rep.max_ratio, q);
    if (std::abs(q - 1.0) > worst) {
      worst = std::abs(q - 1.0);
      rep.worst = series.points[j];
    }
  }
  rep.applicable = series.converged || series.eta == 0.0;
  rep.envelope = series.converged ? series.envelope : Envelope{};
  rep.passed = rep.applicable && rep.min_ratio >= rep.envelope.lower - tol &&
               rep.max_ratio <= rep.envelope.upper + tol;
  return rep;
}

AgreementReport check_mc_agreement(const SeriesResult& series, const std::vector<KdeEstimate>& mc) {
  if (mc.size() != series.points.size())
    throw std::invalid_argument("check_mc_agreement: one estimate per series point");
  AgreementReport rep;
  rep.passed = true;
  for (std::size_t j = 0; j < mc.size(); ++j) {
    AgreementRow row;
    row.y = series.points[j];
    row.series = series.total(j);
    row.series_error = term_error(series, j) + series.tail_bound * series.terms[0][j].value;
    row.mc = mc[j];
    row.allowed = 3.0 * (mc[j].error + row.series_error + mc[j].bias_allowance);
    row.passed = mc[j].reliable && std::abs(row.series - mc[j].value) <= row.allowed;
    rep.passed = rep.passed && row.passed;
    rep.rows.push_back(row);
  }
  return rep;
}

std::vector<SlopeRow> check_perturbative_slope(const StableParams& params, const DriftSpec& unit_drift,
                                               const std::vector<double>& r_list,
                                               std::span<const double> x, std::span<const double> y,
                                               const MCConfig& mc, const QuadConfig& quad) {
  const DriftSpec unit = unit_drift.with_r(1.0);
  const Estimate p1u = p1(params, unit, mc.t, x, y, quad);
  const Estimate p2u = p2(params, unit, mc.t, x, y, quad);
  const Endpoints base = simulate_endpoints(params, unit.with_r(0.0), x, mc);
  const double bw = mc.bandwidth_scale * plugin_bandwidth(base);
  std::vector<SlopeRow> rows;
  for (double r : r_list) {
    if (!(r > 0.0)) throw std::invalid_argument("check_perturbative_slope: r must be positive");
    const Endpoints moved = simulate_endpoints(params, unit.with_r(r), x, mc);
    const KdeEstimate d = kde_difference(moved, base, y, bw);
    SlopeRow row;
    row.r = r;
    row.mc_slope = d.value / r;
    row.mc_error = d.error / r;
    row.series_slope = p1u.value;
    row.allowed = 3.0 * (d.error + d.bias_allowance) / r + p1u.error + r * std::abs(p2u.value) + r * p2u.error;
    row.passed = std::abs(row.mc_slope - row.series_slope) <= row.allowed;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Suites.

namespace {

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

std::string fmt_point(const Point& p) {
  std::ostringstream o;
  o.precision(6);
  o << "(";
  for (std::size_t i = 0; i < p.size(); ++i) o << (i ? "," : "") << p[i];
  o << ")";
  return o.str();
}

std::string fmt_worst(const WorstCase& w) {
  std::ostringstream o;
  o.precision(6);
  o << "t=" << w.t;
  if (w.s > 0.0) o << " s=" << w.s;
  if (!w.x.empty()) o << " x=" << fmt_point(w.x);
  if (!w.y.empty()) o << " y=" << fmt_point(w.y);
  if (!w.z.empty()) o << " z=" << fmt_point(w.z);
  return o.str();
}

CheckRecord record(const ConstantReport& r) {
  CheckRecord c;
  c.name = r.name;
  c.value = r.value;
  c.passed = r.stable_under_refinement && std::isfinite(r.value);
  c.worst_case = fmt_worst(r.worst_case);
  std::ostringstream o;
  o.precision(6);
  o << "refined=" << r.refined_value << " n=" << r.n_samples;
  c.note = o.str();
  return c;
}

CheckRecord record(const std::string& name, const Residual& r, double factor) {
  std::ostringstream o;
  o.precision(4);
  o << "error=" << r.error << " floor=" << r.floor;
  for (const auto& [k, v] : r.details) o << " " << k << "=" << v;
  return {name, r.value, r.passes(factor), "", o.str()};
}

CheckRecord record(const GrowthScan& g) {
  std::ostringstream o;
  o.precision(4);
  o << "ratio " << g.ratio.front() << " -> " << g.ratio.back() << " over " << g.abscissa.front()
    << ".." << g.abscissa.back();
  return {g.name + " (alpha = 2 control)", g.ratio.back() / g.ratio.front(), g.growth_detected, "",
          o.str()};
}

void unperturbed_suite(const SuiteConfig& cfg, std::vector<CheckRecord>& out) {
  const StableParams& P = cfg.params;
  const auto c1 = check_two_sided(P, cfg.sample);
  const auto c2 = check_3p(P, cfg.sample);
  const auto c3 = check_grad_bound(P, cfg.sample);
  for (const auto* r : {&c1, &c2, &c3}) out.push_back(record(*r));

  // every inequality is invariant under t -> lambda t, x -> lambda^{1/alpha} x
  double moved = 0.0;
  for (double lambda : {0.1, 10.0}) {
    SampleSpec sc = cfg.sample;
    sc.scale = lambda;
    moved = std::max({moved, std::abs(check_two_sided(P, sc).value / c1.value - 1.0),
                      std::abs(check_3p(P, sc).value / c2.value - 1.0),
                      std::abs(check_grad_bound(P, sc).value / c3.value - 1.0)});
  }
  out.push_back({"scale invariance of C1..C3", moved, moved < 1e-6, "", "lambda in {0.1, 10}"});

  if (P.alpha > 1.0) {
    const auto c5 = check_aux2(P.alpha, {0.5, 1.0, 10.0, 100.0});
    auto rec = record(c5);
    rec.passed = rec.passed && c5.detail("spread") < 5e-3;
    rec.note += " spread=" + fmt(c5.detail("spread"));
    out.push_back(rec);
  }
  out.push_back(record(three_point_growth(StableParams{2.0, P.dim})));
  out.push_back(record(grad_bound_growth(StableParams{2.0, P.dim})));
  const auto& kc = kappa_calibration();
  out.push_back({"kappa", kc.kappa, kc.max_relative_spread < 1e-4, "",
                 "spread=" + fmt(kc.max_relative_spread)});
}

void drift_suite(const SuiteConfig& cfg, std::vector<CheckRecord>& out) {
  const StableParams& P = cfg.params;
  if (P.dim != 2) throw std::invalid_argument("drift suite: the rotational field needs dim 2");
  auto b = rotational_field(P.alpha);
  out.push_back(record(check_aux1(P, b, cfg.sample)));

  const auto div = divergence_residual_weak(b, bump_function({0.3, -0.2}, 1.0), cfg.quad);
  out.push_back({"weak divergence", div.value, div.passes(1e-8), "",
                 "scale=" + fmt(div.scale)});

  const Point o = {0.0, 0.0};
  const auto kato = kato_modulus(b, P, 1.0, o, cfg.quad);
  out.push_back({"Kato modulus at 0 diverges", kato.rate_coefficient, kato.divergent, "",
                 "rate=" + kato.rate});

  const auto cb = drift_kernel_bound(b, P, {0.25, 1.0, 4.0}, cfg.quad);
  const auto [lo, hi] = std::minmax_element(cb.per_t.begin(), cb.per_t.end());
  const double spread = *hi / *lo - 1.0;
  out.push_back({"C_b", cb.value, spread < 0.01, "t=" + fmt(cb.worst_t) + " x=" + fmt_point(cb.worst_x),
                 "t-spread=" + fmt(spread)});
}

double suite_c_hat(const SuiteConfig& cfg, std::vector<CheckRecord>& out) {
  if (cfg.c_hat > 0.0) return cfg.c_hat;
  const auto cal = calibrate_C(cfg.params, rotational_field(cfg.params.alpha), cfg.calibration, cfg.quad);
  std::ostringstream o;
  o.precision(6);
  o << "c1=" << cal.c1 << " c2=" << cal.c2 << " (empirical lower estimate)";
  out.push_back({"C_hat", cal.c_hat, cal.c_hat > 0.0, "", o.str()});
  return cal.c_hat;
}

void perturbed_suite(const SuiteConfig& cfg, std::vector<CheckRecord>& out) {
  PerturbedKernel k;
  k.params = cfg.params;
  k.drift = rotational_field(cfg.params.alpha).with_r(cfg.r);
  k.quad = cfg.quad;
  k.n_iter = cfg.n_iter;
  k.c_hat = suite_c_hat(cfg, out);
  const Point& x = cfg.x;
  const Point& y = cfg.points.front();

  out.push_back(record("Chapman-Kolmogorov", check_chapman_kolmogorov(k, 0.5 * cfg.t, 0.5 * cfg.t, x, y), 5.0));
  const double R = 0.4 * cfg.quad.half_width * std::pow(cfg.t, 1.0 / cfg.params.alpha);
  out.push_back(record("mass", check_mass(k, cfg.t, x, R), 5.0));
  const auto phi = space_time_bump({0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])}, 1.5, -cfg.t, cfg.t);
  out.push_back(record("weak solution", check_weak_solution(k, phi, 0.0, x), 5.0));

  const auto series = duhamel_solve(k.params, k.drift, cfg.t, x, cfg.points, k.quad, k.n_iter, k.c_hat);
  const auto cmp = check_comparability(series, 1e-3);
  std::ostringstream o;
  o.precision(6);
  o << "ratio in [" << cmp.min_ratio << ", " << cmp.max_ratio << "] envelope [" << cmp.envelope.lower
    << ", " << cmp.envelope.upper << "] eta=" << series.eta;
  out.push_back({"comparability", cmp.max_ratio, cmp.passed, "y=" + fmt_point(cmp.worst), o.str()});
}

void mc_suite(const SuiteConfig& cfg, std::vector<CheckRecord>& out) {
  const StableParams& P = cfg.params;
  MCConfig mc = cfg.mc;
  mc.t = cfg.t;
  const double c_hat = suite_c_hat(cfg, out);
  const auto b = rotational_field(P.alpha).with_r(cfg.r);
  const auto ep = simulate_endpoints(P, b, cfg.x, mc);
  std::vector<KdeEstimate> kde;
  for (const auto& y : cfg.points)
    kde.push_back(kde_density(ep, y, 0.0, mc.reliable_quantile, mc.bandwidth_scale));
  const auto series = duhamel_solve(P, b, cfg.t, cfg.x, cfg.points, cfg.quad, cfg.n_iter, c_hat);
  const auto agree = check_mc_agreement(series, kde);
  for (const auto& row : agree.rows) {
    std::ostringstream o;
    o.precision(6);
    o << "series=" << row.series << " kde=" << row.mc.value << " se=" << row.mc.error
      << " bias=" << row.mc.bias_allowance << " allowed=" << row.allowed;
    out.push_back({"MC agreement", std::abs(row.series - row.mc.value), row.passed,
                   "y=" + fmt_point(row.y), o.str()});
  }

  // one Euler step is exact for the driftless process
  MCConfig one = mc;
  one.h = one.t;
  one.n_paths = std::min<std::int64_t>(mc.n_paths, 100000);
  const auto free = simulate_endpoints(P, b.with_r(0.0), cfg.x, one);
  std::vector<double> rho(free.size());
  for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = norm(diff(free[i], cfg.x));
  std::sort(rho.begin(), rho.end());
  const auto F = radial_cdf(P, one.t, rho);
  std::size_t idx = 0;
  const auto ks = ks_test(rho, [&](double) { return F[idx++]; });
  out.push_back({"one-step exactness (KS p-value)", ks.p_value, ks.p_value > 0.01, "",
                 "D=" + fmt(ks.statistic)});
}

}  // namespace

std::vector<std::string> suite_names() { return {"unperturbed", "drift", "perturbed", "mc", "all"}; }

std::vector<CheckRecord> run_suite(const std::string& name, const SuiteConfig& cfg) {
  std::vector<CheckRecord> out;
  if (name == "unperturbed" || name == "all") unperturbed_suite(cfg, out);
  if (name == "drift" || name == "all") drift_suite(cfg, out);
  if (name == "all") {
    // calibrate once for both grid-based suites
    SuiteConfig shared = cfg;
    shared.c_hat = suite_c_hat(cfg, out);
    perturbed_suite(shared, out);
    mc_suite(shared, out);
    return out;
  }
  if (name == "perturbed") perturbed_suite(cfg, out);
  if (name == "mc") mc_suite(cfg, out);
  if (out.empty()) {
    std::string known;
    for (const auto& s : suite_names()) known += (known.empty() ? "" : ", ") + s;
    throw std::invalid_argument("unknown suite '" + name + "' (known: " + known + ")");
  }
  return out;
}

}  // namespace fracdrift

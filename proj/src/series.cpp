#include "fracdrift/series.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fracdrift/cubature.hpp"

#include <omp.h>

#include <map>
#include <tuple>

namespace fracdrift {

std::uint64_t motzkin(int n) {
  if (n < 0) throw std::invalid_argument("motzkin: n must be nonnegative");
  std::vector<std::uint64_t> m = {1, 1};
  for (int k = 2; k <= n; ++k) {
    std::uint64_t acc = m[k - 1];
    for (int j = 0; j <= k - 2; ++j) {
      std::uint64_t prod;
      if (__builtin_mul_overflow(m[j], m[k - 2 - j], &prod) ||
          __builtin_add_overflow(acc, prod, &acc))
        throw std::overflow_error("motzkin: M_" + std::to_string(n) + " exceeds 64 bits");
    }
    m.push_back(acc);
  }
  return m[n];
}

double motzkin_gf(double x) {
  if (!(std::abs(x) < 1.0 / 3.0))
    throw std::domain_error("motzkin_gf: requires |x| < 1/3");
  if (std::abs(x) < 1e-4) {
    // 1 + x + 2x^2 + 4x^3 + 9x^4 avoids cancellation near 0
    return 1.0 + x * (1.0 + x * (2.0 + x * (4.0 + 9.0 * x)));
  }
  return (1.0 - x - std::sqrt(1.0 - 2.0 * x - 3.0 * x * x)) / (2.0 * x * x);
}

double eta_threshold() { return (std::sqrt(5.0) - 1.0) / 4.0; }

double tail_bound(double eta, int N) {
  if (N < 0) throw std::invalid_argument("tail_bound: N must be nonnegative");
  if (!(eta >= 0.0 && eta < 1.0 / 3.0))
    throw std::domain_error("tail_bound: requires 0 <= eta < 1/3");
  if (eta == 0.0) return 0.0;
  return static_cast<double>(motzkin(N + 1)) * std::pow(eta, N + 1) / (1.0 - 3.0 * eta);
}

Envelope comparability_envelope(double eta) {
  if (!(eta > 0.0 && eta < eta_threshold()))
    throw std::domain_error("comparability_envelope: eta must lie in (0, (sqrt5-1)/4), got " +
                            std::to_string(eta));
  Envelope e;
  // upper = sum M_n eta^n, lower = 2 - upper
  e.upper = motzkin_gf(eta);
  e.lower = 2.0 - e.upper;
  if (!(e.lower > 0.0)) throw std::domain_error("comparability_envelope: lower coefficient <= 0");
  return e;
}

// ---------------------------------------------------------------------------
// p1 by physical-space cubature

namespace {

void require_series_input(const StableParams& params, const DriftSpec& drift, double t) {
  params.validate_series();
  drift.validate();
  if (drift.dim != params.dim)
    throw std::invalid_argument("series: drift and kernel dimensions differ");
  if (!(t > 0.0)) throw std::invalid_argument("series: t must be positive");
  if (!drift.claimed_divergence_free)
    throw std::invalid_argument("series: drift '" + drift.name +
                                "' is not divergence-free; the gradient cannot be moved");
}

}  // namespace

Estimate p1(const StableParams& params, const DriftSpec& drift, double t,
            std::span<const double> x, std::span<const double> y, const QuadConfig& quad,
            const P1Options& opt) {
  require_series_input(params, drift, t);
  quad.validate();
  const int d = params.dim;
  if (d > 2) throw std::invalid_argument("p1: cubature supports d = 1, 2");
  if (drift.r == 0.0) return {0.0, 0.0};
  const double a = params.alpha;
  const auto& K = stable_kernel(a, d);
  const double kappa = convention_constant();
  const double q = a / (a - 1.0);

  CubatureOptions co;
  co.radial_nodes = quad.radial_nodes;
  co.angular_nodes = quad.angular_nodes;
  co.inner_factor = 1e-8;
  co.outer_factor = 1e5;

  // z-integral at the time pair (tl, tr): tl for the leg leaving x, tr for the leg into y.
  // left_gradient: the gradient sits on p(tl, z - x) (split form), else on p(tr, y - z).
  auto spatial = [&](double tl, double tr, bool left_gradient) {
    std::vector<CubatureCenter> cs;
    cs.push_back({Point(x.begin(), x.end()), std::pow(tl, 1.0 / a)});
    cs.push_back({Point(y.begin(), y.end()), std::pow(tr, 1.0 / a)});
    for (const auto& sp : drift.singular_points) cs.push_back({sp, std::pow(t, 1.0 / a)});
    double bz[2];
    auto f = [&](const double* z) {
      drift.field(std::span<const double>(z, d), std::span<double>(bz, d));
      double rx = 0.0, ry = 0.0, bx = 0.0, by = 0.0;
      for (int i = 0; i < d; ++i) {
        rx += (z[i] - x[i]) * (z[i] - x[i]);
        ry += (z[i] - y[i]) * (z[i] - y[i]);
        bx += (z[i] - x[i]) * bz[i];
        by += (z[i] - y[i]) * bz[i];
      }
      rx = std::sqrt(rx);
      ry = std::sqrt(ry);
      if (left_gradient) return kappa * bx * K.at(1, tl, rx) * K.at(0, tr, ry);
      return -kappa * by * K.at(0, tl, rx) * K.at(1, tr, ry);
    };
    try {
      return multi_center_integral(d, cs, f, co);
    } catch (const std::runtime_error& e) {
      throw NumericalError(std::string("p1: spatial integral failed: ") + e.what());
    }
  };

  // One half: the leg with the short time tau in (0, t/2) gets tau = (t/2) sigma^q.
  // into_y: the short leg is the one into y (s small), else the one leaving x.
  auto half = [&](int n, bool into_y, double& scale) {
    const QuadRule& gl = gauss_legendre(n);
    CompensatedSum acc;
    for (int k = 0; k < n; ++k) {
      const double sg = 0.5 * (gl.nodes[k] + 1.0);
      const double tau = 0.5 * t * std::pow(sg, q);
      const double w = 0.5 * gl.weights[k] * 0.5 * t * q * std::pow(sg, q - 1.0);
      const double v = into_y ? spatial(t - tau, tau, true) : spatial(tau, t - tau, false);
      acc.add(w * v);
      scale += std::abs(w * v);
    }
    return acc.value();
  };

  // naive form on s in (eps, t/2): log-spaced s, gradient on the short leg into y
  auto naive_half = [&](int n, double& scale) {
    const QuadRule& gl = gauss_legendre(n);
    const double lo = std::log(opt.naive_eps), hi = std::log(0.5 * t);
    CompensatedSum acc;
    for (int k = 0; k < n; ++k) {
      const double s = std::exp(lo + 0.5 * (hi - lo) * (gl.nodes[k] + 1.0));
      const double w = 0.5 * (hi - lo) * gl.weights[k] * s;
      const double v = spatial(t - s, s, false);
      acc.add(w * v);
      scale += std::abs(w * v);
    }
    return acc.value();
  };

  // values cancelling to ~0 (symmetric configurations) are judged against r t^{1-1/a} p(t,0)
  const double floor = 1e-9 * std::abs(drift.r) * std::pow(t, 1.0 - 1.0 / a) * K.at(0, t, 0.0);
  double prev = 0.0;
  int n = quad.time_nodes;
  for (int level = 0; level <= quad.max_doublings; ++level, n *= 2) {
    double scale = 0.0;
    const double left = opt.naive_eps > 0.0 ? naive_half(n, scale) : half(n, true, scale);
    const double cur = drift.r * (left + half(n, false, scale));
    scale *= std::abs(drift.r);
    if (level > 0) {
      const double err = std::abs(cur - prev);
      if (err <= quad.tol * std::abs(cur) + 1e-10 * scale + floor)
        return {cur, err + 1e-12 * scale};
    }
    prev = cur;
  }
  throw NumericalError("p1: time quadrature did not reach tol " + std::to_string(quad.tol) +
                       " at t=" + std::to_string(t));
}


// ---------------------------------------------------------------------------
// p2 by the region split, spatial pairings on a spectral grid

namespace {

int thread_count(int workers) { return workers > 0 ? workers : omp_get_max_threads(); }

struct Node {
  double tau, w;
};

// tau in (0, T) with tau = T sigma^q, which absorbs tau^{1/alpha - 1} at 0.
std::vector<Node> graded_nodes(double T, int n, double q) {
  const QuadRule& gl = gauss_legendre(n);
  std::vector<Node> out(n);
  for (int k = 0; k < n; ++k) {
    const double sg = 0.5 * (gl.nodes[k] + 1.0);
    out[k] = {T * std::pow(sg, q), 0.5 * gl.weights[k] * T * q * std::pow(sg, q - 1.0)};
  }
  return out;
}

// Graded at both ends of (0, T).
std::vector<Node> two_sided_nodes(double T, int n, double q) {
  auto lo = graded_nodes(0.5 * T, n, q);
  auto out = lo;
  for (const auto& nd : lo) out.push_back({T - nd.tau, nd.w});
  return out;
}

}  // namespace

struct SplitEvaluator::Impl {
  StableParams params;
  DriftSpec drift;
  QuadConfig quad;
  const StableKernel* K = nullptr;
  double kappa = 0.0, q = 0.0;
  int nt = 1;

  double t_grid = -1.0;
  std::unique_ptr<SpectralGrid> g;
  RealField b1, b2;            // tapered field on the nodes
  std::vector<double> lam;     // |k|^alpha per spectral index
  double taper_lo = 0.0, taper_hi = 0.0;

  using Key = std::tuple<double, double, int, int>;  // point, role, level
  std::map<Key, std::vector<ComplexField>> cache;

  void ensure_grid(double t) {
    if (t == t_grid) return;
    cache.clear();
    const double L = quad.split_half_width * std::pow(t, 1.0 / params.alpha);
    g = std::make_unique<SpectralGrid>(quad.split_grid, L);
    taper_lo = 0.75 * L;
    taper_hi = 0.95 * L;
    const int n = g->n();
    b1.assign(g->real_size(), 0.0);
    b2.assign(g->real_size(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double y[2] = {g->node(i), g->node(j)};
        const auto v = field_at(y);
        b1[static_cast<std::size_t>(i) * n + j] = v[0];
        b2[static_cast<std::size_t>(i) * n + j] = v[1];
      }
    lam.resize(g->spectral_size());
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < g->nk(); ++b)
        lam[static_cast<std::size_t>(a) * g->nk() + b] =
            std::pow(g->k1(a) * g->k1(a) + g->k2(b) * g->k2(b), 0.5 * params.alpha);
    t_grid = t;
  }

  std::array<double, 2> field_at(const double* y) const {
    const double w = radial_taper(std::hypot(y[0], y[1]), taper_lo, taper_hi);
    if (w == 0.0) return {0.0, 0.0};
    double out[2];
    drift.field(std::span<const double>(y, 2), std::span<double>(out, 2));
    return {w * out[0], w * out[1]};
  }

  // f(i, j, dy1, dy2, rho) over the nodes, dy = node - c
  template <class F>
  RealField sample(const double* c, F&& f) const {
    const int n = g->n();
    RealField out(g->real_size());
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double d1 = g->node(i) - c[0], d2 = g->node(j) - c[1];
        const std::size_t idx = static_cast<std::size_t>(i) * n + j;
        out[idx] = f(idx, d1, d2, std::hypot(d1, d2));
      }
    return out;
  }

  // b near a kernel center c: b(c) + J (w - c) + remainder, J_ij = d_j b_i(c).
  // Disabled (all zero) when c sits on a singular point of b.
  struct Frozen {
    double b[2] = {0.0, 0.0};
    double J[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  };

  Frozen frozen(const double* c) const {
    Frozen f;
    const double guard = 4.0 * g->spacing();
    for (const auto& sp : drift.singular_points)
      if (std::hypot(c[0] - sp[0], c[1] - sp[1]) < guard) return f;
    const auto bc = field_at(c);
    f.b[0] = bc[0];
    f.b[1] = bc[1];
    const double h = 1e-5 * std::max(1.0, std::hypot(c[0], c[1]));
    for (int j = 0; j < 2; ++j) {
      double yp[2] = {c[0], c[1]}, ym[2] = {c[0], c[1]};
      yp[j] += h;
      ym[j] -= h;
      const auto bp = field_at(yp), bm = field_at(ym);
      for (int i = 0; i < 2; ++i) f.J[i][j] = (bp[i] - bm[i]) / (2.0 * h);
    }
    return f;
  }

  // b - b(c) - J (w - c) at node idx, component i
  double residual_field(const Frozen& f, std::size_t idx, int i, double d1, double d2) const {
    const double bi = i == 0 ? b1[idx] : b2[idx];
    return bi - f.b[i] - f.J[i][0] * d1 - f.J[i][1] * d2;
  }

  // |k|^{alpha-2} (k . J k) and |k|^{alpha-2} (J k)_i
  double kJk(const Frozen& f, double k1, double k2, double lam_k) const {
    const double kk = k1 * k1 + k2 * k2;
    if (kk == 0.0) return 0.0;
    const double m = lam_k / kk;
    return m * (k1 * (f.J[0][0] * k1 + f.J[0][1] * k2) + k2 * (f.J[1][0] * k1 + f.J[1][1] * k2));
  }
  double Jk(const Frozen& f, int i, double k1, double k2, double lam_k) const {
    const double kk = k1 * k1 + k2 * k2;
    if (kk == 0.0) return 0.0;
    return lam_k / kk * (f.J[i][0] * k1 + f.J[i][1] * k2);
  }

  // (b_i - b_i(c) - (J(w-c))_i) p(sigma, w - c), transformed
  std::array<ComplexField, 2> leaving_remainder(const double* c, const Frozen& f,
                                                double sigma) const {
    const RealField p = sample(c, [&](std::size_t, double, double, double rho) {
      return K->at(0, sigma, rho);
    });
    RealField f1(p.size()), f2(p.size());
    const int n = g->n();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * n + j;
        const double d1 = g->node(i) - c[0], d2 = g->node(j) - c[1];
        f1[idx] = residual_field(f, idx, 0, d1, d2) * p[idx];
        f2[idx] = residual_field(f, idx, 1, d1, d2) * p[idx];
      }
    return {g->forward(f1), g->forward(f2)};
  }

  // (b(w) - b(c) - J(w-c)) . grad_w p(s, w - c), transformed
  ComplexField entering_remainder(const double* c, const Frozen& f, double s) const {
    return g->forward(sample(c, [&](std::size_t idx, double d1, double d2, double rho) {
      return -kappa * (d1 * residual_field(f, idx, 0, d1, d2) + d2 * residual_field(f, idx, 1, d1, d2)) *
             K->at(1, s, rho);
    }));
  }

  // b . grad p(tau, . - c) = -kappa (w - c).b(w) p^{(4)}(tau, w - c), transformed (tau not small)
  ComplexField drift_gradient(const double* c, double tau) const {
    return g->forward(sample(c, [&](std::size_t idx, double d1, double d2, double rho) {
      return -kappa * (d1 * b1[idx] + d2 * b2[idx]) * K->at(1, tau, rho);
    }));
  }

  template <class F>
  void for_modes(F&& f) const {
    const int n = g->n(), m = g->nk();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < m; ++b) {
        if (a == n / 2 || b == n / 2) continue;
        f(static_cast<std::size_t>(a) * m + b, g->k1(a), g->k2(b));
      }
  }

  // Transform of the frozen part of b p(sigma, . - c):
  //   [b(c) - i sigma alpha |k|^{alpha-2} J k] e^{-i k.c - sigma |k|^alpha}.
  // The linear term uses FT[z p] = i grad_k e^{-sigma |k|^alpha}.

  // p_1(v, c, .) as a field of the end point: leg leaving c.
  ComplexField p1_leaving(const double* c, double v, int ns) const {
    const Frozen f = frozen(c);
    ComplexField acc1(g->spectral_size()), acc2(g->spectral_size());
    for (const auto& nd : two_sided_nodes(v, ns, q)) {
      // s = nd.tau is the age of the kernel that carries the gradient
      const auto R = leaving_remainder(c, f, v - nd.tau);
      for_modes([&](std::size_t i, double, double) {
        const double e = nd.w * std::exp(-nd.tau * lam[i]);
        acc1[i] += e * R[0][i];
        acc2[i] += e * R[1][i];
      });
    }
    ComplexField out(g->spectral_size());
    const double r = drift.r, a = params.alpha;
    const std::complex<double> I(0.0, 1.0);
    for_modes([&](std::size_t i, double k1, double k2) {
      const std::complex<double> E =
          std::polar(std::exp(-v * lam[i]), -(k1 * c[0] + k2 * c[1]));
      // int_0^v e^{-s|k|^a} (frozen part at age v - s) ds
      const std::complex<double> frozen_div =
          E * (I * v * (k1 * f.b[0] + k2 * f.b[1]) + 0.5 * v * v * a * kJk(f, k1, k2, lam[i]));
      out[i] = -r * (frozen_div + I * (k1 * acc1[i] + k2 * acc2[i]));
    });
    return out;
  }

  // p_1(tau, ., c) as a field of the start point: leg entering c.
  // Frozen part of b . grad_w p(s, w - c): [i k.b(c) - tr J + s alpha |k|^{a-2} k.Jk] e^{-ik.c - s|k|^a}.
  ComplexField p1_entering(const double* c, double tau, int ns) const {
    const Frozen f = frozen(c);
    ComplexField acc(g->spectral_size());
    for (const auto& nd : two_sided_nodes(tau, ns, q)) {
      const auto H = entering_remainder(c, f, nd.tau);
      for_modes([&](std::size_t i, double, double) {
        acc[i] += nd.w * std::exp(-(tau - nd.tau) * lam[i]) * H[i];
      });
    }
    ComplexField out(g->spectral_size());
    const double r = drift.r, a = params.alpha;
    const double trJ = f.J[0][0] + f.J[1][1];
    for_modes([&](std::size_t i, double k1, double k2) {
      const std::complex<double> E =
          std::polar(std::exp(-tau * lam[i]), -(k1 * c[0] + k2 * c[1]));
      const std::complex<double> fr(-tau * trJ + 0.5 * tau * tau * a * kJk(f, k1, k2, lam[i]),
                                    tau * (k1 * f.b[0] + k2 * f.b[1]));
      out[i] = r * (fr * E + acc[i]);
    });
    return out;
  }

  // k . (b p(age, . - c)) e^{-shift |k|^alpha}
  ComplexField k_dot_drift_kernel(const double* c, double age, double shift) const {
    const Frozen f = frozen(c);
    const auto R = leaving_remainder(c, f, age);
    ComplexField out(g->spectral_size());
    const double a = params.alpha;
    const std::complex<double> I(0.0, 1.0);
    for_modes([&](std::size_t i, double k1, double k2) {
      const std::complex<double> E =
          std::polar(std::exp(-age * lam[i]), -(k1 * c[0] + k2 * c[1]));
      const std::complex<double> fr =
          E * (k1 * f.b[0] + k2 * f.b[1] - I * age * a * kJk(f, k1, k2, lam[i]));
      out[i] = (fr + k1 * R[0][i] + k2 * R[1][i]) * std::exp(-shift * lam[i]);
    });
    return out;
  }

  const std::vector<ComplexField>& fields(int role, const double* c, int level, double t, int n) {
    const Key key{c[0], c[1], role, level};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<ComplexField> fs;
    const double half = 0.5 * t;
    switch (role) {
      case 0:  // A: p_1(v, x, .) for v in (0, t/2)
        for (const auto& nd : graded_nodes(half, n, q)) fs.push_back(p1_leaving(c, nd.tau, n));
        break;
      case 1:  // A: b . grad p(t - v, ., y)
        for (const auto& nd : graded_nodes(half, n, q)) fs.push_back(drift_gradient(c, t - nd.tau));
        break;
      case 2:  // B: grad p(u, x, .) . b = b . grad_w p(u, w - x) with u = t - tau
        for (const auto& nd : graded_nodes(half, n, q)) fs.push_back(drift_gradient(c, t - nd.tau));
        break;
      case 3:  // B: p_1(tau, ., y)
        for (const auto& nd : graded_nodes(half, n, q)) fs.push_back(p1_entering(c, nd.tau, n));
        break;
      case 4:  // C: u = t/2 - a, leg leaving x
        for (const auto& nd : two_sided_nodes(half, n, q))
          fs.push_back(k_dot_drift_kernel(c, half - nd.tau, nd.tau));
        break;
      case 5:  // C: v = t/2 + c, leg entering y of age t - v
        for (const auto& nd : two_sided_nodes(half, n, q))
          fs.push_back(k_dot_drift_kernel(c, half - nd.tau, nd.tau));
        break;
    }
    return cache.emplace(key, std::move(fs)).first->second;
  }

  // r^2 p_2 at one quadrature level
  double level_value(double t, const double* x, const double* y, int level) {
    const int n = quad.time_nodes << level;
    const double half = 0.5 * t, r = drift.r;
    CompensatedSum total;
    {
      const auto nodes = graded_nodes(half, n, q);
      const auto& P = fields(0, x, level, t, n);
      const auto& G = fields(1, y, level, t, n);
      for (int k = 0; k < n; ++k) total.add(r * nodes[k].w * g->inner(P[k], G[k]));
    }
    {
      // grad_xi p(u, x, xi) = -kappa (xi - x) p^{(4)}: the same sampled field as role 1 about x
      const auto nodes = graded_nodes(half, n, q);
      const auto& Q = fields(2, x, level, t, n);
      const auto& P = fields(3, y, level, t, n);
      for (int k = 0; k < n; ++k) total.add(-r * nodes[k].w * g->inner(Q[k], P[k]));
    }
    {
      const auto nodes = two_sided_nodes(half, n, q);
      const auto& Phi = fields(4, x, level, t, n);
      const auto& Psi = fields(5, y, level, t, n);
      for (std::size_t a = 0; a < nodes.size(); ++a)
        for (std::size_t c = 0; c < nodes.size(); ++c)
          total.add(-r * r * nodes[a].w * nodes[c].w * g->inner(Phi[a], Psi[c]));
    }
    return total.value();
  }
};

SplitEvaluator::SplitEvaluator(const StableParams& params, const DriftSpec& drift,
                               const QuadConfig& quad)
    : impl_(std::make_unique<Impl>()) {
  require_series_input(params, drift, 1.0);
  quad.validate();
  if (params.dim != 2) throw std::invalid_argument("SplitEvaluator: d = 2 only");
  impl_->params = params;
  impl_->drift = drift;
  impl_->quad = quad;
  impl_->K = &stable_kernel(params.alpha, 2);
  impl_->kappa = convention_constant();
  impl_->q = params.alpha / (params.alpha - 1.0);
  impl_->nt = thread_count(quad.workers);
}

SplitEvaluator::~SplitEvaluator() = default;

Estimate SplitEvaluator::p2(double t, std::span<const double> x, std::span<const double> y) {
  if (!(t > 0.0)) throw std::invalid_argument("p2: t must be positive");
  auto& I = *impl_;
  if (I.drift.r == 0.0) return {0.0, 0.0};
  I.ensure_grid(t);
  const double floor = 1e-10 * I.drift.r * I.drift.r * std::pow(t, -2.0 / I.params.alpha);
  double prev = I.level_value(t, x.data(), y.data(), 0);
  for (int level = 1; level <= std::max(1, I.quad.max_doublings); ++level) {
    const double cur = I.level_value(t, x.data(), y.data(), level);
    const double err = std::abs(cur - prev);
    if (err <= I.quad.tol * std::abs(cur) + floor) return {cur, err + floor};
    prev = cur;
  }
  throw NumericalError("p2: time quadrature did not reach tol " + std::to_string(I.quad.tol));
}

double SplitEvaluator::p1_spectral(double t, std::span<const double> x,
                                   std::span<const double> y) {
  auto& I = *impl_;
  I.ensure_grid(t);
  const int n = I.quad.time_nodes << 1;
  return I.g->evaluate(I.p1_leaving(x.data(), t, n), y);
}

Estimate p2(const StableParams& params, const DriftSpec& drift, double t,
            std::span<const double> x, std::span<const double> y, const QuadConfig& quad) {
  SplitEvaluator ev(params, drift, quad);
  return ev.p2(t, x, y);
}

// ---------------------------------------------------------------------------
// Picard iteration on the periodic grid

double SeriesResult::total(std::size_t j) const {
  double s = 0.0;
  for (const auto& term : terms) s += term[j].value;
  return s;
}

namespace {

// int_0^1 e^{-z u} du and int_0^1 u e^{-z u} du
void etd_weights(double z, double& i0, double& i1) {
  if (z < 1e-3) {
    i0 = 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
    i1 = 0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0;
    return;
  }
  const double em = -std::expm1(-z);
  i0 = em / z;
  i1 = (em - z * std::exp(-z)) / (z * z);
}

struct PicardRun {
  std::vector<ComplexField> term_hat;  // p_n(t, x, .), n = 1..N (index 0 unused)
  std::vector<RealField> total;        // optional history
};

PicardRun picard_run(const SpectralGrid& g, const StableParams& params, const DriftSpec& drift,
                     double t, std::span<const double> x, int steps, int n_iter,
                     bool keep_history, int nt) {
  const double alpha = params.alpha, r = drift.r;
  const auto& K = stable_kernel(alpha, 2);
  const int n = g.n(), m = g.nk();
  const double L = g.half_width();
  const double dt = t / steps;

  // tapered field
  RealField b1(g.real_size()), b2(g.real_size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double y[2] = {g.node(i), g.node(j)};
      const double w = radial_taper(std::hypot(y[0], y[1]), 0.75 * L, 0.95 * L);
      double out[2] = {0.0, 0.0};
      if (w > 0.0) drift.field(std::span<const double>(y, 2), std::span<double>(out, 2));
      b1[static_cast<std::size_t>(i) * n + j] = w * out[0];
      b2[static_cast<std::size_t>(i) * n + j] = w * out[1];
    }
  double bx[2] = {0.0, 0.0};
  {
    bool on_singular = false;
    for (const auto& sp : drift.singular_points)
      if (std::hypot(x[0] - sp[0], x[1] - sp[1]) < 4.0 * g.spacing()) on_singular = true;
    if (!on_singular) {
      drift.field(x, std::span<double>(bx, 2));
      const double w = radial_taper(std::hypot(x[0], x[1]), 0.75 * L, 0.95 * L);
      bx[0] *= w;
      bx[1] *= w;
    }
  }

  std::vector<double> lam(g.spectral_size()), decay(g.spectral_size()), w0(g.spectral_size()),
      w1(g.spectral_size());
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < m; ++b) {
      const std::size_t i = static_cast<std::size_t>(a) * m + b;
      lam[i] = std::pow(g.k1(a) * g.k1(a) + g.k2(b) * g.k2(b), 0.5 * alpha);
      const double z = dt * lam[i];
      double i0, i1;
      etd_weights(z, i0, i1);
      decay[i] = std::exp(-z);
      w0[i] = dt * i1;         // weight of the left node
      w1[i] = dt * (i0 - i1);  // weight of the right node
    }
  auto for_modes = [&](auto&& f) {
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < m; ++b) {
        if (a == n / 2 || b == n / 2) continue;
        f(static_cast<std::size_t>(a) * m + b, g.k1(a), g.k2(b));
      }
  };
  auto product = [&](const RealField& bcomp, const RealField& u, double shift) {
    RealField f(u.size());
#pragma omp parallel for schedule(static) num_threads(nt)
    for (std::size_t i = 0; i < u.size(); ++i) f[i] = (bcomp[i] - shift) * u[i];
    return g.forward(f);
  };

  // u_0 on the time nodes
  std::vector<RealField> U(steps + 1);
  for (int j = 1; j <= steps; ++j) U[j] = g.sample_kernel(K, j * dt, x, nt != 1);

  PicardRun run;
  run.term_hat.resize(n_iter + 1);
  if (keep_history) {
    run.total.resize(steps + 1);
    for (int j = 1; j <= steps; ++j) run.total[j] = U[j];
  }
  const std::complex<double> I(0.0, 1.0);
  double factorial = 1.0;
  for (int term = 1; term <= n_iter; ++term) {
    factorial *= term;
    ComplexField V1(g.spectral_size()), V2(g.spectral_size()), u_hat(g.spectral_size());
    std::vector<RealField> next(steps + 1);
    // first step: b frozen at x integrates exactly; the remainder is linear from 0
    {
      const auto R1 = product(b1, U[1], bx[0]);
      const auto R2 = product(b2, U[1], bx[1]);
      for_modes([&](std::size_t i, double k1, double k2) {
        const std::complex<double> E =
            std::polar(std::exp(-dt * lam[i]), -(k1 * x[0] + k2 * x[1]));
        const std::complex<double> c =
            E * std::pow(-I * r * dt * (k1 * bx[0] + k2 * bx[1]), term - 1) * (dt / factorial);
        V1[i] = bx[0] * c + w1[i] * R1[i];
        V2[i] = bx[1] * c + w1[i] * R2[i];
      });
    }
    ComplexField F1 = product(b1, U[1], 0.0), F2 = product(b2, U[1], 0.0);
    for (int j = 1;; ++j) {
      for_modes([&](std::size_t i, double k1, double k2) {
        u_hat[i] = -r * I * (k1 * V1[i] + k2 * V2[i]);
      });
      next[j] = g.inverse(u_hat);
      if (j == steps) break;
      const auto G1 = product(b1, U[j + 1], 0.0), G2 = product(b2, U[j + 1], 0.0);
      for_modes([&](std::size_t i, double, double) {
        V1[i] = decay[i] * V1[i] + w0[i] * F1[i] + w1[i] * G1[i];
        V2[i] = decay[i] * V2[i] + w0[i] * F2[i] + w1[i] * G2[i];
      });
      F1 = G1;
      F2 = G2;
    }
    run.term_hat[term] = u_hat;
    if (keep_history)
      for (int j = 1; j <= steps; ++j)
        for (std::size_t i = 0; i < next[j].size(); ++i) run.total[j][i] += next[j][i];
    U = std::move(next);
  }
  return run;
}

}  // namespace

ComplexField PicardFields::total_hat() const {
  if (term_hat.empty()) throw std::logic_error("PicardFields: no terms");
  ComplexField out = term_hat[0];
  for (std::size_t n = 1; n < term_hat.size(); ++n)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += term_hat[n][i];
  return out;
}

SeriesResult duhamel_solve(const StableParams& params, const DriftSpec& drift, double t,
                           std::span<const double> x, const std::vector<Point>& y_grid,
                           const QuadConfig& quad, int n_iter, double c_hat,
                           const PicardOptions& opt, PicardFields* fields) {
  require_series_input(params, drift, t);
  quad.validate();
  if (params.dim != 2) throw std::invalid_argument("duhamel_solve: d = 2 only");
  if (n_iter < 0) throw std::invalid_argument("duhamel_solve: n_iter must be nonnegative");
  if (!(c_hat >= 0.0)) throw std::invalid_argument("duhamel_solve: c_hat must be nonnegative");
  const int nt = thread_count(quad.workers);
  const double alpha = params.alpha;
  if (!(opt.box >= 0.0)) throw std::invalid_argument("duhamel_solve: box must be nonnegative");
  const double L = opt.box > 0.0 ? opt.box : quad.half_width * std::pow(t, 1.0 / alpha);
  auto grid = std::make_shared<SpectralGrid>(quad.grid, L);
  // even, so the error-estimate run halves it exactly
  const int steps = 2 * std::max(1, static_cast<int>(std::lround(0.5 / quad.time_step)));

  SeriesResult res;
  res.points = y_grid;
  res.eta = std::abs(drift.r) * c_hat;
  // r = 0 is exact (eta = 0, unit envelope) whether or not C was calibrated
  res.converged = drift.r == 0.0 || (c_hat > 0.0 && res.eta < eta_threshold());
  res.upper_bound_only = res.eta >= eta_threshold() && res.eta < 1.0 / 3.0;
  if (res.converged && res.eta > 0.0) res.envelope = comparability_envelope(res.eta);
  res.tail_bound = res.eta < 1.0 / 3.0 ? tail_bound(res.eta, n_iter)
                                       : std::numeric_limits<double>::infinity();
  res.resolution =
      t / steps * std::pow(std::numbers::pi / grid->spacing(), alpha);

  const auto& K = stable_kernel(alpha, 2);
  std::vector<double> p0(y_grid.size());
  res.terms.assign(n_iter + 1, std::vector<Estimate>(y_grid.size()));
  for (std::size_t j = 0; j < y_grid.size(); ++j) {
    if (y_grid[j].size() != 2) throw std::invalid_argument("duhamel_solve: points must be 2-d");
    p0[j] = K.at(0, t, std::hypot(y_grid[j][0] - x[0], y_grid[j][1] - x[1]));
    res.terms[0][j] = {p0[j], 0.0};
  }
  if (drift.r == 0.0 || n_iter == 0) {
    if (fields) {
      *fields = PicardFields{};
      fields->grid = grid;
      fields->term_hat = {grid->kernel_hat(alpha, t, x)};
      fields->times.resize(steps + 1);
      for (int j = 0; j <= steps; ++j) fields->times[j] = t * j / steps;
    }
    return res;
  }

  const auto fine = picard_run(*grid, params, drift, t, x, steps, n_iter, opt.keep_history, nt);
  std::vector<PicardRun> coarse;
  if (opt.error_estimate)
    coarse.push_back(picard_run(*grid, params, drift, t, x, steps / 2, n_iter, opt.keep_history, nt));

  std::vector<double> norms;
  for (int term = 1; term <= n_iter; ++term) {
    double norm = 0.0;
    for (std::size_t j = 0; j < y_grid.size(); ++j) {
      double v = grid->evaluate(fine.term_hat[term], y_grid[j]);
      double err = 0.0;
      if (!coarse.empty()) {
        // the step is second order: Richardson with the doubled step
        const double diff = v - grid->evaluate(coarse[0].term_hat[term], y_grid[j]);
        v += diff / 3.0;
        err = std::abs(diff) / 3.0;
      }
      res.terms[term][j] = {v, err};
      if (p0[j] > 0.0) norm = std::max(norm, std::abs(v) / p0[j]);
    }
    norms.push_back(norm);
    const std::size_t k = norms.size();
    if (k >= 3 && norms[k - 1] > norms[k - 2] && norms[k - 2] > norms[k - 3])
      throw NumericalError("duhamel_solve: Picard differences grew for two consecutive iterations"
                           " (eta = " + std::to_string(res.eta) + ")");
  }

  if (fields) {
    auto fill = [&](PicardFields& f, const PicardRun& run, int m) {
      f.grid = grid;
      f.times.resize(m + 1);
      for (int j = 0; j <= m; ++j) f.times[j] = t * j / m;
      f.total = run.total;
      f.term_hat = run.term_hat;
      f.term_hat[0] = grid->kernel_hat(alpha, t, x);
    };
    *fields = PicardFields{};
    fill(*fields, fine, steps);
    if (!coarse.empty()) {
      fields->coarse = std::make_shared<PicardFields>();
      fill(*fields->coarse, coarse[0], steps / 2);
    }
  }
  return res;
}

Calibration calibrate_C(const StableParams& params, const DriftSpec& drift,
                        const std::vector<SamplePoint>& sample, const QuadConfig& quad) {
  if (sample.empty()) throw std::invalid_argument("calibrate_C: empty sample");
  const DriftSpec unit = drift.with_r(1.0);
  require_series_input(params, unit, sample.front().t);
  const auto& K = stable_kernel(params.alpha, params.dim);
  SplitEvaluator split(params, unit, quad);
  Calibration cal;
  for (const auto& sp : sample) {
    double d2 = 0.0;
    for (int i = 0; i < params.dim; ++i) d2 += (sp.x[i] - sp.y[i]) * (sp.x[i] - sp.y[i]);
    const double p = K.at(0, sp.t, std::sqrt(d2));
    cal.p1_unit.push_back(p1(params, unit, sp.t, sp.x, sp.y, quad));
    cal.p2_unit.push_back(split.p2(sp.t, sp.x, sp.y));
    cal.c1 = std::max(cal.c1, std::abs(cal.p1_unit.back().value) / p);
    cal.c2 = std::max(cal.c2, std::abs(cal.p2_unit.back().value) / (2.0 * p));
  }
  cal.c_hat = cal.c1 + std::sqrt(cal.c2);
  return cal;
}

}  // namespace fracdrift

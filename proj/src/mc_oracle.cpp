#include "fracdrift/mc_oracle.hpp"

#include <omp.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fracdrift {

void MCConfig::validate() const {
  if (n_paths < 1) throw std::invalid_argument("MCConfig: n_paths must be >= 1");
  if (!(t > 0.0)) throw std::invalid_argument("MCConfig: t must be positive");
  if (!(h > 0.0) || h > t) throw std::invalid_argument("MCConfig: step h must be in (0, t]");
  if (!(drift_cap > 0.0)) throw std::invalid_argument("MCConfig: drift_cap must be positive");
  if (!(bandwidth_scale > 0.0)) throw std::invalid_argument("MCConfig: bandwidth_scale must be positive");
  if (!(reliable_quantile > 0.0 && reliable_quantile <= 1.0))
    throw std::invalid_argument("MCConfig: reliable_quantile must be in (0, 1]");
  if (workers < 0) throw std::invalid_argument("MCConfig: workers must be >= 0");
}

int MCConfig::steps() const { return std::max(1, static_cast<int>(std::ceil(t / h - 1e-9))); }

PathRng::PathRng(std::uint64_t seed, std::uint64_t path) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)};
  eng_.seed(seq);
}

double PathRng::uniform() {
  // 53 random bits, shifted off zero
  return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
}

double PathRng::exponential() { return -std::log(uniform()); }

double PathRng::normal() { return normal_(eng_); }

double sample_positive_stable(double beta, PathRng& rng) {
  if (!(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("sample_positive_stable: beta must be in (0,1)");
  const double u = std::numbers::pi * rng.uniform();
  const double e = rng.exponential();
  const double a = std::sin(beta * u) / std::pow(std::sin(u), 1.0 / beta);
  return a * std::pow(std::sin((1.0 - beta) * u) / e, (1.0 - beta) / beta);
}

void sample_isotropic_stable(double alpha, PathRng& rng, std::span<double> out) {
  if (!(alpha > 0.0 && alpha <= 2.0))
    throw std::invalid_argument("sample_isotropic_stable: alpha must be in (0,2]");
  const double scale =
      alpha == 2.0 ? std::numbers::sqrt2 : std::sqrt(2.0 * sample_positive_stable(0.5 * alpha, rng));
  for (double& v : out) v = scale * rng.normal();
}

Point sample_isotropic_stable(double alpha, int dim, PathRng& rng) {
  Point x(dim);
  sample_isotropic_stable(alpha, rng, x);
  return x;
}

Endpoints simulate_endpoints(const StableParams& params, const DriftSpec& drift,
                             std::span<const double> x0, const MCConfig& cfg) {
  params.validate_series();
  cfg.validate();
  const int d = params.dim;
  if (drift.dim != d || static_cast<int>(x0.size()) != d)
    throw std::invalid_argument("simulate_endpoints: dimension mismatch");
  if (d > 8) throw std::invalid_argument("simulate_endpoints: dim must be <= 8");

  const int n_steps = cfg.steps();
  const double last = cfg.t - (n_steps - 1) * cfg.h;
  const double alpha = params.alpha;
  const double jump_h = std::pow(cfg.h, 1.0 / alpha), jump_last = std::pow(last, 1.0 / alpha);
  const double r = drift.r;
  const bool moving = r != 0.0 && static_cast<bool>(drift.field);

  Endpoints ep;
  ep.dim = d;
  ep.coords.resize(static_cast<std::size_t>(cfg.n_paths) * d);
  const int nt = cfg.workers > 0 ? cfg.workers : omp_get_max_threads();

#pragma omp parallel for schedule(static) num_threads(nt)
  for (std::int64_t p = 0; p < cfg.n_paths; ++p) {
    PathRng rng(cfg.seed, static_cast<std::uint64_t>(p));
    double x[8], b[8], s[8];
    std::copy(x0.begin(), x0.end(), x);
    for (int k = 0; k < n_steps; ++k) {
      const double dt = k + 1 < n_steps ? cfg.h : last;
      if (moving) {
        drift.field(std::span<const double>(x, d), std::span<double>(b, d));
        double m = 0.0;
        for (int i = 0; i < d; ++i) m += b[i] * b[i];
        m = std::sqrt(m);
        // at a singular point the field is undefined; the step is taken without drift
        if (std::isfinite(m)) {
          const double c = m > cfg.drift_cap ? cfg.drift_cap / m : 1.0;
          for (int i = 0; i < d; ++i) x[i] += r * c * b[i] * dt;
        }
      }
      sample_isotropic_stable(alpha, rng, std::span<double>(s, d));
      const double jump = k + 1 < n_steps ? jump_h : jump_last;
      for (int i = 0; i < d; ++i) x[i] += jump * s[i];
    }
    std::copy(x, x + d, ep.coords.begin() + p * d);
  }
  return ep;
}

namespace {

double quantile(std::vector<double> v, double q) {
  const auto k = static_cast<std::size_t>(std::clamp(q, 0.0, 1.0) * (v.size() - 1));
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[k];
}

std::vector<double> coordinate(const Endpoints& s, int i) {
  std::vector<double> c(s.size());
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = s.coords[j * s.dim + i];
  return c;
}

}  // namespace

double plugin_bandwidth(const Endpoints& samples) {
  const std::size_t n = samples.size();
  if (n == 0) throw std::invalid_argument("plugin_bandwidth: no samples");
  const int d = samples.dim;
  double sigma = 0.0;
  for (int i = 0; i < d; ++i) {
    const auto c = coordinate(samples, i);
    sigma += (quantile(c, 0.75) - quantile(c, 0.25)) / 1.349;
  }
  sigma /= d;
  if (!(sigma > 0.0))
    throw std::invalid_argument("plugin_bandwidth: degenerate sample, pass a bandwidth");
  return sigma * std::pow(4.0 / (d + 2.0), 1.0 / (d + 4.0)) *
         std::pow(static_cast<double>(n), -1.0 / (d + 4.0));
}

KdeEstimate kde_density(const Endpoints& samples, std::span<const double> y, double bandwidth,
                        double reliable_quantile, double bandwidth_scale) {
  const std::size_t n = samples.size();
  const int d = samples.dim;
  if (n == 0) throw std::invalid_argument("kde_density: no samples");
  if (static_cast<int>(y.size()) != d) throw std::invalid_argument("kde_density: dimension mismatch");

  KdeEstimate out;
  out.bandwidth = bandwidth > 0.0 ? bandwidth : bandwidth_scale * plugin_bandwidth(samples);
  const double h = out.bandwidth;

  // heavy tails: beyond the quantile radius about the median the estimate is not trusted
  Point med(d);
  for (int i = 0; i < d; ++i) med[i] = quantile(coordinate(samples, i), 0.5);
  std::vector<double> rad(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += std::pow(samples.coords[j * d + i] - med[i], 2);
    rad[j] = std::sqrt(s);
  }
  double dy = 0.0;
  for (int i = 0; i < d; ++i) dy += std::pow(y[i] - med[i], 2);
  if (std::sqrt(dy) > quantile(std::move(rad), reliable_quantile)) {
    out.reliable = false;
    return out;
  }

  const double norm1 = std::pow(2.0 * std::numbers::pi * h * h, -0.5 * d);
  const double norm2 = norm1 * std::pow(2.0, -d);
  double sum = 0.0, sum2 = 0.0, wide = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : sum, sum2, wide)
  for (std::size_t j = 0; j < n; ++j) {
    double q = 0.0;
    for (int i = 0; i < d; ++i) q += std::pow(samples.coords[j * d + i] - y[i], 2);
    q /= h * h;
    const double k = norm1 * std::exp(-0.5 * q);
    sum += k;
    sum2 += k * k;
    wide += norm2 * std::exp(-0.125 * q);
  }
  const double nd = static_cast<double>(n);
  out.value = sum / nd;
  out.error = n > 1 ? std::sqrt(std::max(0.0, sum2 / nd - out.value * out.value) / (nd - 1.0)) : 0.0;
  out.bias_allowance = std::abs(out.value - wide / nd) / 3.0;
  return out;
}

KdeEstimate kde_difference(const Endpoints& a, const Endpoints& b, std::span<const double> y,
                           double bandwidth) {
  const std::size_t n = a.size();
  const int d = a.dim;
  if (n == 0 || b.size() != n || b.dim != d)
    throw std::invalid_argument("kde_difference: runs must have the same nonzero size");
  if (static_cast<int>(y.size()) != d) throw std::invalid_argument("kde_difference: dimension mismatch");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_difference: bandwidth must be positive");
  const double h = bandwidth;
  const double norm1 = std::pow(2.0 * std::numbers::pi * h * h, -0.5 * d);
  const double norm2 = norm1 * std::pow(2.0, -d);
  auto q = [&](const Endpoints& e, std::size_t j) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += std::pow(e.coords[j * d + i] - y[i], 2);
    return s / (h * h);
  };
  double sum = 0.0, sum2 = 0.0, wide = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : sum, sum2, wide)
  for (std::size_t j = 0; j < n; ++j) {
    const double qa = q(a, j), qb = q(b, j);
    const double k = norm1 * (std::exp(-0.5 * qa) - std::exp(-0.5 * qb));
    sum += k;
    sum2 += k * k;
    wide += norm2 * (std::exp(-0.125 * qa) - std::exp(-0.125 * qb));
  }
  const double nd = static_cast<double>(n);
  KdeEstimate out;
  out.bandwidth = h;
  out.value = sum / nd;
  out.error = n > 1 ? std::sqrt(std::max(0.0, sum2 / nd - out.value * out.value) / (nd - 1.0)) : 0.0;
  out.bias_allowance = std::abs(out.value - wide / nd) / 3.0;
  return out;
}

double kolmogorov_p_value(double d, double n_eff) {
  const double sn = std::sqrt(n_eff);
  const double lam = (sn + 0.12 + 0.11 / sn) * d;
  if (lam < 0.2) return 1.0;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lam * lam);
    q += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(q, 0.0, 1.0);
}

TestStatistic ks_test(std::span<const double> sorted, const std::function<double(double)>& cdf) {
  const std::size_t n = sorted.size();
  if (n == 0) throw std::invalid_argument("ks_test: no samples");
  double dmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = cdf(sorted[i]);
    dmax = std::max({dmax, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return {dmax, kolmogorov_p_value(dmax, static_cast<double>(n))};
}

TestStatistic ks_test_2(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_test_2: empty sample");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double dmax = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    dmax = std::max(dmax, std::abs(i / na - j / nb));
  }
  return {dmax, kolmogorov_p_value(dmax, na * nb / (na + nb))};
}

TestStatistic angular_uniformity(const Endpoints& samples, std::span<const double> center, int bins) {
  if (samples.dim != 2) throw std::invalid_argument("angular_uniformity: dim must be 2");
  if (bins < 2) throw std::invalid_argument("angular_uniformity: bins must be >= 2");
  std::vector<double> count(bins, 0.0);
  std::size_t used = 0;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const double a = samples.coords[2 * j] - center[0], b = samples.coords[2 * j + 1] - center[1];
    if (a == 0.0 && b == 0.0) continue;
    if (!std::isfinite(a) || !std::isfinite(b)) throw std::invalid_argument("angular_uniformity: non-finite sample");
    const double th = std::atan2(b, a) + std::numbers::pi;
    const int k = std::min(bins - 1, static_cast<int>(th / (2.0 * std::numbers::pi) * bins));
    count[k] += 1.0;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("angular_uniformity: no samples off the center");
  const double expect = static_cast<double>(used) / bins;
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expect) * (c - expect) / expect;
  boost::math::chi_squared dist(bins - 1);
  return {chi2, boost::math::cdf(boost::math::complement(dist, chi2))};
}

std::vector<double> radial_cdf(const StableParams& params, double t, std::span<const double> rho) {
  params.validate();
  if (params.dim > 2) throw std::invalid_argument("radial_cdf: dim must be 1 or 2");
  if (!(t > 0.0)) throw std::invalid_argument("radial_cdf: t must be positive");
  const StableKernel& K = stable_kernel(params.alpha, params.dim);
  const double scale = std::pow(t, 1.0 / params.alpha);
  const double shell = params.dim == 1 ? 2.0 : 2.0 * std::numbers::pi;
  const QuadRule& gl = gauss_legendre(8);
  auto piece = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      const double u = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[i];
      s += gl.weights[i] * (params.dim == 1 ? 1.0 : u) * K.density(t, u);
    }
    return 0.5 * (b - a) * shell * s;
  };
  std::vector<double> out(rho.size());
  double acc = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double target = rho[i];
    if (target < prev) throw std::invalid_argument("radial_cdf: rho must be ascending");
    // pieces no longer than 0.25 t^{1/alpha} near the origin and geometric beyond
    while (prev < target) {
      const double next = std::min(target, std::max(prev + 0.25 * scale, 1.5 * prev));
      acc += piece(prev, next);
      prev = next;
    }
    out[i] = std::min(acc, 1.0);
  }
  return out;
}

}  // namespace fracdrift

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fracdrift/drift.hpp"
#include "fracdrift/stable_kernel.hpp"

namespace fracdrift {

struct MCConfig {
  std::int64_t n_paths = 100000;
  double t = 1.0;            // horizon
  double h = 1.0 / 512.0;    // Euler step; the last step is shortened to land on t
  std::uint64_t seed = 1;
  double drift_cap = 1e3;    // |b| is clipped to this value near singular points
  double bandwidth_scale = 1.0;     // multiplies the plug-in bandwidth
  double reliable_quantile = 0.99;  // KDE refuses points beyond this radial quantile
  int workers = 0;           // 0 = OpenMP default, 1 = serial reference

  void validate() const;
  int steps() const;  // ceil(t / h)
};

/// Per-path random stream. Seeded from (seed, path index) only, so a path's
/// increments do not depend on how paths are split among threads.
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path);

  double uniform();      // (0, 1)
  double exponential();  // mean 1
  double normal();       // standard

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_;
};

/// Positive beta-stable variate with E e^{-lambda A} = e^{-lambda^beta}, by
/// Kanter's representation A = (K(U)/E)^{(1-beta)/beta}.
double sample_positive_stable(double beta, PathRng& rng);

/// Isotropic alpha-stable vector with E e^{i xi.X} = e^{-|xi|^alpha}:
/// X = sqrt(2A) Z, A positive (alpha/2)-stable, Z standard normal.
void sample_isotropic_stable(double alpha, PathRng& rng, std::span<double> out);
Point sample_isotropic_stable(double alpha, int dim, PathRng& rng);

/// Flat list of endpoints, point i at coords[i*dim .. i*dim + dim).
struct Endpoints {
  int dim = 0;
  std::vector<double> coords;

  std::size_t size() const { return dim ? coords.size() / dim : 0; }
  std::span<const double> operator[](std::size_t i) const {
    return {coords.data() + i * dim, static_cast<std::size_t>(dim)};
  }
};

/// Euler scheme X += r b_cap(X) dt + dt^{1/alpha} S for the process with
/// generator Delta^{alpha/2} + r b . grad; returns X_t for every path.
/// Deterministic given cfg.seed regardless of cfg.workers.
Endpoints simulate_endpoints(const StableParams& params, const DriftSpec& drift,
                             std::span<const double> x0, const MCConfig& cfg);

struct KdeEstimate {
  double value = 0.0;
  double error = 0.0;           // standard error of the kernel mean
  double bias_allowance = 0.0;  // |f_h - f_{2h}| / 3, the h^2 bias extrapolated
  double bandwidth = 0.0;
  bool reliable = true;         // false: y beyond the quantile radius, value not computed
};

/// Silverman's rule with a robust (interquartile) scale, pooled over coordinates.
double plugin_bandwidth(const Endpoints& samples);

/// Gaussian product-kernel estimate at y. bandwidth <= 0 selects
/// plugin_bandwidth() times bandwidth_scale.
KdeEstimate kde_density(const Endpoints& samples, std::span<const double> y,
                        double bandwidth = 0.0, double reliable_quantile = 0.99,
                        double bandwidth_scale = 1.0);

/// Estimate of f_a(y) - f_b(y) from two runs with the same seed and path
/// count. The runs share their noise, so the standard error comes from the
/// per-path differences and is far below that of either estimate alone.
KdeEstimate kde_difference(const Endpoints& a, const Endpoints& b, std::span<const double> y,
                           double bandwidth);

// ---------------------------------------------------------------------------
// Goodness-of-fit helpers used by the tests and the verify module.

struct TestStatistic {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test; `sorted` must be ascending.
TestStatistic ks_test(std::span<const double> sorted, const std::function<double(double)>& cdf);
/// Two-sample KS test; both spans ascending.
TestStatistic ks_test_2(std::span<const double> a, std::span<const double> b);
/// Asymptotic Kolmogorov tail with Stephens' small-sample correction.
double kolmogorov_p_value(double d, double n_eff);

/// Chi-square test of uniformity of the angles of the endpoints about center (dim 2).
TestStatistic angular_uniformity(const Endpoints& samples, std::span<const double> center,
                                 int bins = 36);

/// P(|X_t - x| <= rho) for the unperturbed kernel, at increasing rho.
/// `rho` must be ascending; segments are integrated cumulatively.
std::vector<double> radial_cdf(const StableParams& params, double t, std::span<const double> rho);

}  // namespace fracdrift

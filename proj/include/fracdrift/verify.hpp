#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fracdrift/config.hpp"
#include "fracdrift/drift.hpp"
#include "fracdrift/mc_oracle.hpp"
#include "fracdrift/series.hpp"
#include "fracdrift/stable_kernel.hpp"

namespace fracdrift {

using Details = std::vector<std::pair<std::string, double>>;

// ---------------------------------------------------------------------------
// Empirical constants of the kernel inequalities.

/// Sobol sweep over log-scaled times and scaled radii rho = t^{-1/alpha}|x|.
struct SampleSpec {
  int n_samples = 2048;
  std::uint64_t seed = 0;  // number of leading Sobol points skipped
  double t_min = 1e-2, t_max = 1e2;
  double rho_min = 1e-3, rho_max = 1e3;
  double scale = 1.0;  // t -> scale t (and x -> scale^{1/alpha} x); estimates must not move

  void validate() const;
};

struct WorstCase {
  double t = 0.0, s = 0.0;
  Point x, y, z;
};

struct ConstantReport {
  std::string name;
  double value = 0.0;          // estimate on n_samples points
  std::int64_t n_samples = 0;
  WorstCase worst_case;
  double refined_value = 0.0;  // estimate on 2 n_samples points
  bool stable_under_refinement = false;  // refined value moved < 5%
  Details details;

  double detail(const std::string& key) const;  // throws std::out_of_range
};

/// C_1 = max(max ratio, 1/min ratio), ratio = p(t,x) / min(t^{-d/alpha}, t |x|^{-d-alpha}).
/// details max_ratio and min_ratio are taken over both the base and the refined sweep.
ConstantReport check_two_sided(const StableParams& params, const SampleSpec& spec = {});
/// C_2 = max p(t,x,z) p(s,z,y) / (p(t+s,x,y) [p(t,x,z) + p(s,z,y)]).
ConstantReport check_3p(const StableParams& params, const SampleSpec& spec = {});
/// C_3 = max |grad p(t,x)| t^{1/alpha} / p(t,x).
ConstantReport check_grad_bound(const StableParams& params, const SampleSpec& spec = {});
/// C_4 = max |b(z) . grad_z (b(w) . grad_w p(t,z,w))| t^{2/alpha} / (|b(z)||b(w)| p(t,z,w)).
ConstantReport check_aux1(const StableParams& params, const DriftSpec& drift,
                          const SampleSpec& spec = {});

/// The time integral of the crossing-region estimate,
///   int_0^{t/2} int_{t/2}^t (r-u)^{-2/alpha} ((t-r)^{1/alpha-1} + (r-u)^{1/alpha-1})
///                           ((t-u)^{1/alpha-1} + u^{1/alpha-1}) dr du,
/// in polar coordinates about the corner r = u = t/2.
Estimate aux2_integral(double alpha, double t, double rel_tol = 1e-10);
/// C_5 at t_list.front(); details hold each value and the relative spread.
ConstantReport check_aux2(double alpha, const std::vector<double>& t_list);

/// Negative controls: the ratio along a ray that should stay bounded for alpha < 2.
struct GrowthScan {
  std::string name;
  std::vector<double> abscissa, ratio;
  bool growth_detected = false;  // ratio grew by more than 10x over the scan
};
/// 3P ratio at s = t, x = 0, z = y/2 as |y| grows.
GrowthScan three_point_growth(const StableParams& params, double t = 1.0);
/// |grad p| t^{1/alpha} / p as |x| t^{-1/alpha} grows.
GrowthScan grad_bound_growth(const StableParams& params, double t = 1.0);

// ---------------------------------------------------------------------------
// Identities of the perturbed kernel, evaluated with the Picard grid solver.

struct PerturbedKernel {
  StableParams params{1.5, 2};
  DriftSpec drift;
  QuadConfig quad;
  int n_iter = 3;
  double c_hat = 0.0;  // feeds the series tail bound; 0 leaves the tail out
};

struct Residual {
  double value = 0.0;  // the residual
  double error = 0.0;  // combined quadrature error: time step + series tail + floor
  double floor = 0.0;  // the same residual with r = 0 (spatial and time-quadrature floor)
  Details details;

  bool passes(double factor) const { return value <= factor * error; }
  double detail(const std::string& key) const;
};

/// |int p~(s,x,z) p~(t,z,y) dz - p~(s+t,x,y)| / p~(s+t,x,y). The second factor
/// is computed from y with -b by the adjoint relation; all three solves share
/// one grid of half-width half_width (s+t)^{1/alpha}.
Residual check_chapman_kolmogorov(const PerturbedKernel& k, double s, double t,
                                  std::span<const double> x, std::span<const double> y);

/// |int_{|y-x|<R} p~(t,x,y) dy + P(|X_t - x| > R) - 1|, the unperturbed tail
/// standing in for the perturbed one with uncertainty tail (envelope - 1).
/// R must lie inside 0.9 of the grid half-width. details: "untailed", "tail".
Residual check_mass(const PerturbedKernel& k, double t, std::span<const double> x, double R);

/// |int_s^T int p~(u-s,x,z) (d_u phi + Delta^{alpha/2} phi + r b . grad phi) dz du + phi(s,x)|
/// with T = phi.time_hi. Delta^{alpha/2} is applied spectrally on the solver grid.
Residual check_weak_solution(const PerturbedKernel& k, const TestFunction& phi, double s,
                             std::span<const double> x);

struct ComparabilityReport {
  double min_ratio = 1.0, max_ratio = 1.0;
  Envelope envelope;
  bool applicable = false;  // eta below the threshold
  bool passed = false;
  Point worst;
};
/// p~/p over the points of a series result against its envelope, widened by tol.
ComparabilityReport check_comparability(const SeriesResult& series, double tol);

struct AgreementRow {
  Point y;
  double series = 0.0, series_error = 0.0;
  KdeEstimate mc;
  double allowed = 0.0;  // 3 (mc error + series error + bias allowance)
  bool passed = false;
};
struct AgreementReport {
  std::vector<AgreementRow> rows;
  bool passed = false;
};
/// Pointwise |p~ - KDE| <= 3 (bootstrap-type error + quadrature error + bias allowance).
AgreementReport check_mc_agreement(const SeriesResult& series, const std::vector<KdeEstimate>& mc);

struct SlopeRow {
  double r = 0.0;
  double mc_slope = 0.0, mc_error = 0.0;  // (KDE_r - KDE_0)/r from coupled runs
  double series_slope = 0.0;              // p_1/r at this r (independent of r)
  double allowed = 0.0;
  bool passed = false;
};
/// Perturbative slope at one point: coupled runs with the same seed give
/// (KDE_r - KDE_0)/r, compared with p_1/r; |p_2|/r is added to the allowance.
std::vector<SlopeRow> check_perturbative_slope(const StableParams& params, const DriftSpec& unit_drift,
                                               const std::vector<double>& r_list,
                                               std::span<const double> x, std::span<const double> y,
                                               const MCConfig& mc, const QuadConfig& quad);

// ---------------------------------------------------------------------------
// Suites.

struct CheckRecord {
  std::string name;
  double value = 0.0;
  bool passed = false;
  std::string worst_case;
  std::string note;
};

struct SuiteConfig {
  StableParams params{1.5, 2};
  double r = 0.05;
  double t = 1.0;
  QuadConfig quad;
  MCConfig mc;
  SampleSpec sample;
  int n_iter = 3;
  double c_hat = 0.0;  // 0: calibrate on `calibration` first
  std::vector<SamplePoint> calibration = {{1.0, {1.0, 0.0}, {0.3, 0.8}},
                                          {1.0, {0.5, 0.5}, {-1.0, 0.5}},
                                          {1.0, {-0.8, 0.3}, {1.2, -0.4}}};
  Point x = {1.0, 0.0};  // start point of the perturbed and Monte Carlo checks
  std::vector<Point> points = {{0.3, 0.8}, {-1.0, 0.5}, {2.0, 1.0}, {-0.5, -1.0}, {1.2, -0.4}};
};

/// "unperturbed", "drift", "perturbed", "mc" or "all".
std::vector<std::string> suite_names();
std::vector<CheckRecord> run_suite(const std::string& name, const SuiteConfig& cfg);

}  // namespace fracdrift

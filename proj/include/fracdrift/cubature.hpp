#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "fracdrift/quadrature.hpp"

namespace fracdrift {

struct CubatureOptions {
  int radial_nodes = 16;
  int angular_nodes = 128;
  double inner_factor = 1e-10;  // innermost break, relative to the center's scale
  double outer_factor = 1e7;    // outermost break, relative to the configuration size
  int power = 3;                // partition weights |y - c|^{-2 power}
};

struct CubatureCenter {
  std::vector<double> point;
  double scale = 1.0;  // length scale of the feature at this center
};

/// Integral of f over R^dim (dim 1 or 2) for integrands with point features
/// (kernel peaks, integrable singularities, heavy tails) at a few centers.
///
/// The plane is split by the smooth partition of unity
///   psi_k(y) = |y-c_k|^{-2q} / sum_j |y-c_j|^{-2q},
/// which vanishes to order 2q at every other center, and each piece is
/// integrated in polar coordinates about its own center: geometric radial
/// panels (ratio 2) from inner_factor * scale out to outer_factor * size,
/// Gauss-Legendre in each panel, trapezoid in angle. The remainder beyond the
/// last panel is extrapolated from the geometric decay of the last two shells.
///
/// Throws std::runtime_error if the shells do not decay.
template <class F>
double multi_center_integral(int dim, std::vector<CubatureCenter> centers, F&& f,
                             const CubatureOptions& opt = {}) {
  if (dim != 1 && dim != 2)
    throw std::invalid_argument("multi_center_integral: dim must be 1 or 2");
  // merge coincident centers, keeping the finer scale
  std::vector<CubatureCenter> cs;
  for (auto& c : centers) {
    bool merged = false;
    for (auto& e : cs) {
      double d2 = 0.0;
      for (int i = 0; i < dim; ++i) d2 += (c.point[i] - e.point[i]) * (c.point[i] - e.point[i]);
      if (d2 <= 1e-24 * std::max(c.scale, e.scale) * std::max(c.scale, e.scale)) {
        e.scale = std::min(e.scale, c.scale);
        merged = true;
        break;
      }
    }
    if (!merged) cs.push_back(c);
  }
  const int n = static_cast<int>(cs.size());
  double size = 0.0;
  for (const auto& c : cs) size = std::max(size, c.scale);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double d2 = 0.0;
      for (int i = 0; i < dim; ++i)
        d2 += (cs[a].point[i] - cs[b].point[i]) * (cs[a].point[i] - cs[b].point[i]);
      size = std::max(size, std::sqrt(d2));
    }

  const QuadRule& gl = gauss_legendre(opt.radial_nodes);
  const int n_ang = dim == 1 ? 2 : opt.angular_nodes;
  std::vector<double> cos_t(n_ang), sin_t(n_ang);
  for (int j = 0; j < n_ang; ++j) {
    if (dim == 1) {
      cos_t[j] = j == 0 ? 1.0 : -1.0;
    } else {
      const double th = 2.0 * std::numbers::pi * (j + 0.5) / n_ang;
      cos_t[j] = std::cos(th);
      sin_t[j] = std::sin(th);
    }
  }
  const double ang_w = dim == 1 ? 1.0 : 2.0 * std::numbers::pi / n_ang;

  double total = 0.0;
  double y[2];
  for (int k = 0; k < n; ++k) {
    const auto& ck = cs[k].point;
    auto psi = [&](const double* yy) {
      double dk = 0.0;
      for (int i = 0; i < dim; ++i) dk += (yy[i] - ck[i]) * (yy[i] - ck[i]);
      double denom = 1.0;
      for (int j = 0; j < n; ++j) {
        if (j == k) continue;
        double dj = 0.0;
        for (int i = 0; i < dim; ++i) dj += (yy[i] - cs[j].point[i]) * (yy[i] - cs[j].point[i]);
        if (dj == 0.0) return 0.0;
        const double ratio = dk / dj;
        double term = ratio;
        for (int e = 1; e < opt.power; ++e) term *= ratio;
        denom += term;
      }
      return 1.0 / denom;
    };
    std::vector<double> breaks = {0.0};
    const double outer = opt.outer_factor * size;
    double b = opt.inner_factor * cs[k].scale;
    breaks.push_back(b);
    do {
      b *= 2.0;
      breaks.push_back(b);
    } while (b < outer);
    double prev_shell = 0.0, last_shell = 0.0, magnitude = 0.0;
    CompensatedSum acc;
    for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
      const double a = breaks[p], b = breaks[p + 1];
      double shell = 0.0;
      for (int q = 0; q < opt.radial_nodes; ++q) {
        const double rho = a + 0.5 * (b - a) * (gl.nodes[q] + 1.0);
        const double wr = 0.5 * (b - a) * gl.weights[q] * (dim == 2 ? rho : 1.0);
        double ring = 0.0;
        for (int j = 0; j < n_ang; ++j) {
          y[0] = ck[0] + rho * cos_t[j];
          if (dim == 2) y[1] = ck[1] + rho * sin_t[j];
          const double w = n > 1 ? psi(y) : 1.0;
          if (w != 0.0) ring += w * f(static_cast<const double*>(y));
        }
        shell += wr * ang_w * ring;
      }
      acc.add(shell);
      magnitude += std::abs(shell);
      prev_shell = last_shell;
      last_shell = shell;
    }
    // shells [b/2, b] decay geometrically for power-law tails; shells at
    // rounding level (e.g. cancelling by symmetry) carry no tail to extrapolate
    if (std::abs(last_shell) > 1e-14 * magnitude) {
      const double q = last_shell / prev_shell;
      if (!(std::abs(q) < 1.0))
        throw std::runtime_error("multi_center_integral: integrand does not decay at infinity");
      acc.add(last_shell * q / (1.0 - q));
    }
    total += acc.value();
  }
  return total;
}

}  // namespace fracdrift

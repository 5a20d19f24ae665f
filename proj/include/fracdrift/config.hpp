#pragma once

namespace fracdrift {

/// Quadrature knobs shared by the drift, series and verify modules.
///
/// Time integrals over (0,t) use the substitution s = t sigma^{alpha/(alpha-1)}
/// on each half interval, which absorbs the endpoint weights s^{1/alpha-1}
/// and s^{-1/alpha}; `time_nodes` is the initial node count per half and is
/// doubled up to `max_doublings` times until the estimate moves less than tol.
struct QuadConfig {
  int time_nodes = 8;
  int max_doublings = 3;
  int radial_nodes = 16;     // Gauss-Legendre nodes per radial panel
  int angular_nodes = 128;   // trapezoid nodes on the circle (dim 2)
  double exclusion_radius = 1e-2;  // initial ball removed around singular points
  int exclusion_levels = 4;        // shrink the ball by 1/16 this many times
  double tol = 1e-3;

  // Picard solver grid
  int grid = 512;                  // points per axis
  double half_width = 10.0;        // box is [-half_width, half_width)^2 around the origin
  double time_step = 1.0 / 40.0;   // uniform step of the time grid, relative to t

  // grid of the split evaluator for p_2 (smaller: it stores many fields)
  int split_grid = 256;
  double split_half_width = 6.0;

  int workers = 0;  // OpenMP threads in grid sweeps; 0 = runtime default, 1 = serial reference

  void validate() const;
};

}  // namespace fracdrift

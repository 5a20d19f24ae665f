#include <doctest.h>

#include <cmath>
#include <random>

#include "fracdrift/spectral.hpp"

using namespace fracdrift;

TEST_CASE("round trip and Parseval") {
  SpectralGrid g(64, 5.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  RealField f(g.real_size()), q(g.real_size());
  // band-limited random fields survive the Nyquist cut exactly
  for (auto& v : f) v = nd(rng);
  f = g.inverse(g.forward(f));
  for (auto& v : q) v = nd(rng);
  q = g.inverse(g.forward(q));
  const RealField back = g.inverse(g.forward(f));
  double err = 0.0, direct = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    err = std::max(err, std::abs(back[i] - f[i]));
    direct += f[i] * q[i];
  }
  direct *= g.spacing() * g.spacing();
  CHECK(err < 1e-12);
  CHECK(g.inner(g.forward(f), g.forward(q)) == doctest::Approx(direct).epsilon(1e-12));
  // interpolant reproduces nodal values
  const double y[2] = {g.node(5), g.node(40)};
  CHECK(g.evaluate(g.forward(f), y) == doctest::Approx(f[5 * 64 + 40]).epsilon(1e-10));
}

TEST_CASE("sampled kernel matches analytic transform") {
  SpectralGrid g(256, 10.0);
  const auto& k = stable_kernel(1.5, 2);
  const double c[2] = {0.7, -1.3};
  const auto sampled = g.forward(g.sample_kernel(k, 1.0, c));
  const auto exact = g.kernel_hat(1.5, 1.0, c);
  double err = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) err = std::max(err, std::abs(sampled[i] - exact[i]));
  // the box truncates the |y|^{-3.5} tail: mass outside radius ~9 is ~2e-2, spread over k
  CHECK(err < 3e-2);
  // pointwise values near the centre agree far better
  const double y[2] = {1.0, -1.0};
  CHECK(g.evaluate(exact, y) == doctest::Approx(k.at(0, 1.0, std::hypot(0.3, 0.3))).epsilon(1e-3));
  CHECK(radial_taper(0.5, 1.0, 2.0) == 1.0);
  CHECK(radial_taper(2.5, 1.0, 2.0) == 0.0);
  CHECK(radial_taper(1.5, 1.0, 2.0) == doctest::Approx(0.5));
}

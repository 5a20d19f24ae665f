#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fracdrift/stable_kernel.hpp"

namespace fracdrift::cli {

/// Bad or conflicting input. The message names the offending key.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// --help was given; `text` is the usage message.
struct HelpRequested {
  std::string text;
};

struct RunConfig {
  std::string command;  // eval, perturb, verify, simulate, calibrate
  std::string suite = "unperturbed";
  double alpha = 1.5;
  int dim = 2;
  double r = 0.05;
  double t = 1.0;
  std::string drift = "rotational";  // rotational or zero
  std::string x;       // start point "a,b"; default (1,0,...)
  std::string points;  // "a,b;c,d"
  std::string grid;    // "lo:hi:n", an n^dim lattice; conflicts with points
  double tol = 1e-3;   // widening of the comparability envelope
  std::uint64_t seed = 1;
  int workers = 0;
  std::string output;  // empty: stdout
  std::string format = "table";  // table or records
  std::string endpoints;         // simulate: optional endpoint dump

  double c_hat = 0.0;  // 0: calibrate on (x, points) when needed
  int n_iter = 3;
  std::int64_t paths = 100000;
  double h = 1.0 / 512.0;
  int solver_grid = 512;
  double half_width = 10.0;
  double time_step = 1.0 / 40.0;
  int samples = 2048;

  /// Throws UsageError naming the first invalid key.
  void validate() const;
  /// Every key with its value, in a fixed order, as written in the output header.
  std::vector<std::pair<std::string, std::string>> resolved() const;

  Point start() const;
  std::vector<Point> targets() const;
};

/// Flags override values from --config (key=value lines, # comments).
/// Unknown keys are rejected. Throws UsageError or HelpRequested.
RunConfig parse_config(int argc, const char* const* argv);

/// Runs the command, writing its output to `out`. Returns 0 iff every
/// assertion of the command passed, 1 otherwise; failures are named on `err`.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// parse_config + run with exit codes 0/1, 2 for usage errors, 3 for failures
/// inside the computation.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fracdrift::cli

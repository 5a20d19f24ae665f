#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <variant>

#include "fracdrift/mc_oracle.hpp"
#include "fracdrift/series.hpp"
#include "fracdrift/verify.hpp"

namespace fracdrift::cli {

namespace {

const std::vector<std::string> kCommands = {"eval", "perturb", "verify", "simulate", "calibrate"};

std::string commands_line() {
  std::string s;
  for (const auto& c : kCommands) s += (s.empty() ? "" : ", ") + c;
  return s;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
  return buf;
}

std::vector<double> parse_coords(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError(key + ": cannot read '" + item + "' as a number");
    }
  }
  return out;
}

Point sized(std::vector<double> p, int dim, const std::string& key) {
  if (static_cast<int>(p.size()) != dim)
    throw UsageError(key + ": point has " + std::to_string(p.size()) + " coordinates, dim is " +
                     std::to_string(dim));
  return p;
}

// eval and the unperturbed suite work for every stable index and dimension
bool needs_series_range(const RunConfig& c) {
  return c.command != "eval" && !(c.command == "verify" && c.suite == "unperturbed");
}

DriftSpec make_drift(const RunConfig& c) {
  const DriftSpec b = c.drift == "zero" ? zero_field(c.dim) : rotational_field(c.alpha);
  return b.with_r(c.r);
}

QuadConfig make_quad(const RunConfig& c) {
  QuadConfig q;
  q.grid = c.solver_grid;
  q.half_width = c.half_width;
  q.time_step = c.time_step;
  q.workers = c.workers;
  return q;
}

MCConfig make_mc(const RunConfig& c) {
  MCConfig m;
  m.n_paths = c.paths;
  m.t = c.t;
  m.h = c.h;
  m.seed = c.seed;
  m.workers = c.workers;
  return m;
}

// Rows are written either as a tab-separated table or as one JSON object per line.
using Cell = std::variant<double, std::string, bool>;

class Writer {
 public:
  Writer(std::ostream& out, const RunConfig& cfg, double c_hat, std::vector<std::string> columns)
      : out_(out), records_(cfg.format == "records"), columns_(std::move(columns)) {
    const double kappa = kappa_calibration().kappa;
    const std::string chat = c_hat > 0.0 ? num(c_hat) : "unused";
    if (records_) {
      nlohmann::ordered_json h;
      for (const auto& [k, v] : cfg.resolved()) h["config"][k] = v;
      h["kappa"] = kappa;
      h["c_hat"] = chat;
      out_ << h.dump() << "\n";
      return;
    }
    for (const auto& [k, v] : cfg.resolved()) out_ << "# " << k << "=" << v << "\n";
    out_ << "# kappa=" << num(kappa) << "\n# c_hat=" << chat << "\n";
    for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "\t" : "") << columns_[i];
    out_ << "\n";
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != columns_.size()) throw std::logic_error("Writer: row width mismatch");
    if (records_) {
      nlohmann::ordered_json j;
      for (std::size_t i = 0; i < cells.size(); ++i)
        std::visit([&](const auto& v) { j[columns_[i]] = v; }, cells[i]);
      out_ << j.dump() << "\n";
      return;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << "\t";
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, double>) out_ << num(v);
            else if constexpr (std::is_same_v<T, bool>) out_ << (v ? "pass" : "FAIL");
            else out_ << v;
          },
          cells[i]);
    }
    out_ << "\n";
  }

 private:
  std::ostream& out_;
  bool records_;
  std::vector<std::string> columns_;
};

std::vector<std::string> coord_names(const std::string& base, int dim) {
  std::vector<std::string> v;
  for (int i = 1; i <= dim; ++i) v.push_back(base + std::to_string(i));
  return v;
}

void append(std::vector<Cell>& row, const Point& p) {
  for (double v : p) row.emplace_back(v);
}

double resolve_c_hat(const RunConfig& c) {
  if (c.c_hat > 0.0) return c.c_hat;
  std::vector<SamplePoint> sample;
  for (const auto& y : c.targets()) sample.push_back({c.t, c.start(), y});
  return calibrate_C(StableParams{c.alpha, c.dim}, make_drift(c), sample, make_quad(c)).c_hat;
}

int run_eval(const RunConfig& c, std::ostream& out) {
  const StableParams P{c.alpha, c.dim};
  std::vector<std::string> cols = {"t"};
  for (auto& n : coord_names("x", c.dim)) cols.push_back(n);
  cols.push_back("p");
  for (auto& n : coord_names("dp", c.dim)) cols.push_back(n);
  Writer w(out, c, 0.0, cols);
  for (const auto& x : c.targets()) {
    std::vector<Cell> row = {c.t};
    append(row, x);
    row.emplace_back(density(P, c.t, x));
    append(row, gradient(P, c.t, x));
    w.row(row);
  }
  return 0;
}

int run_perturb(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const StableParams P{c.alpha, c.dim};
  const double c_hat = c.r > 0.0 ? resolve_c_hat(c) : c.c_hat;
  const Point x = c.start();
  const auto series = duhamel_solve(P, make_drift(c), c.t, x, c.targets(), make_quad(c), c.n_iter, c_hat);

  std::vector<std::string> cols = {"t"};
  for (auto& n : coord_names("x", c.dim)) cols.push_back(n);
  for (auto& n : coord_names("y", c.dim)) cols.push_back(n);
  for (int n = 0; n <= c.n_iter; ++n) cols.push_back(n ? "p" + std::to_string(n) : "p");
  for (const char* n : {"p_tilde", "error", "ratio", "env_lower", "env_upper", "tail_bound"}) cols.push_back(n);
  Writer w(out, c, c_hat, cols);
  for (std::size_t j = 0; j < series.points.size(); ++j) {
    std::vector<Cell> row = {c.t};
    append(row, x);
    append(row, series.points[j]);
    double error = 0.0;
    for (const auto& term : series.terms) {
      row.emplace_back(term[j].value);
      error += term[j].error;
    }
    const double total = series.total(j);
    row.emplace_back(total);
    row.emplace_back(error);
    row.emplace_back(total / series.terms[0][j].value);
    row.emplace_back(series.envelope.lower);
    row.emplace_back(series.envelope.upper);
    row.emplace_back(series.tail_bound);
    w.row(row);
  }
  const auto cmp = check_comparability(series, c.tol);
  if (!cmp.applicable) {
    err << "note: eta = " << num(series.eta) << " is not below " << num(eta_threshold())
        << "; no envelope assertion\n";
    return 0;
  }
  if (!cmp.passed) {
    err << "FAIL: comparability, ratio in [" << num(cmp.min_ratio) << ", " << num(cmp.max_ratio) << "]\n";
    return 1;
  }
  return 0;
}

int run_verify(const RunConfig& c, std::ostream& out, std::ostream& err) {
  SuiteConfig s;
  s.params = StableParams{c.alpha, c.dim};
  s.r = c.r;
  s.t = c.t;
  s.quad = make_quad(c);
  s.mc = make_mc(c);
  s.sample.n_samples = c.samples;
  s.sample.seed = c.seed;
  s.n_iter = c.n_iter;
  s.c_hat = c.c_hat;
  s.x = c.start();
  if (!c.points.empty() || !c.grid.empty()) s.points = c.targets();
  const auto records = run_suite(c.suite, s);

  double c_hat = c.c_hat;
  for (const auto& r : records)
    if (r.name == "C_hat") c_hat = r.value;
  Writer w(out, c, c_hat, {"name", "value", "status", "worst_case", "note"});
  int status = 0;
  for (const auto& r : records) {
    w.row({r.name, r.value, r.passed, r.worst_case, r.note});
    if (!r.passed) {
      err << "FAIL: " << r.name << "\n";
      status = 1;
    }
  }
  return status;
}

int run_simulate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const StableParams P{c.alpha, c.dim};
  const MCConfig mc = make_mc(c);
  const auto ep = simulate_endpoints(P, make_drift(c), c.start(), mc);
  if (!c.endpoints.empty()) {
    std::ofstream dump(c.endpoints);
    if (!dump) throw std::runtime_error("cannot open endpoints file '" + c.endpoints + "'");
    for (std::size_t i = 0; i < ep.size(); ++i) {
      for (int k = 0; k < c.dim; ++k) dump << (k ? "\t" : "") << num(ep[i][k]);
      dump << "\n";
    }
  }
  std::vector<std::string> cols = coord_names("y", c.dim);
  for (const char* n : {"kde", "std_error", "bias_allowance", "bandwidth", "reliable"}) cols.push_back(n);
  Writer w(out, c, c.c_hat, cols);
  int status = 0;
  for (const auto& y : c.targets()) {
    const auto k = kde_density(ep, y, 0.0, mc.reliable_quantile, mc.bandwidth_scale);
    std::vector<Cell> row;
    append(row, y);
    for (double v : {k.value, k.error, k.bias_allowance, k.bandwidth}) row.emplace_back(v);
    row.emplace_back(k.reliable);
    w.row(row);
    if (!k.reliable) {
      std::ostringstream p;
      for (double v : y) p << (p.tellp() > 0 ? "," : "") << num(v);
      err << "FAIL: KDE at (" << p.str() << ") lies beyond the reliable radius\n";
      status = 1;
    }
  }
  return status;
}

int run_calibrate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const StableParams P{c.alpha, c.dim};
  std::vector<SamplePoint> sample;
  for (const auto& y : c.targets()) sample.push_back({c.t, c.start(), y});
  const auto cal = calibrate_C(P, make_drift(c), sample, make_quad(c));
  const double eta = c.r * cal.c_hat, thr = eta_threshold();
  Writer w(out, c, cal.c_hat, {"c1", "c2", "c_hat", "r", "eta", "threshold", "r_admissible_below", "admissible"});
  char line[64];
  std::snprintf(line, sizeof line, "eta < %.4f", thr);
  w.row({cal.c1, cal.c2, cal.c_hat, c.r, eta, std::string(line), thr / cal.c_hat, eta < thr});
  if (!(eta < thr)) {
    err << "FAIL: eta = " << num(eta) << " is not below " << num(thr) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

void RunConfig::validate() const {
  bool known = false;
  for (const auto& k : kCommands) known = known || k == command;
  if (!known) throw UsageError("command: '" + command + "' is not one of " + commands_line());
  if (!(alpha > 0.0 && alpha <= 2.0)) throw UsageError("alpha: " + num(alpha) + " is outside (0, 2]");
  if (needs_series_range(*this) && !(alpha > 1.0 && alpha < 2.0))
    throw UsageError("alpha: " + command + " needs alpha in (1, 2), got " + num(alpha));
  if (command == "verify" && alpha == 2.0) throw UsageError("alpha: verify needs alpha < 2");
  if (dim < 1 || dim > 3) throw UsageError("dim: must be 1, 2 or 3");
  if (needs_series_range(*this) && dim != 2) throw UsageError("dim: " + command + " supports dim 2 only");
  if (!(r >= 0.0) || !std::isfinite(r)) throw UsageError("r: must be finite and >= 0");
  if (!(t > 0.0) || !std::isfinite(t)) throw UsageError("t: must be positive");
  if (drift != "rotational" && drift != "zero") throw UsageError("drift: must be rotational or zero");
  if (!points.empty() && !grid.empty()) throw UsageError("points and grid: give one of them, not both");
  if (!(tol >= 0.0)) throw UsageError("tol: must be >= 0");
  if (workers < 0) throw UsageError("workers: must be >= 0");
  if (format != "table" && format != "records") throw UsageError("format: must be table or records");
  if (!(c_hat >= 0.0)) throw UsageError("c_hat: must be >= 0");
  if (n_iter < 1) throw UsageError("n_iter: must be >= 1");
  if (paths < 1) throw UsageError("paths: must be >= 1");
  if (!(h > 0.0 && h <= t)) throw UsageError("step: must lie in (0, t]");
  if (solver_grid < 16 || (solver_grid & (solver_grid - 1))) throw UsageError("solver_grid: must be a power of two >= 16");
  if (!(half_width > 0.0)) throw UsageError("half_width: must be positive");
  if (!(time_step > 0.0 && time_step <= 0.5)) throw UsageError("time_step: must lie in (0, 0.5]");
  if (samples < 1) throw UsageError("samples: must be >= 1");
  if (command == "verify") {
    bool ok = false;
    for (const auto& s : suite_names()) ok = ok || s == suite;
    if (!ok) throw UsageError("suite: unknown suite '" + suite + "'");
  }
  if (!endpoints.empty() && command != "simulate") throw UsageError("endpoints: only used by simulate");
  start();
  targets();
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
  std::ostringstream pts;
  for (const auto& p : targets()) {
    if (pts.tellp() > 0) pts << ";";
    for (std::size_t i = 0; i < p.size(); ++i) pts << (i ? "," : "") << num(p[i]);
  }
  std::ostringstream xs;
  for (double v : start()) xs << (xs.tellp() > 0 ? "," : "") << num(v);
  return {{"command", command},       {"suite", suite},
          {"alpha", num(alpha)},      {"dim", std::to_string(dim)},
          {"r", num(r)},              {"t", num(t)},
          {"drift", drift},           {"x", xs.str()},
          {"points", pts.str()},      {"tol", num(tol)},
          {"seed", std::to_string(seed)}, {"workers", std::to_string(workers)},
          {"format", format},         {"c_hat", num(c_hat)},
          {"n_iter", std::to_string(n_iter)}, {"paths", std::to_string(paths)},
          {"step", num(h)},              {"solver_grid", std::to_string(solver_grid)},
          {"half_width", num(half_width)}, {"time_step", num(time_step)},
          {"samples", std::to_string(samples)}};
}

Point RunConfig::start() const {
  if (x.empty()) {
    Point p(dim, 0.0);
    p[0] = 1.0;
    return p;
  }
  return sized(parse_coords(x, "x"), dim, "x");
}

std::vector<Point> RunConfig::targets() const {
  std::vector<Point> out;
  if (!grid.empty()) {
    const auto a = grid.find(':'), b = grid.rfind(':');
    if (a == std::string::npos || a == b) throw UsageError("grid: expected lo:hi:n");
    const auto lo = parse_coords(grid.substr(0, a), "grid"), hi = parse_coords(grid.substr(a + 1, b - a - 1), "grid");
    int n = 0;
    try {
      n = std::stoi(grid.substr(b + 1));
    } catch (const std::logic_error&) {
      throw UsageError("grid: n must be an integer");
    }
    if (lo.size() != 1 || hi.size() != 1 || n < 1 || n > 1000 || !(hi[0] >= lo[0]))
      throw UsageError("grid: expected lo:hi:n with lo <= hi and 1 <= n <= 1000");
    std::size_t total = 1;
    for (int k = 0; k < dim; ++k) total *= n;
    const double step = n > 1 ? (hi[0] - lo[0]) / (n - 1) : 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      Point p(dim);
      std::size_t rem = i;
      for (int k = dim - 1; k >= 0; --k) {
        p[k] = lo[0] + step * static_cast<double>(rem % n);
        rem /= n;
      }
      out.push_back(p);
    }
    return out;
  }
  if (points.empty()) {
    // off-axis defaults; odd terms vanish when x and y both sit on an axis
    const std::vector<Point> base = {{0.3, 0.8}, {-1.0, 0.5}, {2.0, 1.0}, {-0.5, -1.0}, {1.2, -0.4}};
    for (auto p : base) {
      p.resize(dim, 0.25);
      out.push_back(p);
    }
    return out;
  }
  std::stringstream ss(points);
  std::string item;
  while (std::getline(ss, item, ';'))
    if (!item.empty()) out.push_back(sized(parse_coords(item, "points"), dim, "points"));
  if (out.empty()) throw UsageError("points: no points given");
  return out;
}

RunConfig parse_config(int argc, const char* const* argv) {
  RunConfig c;
  CLI::App app{"Heat kernels of the fractional Laplacian with a singular divergence-free drift"};
  app.set_config("--config", "", "key=value file, one per line, # comments; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--alpha", c.alpha, "stability index");
  app.add_option("--dim", c.dim, "dimension");
  app.add_option("--r", c.r, "drift strength");
  app.add_option("--t", c.t, "time");
  app.add_option("--grid", c.grid, "lattice lo:hi:n per axis (eval: x, otherwise y)");
  app.add_option("--points", c.points, "points a,b;c,d (eval: x, otherwise y)");
  app.add_option("--tol", c.tol, "widening of the comparability envelope");
  app.add_option("--seed", c.seed, "random seed");
  app.add_option("--workers", c.workers, "threads; 0 = OpenMP default, 1 = serial");
  app.add_option("--output", c.output, "output file (default stdout)");
  app.add_option("--format", c.format, "table or records");
  app.add_option("--x", c.x, "start point a,b");
  app.add_option("--drift", c.drift, "rotational or zero");
  app.add_option("--suite", c.suite, "verify suite: unperturbed, drift, perturbed, mc, all");
  app.add_option("--c_hat", c.c_hat, "series constant; 0 calibrates on (x, points)");
  app.add_option("--n_iter", c.n_iter, "number of series terms");
  app.add_option("--paths", c.paths, "Monte Carlo paths");
  app.add_option("--step", c.h, "Euler step of the Monte Carlo scheme");
  app.add_option("--solver_grid", c.solver_grid, "points per axis of the Picard grid");
  app.add_option("--half_width", c.half_width, "Picard box half-width in units of t^{1/alpha}");
  app.add_option("--time_step", c.time_step, "Picard time step relative to t");
  app.add_option("--samples", c.samples, "Sobol samples of the constant sweeps");
  app.add_option("--endpoints", c.endpoints, "simulate: write the endpoints here");
  app.add_option("command", c.command, "one of " + commands_line());

  if (argc <= 1) throw UsageError("no command given; commands: " + commands_line() + "\n" + app.help());
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested{app.help()};
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  if (c.command.empty()) throw UsageError("no command given; commands: " + commands_line());
  c.validate();
  return c;
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.command == "eval") return run_eval(cfg, out);
  if (cfg.command == "perturb") return run_perturb(cfg, out, err);
  if (cfg.command == "verify") return run_verify(cfg, out, err);
  if (cfg.command == "simulate") return run_simulate(cfg, out, err);
  if (cfg.command == "calibrate") return run_calibrate(cfg, out, err);
  throw UsageError("command: '" + cfg.command + "' is not one of " + commands_line());
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = parse_config(argc, argv);
  } catch (const HelpRequested& h) {
    out << h.text;
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }
  try {
    if (cfg.output.empty()) return run(cfg, out, err);
    std::ofstream file(cfg.output);
    if (!file) throw std::runtime_error("cannot open output file '" + cfg.output + "'");
    return run(cfg, file, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace fracdrift::cli

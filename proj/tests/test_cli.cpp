#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "fracdrift/stable_kernel.hpp"

using namespace fracdrift;

namespace {

struct Outcome {
  int status;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fracdrift");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = cli::main_entry(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

// Data rows of a table: lines after the column header, split on tabs.
std::vector<std::vector<std::string>> rows(const std::string& text, std::vector<std::string>* header = nullptr) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  std::string line;
  bool seen_header = false;
  while (std::getline(in, line)) {
    if (line.starts_with("#")) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    if (!seen_header) {
      seen_header = true;
      if (header) *header = cells;
      continue;
    }
    out.push_back(cells);
  }
  return out;
}

}  // namespace

TEST_CASE("usage errors") {
  const auto empty = run_cli({});
  CHECK(empty.status == 2);
  for (const char* c : {"eval", "perturb", "verify", "simulate", "calibrate"})
    CHECK(empty.err.find(c) != std::string::npos);

  const auto bad_alpha = run_cli({"--alpha", "2.5", "eval"});
  CHECK(bad_alpha.status == 2);
  CHECK(bad_alpha.err.find("alpha") != std::string::npos);
  CHECK(bad_alpha.err.find("(0, 2]") != std::string::npos);

  CHECK(run_cli({"--alpha", "2", "perturb"}).err.find("(1, 2)") != std::string::npos);
  CHECK(run_cli({"--dim", "1", "perturb"}).err.find("dim") != std::string::npos);
  CHECK(run_cli({"--points", "1,0", "--grid", "0:1:2", "eval"}).err.find("points and grid") != std::string::npos);
  CHECK(run_cli({"--points", "1,0,3", "eval"}).err.find("points") != std::string::npos);
  CHECK(run_cli({"--format", "xml", "eval"}).err.find("format") != std::string::npos);
  CHECK(run_cli({"frobnicate"}).err.find("command") != std::string::npos);
  CHECK(run_cli({"--suite", "nope", "verify"}).err.find("suite") != std::string::npos);
  CHECK(run_cli({"--help"}).status == 0);
}

TEST_CASE("config file") {
  const std::string path = "test_cli_config.txt";
  {
    std::ofstream f(path);
    f << "# a comment\nalpha=1.2\ndim=1\npoints=0.5;1\n";
  }
  // flags override the file
  const auto o = run_cli({"--config", path, "--alpha", "1.8", "eval"});
  REQUIRE(o.status == 0);
  CHECK(o.out.find("# alpha=1.8\n") != std::string::npos);
  CHECK(o.out.find("# dim=1\n") != std::string::npos);
  const auto r = rows(o.out);
  REQUIRE(r.size() == 2);
  const double x[1] = {0.5};
  CHECK(std::stod(r[0][2]) == doctest::Approx(density(StableParams{1.8, 1}, 1.0, x)).epsilon(1e-9));

  {
    std::ofstream f(path);
    f << "alpha=1.2\nbogus_key=3\n";
  }
  const auto bad = run_cli({"--config", path, "eval"});
  CHECK(bad.status == 2);
  CHECK(bad.err.find("bogus_key") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("eval") {
  const auto o = run_cli({"--alpha", "1.5", "--dim", "2", "--r", "0.05", "--t", "1", "eval"});
  REQUIRE(o.status == 0);
  CHECK(o.out.find("# kappa=") != std::string::npos);
  CHECK(o.out.find("# c_hat=") != std::string::npos);
  std::vector<std::string> header;
  const auto r = rows(o.out, &header);
  CHECK(header == std::vector<std::string>{"t", "x1", "x2", "p", "dp1", "dp2"});
  CHECK(r.size() == 5);

  // Cauchy closed form on a lattice, as records
  const auto c = run_cli({"--alpha", "1", "--dim", "1", "--grid", "-2:2:5", "--format", "records", "eval"});
  REQUIRE(c.status == 0);
  std::istringstream in(c.out);
  std::string line;
  std::getline(in, line);
  const auto head = nlohmann::json::parse(line);
  CHECK(head["config"]["alpha"] == "1");
  CHECK(head.contains("kappa"));
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    const double x = j["x1"];
    CHECK(j["p"].get<double>() == doctest::Approx(1.0 / (std::numbers::pi * (1.0 + x * x))).epsilon(1e-9));
    ++n;
  }
  CHECK(n == 5);
}

TEST_CASE("perturb") {
  const auto zero = run_cli({"--r", "0", "--solver_grid", "128", "perturb"});
  REQUIRE(zero.status == 0);
  std::vector<std::string> header;
  const auto r = rows(zero.out, &header);
  const auto col = std::find(header.begin(), header.end(), "ratio") - header.begin();
  REQUIRE(col < static_cast<long>(header.size()));
  for (const auto& row : r) CHECK(row[col] == "1");

  const auto on = run_cli({"--r", "0.07", "--c_hat", "0.7", "--solver_grid", "256", "perturb"});
  CHECK(on.status == 0);
  CHECK(on.out.find("# c_hat=0.7\n") != std::string::npos);
}

TEST_CASE("calibrate prints the admissibility line") {
  const auto o = run_cli({"--points", "0.3,0.8", "calibrate"});
  REQUIRE(o.status == 0);
  CHECK(o.out.find("eta < 0.3090") != std::string::npos);
  std::vector<std::string> header;
  const auto r = rows(o.out, &header);
  REQUIRE(r.size() == 1);
  CHECK(std::stod(r[0][4]) == doctest::Approx(0.05 * std::stod(r[0][2])));

  // an r far beyond the admissible range fails
  const auto big = run_cli({"--points", "0.3,0.8", "--r", "2", "calibrate"});
  CHECK(big.status == 1);
  CHECK(big.err.find("FAIL") != std::string::npos);
}

TEST_CASE("simulate is reproducible and names failures") {
  const std::vector<std::string> args = {"--r", "0.05", "--paths", "4000", "--grid", "-1:1:2",
                                         "--step", "0.125", "simulate"};
  const auto a = run_cli(args);
  REQUIRE(a.status == 0);
  CHECK(run_cli(args).out == a.out);
  auto serial = args;
  serial.insert(serial.begin(), {"--workers", "1"});
  const auto s = run_cli(serial);
  CHECK(rows(s.out) == rows(a.out));

  const auto far = run_cli({"--paths", "4000", "--points", "80,80", "--step", "0.5", "simulate"});
  CHECK(far.status == 1);
  CHECK(far.err.find("FAIL: KDE at (80,80)") != std::string::npos);
}

TEST_CASE("verify suite unperturbed passes") {
  const auto o = run_cli({"verify"});
  CHECK(o.status == 0);
  CHECK(o.err.empty());
  const auto r = rows(o.out);
  CHECK(r.size() >= 8);
  for (const auto& row : r) {
    CAPTURE(row[0]);
    CHECK(row[2] == "pass");
  }
}

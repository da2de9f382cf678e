// sbmlab: experiment runner for the lattice symbiotic branching model.
//
//   sbmlab run CONFIG [--seed S] [--threads T] [--out DIR]
//   sbmlab suite {kernels|identities|rescaling|interface} [--seed S] [--threads T] [--out DIR]
//   sbmlab sample-exit --x X --y Y --rho R [-n N] [--method direct|conformal] [--seed S] [--out FILE]
//   sbmlab kernel [--t T ...] [--kmax K] [--out FILE]
//
// Exit codes: 0 ok, 1 a check failed, 2 configuration error or unknown
// suite, 3 stability or sampler guard tripped.
//
// Config schema (JSON, unknown keys rejected, errors name the key):
//   name       string                               default "experiment"
//   model      {"kind": "infinite_rate", "delta": 0.05,
//               "exit": {"method": "direct"|"conformal", "eps_b": 1e-5,
//                        "step_factor": 0.1, "max_steps": 1e8}}
//            | {"kind": "finite_rate", "gamma": G, "dt": 1e-3,
//               "scheme": "euler"|"local_walk", "adaptive_dt": false}
//   rho        number in [-1, 1]                     required
//   window     {"K": K} (raw lattice) | {"W": W, "n": n} (sites k/n, |k| <= round(nW))
//   boundary   "reflecting" | "periodic"             default "reflecting"
//   initial    {"u": MEASURE, "v": MEASURE, "cell_rule": "right_open"|"left_open"|{"u":..,"v":..}}
//   times      sorted list (rescaled time; internal time is n^2 t)
//   replicas   integer >= 1                          default 1000
//   seed       unsigned 64-bit                       default 1
//   outputs    {"dir": "out", "snapshots": true, "ledger": true}
//   checks     list of ids or {"id": ..., params}:
//              green_mean {phi}, mixed_moment {phi, psi}, second_moment {phi},
//              separation, collision_first_moment {phi, psi, t},
//              self_duality {dual: {u, v}, t, negative_control_rho},
//              martingale_residual {phi, psi}, interface {max_violation},
//              moment_probe {p, gammas, lambda, t},
//              convergence {n_list, tests: [{id, phi, psi}], step_policy, reference_spacing}
//              acceptance {criterion} (runs one pinned acceptance criterion),
//              every check also takes z_max (default 3).
//   MEASURE    {"kind": "zero"|"heaviside_left"|"heaviside_right"}
//            | {"kind": "point", "x": x, "weight": w} | {"kind": "density", "f": FUNCTION}
//            | {"kind": "sum", "terms": [MEASURE, ...]}
//   FUNCTION   {"kind": "gaussian", "center", "width", "height"} | {"kind": "exp_weight", "lambda", "center"}
//            | {"kind": "indicator", "lo", "hi"} | {"kind": "constant", "value"}

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sbm/sbm.hpp"

namespace fs = std::filesystem;
using namespace sbm;

namespace {

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, unsigned threads, const std::string& out) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(path);
  } catch (const ConfigError& e) {
    std::cerr << "sbmlab: " << e.what() << '\n';
    return exit_config_error;
  } catch (const std::exception& e) {
    std::cerr << "sbmlab: " << e.what() << '\n';
    return exit_config_error;
  }
  RunOptions opt;
  opt.seed = seed;
  opt.threads = threads;
  if (!out.empty()) opt.out_dir = out;
  const auto res = run_experiment(cfg, opt);
  for (const auto& r : res.checks)
    std::printf("%-48s est=%-12.6g ref=%-12.6g se=%-10.3g z=%-8.3g %s\n", r.id.c_str(), r.estimate, r.reference,
                r.std_error, r.z, status_of(r).c_str());
  if (!res.message.empty()) std::cerr << "sbmlab: " << res.message << '\n';
  if (res.exit_code == exit_ok || res.exit_code == exit_check_failed) std::printf("outputs in %s\n", res.out_dir.string().c_str());
  return res.exit_code;
}

int cmd_suite(const std::string& name, std::uint64_t seed, unsigned threads, const std::string& out) {
  const auto& members = suite_members();
  const auto it = members.find(name);
  if (it == members.end()) {
    std::cerr << "sbmlab: unknown suite '" << name << "' (kernels, identities, rescaling, interface)\n";
    return exit_config_error;
  }
  const SuiteOptions opt{seed, threads};
  Json summary;
  summary["suite"] = name;
  summary["seed"] = seed;
  summary["criteria"] = Json::array();
  std::vector<CheckResult> all;
  bool ok = true;
  for (int c : it->second) {
    const auto rep = run_criterion(c, opt);
    std::printf("criterion %d %s: %s (%.1f s)\n", rep.number, rep.pass ? "PASS" : "FAIL", rep.title.c_str(), rep.seconds);
    for (const auto& r : rep.rows) {
      std::printf("    %-52s est=%-12.6g ref=%-12.6g se=%-10.3g z=%-8.3g %s\n", r.id.c_str(), r.estimate, r.reference,
                  r.std_error, r.z, status_of(r).c_str());
      CheckResult tagged = r;
      tagged.id = "c" + std::to_string(rep.number) + " " + r.id;
      all.push_back(tagged);
    }
    ok = ok && rep.pass;
    summary["criteria"].push_back(criterion_json(rep));
  }
  summary["pass"] = ok;
  const fs::path dir = out.empty() ? fs::path("out") / ("suite_" + name) : fs::path(out);
  fs::create_directories(dir);
  write_check_csv(dir / "suite.csv", all);
  write_json(dir / "summary.json", summary);
  std::printf("outputs in %s\n", dir.string().c_str());
  return ok ? exit_ok : exit_check_failed;
}

int cmd_sample_exit(double x, double y, double rho, std::size_t n, const std::string& method, std::uint64_t seed,
                    const std::string& out) {
  ExitSamplerConfig cfg;
  try {
    cfg.method = exit_method_from_string(method);
  } catch (const std::invalid_argument& e) {
    std::cerr << "sbmlab: " << e.what() << '\n';
    return exit_config_error;
  }
  if (!(x >= 0.0 && y >= 0.0) || !(rho >= -1.0 && rho <= 1.0)) {
    std::cerr << "sbmlab: need x, y >= 0 and rho in [-1, 1]\n";
    return exit_config_error;
  }
  const fs::path path = out.empty() ? fs::path("exit_samples.csv") : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  CsvWriter w(path, {"sample", "x", "y", "tau"});
  Rng rng = Rng::stream(seed, 7001, 0);
  try {
    for (std::size_t i = 0; i < n; ++i) {
      const auto e = sample_exit_quadrant(x, y, rho, rng, cfg);
      w.row(i, e.x, e.y, e.tau);
    }
  } catch (const ExitSamplerError& e) {
    std::cerr << "sbmlab: " << e.what() << '\n';
    return exit_stability_error;
  }
  std::printf("wrote %zu samples to %s\n", n, path.string().c_str());
  return exit_ok;
}

int cmd_kernel(const std::vector<double>& times, int kmax, const std::string& out) {
  const fs::path path = out.empty() ? fs::path("kernels.csv") : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  CsvWriter w(path, {"t", "k", "discrete", "continuous"});
  for (double t : times) {
    if (!(t > 0.0)) {
      std::cerr << "sbmlab: kernel times must be positive\n";
      return exit_config_error;
    }
    const auto row = heat_kernel_row(t, kmax);
    for (int k = -kmax; k <= kmax; ++k) w.row(t, k, row[static_cast<std::size_t>(std::abs(k))], continuous_heat_kernel(t, k));
  }
  std::printf("wrote %s\n", path.string().c_str());
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sbmlab: simulation and verification runner for the lattice symbiotic branching model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(sbm::version));

  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out;

  auto* run = app.add_subcommand("run", "run one experiment config");
  std::string config_path;
  bool seed_given = false;
  run->add_option("config", config_path, "config file (JSON)")->required();
  run->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) { seed_given = true; });
  run->add_option("--threads", threads, "worker threads (output does not depend on it)")->check(CLI::PositiveNumber);
  run->add_option("--out", out, "output directory (overrides outputs.dir)");

  auto* suite = app.add_subcommand("suite", "run an acceptance subset");
  std::string suite_name;
  suite->add_option("name", suite_name, "kernels | identities | rescaling | interface")->required();
  suite->add_option("--seed", seed, "master seed");
  suite->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  suite->add_option("--out", out, "output directory");

  auto* sample = app.add_subcommand("sample-exit", "sample the quadrant exit measure to CSV");
  double x = 1.0, y = 1.0, rho = -0.5;
  std::size_t n = 10000;
  std::string method = "direct";
  sample->add_option("--x", x, "start x >= 0");
  sample->add_option("--y", y, "start y >= 0");
  sample->add_option("--rho", rho, "correlation");
  sample->add_option("-n,--samples", n, "number of samples");
  sample->add_option("--method", method, "direct | conformal");
  sample->add_option("--seed", seed, "master seed");
  sample->add_option("--threads", threads, "unused; accepted for uniformity");
  sample->add_option("--out", out, "output CSV");

  auto* kernel = app.add_subcommand("kernel", "dump discrete and continuous heat kernels to CSV");
  std::vector<double> times{0.1, 1.0, 10.0};
  int kmax = 20;
  kernel->add_option("--t", times, "times");
  kernel->add_option("--kmax", kmax, "largest |k|")->check(CLI::NonNegativeNumber);
  kernel->add_option("--out", out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config_error;
  }

  try {
    if (*run) return cmd_run(config_path, seed_given ? std::optional(seed) : std::nullopt, threads, out);
    if (*suite) return cmd_suite(suite_name, seed, threads, out);
    if (*sample) return cmd_sample_exit(x, y, rho, n, method, seed, out);
    if (*kernel) return cmd_kernel(times, kmax, out);
  } catch (const std::exception& e) {
    std::cerr << "sbmlab: " << e.what() << '\n';
    return exit_check_failed;
  }
  return exit_config_error;
}

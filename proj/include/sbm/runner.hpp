#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sbm/config.hpp"
#include "sbm/diagnostics.hpp"
#include "sbm/ensemble.hpp"
#include "sbm/io.hpp"
#include "sbm/report.hpp"
#include "sbm/suites.hpp"

namespace sbm {

inline constexpr int exit_ok = 0;
inline constexpr int exit_check_failed = 1;
inline constexpr int exit_config_error = 2;
inline constexpr int exit_stability_error = 3;

/// Stream experiment id of the main simulation in `run`; diagnostics that
/// simulate on their own use the ids fixed in diagnostics.hpp.
inline constexpr std::uint64_t main_experiment_id = 1;

struct RunOptions {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::optional<std::filesystem::path> out_dir;
};

struct RunResult {
  int exit_code = exit_ok;
  std::string message;
  std::vector<CheckResult> checks;
  std::filesystem::path out_dir;
};

namespace run_detail {

struct ReplicaOut {
  std::vector<PopulationState> snapshots;
  CollisionLedger ledger;
  std::vector<JumpEvent> jumps;
  double max_product = 0.0;
};

struct Recorder {
  bool keep_ledger = true;
  ReplicaOut out;
  void on_snapshot(const PopulationState& s) { out.snapshots.push_back(s); }
  void on_collision(double t, int k, double dl) {
    if (keep_ledger) out.ledger.add(t, k, dl);
  }
  void on_jump(const JumpEvent& e) {
    if (!keep_ledger) return;
    out.ledger.add(e.time, e.site, e.du * e.du);
    out.jumps.push_back(e);
  }
  void on_step(const PopulationState& s) {
    for (std::size_t i = 0; i < s.u.size(); ++i) out.max_product = std::max(out.max_product, s.u[i] * s.v[i]);
  }
};

/// Everything a check may use from the main run.
struct Context {
  const ExperimentConfig& cfg;
  unsigned threads;
  std::filesystem::path out;
  KernelGrid grid;
  PopulationState initial;
  std::vector<double> internal_times;
  const std::vector<ReplicaOut>& runs;
  std::vector<CheckResult>& rows;
};

using CheckFn = std::function<void(Context&)>;

inline LatticeField sample_scaled(const KernelGrid& g, const TestFunction& f, int n) {
  LatticeField out(g);
  for (int k = -g.radius; k <= g.radius; ++k) out.at(k) = f(static_cast<double>(k) / n);
  return out;
}

inline void require_infinite(const ExperimentConfig& c, const CheckSpec& s) {
  if (c.model.kind != ModelKind::infinite_rate) throw ConfigError(s.key + ".id", "'" + s.id + "' needs model.kind = infinite_rate");
}

inline void require_raw_lattice(const ExperimentConfig& c, const CheckSpec& s) {
  if (c.window.n != 1) throw ConfigError(s.key + ".id", "'" + s.id + "' runs on the raw lattice; use window.K");
}

inline double last_time(const ExperimentConfig& c) { return c.times.back(); }

/// Builds the closure for one requested check; parameter errors surface
/// here, before anything is simulated.
inline CheckFn plan_check(const ExperimentConfig& cfg, const CheckSpec& spec) {
  using config_detail::Node;
  Node p(spec.params, spec.key);
  auto fn_param = [&](const std::string& k, TestFunction def) {
    return p.has(k) ? parse_test_function(p.raw(k), p.key(k)) : def;
  };
  const double zmax = p.positive("z_max", 3.0);
  const TrotterConfig trotter = cfg.model.trotter;
  CheckFn fn;

  if (spec.id == "green_mean") {
    const auto phi = fn_param("phi", TestFunction::constant(1.0));
    fn = [phi, zmax](Context& c) {
      const int n = c.cfg.window.n;
      const auto w = sample_scaled(c.grid, phi, n);
      for (std::size_t i = 0; i < c.internal_times.size(); ++i) {
        RunningStats st;
        for (const auto& r : c.runs) st.add(r.snapshots[i].u.pair(w) / n);
        const double ref = c.initial.u.pair(apply_semigroup(w, c.internal_times[i])) / n;
        c.rows.push_back(z_check("green_mean " + time_label(c.cfg.times[i]), st.mean(), ref, st.std_error(), zmax));
      }
    };
  } else if (spec.id == "mixed_moment" || spec.id == "second_moment") {
    require_infinite(cfg, spec);
    const bool mixed = spec.id == "mixed_moment";
    const auto phi = fn_param("phi", TestFunction::gaussian(0.0, 2.0));
    const auto psi = mixed ? fn_param("psi", phi) : phi;
    fn = [phi, psi, mixed, zmax](Context& c) {
      const int n = c.cfg.window.n;
      const double dn = n;
      const auto wphi = sample_scaled(c.grid, phi, n), wpsi = sample_scaled(c.grid, psi, n);
      for (std::size_t i = 0; i < c.internal_times.size(); ++i) {
        RunningStats st;
        for (const auto& r : c.runs) {
          const auto& s = r.snapshots[i];
          const double a = s.u.pair(wphi) / dn;
          st.add(mixed ? a * s.v.pair(wpsi) / dn : a * a);
        }
        const double t = c.internal_times[i];
        double ref;
        if (t == 0.0) {
          const double a = c.initial.u.pair(wphi) / dn;
          ref = mixed ? a * c.initial.v.pair(wpsi) / dn : a * a;
        } else if (mixed) {
          ref = pair_killed(phi, psi, c.initial.u, c.initial.v, t, true, n).value;
        } else {
          const double mean = c.initial.u.pair(apply_semigroup(wphi, t)) / dn;
          const double un = pair_killed(phi, phi, c.initial.u, c.initial.v, t, false, n).value;
          const double ki = pair_killed(phi, phi, c.initial.u, c.initial.v, t, true, n).value;
          ref = mean * mean + (un - ki) / std::abs(c.cfg.rho);
        }
        c.rows.push_back(z_check((mixed ? "mixed_moment " : "second_moment ") + time_label(c.cfg.times[i]), st.mean(),
                                 ref, st.std_error(), zmax));
      }
    };
  } else if (spec.id == "separation") {
    require_infinite(cfg, spec);
    fn = [](Context& c) {
      double worst = 0.0;
      for (const auto& r : c.runs) worst = std::max(worst, r.max_product);
      c.rows.push_back(gate_row("separation max u*v", worst, 0.0, worst == 0.0));
    };
  } else if (spec.id == "collision_first_moment") {
    require_infinite(cfg, spec);
    require_raw_lattice(cfg, spec);
    if (!(cfg.rho > -1.0 && cfg.rho < 0.0)) throw ConfigError("rho", "'collision_first_moment' needs rho in (-1, 0)");
    const auto phi = fn_param("phi", TestFunction::gaussian(0.0, 2.0));
    const auto psi = fn_param("psi", phi);
    const double t = p.positive("t", last_time(cfg));
    config_detail::convert(p.key("t"), [&] { return trotter_steps_for(t, trotter.delta); });
    fn = [=](Context& c) {
      CollisionCheckSetup s{c.initial, phi, psi, t, c.cfg.replicas, c.cfg.seed, c.threads, trotter};
      auto r = collision_firstmoment_check(s);
      r.first_moment = z_check(r.first_moment.id, r.first_moment.estimate, r.first_moment.reference,
                               r.first_moment.std_error, zmax);
      r.covariation = z_check(r.covariation.id, r.covariation.estimate, r.covariation.reference,
                              r.covariation.std_error, zmax);
      c.rows.push_back(r.first_moment);
      c.rows.push_back(r.covariation);
    };
  } else if (spec.id == "self_duality") {
    require_infinite(cfg, spec);
    require_raw_lattice(cfg, spec);
    if (!(cfg.rho > -1.0 && cfg.rho < 1.0)) throw ConfigError("rho", "'self_duality' needs rho in (-1, 1)");
    Node d(p.raw("dual"), p.key("dual"));
    const auto du = parse_measure(d.raw("u"), d.key("u"));
    const auto dv = parse_measure(d.raw("v"), d.key("v"));
    d.finish();
    const double t = p.positive("t", last_time(cfg));
    config_detail::convert(p.key("t"), [&] { return trotter_steps_for(t, trotter.delta); });
    std::optional<double> control;
    if (p.has("negative_control_rho")) {
      control = p.number("negative_control_rho");
      if (!(*control > -1.0 && *control < 1.0)) throw ConfigError(p.key("negative_control_rho"), "must lie in (-1, 1)");
    }
    fn = [=](Context& c) {
      const auto [a, b] = coarse_initial(du, dv, 1, c.cfg.window.W, c.cfg.boundary);
      SelfDualitySetup s{c.initial, a, b, t, c.cfg.replicas, c.cfg.seed, c.threads, trotter};
      const auto r = self_duality_test(s);
      c.rows.push_back(z_check("self_duality re", r.lhs.real(), r.rhs.real(), r.se_re, zmax));
      c.rows.push_back(z_check("self_duality im", r.lhs.imag(), r.rhs.imag(), r.se_im, zmax));
      if (control) {
        s.dual_rho = *control;
        const auto q = self_duality_test(s);
        const double zre = std::abs(q.z_re), zim = std::abs(q.z_im);
        const bool re_side = zre >= zim;
        auto row = negative_control("self_duality mismatched-rho " + std::string(re_side ? "re" : "im"),
                                    re_side ? q.lhs.real() : q.lhs.imag(), re_side ? q.rhs.real() : q.rhs.imag(),
                                    re_side ? q.se_re : q.se_im, zmax);
        c.rows.push_back(row);
      }
    };
  } else if (spec.id == "martingale_residual") {
    require_infinite(cfg, spec);
    require_raw_lattice(cfg, spec);
    if (trotter.exit.method != ExitMethod::direct)
      throw ConfigError("model.exit.method", "'martingale_residual' needs exit times; use the direct sampler");
    const auto phi = fn_param("phi", TestFunction::gaussian(-1.0, 2.0, 0.5));
    const auto psi = fn_param("psi", TestFunction::gaussian(1.0, 2.0, 0.5));
    fn = [=](Context& c) {
      MartingaleSetup s{c.initial, detail::sample_on(c.grid, phi), detail::sample_on(c.grid, psi), c.cfg.times,
                        c.cfg.replicas, c.cfg.seed, c.threads, trotter};
      for (const auto& r : martingale_residual(s)) {
        c.rows.push_back(z_check("martingale_residual re " + time_label(r.t), r.mean.real(), 0.0, r.se_re, zmax));
        c.rows.push_back(z_check("martingale_residual im " + time_label(r.t), r.mean.imag(), 0.0, r.se_im, zmax));
      }
    };
  } else if (spec.id == "interface") {
    require_infinite(cfg, spec);
    require_raw_lattice(cfg, spec);
    const double max_violation = p.number("max_violation", 0.05);
    fn = [=](Context& c) {
      InterfaceSetup s{c.initial, c.cfg.times, c.cfg.replicas, c.cfg.seed, c.threads, trotter};
      const auto rep = interface_report(s);
      CsvWriter w(c.out / "interface.csv", {"t", "ordered_fraction", "single_point_fraction", "position_mean",
                                            "position_sd", "position_median", "zero_site_fraction"});
      for (const auto& r : rep.rows)
        w.row(r.t, r.ordered_fraction, r.single_point_fraction, r.position_mean, r.position_sd, r.position_median,
              r.zero_site_fraction);
      CsvWriter pw(c.out / "interface_positions.csv", {"t", "replica", "position"});
      for (std::size_t i = 0; i < rep.positions.size(); ++i)
        for (std::size_t r = 0; r < rep.positions[i].size(); ++r) pw.row(rep.rows[i].t, r, rep.positions[i][r]);
      const double n = static_cast<double>(c.cfg.replicas);
      for (const auto& r : rep.rows) {
        const double v = 1.0 - r.ordered_fraction, m = 1.0 - r.single_point_fraction;
        c.rows.push_back(gate_row("interface ordering-violation " + time_label(r.t), v, max_violation,
                                  v <= max_violation, std::sqrt(v * (1.0 - v) / n)));
        c.rows.push_back(gate_row("interface non-single-point " + time_label(r.t), m, max_violation,
                                  m <= max_violation, std::sqrt(m * (1.0 - m) / n)));
      }
    };
  } else if (spec.id == "moment_probe") {
    if (cfg.model.kind != ModelKind::finite_rate) throw ConfigError(spec.key + ".id", "'moment_probe' needs model.kind = finite_rate");
    require_raw_lattice(cfg, spec);
    if (!(cfg.rho > -1.0 && cfg.rho <= 0.0)) throw ConfigError("rho", "'moment_probe' needs rho in (-1, 0]");
    MomentProbeSetup s;
    s.rho = cfg.rho;
    s.p = p.number("p");
    if (!(s.p > 2.0)) throw ConfigError(p.key("p"), "must exceed 2");
    s.gammas = p.numbers("gammas", s.gammas);
    for (std::size_t i = 0; i < s.gammas.size(); ++i)
      if (!(s.gammas[i] > 0.0)) throw ConfigError(p.key("gammas") + "[" + std::to_string(i) + "]", "must be positive");
    s.lambda = p.number("lambda", s.lambda);
    s.t = p.positive("t", last_time(cfg));
    s.dt = cfg.model.finite.dt;
    s.scheme = cfg.model.finite.scheme;
    fn = [s](Context& c) mutable {
      s.u0 = c.initial.u;
      s.v0 = c.initial.v;
      s.replicas = c.cfg.replicas;
      s.seed = c.cfg.seed;
      s.threads = c.threads;
      const auto r = moment_boundedness_probe(s);
      CsvWriter w(c.out / "moment_probe.csv", {"rho", "p", "p_star", "gamma", "moment", "std_error"});
      for (const auto& row : r.rows) w.row(s.rho, s.p, r.p_star, row.gamma, row.moment, row.std_error);
      const bool below = s.p < r.p_star;
      c.rows.push_back(gate_row(std::string("moment_probe ") + (below ? "flat" : "increasing") + " p=" + format_number(s.p),
                                r.rows.back().moment, r.rows.front().moment, below ? r.flat : r.increasing));
    };
  } else if (spec.id == "convergence") {
    require_infinite(cfg, spec);
    ConvergenceSetup s;
    s.mu0 = cfg.u0;
    s.nu0 = cfg.v0;
    s.rho = cfg.rho;
    s.t_list = cfg.times;
    s.W = cfg.window.W;
    s.boundary = cfg.boundary;
    if (cfg.rule_u != cfg.rule_v) throw ConfigError("initial.cell_rule", "'convergence' uses one cell rule for both types");
    s.cell_rule = cfg.rule_u;
    s.exit = trotter.exit;
    s.step.value = trotter.delta;
    if (p.has("n_list")) {
      s.n_list.clear();
      for (double x : p.numbers("n_list")) {
        if (x < 1 || x != std::floor(x)) throw ConfigError(p.key("n_list"), "expected positive integers");
        s.n_list.push_back(static_cast<int>(x));
      }
    }
    if (s.n_list.size() < 2) throw ConfigError(p.key("n_list"), "need at least two values");
    const std::string policy = p.string("step_policy", "fixed_internal");
    if (policy == "fixed_rescaled") s.step.policy = RescaledStep::Policy::fixed_rescaled;
    else if (policy != "fixed_internal") throw ConfigError(p.key("step_policy"), "expected fixed_internal or fixed_rescaled");
    s.reference_spacing = p.positive("reference_spacing", s.reference_spacing);
    const Json& tests = p.raw("tests");
    if (!tests.is_array() || tests.empty()) throw ConfigError(p.key("tests"), "expected a nonempty list");
    for (std::size_t i = 0; i < tests.size(); ++i) {
      const std::string key = p.key("tests") + "[" + std::to_string(i) + "]";
      Node tn(tests[i], key);
      const std::string id = tn.string("id");
      const auto phi = parse_test_function(tn.raw("phi"), tn.key("phi"));
      TestPair tp{id, phi, tn.has("psi") ? parse_test_function(tn.raw("psi"), tn.key("psi")) : phi};
      tn.finish();
      s.tests.push_back(tp);
    }
    for (double t : cfg.times)
      for (int n : s.n_list)
        config_detail::convert("times", [&] { return trotter_steps_for(t * n * n, s.step.internal(n)); });
    fn = [s](Context& c) mutable {
      s.replicas = c.cfg.replicas;
      s.seed = c.cfg.seed;
      s.threads = c.threads;
      const auto rows = convergence_experiment(s);
      CsvWriter w(c.out / "trend.csv", {"n", "t", "phi_id", "statistic", "estimate", "std_error", "reference", "gap"});
      for (const auto& r : rows) w.row(r.n, r.t, r.phi_id, r.statistic, r.estimate, r.std_error, r.reference, r.gap);
      for (const auto& tp : s.tests)
        for (double t : s.t_list)
          for (const char* stat : {"mean", "second_moment", "mixed_moment"}) {
            std::vector<double> gaps;
            for (int n : s.n_list)
              for (const auto& r : rows)
                if (r.n == n && r.t == t && r.phi_id == tp.id && r.statistic == stat) gaps.push_back(r.gap);
            bool dec = gaps.size() == s.n_list.size();
            for (std::size_t i = 1; dec && i < gaps.size(); ++i) dec = gaps[i] < gaps[i - 1];
            c.rows.push_back(gate_row("convergence " + std::string(stat) + " " + tp.id + " " + time_label(t),
                                      gaps.empty() ? 0.0 : gaps.back(), gaps.empty() ? 0.0 : gaps.front(), dec));
          }
    };
  } else if (spec.id == "acceptance") {
    const long long number = p.integer("criterion", std::nullopt, 1);
    if (number > 10) throw ConfigError(p.key("criterion"), "criteria are numbered 1..10");
    fn = [number](Context& c) {
      const auto rep = run_criterion(static_cast<int>(number), {c.cfg.seed, c.threads});
      for (auto r : rep.rows) {
        r.id = "c" + std::to_string(number) + " " + r.id;
        c.rows.push_back(r);
      }
    };
  } else {
    throw ConfigError(spec.key + ".id", "unknown check '" + spec.id + "'");
  }
  p.finish();
  return fn;
}

}  // namespace run_detail

/// Runs one experiment: simulates the configured replicas, writes
/// snapshots and ledgers, evaluates the requested checks and writes the
/// diagnostics, the JSON summary and the manifest. Never throws for
/// configuration or stability problems; they come back as exit codes.
inline RunResult run_experiment(ExperimentConfig cfg, const RunOptions& opt = {}) {
  using namespace run_detail;
  RunResult res;
  try {
    if (opt.seed) {
      cfg.seed = *opt.seed;
      cfg.canonical["seed"] = cfg.seed;
    }
    res.out_dir = opt.out_dir ? *opt.out_dir : std::filesystem::path(cfg.output_dir);
    std::vector<CheckFn> plans;
    for (const auto& s : cfg.checks) plans.push_back(plan_check(cfg, s));
    std::filesystem::create_directories(res.out_dir);

    const int n = cfg.window.n;
    const double n2 = static_cast<double>(n) * n;
    const KernelGrid grid = rescaled_window(cfg.window.W, n, cfg.boundary);
    auto [u0, v0] = coarse_initial(cfg.u0, cfg.v0, n, cfg.window.W, cfg.boundary, cfg.rule_u, cfg.rule_v);
    const PopulationState initial(std::move(u0), std::move(v0), cfg.rho);
    std::vector<double> internal;
    for (double t : cfg.times) internal.push_back(t * n2);

    const bool keep = cfg.write_ledger;
    const auto runs = run_replicas(cfg.replicas, cfg.seed, main_experiment_id, opt.threads, [&](std::size_t, Rng& rng) {
      Recorder rec;
      rec.keep_ledger = keep;
      if (cfg.model.kind == ModelKind::infinite_rate) simulate_infinite_rate(initial, cfg.model.trotter, internal, rng, rec);
      else simulate_finite_rate(initial, cfg.model.finite, internal, rng, rec);
      for (std::size_t i = 0; i < rec.out.snapshots.size(); ++i) rec.out.snapshots[i].time = cfg.times[i];
      return std::move(rec.out);
    });

    if (cfg.write_snapshots) {
      CsvWriter w(res.out_dir / "snapshots.csv", {"replica", "time", "site", "u", "v"});
      for (std::size_t r = 0; r < runs.size(); ++r)
        for (const auto& s : runs[r].snapshots)
          for (int k = -grid.radius; k <= grid.radius; ++k) w.row(r, s.time, k, s.u.at(k), s.v.at(k));
    }
    if (cfg.write_ledger) {
      CsvWriter w(res.out_dir / "ledger.csv", {"replica", "time", "site", "dL"});
      for (std::size_t r = 0; r < runs.size(); ++r)
        for (const auto& e : runs[r].ledger.primary) w.row(r, e.time / n2, e.site, e.value);
      if (cfg.model.kind == ModelKind::infinite_rate) {
        CsvWriter j(res.out_dir / "jumps.csv", {"replica", "time", "site", "du", "dv"});
        for (std::size_t r = 0; r < runs.size(); ++r)
          for (const auto& e : runs[r].jumps) j.row(r, e.time / n2, e.site, e.du, e.dv);
      }
    }

    Context ctx{cfg, opt.threads, res.out_dir, grid, initial, internal, runs, res.checks};
    for (auto& f : plans) f(ctx);
    write_check_csv(res.out_dir / "diagnostics.csv", res.checks);

    const bool all_pass = std::all_of(res.checks.begin(), res.checks.end(), [](const auto& r) { return r.pass; });
    res.exit_code = all_pass ? exit_ok : exit_check_failed;
    const std::string hash = hex64(fnv1a64(cfg.canonical.dump()));

    Json summary;
    summary["name"] = cfg.name;
    summary["config_hash"] = hash;
    summary["seed"] = cfg.seed;
    if (unvalidated_regime(cfg.rho)) summary["regime"] = "unvalidated (rho = -1)";
    summary["exit_code"] = res.exit_code;
    summary["checks"] = Json::array();
    for (const auto& r : res.checks) summary["checks"].push_back(check_json(r));
    write_json(res.out_dir / "summary.json", summary);

    Json manifest;
    manifest["tool"] = "sbmlab";
    manifest["config_hash"] = hash;
    manifest["seed"] = cfg.seed;
    manifest["stream_rule"] =
        "replica r of experiment e draws from xoshiro256++ seeded with stream_seed(seed, e, r); main run e = 1";
    manifest["versions"] = {{"sbmlab", std::string(version)},
                            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                            {"fftw", std::string(fftw_version)},
                            {"compiler", std::string(__VERSION__)}};
    manifest["config"] = cfg.canonical;
    write_json(res.out_dir / "manifest.json", manifest);

    if (!all_pass) res.message = "one or more checks failed";
  } catch (const ConfigError& e) {
    res.exit_code = exit_config_error;
    res.message = e.what();
  } catch (const StabilityError& e) {
    res.exit_code = exit_stability_error;
    res.message = std::string("stability error at t=") + format_number(e.time()) + ": " + e.what();
  } catch (const ExitSamplerError& e) {
    res.exit_code = exit_stability_error;
    res.message = std::string("exit sampler error: ") + e.what();
  }
  return res;
}

}  // namespace sbm

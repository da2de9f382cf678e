#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbm/exit_measure.hpp"
#include "sbm/finite_rate.hpp"
#include "sbm/infinite_rate.hpp"
#include "sbm/io.hpp"
#include "sbm/lattice.hpp"
#include "sbm/rescaling.hpp"
#include "sbm/test_function.hpp"

namespace sbm {

/// Schema violation; the message starts with the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::invalid_argument("config key '" + key + "': " + what), key_(key) {}
  [[nodiscard]] const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class ModelKind { finite_rate, infinite_rate };

struct ModelConfig {
  ModelKind kind = ModelKind::infinite_rate;
  FiniteRateParams finite{};
  TrotterConfig trotter{};
};

/// A raw lattice window (K sites each side, n = 1) or the rescaled window
/// [-W, W] on (1/n)Z with K = round(n W).
struct WindowConfig {
  double W = 20.0;
  int n = 1;
  [[nodiscard]] int radius() const { return static_cast<int>(std::lround(W * n)); }
};

/// One requested diagnostic. `params` keeps the check's own keys; they are
/// validated when the check is built.
struct CheckSpec {
  std::string id;
  Json params = Json::object();
  std::string key;  // "checks[i]" for error messages
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model{};
  double rho = -0.5;
  WindowConfig window{};
  Boundary boundary = Boundary::reflecting;
  InitialMeasureSpec u0 = InitialMeasureSpec::heaviside_left();
  InitialMeasureSpec v0 = InitialMeasureSpec::heaviside_right();
  CellRule rule_u = CellRule::right_open;
  CellRule rule_v = CellRule::right_open;
  std::vector<double> times{1.0};
  std::size_t replicas = 1000;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  bool write_snapshots = true;
  bool write_ledger = true;
  std::vector<CheckSpec> checks;
  /// The parsed document with defaults filled in; hashed into the manifest.
  Json canonical;
};

namespace config_detail {

/// Walks one JSON object, remembering which keys were read so that
/// leftovers can be reported as unknown.
class Node {
 public:
  Node(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  [[nodiscard]] std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  [[nodiscard]] bool has(const std::string& k) const { return j_.contains(k); }

  const Json& raw(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) throw ConfigError(key(k), "missing required key");
    return j_.at(k);
  }

  double number(const std::string& k, std::optional<double> def = std::nullopt) {
    if (!has(k)) {
      if (def) return *def;
      throw ConfigError(key(k), "missing required key");
    }
    const Json& v = raw(k);
    if (!v.is_number()) throw ConfigError(key(k), "expected a number");
    return v.get<double>();
  }

  double positive(const std::string& k, std::optional<double> def = std::nullopt) {
    const double x = number(k, def);
    if (!(x > 0.0)) throw ConfigError(key(k), "must be positive");
    return x;
  }

  long long integer(const std::string& k, std::optional<long long> def = std::nullopt, long long lo = 0) {
    if (!has(k)) {
      if (def) return *def;
      throw ConfigError(key(k), "missing required key");
    }
    const Json& v = raw(k);
    if (!v.is_number_integer()) throw ConfigError(key(k), "expected an integer");
    const long long x = v.get<long long>();
    if (x < lo) throw ConfigError(key(k), "must be >= " + std::to_string(lo));
    return x;
  }

  std::uint64_t unsigned64(const std::string& k, std::uint64_t def) {
    if (!has(k)) return def;
    const Json& v = raw(k);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError(key(k), "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& k, std::optional<std::string> def = std::nullopt) {
    if (!has(k)) {
      if (def) return *def;
      throw ConfigError(key(k), "missing required key");
    }
    const Json& v = raw(k);
    if (!v.is_string()) throw ConfigError(key(k), "expected a string");
    return v.get<std::string>();
  }

  bool boolean(const std::string& k, bool def) {
    if (!has(k)) return def;
    const Json& v = raw(k);
    if (!v.is_boolean()) throw ConfigError(key(k), "expected true or false");
    return v.get<bool>();
  }

  std::vector<double> numbers(const std::string& k, std::optional<std::vector<double>> def = std::nullopt) {
    if (!has(k)) {
      if (def) return *def;
      throw ConfigError(key(k), "missing required key");
    }
    const Json& v = raw(k);
    if (!v.is_array() || v.empty()) throw ConfigError(key(k), "expected a nonempty list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(key(k) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  /// Throws for the first key that was never read.
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(key(k), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto convert(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace config_detail

/// {"kind": "gaussian", "center": c, "width": w, "height": h}
/// {"kind": "exp_weight", "lambda": l, "center": c}
/// {"kind": "indicator", "lo": a, "hi": b}
/// {"kind": "constant", "value": v}
inline TestFunction parse_test_function(const Json& j, const std::string& path) {
  config_detail::Node n(j, path);
  const std::string kind = n.string("kind");
  std::optional<TestFunction> f;
  if (kind == "gaussian") {
    const double c = n.number("center", 0.0), w = n.number("width", 1.0), h = n.number("height", 1.0);
    f = config_detail::convert(n.key("width"), [&] { return TestFunction::gaussian(c, w, h); });
  } else if (kind == "exp_weight") {
    const double l = n.number("lambda"), c = n.number("center", 0.0);
    f = TestFunction::exp_weight(l, c);
  } else if (kind == "indicator") {
    const double lo = n.number("lo"), hi = n.number("hi");
    f = config_detail::convert(n.key("hi"), [&] { return TestFunction::indicator(lo, hi); });
  } else if (kind == "constant") {
    f = TestFunction::constant(n.number("value", 1.0));
  } else {
    throw ConfigError(n.key("kind"), "unknown test function '" + kind + "'");
  }
  n.finish();
  return *f;
}

/// {"kind": "zero" | "heaviside_left" | "heaviside_right"}
/// {"kind": "point", "x": x, "weight": w}
/// {"kind": "density", "f": <test function>}
/// {"kind": "sum", "terms": [<measure>, ...]}
inline InitialMeasureSpec parse_measure(const Json& j, const std::string& path) {
  config_detail::Node n(j, path);
  const std::string kind = n.string("kind");
  std::optional<InitialMeasureSpec> m;
  if (kind == "zero") {
    m = InitialMeasureSpec::zero();
  } else if (kind == "heaviside_left") {
    m = InitialMeasureSpec::heaviside_left();
  } else if (kind == "heaviside_right") {
    m = InitialMeasureSpec::heaviside_right();
  } else if (kind == "point") {
    const double x = n.number("x"), w = n.number("weight", 1.0);
    m = config_detail::convert(n.key("weight"), [&] { return InitialMeasureSpec::point(x, w); });
  } else if (kind == "density") {
    const auto f = parse_test_function(n.raw("f"), n.key("f"));
    if (f.kind() == TestFunction::Kind::constant && f.param_b() < 0.0) throw ConfigError(n.key("f"), "density must be nonnegative");
    if (f.kind() == TestFunction::Kind::gaussian && f.param_b() < 0.0) throw ConfigError(n.key("f"), "density must be nonnegative");
    m = InitialMeasureSpec::density(f);
  } else if (kind == "sum") {
    const Json& terms = n.raw("terms");
    if (!terms.is_array() || terms.empty()) throw ConfigError(n.key("terms"), "expected a nonempty list of measures");
    std::vector<InitialMeasureSpec> parts;
    for (std::size_t i = 0; i < terms.size(); ++i)
      parts.push_back(parse_measure(terms[i], n.key("terms") + "[" + std::to_string(i) + "]"));
    m = InitialMeasureSpec::sum(std::move(parts));
  } else {
    throw ConfigError(n.key("kind"), "unknown measure '" + kind + "'");
  }
  n.finish();
  return *m;
}

inline ExitSamplerConfig parse_exit(const Json& j, const std::string& path) {
  config_detail::Node n(j, path);
  ExitSamplerConfig e;
  e.method = config_detail::convert(n.key("method"), [&] { return exit_method_from_string(n.string("method", "direct")); });
  e.eps_rel = n.positive("eps_b", e.eps_rel);
  e.step_factor = n.positive("step_factor", e.step_factor);
  e.max_steps = n.integer("max_steps", e.max_steps, 1);
  n.finish();
  return e;
}

inline NoiseScheme noise_scheme_from_string(const std::string& s) {
  if (s == "euler") return NoiseScheme::euler;
  if (s == "local_walk") return NoiseScheme::local_walk;
  throw std::invalid_argument("unknown noise scheme '" + s + "'");
}

inline std::string to_string(NoiseScheme s) { return s == NoiseScheme::euler ? "euler" : "local_walk"; }

/// Parses and validates a config document. Every key is either read or
/// rejected as unknown; defaults are written back into `canonical`.
inline ExperimentConfig parse_config(const Json& doc) {
  using config_detail::Node;
  Node root(doc, "");
  ExperimentConfig c;
  Json canon;
  c.name = root.string("name", c.name);
  canon["name"] = c.name;

  {
    Node m(root.raw("model"), "model");
    const std::string kind = m.string("kind");
    Json mc;
    mc["kind"] = kind;
    if (kind == "infinite_rate") {
      c.model.kind = ModelKind::infinite_rate;
      c.model.trotter.delta = m.positive("delta", 0.05);
      if (m.has("exit")) c.model.trotter.exit = parse_exit(m.raw("exit"), "model.exit");
      mc["delta"] = c.model.trotter.delta;
      mc["exit"] = {{"method", to_string(c.model.trotter.exit.method)},
                    {"eps_b", c.model.trotter.exit.eps_rel},
                    {"step_factor", c.model.trotter.exit.step_factor},
                    {"max_steps", c.model.trotter.exit.max_steps}};
    } else if (kind == "finite_rate") {
      c.model.kind = ModelKind::finite_rate;
      c.model.finite.gamma = m.number("gamma");
      if (!(c.model.finite.gamma >= 0.0)) throw ConfigError("model.gamma", "must be nonnegative");
      c.model.finite.dt = m.positive("dt", 1e-3);
      c.model.finite.scheme =
          config_detail::convert("model.scheme", [&] { return noise_scheme_from_string(m.string("scheme", "euler")); });
      c.model.finite.adaptive_dt = m.boolean("adaptive_dt", false);
      mc["gamma"] = c.model.finite.gamma;
      mc["dt"] = c.model.finite.dt;
      mc["scheme"] = to_string(c.model.finite.scheme);
      mc["adaptive_dt"] = c.model.finite.adaptive_dt;
    } else {
      throw ConfigError("model.kind", "expected 'finite_rate' or 'infinite_rate', got '" + kind + "'");
    }
    m.finish();
    canon["model"] = mc;
  }

  c.rho = root.number("rho");
  if (!(c.rho >= -1.0 && c.rho <= 1.0)) throw ConfigError("rho", "must lie in [-1, 1]");
  canon["rho"] = c.rho;

  {
    Node w(root.raw("window"), "window");
    if (w.has("K")) {
      if (w.has("W") || w.has("n")) throw ConfigError("window", "give either K or (W, n), not both");
      c.window.n = 1;
      c.window.W = static_cast<double>(w.integer("K", std::nullopt, 1));
    } else {
      c.window.W = w.positive("W");
      c.window.n = static_cast<int>(w.integer("n", 1, 1));
      if (c.window.radius() < 1) throw ConfigError("window.W", "window must hold at least one site each side");
    }
    w.finish();
    canon["window"] = {{"W", c.window.W}, {"n", c.window.n}, {"K", c.window.radius()}};
  }

  c.boundary = config_detail::convert("boundary", [&] { return boundary_from_string(root.string("boundary", "reflecting")); });
  canon["boundary"] = std::string(to_string(c.boundary));

  {
    Node in(root.raw("initial"), "initial");
    c.u0 = parse_measure(in.raw("u"), "initial.u");
    c.v0 = parse_measure(in.raw("v"), "initial.v");
    if (in.has("cell_rule")) {
      const Json& r = in.raw("cell_rule");
      auto rule = [](const std::string& key, const std::string& s) {
        return config_detail::convert(key, [&] { return cell_rule_from_string(s); });
      };
      if (r.is_string()) {
        c.rule_u = c.rule_v = rule("initial.cell_rule", r.get<std::string>());
      } else {
        Node rr(r, "initial.cell_rule");
        c.rule_u = rule("initial.cell_rule.u", rr.string("u", "right_open"));
        c.rule_v = rule("initial.cell_rule.v", rr.string("v", "right_open"));
        rr.finish();
      }
    }
    in.finish();
    Json ic = doc.at("initial");
    auto name = [](CellRule r) { return r == CellRule::right_open ? "right_open" : "left_open"; };
    ic["cell_rule"] = {{"u", name(c.rule_u)}, {"v", name(c.rule_v)}};
    canon["initial"] = ic;
  }

  c.times = root.numbers("times", c.times);
  for (std::size_t i = 0; i < c.times.size(); ++i) {
    if (!(c.times[i] >= 0.0)) throw ConfigError("times[" + std::to_string(i) + "]", "must be nonnegative");
    if (i > 0 && c.times[i] < c.times[i - 1]) throw ConfigError("times", "must be sorted");
  }
  canon["times"] = c.times;

  c.replicas = static_cast<std::size_t>(root.integer("replicas", static_cast<long long>(c.replicas), 1));
  canon["replicas"] = c.replicas;
  c.seed = root.unsigned64("seed", c.seed);
  canon["seed"] = c.seed;

  if (root.has("outputs")) {
    Node o(root.raw("outputs"), "outputs");
    c.output_dir = o.string("dir", c.output_dir);
    c.write_snapshots = o.boolean("snapshots", c.write_snapshots);
    c.write_ledger = o.boolean("ledger", c.write_ledger);
    o.finish();
  }
  canon["outputs"] = {{"dir", c.output_dir}, {"snapshots", c.write_snapshots}, {"ledger", c.write_ledger}};

  if (root.has("checks")) {
    const Json& cl = root.raw("checks");
    if (!cl.is_array()) throw ConfigError("checks", "expected a list");
    for (std::size_t i = 0; i < cl.size(); ++i) {
      const std::string key = "checks[" + std::to_string(i) + "]";
      CheckSpec s;
      s.key = key;
      if (cl[i].is_string()) {
        s.id = cl[i].get<std::string>();
      } else if (cl[i].is_object()) {
        if (!cl[i].contains("id") || !cl[i].at("id").is_string()) throw ConfigError(key + ".id", "missing check id");
        s.id = cl[i].at("id").get<std::string>();
        s.params = cl[i];
        s.params.erase("id");
      } else {
        throw ConfigError(key, "expected a check id or an object with an 'id'");
      }
      c.checks.push_back(std::move(s));
    }
    canon["checks"] = cl;
  } else {
    canon["checks"] = Json::array();
  }
  root.finish();

  if (c.model.kind == ModelKind::infinite_rate) {
    for (std::size_t i = 0; i < c.times.size(); ++i) {
      const double internal = c.times[i] * c.window.n * c.window.n;
      config_detail::convert("times[" + std::to_string(i) + "]",
                             [&] { return trotter_steps_for(internal, c.model.trotter.delta); });
    }
  }
  config_detail::convert("initial.cell_rule", [&] {
    return coarse_initial(c.u0, c.v0, c.window.n, c.window.W, c.boundary, c.rule_u, c.rule_v);
  });
  c.canonical = std::move(canon);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const Json doc = [&] {
    try {
      return read_json(path);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("<file>", e.what());
    }
  }();
  return parse_config(doc);
}

}  // namespace sbm

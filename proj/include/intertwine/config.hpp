#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "twist.hpp"
#include "verify.hpp"

namespace intertwine {

/// Flat `key = value` run configuration. Lines starting with '#' are
/// comments. Number lists are comma separated, expression lists use ';'.
/// Numbers may be constant expressions such as `2*pi`.
struct ModelConfig {
  std::string name;
  std::string manifold = "euclidean";
  int dim = 1;
  double radius = 1.0;
  double margin = 0.1;
  std::vector<double> chart_lo, chart_hi;  // interval ends, half-plane y range, user chart box
  std::vector<std::string> coords;         // user chart coordinate names
  std::vector<std::string> metric;         // user chart metric, row-major
  std::string potential = "0";
  std::vector<double> region_lo, region_hi;
  std::vector<int> region_points;
  std::vector<int> grid_points;  // spectral grid over the region, default refined region

  bool operator==(const ModelConfig&) const = default;
};

struct TwistConfig {
  std::string family = "identity";
  std::vector<std::string> exprs;
  std::vector<double> matrix;  // constant-matrix entries, row-major
  std::vector<std::string> param_names;
  std::vector<double> params;
  std::string coord;  // exp-poly coordinate, default the first one
  int degree = 2;
  std::string mode = "plain";
  double epsilon = 0.1;
  int restarts = 5;

  bool operator==(const TwistConfig&) const = default;
};

struct SimulationConfig {
  double t = 0.5;
  double h = 1e-3;
  std::uint64_t n = 10000;
  std::optional<std::uint64_t> seed;
  std::vector<double> x0;  // default: region centre
  std::string f;           // default: first built-in test function
  std::uint64_t paths = 8;
  double delta = 1e-2;

  bool operator==(const SimulationConfig&) const = default;
};

struct VerifyConfig {
  std::vector<std::string> functions;  // default: built-in test functions
  std::vector<std::string> kinds{"poincare", "brascamp-lieb"};
  std::vector<std::string> asymmetric;  // "f | g" pairs
  std::string concentration;
  std::vector<double> radii{0.5, 1.0, 2.0};
  std::string phi;  // φ-decay test function
  std::vector<double> phi_times{0.25, 0.5, 1.0};
  std::uint64_t phi_n = 2000;
  bool gronwall = false;
  std::uint64_t gronwall_n = 1000;
  int matrix_dim = 0;
  std::uint64_t matrix_trials = 1000;
  double tolerance = 1e-6;

  bool operator==(const VerifyConfig&) const = default;
};

inline const std::vector<std::string>& task_order() {
  static const std::vector<std::string> order{"bound", "gap", "optimize", "simulate", "intertwine", "verify"};
  return order;
}

struct RunConfig {
  ModelConfig model;
  TwistConfig twist;
  SimulationConfig simulation;
  VerifyConfig verify;
  std::vector<std::string> tasks;
  std::string output = "out";

  bool operator==(const RunConfig&) const = default;

  bool wants(const std::string& task) const {
    for (const auto& t : tasks)
      if (t == task) return true;
    return false;
  }

  bool needs_seed() const {
    return wants("simulate") || wants("intertwine") ||
           (wants("verify") && (!verify.phi.empty() || verify.gronwall || verify.matrix_dim > 0));
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

inline std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

inline double parse_number(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec == std::errc() && p == t.data() + t.size()) return v;
  try {
    v = ScalarField(t, expr::SymbolTable())(nullptr);
  } catch (const ConfigError&) {
    throw ConfigError("expected a number, got '" + t + "'");
  }
  if (!std::isfinite(v)) throw ConfigError("expected a finite number, got '" + t + "'");
  return v;
}

inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_integer(const std::string& s) {
  const std::string t = trim(s);
  T v{};
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError("expected a non-negative integer, got '" + t + "'");
  return v;
}

inline void parse_value(const std::string& s, std::string& out) { out = trim(s); }
inline void parse_value(const std::string& s, double& out) { out = parse_number(s); }
inline void parse_value(const std::string& s, int& out) { out = parse_integer<int>(s); }
inline void parse_value(const std::string& s, std::uint64_t& out) { out = parse_integer<std::uint64_t>(s); }
inline void parse_value(const std::string& s, bool& out) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "1") out = true;
  else if (t == "false" || t == "no" || t == "0") out = false;
  else throw ConfigError("expected true or false, got '" + t + "'");
}
inline void parse_value(const std::string& s, std::optional<std::uint64_t>& out) {
  out = parse_integer<std::uint64_t>(s);
}
inline void parse_value(const std::string& s, std::vector<double>& out) {
  out.clear();
  for (const auto& item : split(s, ',')) out.push_back(parse_number(item));
}
inline void parse_value(const std::string& s, std::vector<int>& out) {
  out.clear();
  for (const auto& item : split(s, ',')) out.push_back(parse_integer<int>(item));
}
inline void parse_value(const std::string& s, std::vector<std::string>& out) { out = split(s, ';'); }

inline std::optional<std::string> format_value(const std::string& v) { return v; }
inline std::optional<std::string> format_value(double v) { return format_number(v); }
inline std::optional<std::string> format_value(int v) { return std::to_string(v); }
inline std::optional<std::string> format_value(std::uint64_t v) { return std::to_string(v); }
inline std::optional<std::string> format_value(bool v) { return std::string(v ? "true" : "false"); }
inline std::optional<std::string> format_value(const std::optional<std::uint64_t>& v) {
  if (!v) return std::nullopt;
  return std::to_string(*v);
}
inline std::optional<std::string> format_value(const std::vector<double>& v) {
  std::vector<std::string> items;
  for (double d : v) items.push_back(format_number(d));
  return join(items, ", ");
}
inline std::optional<std::string> format_value(const std::vector<int>& v) {
  std::vector<std::string> items;
  for (int d : v) items.push_back(std::to_string(d));
  return join(items, ", ");
}
inline std::optional<std::string> format_value(const std::vector<std::string>& v) { return join(v, "; "); }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::optional<std::string>(const RunConfig&)> get;
};

template <class S, class T>
Field field(std::string key, S RunConfig::*section, T S::*member) {
  return {std::move(key), [=](RunConfig& c, const std::string& v) { parse_value(v, c.*section.*member); },
          [=](const RunConfig& c) { return format_value(c.*section.*member); }};
}

template <class T>
Field field(std::string key, T RunConfig::*member) {
  return {std::move(key), [=](RunConfig& c, const std::string& v) { parse_value(v, c.*member); },
          [=](const RunConfig& c) { return format_value(c.*member); }};
}

inline const std::vector<Field>& fields() {
  using R = RunConfig;
  static const std::vector<Field> all{
      field("tasks", &R::tasks),
      field("output", &R::output),
      field("model.name", &R::model, &ModelConfig::name),
      field("model.manifold", &R::model, &ModelConfig::manifold),
      field("model.dim", &R::model, &ModelConfig::dim),
      field("model.radius", &R::model, &ModelConfig::radius),
      field("model.margin", &R::model, &ModelConfig::margin),
      field("model.chart.lo", &R::model, &ModelConfig::chart_lo),
      field("model.chart.hi", &R::model, &ModelConfig::chart_hi),
      field("model.coords", &R::model, &ModelConfig::coords),
      field("model.metric", &R::model, &ModelConfig::metric),
      field("model.potential", &R::model, &ModelConfig::potential),
      field("model.region.lo", &R::model, &ModelConfig::region_lo),
      field("model.region.hi", &R::model, &ModelConfig::region_hi),
      field("model.region.points", &R::model, &ModelConfig::region_points),
      field("model.grid.points", &R::model, &ModelConfig::grid_points),
      field("twist.family", &R::twist, &TwistConfig::family),
      field("twist.exprs", &R::twist, &TwistConfig::exprs),
      field("twist.matrix", &R::twist, &TwistConfig::matrix),
      field("twist.param_names", &R::twist, &TwistConfig::param_names),
      field("twist.params", &R::twist, &TwistConfig::params),
      field("twist.coord", &R::twist, &TwistConfig::coord),
      field("twist.degree", &R::twist, &TwistConfig::degree),
      field("twist.mode", &R::twist, &TwistConfig::mode),
      field("twist.epsilon", &R::twist, &TwistConfig::epsilon),
      field("twist.restarts", &R::twist, &TwistConfig::restarts),
      field("simulation.t", &R::simulation, &SimulationConfig::t),
      field("simulation.h", &R::simulation, &SimulationConfig::h),
      field("simulation.n", &R::simulation, &SimulationConfig::n),
      field("simulation.seed", &R::simulation, &SimulationConfig::seed),
      field("simulation.x0", &R::simulation, &SimulationConfig::x0),
      field("simulation.f", &R::simulation, &SimulationConfig::f),
      field("simulation.paths", &R::simulation, &SimulationConfig::paths),
      field("simulation.delta", &R::simulation, &SimulationConfig::delta),
      field("verify.functions", &R::verify, &VerifyConfig::functions),
      field("verify.kinds", &R::verify, &VerifyConfig::kinds),
      field("verify.asymmetric", &R::verify, &VerifyConfig::asymmetric),
      field("verify.concentration", &R::verify, &VerifyConfig::concentration),
      field("verify.radii", &R::verify, &VerifyConfig::radii),
      field("verify.phi", &R::verify, &VerifyConfig::phi),
      field("verify.phi_times", &R::verify, &VerifyConfig::phi_times),
      field("verify.phi_n", &R::verify, &VerifyConfig::phi_n),
      field("verify.gronwall", &R::verify, &VerifyConfig::gronwall),
      field("verify.gronwall_n", &R::verify, &VerifyConfig::gronwall_n),
      field("verify.matrix_dim", &R::verify, &VerifyConfig::matrix_dim),
      field("verify.matrix_trials", &R::verify, &VerifyConfig::matrix_trials),
      field("verify.tolerance", &R::verify, &VerifyConfig::tolerance),
  };
  return all;
}

}  // namespace detail

/// Parsed configuration plus the line each key came from.
struct ParsedConfig {
  RunConfig config;
  std::map<std::string, int> lines;

  std::string where(const std::string& key) const {
    auto it = lines.find(key);
    return it == lines.end() ? key : "line " + std::to_string(it->second) + " (" + key + ")";
  }
};

inline ParsedConfig parse_config(const std::string& text) {
  ParsedConfig out;
  std::map<std::string, const detail::Field*> index;
  for (const auto& f : detail::fields()) index[f.key] = &f;
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string at = "line " + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(at + ": expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError(at + ": unknown key '" + key + "'");
    if (out.lines.count(key)) throw ConfigError(at + ": duplicate key '" + key + "'");
    out.lines[key] = number;
    try {
      it->second->set(out.config, t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(at + " (" + key + "): " + e.what());
    }
  }
  return out;
}

inline ParsedConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text of every set field; parses back to an equal RunConfig.
inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::fields())
    if (auto v = f.get(c)) out += f.key + " = " + *v + "\n";
  return out;
}

inline std::map<std::string, std::string> to_map(const RunConfig& c) {
  std::map<std::string, std::string> out;
  for (const auto& f : detail::fields())
    if (auto v = f.get(c)) out[f.key] = *v;
  return out;
}

/// Objects compiled from a validated configuration.
struct RunSetup {
  Model model;
  TwistSpec twist;
  BoundMode mode = BoundMode::Plain;
  Point x0;
  std::optional<Region> gap_grid;
  std::vector<std::string> functions;
  std::string f;
};

namespace detail {

inline Manifold build_manifold(const ModelConfig& m) {
  const auto& k = m.manifold;
  auto range = [&](const char* what) {
    if (m.chart_lo.size() != 1 || m.chart_hi.size() != 1)
      throw ConfigError(std::string(what) + " needs one value in model.chart.lo and model.chart.hi");
    return std::pair{m.chart_lo[0], m.chart_hi[0]};
  };
  if (k == "euclidean") return Manifold::euclidean(m.dim);
  if (k == "circle") return Manifold::circle(m.radius);
  if (k == "flat-torus") return Manifold::flat_torus(m.dim);
  if (k == "sphere2") return Manifold::sphere2(m.radius, m.margin);
  if (k == "hyperbolic-half-plane") {
    if (m.chart_lo.empty() && m.chart_hi.empty()) return Manifold::hyperbolic_half_plane();
    auto [a, b] = range("hyperbolic-half-plane");
    return Manifold::hyperbolic_half_plane(a, b);
  }
  if (k == "interval") {
    auto [a, b] = range("interval");
    return Manifold::interval(a, b);
  }
  if (k == "user-chart") {
    const auto n = m.coords.size();
    if (m.metric.size() != n * n) throw ConfigError("user chart metric needs dim^2 entries");
    if (m.chart_lo.size() != n || m.chart_hi.size() != n)
      throw ConfigError("user chart needs model.chart.lo and model.chart.hi per coordinate");
    std::vector<std::vector<std::string>> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i].assign(m.metric.begin() + static_cast<long>(i * n),
                                                       m.metric.begin() + static_cast<long>((i + 1) * n));
    return Manifold::user_chart(m.coords, rows, {m.chart_lo, m.chart_hi, std::vector<bool>(n, false)});
  }
  throw ConfigError("unknown manifold '" + k +
                    "' (expected euclidean, circle, flat-torus, sphere2, hyperbolic-half-plane, interval, user-chart)");
}

/// The configured region, defaulting to the chart domain when it is bounded.
inline Region build_region(const Manifold& man, const ModelConfig& m) {
  const auto n = static_cast<std::size_t>(man.dim());
  const auto& box = man.domain();
  Region r;
  r.lo = m.region_lo.empty() ? box.lo : m.region_lo;
  r.hi = m.region_hi.empty() ? box.hi : m.region_hi;
  if (m.region_points.empty()) r.points.assign(n, n == 1 ? 201 : 41);
  else if (m.region_points.size() == 1) r.points.assign(n, m.region_points[0]);
  else r.points = m.region_points;
  if (r.lo.size() != n || r.hi.size() != n || r.points.size() != n)
    throw ConfigError("region needs " + std::to_string(n) + " value(s) per bound");
  r.periodic.assign(n, false);
  for (std::size_t a = 0; a < n; ++a)
    r.periodic[a] = box.periodic[a] && r.lo[a] == box.lo[a] && r.hi[a] == box.hi[a];
  r.validate();
  return r;
}

inline TwistSpec build_twist(const Manifold& man, const TwistConfig& t) {
  TwistSpec s;
  if (t.family == "exp-poly") {
    s = TwistSpec::exp_poly(t.coord.empty() ? man.coordinate_names()[0][0] : t.coord, t.degree);
    if (!t.params.empty()) {
      if (t.params.size() != s.params.size()) throw ConfigError("exp-poly twist needs twist.params of length degree");
      s.params = t.params;
    }
    return s;
  }
  const TwistFamily family = twist_family_from_string(t.family);
  if (family == TwistFamily::ConstantMatrix) {
    const int n = man.dim();
    if (t.matrix.size() != static_cast<std::size_t>(n * n)) throw ConfigError("constant-matrix twist needs dim^2 entries");
    Mat q(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) q(i, j) = t.matrix[static_cast<std::size_t>(i * n + j)];
    return TwistSpec::constant(q);
  }
  s.family = family;
  s.exprs = t.exprs;
  s.param_names = t.param_names;
  s.params = t.params;
  return s;
}

}  // namespace detail

/// Compiles every model, twist and expression the run will use.
inline RunSetup validate(const ParsedConfig& parsed) {
  const RunConfig& c = parsed.config;
  auto fail = [&](const std::string& key, const std::string& why) -> ConfigError {
    return ConfigError(parsed.where(key) + ": " + why);
  };
  if (c.tasks.empty()) throw fail("tasks", "no tasks requested");
  for (const auto& t : c.tasks) {
    bool known = false;
    for (const auto& o : task_order()) known = known || o == t;
    if (!known) throw fail("tasks", "unknown task '" + t + "' (expected bound, gap, optimize, simulate, intertwine, verify)");
  }
  if (c.needs_seed() && !c.simulation.seed) throw fail("simulation.seed", "a seed is required for Monte-Carlo tasks");
  if (c.output.empty()) throw fail("output", "output directory is empty");

  RunSetup s;
  Manifold man = Manifold::euclidean(1);
  try {
    man = detail::build_manifold(c.model);
  } catch (const ConfigError& e) {
    throw fail("model.manifold", e.what());
  }
  Region region;
  try {
    region = detail::build_region(man, c.model);
  } catch (const ConfigError& e) {
    throw fail("model.region.lo", e.what());
  }
  try {
    s.model = Model::make(man, c.model.potential, region, c.model.name);
  } catch (const ConfigError& e) {
    throw fail("model.potential", e.what());
  }
  if (!c.model.grid_points.empty()) {
    Region g = region;
    if (c.model.grid_points.size() == 1) g.points.assign(region.points.size(), c.model.grid_points[0]);
    else g.points = c.model.grid_points;
    try {
      if (g.points.size() != region.points.size()) throw ConfigError("one grid size per axis expected");
      g.validate();
    } catch (const ConfigError& e) {
      throw fail("model.grid.points", e.what());
    }
    s.gap_grid = g;
  }
  try {
    s.twist = detail::build_twist(man, c.twist);
    (void)Twist(man, s.twist);
  } catch (const ConfigError& e) {
    throw fail("twist.family", e.what());
  }
  if (c.wants("optimize") && s.twist.param_names.empty())
    throw fail("twist.family", "optimize needs a twist family with free parameters");
  try {
    s.mode = bound_mode_from_string(c.twist.mode);
  } catch (const ConfigError& e) {
    throw fail("twist.mode", e.what());
  }
  if (!(c.twist.epsilon > 0.0)) throw fail("twist.epsilon", "epsilon must be positive");

  const auto& sim = c.simulation;
  if (!(sim.t > 0.0) || !(sim.h > 0.0) || sim.h > sim.t) throw fail("simulation.h", "need 0 < h <= t");
  if (sim.n == 0) throw fail("simulation.n", "at least one path is required");
  if (sim.x0.empty()) {
    s.x0 = Point(man.dim());
    for (int a = 0; a < man.dim(); ++a)
      s.x0(a) = 0.5 * (region.lo[static_cast<std::size_t>(a)] + region.hi[static_cast<std::size_t>(a)]);
  } else {
    if (static_cast<int>(sim.x0.size()) != man.dim()) throw fail("simulation.x0", "start point has the wrong dimension");
    s.x0 = Eigen::Map<const Eigen::VectorXd>(sim.x0.data(), man.dim());
  }
  if (!man.contains(s.x0)) throw fail("simulation.x0", "start point lies outside the chart domain");

  auto check_expr = [&](const std::string& key, const std::string& text) {
    try {
      s.model.field(text);
    } catch (const ConfigError& e) {
      throw fail(key, e.what());
    }
  };
  const auto builtins = builtin_test_functions(man);
  s.f = sim.f.empty() ? builtins.front() : sim.f;
  check_expr("simulation.f", s.f);
  s.functions = c.verify.functions.empty() ? builtins : c.verify.functions;
  for (const auto& f : s.functions) check_expr("verify.functions", f);
  for (const auto& k : c.verify.kinds) {
    try {
      inequality_kind_from_string(k);
    } catch (const ConfigError& e) {
      throw fail("verify.kinds", e.what());
    }
  }
  for (const auto& pair : c.verify.asymmetric) {
    const auto parts = detail::split(pair, '|');
    if (parts.size() != 2) throw fail("verify.asymmetric", "expected 'f | g', got '" + pair + "'");
    check_expr("verify.asymmetric", parts[0]);
    check_expr("verify.asymmetric", parts[1]);
  }
  if (!c.verify.concentration.empty()) check_expr("verify.concentration", c.verify.concentration);
  if (!c.verify.phi.empty()) check_expr("verify.phi", c.verify.phi);
  for (double t : c.verify.phi_times)
    if (!(t >= 0.0)) throw fail("verify.phi_times", "times must be non-negative");
  for (double r : c.verify.radii)
    if (!(r >= 0.0)) throw fail("verify.radii", "radii must be non-negative");
  if (c.verify.matrix_dim < 0) throw fail("verify.matrix_dim", "dimension must be non-negative");
  return s;
}

inline RunSetup validate(const RunConfig& c) { return validate(ParsedConfig{c, {}}); }

}  // namespace intertwine

#pragma once

#include <Eigen/Core>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "pathsim.hpp"
#include "semigroup.hpp"
#include "spectral.hpp"
#include "twist.hpp"
#include "verify.hpp"

namespace intertwine {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

/// Exit codes: 0 clean, 1 verification failure or gate violation, 2 invalid
/// configuration, 3 task errors without any failure.
inline constexpr int kExitClean = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitTaskError = 3;

struct RunReport {
  Json json;                                  // report.json; "timing" holds the only non-deterministic values
  std::map<std::string, std::string> tables;  // CSV file name → contents
  int failures = 0;
  int gate_violations = 0;
  int task_errors = 0;

  int exit_code() const {
    if (failures > 0 || gate_violations > 0) return kExitFailure;
    return task_errors > 0 ? kExitTaskError : kExitClean;
  }
};

namespace detail {

inline Json point_json(const Point& x) {
  Json a = Json::array();
  for (int i = 0; i < x.size(); ++i) a.push_back(x(i));
  return a;
}

inline Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json estimate_json(const MCEstimate& e) {
  return {{"value", e.value}, {"std_error", e.std_error}, {"n_paths", e.n_paths}, {"exit_fraction", e.exit_fraction},
          {"seed", e.seed},   {"t", e.t},                 {"h", e.h}};
}

inline Json inequality_json(const InequalityReport& r) {
  return {{"name", r.name},
          {"lhs", r.lhs},
          {"rhs", r.rhs},
          {"slack", r.slack},
          {"tolerance", r.tolerance},
          {"pass", r.pass},
          {"status", to_string(r.status)},
          {"method", to_string(r.method)},
          {"truncated", r.truncated},
          {"message", r.message}};
}

inline std::string csv_header(const Manifold& m) {
  std::string h;
  for (const auto& names : m.coordinate_names()) h += names.front() + ",";
  return h;
}

inline void csv_point(std::ostringstream& os, const Point& x) {
  for (int i = 0; i < x.size(); ++i) os << x(i) << ',';
}

/// Mutable state shared by the tasks of one run.
struct RunState {
  const RunConfig& config;
  RunSetup setup;
  RunReport report;
  std::optional<double> bound;
  std::optional<double> lambda1;

  Twist twist() const { return Twist(setup.model.manifold, setup.twist); }
  std::uint64_t seed() const { return config.simulation.seed.value_or(0); }

  void count(const InequalityReport& r) {
    if (r.status == CheckStatus::Fail) ++report.failures;
    if (r.status == CheckStatus::HypothesisViolation) ++report.gate_violations;
  }
};

inline Json task_bound(RunState& st) {
  const Model& model = st.setup.model;
  const Twist twist = st.twist();
  const BoundMode mode = st.setup.mode;
  Json j;
  const auto rho = rho_inf(model);
  j["rho"] = rho.value;
  j["rho_minimizer"] = point_json(rho.minimizer);
  j["mode"] = to_string(mode);
  j["twist_family"] = to_string(twist.family());
  const GateResult gate = hypothesis_gate(model, twist, mode, st.config.twist.epsilon);
  j["gate"] = {{"ok", gate.ok},
               {"defect_norm", gate.defect_norm},
               {"asymmetry", gate.asymmetry},
               {"tilde_floor", gate.tilde_floor},
               {"epsilon", gate.epsilon},
               {"message", gate.message}};
  if (!gate.ok) {
    ++st.report.gate_violations;
    j["status"] = "gate-violation";
    return j;
  }
  const BoundReport br = bound_scan(model, twist, mode);
  st.bound = br.bound();
  j["rho_B"] = br.rho_B;
  j["rho_tilde_B"] = br.rho_tilde_B;
  j["bound"] = br.bound();
  j["rho_B_minimizer"] = point_json(br.rho_B_minimizer);
  j["rho_tilde_B_minimizer"] = point_json(br.rho_tilde_B_minimizer);
  j["caveat"] = br.caveat;

  std::ostringstream os;
  os.precision(17);
  os << csv_header(model.manifold) << "rho,rho_B,rho_tilde_B\n";
  const Region& region = model.region;
  for (std::size_t i = 0; i < region.size(); ++i) {
    const Point x = region.point(i);
    const TwistEval ev = twist_eval(model, twist, x);
    csv_point(os, x);
    os << min_sym_eigenvalue(ev.bakry_emery) << ',' << plain_integrand(ev) << ',' << tilde_integrand(ev) << '\n';
  }
  st.report.tables["bounds.csv"] = os.str();
  j["status"] = "ok";
  return j;
}

inline Json task_gap(RunState& st) {
  const Model& model = st.setup.model;
  const Region grid = st.setup.gap_grid ? *st.setup.gap_grid : default_gap_grid(model.region);
  const GapReport g = gap_with_refinement(model, grid);
  st.lambda1 = g.result.lambda1;
  Json j;
  j["lambda1"] = g.result.lambda1;
  j["lambda1_refined"] = g.lambda1_refined;
  j["relative_change"] = g.relative_change;
  j["under_resolved"] = g.under_resolved;
  j["method"] = g.result.method;
  j["unknowns"] = g.result.unknowns;
  j["residual_norm"] = g.result.residual_norm;
  j["grid_points"] = grid.points;
  j["status"] = "ok";
  if (st.bound) {
    const bool sound = *st.bound <= g.result.lambda1 + kSoundnessSlack;
    j["bound"] = *st.bound;
    j["gap_ratio"] = *st.bound / g.result.lambda1;
    j["sound"] = sound;
    if (!sound) {
      ++st.report.failures;
      j["status"] = "fail";
    }
  }
  std::ostringstream os;
  os.precision(17);
  os << csv_header(model.manifold) << "mass,eigenfunction\n";
  const GridMeasure mu = grid_measure(model, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    csv_point(os, grid.point(i));
    os << mu.mass[i] << ',' << g.result.eigvec(static_cast<Eigen::Index>(i)) << '\n';
  }
  st.report.tables["spectrum.csv"] = os.str();
  return j;
}

inline Json task_optimize(RunState& st) {
  OptimizeOptions opt;
  opt.restarts = st.config.twist.restarts;
  opt.seed = st.seed();
  opt.gap_grid = st.setup.gap_grid;
  const OptimizeResult r = optimize_twist(st.setup.model, st.setup.twist, st.setup.mode, opt);
  st.setup.twist.params = r.params;
  st.bound = r.bound;
  Json j;
  j["mode"] = to_string(r.mode);
  j["param_names"] = r.param_names;
  j["params"] = r.params;
  j["bound"] = r.bound;
  j["identity_bound"] = r.identity_bound;
  if (r.lambda1) j["lambda1"] = *r.lambda1;
  j["sound"] = r.sound;
  j["evaluations"] = r.evaluations;
  j["message"] = r.message;
  j["status"] = r.sound ? "ok" : "fail";
  if (!r.sound) ++st.report.failures;
  return j;
}

inline Json task_simulate(RunState& st) {
  const Model& model = st.setup.model;
  const auto& sim = st.config.simulation;
  const Twist twist = st.twist();
  const bool twisted = twist.family() != TwistFamily::Identity;
  const TransportMode mode = twisted ? TransportMode::TwistedDeformed : TransportMode::Deformed;
  std::vector<PathSample> paths;
  std::vector<TransportResult> maps;
  double exited = 0.0, final_norm = 0.0;
  for (std::uint64_t p = 0; p < sim.paths; ++p) {
    paths.push_back(simulate_path(model, st.setup.x0, sim.t, sim.h, st.seed(), p));
    maps.push_back(transport(model, paths.back(), mode, twisted ? &twist : nullptr));
    if (paths.back().exited) exited += 1.0;
    else final_norm += operator_norm(maps.back().maps.back());
  }
  std::ostringstream os;
  write_paths_csv(os, model.manifold, paths, maps);
  st.report.tables["paths.csv"] = os.str();

  const ScalarField f = model.field(st.setup.f);
  Json j;
  j["x0"] = point_json(st.setup.x0);
  j["transport"] = to_string(mode);
  j["paths"] = sim.paths;
  j["exited_paths"] = exited;
  const double alive = static_cast<double>(sim.paths) - exited;
  if (alive > 0) j["mean_final_norm"] = final_norm / alive;
  j["f"] = st.setup.f;
  j["P_t_f"] = estimate_json(estimate_P(model, f, st.setup.x0, sim.t, sim.h, sim.n, st.seed()));
  j["status"] = "ok";
  return j;
}

inline Json task_intertwine(RunState& st) {
  const auto& sim = st.config.simulation;
  const Model& model = st.setup.model;
  Json j;
  j["x0"] = point_json(st.setup.x0);
  j["f"] = st.setup.f;
  try {
    const auto r = intertwining_residual(model, st.twist(), st.setup.mode, model.field(st.setup.f), st.setup.x0, sim.t,
                                         sim.h, sim.n, st.seed(), sim.delta, st.config.twist.epsilon);
    j["lhs"] = vector_json(r.lhs);
    j["rhs"] = vector_json(r.rhs);
    j["residual"] = vector_json(r.residual);
    j["std_error"] = vector_json(r.std_error);
    j["tolerance"] = vector_json(r.tolerance);
    j["pass"] = r.pass;
    j["exit_fraction"] = r.exit_fraction;
    j["n_paths"] = r.n_paths;
    j["seed"] = r.seed;
    j["t"] = r.t;
    j["h"] = r.h;
    j["delta"] = r.delta;
    j["status"] = r.pass ? "ok" : "fail";
    if (!r.pass) ++st.report.failures;
  } catch (const ModeError& e) {
    ++st.report.gate_violations;
    j["status"] = "gate-violation";
    j["message"] = e.what();
  } catch (const PreconditionError& e) {
    ++st.report.gate_violations;
    j["status"] = "gate-violation";
    j["message"] = e.what();
  }
  return j;
}

inline Json task_verify(RunState& st) {
  const auto& vc = st.config.verify;
  const auto& sim = st.config.simulation;
  const Model& model = st.setup.model;
  const Twist twist = st.twist();
  const BoundMode mode = st.setup.mode;
  VerifyOptions vo;
  vo.tolerance = vc.tolerance;
  vo.epsilon = st.config.twist.epsilon;

  std::vector<InequalityReport> reports;
  Json errors = Json::array();
  auto guarded = [&](const std::string& what, auto&& body) {
    try {
      body();
    } catch (const PreconditionError& e) {
      reports.push_back(InequalityReport::violation(what, CheckMethod::Quadrature, e.what()));
    } catch (const Error& e) {
      errors.push_back({{"check", what}, {"error", e.what()}});
    }
  };

  for (const auto& k : vc.kinds) {
    const InequalityKind kind = inequality_kind_from_string(k);
    for (const auto& f : st.setup.functions)
      guarded(k, [&] {
        auto r = check_variance_inequality(model, twist, model.field(f), kind, mode, vo);
        r.name += "[" + f + "]";
        reports.push_back(r);
      });
  }
  for (const auto& pair : vc.asymmetric) {
    const auto parts = split(pair, '|');
    guarded("asymmetric-brascamp-lieb", [&] {
      auto r = check_asymmetric_bl(model, model.field(parts[0]), model.field(parts[1]), vo);
      r.name += "[" + parts[0] + " | " + parts[1] + "]";
      reports.push_back(r);
    });
  }
  if (!vc.concentration.empty())
    guarded("concentration", [&] {
      for (auto& r : check_concentration(model, model.field(vc.concentration), vc.radii, vo)) reports.push_back(r);
    });
  Json phi_json;
  if (!vc.phi.empty())
    guarded("phi-decay", [&] {
      PhiOptions po;
      po.epsilon = vo.epsilon;
      const auto res = check_phi_decay(model, twist, mode, model.field(vc.phi), vc.phi_times, sim.h,
                                       static_cast<std::size_t>(vc.phi_n), st.seed(), po);
      for (const auto& r : res.reports) reports.push_back(r);
      phi_json = {{"bound", res.bound}, {"phi0", res.phi0}};
      std::ostringstream os;
      os.precision(17);
      os << "t,phi,std_error,bias,envelope\n";
      for (const auto& p : res.points) os << p.t << ',' << p.phi << ',' << p.std_error << ',' << p.bias << ',' << p.envelope << '\n';
      if (!res.points.empty()) st.report.tables["phi.csv"] = os.str();
    });
  if (vc.gronwall)
    guarded("gronwall", [&] {
      reports.push_back(check_gronwall(model, st.setup.x0, sim.t, sim.h, static_cast<std::size_t>(vc.gronwall_n), st.seed()));
    });
  if (vc.matrix_dim > 0)
    guarded("matrix-lemma", [&] {
      reports.push_back(check_matrix_lemma(vc.matrix_dim, static_cast<int>(vc.matrix_trials), st.seed()));
    });

  Json j;
  j["mode"] = to_string(mode);
  Json items = Json::array();
  int fails = 0, violations = 0;
  for (const auto& r : reports) {
    items.push_back(inequality_json(r));
    st.count(r);
    fails += r.status == CheckStatus::Fail;
    violations += r.status == CheckStatus::HypothesisViolation;
  }
  j["reports"] = items;
  if (!phi_json.is_null()) j["phi"] = phi_json;
  if (!errors.empty()) {
    j["errors"] = errors;
    st.report.task_errors += static_cast<int>(errors.size());
  }
  j["status"] = violations ? "gate-violation" : fails ? "fail" : errors.empty() ? "ok" : "error";
  return j;
}

}  // namespace detail

/// Runs the requested tasks in the fixed order bound, gap, optimize,
/// simulate, intertwine, verify. A task that throws is recorded and the run
/// continues.
inline RunReport run(const RunConfig& config, const RunSetup& setup) {
  detail::RunState st{config, setup, {}, {}, {}};
  Json& out = st.report.json;
  out["tool"] = "intertwine";
  out["version"] = kVersion;
  out["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
  out["config"] = to_map(config);
  out["model"] = {{"manifold", setup.model.manifold.name()},
                  {"potential", setup.model.potential.source()},
                  {"region_lo", setup.model.region.lo},
                  {"region_hi", setup.model.region.hi},
                  {"region_points", setup.model.region.points}};
  Json tasks = Json::object();
  Json timing = Json::object();
  for (const auto& name : task_order()) {
    if (!config.wants(name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Json j;
    try {
      if (name == "bound") j = detail::task_bound(st);
      else if (name == "gap") j = detail::task_gap(st);
      else if (name == "optimize") j = detail::task_optimize(st);
      else if (name == "simulate") j = detail::task_simulate(st);
      else if (name == "intertwine") j = detail::task_intertwine(st);
      else j = detail::task_verify(st);
    } catch (const ModeError& e) {
      ++st.report.gate_violations;
      j = {{"status", "gate-violation"}, {"message", e.what()}};
    } catch (const std::exception& e) {
      ++st.report.task_errors;
      j = {{"status", "error"}, {"error", e.what()}};
    }
    tasks[name] = j;
    timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  out["tasks"] = tasks;
  out["summary"] = {{"failures", st.report.failures},
                    {"gate_violations", st.report.gate_violations},
                    {"task_errors", st.report.task_errors},
                    {"exit_code", st.report.exit_code()}};
  out["timing"] = timing;
  return st.report;
}

inline RunReport run(const RunConfig& config) { return run(config, validate(config)); }

/// Writes report.json and the CSV tables into `dir`.
inline void write_outputs(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream os(dir / name);
    if (!os) throw ConfigError("cannot write " + (dir / name).string());
    os << text;
  };
  write("report.json", report.json.dump(2) + "\n");
  for (const auto& [name, text] : report.tables) write(name, text);
}

}  // namespace intertwine

#pragma once

// Checks of the functional inequalities against quadrature, Monte-Carlo and
// matrix oracles.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "pathsim.hpp"
#include "semigroup.hpp"
#include "spectral.hpp"
#include "twist.hpp"

namespace intertwine {

enum class CheckMethod { Quadrature, MonteCarlo, Matrix };
enum class CheckStatus { Pass, Fail, HypothesisViolation };

inline const char* to_string(CheckMethod m) {
  switch (m) {
    case CheckMethod::Quadrature: return "quadrature";
    case CheckMethod::MonteCarlo: return "monte-carlo";
    case CheckMethod::Matrix: return "matrix";
  }
  return "?";
}

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Fail: return "fail";
    case CheckStatus::HypothesisViolation: return "hypothesis-violation";
  }
  return "?";
}

/// lhs ≤ rhs + tolerance. A hypothesis violation is neither pass nor fail;
/// `pass` is false for it.
struct InequalityReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  CheckMethod method = CheckMethod::Quadrature;
  CheckStatus status = CheckStatus::Fail;
  bool truncated = false;  // quadrature boundary mass above 1e−4
  std::string message;

  void settle() {
    slack = rhs - lhs;
    pass = std::isfinite(lhs) && std::isfinite(rhs) && lhs <= rhs + tolerance;
    status = pass ? CheckStatus::Pass : CheckStatus::Fail;
  }

  static InequalityReport violation(std::string name, CheckMethod method, std::string why) {
    InequalityReport r;
    r.name = std::move(name);
    r.method = method;
    r.lhs = r.rhs = r.slack = std::numeric_limits<double>::quiet_NaN();
    r.status = CheckStatus::HypothesisViolation;
    r.message = std::move(why);
    return r;
  }
};

enum class InequalityKind { Poincare, BrascampLieb };

inline const char* to_string(InequalityKind k) { return k == InequalityKind::Poincare ? "poincare" : "brascamp-lieb"; }

inline InequalityKind inequality_kind_from_string(const std::string& s) {
  if (s == "poincare") return InequalityKind::Poincare;
  if (s == "brascamp-lieb" || s == "bl") return InequalityKind::BrascampLieb;
  throw ConfigError("unknown inequality kind '" + s + "'");
}

struct VerifyOptions {
  std::optional<Region> grid;  // quadrature grid, default the model region
  double tolerance = 1e-6;
  double epsilon = 0.1;        // tilde-gate ε
};

namespace detail {

inline std::string point_text(const Point& x) {
  std::ostringstream os;
  os << "(";
  for (int i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
  os << ")";
  return os.str();
}

struct Moments2 {
  double mean_f = 0.0, mean_g = 0.0, cov = 0.0, var_f = 0.0;
  bool truncated = false;
};

inline Moments2 moments(const MuQuadrature& q, const ScalarField& f, const ScalarField& g) {
  const double mf = integrate_mu(q, [&](const Point& x) { return f(x.data()); }).value;
  const double mg = integrate_mu(q, [&](const Point& x) { return g(x.data()); }).value;
  Moments2 m;
  m.mean_f = mf;
  m.mean_g = mg;
  m.cov = integrate_mu(q, [&](const Point& x) { return (f(x.data()) - mf) * (g(x.data()) - mg); }).value;
  m.var_f = integrate_mu(q, [&](const Point& x) { return (f(x.data()) - mf) * (f(x.data()) - mf); }).value;
  m.truncated = q.truncated;
  return m;
}

}  // namespace detail

/// Poincaré (Var f ≤ ρ⁻¹ ∫|df|²) or Brascamp–Lieb (Var f ≤ ∫⟨df, S⁻¹df⟩),
/// with S = B*M_B(B*)⁻¹ (plain) or (S)^s − N_B (tilde) and ρ its bound.
inline InequalityReport check_variance_inequality(const Model& model, const Twist& twist, const ScalarField& f,
                                                  InequalityKind kind, BoundMode mode,
                                                  const VerifyOptions& opt = {}) {
  const std::string name = std::string(to_string(kind)) + "-" + to_string(mode);
  GateResult gate;
  try {
    gate = hypothesis_gate(model, twist, mode, opt.epsilon);
  } catch (const TwistSingularError& e) {
    return InequalityReport::violation(name, CheckMethod::Quadrature, e.what());
  }
  if (!gate.ok) return InequalityReport::violation(name, CheckMethod::Quadrature, gate.message);
  const MuQuadrature q = mu_quadrature(model, opt.grid ? *opt.grid : model.region);
  const auto mo = detail::moments(q, f, f);
  InequalityReport r;
  r.name = name;
  r.method = CheckMethod::Quadrature;
  r.lhs = mo.var_f;
  r.tolerance = opt.tolerance;
  r.truncated = q.truncated;
  if (kind == InequalityKind::Poincare) {
    const double rho = bound_scan(model, twist, mode).bound();
    if (!(rho > 0.0)) {
      std::ostringstream os;
      os << "certified bound " << rho << " is not positive";
      return InequalityReport::violation(name, CheckMethod::Quadrature, os.str());
    }
    r.rhs = integrate_mu(q, [&](const Point& x) { return frame_differential(model, f, x).squaredNorm(); }).value / rho;
  } else {
    std::optional<Point> witness;
    double min_eig = 0.0;
    r.rhs = integrate_mu(q, [&](const Point& x) {
              if (witness) return 0.0;
              const TwistEval ev = twist_eval(model, twist, x);
              const Mat s = mode == BoundMode::Plain ? Mat(sym_part(ev.similar)) : Mat(sym_part(ev.similar) - ev.penalty);
              const double e = min_sym_eigenvalue(s);
              if (!(e > 0.0)) {
                witness = x;
                min_eig = e;
                return 0.0;
              }
              const Vec df = frame_differential(model, f, x);
              return df.dot(s.llt().solve(df));
            }).value;
    if (witness) {
      std::ostringstream os;
      os << "operator is not positive definite at " << detail::point_text(*witness) << " (smallest eigenvalue "
         << min_eig << ")";
      return InequalityReport::violation(name, CheckMethod::Quadrature, os.str());
    }
  }
  r.settle();
  if (r.truncated) r.message = "quadrature region truncates the measure";
  return r;
}

/// |Cov(f, g)| ≤ ρ⁻¹ ‖dg‖∞ ∫|df| dμ.
inline InequalityReport check_asymmetric_bl(const Model& model, const ScalarField& f, const ScalarField& g,
                                            const VerifyOptions& opt = {}) {
  const std::string name = "asymmetric-brascamp-lieb";
  const double rho = rho_inf(model).value;
  if (!(rho > 0.0)) {
    std::ostringstream os;
    os << "rho = " << rho << " is not positive";
    return InequalityReport::violation(name, CheckMethod::Quadrature, os.str());
  }
  const MuQuadrature q = mu_quadrature(model, opt.grid ? *opt.grid : model.region);
  const auto mo = detail::moments(q, f, g);
  double sup_dg = 0.0;
  for (const auto& x : q.nodes) sup_dg = std::max(sup_dg, frame_differential(model, g, x).norm());
  const double l1 = integrate_mu(q, [&](const Point& x) { return frame_differential(model, f, x).norm(); }).value;
  InequalityReport r;
  r.name = name;
  r.method = CheckMethod::Quadrature;
  r.lhs = std::abs(mo.cov);
  r.rhs = sup_dg * l1 / rho;
  r.tolerance = opt.tolerance;
  r.truncated = q.truncated;
  r.settle();
  if (r.truncated) r.message = "quadrature region truncates the measure";
  return r;
}

inline constexpr double kLipschitzSlack = 1e-8;

namespace detail {

/// Share of the dual cell of grid node `flat` where `pred` holds, by a
/// midpoint rule with k points per axis.
template <class Pred>
double cell_fraction(const Region& grid, std::size_t flat, Pred&& pred) {
  const int d = grid.dim();
  const int k = d == 1 ? 32 : d == 2 ? 8 : 4;
  const auto idx = grid_index(grid, flat);
  const Point x = grid.point(flat);
  Vec lo(d), width(d);
  for (int a = 0; a < d; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    const double h = grid.spacing(a);
    double l = x(a) - 0.5 * h, u = x(a) + 0.5 * h;
    if (!grid.periodic[ua] && idx[ua] == 0) l = x(a);
    if (!grid.periodic[ua] && idx[ua] == grid.points[ua] - 1) u = x(a);
    lo(a) = l;
    width(a) = u - l;
  }
  int total = 1;
  for (int a = 0; a < d; ++a) total *= k;
  int hits = 0;
  Point y(d);
  for (int s = 0; s < total; ++s) {
    int rest = s;
    for (int a = 0; a < d; ++a) {
      y(a) = lo(a) + (rest % k + 0.5) / k * width(a);
      rest /= k;
    }
    hits += pred(y) ? 1 : 0;
  }
  return static_cast<double>(hits) / total;
}

}  // namespace detail

/// μ(|f − μf| > r) ≤ 2 exp(−ρ r²/2) for each r; f must be 1-Lipschitz.
inline std::vector<InequalityReport> check_concentration(const Model& model, const ScalarField& f,
                                                         const std::vector<double>& radii,
                                                         const VerifyOptions& opt = {}) {
  const double rho = rho_inf(model).value;
  std::vector<InequalityReport> out;
  auto name = [](double r) {
    std::ostringstream os;
    os << "concentration[r=" << r << "]";
    return os.str();
  };
  if (!(rho > 0.0)) {
    std::ostringstream os;
    os << "rho = " << rho << " is not positive";
    for (double r : radii) out.push_back(InequalityReport::violation(name(r), CheckMethod::Quadrature, os.str()));
    return out;
  }
  const Region& grid = opt.grid ? *opt.grid : model.region;
  const MuQuadrature q = mu_quadrature(model, grid);
  for (const auto& x : q.nodes) {
    const double lip = frame_differential(model, f, x).norm();
    if (lip > 1.0 + kLipschitzSlack) {
      std::ostringstream os;
      os << "function is not 1-Lipschitz: |df| = " << lip << " at " << detail::point_text(x);
      throw PreconditionError(os.str());
    }
  }
  const double mean = integrate_mu(q, [&](const Point& x) { return f(x.data()); }).value;
  for (double r : radii) {
    if (!(r >= 0.0)) throw ConfigError("concentration radius must be non-negative");
    InequalityReport rep;
    rep.name = name(r);
    rep.method = CheckMethod::Quadrature;
    // Each node carries the sub-sampled tail share of its cell.
    rep.lhs = 0.0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i)
      rep.lhs += q.weights[i] *
                 detail::cell_fraction(grid, i, [&](const Point& y) { return std::abs(f(y.data()) - mean) > r; });
    rep.rhs = 2.0 * std::exp(-rho * r * r / 2.0);
    rep.tolerance = opt.tolerance;
    rep.truncated = q.truncated;
    rep.settle();
    out.push_back(rep);
  }
  return out;
}

struct PhiOptions {
  std::optional<Region> grid;  // coarse x-grid, default the model region with ≤ 21 nodes per axis
  double epsilon = 0.1;
  double bias_allowance = 0.05;  // relative to the right side
};

struct PhiPoint {
  double t = 0.0;
  double phi = 0.0;
  double std_error = 0.0;
  double bias = 0.0;  // Σ w |B* se|², the bias of the squared mean
  double envelope = 0.0;
};

struct PhiDecayResult {
  double bound = 0.0;  // ρ_B or ρ̃_B
  double phi0 = 0.0;
  std::vector<PhiPoint> points;
  std::vector<InequalityReport> reports;
};

inline Region coarse_grid(const Region& region, int max_points) {
  Region g = region;
  for (auto& p : g.points) p = std::min(p, max_points);
  return g;
}

/// φ(t) = ∫ |Q_t^B((B*)⁻¹ df)|²_B dμ against e^{−2ρ t} φ(0), with φ(0) = ∫|df|² dμ.
inline PhiDecayResult check_phi_decay(const Model& model, const Twist& twist, BoundMode mode, const ScalarField& f,
                                      const std::vector<double>& times, double h, std::size_t n,
                                      std::uint64_t seed, const PhiOptions& opt = {}) {
  PhiDecayResult res;
  auto name = [](double t) {
    std::ostringstream os;
    os << "phi-decay[t=" << t << "]";
    return os.str();
  };
  GateResult gate;
  try {
    gate = hypothesis_gate(model, twist, mode, opt.epsilon);
  } catch (const TwistSingularError& e) {
    gate.ok = false;
    gate.message = e.what();
  }
  if (!gate.ok) {
    for (double t : times) res.reports.push_back(InequalityReport::violation(name(t), CheckMethod::MonteCarlo, gate.message));
    return res;
  }
  res.bound = bound_scan(model, twist, mode).bound();
  const auto& m = model.manifold;
  const Region grid = opt.grid ? *opt.grid : coarse_grid(model.region, 21);
  const MuQuadrature q = mu_quadrature(model, grid);
  res.phi0 = integrate_mu(q, [&](const Point& x) { return frame_differential(model, f, x).squaredNorm(); }).value;
  const FrameForm alpha = [&](const Point& y) -> Vec {
    return twist_frame_B(m, twist, y).inverse() * frame_differential(model, f, y);
  };
  const std::size_t k = times.size();
  std::vector<double> phi(k, 0.0), var(k, 0.0), bias(k, 0.0);
  for (std::size_t i = 0; i < q.nodes.size(); ++i) {
    const Point& x = q.nodes[i];
    const double w = q.weights[i];
    const Mat bstar = twist_frame_B(m, twist, x).transpose();
    const auto est = estimate_Q_components(model, &twist, alpha, x, times, h, n, seed + i);
    for (std::size_t j = 0; j < k; ++j) {
      const Vec v = bstar * est[j].value;
      const Mat cov = bstar * est[j].std_error.array().square().matrix().asDiagonal() * bstar.transpose();
      phi[j] += w * v.squaredNorm();
      var[j] += w * w * 4.0 * v.dot(cov * v);
      bias[j] += w * cov.trace();
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    PhiPoint p;
    p.t = times[j];
    p.phi = phi[j];
    p.std_error = std::sqrt(var[j]);
    p.bias = bias[j];
    p.envelope = std::exp(-2.0 * res.bound * times[j]) * res.phi0;
    res.points.push_back(p);
    InequalityReport r;
    r.name = name(times[j]);
    r.method = CheckMethod::MonteCarlo;
    r.lhs = p.phi;
    r.rhs = p.envelope;
    r.tolerance = 3.0 * p.std_error + opt.bias_allowance * p.envelope;
    r.truncated = q.truncated;
    r.settle();
    std::ostringstream os;
    os << "bias estimate " << p.bias;
    r.message = os.str();
    res.reports.push_back(r);
  }
  return res;
}

/// D⁻¹ − (C + D)⁻¹ ⪰ 0 for random PSD C and PD D; reports 0 ≤ min eigenvalue.
inline InequalityReport check_matrix_lemma(int dim, int trials, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("matrix lemma needs dim >= 1");
  if (trials < 1) throw ConfigError("matrix lemma needs at least one trial");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::uniform_int_distribution<int> rank(0, dim);
  using Dense = Eigen::MatrixXd;
  auto random = [&](int rows) {
    Dense a(rows, dim);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < dim; ++j) a(i, j) = gauss(rng);
    return a;
  };
  double worst = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < trials; ++trial) {
    const Dense a = random(trial == 0 ? 0 : rank(rng));
    const Dense b = random(dim);
    const Dense c = a.transpose() * a;
    const Dense d = b.transpose() * b + 0.1 * Dense::Identity(dim, dim);
    const Dense diff = d.inverse() - (c + d).inverse();
    Eigen::SelfAdjointEigenSolver<Dense> es(0.5 * (diff + diff.transpose()), Eigen::EigenvaluesOnly);
    worst = std::min(worst, es.eigenvalues()(0));
  }
  InequalityReport r;
  r.name = "matrix-lemma";
  r.method = CheckMethod::Matrix;
  r.lhs = 0.0;
  r.rhs = worst;
  r.tolerance = 1e-10;
  r.settle();
  return r;
}

/// max over paths and steps of ‖W_{t_k}‖ e^{ρ t_k} ≤ 1 + 10 h t.
inline InequalityReport check_gronwall(const Model& model, const Point& x, double t, double h, std::size_t n,
                                       std::uint64_t seed) {
  if (n < 1) throw ConfigError("Gronwall check needs at least one path");
  const double rho = rho_inf(model).value;
  const std::size_t blocks = (n + detail::kChunk - 1) / detail::kChunk;
  std::vector<double> worst(blocks, 0.0);
  std::vector<std::size_t> exits(blocks, 0);
  const int steps = step_count(t, h);
  const double he = t / steps;
  parallel_for_blocks(blocks, [&](std::size_t b) {
    const std::size_t hi = std::min(n, (b + 1) * detail::kChunk);
    for (std::size_t p = b * detail::kChunk; p < hi; ++p) {
      const NormalStream stream(seed, p);
      TransportStepper stepper(model, true);
      bool exited = false;
      euler_maruyama(model, x, steps, he, &stream, exited, [&](const Step& st) {
        stepper.step(*st.x, *st.y, he);
        const double tk = he * (st.k + 1);
        worst[b] = std::max(worst[b], operator_norm(stepper.map()) * std::exp(rho * tk));
      });
      if (exited) ++exits[b];
    }
  });
  InequalityReport r;
  r.name = "gronwall";
  r.method = CheckMethod::MonteCarlo;
  r.lhs = std::max(1.0, *std::max_element(worst.begin(), worst.end()));
  r.rhs = 1.0;
  r.tolerance = 10.0 * he * t;
  r.settle();
  std::size_t exited = 0;
  for (auto e : exits) exited += e;
  std::ostringstream os;
  os << "rho = " << rho << ", exited paths " << exited;
  r.message = os.str();
  return r;
}

/// Ten smooth test functions in the manifold's coordinates, none an equality
/// case of the Gaussian inequalities.
inline std::vector<std::string> builtin_test_functions(const Manifold& m) {
  const auto& names = m.coordinate_names();
  const std::string a = names[0][0];
  if (m.dim() == 1)
    return {"sin(" + a + ")",        a + "^2",
            "cos(2*" + a + ")",      "tanh(" + a + ")",
            "exp(-" + a + "^2/2)",   a + "^3 - " + a,
            "1/(1 + " + a + "^2)",   "sin(" + a + ")*" + a,
            "exp(0.3*" + a + ")",    "cosh(0.5*" + a + ")"};
  const std::string b = names[1][0];
  return {"sin(" + a + ")",
          "cos(" + b + ")",
          a + "*" + b,
          a + "^2 + " + b,
          "exp(-" + a + "^2/2)*" + b,
          "tanh(" + a + " + " + b + ")",
          "sin(" + a + ")*cos(" + b + ")",
          a + "^3 - " + b,
          "exp(0.3*" + a + ")",
          "1/(1 + " + a + "^2 + " + b + "^2)"};
}

}  // namespace intertwine

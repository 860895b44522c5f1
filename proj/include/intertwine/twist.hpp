#pragma once

// Pointwise twist calculus. A twist is a field of invertible maps; we store
// the form-side map B* by its coordinate matrix T(x), (B*α)_i = T_ij α_j,
// and convert to orthonormal-frame components B̂* = Eᵀ T E⁻ᵀ. In frame
// components metric adjoints are transposes, so B̂ = (B̂*)ᵀ.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "expr.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "model.hpp"

namespace intertwine {

enum class TwistFamily { Identity, Scalar, ConstantMatrix, Diagonal, Shear, UserMatrix };

inline const char* to_string(TwistFamily f) {
  switch (f) {
    case TwistFamily::Identity: return "identity";
    case TwistFamily::Scalar: return "scalar";
    case TwistFamily::ConstantMatrix: return "constant-matrix";
    case TwistFamily::Diagonal: return "diagonal";
    case TwistFamily::Shear: return "shear";
    case TwistFamily::UserMatrix: return "user-matrix";
  }
  return "?";
}

inline TwistFamily twist_family_from_string(const std::string& s) {
  for (auto f : {TwistFamily::Identity, TwistFamily::Scalar, TwistFamily::ConstantMatrix,
                 TwistFamily::Diagonal, TwistFamily::Shear, TwistFamily::UserMatrix})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown twist family '" + s +
                    "' (expected identity, scalar, constant-matrix, diagonal, shear, user-matrix)");
}

/// Declarative twist description. Expressions may reference the chart
/// coordinates and the named parameters.
///   scalar:          exprs = {λ}
///   diagonal:        exprs = {λ_1, ..., λ_n}
///   shear:           exprs = {s}, T = I + s e_0 e_1ᵀ
///   user-matrix:     exprs = n×n entries of T, row-major
///   constant-matrix: matrix = Q
struct TwistSpec {
  TwistFamily family = TwistFamily::Identity;
  std::vector<std::string> exprs;
  Mat matrix;
  std::vector<std::string> param_names;
  std::vector<double> params;
  double max_condition = 1e8;

  static TwistSpec identity() { return {}; }
  static TwistSpec scalar(std::string lambda, std::vector<std::string> names = {},
                          std::vector<double> values = {}) {
    TwistSpec t;
    t.family = TwistFamily::Scalar;
    t.exprs = {std::move(lambda)};
    t.param_names = std::move(names);
    t.params = std::move(values);
    return t;
  }
  /// λ = exp(c1·x + … + c_d·x^d) in coordinate `coord`, all c_k = 0.
  static TwistSpec exp_poly(const std::string& coord, int degree) {
    if (degree < 1) throw ConfigError("exp-poly twist needs degree >= 1");
    std::string body;
    std::vector<std::string> names;
    for (int k = 1; k <= degree; ++k) {
      names.push_back("c" + std::to_string(k));
      if (k > 1) body += " + ";
      body += names.back() + "*" + coord + (k > 1 ? "^" + std::to_string(k) : "");
    }
    return scalar("exp(" + body + ")", names, std::vector<double>(static_cast<std::size_t>(degree), 0.0));
  }
  static TwistSpec constant(Mat q) {
    TwistSpec t;
    t.family = TwistFamily::ConstantMatrix;
    t.matrix = std::move(q);
    return t;
  }
  static TwistSpec diagonal(std::vector<std::string> entries) {
    TwistSpec t;
    t.family = TwistFamily::Diagonal;
    t.exprs = std::move(entries);
    return t;
  }
  static TwistSpec shear(std::string s) {
    TwistSpec t;
    t.family = TwistFamily::Shear;
    t.exprs = {std::move(s)};
    return t;
  }
  static TwistSpec user_matrix(std::vector<std::string> entries) {
    TwistSpec t;
    t.family = TwistFamily::UserMatrix;
    t.exprs = std::move(entries);
    return t;
  }
};

/// How coordinate derivatives of T are obtained.
enum class DerivativeMode { Auto, Exact, FiniteDifference };

/// A twist compiled against a manifold.
class Twist {
 public:
  Twist(const Manifold& m, TwistSpec spec, DerivativeMode mode = DerivativeMode::Auto)
      : spec_(std::move(spec)), n_(m.dim()) {
    if (spec_.params.size() != spec_.param_names.size())
      throw ConfigError("twist parameter names and values differ in length");
    const auto symbols = m.symbols(spec_.param_names);
    auto parse = [&](const std::string& s) { return ScalarField(s, symbols, spec_.params); };
    auto constant = [&](double c) { return ScalarField::constant(c, n_); };
    entries_.assign(static_cast<std::size_t>(n_ * n_), constant(0.0));
    auto at = [&](int i, int j) -> ScalarField& { return entries_[static_cast<std::size_t>(i * n_ + j)]; };
    auto expect = [&](std::size_t count) {
      if (spec_.exprs.size() != count)
        throw ConfigError(std::string("twist family ") + to_string(spec_.family) + " expects " +
                          std::to_string(count) + " expression(s)");
    };
    switch (spec_.family) {
      case TwistFamily::Identity:
        for (int i = 0; i < n_; ++i) at(i, i) = constant(1.0);
        break;
      case TwistFamily::Scalar:
        expect(1);
        scalar_ = parse(spec_.exprs[0]);
        for (int i = 0; i < n_; ++i) at(i, i) = *scalar_;
        break;
      case TwistFamily::ConstantMatrix:
        if (spec_.matrix.rows() != n_ || spec_.matrix.cols() != n_)
          throw ConfigError("constant-matrix twist has wrong shape");
        for (int i = 0; i < n_; ++i)
          for (int j = 0; j < n_; ++j) at(i, j) = constant(spec_.matrix(i, j));
        break;
      case TwistFamily::Diagonal:
        expect(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i) at(i, i) = parse(spec_.exprs[static_cast<std::size_t>(i)]);
        break;
      case TwistFamily::Shear:
        expect(1);
        if (n_ < 2) throw ConfigError("shear twist needs dimension >= 2");
        for (int i = 0; i < n_; ++i) at(i, i) = constant(1.0);
        at(0, 1) = parse(spec_.exprs[0]);
        break;
      case TwistFamily::UserMatrix:
        expect(static_cast<std::size_t>(n_ * n_));
        for (int i = 0; i < n_ * n_; ++i)
          entries_[static_cast<std::size_t>(i)] = parse(spec_.exprs[static_cast<std::size_t>(i)]);
        break;
    }
    if (mode == DerivativeMode::Auto)
      mode = spec_.family == TwistFamily::UserMatrix ? DerivativeMode::FiniteDifference
                                                     : DerivativeMode::Exact;
    mode_ = mode;
  }

  const TwistSpec& spec() const { return spec_; }
  TwistFamily family() const { return spec_.family; }
  DerivativeMode derivative_mode() const { return mode_; }
  int dim() const { return n_; }
  bool is_scalar() const { return scalar_.has_value() || spec_.family == TwistFamily::Identity; }
  const std::optional<ScalarField>& scalar_function() const { return scalar_; }

  /// Coordinate matrix T(x) of B*.
  Mat coords(const Point& x) const {
    Mat t(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) t(i, j) = entries_[static_cast<std::size_t>(i * n_ + j)](x.data());
    return t;
  }

  /// ∂_k T, exact or by Richardson-extrapolated central differences.
  Rank3 partials(const Point& x) const {
    Rank3 d(static_cast<std::size_t>(n_));
    for (int k = 0; k < n_; ++k) {
      auto& m = d[static_cast<std::size_t>(k)];
      if (mode_ == DerivativeMode::FiniteDifference) {
        m = richardson_first([&](const Point& y) { return coords(y); }, x, k);
        continue;
      }
      m.resize(n_, n_);
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j) m(i, j) = entries_[static_cast<std::size_t>(i * n_ + j)].partial(x.data(), k);
    }
    return d;
  }

  /// ∂_k∂_l T as second[k][l].
  std::vector<Rank3> second_partials(const Point& x) const {
    std::vector<Rank3> d(static_cast<std::size_t>(n_), Rank3(static_cast<std::size_t>(n_)));
    for (int k = 0; k < n_; ++k)
      for (int l = k; l < n_; ++l) {
        Mat m(n_, n_);
        if (mode_ == DerivativeMode::FiniteDifference) {
          m = richardson_second([&](const Point& y) { return coords(y); }, x, k, l);
        } else {
          for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j)
              m(i, j) = entries_[static_cast<std::size_t>(i * n_ + j)].second(x.data(), k, l);
        }
        d[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)] = m;
        d[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] = m;
      }
    return d;
  }

  static double fd_step(const Point& x, int k) { return 1e-3 * (1.0 + std::abs(x(k))); }

  /// Central difference of a matrix field along axis k with one Richardson
  /// extrapolation (steps h and h/2), O(h⁴).
  template <class F>
  static Mat richardson_first(F&& f, const Point& x, int k) {
    const double h = fd_step(x, k);
    auto central = [&](double s) {
      Point xp = x, xm = x;
      xp(k) += s;
      xm(k) -= s;
      return Mat((f(xp) - f(xm)) / (2.0 * s));
    };
    return (4.0 * central(0.5 * h) - central(h)) / 3.0;
  }

  /// Nested central second difference ∂_k∂_l with Richardson extrapolation.
  template <class F>
  static Mat richardson_second(F&& f, const Point& x, int k, int l) {
    const double hk = fd_step(x, k), hl = fd_step(x, l);
    auto central = [&](double s) {
      if (k == l) {
        const double h = s * hk;
        Point xp = x, xm = x;
        xp(k) += h;
        xm(k) -= h;
        return Mat((f(xp) - 2.0 * f(x) + f(xm)) / (h * h));
      }
      const double a = s * hk, b = s * hl;
      Point pp = x, pm = x, mp = x, mm = x;
      pp(k) += a; pp(l) += b;
      pm(k) += a; pm(l) -= b;
      mp(k) -= a; mp(l) += b;
      mm(k) -= a; mm(l) -= b;
      return Mat((f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * a * b));
    };
    return (4.0 * central(0.5) - central(1.0)) / 3.0;
  }

  Twist with_params(const std::vector<double>& values) const {
    Twist t = *this;
    t.spec_.params = values;
    for (auto& e : t.entries_)
      if (e.params().size() == values.size() && !values.empty()) e = e.with_params(values);
    if (t.scalar_) t.scalar_ = t.scalar_->with_params(values);
    return t;
  }

 private:
  TwistSpec spec_;
  int n_;
  DerivativeMode mode_ = DerivativeMode::Exact;
  std::vector<ScalarField> entries_;
  std::optional<ScalarField> scalar_;
};

/// All pointwise twist tensors in orthonormal-frame components.
struct TwistEval {
  Point point;
  Mat B, Bstar;
  Rank3 nabla_bstar;   // [a] = ∇_{e_a} B*
  Rank3 defect;        // [a] = A_aᵀ − A_a, A_a = (∇_{e_a}B*)(B*)⁻¹
  Mat penalty;         // N_B = ¼ Σ_a 𝓑_aᵀ 𝓑_a
  Mat bakry_emery;     // 𝓜
  Mat conjugated;      // 𝓜_B = (B*)⁻¹ 𝓜 B*
  Mat tensor_lap;      // L^∥(B*)
  Mat potential;       // M_B = 𝓜_B − (B*)⁻¹ L^∥(B*)
  Mat similar;         // S_B = B* M_B (B*)⁻¹
  double condition = 1.0;
};

namespace detail {

/// (Γ_k)(a, b) = Γ^a_{kb}.
inline Mat gamma_slice(const Rank3& gamma, int k) {
  const int n = static_cast<int>(gamma.size());
  Mat s(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) s(a, b) = gamma[static_cast<std::size_t>(a)](k, b);
  return s;
}

/// Connection part of ∇_k T for a form-side (1,1) tensor: −Γ_kᵀ T + T Γ_kᵀ.
inline Rank3 connection_terms(const Manifold& m, const Twist& twist, const Point& x) {
  const int n = m.dim();
  const Rank3 gamma = m.christoffel_unchecked(x);
  const Mat t = twist.coords(x);
  Rank3 g(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const Mat gk = gamma_slice(gamma, k);
    g[static_cast<std::size_t>(k)] = -gk.transpose() * t + t * gk.transpose();
  }
  return g;
}

/// Coordinate components C_k = ∇_k T and the coordinate tensor Laplacian.
struct CovariantData {
  Rank3 nabla;  // C_k
  Mat laplacian;
};

inline CovariantData covariant_data(const Model& model, const Twist& twist, const Point& x) {
  const auto& m = model.manifold;
  const int n = m.dim();
  const Rank3 dt = twist.partials(x);
  const std::vector<Rank3> d2t = twist.second_partials(x);
  const bool flat = m.is_flat_chart();
  const Rank3 gamma = flat ? Rank3(static_cast<std::size_t>(n), Mat::Zero(n, n)) : m.christoffel_unchecked(x);

  CovariantData out;
  out.nabla = dt;
  Rank3 conn;
  if (!flat) {
    conn = connection_terms(m, twist, x);
    for (int k = 0; k < n; ++k) out.nabla[static_cast<std::size_t>(k)] += conn[static_cast<std::size_t>(k)];
  }

  const Mat g = m.metric_unchecked(x);
  const Mat g_inv = g.inverse();
  const Vec grad_v = g_inv * model.potential.gradient(x);
  Mat lap = Mat::Zero(n, n);
  for (int l = 0; l < n; ++l) {
    // ∂_l C_k for all k: exact second partials plus the differentiated
    // connection part.
    Rank3 dconn;
    if (!flat) {
      const double h = Twist::fd_step(x, l);
      Point probe = x;
      probe(l) += h;
      const bool up = m.contains(probe);
      probe(l) -= 2.0 * h;
      if (!up || !m.contains(probe))
        throw DomainError("finite-difference step leaves the chart domain");
      dconn.assign(static_cast<std::size_t>(n), Mat::Zero(n, n));
      for (int k = 0; k < n; ++k)
        dconn[static_cast<std::size_t>(k)] = Twist::richardson_first(
            [&](const Point& y) { return connection_terms(m, twist, y)[static_cast<std::size_t>(k)]; }, x, l);
    }
    const Mat gl = flat ? Mat::Zero(n, n) : gamma_slice(gamma, l);
    for (int k = 0; k < n; ++k) {
      if (g_inv(k, l) == 0.0) continue;
      Mat dc = d2t[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
      if (!flat) dc += dconn[static_cast<std::size_t>(k)];
      Mat cov = dc;
      if (!flat) {
        for (int p = 0; p < n; ++p) cov -= gamma[static_cast<std::size_t>(p)](l, k) * out.nabla[static_cast<std::size_t>(p)];
        cov += -gl.transpose() * out.nabla[static_cast<std::size_t>(k)] + out.nabla[static_cast<std::size_t>(k)] * gl.transpose();
      }
      lap += g_inv(k, l) * cov;
    }
  }
  for (int k = 0; k < n; ++k) lap -= grad_v(k) * out.nabla[static_cast<std::size_t>(k)];
  out.laplacian = lap;
  return out;
}

}  // namespace detail

/// Frame components of L^∥(B*) = Σ_a ∇²_{e_a e_a} B* − ∇_{∇V} B*.
inline Mat tensor_laplacian(const Model& model, const Twist& twist, const Point& x) {
  const auto& m = model.manifold;
  m.check_domain(x);
  const int n = m.dim();
  if (twist.family() == TwistFamily::Identity) return Mat::Zero(n, n);
  if (twist.family() == TwistFamily::Scalar && twist.derivative_mode() == DerivativeMode::Exact) {
    return apply_L(model, *twist.scalar_function(), x) * Mat::Identity(n, n);
  }
  const Mat e = Manifold::frame_from_metric(m.metric_unchecked(x));
  const Mat f = e.inverse().transpose();
  return e.transpose() * detail::covariant_data(model, twist, x).laplacian * f;
}

inline TwistEval twist_eval(const Model& model, const Twist& twist, const Point& x) {
  const auto& m = model.manifold;
  m.check_domain(x);
  const int n = m.dim();
  TwistEval ev;
  ev.point = x;
  const Mat e = Manifold::frame_from_metric(m.metric_unchecked(x));
  const Mat f = e.inverse().transpose();
  ev.bakry_emery = bakry_emery_at(model, x).tensor;

  ev.nabla_bstar.assign(static_cast<std::size_t>(n), Mat::Zero(n, n));
  const bool scalar_fast =
      twist.family() == TwistFamily::Identity ||
      (twist.family() == TwistFamily::Scalar && twist.derivative_mode() == DerivativeMode::Exact);
  if (scalar_fast) {
    if (twist.family() == TwistFamily::Identity) {
      ev.Bstar = Mat::Identity(n, n);
      ev.tensor_lap = Mat::Zero(n, n);
    } else {
      const auto& lambda = *twist.scalar_function();
      const double l = lambda(x.data());
      ev.Bstar = l * Mat::Identity(n, n);
      const Vec dl = e.transpose() * lambda.gradient(x);
      for (int a = 0; a < n; ++a) ev.nabla_bstar[static_cast<std::size_t>(a)] = dl(a) * Mat::Identity(n, n);
      ev.tensor_lap = apply_L(model, lambda, x) * Mat::Identity(n, n);
    }
  } else {
    ev.Bstar = e.transpose() * twist.coords(x) * f;
    const auto cov = detail::covariant_data(model, twist, x);
    for (int a = 0; a < n; ++a) {
      Mat c = Mat::Zero(n, n);
      for (int k = 0; k < n; ++k) c += e(k, a) * cov.nabla[static_cast<std::size_t>(k)];
      ev.nabla_bstar[static_cast<std::size_t>(a)] = e.transpose() * c * f;
    }
    ev.tensor_lap = e.transpose() * cov.laplacian * f;
  }
  if (!ev.Bstar.allFinite()) throw NumericError("twist is not finite");
  ev.condition = condition_number(ev.Bstar);
  if (!(ev.condition <= twist.spec().max_condition)) {
    std::ostringstream os;
    os << "twist is singular at the evaluation point (condition number " << ev.condition << ")";
    throw TwistSingularError(os.str(), ev.condition);
  }
  ev.B = ev.Bstar.transpose();
  const Mat bstar_inv = ev.Bstar.inverse();

  ev.defect.resize(static_cast<std::size_t>(n));
  ev.penalty = Mat::Zero(n, n);
  for (int a = 0; a < n; ++a) {
    const Mat am = ev.nabla_bstar[static_cast<std::size_t>(a)] * bstar_inv;
    const Mat d = am.transpose() - am;
    ev.defect[static_cast<std::size_t>(a)] = d;
    ev.penalty += d.transpose() * d;
  }
  ev.penalty *= 0.25;

  ev.conjugated = bstar_inv * ev.bakry_emery * ev.Bstar;
  ev.potential = ev.conjugated - bstar_inv * ev.tensor_lap;
  ev.similar = ev.Bstar * ev.potential * bstar_inv;
  return ev;
}

enum class BoundMode { Plain, Tilde };

inline const char* to_string(BoundMode m) { return m == BoundMode::Plain ? "plain" : "tilde"; }

inline BoundMode bound_mode_from_string(const std::string& s) {
  if (s == "plain") return BoundMode::Plain;
  if (s == "tilde") return BoundMode::Tilde;
  throw ConfigError("unknown bound mode '" + s + "' (expected plain or tilde)");
}

inline constexpr double kDefectGate = 1e-8;
inline constexpr double kAsymmetryGate = 1e-6;

struct BoundReport {
  BoundMode mode = BoundMode::Plain;
  double rho_B = 0.0;        // inf λ_min((S_B)^s)
  double rho_tilde_B = 0.0;  // inf λ_min((S_B)^s − N_B)
  double defect_norm = 0.0;  // sup ‖𝓑‖_F over the grid
  double asymmetry = 0.0;    // sup ‖S_B − S_Bᵀ‖_F over the grid
  Region region;
  Point rho_B_minimizer;
  Point rho_tilde_B_minimizer;
  Point defect_witness;
  std::string caveat = "grid-infimum";

  /// The certified quantity for the mode.
  double bound() const { return mode == BoundMode::Plain ? rho_B : rho_tilde_B; }
};

/// Per-point bound integrands.
inline double plain_integrand(const TwistEval& ev) { return min_sym_eigenvalue(ev.similar); }
inline double tilde_integrand(const TwistEval& ev) {
  return min_sym_eigenvalue(sym_part(ev.similar) - ev.penalty);
}

/// Grid-plus-refinement infima of ρ_B and ρ̃_B. Plain mode refuses twists with
/// non-vanishing defect (use tilde mode there).
inline BoundReport bound_scan(const Model& model, const Twist& twist, BoundMode mode, bool refine = true) {
  const Region& region = model.region;
  region.validate();
  BoundReport r;
  r.mode = mode;
  r.region = region;
  r.rho_B = r.rho_tilde_B = std::numeric_limits<double>::infinity();
  const std::size_t count = region.size();
  for (std::size_t i = 0; i < count; ++i) {
    const Point x = region.point(i);
    const TwistEval ev = twist_eval(model, twist, x);
    const double defect = frobenius(ev.defect);
    if (defect > r.defect_norm || r.defect_witness.size() == 0) {
      r.defect_norm = defect;
      r.defect_witness = x;
    }
    r.asymmetry = std::max(r.asymmetry, (ev.similar - ev.similar.transpose()).norm());
    const double p = plain_integrand(ev), t = tilde_integrand(ev);
    if (p < r.rho_B) {
      r.rho_B = p;
      r.rho_B_minimizer = x;
    }
    if (t < r.rho_tilde_B) {
      r.rho_tilde_B = t;
      r.rho_tilde_B_minimizer = x;
    }
  }
  if (mode == BoundMode::Plain) {
    if (r.defect_norm > kDefectGate)
      throw ModeError("plain-mode bound requires a vanishing twist defect; sup |B| = " +
                      std::to_string(r.defect_norm) + " > 1e-8, use mode=tilde");
    if (r.asymmetry > kAsymmetryGate)
      throw ModeError("plain-mode bound requires symmetric B* M_B (B*)^-1; asymmetry residual " +
                      std::to_string(r.asymmetry) + " > 1e-6");
  }
  if (refine) {
    auto refine_one = [&](auto integrand, double& value, Point& at) {
      double step = std::numeric_limits<double>::infinity();
      for (int a = 0; a < region.dim(); ++a) step = std::min(step, region.spacing(a));
      NelderMeadOptions opt;
      opt.initial_step = 0.5 * step;
      opt.max_evaluations = 200 * region.dim();
      opt.x_tolerance = 1e-10 * step;
      auto nm = nelder_mead(
          [&](const Eigen::VectorXd& y) {
            const Point p = y;
            try {
              return integrand(twist_eval(model, twist, p));
            } catch (const TwistSingularError&) {
              return std::numeric_limits<double>::infinity();
            }
          },
          Eigen::VectorXd(at), opt, region.bounds());
      if (nm.value < value) {
        value = nm.value;
        at = nm.x;
      }
    };
    refine_one(plain_integrand, r.rho_B, r.rho_B_minimizer);
    refine_one(tilde_integrand, r.rho_tilde_B, r.rho_tilde_B_minimizer);
  }
  return r;
}

/// Hypothesis gate on the region grid. Plain mode needs 𝓑 = 0 and a symmetric
/// S_B; tilde mode needs (S_B)^s − (1+ε)N_B bounded below, i.e. a finite
/// grid minimum of its smallest eigenvalue.
struct GateResult {
  BoundMode mode = BoundMode::Plain;
  bool ok = true;
  double defect_norm = 0.0;
  double asymmetry = 0.0;
  double tilde_floor = std::numeric_limits<double>::infinity();
  double epsilon = 0.1;
  std::string message;
};

inline GateResult hypothesis_gate(const Model& model, const Twist& twist, BoundMode mode, double epsilon = 0.1) {
  GateResult g;
  g.mode = mode;
  g.epsilon = epsilon;
  const Region& region = model.region;
  region.validate();
  for (std::size_t i = 0; i < region.size(); ++i) {
    const TwistEval ev = twist_eval(model, twist, region.point(i));
    g.defect_norm = std::max(g.defect_norm, frobenius(ev.defect));
    g.asymmetry = std::max(g.asymmetry, (ev.similar - ev.similar.transpose()).norm());
    g.tilde_floor = std::min(g.tilde_floor, min_sym_eigenvalue(sym_part(ev.similar) - (1.0 + epsilon) * ev.penalty));
  }
  std::ostringstream os;
  if (mode == BoundMode::Plain) {
    if (g.defect_norm > kDefectGate) {
      g.ok = false;
      os << "plain mode requires a vanishing twist defect; sup |B| = " << g.defect_norm << ", use mode=tilde";
    } else if (g.asymmetry > kAsymmetryGate) {
      g.ok = false;
      os << "plain mode requires symmetric B* M_B (B*)^-1; asymmetry " << g.asymmetry;
    }
  } else if (!std::isfinite(g.tilde_floor)) {
    g.ok = false;
    os << "(B* M_B (B*)^-1)^s - (1+eps) N_B is not bounded below on the grid";
  }
  g.message = os.str();
  return g;
}

struct SymmetryResult {
  bool holds = true;
  double residual = 0.0;  // sup over the grid of ‖𝓑‖_F
  Point witness;
};

/// Checks symmetry of (∇_a B*)(B*)⁻¹ for every direction at every grid point.
inline SymmetryResult symmetry_criterion(const Model& model, const Twist& twist) {
  SymmetryResult s;
  const Region& region = model.region;
  region.validate();
  for (std::size_t i = 0; i < region.size(); ++i) {
    const Point x = region.point(i);
    const double d = frobenius(twist_eval(model, twist, x).defect);
    if (d > s.residual || s.witness.size() == 0) {
      s.residual = d;
      s.witness = x;
    }
  }
  s.holds = s.residual <= kDefectGate;
  return s;
}

}  // namespace intertwine

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "expr.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "minimize.hpp"

namespace intertwine {

/// Scalar fields are symbolic expressions with exact derivatives.
using ScalarField = SmoothFunction;

/// Coordinate box with a tensor grid, used for infima and quadrature.
/// Periodic axes exclude the right endpoint.
struct Region {
  std::vector<double> lo, hi;
  std::vector<int> points;
  std::vector<bool> periodic;

  int dim() const { return static_cast<int>(lo.size()); }

  std::size_t size() const {
    std::size_t n = 1;
    for (int p : points) n *= static_cast<std::size_t>(p);
    return n;
  }

  double spacing(int axis) const {
    const auto a = static_cast<std::size_t>(axis);
    const int divisions = periodic[a] ? points[a] : points[a] - 1;
    return (hi[a] - lo[a]) / divisions;
  }

  double coordinate(int axis, int i) const {
    return lo[static_cast<std::size_t>(axis)] + i * spacing(axis);
  }

  /// Grid point by flat index; axis 0 varies slowest.
  Point point(std::size_t flat) const {
    Point x(dim());
    for (int a = dim() - 1; a >= 0; --a) {
      const auto n = static_cast<std::size_t>(points[static_cast<std::size_t>(a)]);
      x(a) = coordinate(a, static_cast<int>(flat % n));
      flat /= n;
    }
    return x;
  }

  bool contains(const Point& x) const {
    for (int a = 0; a < dim(); ++a)
      if (x(a) < lo[static_cast<std::size_t>(a)] || x(a) > hi[static_cast<std::size_t>(a)]) return false;
    return true;
  }

  Bounds bounds() const {
    Bounds b;
    b.lo = Eigen::Map<const Eigen::VectorXd>(lo.data(), dim());
    b.hi = Eigen::Map<const Eigen::VectorXd>(hi.data(), dim());
    return b;
  }

  void validate() const {
    if (lo.empty() || lo.size() != hi.size() || lo.size() != points.size() || lo.size() != periodic.size())
      throw ConfigError("sampling region is empty or inconsistent");
    for (std::size_t a = 0; a < lo.size(); ++a) {
      if (!(hi[a] > lo[a]) || !std::isfinite(lo[a]) || !std::isfinite(hi[a]))
        throw ConfigError("sampling region axis " + std::to_string(a) + " is empty or unbounded");
      if (points[a] < 2) throw ConfigError("sampling region needs at least 2 points per axis");
    }
  }

  static Region box(std::vector<double> lo, std::vector<double> hi, std::vector<int> points) {
    Region r;
    r.periodic.assign(lo.size(), false);
    r.lo = std::move(lo);
    r.hi = std::move(hi);
    r.points = std::move(points);
    r.validate();
    return r;
  }

  static Region interval(double a, double b, int n) { return box({a}, {b}, {n}); }
};

/// Manifold plus potential V; defines L = Δ − ⟨∇V, ∇·⟩ and μ ∝ e^{−V} dvol.
struct Model {
  Manifold manifold = Manifold::euclidean(1);
  ScalarField potential;
  Region region;
  std::string name;

  static Model make(Manifold m, const std::string& potential, Region region, std::string name = {}) {
    Model model{m, ScalarField(potential, m.symbols()), std::move(region), std::move(name)};
    if (model.region.dim() != m.dim()) throw ConfigError("sampling region dimension differs from manifold");
    model.region.validate();
    return model;
  }

  ScalarField field(const std::string& text) const { return ScalarField(text, manifold.symbols()); }
};

struct BakryEmeryValue {
  Point point;
  Mat tensor;  // frame components of Hess V + Ric♯
  double smallest_eigenvalue = 0.0;
};

/// Gradient (frame components) and covariant Hessian (frame components).
namespace detail {

inline std::pair<Vec, Mat> grad_hess_unchecked(const Model& model, const Point& x) {
  const auto& m = model.manifold;
  const int n = m.dim();
  const Vec dv = model.potential.gradient(x);
  Mat hess = model.potential.hessian<Mat>(x);
  if (m.has_identity_metric()) {
    if (!dv.allFinite() || !hess.allFinite()) throw NumericError("non-finite derivative of V");
    return {dv, hess};
  }
  const Rank3 gamma = m.christoffel_unchecked(x);
  for (int k = 0; k < n; ++k) hess -= dv(k) * gamma[static_cast<std::size_t>(k)];
  if (!dv.allFinite() || !hess.allFinite()) throw NumericError("non-finite derivative of V");
  const Mat e = Manifold::frame_from_metric(m.metric_unchecked(x));
  return {e.transpose() * dv, sym_part(e.transpose() * hess * e)};
}

}  // namespace detail

inline std::pair<Vec, Mat> grad_hess_V(const Model& model, const Point& x) {
  model.manifold.check_domain(x);
  return detail::grad_hess_unchecked(model, x);
}

/// Frame components of 𝓜 = Hess V + Ric♯.
inline Mat bakry_emery_tensor(const Model& model, const Point& x) {
  auto [grad, hess] = detail::grad_hess_unchecked(model, x);
  if (model.manifold.has_identity_metric()) return hess;
  return hess + model.manifold.ricci_unchecked(x);
}

inline BakryEmeryValue bakry_emery_at(const Model& model, const Point& x) {
  model.manifold.check_domain(x);
  Mat t = bakry_emery_tensor(model, x);
  return {x, t, min_sym_eigenvalue(t)};
}

/// (Lf)(x) = Δ_g f − ⟨∇V, ∇f⟩_g with exact derivatives of f and V.
inline double apply_L(const Model& model, const ScalarField& f, const Point& x) {
  const auto& m = model.manifold;
  m.check_domain(x);
  const int n = m.dim();
  const Mat g = m.metric_unchecked(x);
  const Mat g_inv = g.inverse();
  const Rank3 gamma = m.christoffel_unchecked(x);
  const Vec df = f.gradient(x);
  const Vec dv = model.potential.gradient(x);
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double cov = f.second(x.data(), i, j);
      for (int k = 0; k < n; ++k) cov -= gamma[static_cast<std::size_t>(k)](i, j) * df(k);
      s += g_inv(i, j) * (cov - dv(i) * df(j));
    }
  if (!std::isfinite(s)) throw NumericError("non-finite value of Lf");
  return s;
}

/// L^W df(x) = □df − ∇_{∇V} df − ⟨df, ∇_· ∇V⟩ on an identity-metric chart,
/// in coordinates: ∂_i Δf − Σ_j ∂_jV ∂_i∂_j f − Σ_j ∂_i∂_jV ∂_j f.
inline Vec apply_LW_flat(const Model& model, const ScalarField& f, const Point& x) {
  const auto& m = model.manifold;
  if (!m.has_identity_metric()) throw ConfigError("apply_LW_flat needs an identity-metric chart");
  m.check_domain(x);
  const int n = m.dim();
  const Vec df = f.gradient(x);
  const Vec dv = model.potential.gradient(x);
  Vec out = Vec::Zero(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out(i) += f.third(x.data(), i, j, j) - dv(j) * f.second(x.data(), i, j) -
                model.potential.second(x.data(), i, j) * df(j);
  return out;
}

/// Grid-plus-refinement infimum over a region. The refinement can only lower
/// the grid value; the result over-estimates the true infimum at worst.
struct InfimumReport {
  double value = std::numeric_limits<double>::infinity();
  Point minimizer;
  Region region;
  std::string caveat = "grid-infimum";
};

/// Minimizes `objective` over the region grid, then polishes from the best
/// grid point with Nelder–Mead confined to the region.
template <class F>
InfimumReport grid_infimum(const Region& region, F&& objective, bool refine = true) {
  region.validate();
  InfimumReport r;
  r.region = region;
  const std::size_t n = region.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point x = region.point(i);
    const double v = objective(x);
    if (v < r.value || r.minimizer.size() == 0) {
      r.value = v;
      r.minimizer = x;
    }
  }
  if (!refine) return r;
  double step = std::numeric_limits<double>::infinity();
  for (int a = 0; a < region.dim(); ++a) step = std::min(step, region.spacing(a));
  NelderMeadOptions opt;
  opt.initial_step = 0.5 * step;
  opt.max_evaluations = 200 * region.dim();
  opt.x_tolerance = 1e-10 * step;
  const Eigen::VectorXd start = r.minimizer;
  auto res = nelder_mead(
      [&](const Eigen::VectorXd& y) {
        const Point p = y;
        return objective(p);
      },
      start, opt, region.bounds());
  if (res.value < r.value) {
    r.value = res.value;
    r.minimizer = res.x;
  }
  return r;
}

/// ρ = inf of the smallest eigenvalue of Hess V + Ric♯ over the region.
inline InfimumReport rho_inf(const Model& model) {
  if (model.region.size() == 0) throw ConfigError("empty sampling region");
  return grid_infimum(model.region,
                      [&](const Point& x) { return bakry_emery_at(model, x).smallest_eigenvalue; });
}

/// Frame components of df.
inline Vec frame_differential(const Model& model, const ScalarField& f, const Point& x) {
  const Mat e = Manifold::frame_from_metric(model.manifold.metric_unchecked(x));
  return e.transpose() * f.gradient(x);
}

}  // namespace intertwine

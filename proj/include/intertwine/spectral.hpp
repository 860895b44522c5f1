#pragma once

// Dirichlet-form discretization of −L on 1D/2D tensor grids, μ-quadrature,
// the spectral gap λ₁(−L, μ), and twist-parameter optimization.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "minimize.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "twist.hpp"

namespace intertwine {

using SparseMat = Eigen::SparseMatrix<double>;

/// Node masses e^{−(V−V_min)} √det g × trapezoid cell measure on a grid.
struct GridMeasure {
  Region grid;
  std::vector<double> mass;
  double v_shift = 0.0;  // V_min over the nodes
  double total = 0.0;
  double boundary_fraction = 0.0;  // share of mass on non-periodic boundary nodes
};

struct Discretization {
  GridMeasure measure;
  SparseMat stiffness;  // Σ_edges w_e (u_i − u_j)²

  std::size_t size() const { return measure.mass.size(); }
};

struct SpectralResult {
  double lambda1 = 0.0;
  Eigen::VectorXd eigvec;  // normalized uᵀ M u = 1, uᵀ M 1 = 0
  double residual_norm = 0.0;
  std::string method;
  std::size_t unknowns = 0;
};

namespace detail {

inline void check_spectral_grid(const Manifold& m, const Region& grid) {
  grid.validate();
  if (grid.dim() != m.dim()) throw ConfigError("spectral grid dimension differs from the manifold");
  if (grid.dim() > 2) throw ConfigError("spectral discretization is limited to 1D and 2D grids");
}

/// Trapezoid weight of index i on an axis.
inline double cell_weight(const Region& grid, int axis, int i) {
  const double h = grid.spacing(axis);
  const auto a = static_cast<std::size_t>(axis);
  if (grid.periodic[a]) return h;
  return (i == 0 || i == grid.points[a] - 1) ? 0.5 * h : h;
}

inline std::vector<int> grid_index(const Region& grid, std::size_t flat) {
  std::vector<int> idx(static_cast<std::size_t>(grid.dim()));
  for (int a = grid.dim() - 1; a >= 0; --a) {
    const auto n = static_cast<std::size_t>(grid.points[static_cast<std::size_t>(a)]);
    idx[static_cast<std::size_t>(a)] = static_cast<int>(flat % n);
    flat /= n;
  }
  return idx;
}

inline std::size_t grid_flat(const Region& grid, const std::vector<int>& idx) {
  std::size_t flat = 0;
  for (int a = 0; a < grid.dim(); ++a)
    flat = flat * static_cast<std::size_t>(grid.points[static_cast<std::size_t>(a)]) +
           static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]);
  return flat;
}

inline Vec diagonal_metric(const Manifold& m, const Point& x) {
  const Mat g = m.metric_unchecked(x);
  const double scale = g.diagonal().cwiseAbs().maxCoeff();
  if ((g - Mat(g.diagonal().asDiagonal())).cwiseAbs().maxCoeff() > 1e-13 * scale)
    throw ConfigError("spectral discretization needs a diagonal metric");
  return g.diagonal();
}

inline double potential_value(const Model& model, const Point& x) {
  const double v = model.potential(x.data());
  if (!std::isfinite(v)) throw NumericError("potential is not finite on the spectral grid");
  return v;
}

}  // namespace detail

/// μ-masses of the grid nodes (unnormalized, V shifted by its grid minimum).
inline GridMeasure grid_measure(const Model& model, const Region& grid) {
  const auto& m = model.manifold;
  detail::check_spectral_grid(m, grid);
  GridMeasure gm;
  gm.grid = grid;
  const std::size_t n = grid.size();
  std::vector<double> v(n);
  gm.v_shift = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const Point x = grid.point(i);
    m.check_domain(x);
    v[i] = detail::potential_value(model, x);
    gm.v_shift = std::min(gm.v_shift, v[i]);
  }
  gm.mass.resize(n);
  double boundary = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point x = grid.point(i);
    const auto idx = detail::grid_index(grid, i);
    double w = std::exp(-(v[i] - gm.v_shift)) * std::sqrt(detail::diagonal_metric(m, x).prod());
    bool on_boundary = false;
    for (int a = 0; a < grid.dim(); ++a) {
      const int k = idx[static_cast<std::size_t>(a)];
      w *= detail::cell_weight(grid, a, k);
      if (!grid.periodic[static_cast<std::size_t>(a)] && (k == 0 || k == grid.points[static_cast<std::size_t>(a)] - 1))
        on_boundary = true;
    }
    if (!(w > 0.0) || !std::isfinite(w)) throw NumericError("non-positive quadrature mass on the spectral grid");
    gm.mass[i] = w;
    gm.total += w;
    if (on_boundary) boundary += w;
  }
  gm.boundary_fraction = boundary / gm.total;
  return gm;
}

/// Edge-based assembly of ∫⟨df, dg⟩ dμ: every grid edge carries
/// e^{−V(mid)} g^{aa}√det g (mid) × (transverse cell measure) / h_a.
inline Discretization discretize(const Model& model, const Region& grid) {
  Discretization d;
  d.measure = grid_measure(model, grid);
  const auto& m = model.manifold;
  const std::size_t n = grid.size();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(n * static_cast<std::size_t>(4 * grid.dim() + 1));
  std::vector<double> diag(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = detail::grid_index(grid, i);
    for (int a = 0; a < grid.dim(); ++a) {
      const auto au = static_cast<std::size_t>(a);
      const int k = idx[au];
      const bool wrap = grid.periodic[au] && k == grid.points[au] - 1;
      if (!wrap && k == grid.points[au] - 1) continue;
      auto jdx = idx;
      jdx[au] = wrap ? 0 : k + 1;
      const std::size_t j = detail::grid_flat(grid, jdx);
      const double h = grid.spacing(a);
      Point mid = grid.point(i);
      mid(a) += 0.5 * h;
      const Vec g = detail::diagonal_metric(m, mid);
      double w = std::exp(-(detail::potential_value(model, mid) - d.measure.v_shift)) * std::sqrt(g.prod()) / g(a) / h;
      for (int b = 0; b < grid.dim(); ++b)
        if (b != a) w *= detail::cell_weight(grid, b, idx[static_cast<std::size_t>(b)]);
      if (!std::isfinite(w)) throw NumericError("non-finite edge weight in the spectral discretization");
      diag[i] += w;
      diag[j] += w;
      trips.emplace_back(static_cast<int>(i), static_cast<int>(j), -w);
      trips.emplace_back(static_cast<int>(j), static_cast<int>(i), -w);
    }
  }
  for (std::size_t i = 0; i < n; ++i) trips.emplace_back(static_cast<int>(i), static_cast<int>(i), diag[i]);
  d.stiffness.resize(static_cast<int>(n), static_cast<int>(n));
  d.stiffness.setFromTriplets(trips.begin(), trips.end());
  return d;
}

inline Discretization discretize(const Model& model) { return discretize(model, model.region); }

struct SpectralOptions {
  std::size_t dense_limit = 400;
  double tolerance = 1e-9;  // relative residual of the Ritz pair
  int max_iterations = 2000;
  int block = 6;
};

/// Smallest nonzero eigenvalue of K u = λ M u with constants deflated: dense
/// up to `dense_limit` unknowns, shift-invert subspace iteration above.
inline SpectralResult spectral_gap(const Discretization& d, const SpectralOptions& opt = {}) {
  const auto n = static_cast<int>(d.size());
  if (n < 2) throw ConfigError("spectral gap needs at least 2 grid nodes");
  Eigen::VectorXd s(n), q0(n);
  for (int i = 0; i < n; ++i) {
    s(i) = 1.0 / std::sqrt(d.measure.mass[static_cast<std::size_t>(i)]);
    q0(i) = 1.0 / s(i);
  }
  q0.normalize();
  const SparseMat a = s.asDiagonal() * d.stiffness * s.asDiagonal();
  const double norm_bound = [&] {
    double b = 0.0;
    for (int k = 0; k < a.outerSize(); ++k) {
      double row = 0.0;
      for (SparseMat::InnerIterator it(a, k); it; ++it) row += std::abs(it.value());
      b = std::max(b, row);
    }
    return b;
  }();

  SpectralResult r;
  r.unknowns = static_cast<std::size_t>(n);
  Eigen::VectorXd y;
  if (static_cast<std::size_t>(n) <= opt.dense_limit) {
    Eigen::MatrixXd dense = Eigen::MatrixXd(a);
    dense += (2.0 * norm_bound + 1.0) * q0 * q0.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    if (es.info() != Eigen::Success) throw NumericError("dense eigensolver failed");
    r.lambda1 = es.eigenvalues()(0);
    y = es.eigenvectors().col(0);
    r.method = "dense";
  } else {
    const double sigma = -1e-8 * norm_bound;
    SparseMat shifted = a;
    for (int i = 0; i < n; ++i) shifted.coeffRef(i, i) -= sigma;
    Eigen::SimplicialLDLT<SparseMat> solver(shifted);
    if (solver.info() != Eigen::Success) throw NumericError("sparse factorization of the stiffness matrix failed");
    const int p = std::min(opt.block, n - 1);
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> gauss;
    Eigen::MatrixXd q(n, p);
    for (int j = 0; j < p; ++j)
      for (int i = 0; i < n; ++i) q(i, j) = gauss(rng);
    auto deflate_orthonormalize = [&](Eigen::MatrixXd& z) {
      z -= q0 * (q0.transpose() * z);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
      z = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
    };
    deflate_orthonormalize(q);
    double residual = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iterations; ++it) {
      Eigen::MatrixXd z = solver.solve(q);
      deflate_orthonormalize(z);
      const Eigen::MatrixXd az = a * z;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> rr(z.transpose() * az);
      q = z * rr.eigenvectors();
      r.lambda1 = rr.eigenvalues()(0);
      y = q.col(0);
      residual = (a * y - r.lambda1 * y).norm();
      if (residual <= opt.tolerance * std::max(1.0, std::abs(r.lambda1))) break;
    }
    if (!(residual <= opt.tolerance * std::max(1.0, std::abs(r.lambda1))))
      throw NumericError("shift-invert iteration did not converge (residual " + std::to_string(residual) + ")");
    r.method = "shift-invert";
  }
  y -= q0 * q0.dot(y);
  y.normalize();
  r.residual_norm = (a * y - r.lambda1 * y).norm();
  r.eigvec = s.asDiagonal() * y;
  return r;
}

/// Doubles the resolution of every axis (Neumann axes keep their nodes).
inline Region refined(const Region& grid) {
  Region r = grid;
  for (std::size_t a = 0; a < r.points.size(); ++a) r.points[a] = r.periodic[a] ? 2 * r.points[a] : 2 * r.points[a] - 1;
  return r;
}

struct GapReport {
  SpectralResult result;
  double lambda1_refined = 0.0;
  double relative_change = 0.0;
  bool under_resolved = false;
};

/// λ₁ on the grid and on the doubled grid; flags under-resolution when the
/// relative change exceeds 1e−3.
inline GapReport gap_with_refinement(const Model& model, const Region& grid, const SpectralOptions& opt = {}) {
  GapReport g;
  g.result = spectral_gap(discretize(model, grid), opt);
  g.lambda1_refined = spectral_gap(discretize(model, refined(grid)), opt).lambda1;
  g.relative_change = std::abs(g.lambda1_refined - g.result.lambda1) / std::abs(g.lambda1_refined);
  g.under_resolved = !(g.relative_change < 1e-3);
  return g;
}

/// Normalized μ-quadrature on a grid.
struct MuQuadrature {
  std::vector<Point> nodes;
  std::vector<double> weights;  // sum to 1
  double boundary_fraction = 0.0;
  bool truncated = false;  // boundary mass above 1e−4
};

inline constexpr double kTruncationThreshold = 1e-4;

inline MuQuadrature mu_quadrature(const Model& model, const Region& grid) {
  const GridMeasure gm = grid_measure(model, grid);
  MuQuadrature q;
  q.nodes.reserve(gm.mass.size());
  q.weights.reserve(gm.mass.size());
  for (std::size_t i = 0; i < gm.mass.size(); ++i) {
    q.nodes.push_back(grid.point(i));
    q.weights.push_back(gm.mass[i] / gm.total);
  }
  q.boundary_fraction = gm.boundary_fraction;
  q.truncated = gm.boundary_fraction > kTruncationThreshold;
  return q;
}

inline MuQuadrature mu_quadrature(const Model& model) { return mu_quadrature(model, model.region); }

struct MuIntegral {
  double value = 0.0;
  double boundary_fraction = 0.0;
  bool truncated = false;
};

/// ∫ F dμ for any F(const Point&) → double.
template <class F>
MuIntegral integrate_mu(const MuQuadrature& q, F&& integrand) {
  std::vector<double> terms(q.nodes.size());
  for (std::size_t i = 0; i < q.nodes.size(); ++i) terms[i] = q.weights[i] * integrand(q.nodes[i]);
  MuIntegral r;
  r.value = pairwise_sum(terms, 0.0);
  if (!std::isfinite(r.value)) throw NumericError("integrand is not finite on the quadrature grid");
  r.boundary_fraction = q.boundary_fraction;
  r.truncated = q.truncated;
  return r;
}

inline MuIntegral integrate_mu(const Model& model, const ScalarField& f) {
  return integrate_mu(mu_quadrature(model), [&](const Point& x) { return f(x.data()); });
}

struct OptimizeOptions {
  int restarts = 5;
  double start_scale = 0.5;     // std-dev of random starts
  int max_evaluations = 600;    // per Nelder–Mead run
  double polish_step = 0.05;
  double polish_min_step = 1e-4;
  std::uint64_t seed = 0;
  bool compute_gap = true;
  std::optional<Region> gap_grid;  // default: model region refined to ≥ 1001 (1D) or 61² (2D) nodes
};

struct OptimizeResult {
  BoundMode mode = BoundMode::Plain;
  std::vector<std::string> param_names;
  std::vector<double> params;
  double bound = -std::numeric_limits<double>::infinity();
  double identity_bound = 0.0;
  std::optional<double> lambda1;
  bool sound = true;  // bound ≤ λ₁ + 1e−6
  int evaluations = 0;
  std::string message;
};

inline constexpr double kSoundnessSlack = 1e-6;

inline Region default_gap_grid(const Region& region) {
  Region g = region;
  const int target = region.dim() == 1 ? 1001 : 61;
  for (auto& p : g.points) p = std::max(p, target);
  return g;
}

/// Maximizes the certified bound over the free parameters of a twist family.
inline OptimizeResult optimize_twist(const Model& model, const TwistSpec& family, BoundMode mode,
                                     const OptimizeOptions& opt = {}) {
  if (family.param_names.empty()) throw ConfigError("twist family has no free parameters to optimize");
  const Twist base(model.manifold, family);
  const int np = static_cast<int>(family.param_names.size());
  auto grid_bound = [&](const Eigen::VectorXd& p, bool refine) {
    try {
      const Twist t = base.with_params(std::vector<double>(p.data(), p.data() + p.size()));
      const double b = bound_scan(model, t, mode, refine).bound();
      return std::isfinite(b) ? b : -std::numeric_limits<double>::infinity();
    } catch (const TwistSingularError&) {
    } catch (const ModeError&) {
    } catch (const NumericError&) {
    }
    return -std::numeric_limits<double>::infinity();
  };
  auto objective = [&](const Eigen::VectorXd& p) { return -grid_bound(p, false); };

  std::vector<Eigen::VectorXd> starts;
  starts.push_back(Eigen::Map<const Eigen::VectorXd>(family.params.data(), np));
  starts.push_back(Eigen::VectorXd::Zero(np));
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, opt.start_scale);
  for (int r = 0; r < opt.restarts; ++r) {
    Eigen::VectorXd s(np);
    for (int i = 0; i < np; ++i) s(i) = gauss(rng);
    starts.push_back(s);
  }
  NelderMeadOptions nm;
  nm.initial_step = opt.start_scale;
  nm.max_evaluations = opt.max_evaluations;
  std::vector<MinimizeResult> runs(starts.size());
  parallel_for_blocks(starts.size(), [&](std::size_t i) { runs[i] = nelder_mead(objective, starts[i], nm); });

  OptimizeResult res;
  res.mode = mode;
  res.param_names = family.param_names;
  std::size_t best = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    res.evaluations += runs[i].evaluations;
    if (runs[i].value < runs[best].value) best = i;
  }
  auto polished = coordinate_polish(objective, runs[best], opt.polish_step, opt.polish_min_step);
  res.evaluations += polished.evaluations - runs[best].evaluations;

  // Grid refinement can only lower a bound, so candidates are compared after it.
  std::vector<Eigen::VectorXd> candidates{polished.x, Eigen::VectorXd::Zero(np)};
  for (const auto& r : runs) candidates.push_back(r.x);
  std::vector<double> refined_values(candidates.size());
  parallel_for_blocks(candidates.size(), [&](std::size_t i) { refined_values[i] = grid_bound(candidates[i], true); });
  std::size_t pick = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (refined_values[i] > refined_values[pick]) pick = i;
  res.bound = refined_values[pick];
  res.params.assign(candidates[pick].data(), candidates[pick].data() + np);

  res.identity_bound = bound_scan(model, Twist(model.manifold, TwistSpec::identity()), mode).bound();
  if (opt.compute_gap && model.manifold.dim() <= 2) {
    const Region g = opt.gap_grid ? *opt.gap_grid : default_gap_grid(model.region);
    res.lambda1 = spectral_gap(discretize(model, g)).lambda1;
    res.sound = res.bound <= *res.lambda1 + kSoundnessSlack;
    if (!res.sound)
      res.message = "optimized bound " + std::to_string(res.bound) + " exceeds lambda1 = " + std::to_string(*res.lambda1);
  }
  return res;
}

}  // namespace intertwine

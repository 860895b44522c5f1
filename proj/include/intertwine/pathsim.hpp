#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "twist.hpp"

namespace intertwine {

/// Number of uniform steps covering [0, t]; h is shrunk to t/N when t/h is
/// not an integer.
inline int step_count(double t, double h) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("simulation time t must be positive");
  if (!(h > 0.0) || !(h <= t)) throw ConfigError("time step h must satisfy 0 < h <= t");
  const double ratio = t / h;
  const double rounded = std::round(ratio);
  const double n = std::abs(ratio - rounded) <= 1e-9 * ratio ? rounded : std::ceil(ratio);
  if (n > 1e9) throw ConfigError("too many time steps");
  return static_cast<int>(n);
}

/// A discretized path X_0, …, X_m of the diffusion. Only in-domain points are
/// stored; when the path leaves the chart domain `exited` is set and
/// `exit_index` is the index of the first point outside.
struct PathSample {
  double t = 0.0;
  double h = 0.0;
  std::vector<Point> points;
  std::vector<Vec> increments;  // ΔB_k in frame components, variance h
  bool exited = false;
  std::size_t exit_index = 0;
  std::uint64_t seed = 0;
  std::uint64_t path_index = 0;

  std::size_t steps() const { return points.empty() ? 0 : points.size() - 1; }
  double time(std::size_t k) const { return static_cast<double>(k) * h; }
  std::vector<double> times() const {
    std::vector<double> out(points.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = time(k);
    return out;
  }

  /// A deterministic user path with uniform step h.
  static PathSample from_points(std::vector<Point> pts, double h) {
    if (pts.empty()) throw ConfigError("empty path");
    if (!(h > 0.0)) throw ConfigError("time step h must be positive");
    PathSample p;
    p.h = h;
    p.t = h * static_cast<double>(pts.size() - 1);
    p.points = std::move(pts);
    return p;
  }
};

struct SimulationOptions {
  bool zero_noise = false;
  bool store_increments = true;
};

/// Coordinate drift b^i = −g^{jk}Γ^i_{jk} − (g⁻¹∂V)^i and frame E at x.
inline void drift_and_frame(const Model& model, const Point& x, Vec& drift, Mat& frame) {
  const auto& m = model.manifold;
  const int n = m.dim();
  const Vec dv = model.potential.gradient(x);
  if (m.has_identity_metric()) {
    drift = -dv;
    frame = Mat::Identity(n, n);
    return;
  }
  const Mat g = m.metric_unchecked(x);
  frame = Manifold::frame_from_metric(g);
  const Mat g_inv = frame * frame.transpose();
  drift = -(g_inv * dv);
  if (!m.is_flat_chart()) {
    const Rank3 gamma = m.christoffel_unchecked(x);
    for (int i = 0; i < n; ++i) drift(i) -= (g_inv.cwiseProduct(gamma[static_cast<std::size_t>(i)])).sum();
  }
}

/// One completed Euler–Maruyama step from x to y.
struct Step {
  int k = 0;
  const Point* x = nullptr;
  const Point* y = nullptr;
  const Vec* db = nullptr;
};

/// Sphere2 step taken in ℝ³ and projected back radially, so paths cross the
/// poles without meeting the coordinate singularity.
inline Point sphere_step(const Model& model, const Point& x, double h, const Vec& db) {
  const auto& m = model.manifold;
  const Vec dv = model.potential.gradient(x);
  const double r = m.radius();
  const Eigen::Vector2d grad_frame(dv(0) / r, dv(1) / (r * std::sin(x(0))));
  const Eigen::Vector2d move = -h * grad_frame + std::sqrt(2.0) * Eigen::Vector2d(db(0), db(1));
  return Manifold::sphere_chart(m.sphere_embed(x) + Manifold::sphere_frame(x) * move, x(1));
}

/// Euler–Maruyama walk. Calls visit(step) for every completed step and
/// returns the number of completed steps; `exited` is set when X_{k+1}
/// leaves the chart domain (that step is not visited).
template <class Visit>
int euler_maruyama(const Model& model, const Point& x0, int steps, double h, const NormalStream* noise,
                   bool& exited, Visit&& visit) {
  const int n = model.manifold.dim();
  const double sqrt_h = std::sqrt(h);
  const double sqrt_2 = std::sqrt(2.0);
  Point x = x0;
  Vec drift(n), db = Vec::Zero(n);
  Mat frame(n, n);
  exited = false;
  const bool sphere = model.manifold.kind() == ManifoldKind::Sphere2;
  for (int k = 0; k < steps; ++k) {
    if (noise) {
      noise->fill(static_cast<std::uint64_t>(k), db, n);
      db *= sqrt_h;
    }
    Point y;
    if (sphere) {
      y = sphere_step(model, x, h, db);
    } else {
      drift_and_frame(model, x, drift, frame);
      y = x + h * drift + sqrt_2 * (frame * db);
    }
    if (!model.manifold.walk_contains(y)) {
      exited = true;
      return k;
    }
    visit(Step{k, &x, &y, &db});
    x = y;
  }
  return steps;
}

/// Simulates one path of the diffusion generated by L = Δ − ⟨∇V, ∇·⟩.
inline PathSample simulate_path(const Model& model, const Point& x0, double t, double h, std::uint64_t seed,
                                std::uint64_t path_index, const SimulationOptions& opt = {}) {
  const int steps = step_count(t, h);
  model.manifold.check_domain(x0);
  PathSample p;
  p.t = t;
  p.h = t / steps;
  p.seed = seed;
  p.path_index = path_index;
  p.points.reserve(static_cast<std::size_t>(steps) + 1);
  p.points.push_back(x0);
  if (opt.store_increments) p.increments.reserve(static_cast<std::size_t>(steps));
  const NormalStream stream(seed, path_index);
  const int done = euler_maruyama(model, x0, steps, p.h, opt.zero_noise ? nullptr : &stream, p.exited,
                                  [&](const Step& st) {
                                    p.points.push_back(*st.y);
                                    if (opt.store_increments) p.increments.push_back(*st.db);
                                  });
  if (p.exited) p.exit_index = static_cast<std::size_t>(done) + 1;
  return p;
}

enum class TransportMode { Parallel, Deformed, TwistedDeformed };

inline const char* to_string(TransportMode m) {
  switch (m) {
    case TransportMode::Parallel: return "parallel";
    case TransportMode::Deformed: return "deformed";
    case TransportMode::TwistedDeformed: return "twisted-deformed";
  }
  return "?";
}

inline TransportMode transport_mode_from_string(const std::string& s) {
  if (s == "parallel") return TransportMode::Parallel;
  if (s == "deformed") return TransportMode::Deformed;
  if (s == "twisted-deformed" || s == "twisted") return TransportMode::TwistedDeformed;
  throw ConfigError("unknown transport mode '" + s + "'");
}

/// Frame-component parallel step from x to y: E(y)⁻¹ Φ E(x), with Φ the
/// implicit-midpoint (Cayley) solution of dP = −Γ(X_mid)(dX) P, projected
/// onto the orthogonal group. On Sphere2 the step is exact transport along
/// the great circle through x and y.
inline Mat parallel_step(const Manifold& m, const Point& x, const Point& y) {
  const int n = m.dim();
  if (m.is_flat_chart()) return Mat::Identity(n, n);
  if (m.kind() == ManifoldKind::Sphere2) {
    const Eigen::Vector3d p = m.sphere_embed(x).normalized(), q = m.sphere_embed(y).normalized();
    const Eigen::Vector3d k = p.cross(q);
    Eigen::Matrix3d kx;
    kx << 0, -k(2), k(1), k(2), 0, -k(0), -k(1), k(0), 0;
    const Eigen::Matrix3d rot = Eigen::Matrix3d::Identity() + kx + kx * kx / (1.0 + p.dot(q));
    return Manifold::sphere_frame(y).transpose() * rot * Manifold::sphere_frame(x);
  }
  const Point mid = 0.5 * (x + y);
  const Point dx = y - x;
  const Rank3 gamma = m.christoffel_unchecked(mid);
  Mat a = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) a(i, k) += gamma[static_cast<std::size_t>(i)](j, k) * dx(j);
  const Mat id = Mat::Identity(n, n);
  const Mat phi = (id + 0.5 * a).partialPivLu().solve(id - 0.5 * a);
  const Mat ex = Manifold::frame_from_metric(m.metric_unchecked(x));
  const Mat ey = Manifold::frame_from_metric(m.metric_unchecked(y));
  return polar_orthogonal(Manifold::frame_inverse(ey) * phi * ex);
}

/// Streaming integrator of the parallel (W = ∥) or deformed transport
/// W_{k+1} = expm(−h 𝓜(X_k)) ∥_{k→k+1} W_k, in frame components.
class TransportStepper {
 public:
  TransportStepper(const Model& model, bool deformed)
      : model_(&model), deformed_(deformed), w_(Mat::Identity(model.manifold.dim(), model.manifold.dim())) {}

  void step(const Point& x, const Point& y, double h) {
    const Mat r = parallel_step(model_->manifold, x, y);
    if (!deformed_) {
      w_ = r * w_;
    } else {
      const Mat be = bakry_emery_tensor(*model_, x);
      if (h != cached_h_ || be.size() != cached_be_.size() || be != cached_be_) {
        cached_be_ = be;
        cached_h_ = h;
        cached_exp_ = expm(-h * be);
      }
      w_ = cached_exp_ * (r * w_);
    }
  }

  const Mat& map() const { return w_; }

 private:
  const Model* model_;
  bool deformed_;
  Mat w_;
  Mat cached_be_, cached_exp_;
  double cached_h_ = -1.0;
};

/// Frame components of B = (B*)ᵀ at x, checked for invertibility.
inline Mat twist_frame_B(const Manifold& m, const Twist& twist, const Point& x) {
  const Mat e = Manifold::frame_from_metric(m.metric_unchecked(x));
  const Mat bstar = e.transpose() * twist.coords(x) * e.inverse().transpose();
  const double cond = condition_number(bstar);
  if (!(cond <= twist.spec().max_condition)) {
    std::ostringstream os;
    os << "twist is singular (condition number " << cond << ")";
    throw TwistSingularError(os.str(), cond);
  }
  return bstar.transpose();
}

struct TransportResult {
  TransportMode mode = TransportMode::Parallel;
  std::vector<Mat> maps;  // frame components of T_{x₀}M → T_{X_k}M
  bool truncated = false;
  std::uint64_t seed = 0;
  std::uint64_t path_index = 0;
};

/// Transport along a stored path. The twisted-deformed maps are computed as
/// B(X_k) W_k B(x₀)⁻¹.
inline TransportResult transport(const Model& model, const PathSample& path, TransportMode mode,
                                 const Twist* twist = nullptr) {
  if (path.points.empty()) throw ConfigError("empty path");
  if (mode == TransportMode::TwistedDeformed && !twist)
    throw ConfigError("twisted-deformed transport needs a twist");
  const auto& m = model.manifold;
  TransportResult r;
  r.mode = mode;
  r.truncated = path.exited;
  r.seed = path.seed;
  r.path_index = path.path_index;
  r.maps.reserve(path.points.size());
  TransportStepper stepper(model, mode != TransportMode::Parallel);
  r.maps.push_back(stepper.map());
  for (std::size_t k = 0; k + 1 < path.points.size(); ++k) {
    stepper.step(path.points[k], path.points[k + 1], path.h);
    r.maps.push_back(stepper.map());
  }
  if (mode == TransportMode::TwistedDeformed) {
    std::size_t k = 0;
    try {
      const Mat b0_inv = twist_frame_B(m, *twist, path.points[0]).inverse();
      for (k = 0; k < r.maps.size(); ++k) r.maps[k] = twist_frame_B(m, *twist, path.points[k]) * r.maps[k] * b0_inv;
    } catch (const TwistSingularError& e) {
      throw TwistSingularError(std::string(e.what()) + " at step " + std::to_string(k), e.condition());
    }
  }
  return r;
}

/// CSV dump: path, t, coordinates, ‖W‖.
inline void write_paths_csv(std::ostream& os, const Manifold& m, const std::vector<PathSample>& paths,
                            const std::vector<TransportResult>& maps) {
  os << "path,t";
  for (const auto& names : m.coordinate_names()) os << ',' << names.front();
  os << ",norm_W\n";
  os.precision(17);
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const auto& path = paths[p];
    for (std::size_t k = 0; k < path.points.size(); ++k) {
      os << path.path_index << ',' << path.time(k);
      for (int i = 0; i < path.points[k].size(); ++i) os << ',' << path.points[k](i);
      os << ',';
      if (p < maps.size() && k < maps[p].maps.size()) os << operator_norm(maps[p].maps[k]);
      os << '\n';
    }
  }
}

}  // namespace intertwine

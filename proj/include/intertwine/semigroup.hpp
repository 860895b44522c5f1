#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "pathsim.hpp"
#include "rng.hpp"
#include "twist.hpp"

namespace intertwine {

/// Monte-Carlo estimate of a scalar. `std_error` is the sample standard
/// deviation over √n; exited paths count as zeros.
struct MCEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
  double exit_fraction = 0.0;
  std::uint64_t seed = 0;
  double t = 0.0;
  double h = 0.0;
};

/// Componentwise estimate of a vector quantity.
struct VectorEstimate {
  Eigen::VectorXd value, std_error;
  std::size_t n_paths = 0;
  double exit_fraction = 0.0;
  std::uint64_t seed = 0;
  double t = 0.0;
  double h = 0.0;

  MCEstimate component(int i) const {
    return {value(i), std_error(i), n_paths, exit_fraction, seed, t, h};
  }
};

namespace detail {

/// Running mean and centered second moment, merged with Chan's formula.
struct Moments {
  double count = 0.0;
  double exited = 0.0;
  Eigen::VectorXd mean, m2;

  explicit Moments(int m = 0) : mean(Eigen::VectorXd::Zero(m)), m2(Eigen::VectorXd::Zero(m)) {}

  void add(const Eigen::VectorXd& x, bool alive) {
    count += 1.0;
    if (!alive) exited += 1.0;
    const Eigen::VectorXd d = x - mean;
    mean += d / count;
    m2 += d.cwiseProduct(x - mean);
  }

  Moments operator+(const Moments& o) const {
    if (o.count == 0.0) return *this;
    if (count == 0.0) return o;
    Moments r(static_cast<int>(mean.size()));
    r.count = count + o.count;
    r.exited = exited + o.exited;
    const Eigen::VectorXd d = o.mean - mean;
    r.mean = mean + d * (o.count / r.count);
    r.m2 = m2 + o.m2 + d.cwiseProduct(d) * (count * o.count / r.count);
    return r;
  }
};

inline constexpr std::size_t kChunk = 1024;

/// Runs fn(path, out) for every path and reduces the m outputs. fn returns
/// false for an exited path (its outputs must be zero). The reduction order
/// is fixed, so results do not depend on the worker count.
template <class Fn>
Moments run_paths(std::size_t n, int m, Fn&& fn) {
  const std::size_t blocks = (n + kChunk - 1) / kChunk;
  std::vector<Moments> parts(blocks, Moments(m));
  parallel_for_blocks(blocks, [&](std::size_t b) {
    Moments acc(m);
    Eigen::VectorXd out(m);
    const std::size_t end = std::min(n, (b + 1) * kChunk);
    for (std::size_t p = b * kChunk; p < end; ++p) {
      out.setZero();
      const bool alive = fn(static_cast<std::uint64_t>(p), out);
      acc.add(out, alive);
    }
    parts[b] = acc;
  });
  return pairwise_sum(parts, Moments(m));
}

inline VectorEstimate finish(const Moments& mo, std::uint64_t seed, double t, double h) {
  if (mo.count < 2.0) throw ConfigError("Monte-Carlo estimate needs at least 2 paths");
  if (mo.exited == mo.count) throw DegenerateEstimateError("every path left the chart domain before time t");
  VectorEstimate e;
  e.value = mo.mean;
  e.std_error = (mo.m2 / (mo.count - 1.0)).cwiseMax(0.0).cwiseSqrt() / std::sqrt(mo.count);
  e.n_paths = static_cast<std::size_t>(mo.count);
  e.exit_fraction = mo.exited / mo.count;
  e.seed = seed;
  e.t = t;
  e.h = h;
  return e;
}

/// Position (and deformed transport) at a set of recorded steps.
struct Snapshot {
  bool alive = false;
  Point x;
  Mat w;
};

inline void run_path(const Model& model, const Point& x0, double h, const std::vector<int>& record,
                     const NormalStream* noise, bool with_transport, std::vector<Snapshot>& out) {
  out.assign(record.size(), Snapshot{});
  const int steps = record.empty() ? 0 : record.back();
  TransportStepper stepper(model, true);
  std::size_t next = 0;
  auto take = [&](int k, const Point& x) {
    while (next < record.size() && record[next] == k) {
      out[next].alive = true;
      out[next].x = x;
      if (with_transport) out[next].w = stepper.map();
      ++next;
    }
  };
  take(0, x0);
  bool exited = false;
  euler_maruyama(model, x0, steps, h, noise, exited, [&](const Step& st) {
    if (with_transport) stepper.step(*st.x, *st.y, h);
    take(st.k + 1, *st.y);
  });
}

inline void check_paths(std::size_t n) {
  if (n < 2) throw ConfigError("Monte-Carlo estimate needs at least 2 paths");
}

}  // namespace detail

/// A 1-form field given by coordinate components α_i.
struct OneForm {
  std::vector<ScalarField> components;

  static OneForm differential(const ScalarField& f) {
    OneForm a;
    for (int i = 0; i < f.n_coords(); ++i) a.components.push_back(f.derivative(i));
    return a;
  }
  static OneForm zero(int n) {
    OneForm a;
    for (int i = 0; i < n; ++i) a.components.push_back(ScalarField::constant(0.0, n));
    return a;
  }
  static OneForm parse(const Model& model, const std::vector<std::string>& exprs) {
    if (static_cast<int>(exprs.size()) != model.manifold.dim())
      throw ConfigError("1-form needs one component per coordinate");
    OneForm a;
    for (const auto& e : exprs) a.components.push_back(model.field(e));
    return a;
  }

  Vec coordinates_at(const Point& x) const {
    Vec v(static_cast<int>(components.size()));
    for (std::size_t i = 0; i < components.size(); ++i) v(static_cast<int>(i)) = components[i](x.data());
    return v;
  }
  /// Frame components Eᵀα.
  Vec frame_at(const Manifold& m, const Point& x) const {
    return Manifold::frame_from_metric(m.metric_unchecked(x)).transpose() * coordinates_at(x);
  }
};

/// P_t f(x) = E[f(X_t) 1_{t<τ}].
inline MCEstimate estimate_P(const Model& model, const ScalarField& f, const Point& x, double t, double h,
                             std::size_t n, std::uint64_t seed, const SimulationOptions& opt = {}) {
  detail::check_paths(n);
  model.manifold.check_domain(x);
  const int steps = step_count(t, h);
  const double he = t / steps;
  const std::vector<int> record{steps};
  auto mo = detail::run_paths(n, 1, [&](std::uint64_t p, Eigen::VectorXd& out) {
    const NormalStream stream(seed, p);
    std::vector<detail::Snapshot> snap;
    detail::run_path(model, x, he, record, opt.zero_noise ? nullptr : &stream, false, snap);
    if (!snap[0].alive) return false;
    out(0) = f(snap[0].x.data());
    return true;
  });
  return detail::finish(mo, seed, t, he).component(0);
}

/// Frame components of the 1-form field α at a point.
using FrameForm = std::function<Vec(const Point&)>;

/// Frame components of Q_t α(x) (or Q_t^B α(x) with a twist) at several
/// times, from one set of paths. Component a pairs α(X_t) with W_t e_a.
inline std::vector<VectorEstimate> estimate_Q_components(const Model& model, const Twist* twist,
                                                         const FrameForm& alpha, const Point& x,
                                                         const std::vector<double>& times, double h,
                                                         std::size_t n, std::uint64_t seed,
                                                         const SimulationOptions& opt = {}) {
  detail::check_paths(n);
  model.manifold.check_domain(x);
  if (times.empty()) throw ConfigError("no estimation times");
  double t_max = 0.0;
  for (double t : times) {
    if (!(t >= 0.0)) throw ConfigError("estimation times must be non-negative");
    t_max = std::max(t_max, t);
  }
  const int steps = t_max > 0.0 ? step_count(t_max, h) : 0;
  const double he = t_max > 0.0 ? t_max / steps : h;
  std::vector<int> record;
  for (double t : times) record.push_back(static_cast<int>(std::lround(t / he)));
  std::vector<int> sorted = record;
  std::sort(sorted.begin(), sorted.end());
  const auto& m = model.manifold;
  const int d = m.dim();
  Mat b0_inv = Mat::Identity(d, d);
  if (twist) b0_inv = twist_frame_B(m, *twist, x).inverse();
  const int width = d * static_cast<int>(times.size());

  auto mo = detail::run_paths(n, width, [&](std::uint64_t p, Eigen::VectorXd& out) {
    const NormalStream stream(seed, p);
    std::vector<detail::Snapshot> snap;
    detail::run_path(model, x, he, sorted, opt.zero_noise ? nullptr : &stream, true, snap);
    bool alive_at_end = true;
    for (std::size_t i = 0; i < times.size(); ++i) {
      const auto pos = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), record[i]) - sorted.begin());
      const auto& s = snap[pos];
      if (!s.alive) {
        alive_at_end = false;
        continue;
      }
      Mat w = s.w;
      if (twist) w = twist_frame_B(m, *twist, s.x) * w * b0_inv;
      const Vec a = alpha(s.x);
      out.segment(static_cast<int>(i) * d, d) = w.transpose() * a;
    }
    return alive_at_end;
  });
  const auto all = detail::finish(mo, seed, t_max, he);
  std::vector<VectorEstimate> res;
  for (std::size_t i = 0; i < times.size(); ++i) {
    VectorEstimate e = all;
    e.value = all.value.segment(static_cast<int>(i) * d, d);
    e.std_error = all.std_error.segment(static_cast<int>(i) * d, d);
    e.t = times[i];
    res.push_back(e);
  }
  return res;
}

inline std::vector<VectorEstimate> estimate_Q_components(const Model& model, const Twist* twist,
                                                         const OneForm& alpha, const Point& x,
                                                         const std::vector<double>& times, double h,
                                                         std::size_t n, std::uint64_t seed,
                                                         const SimulationOptions& opt = {}) {
  const auto& m = model.manifold;
  return estimate_Q_components(
      model, twist, [&](const Point& y) { return alpha.frame_at(m, y); }, x, times, h, n, seed, opt);
}

/// ⟨Q_t α, v⟩(x), or ⟨Q_t^B α, v⟩ with a twist; v in frame components.
inline MCEstimate estimate_Q(const Model& model, const Twist* twist, const OneForm& alpha, const Point& x,
                             const Vec& v, double t, double h, std::size_t n, std::uint64_t seed,
                             const SimulationOptions& opt = {}) {
  if (v.size() != model.manifold.dim()) throw ConfigError("tangent vector has wrong dimension");
  detail::check_paths(n);
  model.manifold.check_domain(x);
  const int steps = step_count(t, h);
  const double he = t / steps;
  const auto& m = model.manifold;
  Vec v0 = v;
  if (twist) v0 = twist_frame_B(m, *twist, x).inverse() * v;
  const std::vector<int> record{steps};
  auto mo = detail::run_paths(n, 1, [&](std::uint64_t p, Eigen::VectorXd& out) {
    const NormalStream stream(seed, p);
    std::vector<detail::Snapshot> snap;
    detail::run_path(model, x, he, record, opt.zero_noise ? nullptr : &stream, true, snap);
    if (!snap[0].alive) return false;
    Vec wv = snap[0].w * v0;
    if (twist) wv = twist_frame_B(m, *twist, snap[0].x) * wv;
    out(0) = alpha.frame_at(m, snap[0].x).dot(wv);
    return true;
  });
  return detail::finish(mo, seed, t, he).component(0);
}

struct IntertwiningResult {
  Eigen::VectorXd lhs, rhs;       // (B*)⁻¹ dP_t f(x) and Q_t^B((B*)⁻¹ df)(x), frame components
  Eigen::VectorXd residual;       // per-path mean of lhs − rhs
  Eigen::VectorXd std_error;      // stderr of the paired differences
  Eigen::VectorXd tolerance;      // max(3·stderr, 1e−2)
  bool pass = false;
  double exit_fraction = 0.0;
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;
  double t = 0.0, h = 0.0, delta = 0.0;
  GateResult gate;

  double max_abs_residual() const { return residual.cwiseAbs().maxCoeff(); }
};

inline constexpr double kResidualFloor = 1e-2;

/// Residual of (B⁻¹)* dP_t f = Q_t^B((B⁻¹)* df) at x. The derivative on the
/// left is a central difference in each chart coordinate (step δ) of P_t f,
/// driven by the same noise as the right side.
inline IntertwiningResult intertwining_residual(const Model& model, const Twist& twist, BoundMode mode,
                                                const ScalarField& f, const Point& x, double t, double h,
                                                std::size_t n, std::uint64_t seed, double delta = 1e-2,
                                                double epsilon = 0.1) {
  detail::check_paths(n);
  if (!(delta > 0.0)) throw ConfigError("finite-difference step must be positive");
  IntertwiningResult r;
  r.gate = hypothesis_gate(model, twist, mode, epsilon);
  if (!r.gate.ok) {
    if (mode == BoundMode::Plain) throw ModeError(r.gate.message);
    throw PreconditionError(r.gate.message);
  }
  const auto& m = model.manifold;
  m.check_domain(x);
  const int d = m.dim();
  std::vector<Point> shifted;
  for (int i = 0; i < d; ++i)
    for (double s : {1.0, -1.0}) {
      Point y = x;
      y(i) += s * delta;
      m.check_domain(y);
      shifted.push_back(y);
    }
  const int steps = step_count(t, h);
  const double he = t / steps;
  const Mat ex = Manifold::frame_from_metric(m.metric_unchecked(x));
  const Mat bstar_x_inv = twist_frame_B(m, twist, x).transpose().inverse();
  const Mat b_x_inv = twist_frame_B(m, twist, x).inverse();
  const OneForm df = OneForm::differential(f);
  const std::vector<int> record{steps};

  auto mo = detail::run_paths(n, 3 * d, [&](std::uint64_t p, Eigen::VectorXd& out) {
    const NormalStream stream(seed, p);
    std::vector<detail::Snapshot> snap;
    Vec grad(d);
    for (int i = 0; i < d; ++i) {
      double fp = 0.0, fm = 0.0;
      detail::run_path(model, shifted[static_cast<std::size_t>(2 * i)], he, record, &stream, false, snap);
      if (snap[0].alive) fp = f(snap[0].x.data());
      detail::run_path(model, shifted[static_cast<std::size_t>(2 * i + 1)], he, record, &stream, false, snap);
      if (snap[0].alive) fm = f(snap[0].x.data());
      grad(i) = (fp - fm) / (2.0 * delta);
    }
    const Vec lhs = bstar_x_inv * (ex.transpose() * grad);
    detail::run_path(model, x, he, record, &stream, true, snap);
    Vec rhs = Vec::Zero(d);
    if (snap[0].alive) {
      const Point& y = snap[0].x;
      const Mat b_y = twist_frame_B(m, twist, y);
      const Vec alpha = b_y.transpose().inverse() * df.frame_at(m, y);
      const Mat wb = b_y * snap[0].w * b_x_inv;
      rhs = wb.transpose() * alpha;
    }
    out.segment(0, d) = lhs;
    out.segment(d, d) = rhs;
    out.segment(2 * d, d) = lhs - rhs;
    return snap[0].alive;
  });
  const auto e = detail::finish(mo, seed, t, he);
  r.lhs = e.value.segment(0, d);
  r.rhs = e.value.segment(d, d);
  r.residual = e.value.segment(2 * d, d);
  r.std_error = e.std_error.segment(2 * d, d);
  r.tolerance = (3.0 * r.std_error).cwiseMax(kResidualFloor);
  r.pass = (r.residual.cwiseAbs().array() <= r.tolerance.array()).all();
  r.exit_fraction = e.exit_fraction;
  r.n_paths = e.n_paths;
  r.seed = seed;
  r.t = t;
  r.h = he;
  r.delta = delta;
  return r;
}

}  // namespace intertwine

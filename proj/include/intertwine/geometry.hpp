#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "expr.hpp"
#include "linalg.hpp"

namespace intertwine {

/// Chart coordinates of a point. Every manifold uses a single chart.
using Point = Vec;

enum class ManifoldKind { Euclidean, Circle, FlatTorus, Sphere2, HyperbolicHalfPlane, Interval, UserChart };

/// Coordinate box. Periodic coordinates are unbounded for domain checks.
struct CoordBox {
  std::vector<double> lo, hi;
  std::vector<bool> periodic;

  int dim() const { return static_cast<int>(lo.size()); }
};

/// Metric, frame, connection and curvature at one point. Frame E satisfies
/// Eᵀ g E = I; a vector with frame components v̂ has coordinates E v̂ and a
/// 1-form with coordinates α has frame components Eᵀ α.
struct MetricData {
  Mat g;
  Mat g_inv;
  Mat frame;
  Mat frame_inv;
  Rank3 christoffel;  // christoffel[i](j, k) = Γ^i_{jk}
  Mat ricci_sharp;    // frame components
};

class Manifold {
 public:
  static Manifold euclidean(int n) {
    check_dim(n);
    Manifold m(ManifoldKind::Euclidean, n);
    m.box_ = unbounded(n);
    m.names_ = default_names(n);
    return m;
  }

  /// Circle of given radius in the angle chart, metric r².
  static Manifold circle(double radius = 1.0) {
    if (!(radius > 0.0)) throw ConfigError("circle radius must be positive");
    Manifold m(ManifoldKind::Circle, 1);
    m.radius_ = radius;
    m.box_ = {{0.0}, {2.0 * std::numbers::pi}, {true}};
    m.names_ = {{"x", "x1", "theta", "t"}};
    return m;
  }

  /// Flat torus [0, 2π)^n with the identity metric.
  static Manifold flat_torus(int n) {
    check_dim(n);
    Manifold m(ManifoldKind::FlatTorus, n);
    m.box_ = {std::vector<double>(static_cast<std::size_t>(n), 0.0),
              std::vector<double>(static_cast<std::size_t>(n), 2.0 * std::numbers::pi),
              std::vector<bool>(static_cast<std::size_t>(n), true)};
    m.names_ = default_names(n);
    return m;
  }

  /// Round 2-sphere in (colatitude θ, longitude φ); θ kept `margin` away
  /// from the poles.
  static Manifold sphere2(double radius = 1.0, double margin = 0.1) {
    if (!(radius > 0.0)) throw ConfigError("sphere radius must be positive");
    if (!(margin > 0.0 && margin < std::numbers::pi / 2))
      throw ConfigError("sphere pole margin must lie in (0, pi/2)");
    Manifold m(ManifoldKind::Sphere2, 2);
    m.radius_ = radius;
    m.box_ = {{margin, 0.0}, {std::numbers::pi - margin, 2.0 * std::numbers::pi}, {false, true}};
    m.names_ = {{"theta", "x1"}, {"phi", "x2"}};
    return m;
  }

  /// Upper half-plane y > 0 with g = y⁻² I (curvature −1).
  static Manifold hyperbolic_half_plane(double y_min = 1e-3, double y_max = 1e3) {
    if (!(y_min > 0.0 && y_max > y_min)) throw ConfigError("half-plane needs 0 < y_min < y_max");
    Manifold m(ManifoldKind::HyperbolicHalfPlane, 2);
    m.box_ = {{-std::numeric_limits<double>::infinity(), y_min},
              {std::numeric_limits<double>::infinity(), y_max},
              {false, false}};
    m.names_ = {{"x", "x1"}, {"y", "x2"}};
    return m;
  }

  static Manifold interval(double a, double b) {
    if (!(b > a)) throw ConfigError("interval needs a < b");
    Manifold m(ManifoldKind::Interval, 1);
    m.box_ = {{a}, {b}, {false}};
    m.names_ = {{"x", "x1"}};
    return m;
  }

  /// Chart with a user metric given as expression strings (row-major,
  /// symmetric). Christoffel symbols and Ricci curvature come from central
  /// finite differences.
  static Manifold user_chart(std::vector<std::string> coord_names,
                             const std::vector<std::vector<std::string>>& metric, CoordBox box) {
    const int n = static_cast<int>(coord_names.size());
    check_dim(n);
    if (static_cast<int>(metric.size()) != n || box.dim() != n)
      throw ConfigError("user chart metric/box dimension mismatch");
    Manifold m(ManifoldKind::UserChart, n);
    for (int i = 0; i < n; ++i) {
      m.names_.push_back({coord_names[static_cast<std::size_t>(i)], "x" + std::to_string(i + 1)});
    }
    m.box_ = std::move(box);
    const expr::SymbolTable symbols(m.names_);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(metric[static_cast<std::size_t>(i)].size()) != n)
        throw ConfigError("user chart metric must be square");
      for (int j = 0; j < n; ++j)
        m.metric_exprs_.emplace_back(metric[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], symbols);
    }
    m.metric_text_ = metric;
    return m;
  }

  ManifoldKind kind() const { return kind_; }
  int dim() const { return dim_; }
  double radius() const { return radius_; }
  const CoordBox& domain() const { return box_; }
  const std::vector<std::vector<std::string>>& coordinate_names() const { return names_; }
  const std::vector<std::vector<std::string>>& metric_text() const { return metric_text_; }

  /// Γ ≡ 0 in the chart.
  bool is_flat_chart() const {
    return kind_ == ManifoldKind::Euclidean || kind_ == ManifoldKind::Circle ||
           kind_ == ManifoldKind::FlatTorus || kind_ == ManifoldKind::Interval;
  }

  /// g ≡ I in the chart (flat and unit-scaled).
  bool has_identity_metric() const {
    return kind_ == ManifoldKind::Euclidean || kind_ == ManifoldKind::FlatTorus ||
           kind_ == ManifoldKind::Interval || (kind_ == ManifoldKind::Circle && radius_ == 1.0);
  }

  expr::SymbolTable symbols(const std::vector<std::string>& params = {}) const {
    return expr::SymbolTable(names_, params);
  }

  std::string name() const {
    std::ostringstream os;
    switch (kind_) {
      case ManifoldKind::Euclidean: os << "euclidean(" << dim_ << ")"; break;
      case ManifoldKind::Circle: os << "circle(" << radius_ << ")"; break;
      case ManifoldKind::FlatTorus: os << "flat-torus(" << dim_ << ")"; break;
      case ManifoldKind::Sphere2: os << "sphere2"; break;
      case ManifoldKind::HyperbolicHalfPlane: os << "hyperbolic-half-plane"; break;
      case ManifoldKind::Interval: os << "interval(" << box_.lo[0] << "," << box_.hi[0] << ")"; break;
      case ManifoldKind::UserChart: os << "user-chart(" << dim_ << ")"; break;
    }
    return os.str();
  }

  bool contains(const Point& x) const {
    for (int i = 0; i < dim_; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (!std::isfinite(x(i))) return false;
      if (box_.periodic[k]) continue;
      if (x(i) < box_.lo[k] || x(i) > box_.hi[k]) return false;
    }
    return true;
  }

  /// Domain of simulated paths. Sphere paths are stepped in the embedding
  /// and may pass through the pole margins; other charts use contains().
  bool walk_contains(const Point& y) const {
    if (kind_ == ManifoldKind::Sphere2) return y.allFinite() && y(0) > 0.0 && y(0) < std::numbers::pi;
    return contains(y);
  }

  /// Sphere2 only: the point of ℝ³ with coordinates x.
  Eigen::Vector3d sphere_embed(const Point& x) const {
    const double s = std::sin(x(0));
    return radius_ * Eigen::Vector3d(s * std::cos(x(1)), s * std::sin(x(1)), std::cos(x(0)));
  }

  /// Sphere2 only: the orthonormal frame (e_θ, e_φ) at x as columns in ℝ³.
  static Eigen::Matrix<double, 3, 2> sphere_frame(const Point& x) {
    const double ct = std::cos(x(0)), st = std::sin(x(0)), cp = std::cos(x(1)), sp = std::sin(x(1));
    Eigen::Matrix<double, 3, 2> f;
    f << ct * cp, -sp, ct * sp, cp, -st, 0.0;
    return f;
  }

  /// Sphere2 only: coordinates of the radial projection of q, with φ chosen
  /// within π of phi_ref.
  static Point sphere_chart(const Eigen::Vector3d& q, double phi_ref) {
    Point y(2);
    y(0) = std::atan2(std::hypot(q(0), q(1)), q(2));
    y(1) = phi_ref + std::remainder(std::atan2(q(1), q(0)) - phi_ref, 2.0 * std::numbers::pi);
    return y;
  }

  void check_domain(const Point& x) const {
    if (x.size() != dim_)
      throw DomainError("point has " + std::to_string(x.size()) + " coordinates, manifold " + name() +
                        " has dimension " + std::to_string(dim_));
    for (int i = 0; i < dim_; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (!std::isfinite(x(i)) ||
          (!box_.periodic[k] && (x(i) < box_.lo[k] || x(i) > box_.hi[k]))) {
        std::ostringstream os;
        os << "coordinate " << names_[k][0] << " = " << x(i) << " outside chart domain ["
           << box_.lo[k] << ", " << box_.hi[k] << "] of " << name();
        throw DomainError(os.str());
      }
    }
  }

  Mat metric_at(const Point& x) const {
    check_domain(x);
    return metric_unchecked(x);
  }

  Rank3 christoffel_at(const Point& x) const {
    check_domain(x);
    return christoffel_unchecked(x);
  }

  Mat frame_at(const Point& x) const {
    check_domain(x);
    return frame_from_metric(metric_unchecked(x));
  }

  Mat ricci_sharp_at(const Point& x) const {
    check_domain(x);
    return ricci_unchecked(x);
  }

  MetricData metric_data(const Point& x) const {
    check_domain(x);
    MetricData d;
    d.g = metric_unchecked(x);
    d.frame = frame_from_metric(d.g);
    d.frame_inv = frame_inverse(d.frame);
    d.g_inv = d.frame * d.frame.transpose();
    d.christoffel = christoffel_unchecked(x);
    d.ricci_sharp = ricci_unchecked(x);
    return d;
  }

  /// E = L⁻ᵀ for the Cholesky factor g = L Lᵀ.
  static Mat frame_from_metric(const Mat& g) {
    const int n = static_cast<int>(g.rows());
    if (is_diagonal(g)) {
      Mat e = Mat::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        if (!(g(i, i) > 0.0)) throw NumericError("metric is not positive definite");
        e(i, i) = 1.0 / std::sqrt(g(i, i));
      }
      return e;
    }
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success) throw NumericError("metric is not positive definite");
    const Mat lt = llt.matrixU();
    return lt.triangularView<Eigen::Upper>().solve(Mat::Identity(n, n));
  }

  /// E⁻¹ for a frame produced by frame_from_metric (upper triangular).
  static Mat frame_inverse(const Mat& e) {
    const int n = static_cast<int>(e.rows());
    if (is_diagonal(e)) return Mat(e.diagonal().cwiseInverse().asDiagonal());
    return e.triangularView<Eigen::Upper>().solve(Mat::Identity(n, n));
  }

  Mat metric_unchecked(const Point& x) const {
    switch (kind_) {
      case ManifoldKind::Euclidean:
      case ManifoldKind::FlatTorus:
      case ManifoldKind::Interval: return Mat::Identity(dim_, dim_);
      case ManifoldKind::Circle: return Mat::Constant(1, 1, radius_ * radius_);
      case ManifoldKind::Sphere2: {
        const double s = std::sin(x(0));
        Mat g = Mat::Zero(2, 2);
        g(0, 0) = radius_ * radius_;
        g(1, 1) = radius_ * radius_ * s * s;
        return g;
      }
      case ManifoldKind::HyperbolicHalfPlane: {
        const double y = x(1);
        return Mat::Identity(2, 2) / (y * y);
      }
      case ManifoldKind::UserChart: {
        Mat g(dim_, dim_);
        for (int i = 0; i < dim_; ++i)
          for (int j = 0; j < dim_; ++j)
            g(i, j) = metric_exprs_[static_cast<std::size_t>(i * dim_ + j)](x.data());
        if (!g.allFinite()) throw NumericError("user metric is not finite");
        return g;
      }
    }
    return Mat::Identity(dim_, dim_);
  }

  Rank3 christoffel_unchecked(const Point& x) const {
    Rank3 gamma(static_cast<std::size_t>(dim_), Mat::Zero(dim_, dim_));
    switch (kind_) {
      case ManifoldKind::Sphere2: {
        const double s = std::sin(x(0)), c = std::cos(x(0));
        gamma[0](1, 1) = -s * c;
        gamma[1](0, 1) = gamma[1](1, 0) = c / s;
        break;
      }
      case ManifoldKind::HyperbolicHalfPlane: {
        const double y = x(1);
        gamma[0](0, 1) = gamma[0](1, 0) = -1.0 / y;
        gamma[1](0, 0) = 1.0 / y;
        gamma[1](1, 1) = -1.0 / y;
        break;
      }
      case ManifoldKind::UserChart: return christoffel_fd(x);
      default: break;
    }
    return gamma;
  }

  Mat ricci_unchecked(const Point& x) const {
    switch (kind_) {
      case ManifoldKind::Sphere2: return Mat::Identity(2, 2) / (radius_ * radius_);
      case ManifoldKind::HyperbolicHalfPlane: return -Mat::Identity(2, 2);
      case ManifoldKind::UserChart: return ricci_fd(x);
      default: return Mat::Zero(dim_, dim_);
    }
  }

  /// Γ^i_{jk} from central differences of g, step 1e-5(1+|x_k|).
  Rank3 christoffel_fd(const Point& x) const {
    const int n = dim_;
    Rank3 dg(static_cast<std::size_t>(n));  // dg[k] = ∂_k g
    for (int k = 0; k < n; ++k) {
      const double h = 1e-5 * (1.0 + std::abs(x(k)));
      Point xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      dg[static_cast<std::size_t>(k)] = (metric_unchecked(xp) - metric_unchecked(xm)) / (2.0 * h);
    }
    const Mat g_inv = metric_unchecked(x).inverse();
    if (!g_inv.allFinite()) throw NumericError("metric is not invertible");
    Rank3 gamma(static_cast<std::size_t>(n), Mat::Zero(n, n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = j; k < n; ++k) {
          double s = 0.0;
          for (int l = 0; l < n; ++l)
            s += g_inv(i, l) * (dg[static_cast<std::size_t>(j)](l, k) + dg[static_cast<std::size_t>(k)](l, j) -
                                dg[static_cast<std::size_t>(l)](j, k));
          gamma[static_cast<std::size_t>(i)](j, k) = gamma[static_cast<std::size_t>(i)](k, j) = 0.5 * s;
        }
    return gamma;
  }

  /// Ricci from finite differences of Γ, step 1e-4(1+|x_k|):
  /// R_jk = ∂_i Γ^i_jk − ∂_k Γ^i_ij + Γ^i_ip Γ^p_jk − Γ^i_kp Γ^p_ij.
  Mat ricci_fd(const Point& x) const {
    const int n = dim_;
    std::vector<Rank3> dgamma(static_cast<std::size_t>(n));  // dgamma[l][i](j,k) = ∂_l Γ^i_jk
    for (int l = 0; l < n; ++l) {
      const double h = 1e-4 * (1.0 + std::abs(x(l)));
      Point xp = x, xm = x;
      xp(l) += h;
      xm(l) -= h;
      const Rank3 gp = christoffel_unchecked(xp), gm = christoffel_unchecked(xm);
      dgamma[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i)
        dgamma[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)] =
            (gp[static_cast<std::size_t>(i)] - gm[static_cast<std::size_t>(i)]) / (2.0 * h);
    }
    const Rank3 gamma = christoffel_unchecked(x);
    auto G = [&](int i, int j, int k) { return gamma[static_cast<std::size_t>(i)](j, k); };
    auto dG = [&](int l, int i, int j, int k) {
      return dgamma[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)](j, k);
    };
    Mat r = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
          s += dG(i, i, j, k) - dG(k, i, i, j);
          for (int p = 0; p < n; ++p) s += G(i, i, p) * G(p, j, k) - G(i, k, p) * G(p, i, j);
        }
        r(j, k) = s;
      }
    const Mat e = frame_from_metric(metric_unchecked(x));
    return sym_part(e.transpose() * r * e);
  }

 private:
  Manifold(ManifoldKind kind, int dim) : kind_(kind), dim_(dim) {}

  static void check_dim(int n) {
    if (n < 1 || n > kMaxDim)
      throw ConfigError("manifold dimension must be in [1, " + std::to_string(kMaxDim) + "]");
  }

  static CoordBox unbounded(int n) {
    const double inf = std::numeric_limits<double>::infinity();
    return {std::vector<double>(static_cast<std::size_t>(n), -inf),
            std::vector<double>(static_cast<std::size_t>(n), inf),
            std::vector<bool>(static_cast<std::size_t>(n), false)};
  }

  static std::vector<std::vector<std::string>> default_names(int n) {
    static const char* short_names[] = {"x", "y", "z"};
    std::vector<std::vector<std::string>> names;
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> aliases{"x" + std::to_string(i + 1)};
      if (n <= 3) aliases.insert(aliases.begin(), short_names[i]);
      names.push_back(aliases);
    }
    return names;
  }

  ManifoldKind kind_;
  int dim_;
  double radius_ = 1.0;
  CoordBox box_;
  std::vector<std::vector<std::string>> names_;
  std::vector<SmoothFunction> metric_exprs_;
  std::vector<std::vector<std::string>> metric_text_;
};

}  // namespace intertwine

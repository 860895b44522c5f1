#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "intertwine/twist.hpp"

using namespace intertwine;

namespace {

Point pt(std::initializer_list<double> v) {
  Point p(static_cast<int>(v.size()));
  int i = 0;
  for (double c : v) p(i++) = c;
  return p;
}

Model gauss2(int points = 21) {
  return Model::make(Manifold::euclidean(2), "(x^2 + y^2)/2", Region::box({-2, -2}, {2, 2}, {points, points}));
}

// Flat-space brute force: T(x) sampled by a lambda, all derivatives by
// plain central differences, potential given by its gradient.
struct FlatOracle {
  std::function<Mat(const Point&)> T;
  std::function<Vec(const Point&)> grad_v;
  std::function<Mat(const Point&)> hess_v;
  double h = 1e-4;

  Mat d(const Point& x, int k) const {
    Point a = x, b = x;
    a(k) += h;
    b(k) -= h;
    return (T(a) - T(b)) / (2 * h);
  }
  Mat dd(const Point& x, int k) const {
    Point a = x, b = x;
    a(k) += h;
    b(k) -= h;
    return (T(a) - 2 * T(x) + T(b)) / (h * h);
  }
  Mat penalty(const Point& x) const {
    const int n = static_cast<int>(x.size());
    Mat np = Mat::Zero(n, n);
    const Mat ti = T(x).inverse();
    for (int k = 0; k < n; ++k) {
      const Mat a = d(x, k) * ti;
      const Mat b = a.transpose() - a;
      np += 0.25 * b.transpose() * b;
    }
    return np;
  }
  Mat similar(const Point& x) const {
    const int n = static_cast<int>(x.size());
    Mat lap = Mat::Zero(n, n);
    const Vec g = grad_v(x);
    for (int k = 0; k < n; ++k) lap += dd(x, k) - g(k) * d(x, k);
    return hess_v(x) - lap * T(x).inverse();
  }
};

}  // namespace

TEST(Twist, IdentityTwistIsTrivial) {
  auto m = Model::make(Manifold::sphere2(), "cos(theta)", Region::box({0.5, 0}, {2.5, 6}, {5, 5}));
  Twist id(m.manifold, TwistSpec::identity());
  auto ev = twist_eval(m, id, pt({1.1, 0.3}));
  EXPECT_EQ((ev.B - Mat::Identity(2, 2)).norm(), 0.0);
  EXPECT_EQ((ev.Bstar - Mat::Identity(2, 2)).norm(), 0.0);
  EXPECT_EQ(frobenius(ev.nabla_bstar), 0.0);
  EXPECT_EQ(frobenius(ev.defect), 0.0);
  EXPECT_EQ(ev.penalty.norm(), 0.0);
  EXPECT_NEAR((ev.potential - ev.bakry_emery).norm(), 0.0, 1e-15);
}

TEST(Twist, ScalarTwistFlat) {
  auto m = Model::make(Manifold::euclidean(1), "0", Region::interval(-2, 2, 21));
  Twist t(m.manifold, TwistSpec::scalar("exp(-x)"));
  for (double x : {-1.5, 0.0, 0.8}) {
    auto ev = twist_eval(m, t, pt({x}));
    EXPECT_EQ(frobenius(ev.defect), 0.0);
    EXPECT_NEAR(ev.potential(0, 0), -1.0, 1e-13);
  }
}

TEST(Twist, ShearDefectAndPenalty) {
  auto m = gauss2();
  Twist t(m.manifold, TwistSpec::shear("x"));
  const Point x = pt({0.6, -0.4});
  auto ev = twist_eval(m, t, x);
  Mat b1(2, 2);
  b1 << 0, -1, 1, 0;
  EXPECT_NEAR((ev.defect[0] - b1).norm(), 0.0, 1e-12);
  EXPECT_NEAR(ev.defect[1].norm(), 0.0, 1e-12);
  EXPECT_NEAR((ev.penalty - 0.25 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.0, 1e-8);

  FlatOracle o{[](const Point& y) {
                 Mat T = Mat::Identity(2, 2);
                 T(0, 1) = y(0);
                 return T;
               },
               [](const Point& y) { return Vec(y); }, [](const Point&) { return Mat(Mat::Identity(2, 2)); }};
  EXPECT_NEAR((ev.penalty - o.penalty(x)).cwiseAbs().maxCoeff(), 0.0, 1e-8);
}

TEST(Twist, ShearTildeBoundMatchesBruteForce) {
  auto m = gauss2();
  Twist t(m.manifold, TwistSpec::shear("x"));
  FlatOracle o{[](const Point& y) {
                 Mat T = Mat::Identity(2, 2);
                 T(0, 1) = y(0);
                 return T;
               },
               [](const Point& y) { return Vec(y); }, [](const Point&) { return Mat(Mat::Identity(2, 2)); }};
  double brute = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.region.size(); ++i) {
    const Point x = m.region.point(i);
    const Mat s = o.similar(x);
    brute = std::min(brute, min_sym_eigenvalue(sym_part(s) - o.penalty(x)));
    // closed form: 3/4 − |x₁|/2
    EXPECT_NEAR(tilde_integrand(twist_eval(m, t, x)), 0.75 - std::abs(x(0)) / 2, 1e-10);
  }
  auto r = bound_scan(m, t, BoundMode::Tilde);
  EXPECT_NEAR(r.rho_tilde_B, brute, 1e-5);
  EXPECT_NEAR(r.rho_tilde_B, -0.25, 1e-10);
  EXPECT_NEAR(r.defect_norm, std::sqrt(2.0), 1e-10);
  EXPECT_THROW(bound_scan(m, t, BoundMode::Plain), ModeError);
}

TEST(Twist, TensorLaplacianScalarExactAndFd) {
  auto m = Model::make(Manifold::euclidean(1), "x^4/4", Region::interval(-1, 1, 21));
  Twist exact(m.manifold, TwistSpec::scalar("exp(-x^2/2)"), DerivativeMode::Exact);
  Twist fd(m.manifold, TwistSpec::scalar("exp(-x^2/2)"), DerivativeMode::FiniteDifference);
  for (double x : {-0.9, -0.3, 0.0, 0.5, 1.0}) {
    const double lam = std::exp(-x * x / 2);
    const double want = x * x - 1 + std::pow(x, 4);
    EXPECT_NEAR(tensor_laplacian(m, exact, pt({x}))(0, 0) / lam, want, 1e-12);
    EXPECT_NEAR(tensor_laplacian(m, fd, pt({x}))(0, 0) / lam, want, 1e-5);
  }
}

TEST(Twist, ConstantTwistHasZeroLaplacian) {
  auto m = gauss2();
  Mat q(2, 2);
  q << 2, 1, 0, 3;
  Twist t(m.manifold, TwistSpec::constant(q));
  EXPECT_NEAR(tensor_laplacian(m, t, pt({0.4, 1.0})).norm(), 0.0, 1e-14);
  EXPECT_TRUE(symmetry_criterion(m, t).holds);
}

TEST(Twist, ScalarTwistOnCurvedChartAgreesAcrossDerivativeModes) {
  auto m = Model::make(Manifold::sphere2(), "cos(theta)^2", Region::box({0.5, 0}, {2.5, 6}, {5, 5}));
  Twist exact(m.manifold, TwistSpec::scalar("exp(0.3*cos(theta))"), DerivativeMode::Exact);
  Twist fd(m.manifold, TwistSpec::scalar("exp(0.3*cos(theta))"), DerivativeMode::FiniteDifference);
  for (double th : {0.7, 1.4, 2.2}) {
    const Point x = pt({th, 0.5});
    auto a = twist_eval(m, exact, x), b = twist_eval(m, fd, x);
    EXPECT_NEAR((a.tensor_lap - b.tensor_lap).cwiseAbs().maxCoeff(), 0.0, 1e-6);
    EXPECT_NEAR((a.similar - b.similar).cwiseAbs().maxCoeff(), 0.0, 1e-6);
    EXPECT_NEAR(frobenius(b.defect), 0.0, 1e-8);
  }
}

TEST(Twist, ConjugationPreservesSpectrum) {
  auto m = Model::make(Manifold::hyperbolic_half_plane(), "x^2 + (y-1)^2",
                       Region::box({-1, 0.5}, {1, 2}, {5, 5}));
  Twist t(m.manifold, TwistSpec::user_matrix({"1 + x^2", "0.3*y", "sin(x)", "2 + y"}));
  std::mt19937 gen(5);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int i = 0; i < 10; ++i) {
    auto ev = twist_eval(m, t, pt({u(gen) - 1.2, u(gen)}));
    Eigen::VectorXcd a = Eigen::MatrixXd(ev.conjugated).eigenvalues();
    Eigen::VectorXd b = sym_eigenvalues(ev.bakry_emery);
    std::vector<double> ar{a(0).real(), a(1).real()};
    std::sort(ar.begin(), ar.end());
    EXPECT_NEAR(ar[0], b(0), 1e-8);
    EXPECT_NEAR(ar[1], b(1), 1e-8);
    for (const auto& d : ev.defect) EXPECT_NEAR((d + d.transpose()).norm(), 0.0, 1e-14);
    EXPECT_GE(min_sym_eigenvalue(ev.penalty), -1e-10);
    EXPECT_NEAR((ev.penalty - ev.penalty.transpose()).norm(), 0.0, 1e-10);
  }
}

TEST(Twist, QuarticScalarBound) {
  auto m = Model::make(Manifold::euclidean(1), "x^4/4", Region::interval(-1, 1, 201));
  Twist t(m.manifold, TwistSpec::scalar("exp(-x^2/2)"));
  auto r = bound_scan(m, t, BoundMode::Plain);
  EXPECT_NEAR(r.rho_B, 1.0, 1e-10);
  EXPECT_NEAR(r.rho_B_minimizer(0), 0.0, 1e-6);
  EXPECT_NEAR(r.rho_tilde_B, r.rho_B, 1e-8);
  for (double x : {-1.0, -0.5, 0.2, 0.9})
    EXPECT_NEAR(plain_integrand(twist_eval(m, t, pt({x}))), 2 * x * x + 1 - std::pow(x, 4), 1e-12);
  EXPECT_NEAR(rho_inf(m).value, 0.0, 1e-12);
}

TEST(Twist, OuIdentityBound) {
  auto m = Model::make(Manifold::euclidean(1), "x^2/2", Region::interval(-6, 6, 61));
  auto r = bound_scan(m, Twist(m.manifold, TwistSpec::identity()), BoundMode::Plain);
  EXPECT_DOUBLE_EQ(r.rho_B, 1.0);
}

TEST(Twist, SymmetryCriterion) {
  auto m = gauss2();
  EXPECT_TRUE(symmetry_criterion(m, Twist(m.manifold, TwistSpec::scalar("exp(x*y)"))).holds);
  auto s = symmetry_criterion(m, Twist(m.manifold, TwistSpec::shear("x")));
  EXPECT_FALSE(s.holds);
  EXPECT_NEAR(s.residual, std::sqrt(2.0), 1e-8);
}

TEST(Twist, SingularTwistReportsCondition) {
  auto m = Model::make(Manifold::euclidean(1), "x^2/2", Region::interval(-1, 1, 21));
  Twist t(m.manifold, TwistSpec::scalar("x"));
  try {
    twist_eval(m, t, pt({0.0}));
    FAIL();
  } catch (const TwistSingularError& e) {
    EXPECT_EQ(e.kind(), "twist-singular");
  }
}

TEST(Twist, ParametersRebind) {
  auto m = Model::make(Manifold::euclidean(1), "x^2/2", Region::interval(-1, 1, 21));
  Twist t(m.manifold, TwistSpec::scalar("exp(a*x^2)", {"a"}, {0.0}));
  auto t2 = t.with_params({-0.5});
  EXPECT_NEAR(t2.coords(pt({1.0}))(0, 0), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(t.coords(pt({1.0}))(0, 0), 1.0, 1e-15);
}

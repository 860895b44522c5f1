#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "intertwine/geometry.hpp"

using namespace intertwine;
using std::numbers::pi;

namespace {

Point pt(std::initializer_list<double> v) {
  Point p(static_cast<int>(v.size()));
  int i = 0;
  for (double c : v) p(i++) = c;
  return p;
}

// Γ from the metric-derivative formula with central differences of g.
Rank3 christoffel_oracle(const Manifold& m, const Point& x) {
  const int n = m.dim();
  const double h = 1e-5;
  std::vector<Mat> dg(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    Point a = x, b = x;
    a(k) += h;
    b(k) -= h;
    dg[static_cast<std::size_t>(k)] = (m.metric_at(a) - m.metric_at(b)) / (2 * h);
  }
  const Mat gi = m.metric_at(x).inverse();
  Rank3 g(static_cast<std::size_t>(n), Mat::Zero(n, n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l)
          g[static_cast<std::size_t>(i)](j, k) +=
              0.5 * gi(i, l) *
              (dg[static_cast<std::size_t>(j)](l, k) + dg[static_cast<std::size_t>(k)](l, j) -
               dg[static_cast<std::size_t>(l)](j, k));
  return g;
}

}  // namespace

TEST(Geometry, EuclideanMetricIsIdentity) {
  auto m = Manifold::euclidean(2);
  EXPECT_TRUE(m.metric_at(pt({3.0, -1.0})).isApprox(Mat::Identity(2, 2)));
  EXPECT_TRUE(m.frame_at(pt({3.0, -1.0})).isApprox(Mat::Identity(2, 2)));
  for (const auto& g : m.christoffel_at(pt({0.1, 0.2}))) EXPECT_EQ(g.norm(), 0.0);
  EXPECT_EQ(m.ricci_sharp_at(pt({0.1, 0.2})).norm(), 0.0);
}

TEST(Geometry, SphereMetricAtEquator) {
  auto m = Manifold::sphere2();
  const Mat g = m.metric_at(pt({pi / 2, 0.0}));
  EXPECT_NEAR((g - Mat::Identity(2, 2)).norm(), 0.0, 1e-15);
}

TEST(Geometry, HyperbolicMetric) {
  auto m = Manifold::hyperbolic_half_plane();
  const Mat g = m.metric_at(pt({0.0, 2.0}));
  EXPECT_NEAR(g(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(g(1, 1), 0.25, 1e-15);
  EXPECT_NEAR(g(0, 1), 0.0, 1e-15);
}

TEST(Geometry, SphereChristoffel) {
  auto m = Manifold::sphere2();
  const auto g = m.christoffel_at(pt({pi / 4, 1.0}));
  EXPECT_NEAR(g[0](1, 1), -0.5, 1e-14);
  EXPECT_NEAR(g[1](0, 1), 1.0, 1e-14);  // cot(π/4)
  EXPECT_NEAR(g[1](1, 0), 1.0, 1e-14);
}

TEST(Geometry, AnalyticChristoffelMatchesMetricDerivativeOracle) {
  for (const auto& [m, x] : {std::pair{Manifold::sphere2(), pt({0.8, 2.0})},
                             std::pair{Manifold::hyperbolic_half_plane(), pt({0.3, 1.7})}}) {
    const auto a = m.christoffel_at(x);
    const auto b = christoffel_oracle(m, x);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR((a[i] - b[i]).norm(), 0.0, 1e-8) << m.name();
  }
}

TEST(Geometry, UserChartMatchesSphere) {
  CoordBox box{{0.1, 0.0}, {pi - 0.1, 2 * pi}, {false, true}};
  auto u = Manifold::user_chart({"theta", "phi"}, {{"1", "0"}, {"0", "sin(theta)^2"}}, box);
  auto s = Manifold::sphere2();
  for (double th : {0.3, pi / 4, 1.2, 2.5}) {
    const Point x = pt({th, 0.7});
    const auto a = u.christoffel_at(x), b = s.christoffel_at(x);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR((a[i] - b[i]).cwiseAbs().maxCoeff(), 0.0, 1e-6);
    EXPECT_NEAR((u.ricci_sharp_at(x) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.0, 1e-5);
  }
}

TEST(Geometry, ConstantCurvatureRicci) {
  EXPECT_NEAR((Manifold::sphere2().ricci_sharp_at(pt({1.0, 0.0})) - Mat::Identity(2, 2)).norm(), 0.0, 1e-14);
  EXPECT_NEAR((Manifold::hyperbolic_half_plane().ricci_sharp_at(pt({0.0, 3.0})) + Mat::Identity(2, 2)).norm(),
              0.0, 1e-14);
}

TEST(Geometry, SphereFrame) {
  const Mat e = Manifold::sphere2().frame_at(pt({pi / 6, 0.0}));
  EXPECT_NEAR(e(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(e(1, 1), 2.0, 1e-12);
  EXPECT_NEAR(e(0, 1), 0.0, 1e-14);
}

TEST(Geometry, FrameOrthonormalizesRandomSpd) {
  std::mt19937 gen(7);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % kMaxDim;
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = nd(gen);
    const Mat g = a.transpose() * a + 0.1 * Mat::Identity(n, n);
    const Mat e = Manifold::frame_from_metric(g);
    EXPECT_NEAR((e.transpose() * g * e - Mat::Identity(n, n)).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  }
}

TEST(Geometry, InvariantsOnSamples) {
  auto m = Manifold::hyperbolic_half_plane();
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  for (int i = 0; i < 20; ++i) {
    const auto d = m.metric_data(pt({u(gen) - 1.5, u(gen)}));
    EXPECT_GT(d.g.selfadjointView<Eigen::Lower>().eigenvalues().minCoeff(), 0.0);
    EXPECT_NEAR((d.frame.transpose() * d.g * d.frame - Mat::Identity(2, 2)).norm(), 0.0, 1e-10);
    for (const auto& c : d.christoffel) EXPECT_NEAR((c - c.transpose()).norm(), 0.0, 1e-14);
    EXPECT_NEAR((d.ricci_sharp - d.ricci_sharp.transpose()).norm(), 0.0, 1e-8);
  }
}

TEST(Geometry, OutOfDomainNamesCoordinate) {
  auto m = Manifold::sphere2();
  try {
    m.metric_at(pt({0.0, 1.0}));
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos);
    EXPECT_EQ(e.kind(), "domain");
  }
  EXPECT_THROW(Manifold::hyperbolic_half_plane().christoffel_at(pt({0.0, -1.0})), DomainError);
}

TEST(Geometry, NonPositiveUserMetricIsNumericError) {
  CoordBox box{{-1.0}, {1.0}, {false}};
  auto m = Manifold::user_chart({"x"}, {{"x"}}, box);
  EXPECT_THROW(m.frame_at(pt({-0.5})), NumericError);
}

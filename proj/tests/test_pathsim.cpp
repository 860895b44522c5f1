#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "intertwine/pathsim.hpp"
#include "intertwine/semigroup.hpp"

using namespace intertwine;
using std::numbers::pi;

namespace {

Point pt(std::initializer_list<double> v) {
  Point p(static_cast<int>(v.size()));
  int i = 0;
  for (double c : v) p(i++) = c;
  return p;
}

Model ou() { return Model::make(Manifold::euclidean(1), "x^2/2", Region::interval(-6, 6, 61)); }

// Parallel transport around a latitude circle by classical RK4 in
// coordinates, returned in frame components.
Mat latitude_holonomy_rk4(double theta, int steps) {
  auto rhs = [&](const Eigen::Vector2d& v) {
    // dv/dφ = −Γ^i_{φk} v^k along θ = const
    const double s = std::sin(theta), c = std::cos(theta);
    return Eigen::Vector2d(s * c * v(1), -(c / s) * v(0));
  };
  const double ds = 2 * pi / steps;
  Mat out(2, 2);
  const Eigen::Matrix2d e{{1.0, 0.0}, {0.0, 1.0 / std::sin(theta)}};
  for (int col = 0; col < 2; ++col) {
    Eigen::Vector2d v = e.col(col);
    for (int k = 0; k < steps; ++k) {
      const auto k1 = rhs(v), k2 = rhs(v + 0.5 * ds * k1), k3 = rhs(v + 0.5 * ds * k2), k4 = rhs(v + ds * k3);
      v += ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    out.col(col) = e.inverse() * v;
  }
  return out;
}

}  // namespace

TEST(PathSim, BrownianVarianceIsTwoT) {
  auto m = Model::make(Manifold::euclidean(1), "0", Region::interval(-5, 5, 11));
  const double t = 0.5;
  auto e = estimate_P(m, m.field("x^2"), pt({0.0}), t, 0.05, 100000, 17);
  EXPECT_NEAR(e.value, 2 * t, 3 * e.std_error);
  EXPECT_EQ(e.exit_fraction, 0.0);
}

TEST(PathSim, OuMean) {
  auto e = estimate_P(ou(), ou().field("x"), pt({1.0}), 1.0, 1e-2, 100000, 3);
  EXPECT_NEAR(e.value, std::exp(-1.0), 3 * e.std_error + 0.01 * std::exp(-1.0) / 2);
}

TEST(PathSim, ZeroNoiseFollowsOde) {
  auto p = simulate_path(ou(), pt({1.0}), 1.0, 1e-3, 0, 0, {.zero_noise = true});
  EXPECT_EQ(p.points.size(), 1001u);
  EXPECT_NEAR(p.points.back()(0), std::exp(-1.0), 1e-3);
  EXPECT_NEAR(p.points.back()(0), std::pow(1 - 1e-3, 1000), 1e-14);
}

TEST(PathSim, PathsAreReproducible) {
  auto m = Model::make(Manifold::sphere2(), "cos(theta)", Region::box({0.5, 0}, {2.5, 6}, {3, 3}));
  auto a = simulate_path(m, pt({1.0, 0.3}), 0.5, 1e-2, 99, 12);
  auto b = simulate_path(m, pt({1.0, 0.3}), 0.5, 1e-2, 99, 12);
  auto c = simulate_path(m, pt({1.0, 0.3}), 0.5, 1e-2, 99, 13);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t k = 0; k < a.points.size(); ++k) {
    EXPECT_EQ(a.points[k](0), b.points[k](0));
    EXPECT_EQ(a.points[k](1), b.points[k](1));
  }
  EXPECT_NE(a.points.back()(0), c.points.back()(0));
  EXPECT_EQ(a.points[0], pt({1.0, 0.3}));
  EXPECT_EQ(a.increments.size(), a.steps());
}

TEST(PathSim, IncrementsHaveVarianceH) {
  auto m = Model::make(Manifold::euclidean(2), "0", Region::box({-5, -5}, {5, 5}, {3, 3}));
  auto p = simulate_path(m, pt({0.0, 0.0}), 10.0, 1e-3, 5, 0);
  double s = 0;
  for (const auto& db : p.increments) s += db.squaredNorm();
  const double n = 2.0 * static_cast<double>(p.increments.size());
  EXPECT_NEAR(s / n / 1e-3, 1.0, 4 * std::sqrt(2.0 / n));
}

TEST(PathSim, StepCountAdjustsH) {
  EXPECT_EQ(step_count(1.0, 0.3), 4);
  EXPECT_EQ(step_count(1.0, 0.1), 10);
  EXPECT_THROW(step_count(1.0, 0.0), ConfigError);
  EXPECT_THROW(step_count(1.0, -1.0), ConfigError);
  EXPECT_THROW(step_count(1.0, 2.0), ConfigError);
}

TEST(PathSim, ExitIsFlagged) {
  auto m = Model::make(Manifold::interval(-0.1, 0.1), "0", Region::interval(-0.1, 0.1, 5));
  auto p = simulate_path(m, pt({0.0}), 1.0, 1e-3, 1, 0);
  EXPECT_TRUE(p.exited);
  EXPECT_EQ(p.exit_index, p.points.size());
  for (const auto& x : p.points) EXPECT_TRUE(m.manifold.contains(x));
  auto t = transport(m, p, TransportMode::Deformed);
  EXPECT_TRUE(t.truncated);
  EXPECT_EQ(t.maps.size(), p.points.size());
}

TEST(PathSim, FlatParallelTransportIsIdentity) {
  auto m = Model::make(Manifold::euclidean(3), "x^4 + y*z", Region::box({-1, -1, -1}, {1, 1, 1}, {3, 3, 3}));
  auto p = simulate_path(m, pt({0.1, 0.2, 0.3}), 0.2, 1e-2, 4, 0);
  for (const auto& w : transport(m, p, TransportMode::Parallel).maps) EXPECT_EQ((w - Mat::Identity(3, 3)).norm(), 0.0);
}

TEST(PathSim, OuDeformedIsExponential) {
  auto p = simulate_path(ou(), pt({0.5}), 1.0, 1e-2, 8, 0);
  auto t = transport(ou(), p, TransportMode::Deformed);
  for (std::size_t k = 0; k < t.maps.size(); ++k) EXPECT_NEAR(t.maps[k](0, 0), std::exp(-p.time(k)), 1e-13);
}

TEST(PathSim, LatitudeHolonomy) {
  auto m = Model::make(Manifold::sphere2(), "0", Region::box({0.5, 0}, {2.5, 6}, {3, 3}));
  for (double theta : {pi / 4, pi / 3, 2.0}) {
    for (int steps : {400, 800}) {
      std::vector<Point> pts;
      for (int k = 0; k <= steps; ++k) pts.push_back(pt({theta, 2 * pi * k / steps}));
      auto t = transport(m, PathSample::from_points(pts, 1.0 / steps), TransportMode::Parallel);
      const Mat& w = t.maps.back();
      const double angle = 2 * pi * (1 - std::cos(theta));
      EXPECT_NEAR(w.trace(), 2 * std::cos(angle), 5.0 / steps);
      EXPECT_NEAR((w - latitude_holonomy_rk4(theta, 4000)).cwiseAbs().maxCoeff(), 0.0, 20.0 / (steps * steps));
    }
  }
}

TEST(PathSim, ParallelTransportIsIsometric) {
  auto m = Model::make(Manifold::hyperbolic_half_plane(), "(y-1)^2 + x^2", Region::box({-1, 0.5}, {1, 2}, {3, 3}));
  for (std::uint64_t path = 0; path < 20; ++path) {
    auto p = simulate_path(m, pt({0.0, 1.0}), 0.5, 1e-3, 2, path);
    for (const auto& w : transport(m, p, TransportMode::Parallel).maps)
      EXPECT_NEAR((w.transpose() * w - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
}

TEST(PathSim, PathsCrossPolesAndStayOnSphere) {
  auto m = Model::make(Manifold::sphere2(), "0", Region::box({0.5, 0}, {2.5, 6}, {3, 3}));
  int near_pole = 0;
  for (std::uint64_t path = 0; path < 200; ++path) {
    auto p = simulate_path(m, pt({0.3, 0.0}), 0.5, 1e-3, 6, path);
    EXPECT_FALSE(p.exited);
    double theta_min = 1.0;
    for (std::size_t k = 0; k < p.points.size(); ++k) {
      theta_min = std::min(theta_min, p.points[k](0));
      if (k > 0) {
        EXPECT_LE(std::abs(p.points[k](1) - p.points[k - 1](1)), pi);
      }
    }
    near_pole += theta_min < 0.05;
    auto t = transport(m, p, TransportMode::Parallel);
    for (const auto& w : t.maps) EXPECT_NEAR((w.transpose() * w - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
  EXPECT_GT(near_pole, 0);
}

TEST(PathSim, HeightDecaysThroughPoles) {
  // z = cos θ satisfies Lz = −2z under Δ, so E[z(X_t)] = e^{−2t} z(x₀).
  auto m = Model::make(Manifold::sphere2(), "0", Region::box({0.5, 0}, {2.5, 6}, {3, 3}));
  auto e = estimate_P(m, m.field("cos(theta)"), pt({0.3, 0.0}), 0.5, 1e-3, 20000, 31);
  EXPECT_NEAR(e.value, std::exp(-1.0) * std::cos(0.3), 3 * e.std_error + 5e-3);
}

TEST(PathSim, GronwallContraction) {
  auto m = Model::make(Manifold::sphere2(), "0", Region::box({0.5, 0}, {2.5, 6}, {3, 3}));
  const double h = 1e-2;
  for (std::uint64_t path = 0; path < 50; ++path) {
    auto p = simulate_path(m, pt({1.2, 0.0}), 1.0, h, 3, path);
    auto t = transport(m, p, TransportMode::Deformed);
    for (std::size_t k = 0; k < t.maps.size(); ++k)
      EXPECT_LE(operator_norm(t.maps[k]) * std::exp(p.time(k)), 1 + 10 * h * p.time(k));
  }
}

TEST(PathSim, TwistedMapsAreConjugates) {
  auto m = Model::make(Manifold::hyperbolic_half_plane(), "(y-1)^2 + x^2", Region::box({-1, 0.5}, {1, 2}, {3, 3}));
  Twist tw(m.manifold, TwistSpec::user_matrix({"1 + x^2", "0.3*y", "sin(x)", "2 + y"}));
  auto p = simulate_path(m, pt({0.1, 1.2}), 0.3, 1e-2, 9, 4);
  auto w = transport(m, p, TransportMode::Deformed);
  auto wb = transport(m, p, TransportMode::TwistedDeformed, &tw);
  auto frame_b = [&](const Point& x) {
    const double y = x(1);
    Mat t(2, 2);
    t << 1 + x(0) * x(0), 0.3 * y, std::sin(x(0)), 2 + y;
    // E = y·I, frame B* = Eᵀ T E⁻ᵀ = T on a conformal metric; B = B*ᵀ
    return Mat(t.transpose());
  };
  const Mat b0i = frame_b(p.points[0]).inverse();
  for (std::size_t k = 0; k < p.points.size(); ++k)
    EXPECT_NEAR((wb.maps[k] - frame_b(p.points[k]) * w.maps[k] * b0i).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(PathSim, TwistedSdeCrossCheck) {
  // dW^B = −(𝓜 − Lλ/λ)W^B dt + √2(λ'/λ)W^B dB for a scalar twist on OU.
  auto m = ou();
  Twist tw(m.manifold, TwistSpec::scalar("exp(0.2*x)"));
  double conj = 0, sde = 0;
  for (std::uint64_t path = 0; path < 400; ++path) {
    auto p = simulate_path(m, pt({0.3}), 1.0, 1e-3, 21, path);
    conj += transport(m, p, TransportMode::TwistedDeformed, &tw).maps.back()(0, 0);
    double w = 1.0;
    for (std::size_t k = 0; k < p.steps(); ++k) {
      const double x = p.points[k](0);
      const double l_over = 0.04 - 0.2 * x;
      w *= 1 - (1 - l_over) * p.h + std::sqrt(2.0) * 0.2 * p.increments[k](0);
    }
    sde += w;
  }
  EXPECT_NEAR(sde / conj, 1.0, 0.02);
}

TEST(PathSim, WeakErrorHalvesWithStep) {
  auto m = ou();
  auto err = [&](double h) {
    return std::abs(estimate_P(m, m.field("x"), pt({1.0}), 1.0, h, 2, 0, {.zero_noise = true}).value - std::exp(-1.0));
  };
  for (double h : {0.02, 0.01, 0.005}) EXPECT_NEAR(err(h) / err(h / 2), 2.0, 0.05);
  // The noisy estimator has the same mean for a linear drift.
  auto noisy = estimate_P(m, m.field("x"), pt({1.0}), 1.0, 0.02, 200000, 5);
  EXPECT_NEAR(noisy.value, std::pow(1 - 0.02, 50), 3 * noisy.std_error);
}

TEST(PathSim, CsvDump) {
  auto m = ou();
  auto p = simulate_path(m, pt({0.5}), 0.02, 1e-2, 1, 0);
  std::ostringstream os;
  write_paths_csv(os, m.manifold, {p}, {transport(m, p, TransportMode::Deformed)});
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "path,t,x,norm_W");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}

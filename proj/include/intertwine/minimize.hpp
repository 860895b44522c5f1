#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace intertwine {

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

/// Optional box constraint; points are clamped before every evaluation.
struct Bounds {
  Eigen::VectorXd lo, hi;
  bool active() const { return lo.size() > 0; }
  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const {
    if (!active()) return x;
    return x.cwiseMax(lo).cwiseMin(hi);
  }
};

struct NelderMeadOptions {
  double initial_step = 0.1;
  int max_evaluations = 2000;
  double f_tolerance = 1e-12;
  double x_tolerance = 1e-10;
};

/// Nelder–Mead simplex minimization (standard coefficients 1, 2, 0.5, 0.5).
/// Non-finite objective values are treated as +inf.
inline MinimizeResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& start, const NelderMeadOptions& opt = {},
                                  const Bounds& bounds = {}) {
  const int n = static_cast<int>(start.size());
  int evals = 0;
  auto eval = [&](Eigen::VectorXd& x) {
    x = bounds.clamp(x);
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> simplex(static_cast<std::size_t>(n + 1), bounds.clamp(start));
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  for (int i = 0; i < n; ++i) {
    auto& v = simplex[static_cast<std::size_t>(i + 1)];
    v(i) += opt.initial_step;
    // Step inward when the bound clips the vertex onto the start point.
    if (bounds.active() && bounds.clamp(v)(i) == start(i)) v(i) -= 2.0 * opt.initial_step;
  }
  for (int i = 0; i <= n; ++i) values[static_cast<std::size_t>(i)] = eval(simplex[static_cast<std::size_t>(i)]);

  std::vector<int> order(static_cast<std::size_t>(n + 1));
  while (evals < opt.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return values[static_cast<std::size_t>(a)] < values[static_cast<std::size_t>(b)];
    });
    const auto best = static_cast<std::size_t>(order.front());
    const auto worst = static_cast<std::size_t>(order.back());
    const auto second = static_cast<std::size_t>(order[static_cast<std::size_t>(n - 1 >= 0 ? n - 1 : 0)]);

    double spread = 0.0;
    for (int i = 0; i <= n; ++i)
      spread = std::max(spread, (simplex[static_cast<std::size_t>(i)] - simplex[best]).cwiseAbs().maxCoeff());
    const double fspread = std::abs(values[worst] - values[best]);
    if (std::isfinite(values[worst]) && fspread <= opt.f_tolerance * (1.0 + std::abs(values[best])) &&
        spread <= opt.x_tolerance * (1.0 + simplex[best].cwiseAbs().maxCoeff()))
      break;
    if (spread <= opt.x_tolerance) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (static_cast<std::size_t>(i) != worst) centroid += simplex[static_cast<std::size_t>(i)];
    centroid /= n;

    Eigen::VectorXd xr = centroid + (centroid - simplex[worst]);
    const double fr = eval(xr);
    if (fr < values[best]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        values[worst] = fe;
      } else {
        simplex[worst] = xr;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = xr;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                 : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = xc;
      values[worst] = fc;
      continue;
    }
    for (int i = 0; i <= n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (k == best) continue;
      simplex[k] = simplex[best] + 0.5 * (simplex[k] - simplex[best]);
      values[k] = eval(simplex[k]);
    }
  }
  const auto best = static_cast<std::size_t>(
      std::min_element(values.begin(), values.end()) - values.begin());
  return {simplex[best], values[best], evals};
}

/// Coordinate-wise pattern search: try ±step along each axis, halve the step
/// when no axis improves.
inline MinimizeResult coordinate_polish(const std::function<double(const Eigen::VectorXd&)>& f,
                                        MinimizeResult start, double step, double min_step,
                                        const Bounds& bounds = {}) {
  Eigen::VectorXd x = start.x;
  double fx = start.value;
  int evals = start.evaluations;
  while (step >= min_step) {
    bool improved = false;
    for (int i = 0; i < x.size(); ++i) {
      for (double dir : {1.0, -1.0}) {
        Eigen::VectorXd y = x;
        y(i) += dir * step;
        y = bounds.clamp(y);
        ++evals;
        const double fy = f(y);
        if (std::isfinite(fy) && fy < fx) {
          x = y;
          fx = fy;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return {x, fx, evals};
}

}  // namespace intertwine

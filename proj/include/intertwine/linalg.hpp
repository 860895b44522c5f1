#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <vector>

#include "errors.hpp"

namespace intertwine {

/// Largest manifold dimension handled by the pointwise tensor code. Small
/// matrices live on the stack with this bound, which keeps the Monte-Carlo
/// inner loops allocation-free.
inline constexpr int kMaxDim = 6;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// Rank-3 array stored as one matrix per leading index, e.g. Γ^i_{jk} is
/// `christoffel[i](j, k)` and a directional family `T[a]` is the tensor
/// differentiated along frame direction a.
using Rank3 = std::vector<Mat>;

inline bool is_diagonal(const Mat& a) {
  for (int j = 0; j < a.cols(); ++j)
    for (int i = 0; i < a.rows(); ++i)
      if (i != j && a(i, j) != 0.0) return false;
  return true;
}

inline Mat sym_part(const Mat& a) { return 0.5 * (a + a.transpose()); }

/// Smallest eigenvalue of the symmetric part of `a`.
inline double min_sym_eigenvalue(const Mat& a) {
  if (a.rows() == 1) return a(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(sym_part(a), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("symmetric eigensolver failed");
  return es.eigenvalues()(0);
}

inline Vec sym_eigenvalues(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym_part(a), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("symmetric eigensolver failed");
  return es.eigenvalues();
}

/// Spectral-norm condition number.
inline double condition_number(const Mat& a) {
  Eigen::JacobiSVD<Mat> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

inline double operator_norm(const Mat& a) {
  if (a.rows() == 1) return std::abs(a(0, 0));
  if (a.rows() == 2) {
    // Largest singular value from the 2×2 Gram invariants.
    const double f = a.squaredNorm(), d = std::abs(a.determinant());
    return std::sqrt(0.5 * (f + std::sqrt(std::max(0.0, f * f - 4.0 * d * d))));
  }
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

/// Orthogonal polar factor U of a = U P.
inline Mat polar_orthogonal(const Mat& a) {
  if (a.rows() == 1) return Mat::Constant(1, 1, a(0, 0) >= 0.0 ? 1.0 : -1.0);
  if (a.rows() == 2 && a.determinant() > 0.0) {
    // Nearest rotation in closed form.
    const double c = a(0, 0) + a(1, 1), s = a(1, 0) - a(0, 1);
    const double r = std::hypot(c, s);
    Mat u(2, 2);
    u << c / r, -s / r, s / r, c / r;
    return u;
  }
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// exp(a) for a symmetric matrix via eigendecomposition; falls back to
/// Padé scaling-and-squaring for non-symmetric input.
inline Mat expm(const Mat& a) {
  const int n = static_cast<int>(a.rows());
  if (n == 1) return Mat::Constant(1, 1, std::exp(a(0, 0)));
  if ((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + a.cwiseAbs().maxCoeff())) {
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    Vec ev = es.eigenvalues().array().exp().matrix();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
  Eigen::MatrixXd dyn = a;
  Eigen::MatrixXd e = dyn.exp();
  return e;
}

inline double frobenius(const Rank3& t) {
  double s = 0.0;
  for (const auto& m : t) s += m.squaredNorm();
  return std::sqrt(s);
}

}  // namespace intertwine

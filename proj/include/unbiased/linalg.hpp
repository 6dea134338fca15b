#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "error.hpp"

namespace unbiased {

inline bool is_symmetric(const Eigen::MatrixXd &mat, double rel_tol = 1e-12) {
  if (mat.rows() != mat.cols()) return false;
  const double scale = std::max(1.0, mat.cwiseAbs().maxCoeff());
  return (mat - mat.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline bool is_spd(const Eigen::MatrixXd &mat, double rel_tol = 1e-12) {
  if (!is_symmetric(mat, rel_tol)) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mat, Eigen::EigenvaluesOnly);
  return eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() > 0.0;
}

/// Symmetric inverse square root with eigenvalues floored at rel_floor * max.
struct InverseSqrt {
  Eigen::MatrixXd value;
  int clamped = 0; ///< eigenvalues lifted to the floor
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  double log_det = 0.0; ///< log-determinant of the (clamped) input
};

inline InverseSqrt inverse_sqrt(const Eigen::MatrixXd &sym, double rel_floor = 1e-12) {
  require_dims(sym.rows() == sym.cols(), "inverse_sqrt: matrix must be square");
  const Eigen::MatrixXd s = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw NumericalError("inverse_sqrt: eigendecomposition failed");
  InverseSqrt out;
  out.min_eigenvalue = eig.eigenvalues().minCoeff();
  out.max_eigenvalue = eig.eigenvalues().maxCoeff();
  if (!(out.max_eigenvalue > 0.0)) throw NumericalError("inverse_sqrt: matrix has no positive eigenvalue");
  // Negative eigenvalues beyond round-off mean an indefinite input, not a near-singular one.
  if (out.min_eigenvalue < -1e-8 * out.max_eigenvalue)
    throw NumericalError("inverse_sqrt: matrix is indefinite");
  const double floor = rel_floor * out.max_eigenvalue;
  Eigen::VectorXd scale(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double ev = eig.eigenvalues()(i);
    if (ev < floor) {
      ev = floor;
      ++out.clamped;
    }
    scale(i) = 1.0 / std::sqrt(ev);
    out.log_det += std::log(ev);
  }
  out.value = eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose();
  return out;
}

/// Moore-Penrose pseudoinverse with singular values below rel_tol * max dropped.
inline Eigen::MatrixXd pinv(const Eigen::MatrixXd &mat, double rel_tol = 1e-12) {
  if (mat.size() == 0) return Eigen::MatrixXd::Zero(mat.cols(), mat.rows());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto &sv = svd.singularValues();
  const double cut = sv.size() ? rel_tol * sv(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline int numerical_rank(const Eigen::VectorXd &singular_values, double rel_tol) {
  if (singular_values.size() == 0) return 0;
  const double top = singular_values.maxCoeff();
  if (!(top > 0.0)) return 0;
  return static_cast<int>((singular_values.array() > rel_tol * top).count());
}

inline double rms(const Eigen::VectorXd &v) {
  return v.size() ? std::sqrt(v.squaredNorm() / static_cast<double>(v.size())) : 0.0;
}

} // namespace unbiased

#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include <unbiased/rng.hpp>

namespace support {

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, unbiased::Rng &rng) {
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.gaussian();
  return a;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, unbiased::Rng &rng) { return gaussian_matrix(n, 1, rng); }

inline Eigen::MatrixXd random_spd(Eigen::Index n, unbiased::Rng &rng) {
  const Eigen::MatrixXd a = gaussian_matrix(n, n, rng);
  return a * a.transpose() / static_cast<double>(n) + 0.5 * Eigen::MatrixXd::Identity(n, n);
}

/// Block-diagonal SPD with n blocks of size d.
inline Eigen::MatrixXd random_block_spd(int n, int d, unbiased::Rng &rng) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n * d, n * d);
  for (int k = 0; k < n; ++k) p.block(k * d, k * d, d, d) = random_spd(d, rng);
  return p;
}

inline std::filesystem::path fresh_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / ("unbiased_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace support

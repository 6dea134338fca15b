#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "error.hpp"

namespace unbiased {

enum class FftNorm {
  unitary,      ///< 1/s on both directions of an s x s transform
  unnormalized, ///< forward unscaled, inverse scaled by 1/s^2
};

/// 2D DFT of a square matrix: rows, then columns. Index 0 is the DC term.
class Fft2 {
public:
  explicit Fft2(int s) : s_(s), in_(s), out_(s) {
    require_dims(s >= 1, "Fft2: size must be positive");
    engine_.SetFlag(Eigen::FFT<double>::Unscaled);
  }

  int size() const { return s_; }

  Eigen::MatrixXcd forward(const Eigen::MatrixXcd &x, FftNorm norm = FftNorm::unitary) {
    Eigen::MatrixXcd out = transform(x, false);
    if (norm == FftNorm::unitary) out /= static_cast<double>(s_);
    return out;
  }

  Eigen::MatrixXcd forward(const Eigen::MatrixXd &x, FftNorm norm = FftNorm::unitary) {
    return forward(Eigen::MatrixXcd(x.cast<std::complex<double>>()), norm);
  }

  Eigen::MatrixXcd inverse(const Eigen::MatrixXcd &X, FftNorm norm = FftNorm::unitary) {
    Eigen::MatrixXcd out = transform(X, true);
    out /= norm == FftNorm::unitary ? static_cast<double>(s_) : static_cast<double>(s_) * s_;
    return out;
  }

private:
  Eigen::MatrixXcd transform(const Eigen::MatrixXcd &x, bool inverse) {
    require_dims(x.rows() == s_ && x.cols() == s_, "Fft2: shape mismatch");
    Eigen::MatrixXcd tmp(s_, s_);
    for (int r = 0; r < s_; ++r) {
      for (int c = 0; c < s_; ++c) in_[c] = x(r, c);
      run(inverse);
      for (int c = 0; c < s_; ++c) tmp(r, c) = out_[c];
    }
    for (int c = 0; c < s_; ++c) {
      for (int r = 0; r < s_; ++r) in_[r] = tmp(r, c);
      run(inverse);
      for (int r = 0; r < s_; ++r) tmp(r, c) = out_[r];
    }
    return tmp;
  }

  void run(bool inverse) {
    if (inverse)
      engine_.inv(out_, in_);
    else
      engine_.fwd(out_, in_);
  }

  int s_;
  Eigen::FFT<double> engine_;
  std::vector<std::complex<double>> in_;
  std::vector<std::complex<double>> out_;
};

/// Signed frequency of DFT index i on an s-point grid, in [-s/2, s/2).
inline int signed_frequency(int i, int s) { return i < (s + 1) / 2 ? i : i - s; }

} // namespace unbiased

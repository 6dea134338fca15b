#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace unbiased {

/// m x (d*n) lead field split into n blocks of d adjacent columns.
class BlockForwardModel {
public:
  BlockForwardModel(Eigen::MatrixXd entries, int d) : entries_(std::move(entries)), d_(d) {
    require_dims(d_ >= 1, "BlockForwardModel: d must be >= 1");
    require_dims(entries_.rows() >= 1, "BlockForwardModel: need at least one sensor");
    require_dims(entries_.cols() >= d_ && entries_.cols() % d_ == 0,
                 "BlockForwardModel: column count must be a positive multiple of d");
    if (!entries_.allFinite()) throw DomainError("BlockForwardModel: non-finite entries");
  }

  const Eigen::MatrixXd &entries() const { return entries_; }
  int m() const { return static_cast<int>(entries_.rows()); }
  int n() const { return static_cast<int>(entries_.cols() / d_); }
  int d() const { return d_; }

  /// Columns [k*d, (k+1)*d).
  auto block(int k) const {
    require_dims(k >= 0 && k < n(), "BlockForwardModel: block index out of range");
    return entries_.middleCols(static_cast<Eigen::Index>(k) * d_, d_);
  }

private:
  Eigen::MatrixXd entries_;
  int d_;
};

/// Source covariance P ((d*n) x (d*n)) and noise covariance C (m x m), both SPD.
struct CovarianceSpec {
  Eigen::MatrixXd P;
  Eigen::MatrixXd C;

  void validate(const BlockForwardModel &model) const {
    require_dims(P.rows() == model.entries().cols() && P.cols() == P.rows(),
                 "CovarianceSpec: P must be (d*n) x (d*n)");
    require_dims(C.rows() == model.m() && C.cols() == C.rows(), "CovarianceSpec: C must be m x m");
    if (!is_symmetric(P)) throw DomainError("CovarianceSpec: P is not symmetric");
    if (!is_symmetric(C)) throw DomainError("CovarianceSpec: C is not symmetric");
    if (!is_spd(P)) throw DomainError("CovarianceSpec: P is not positive definite");
    if (!is_spd(C)) throw DomainError("CovarianceSpec: C is not positive definite");
  }

  /// P = source_var * I, C = noise_var * I.
  static CovarianceSpec isotropic(const BlockForwardModel &model, double source_var, double noise_var) {
    require(source_var > 0 && noise_var > 0, "CovarianceSpec: variances must be positive");
    const auto cols = model.entries().cols();
    return {source_var * Eigen::MatrixXd::Identity(cols, cols),
            noise_var * Eigen::MatrixXd::Identity(model.m(), model.m())};
  }
};

/// Active blocks (strictly increasing) and one d-vector of coefficients each.
struct SourceConfig {
  std::vector<int> support;
  std::vector<Eigen::VectorXd> coefficients;

  void validate(int n, int d) const {
    require_dims(support.size() == coefficients.size(), "SourceConfig: support/coefficient count mismatch");
    for (std::size_t i = 0; i < support.size(); ++i) {
      require_dims(support[i] >= 0 && support[i] < n, "SourceConfig: support index out of range");
      if (i > 0) require_dims(support[i] > support[i - 1], "SourceConfig: support must be strictly increasing");
      require_dims(coefficients[i].size() == d, "SourceConfig: coefficient length must equal d");
      require(coefficients[i].cwiseAbs().maxCoeff() > 0.0, "SourceConfig: zero coefficient vector");
    }
  }

  /// Dense (d*n)-vector with the coefficients placed in their block slots.
  Eigen::VectorXd dense(int n, int d) const {
    validate(n, d);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n) * d);
    for (std::size_t i = 0; i < support.size(); ++i) x.segment(support[i] * d, d) = coefficients[i];
    return x;
  }
};

enum class NoiseKind { none, iid, correlated };

inline std::string to_string(NoiseKind kind) {
  switch (kind) {
  case NoiseKind::none: return "none";
  case NoiseKind::iid: return "iid";
  case NoiseKind::correlated: return "correlated";
  }
  return "?";
}

inline NoiseKind noise_kind_from_string(const std::string &s) {
  if (s == "none") return NoiseKind::none;
  if (s == "iid") return NoiseKind::iid;
  if (s == "correlated") return NoiseKind::correlated;
  throw DomainError("unknown noise kind '" + s + "'");
}

/// Additive Gaussian noise, scaled so that RMS(noise) / RMS(clean signal) = level.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double level = 0.0;
  double correlation_length = 1.0;
  std::uint64_t seed = 0;
  /// Sensor coordinates (one row per sensor) for correlated noise; when empty
  /// sensor i sits at coordinate i on a line.
  Eigen::MatrixXd positions;

  void validate() const {
    require(level >= 0.0 && level < 1.0, "NoiseSpec: level must lie in [0, 1)");
    require((level == 0.0) == (kind == NoiseKind::none), "NoiseSpec: level = 0 iff kind = none");
    if (kind == NoiseKind::correlated) require(correlation_length > 0.0, "NoiseSpec: correlation_length must be > 0");
  }

  static NoiseSpec none() { return {}; }
  static NoiseSpec iid(double level, std::uint64_t seed) { return {NoiseKind::iid, level, 1.0, seed, {}}; }
};

struct Observation {
  Eigen::VectorXd y;
  Eigen::VectorXd noise_realization;

  Eigen::VectorXd clean() const { return y - noise_realization; }
};

/// Squared-exponential covariance over sensor positions with 1e-10 * variance diagonal jitter.
inline Eigen::MatrixXd correlated_noise_covariance(const Eigen::MatrixXd &positions, double correlation_length,
                                                   double variance) {
  require(correlation_length > 0.0, "correlated_noise_covariance: correlation_length must be > 0");
  require(variance > 0.0, "correlated_noise_covariance: variance must be > 0");
  if (!positions.allFinite()) throw DomainError("correlated_noise_covariance: non-finite positions");
  const auto m = positions.rows();
  const double denom = 2.0 * correlation_length * correlation_length;
  Eigen::MatrixXd cov(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    cov(i, i) = variance * (1.0 + 1e-10);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double r2 = (positions.row(i) - positions.row(j)).squaredNorm();
      cov(i, j) = cov(j, i) = variance * std::exp(-r2 / denom);
    }
  }
  return cov;
}

inline Eigen::MatrixXd line_positions(int m) {
  Eigen::MatrixXd pos(m, 1);
  for (int i = 0; i < m; ++i) pos(i, 0) = i;
  return pos;
}

/// Unscaled noise draw of length m following the spec's correlation structure.
inline Eigen::VectorXd draw_noise_shape(const NoiseSpec &noise, int m, Rng &rng) {
  Eigen::VectorXd white(m);
  for (int i = 0; i < m; ++i) white(i) = rng.gaussian();
  if (noise.kind != NoiseKind::correlated) return white;
  const Eigen::MatrixXd pos = noise.positions.size() ? noise.positions : line_positions(m);
  require_dims(pos.rows() == m, "NoiseSpec: positions must have one row per sensor");
  const Eigen::LLT<Eigen::MatrixXd> llt(correlated_noise_covariance(pos, noise.correlation_length, 1.0));
  if (llt.info() != Eigen::Success) throw NumericalError("correlated noise covariance is not positive definite");
  return llt.matrixL() * white;
}

/// y = sum_k L_k c_k + noise. A zero clean signal receives zero noise.
inline Observation synthesize(const BlockForwardModel &model, const SourceConfig &sources, const NoiseSpec &noise) {
  noise.validate();
  const Eigen::VectorXd x = sources.dense(model.n(), model.d());
  Observation obs;
  const Eigen::VectorXd clean = model.entries() * x;
  obs.noise_realization = Eigen::VectorXd::Zero(model.m());
  if (noise.kind != NoiseKind::none) {
    Rng rng(noise.seed);
    Eigen::VectorXd eta = draw_noise_shape(noise, model.m(), rng);
    const double signal = rms(clean);
    const double raw = rms(eta);
    if (signal > 0.0 && raw > 0.0) obs.noise_realization = eta * (noise.level * signal / raw);
  }
  obs.y = clean + obs.noise_realization;
  return obs;
}

/// SNR = |y|^2 / (m sigma) + 1 for the clean signal y and per-sensor noise variance sigma.
inline double snr(const Eigen::VectorXd &clean_y, double sigma) {
  require(sigma > 0.0, "snr: sigma must be > 0");
  require_dims(clean_y.size() > 0, "snr: empty signal");
  return clean_y.squaredNorm() / (static_cast<double>(clean_y.size()) * sigma) + 1.0;
}

inline double snr(const Observation &obs, double sigma) { return snr(obs.clean(), sigma); }

} // namespace unbiased

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "combinatorics.hpp"
#include "error.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "whitening.hpp"

namespace unbiased {

struct UniqueBound {
  int rank = 0;
  int null_dim = 0;
  int n_max = 0; ///< largest N with N < (nd - null_dim + 1) / (2d)
};

/// Largest integer N with N * den < num (num, den integers, den > 0).
inline int largest_strictly_below(long long num, long long den) {
  if (num <= 0) return 0;
  return static_cast<int>((num - 1) / den);
}

/// Works for real and complex matrices; rank tolerance is 1e-10 relative.
template <typename Derived> UniqueBound unique_bound(const Eigen::MatrixBase<Derived> &U, int d) {
  require_dims(d >= 1 && U.cols() % d == 0, "unique_bound: d must divide the column count");
  using Mat = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  UniqueBound out;
  if (U.size() > 0) {
    Eigen::JacobiSVD<Mat> svd(U.eval());
    out.rank = numerical_rank(svd.singularValues(), 1e-10);
  }
  out.null_dim = static_cast<int>(U.cols()) - out.rank;
  out.n_max = largest_strictly_below(static_cast<long long>(U.cols()) - out.null_dim + 1, 2LL * d);
  return out;
}

struct CoherenceResult {
  double value = 0.0;
  bool renormalized = false; ///< some column norm deviated from 1 by more than 1e-8
};

/// Largest |u_i . u_j| over distinct unit-normalized columns.
inline CoherenceResult coherence(const Eigen::MatrixXd &U) {
  CoherenceResult out;
  Eigen::MatrixXd Un = U;
  for (Eigen::Index j = 0; j < U.cols(); ++j) {
    const double norm = U.col(j).norm();
    if (norm == 0.0) throw DomainError("coherence: zero column " + std::to_string(j));
    if (std::abs(norm - 1.0) > 1e-8) out.renormalized = true;
    Un.col(j) /= norm;
  }
  if (U.cols() < 2) return out;
  const Eigen::MatrixXd gram = Un.transpose() * Un;
  for (Eigen::Index j = 0; j < gram.cols(); ++j)
    for (Eigen::Index i = 0; i < j; ++i) out.value = std::max(out.value, std::abs(gram(i, j)));
  return out;
}

inline double lemma_threshold(double rho_hat) {
  const double r2 = rho_hat * rho_hat;
  return 0.5 * r2 * r2 - 2.0 * r2 + 1.0;
}

inline double lemma_n_cap(double rho_hat) {
  const double r2 = rho_hat * rho_hat;
  return std::sqrt(4.0 - r2) / (2.0 - r2) + 1.0;
}

inline double corollary_threshold(double rho_hat, int N) {
  const double t = rho_hat * rho_hat * (N - 1.0) * (N - 1.0);
  return (1.0 - t) / (t + 1.0);
}

struct LemmaConditions {
  double rho_hat = 0.0;
  double coherence = 0.0;
  double lemma_threshold = 0.0;
  double n_cap = 0.0;
  std::optional<double> corollary_threshold; ///< only for N >= 3
  bool satisfied_lemma = false;
  std::optional<bool> satisfied_corollary;   ///< only for N >= 3
  bool negative_lemma_threshold = false;     ///< lemma condition unsatisfiable for every coherence
};

/// sup{rho_ij : rho_ij <= 1} over off-diagonal ratios; checks rho_ji = 1 / rho_ij.
inline double rho_hat(const Eigen::MatrixXd &ratios) {
  require_dims(ratios.rows() == ratios.cols(), "rho_hat: ratio matrix must be square");
  double best = -1.0;
  for (Eigen::Index i = 0; i < ratios.rows(); ++i) {
    for (Eigen::Index j = 0; j < ratios.cols(); ++j) {
      if (i == j) continue;
      const double r = ratios(i, j);
      if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("rho_hat: ratios must be positive and finite");
      if (std::abs(r * ratios(j, i) - 1.0) > 1e-10) throw DomainError("rho_hat: inconsistent reciprocal ratios");
      if (r <= 1.0) best = std::max(best, r);
    }
  }
  if (best < 0.0) throw DomainError("rho_hat: no ratio <= 1");
  return best;
}

inline LemmaConditions lemma_conditions(const Eigen::MatrixXd &U, const Eigen::MatrixXd &ratios, int N) {
  require(N >= 1, "lemma_conditions: N must be >= 1");
  LemmaConditions out;
  out.rho_hat = rho_hat(ratios);
  out.coherence = coherence(U).value;
  out.lemma_threshold = lemma_threshold(out.rho_hat);
  out.n_cap = lemma_n_cap(out.rho_hat);
  out.negative_lemma_threshold = out.lemma_threshold < 0.0;
  out.satisfied_lemma = out.coherence <= out.lemma_threshold && N <= out.n_cap;
  if (N >= 3) {
    out.corollary_threshold = corollary_threshold(out.rho_hat, N);
    out.satisfied_corollary = out.coherence <= *out.corollary_threshold;
  }
  return out;
}

/// Equal-strength ratios rho_ij = |S_i| / |S_j|, using each block's largest singular value.
inline Eigen::MatrixXd equal_strength_ratios(const WhitenedModel &wm) {
  Eigen::MatrixXd ratios = Eigen::MatrixXd::Ones(wm.n, wm.n);
  for (int i = 0; i < wm.n; ++i) {
    require(wm.blocks[i].rank() > 0, "equal_strength_ratios: block with zero rank");
    for (int j = 0; j < wm.n; ++j) ratios(i, j) = wm.blocks[i].S(0) / wm.blocks[j].S(0);
  }
  return ratios;
}

struct SupportFit {
  std::vector<int> support;
  double residual = 0.0;
  Eigen::VectorXd coefficients;
};

struct BruteForceResult {
  bool unique = false;
  double min_residual = 0.0;
  std::vector<SupportFit> minimizers; ///< every support within 1e-8 of the minimum, lexicographic
};

/// Exhaustive N-block support search; guarded at C(n, N) <= 2e6.
inline BruteForceResult brute_force_unique(const Eigen::MatrixXd &U, const Eigen::VectorXd &y, int N, int d) {
  require_dims(d >= 1 && U.cols() % d == 0, "brute_force_unique: d must divide the column count");
  require_dims(y.size() == U.rows(), "brute_force_unique: observation length");
  const int n = static_cast<int>(U.cols() / d);
  require(N >= 1 && N <= n, "brute_force_unique: need 1 <= N <= n");
  if (binomial(n, N) > 2'000'000) throw DomainError("brute_force_unique: C(n, N) exceeds 2e6");

  std::vector<SupportFit> fits;
  auto comb = first_combination(N);
  do {
    std::vector<Eigen::Index> cols;
    for (int k : comb)
      for (int c = 0; c < d; ++c) cols.push_back(static_cast<Eigen::Index>(k) * d + c);
    const Eigen::MatrixXd A = U(Eigen::all, cols);
    Eigen::VectorXd w = A.completeOrthogonalDecomposition().solve(y);
    fits.push_back({comb, (y - A * w).norm(), std::move(w)});
  } while (next_combination(comb, n));

  BruteForceResult out;
  out.min_residual = std::numeric_limits<double>::infinity();
  for (const auto &f : fits) out.min_residual = std::min(out.min_residual, f.residual);
  for (auto &f : fits)
    if (f.residual <= out.min_residual + 1e-8) out.minimizers.push_back(std::move(f));

  if (out.minimizers.size() == 1) {
    const auto &w = out.minimizers.front().coefficients;
    const double tol = 1e-8 * std::max(1.0, w.cwiseAbs().maxCoeff());
    out.unique = true;
    for (int b = 0; b < N; ++b)
      if (w.segment(static_cast<Eigen::Index>(b) * d, d).cwiseAbs().maxCoeff() <= tol) out.unique = false;
  }
  return out;
}

struct RecoveryReport {
  UniqueBound bound;
  double coherence = 0.0;
  std::optional<LemmaConditions> lemma; ///< present when ratios were supplied
  int N = 0;
};

inline RecoveryReport recovery_report(const Eigen::MatrixXd &U, int d, const std::optional<Eigen::MatrixXd> &ratios,
                                      int N) {
  RecoveryReport r;
  r.bound = unique_bound(U, d);
  r.coherence = coherence(U).value;
  r.N = N;
  if (ratios) r.lemma = lemma_conditions(U, *ratios, N);
  return r;
}

inline void write_report_text(std::ostream &out, const RecoveryReport &r) {
  out << "rank: " << r.bound.rank << '\n';
  out << "null_dim: " << r.bound.null_dim << '\n';
  out << "n_max_unique: " << r.bound.n_max << '\n';
  out << "coherence: " << format_real(r.coherence) << '\n';
  if (r.lemma) {
    const auto &l = *r.lemma;
    out << "N: " << r.N << '\n';
    out << "rho_hat: " << format_real(l.rho_hat) << '\n';
    out << "lemma_threshold: " << format_real(l.lemma_threshold) << '\n';
    out << "lemma_n_cap: " << format_real(l.n_cap) << '\n';
    out << "satisfied_lemma: " << (l.satisfied_lemma ? "true" : "false") << '\n';
    if (l.negative_lemma_threshold) out << "note: lemma threshold is negative (unsatisfiable regime)\n";
    if (l.corollary_threshold) {
      out << "corollary_threshold: " << format_real(*l.corollary_threshold) << '\n';
      out << "satisfied_corollary: " << (*l.satisfied_corollary ? "true" : "false") << '\n';
    }
  }
}

inline void write_report_csv(std::ostream &out, const RecoveryReport &r) {
  out << "key,value\n";
  out << "rank," << r.bound.rank << '\n';
  out << "null_dim," << r.bound.null_dim << '\n';
  out << "n_max_unique," << r.bound.n_max << '\n';
  out << "coherence," << format_real(r.coherence) << '\n';
  if (r.lemma) {
    const auto &l = *r.lemma;
    out << "N," << r.N << '\n';
    out << "rho_hat," << format_real(l.rho_hat) << '\n';
    out << "lemma_threshold," << format_real(l.lemma_threshold) << '\n';
    out << "lemma_n_cap," << format_real(l.n_cap) << '\n';
    out << "satisfied_lemma," << (l.satisfied_lemma ? 1 : 0) << '\n';
    if (l.corollary_threshold) {
      out << "corollary_threshold," << format_real(*l.corollary_threshold) << '\n';
      out << "satisfied_corollary," << (*l.satisfied_corollary ? 1 : 0) << '\n';
    }
  }
}

/// Rows `frequencies` of the p-point DFT matrix, F(r, c) = exp(-2 pi i f_r c / p).
inline Eigen::MatrixXcd restricted_fourier(const std::vector<int> &frequencies, int p) {
  Eigen::MatrixXcd F(static_cast<Eigen::Index>(frequencies.size()), p);
  for (std::size_t r = 0; r < frequencies.size(); ++r)
    for (int c = 0; c < p; ++c) {
      const double phase = -2.0 * std::numbers::pi * static_cast<double>((static_cast<long long>(frequencies[r]) * c) % p) / p;
      F(static_cast<Eigen::Index>(r), c) = std::polar(1.0, phase);
    }
  return F;
}

} // namespace unbiased

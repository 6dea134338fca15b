#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "format.hpp"
#include "special.hpp"
#include "whitening.hpp"

namespace unbiased {

/// Noncentral F with numerator/denominator degrees of freedom a, b and noncentrality lambda.
struct NoncentralF {
  double a = 1.0;
  double b = 1.0;
  double lambda = 0.0;

  void validate() const {
    require(a > 0.0 && std::isfinite(a), "NoncentralF: a must be positive");
    require(b > 0.0 && std::isfinite(b), "NoncentralF: b must be positive");
    require(lambda >= 0.0 && std::isfinite(lambda), "NoncentralF: lambda must be >= 0");
  }
};

struct NcfEvaluation {
  double value = 0.0;
  long terms = 0;             ///< series terms summed (0 for the closed cases)
  double weight_sum = 0.0;    ///< Poisson mass actually summed
  double tail_bound = 0.0;    ///< bound on the Poisson mass left out
  bool normal_approximation = false;
};

/// Above this noncentrality the series is replaced by a normal approximation.
inline constexpr double ncf_series_lambda_limit = 1e4;

/*
 * Noncentral F distribution as a Poisson mixture of central F laws:
 *   CDF(x) = sum_{j>=0} Pois(j; lambda/2) * I(y; a/2 + j, b/2),  y = a x / (b + a x).
 * The lower tail advances I by the downward recurrence I(p + 1, q) = I(p, q) - T_p,
 * T_p = y^p (1 - y)^q / (p B(p, q)), re-anchored with a direct evaluation when
 * cancellation would set in. The upper tail uses the complement 1 - I(p, q),
 * which the same T_p increases, so it needs no re-anchoring.
 * Summation stops once j is past the Poisson mode and the geometric bound on the
 * remaining Poisson mass is below 1e-14 (lower tail: and the last term too;
 * upper tail: relative to the running sum).
 */
namespace detail {

inline NcfEvaluation ncf_series(const NoncentralF &dist, double x, bool upper) {
  dist.validate();
  require(!std::isnan(x) && x >= 0.0, "ncf_cdf: x must be >= 0");
  NcfEvaluation out;
  if (x == 0.0 || std::isinf(x)) {
    out.value = (x == 0.0) == upper ? 1.0 : 0.0;
    return out;
  }
  const double a = dist.a;
  const double b = dist.b;
  const double lambda = dist.lambda;

  if (lambda > ncf_series_lambda_limit) {
    // chi'^2_a(lambda) - (a x / b) chi^2_b <= 0 with both terms moment-matched to normals.
    const double k = a * x / b;
    const double mean = a + lambda - k * b;
    const double var = 2.0 * (a + 2.0 * lambda) + 2.0 * b * k * k;
    out.value = special::normal_cdf((upper ? 1.0 : -1.0) * mean / std::sqrt(var));
    out.normal_approximation = true;
    return out;
  }

  const double y = a * x / (b + a * x);
  const double y_c = b / (b + a * x);
  if (y >= 1.0 || y_c <= 0.0) {
    out.value = upper ? 0.0 : 1.0;
    return out;
  }
  const double half_b = 0.5 * b;
  const double mu = 0.5 * lambda;
  const double log_y = std::log(y);
  const double log_1my = std::log(y_c);

  double p = 0.5 * a;
  double I = upper ? special::ibeta(half_b, p, y_c) : special::ibeta(p, half_b, y);
  double I_anchor = I;
  double log_T = p * log_y + half_b * log_1my - special::log_beta(p, half_b) - std::log(p);

  special::KahanSum sum;
  special::KahanSum mass;
  constexpr long max_terms = 1'000'000;
  for (long j = 0;; ++j) {
    if (j >= max_terms) throw NumericalError("ncf_cdf: series did not converge within 1e6 terms");
    const double log_w = mu > 0.0 ? -mu + j * std::log(mu) - std::lgamma(j + 1.0) : (j == 0 ? 0.0 : -INFINITY);
    const double w = std::exp(log_w);
    const double term = w * std::clamp(I, 0.0, 1.0);
    sum.add(term);
    mass.add(w);
    out.terms = j + 1;
    if (j >= mu) {
      const double q = mu / (j + 2.0);
      const double tail = w * q / (1.0 - q);
      const bool done = upper ? tail <= 1e-14 * sum.value() : tail < 1e-14 && term < 1e-14;
      if (done) {
        out.tail_bound = tail;
        break;
      }
    }
    const double T = std::exp(log_T);
    if (upper) {
      I += T;
    } else {
      I -= T;
    }
    log_T += log_y + std::log(p + half_b) - std::log(p + 1.0);
    p += 1.0;
    // The subtraction loses relative accuracy as I shrinks; re-anchor it.
    if (!upper && I < 1e-3 * I_anchor) {
      I = special::ibeta(p, half_b, y);
      I_anchor = I;
    }
  }
  out.weight_sum = mass.value();
  out.value = std::clamp(sum.value(), 0.0, 1.0);
  return out;
}

} // namespace detail

/// CDF with series diagnostics. Whichever tail is below one half is summed; the other is its complement.
inline NcfEvaluation ncf_cdf_detail(const NoncentralF &dist, double x) {
  NcfEvaluation lower = detail::ncf_series(dist, x, false);
  if (lower.value > 0.5 && !lower.normal_approximation) lower.value = 1.0 - detail::ncf_series(dist, x, true).value;
  return lower;
}

inline double ncf_cdf(const NoncentralF &dist, double x) { return ncf_cdf_detail(dist, x).value; }

/// P(X > threshold) for X ~ F'(a, b, lambda); small upper tails keep their relative accuracy.
inline double ncf_sf(const NoncentralF &dist, double threshold) {
  const NcfEvaluation lower = detail::ncf_series(dist, threshold, false);
  if (lower.value > 0.5 || lower.normal_approximation) return detail::ncf_series(dist, threshold, true).value;
  return 1.0 - lower.value;
}

struct WeakProbability {
  double p = 0.0;
  double lambda = 0.0;
  double threshold = 0.0;
  int dof = 0; ///< m - N d
  bool blind = false;
};

/// Noncentrality min |U_i^T y_hat|^2 over the truth blocks' columns, or over the N*d
/// largest projections when no truth is given (blind mode).
inline double weakest_projection(const WhitenedModel &wm, const Eigen::VectorXd &y_hat, int N,
                                 const std::optional<std::vector<int>> &truth) {
  require_dims(y_hat.size() == wm.m, "weak_recon_prob: y_hat length must be m");
  const Eigen::VectorXd proj = (wm.cal_U.transpose() * y_hat).array().square();
  if (truth) {
    require(!truth->empty(), "weak_recon_prob: empty truth support");
    double lam = INFINITY;
    for (int k : *truth) {
      require_dims(k >= 0 && k < wm.n, "weak_recon_prob: truth block out of range");
      for (int c = wm.block_offsets[k]; c < wm.block_offsets[k + 1]; ++c) lam = std::min(lam, proj(c));
    }
    return std::isfinite(lam) ? lam : 0.0;
  }
  std::vector<double> sorted(proj.data(), proj.data() + proj.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(N) * wm.d, sorted.size());
  return take ? sorted[take - 1] : 0.0;
}

namespace detail {
inline WeakProbability weak_probability(const WhitenedModel &wm, const Eigen::VectorXd &y_hat, int N,
                                        const std::optional<std::vector<int>> &truth, double threshold_factor) {
  require(N >= 1, "weak_recon_prob: N must be >= 1");
  const int dof = wm.m - N * wm.d;
  require(dof >= 1, "weak_recon_prob: need m > N d");
  WeakProbability out;
  out.dof = dof;
  out.blind = !truth.has_value();
  out.lambda = weakest_projection(wm, y_hat, N, truth);
  out.threshold = threshold_factor * dof;
  out.p = ncf_sf({1.0, static_cast<double>(dof), out.lambda}, out.threshold);
  return out;
}
} // namespace detail

/// p = P(X > 2(m - N d)), X ~ F'(1, m - N d, lambda) for the Gaussian mixture estimator.
inline WeakProbability weak_recon_prob(const WhitenedModel &wm, const Eigen::VectorXd &y_hat, int N,
                                       const std::optional<std::vector<int>> &truth = std::nullopt) {
  return detail::weak_probability(wm, y_hat, N, truth, 2.0);
}

/// Orthogonal-operator case: threshold m - N d. Requires U^T U = I within 1e-8.
inline WeakProbability weak_recon_prob_orthogonal(const WhitenedModel &wm, const Eigen::VectorXd &y_hat, int N,
                                                  const std::optional<std::vector<int>> &truth = std::nullopt) {
  const Eigen::MatrixXd gram = wm.cal_U.transpose() * wm.cal_U;
  const double dev = (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
  if (dev > 1e-8) throw DomainError("weak_recon_prob_orthogonal: unbiased operator is not orthogonal");
  return detail::weak_probability(wm, y_hat, N, truth, 1.0);
}

/*
 * Single-source probability at a known SNR with iid noise:
 *   p = P(X > 2(m - d)),  X ~ F'(1, m - d, m (SNR - 1) / d).
 * The signal energy m (SNR - 1) is shared by the d parameters of the source, and
 * the weakest parameter sets the noncentrality; for d = 1 this is m (SNR - 1).
 */
inline double snr_noncentrality(int m, int d, double snr) { return m * (snr - 1.0) / d; }

inline double snr_prob(int m, int d, double snr) {
  require(d >= 1 && m > d, "snr_prob: need m > d >= 1");
  require(snr >= 1.0, "snr_prob: SNR must be >= 1");
  return ncf_sf({1.0, static_cast<double>(m - d), snr_noncentrality(m, d, snr)}, 2.0 * (m - d));
}

struct ProbabilityCurve {
  std::vector<double> abscissa;
  std::vector<double> ordinate;
  int m = 0;
  int d = 0;
  int N = 1;
};

inline std::vector<ProbabilityCurve> snr_curves(const std::vector<int> &m_list, int d,
                                                const std::vector<double> &snr_grid) {
  for (std::size_t i = 1; i < snr_grid.size(); ++i)
    require(snr_grid[i] > snr_grid[i - 1], "snr_curves: SNR grid must be ascending");
  std::vector<ProbabilityCurve> curves;
  for (int m : m_list) {
    ProbabilityCurve c;
    c.m = m;
    c.d = d;
    c.abscissa = snr_grid;
    for (double s : snr_grid) c.ordinate.push_back(snr_prob(m, d, s));
    curves.push_back(std::move(c));
  }
  return curves;
}

inline void write_curve_csv(const std::filesystem::path &path, const ProbabilityCurve &curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "# m=" << curve.m << '\n' << "# d=" << curve.d << '\n' << "# N=" << curve.N << '\n';
  out << "snr,p\n";
  for (std::size_t i = 0; i < curve.abscissa.size(); ++i)
    out << format_real(curve.abscissa[i]) << ',' << format_real(curve.ordinate[i]) << '\n';
}

/// First SNR in the grid where the sign of p(m1) - p(m2) flips, linearly interpolated.
inline std::optional<double> crossing_point(const ProbabilityCurve &c1, const ProbabilityCurve &c2) {
  require_dims(c1.abscissa.size() == c2.abscissa.size(), "crossing_point: grids differ");
  for (std::size_t i = 1; i < c1.abscissa.size(); ++i) {
    const double d0 = c1.ordinate[i - 1] - c2.ordinate[i - 1];
    const double d1 = c1.ordinate[i] - c2.ordinate[i];
    if (d0 == 0.0) return c1.abscissa[i - 1];
    if ((d0 > 0.0) != (d1 > 0.0) && d1 != d0) {
      const double t = d0 / (d0 - d1);
      return c1.abscissa[i - 1] + t * (c1.abscissa[i] - c1.abscissa[i - 1]);
    }
  }
  return std::nullopt;
}

} // namespace unbiased

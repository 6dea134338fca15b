#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "combinatorics.hpp"
#include "error.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "whitening.hpp"

namespace unbiased {

/// Non-negative per-location scores; argmax breaks ties toward the lowest index.
struct ScoreField {
  Eigen::VectorXd scores;
  Eigen::VectorXd normalized;
  int argmax = 0;
  std::vector<int> ties; ///< every index attaining the maximum
};

inline ScoreField make_score_field(Eigen::VectorXd scores) {
  require_dims(scores.size() > 0, "ScoreField: empty score vector");
  if (!scores.allFinite()) throw NumericalError("ScoreField: non-finite score");
  scores = scores.cwiseMax(0.0);
  ScoreField field;
  const double top = scores.maxCoeff();
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (scores(i) == top) field.ties.push_back(static_cast<int>(i));
  field.argmax = field.ties.front();
  field.normalized = top > 0.0 ? Eigen::VectorXd(scores / top) : Eigen::VectorXd::Zero(scores.size());
  if (top > 0.0) field.normalized(field.argmax) = 1.0;
  field.scores = std::move(scores);
  return field;
}

/// Indices whose score beats every neighbour (ties go to the lower index), by descending score.
inline std::vector<int> local_maxima(const Eigen::VectorXd &scores, const std::vector<std::vector<int>> &neighbors) {
  require_dims(static_cast<Eigen::Index>(neighbors.size()) == scores.size(), "local_maxima: adjacency size");
  std::vector<int> peaks;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
    if (!(scores(i) > 0.0)) continue;
    bool is_peak = true;
    for (int j : neighbors[i]) {
      if (scores(j) > scores(i) || (scores(j) == scores(i) && j < i)) {
        is_peak = false;
        break;
      }
    }
    if (is_peak) peaks.push_back(i);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return scores(a) > scores(b); });
  return peaks;
}

/// Minimum norm estimate x = P L^T Sigma^{-1} y with Sigma = L P L^T + C.
inline Eigen::VectorXd mne(const BlockForwardModel &model, const CovarianceSpec &cov, const Eigen::VectorXd &y) {
  require_dims(y.size() == model.m(), "mne: observation length must be m");
  const Eigen::MatrixXd sigma = build_sigma(model, cov);
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("mne: Sigma solve failed");
  return cov.P * (model.entries().transpose() * llt.solve(y));
}

struct SloretaResult {
  ScoreField field;
  int group_size = 1;
  std::vector<int> degenerate_groups; ///< groups whose M_kk had to be pseudo-inverted
};

/*
 * Standardized scores with Sigma = L P L^T + C (pass P = I for the classical
 * Sigma = L L^T + C form).
 *
 * group_size = 1: one score per column, (L_i^T Sigma^{-1} y)^2 / (L_i^T Sigma^{-1} L_i).
 * group_size = g > 1: one score per g-column group, x_k^T M_kk^{-1} x_k with x the
 * MNE and M = P L^T Sigma^{-1} L P.
 */
inline SloretaResult sloreta_scores(const BlockForwardModel &model, const CovarianceSpec &cov,
                                    const Eigen::VectorXd &y, int group_size) {
  require_dims(y.size() == model.m(), "sloreta_scores: observation length must be m");
  require_dims(group_size == 1 || (group_size >= 1 && model.d() % group_size == 0),
               "sloreta_scores: group size must be 1 or divide d");
  const Eigen::MatrixXd &L = model.entries();
  const Eigen::LLT<Eigen::MatrixXd> llt(build_sigma(model, cov));
  if (llt.info() != Eigen::Success) throw NumericalError("sloreta_scores: Sigma solve failed");
  const Eigen::MatrixXd sigma_inv_L = llt.solve(L);
  const Eigen::VectorXd sigma_inv_y = llt.solve(y);

  SloretaResult out;
  out.group_size = group_size;
  const auto cols = L.cols();
  if (group_size == 1) {
    Eigen::VectorXd scores(cols);
    for (Eigen::Index i = 0; i < cols; ++i) {
      const double num = L.col(i).dot(sigma_inv_y);
      const double den = L.col(i).dot(sigma_inv_L.col(i));
      if (den > 0.0) {
        scores(i) = num * num / den;
      } else {
        scores(i) = 0.0;
        out.degenerate_groups.push_back(static_cast<int>(i));
      }
    }
    out.field = make_score_field(std::move(scores));
    return out;
  }

  const Eigen::VectorXd x = cov.P * (L.transpose() * sigma_inv_y);
  const Eigen::Index groups = cols / group_size;
  Eigen::VectorXd scores(groups);
  for (Eigen::Index k = 0; k < groups; ++k) {
    const auto span = Eigen::seqN(k * group_size, group_size);
    const Eigen::MatrixXd P_rows = cov.P(span, Eigen::all);
    const Eigen::MatrixXd M_kk = P_rows * L.transpose() * sigma_inv_L * P_rows.transpose();
    const Eigen::VectorXd xk = x(span);
    Eigen::LLT<Eigen::MatrixXd> mk(0.5 * (M_kk + M_kk.transpose()));
    const bool ok = mk.info() == Eigen::Success &&
                    mk.matrixLLT().diagonal().array().square().minCoeff() >
                        1e-10 * mk.matrixLLT().diagonal().array().square().maxCoeff();
    if (ok) {
      scores(k) = xk.dot(mk.solve(xk));
    } else {
      out.degenerate_groups.push_back(static_cast<int>(k));
      scores(k) = xk.dot(pinv(M_kk, 1e-10) * xk);
    }
  }
  out.field = make_score_field(std::move(scores));
  return out;
}

/// Per-location score from a column-wise field: sum of the per-column scores of each block.
inline ScoreField sum_columns_per_block(const ScoreField &columns, int d) {
  require_dims(d >= 1 && columns.scores.size() % d == 0, "sum_columns_per_block: size is not a multiple of d");
  const Eigen::Index n = columns.scores.size() / d;
  Eigen::VectorXd scores(n);
  for (Eigen::Index k = 0; k < n; ++k) scores(k) = columns.scores.segment(k * d, d).sum();
  return make_score_field(std::move(scores));
}

enum class SamplingMode { exhaustive, sampled };

struct WeightedSet {
  std::vector<int> blocks;
  double weight = 0.0;     ///< normalized h
  double log_weight = 0.0; ///< unnormalized log h
};

struct MixtureEstimate {
  Eigen::VectorXd w_hat;           ///< (d*n), block k's r_k strength coordinates in slots [k*d, k*d + r_k)
  std::vector<WeightedSet> weights; ///< lexicographic set order
  ScoreField scores;               ///< |U_k^T y_hat| per block
  Eigen::VectorXd block_marginals; ///< sum of weights of the sets containing each block
  std::size_t sets_evaluated = 0;
  SamplingMode sampling_mode = SamplingMode::exhaustive;
  std::vector<std::string> warnings;

  /// Highest-weight index set (lowest lexicographic set on ties).
  const WeightedSet &map_set() const {
    require(!weights.empty(), "MixtureEstimate: no sets");
    std::size_t best = 0;
    for (std::size_t i = 1; i < weights.size(); ++i)
      if (weights[i].weight > weights[best].weight) best = i;
    return weights[best];
  }
};

struct UgeOptions {
  bool force_sampling = false;
  /// Optional prior probabilities per index set; sets not listed get the uniform value.
  std::map<std::vector<int>, double> prior;
};

/*
 * Unbiased Gaussian estimate. Every candidate set I of N blocks is fitted by
 *   w_I = (C^-1/2 U_I)^+ C^-1/2 y_hat,   C = Sigma^-1/2 C Sigma^-1/2,
 * weighted by pi_I * N(y_hat; U_I w_I, C) (log domain), and the embedded fits
 * are averaged with the normalized weights.
 */
inline MixtureEstimate uge(const WhitenedModel &wm, const Eigen::VectorXd &y_hat, int N, std::uint64_t budget,
                           std::uint64_t seed, const UgeOptions &options = {}) {
  require_dims(y_hat.size() == wm.m, "uge: y_hat length must be m");
  require(N >= 1 && N <= wm.n, "uge: need 1 <= N <= n");
  require(budget >= 1, "uge: budget must be >= 1");

  MixtureEstimate est;
  if (static_cast<long long>(N) * wm.d >= wm.m)
    est.warnings.push_back("N*d >= m: per-set fits are underdetermined");

  // Candidate sets, always reduced in lexicographic order.
  const std::uint64_t total = binomial(wm.n, N);
  std::vector<std::vector<int>> sets;
  if (total <= budget && !options.force_sampling) {
    est.sampling_mode = SamplingMode::exhaustive;
    sets.reserve(total);
    auto comb = first_combination(N);
    do {
      sets.push_back(comb);
    } while (next_combination(comb, wm.n));
  } else {
    est.sampling_mode = SamplingMode::sampled;
    const std::uint64_t want = std::min(budget, total);
    const std::uint64_t max_draws = want + 50 * budget;
    Rng rng(seed);
    std::set<std::vector<int>> unique;
    std::uint64_t draws = 0;
    while (unique.size() < want) {
      if (draws++ >= max_draws) throw NumericalError("uge: duplicate-set sampling retries exhausted");
      unique.insert(random_subset(wm.n, N, rng));
    }
    sets.assign(unique.begin(), unique.end());
  }
  est.sets_evaluated = sets.size();

  const Eigen::MatrixXd c_hat = wm.sigma_inv_sqrt * wm.noise_cov * wm.sigma_inv_sqrt;
  const InverseSqrt c_isq = inverse_sqrt(c_hat, 1e-12);
  const Eigen::MatrixXd G = c_isq.value * wm.cal_U;
  const Eigen::VectorXd b = c_isq.value * y_hat;
  const double log_norm = -0.5 * c_isq.log_det - 0.5 * wm.m * std::log(2.0 * std::numbers::pi);
  const double log_uniform = -std::log(static_cast<double>(total));

  struct SetFit {
    Eigen::VectorXd w;
    double log_weight = 0.0;
  };
  std::vector<SetFit> fits(sets.size());
  parallel_for(sets.size(), [&](std::size_t s) {
    const auto &blocks = sets[s];
    std::vector<Eigen::Index> cols;
    for (int k : blocks)
      for (int c = wm.block_offsets[k]; c < wm.block_offsets[k + 1]; ++c) cols.push_back(c);
    const Eigen::MatrixXd A = G(Eigen::all, cols);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols.size()));
    if (!cols.empty()) w = A.completeOrthogonalDecomposition().solve(b);
    const double resid = cols.empty() ? b.squaredNorm() : (b - A * w).squaredNorm();
    double log_prior = log_uniform;
    if (auto it = options.prior.find(blocks); it != options.prior.end()) {
      require(it->second > 0.0, "uge: prior probabilities must be positive");
      log_prior = std::log(it->second);
    }
    fits[s] = {std::move(w), log_norm - 0.5 * resid + log_prior};
  });

  double top = -std::numeric_limits<double>::infinity();
  for (const auto &f : fits) top = std::max(top, f.log_weight);
  if (!std::isfinite(top)) throw NumericalError("uge: no finite set likelihood");
  double total_mass = 0.0;
  for (const auto &f : fits) total_mass += std::exp(f.log_weight - top);

  est.w_hat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(wm.n) * wm.d);
  est.block_marginals = Eigen::VectorXd::Zero(wm.n);
  est.weights.reserve(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const double h = std::exp(fits[s].log_weight - top) / total_mass;
    Eigen::Index pos = 0;
    for (int k : sets[s]) {
      const int r = wm.blocks[k].rank();
      est.w_hat.segment(static_cast<Eigen::Index>(k) * wm.d, r) += h * fits[s].w.segment(pos, r);
      est.block_marginals(k) += h;
      pos += r;
    }
    est.weights.push_back({sets[s], h, fits[s].log_weight});
  }

  est.scores = make_score_field(backproject(wm, y_hat).norms);
  return est;
}

/// Physical coefficients of block k from its strength coordinates in w_hat.
inline Eigen::VectorXd block_source(const WhitenedModel &wm, const Eigen::VectorXd &w_hat, int k) {
  const auto &f = wm.blocks[k];
  return f.V * f.S.cwiseInverse().asDiagonal() * w_hat.segment(static_cast<Eigen::Index>(k) * wm.d, f.rank());
}

struct EstimatedSource {
  int block = 0;
  Eigen::VectorXd moment;
};

struct TrueSource {
  Eigen::VectorXd position;
  Eigen::VectorXd moment;
};

struct LocalizationMetrics {
  std::vector<double> distance;      ///< per true source, to the nearest estimate
  std::vector<double> angle_degrees; ///< between that estimate's moment and the true moment
  std::vector<int> matched_block;

  double total_distance() const { return std::accumulate(distance.begin(), distance.end(), 0.0); }
};

inline double angle_between_degrees(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

/// `positions` holds one row of coordinates per block.
inline LocalizationMetrics localization_metrics(const std::vector<EstimatedSource> &estimates,
                                                const std::vector<TrueSource> &truth,
                                                const Eigen::MatrixXd &positions) {
  require(!estimates.empty(), "localization_metrics: empty estimate");
  LocalizationMetrics out;
  for (const auto &t : truth) {
    require_dims(t.position.size() == positions.cols(), "localization_metrics: position dimension");
    double best = std::numeric_limits<double>::infinity();
    const EstimatedSource *match = nullptr;
    for (const auto &e : estimates) {
      require_dims(e.block >= 0 && e.block < positions.rows(), "localization_metrics: block out of range");
      const double dist = (positions.row(e.block).transpose() - t.position).norm();
      if (dist < best) {
        best = dist;
        match = &e;
      }
    }
    out.distance.push_back(best);
    out.angle_degrees.push_back(angle_between_degrees(match->moment, t.moment));
    out.matched_block.push_back(match->block);
  }
  return out;
}

inline void write_score_csv(const std::filesystem::path &path, const ScoreField &field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "block,score,normalized\n";
  for (Eigen::Index k = 0; k < field.scores.size(); ++k)
    out << k << ',' << format_real(field.scores(k)) << ',' << format_real(field.normalized(k)) << '\n';
}

inline void write_mixture_summary(const std::filesystem::path &path, const MixtureEstimate &est) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "argmax: " << est.scores.argmax << '\n';
  out << "sets_evaluated: " << est.sets_evaluated << '\n';
  out << "sampling_mode: " << (est.sampling_mode == SamplingMode::exhaustive ? "exhaustive" : "sampled") << '\n';
  for (const auto &w : est.warnings) out << "warning: " << w << '\n';
  std::vector<std::size_t> order(est.weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return est.weights[a].weight > est.weights[b].weight; });
  out << "top_sets:\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(10, order.size()); ++i) {
    const auto &w = est.weights[order[i]];
    out << "  - blocks: [";
    for (std::size_t j = 0; j < w.blocks.size(); ++j) out << (j ? ", " : "") << w.blocks[j];
    out << "]  weight: " << format_real(w.weight) << '\n';
  }
}

} // namespace unbiased

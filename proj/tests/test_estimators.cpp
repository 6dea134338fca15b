// Estimators (MNE, standardized scores, mixture estimate) and recoverability bounds.

#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <unbiased/unbiased.hpp>

#include "support.hpp"

using namespace unbiased;
using support::gaussian_matrix;
using support::gaussian_vector;

namespace {

/// Hand-built whitened model: identity whitening, block k owns columns U[:, k*r..], noise covariance noise_var*I.
WhitenedModel manual_model(const Eigen::MatrixXd &U, int d, double noise_var) {
  WhitenedModel wm;
  wm.m = static_cast<int>(U.rows());
  wm.d = d;
  wm.n = static_cast<int>(U.cols()) / d;
  wm.sigma = Eigen::MatrixXd::Identity(wm.m, wm.m);
  wm.sigma_inv_sqrt = wm.sigma;
  wm.noise_cov = noise_var * wm.sigma;
  wm.cal_U = U;
  wm.block_offsets.assign(1, 0);
  for (int k = 0; k < wm.n; ++k) {
    wm.blocks.push_back({U.middleCols(k * d, d), Eigen::VectorXd::Ones(d), Eigen::MatrixXd::Identity(d, d)});
    wm.block_offsets.push_back((k + 1) * d);
  }
  return wm;
}

double weight_sum(const MixtureEstimate &est) {
  double s = 0;
  for (const auto &w : est.weights) s += w.weight;
  return s;
}

} // namespace

// ---------------------------------------------------------------- mne

TEST(Mne, ZeroDataGivesZero) {
  Rng rng(1);
  const BlockForwardModel L(gaussian_matrix(5, 6, rng), 2);
  EXPECT_EQ(mne(L, CovarianceSpec::isotropic(L, 1.0, 1.0), Eigen::VectorXd::Zero(5)), Eigen::VectorXd::Zero(6));
}

TEST(Mne, IdentityModelHalvesTheData) {
  const BlockForwardModel L(Eigen::MatrixXd::Identity(4, 4), 1);
  const Eigen::Vector4d y(1, -2, 3, 0.5);
  EXPECT_LE((mne(L, CovarianceSpec::isotropic(L, 1.0, 1.0), y) - y / 2).norm(), 1e-15);
}

TEST(Mne, MatchesNormalEquations) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const BlockForwardModel L(gaussian_matrix(7, 12, rng), 3);
    const CovarianceSpec cov{support::random_block_spd(4, 3, rng), support::random_spd(7, rng)};
    const Eigen::VectorXd y = gaussian_vector(7, rng);
    // argmin |y - Lx|^2_{C^-1} + |x|^2_{P^-1}
    const Eigen::MatrixXd Ci = cov.C.inverse();
    const Eigen::MatrixXd H = L.entries().transpose() * Ci * L.entries() + cov.P.inverse();
    const Eigen::VectorXd oracle = H.partialPivLu().solve(L.entries().transpose() * Ci * y);
    EXPECT_LE((mne(L, cov, y) - oracle).norm(), 1e-9 * oracle.norm());
  }
}

// ---------------------------------------------------------------- standardized scores

TEST(ScoreField, Invariants) {
  const auto f = make_score_field(Eigen::Vector4d(0.5, 2.0, -1e-18, 2.0));
  EXPECT_EQ(f.argmax, 1);
  EXPECT_EQ(f.ties, (std::vector<int>{1, 3}));
  EXPECT_EQ(f.scores(2), 0.0);
  EXPECT_EQ(f.normalized.maxCoeff(), 1.0);
  EXPECT_GE(f.normalized.minCoeff(), 0.0);
  const auto z = make_score_field(Eigen::VectorXd::Zero(3));
  EXPECT_EQ(z.normalized, Eigen::VectorXd::Zero(3));
  EXPECT_THROW(make_score_field(Eigen::Vector2d(1, NAN)), NumericalError);
}

TEST(Sloreta, NoiselessSingleColumnIsFound) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 6 + trial % 20, n = 10 + trial % 30;
    const BlockForwardModel L(gaussian_matrix(m, n, rng), 1);
    const CovarianceSpec cov{Eigen::MatrixXd::Identity(n, n), support::random_spd(m, rng)};
    const int k = static_cast<int>(rng.index(n));
    const Eigen::VectorXd y = L.entries().col(k) * (rng.uniform(0.5, 3.0) * (trial % 2 ? 1 : -1));
    ASSERT_EQ(sloreta_scores(L, cov, y, 1).field.argmax, k) << "trial " << trial;
  }
}

TEST(Sloreta, ColumnScoresMatchDirectFormula) {
  Rng rng(4);
  const BlockForwardModel L(gaussian_matrix(6, 8, rng), 2);
  const CovarianceSpec cov{support::random_block_spd(4, 2, rng), support::random_spd(6, rng)};
  const Eigen::VectorXd y = gaussian_vector(6, rng);
  const Eigen::MatrixXd Si = build_sigma(L, cov).inverse();
  const auto res = sloreta_scores(L, cov, y, 1);
  ASSERT_EQ(res.field.scores.size(), 8);
  for (int i = 0; i < 8; ++i) {
    const Eigen::VectorXd li = L.entries().col(i);
    const double expect = std::pow(li.dot(Si * y), 2) / li.dot(Si * li);
    EXPECT_NEAR(res.field.scores(i), expect, 1e-10 * std::max(1.0, expect));
  }
}

TEST(Sloreta, GroupScoresMatchExplicitInverse) {
  Rng rng(5);
  const BlockForwardModel L(gaussian_matrix(9, 12, rng), 3);
  const CovarianceSpec cov{support::random_block_spd(4, 3, rng), support::random_spd(9, rng)};
  const Eigen::VectorXd y = gaussian_vector(9, rng);
  const Eigen::MatrixXd Si = build_sigma(L, cov).inverse();
  const Eigen::VectorXd x = cov.P * L.entries().transpose() * Si * y;
  const Eigen::MatrixXd M = cov.P * L.entries().transpose() * Si * L.entries() * cov.P;
  const auto res = sloreta_scores(L, cov, y, 3);
  EXPECT_TRUE(res.degenerate_groups.empty());
  for (int k = 0; k < 4; ++k) {
    const Eigen::VectorXd xk = x.segment(3 * k, 3);
    const double expect = xk.dot(M.block(3 * k, 3 * k, 3, 3).inverse() * xk);
    EXPECT_NEAR(res.field.scores(k), expect, 1e-8 * std::max(1.0, expect));
  }
}

TEST(Sloreta, OrthogonalDataScoresZero) {
  Rng rng(6);
  const BlockForwardModel L(gaussian_matrix(6, 6, rng), 2);
  const auto cov = CovarianceSpec::isotropic(L, 1.0, 1.0);
  const Eigen::MatrixXd sigma = build_sigma(L, cov);
  // y with Sigma^{-1} y orthogonal to both columns of block 1
  Eigen::MatrixXd B = L.block(1);
  Eigen::VectorXd v = gaussian_vector(6, rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(B).householderQ();
  v -= Q.leftCols(2) * (Q.leftCols(2).transpose() * v);
  const Eigen::VectorXd y = sigma * v;
  const auto res = sloreta_scores(L, cov, y, 2);
  EXPECT_NEAR(res.field.scores(1), 0.0, 1e-20 + 1e-12 * res.field.scores.maxCoeff());
  const auto cols = sloreta_scores(L, cov, y, 1);
  EXPECT_NEAR(cols.field.scores(2) + cols.field.scores(3), 0.0, 1e-12 * cols.field.scores.maxCoeff());
}

TEST(Sloreta, RejectsBadGroup) {
  Rng rng(7);
  const BlockForwardModel L(gaussian_matrix(6, 6, rng), 3);
  const auto cov = CovarianceSpec::isotropic(L, 1.0, 1.0);
  EXPECT_THROW(sloreta_scores(L, cov, gaussian_vector(6, rng), 2), DimensionError);
  EXPECT_THROW(sloreta_scores(L, cov, gaussian_vector(5, rng), 1), DimensionError);
}

TEST(Sloreta, DegenerateGroupIsReported) {
  Rng rng(8);
  Eigen::MatrixXd entries = gaussian_matrix(6, 6, rng);
  entries.col(3) = entries.col(2);
  const BlockForwardModel L(entries, 2);
  const auto res = sloreta_scores(L, CovarianceSpec::isotropic(L, 1.0, 1.0), gaussian_vector(6, rng), 2);
  EXPECT_EQ(res.degenerate_groups, std::vector<int>{1});
  EXPECT_TRUE(res.field.scores.allFinite());
}

TEST(SumColumnsPerBlock, AddsAdjacentScores) {
  const auto f = sum_columns_per_block(make_score_field((Eigen::VectorXd(6) << 1, 2, 3, 4, 0.5, 0.5).finished()), 2);
  EXPECT_EQ(f.scores, Eigen::Vector3d(3, 7, 1));
  EXPECT_EQ(f.argmax, 1);
}

TEST(LocalMaxima, PeaksByDescendingScore) {
  // path graph 0-1-2-3-4-5
  std::vector<std::vector<int>> nb(6);
  for (int i = 0; i < 6; ++i) {
    if (i > 0) nb[i].push_back(i - 1);
    if (i < 5) nb[i].push_back(i + 1);
  }
  Eigen::VectorXd s(6);
  s << 1, 3, 2, 2, 5, 0;
  EXPECT_EQ(local_maxima(s, nb), (std::vector<int>{4, 1}));
  s << 1, 1, 0, 0, 0, 0;
  EXPECT_EQ(local_maxima(s, nb), std::vector<int>{0});
  EXPECT_TRUE(local_maxima(Eigen::VectorXd::Zero(6), nb).empty());
}

// ---------------------------------------------------------------- mixture estimate

TEST(Uge, OrthogonalNoiselessConcentrates) {
  const WhitenedModel wm = manual_model(Eigen::MatrixXd::Identity(6, 3), 1, 1e-4);
  Eigen::VectorXd yh = Eigen::VectorXd::Zero(6);
  yh(2) = 1.7;
  const auto est = uge(wm, yh, 1, 100, 0);
  ASSERT_EQ(est.weights.size(), 3u);
  EXPECT_EQ(est.sampling_mode, SamplingMode::exhaustive);
  EXPECT_GE(est.weights[2].weight, 1.0 - 1e-6);
  EXPECT_EQ(est.map_set().blocks, std::vector<int>{2});
  EXPECT_NEAR(est.w_hat(2), 1.7, 1e-6);
  EXPECT_EQ(est.scores.argmax, 2);
}

TEST(Uge, OrthogonalWeightsFollowClosedForm) {
  // With orthonormal columns the set-{k} residual is |y|^2 - y_k^2, so h_k is proportional to exp(y_k^2 / (2 s)).
  const double s = 0.5;
  const WhitenedModel wm = manual_model(Eigen::MatrixXd::Identity(5, 3), 1, s);
  const Eigen::VectorXd yh = (Eigen::VectorXd(5) << 0.3, -1.1, 0.8, 0.2, 0.1).finished();
  const auto est = uge(wm, yh, 1, 10, 0);
  Eigen::Vector3d expect;
  for (int k = 0; k < 3; ++k) expect(k) = std::exp(yh(k) * yh(k) / (2 * s));
  expect /= expect.sum();
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(est.weights[k].weight, expect(k), 1e-13);
    EXPECT_NEAR(est.w_hat(k), expect(k) * yh(k), 1e-13);
    EXPECT_NEAR(est.block_marginals(k), expect(k), 1e-13);
  }
  // log-weights carry the Gaussian normalization
  const double resid0 = yh.squaredNorm() - yh(0) * yh(0);
  const double logw0 = -0.5 * 5 * std::log(s) - 2.5 * std::log(2 * std::numbers::pi) - 0.5 * resid0 / s - std::log(3.0);
  EXPECT_NEAR(est.weights[0].log_weight, logw0, 1e-12);
}

TEST(Uge, ZeroDataGivesEqualWeights) {
  Rng rng(9);
  const BlockForwardModel L(gaussian_matrix(8, 10, rng), 2);
  const auto wm = whiten(L, CovarianceSpec::isotropic(L, 1.0, 0.5));
  const auto est = uge(wm, Eigen::VectorXd::Zero(8), 2, 1000, 0);
  ASSERT_EQ(est.weights.size(), 10u);
  for (const auto &w : est.weights) EXPECT_NEAR(w.weight, 0.1, 1e-14);
  EXPECT_EQ(est.w_hat, Eigen::VectorXd::Zero(10));
}

TEST(Uge, FullBudgetSamplingEqualsExhaustive) {
  Rng rng(10);
  const BlockForwardModel L(gaussian_matrix(9, 14, rng), 2);
  const auto wm = whiten(L, CovarianceSpec::isotropic(L, 1.0, 0.2));
  const Eigen::VectorXd yh = whiten_observation(wm, gaussian_vector(9, rng));
  const auto ex = uge(wm, yh, 2, binomial(7, 2), 5);
  UgeOptions force;
  force.force_sampling = true;
  const auto sa = uge(wm, yh, 2, binomial(7, 2), 5, force);
  EXPECT_EQ(ex.sampling_mode, SamplingMode::exhaustive);
  EXPECT_EQ(sa.sampling_mode, SamplingMode::sampled);
  ASSERT_EQ(ex.weights.size(), sa.weights.size());
  for (std::size_t i = 0; i < ex.weights.size(); ++i) EXPECT_EQ(ex.weights[i].blocks, sa.weights[i].blocks);
  EXPECT_LE((ex.w_hat - sa.w_hat).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Uge, SampledRunIsSeededAndDistinct) {
  Rng rng(11);
  const BlockForwardModel L(gaussian_matrix(10, 30, rng), 1);
  const auto wm = whiten(L, CovarianceSpec::isotropic(L, 1.0, 0.2));
  const Eigen::VectorXd yh = whiten_observation(wm, gaussian_vector(10, rng));
  const auto a = uge(wm, yh, 3, 200, 42);
  const auto b = uge(wm, yh, 3, 200, 42);
  const auto c = uge(wm, yh, 3, 200, 43);
  EXPECT_EQ(a.sets_evaluated, 200u);
  EXPECT_EQ(a.w_hat, b.w_hat);
  EXPECT_NE(a.w_hat, c.w_hat);
  for (std::size_t i = 1; i < a.weights.size(); ++i) EXPECT_LT(a.weights[i - 1].blocks, a.weights[i].blocks);
}

TEST(Uge, AllBlocksReproducesThePseudoinverseFit) {
  Rng rng(12);
  const BlockForwardModel L(gaussian_matrix(12, 8, rng), 2);
  const CovarianceSpec cov{support::random_block_spd(4, 2, rng), support::random_spd(12, rng)};
  const auto wm = whiten(L, cov);
  const Eigen::VectorXd yh = whiten_observation(wm, gaussian_vector(12, rng));
  const auto est = uge(wm, yh, 4, 1, 0);
  ASSERT_EQ(est.weights.size(), 1u);
  EXPECT_DOUBLE_EQ(est.weights[0].weight, 1.0);
  const Eigen::MatrixXd c_hat = wm.sigma_inv_sqrt * cov.C * wm.sigma_inv_sqrt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c_hat);
  const Eigen::MatrixXd W = eig.operatorInverseSqrt();
  const Eigen::VectorXd fit = pinv(W * wm.cal_U) * (W * yh);
  EXPECT_LE((est.w_hat - fit).norm(), 1e-9 * fit.norm());
}

TEST(Uge, ScalingKeepsTheScoreArgmax) {
  Rng rng(13);
  const BlockForwardModel L(gaussian_matrix(8, 20, rng), 2);
  const auto wm = whiten(L, CovarianceSpec::isotropic(L, 1.0, 0.3));
  const Eigen::VectorXd yh = whiten_observation(wm, gaussian_vector(8, rng));
  const auto base = uge(wm, yh, 1, 100, 0);
  for (double c : {1e-3, 0.5, 7.0, 1e3}) {
    const auto scaled = uge(wm, c * yh, 1, 100, 0);
    EXPECT_EQ(scaled.scores.argmax, base.scores.argmax);
    EXPECT_LE((scaled.scores.scores - c * base.scores.scores).norm(), 1e-12 * c * base.scores.scores.norm());
  }
}

TEST(Uge, WeightsStayFiniteForLargeResiduals) {
  Rng rng(14);
  const int m = 400;
  const BlockForwardModel L(gaussian_matrix(m, 30, rng), 1);
  const auto wm = whiten(L, CovarianceSpec::isotropic(L, 1.0, 1e-6));
  const Eigen::VectorXd yh = 1e3 * gaussian_vector(m, rng);
  const auto est = uge(wm, yh, 2, 1000, 0);
  for (const auto &w : est.weights) {
    EXPECT_TRUE(std::isfinite(w.weight));
    EXPECT_GE(w.weight, 0.0);
  }
  EXPECT_NEAR(weight_sum(est), 1.0, 1e-12);
  EXPECT_TRUE(est.w_hat.allFinite());
}

TEST(Uge, WarnsWhenUnderdetermined) {
  Rng rng(15);
  const BlockForwardModel L(gaussian_matrix(4, 12, rng), 2);
  const auto wm = whiten(L, CovarianceSpec::isotropic(L, 1.0, 1.0));
  EXPECT_FALSE(uge(wm, gaussian_vector(4, rng), 2, 100, 0).warnings.empty());
  EXPECT_TRUE(uge(wm, gaussian_vector(4, rng), 1, 100, 0).warnings.empty());
  EXPECT_THROW(uge(wm, gaussian_vector(4, rng), 0, 100, 0), DomainError);
  EXPECT_THROW(uge(wm, gaussian_vector(4, rng), 1, 0, 0), DomainError);
}

TEST(Uge, PriorShiftsTheWeights) {
  const WhitenedModel wm = manual_model(Eigen::MatrixXd::Identity(4, 2), 1, 1.0);
  const Eigen::VectorXd yh = Eigen::Vector4d(1.0, 1.0, 0.0, 0.0);
  UgeOptions opt;
  opt.prior[{0}] = 0.9;
  opt.prior[{1}] = 0.1;
  const auto est = uge(wm, yh, 1, 10, 0, opt);
  EXPECT_NEAR(est.weights[0].weight, 0.9, 1e-14);
  opt.prior[{1}] = -1.0;
  EXPECT_THROW(uge(wm, yh, 1, 10, 0, opt), DomainError);
}

TEST(Uge, BlockSourceInvertsTheStrengthMap) {
  Rng rng(16);
  const BlockForwardModel L(gaussian_matrix(10, 6, rng), 3);
  const auto cov = CovarianceSpec::isotropic(L, 1.0, 1e-8);
  const auto wm = whiten(L, cov);
  const Eigen::VectorXd c = gaussian_vector(3, rng);
  const Eigen::VectorXd yh = whiten_observation(wm, L.block(1) * c);
  const auto est = uge(wm, yh, 1, 10, 0);
  EXPECT_EQ(est.map_set().blocks, std::vector<int>{1});
  EXPECT_LE((block_source(wm, est.w_hat, 1) - c).norm(), 1e-5 * c.norm());
}

TEST(Uge, SummaryAndScoreCsv) {
  const WhitenedModel wm = manual_model(Eigen::MatrixXd::Identity(3, 3), 1, 1.0);
  const auto est = uge(wm, Eigen::Vector3d(0, 2, 0), 1, 10, 0);
  const auto dir = support::fresh_dir("uge_out");
  write_score_csv(dir / "scores.csv", est.scores);
  write_mixture_summary(dir / "summary.yaml", est);
  std::ifstream in(dir / "scores.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "block,score,normalized\n0,0,0\n1,2,1\n2,0,0\n");
  std::ifstream sum(dir / "summary.yaml");
  std::string line;
  std::getline(sum, line);
  EXPECT_EQ(line, "argmax: 1");
}

// ---------------------------------------------------------------- localization metrics

TEST(LocalizationMetrics, ExactAndFlipped) {
  Eigen::MatrixXd pos(3, 2);
  pos << 0, 0, 1, 0, 0, 2;
  const std::vector<TrueSource> truth{{Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)}};
  auto m = localization_metrics({{1, Eigen::Vector2d(0, 3)}}, truth, pos);
  EXPECT_EQ(m.distance[0], 0.0);
  EXPECT_NEAR(m.angle_degrees[0], 0.0, 1e-12);
  m = localization_metrics({{1, Eigen::Vector2d(0, -1)}}, truth, pos);
  EXPECT_NEAR(m.angle_degrees[0], 180.0, 1e-12);
  EXPECT_THROW(localization_metrics({}, truth, pos), DomainError);
}

TEST(LocalizationMetrics, OffsetGrid) {
  Eigen::MatrixXd pos(2, 2);
  pos << 3, 4, -1, -1;
  const std::vector<TrueSource> truth{{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)},
                                      {Eigen::Vector2d(3, 0), Eigen::Vector2d(1, 1)}};
  const auto m = localization_metrics({{0, Eigen::Vector2d(1, 0)}, {1, Eigen::Vector2d(0, 1)}}, truth, pos);
  EXPECT_NEAR(m.distance[0], std::sqrt(2.0), 1e-15);
  EXPECT_EQ(m.matched_block[0], 1);
  EXPECT_NEAR(m.distance[1], 4.0, 1e-15);
  EXPECT_EQ(m.matched_block[1], 0);
  EXPECT_NEAR(m.angle_degrees[0], 90.0, 1e-12);
  EXPECT_NEAR(m.angle_degrees[1], 45.0, 1e-12);
  EXPECT_NEAR(m.total_distance(), 4.0 + std::sqrt(2.0), 1e-15);
}

// ---------------------------------------------------------------- recoverability

TEST(UniqueBound, FourierExample) {
  std::vector<int> freqs(10);
  for (int i = 0; i < 10; ++i) freqs[i] = i;
  const auto b = unique_bound(restricted_fourier(freqs, 21), 1);
  EXPECT_EQ(b.rank, 10);
  EXPECT_EQ(b.null_dim, 11);
  EXPECT_EQ(b.n_max, 5);
}

TEST(UniqueBound, SmallPrimesGiveHalfTheRows) {
  Rng rng(17);
  for (int p : {5, 7, 11, 13}) {
    for (int m = 1; m < p; ++m) {
      const std::vector<int> freqs = random_subset(p, m, rng);
      EXPECT_EQ(unique_bound(restricted_fourier(freqs, p), 1).n_max, m / 2) << "p=" << p << " m=" << m;
    }
  }
}

TEST(UniqueBound, PrimeDftMinorsAreNonsingular) {
  // every square minor of a prime-order DFT is invertible, so row subsets are full spark
  const int p = 7;
  const auto F = restricted_fourier({0, 2, 5}, p);
  auto cols = first_combination(3);
  do {
    Eigen::Matrix3cd sub;
    for (int j = 0; j < 3; ++j) sub.col(j) = F.col(cols[j]);
    EXPECT_GT(std::abs(sub.determinant()), 1e-8);
  } while (next_combination(cols, p));
}

TEST(UniqueBound, SquareInvertible) {
  Rng rng(18);
  for (int d : {1, 2, 3}) {
    const int n = 4;
    const auto b = unique_bound(gaussian_matrix(n * d, n * d, rng), d);
    EXPECT_EQ(b.null_dim, 0);
    // largest N with 2dN < nd + 1
    EXPECT_EQ(b.n_max, (n * d) / (2 * d) - ((n * d + 1) % (2 * d) == 0 ? 1 : 0));
    EXPECT_EQ(b.n_max, 2);
  }
}

TEST(UniqueBound, DuplicatedColumn) {
  Rng rng(19);
  Eigen::MatrixXd U = gaussian_matrix(4, 6, rng);
  U.col(5) = U.col(1);
  // independent rank: Gram-Schmidt elimination
  int rank = 0;
  Eigen::MatrixXd basis(4, 0);
  for (int j = 0; j < 6; ++j) {
    Eigen::VectorXd v = U.col(j);
    for (int b = 0; b < basis.cols(); ++b) v -= basis.col(b).dot(v) * basis.col(b);
    if (v.norm() > 1e-9 * U.col(j).norm()) {
      basis.conservativeResize(4, basis.cols() + 1);
      basis.col(basis.cols() - 1) = v.normalized();
      ++rank;
    }
  }
  const auto b = unique_bound(U, 1);
  EXPECT_EQ(b.rank, rank);
  EXPECT_EQ(b.rank, 4);
  EXPECT_EQ(b.null_dim, 2);
  EXPECT_EQ(b.n_max, 2);
  EXPECT_THROW(unique_bound(U, 4), DimensionError);
}

TEST(UniqueBound, MonotoneInRows) {
  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd U = gaussian_matrix(2, 16, rng);
    int prev = unique_bound(U, 2).n_max;
    for (int extra = 0; extra < 16; ++extra) {
      U.conservativeResize(U.rows() + 1, Eigen::NoChange);
      U.row(U.rows() - 1) = gaussian_vector(16, rng).transpose();
      const int cur = unique_bound(U, 2).n_max;
      EXPECT_GE(cur, prev);
      prev = cur;
    }
  }
}

TEST(Coherence, Examples) {
  EXPECT_EQ(coherence(Eigen::MatrixXd::Identity(4, 3)).value, 0.0);
  Eigen::MatrixXd dup(2, 2);
  dup << 1, 2, 1, 2;
  const auto c = coherence(dup);
  EXPECT_NEAR(c.value, 1.0, 1e-15);
  EXPECT_TRUE(c.renormalized);
  Eigen::MatrixXd tri(2, 3);
  for (int j = 0; j < 3; ++j) {
    const double t = 2.0 * std::numbers::pi * j / 3.0;
    tri.col(j) << std::cos(t), std::sin(t);
  }
  EXPECT_NEAR(coherence(tri).value, 0.5, 1e-15);
  EXPECT_FALSE(coherence(tri).renormalized);
  EXPECT_THROW(coherence(Eigen::MatrixXd::Zero(2, 2)), DomainError);
}

TEST(Coherence, SignAndPermutationInvariant) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd U = gaussian_matrix(5, 9, rng);
    Eigen::MatrixXd V(5, 9);
    std::vector<int> perm = random_subset(9, 9, rng);
    for (int j = 8; j > 0; --j) std::swap(perm[j], perm[rng.index(j + 1)]);
    for (int j = 0; j < 9; ++j) V.col(j) = U.col(perm[j]) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
    EXPECT_NEAR(coherence(U).value, coherence(V).value, 1e-14);
  }
}

TEST(LemmaConditions, FormulaValues) {
  EXPECT_DOUBLE_EQ(lemma_threshold(0.5), 0.53125);
  EXPECT_NEAR(lemma_n_cap(0.5), std::sqrt(3.75) / 1.75 + 1.0, 1e-15);
  EXPECT_NEAR(lemma_n_cap(0.5), 2.1066, 1e-4);
  EXPECT_DOUBLE_EQ(lemma_threshold(1.0), -0.5);
  EXPECT_DOUBLE_EQ(corollary_threshold(0.5, 3), 0.0);
  EXPECT_DOUBLE_EQ(corollary_threshold(0.25, 3), (1 - 0.25) / (0.25 + 1));
}

TEST(LemmaConditions, ThresholdStrictlyDecreasing) {
  double prev = lemma_threshold(1e-3);
  for (int i = 2; i <= 1000; ++i) {
    const double cur = lemma_threshold(i * 1e-3);
    ASSERT_LT(cur, prev) << "at " << i * 1e-3;
    prev = cur;
  }
}

TEST(LemmaConditions, EqualStrengthRegime) {
  Eigen::MatrixXd ratios = Eigen::MatrixXd::Ones(3, 3);
  const Eigen::MatrixXd U = Eigen::MatrixXd::Identity(3, 3);
  const auto lc = lemma_conditions(U, ratios, 3);
  EXPECT_EQ(lc.rho_hat, 1.0);
  EXPECT_FALSE(lc.satisfied_lemma);
  EXPECT_TRUE(lc.negative_lemma_threshold);
  ASSERT_TRUE(lc.corollary_threshold.has_value());
  EXPECT_DOUBLE_EQ(*lc.corollary_threshold, -3.0 / 5.0);
  EXPECT_FALSE(*lc.satisfied_corollary);
  const auto two = lemma_conditions(U, ratios, 2);
  EXPECT_FALSE(two.corollary_threshold.has_value());
}

TEST(LemmaConditions, SatisfiedForWeakSecondSource) {
  Eigen::MatrixXd ratios(2, 2);
  ratios << 1, 0.5, 2, 1;
  Eigen::MatrixXd U(3, 2);
  U << 1, 0.5, 0, std::sqrt(0.75), 0, 0;
  const auto lc = lemma_conditions(U, ratios, 2);
  EXPECT_EQ(lc.rho_hat, 0.5);
  EXPECT_NEAR(lc.coherence, 0.5, 1e-15);
  EXPECT_TRUE(lc.satisfied_lemma);
  EXPECT_FALSE(lemma_conditions(U, ratios, 3).satisfied_lemma); // N above the cap
  ratios(1, 0) = 3.0;
  EXPECT_THROW(lemma_conditions(U, ratios, 2), DomainError);
}

TEST(LemmaConditions, RatiosFromBlockStrengths) {
  const BlockForwardModel L(Eigen::Vector3d(1, 2, 4).asDiagonal().toDenseMatrix(), 1);
  const auto wm = whiten(L, {Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 3)});
  const Eigen::MatrixXd r = equal_strength_ratios(wm);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r(i, j), wm.blocks[i].S(0) / wm.blocks[j].S(0), 1e-15);
  // whitened strengths are l / sqrt(1 + l^2)
  EXPECT_NEAR(r(0, 1), (1 / std::sqrt(2.0)) / (2 / std::sqrt(5.0)), 1e-12);
  EXPECT_NEAR(rho_hat(r), r(1, 2), 1e-15);
}

TEST(BruteForce, SingleBlockIsUnique) {
  Rng rng(22);
  const Eigen::MatrixXd U = gaussian_matrix(6, 10, rng);
  const auto res = brute_force_unique(U, 2.5 * U.col(7), 1, 1);
  EXPECT_TRUE(res.unique);
  ASSERT_EQ(res.minimizers.size(), 1u);
  EXPECT_EQ(res.minimizers[0].support, std::vector<int>{7});
  EXPECT_NEAR(res.minimizers[0].coefficients(0), 2.5, 1e-12);
}

TEST(BruteForce, DuplicatedColumnIsAmbiguous) {
  Rng rng(23);
  Eigen::MatrixXd U = gaussian_matrix(6, 8, rng);
  U.col(5) = U.col(2);
  const auto res = brute_force_unique(U, U.col(2) + U.col(4), 2, 1);
  EXPECT_FALSE(res.unique);
  EXPECT_GE(res.minimizers.size(), 2u);
}

TEST(BruteForce, GuardAndShape) {
  Rng rng(24);
  EXPECT_THROW(brute_force_unique(gaussian_matrix(3, 100, rng), gaussian_vector(3, rng), 5, 1), DomainError);
  EXPECT_THROW(brute_force_unique(gaussian_matrix(3, 6, rng), gaussian_vector(4, rng), 1, 1), DimensionError);
}

TEST(BruteForce, AgreesWithTheBoundOnBlocks) {
  Rng rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd U = gaussian_matrix(8, 12, rng);
    const int d = 2;
    const int nmax = unique_bound(U, d).n_max;
    ASSERT_EQ(nmax, 2);
    for (int N = 1; N <= nmax; ++N) {
      const auto support = random_subset(6, N, rng);
      Eigen::VectorXd x = Eigen::VectorXd::Zero(12);
      for (int k : support) x.segment(2 * k, 2) = gaussian_vector(2, rng);
      const auto res = brute_force_unique(U, U * x, N, d);
      EXPECT_TRUE(res.unique);
      EXPECT_EQ(res.minimizers.front().support, support);
    }
  }
}

TEST(RecoveryReport, TextAndCsv) {
  Eigen::MatrixXd ratios(2, 2);
  ratios << 1, 0.5, 2, 1;
  const auto r = recovery_report(Eigen::MatrixXd::Identity(3, 2), 1, ratios, 2);
  std::ostringstream text, csv;
  write_report_text(text, r);
  write_report_csv(csv, r);
  EXPECT_NE(text.str().find("rank: 2\nnull_dim: 0\nn_max_unique: 1\ncoherence: 0\n"), std::string::npos);
  EXPECT_NE(text.str().find("rho_hat: 0.5\n"), std::string::npos);
  EXPECT_EQ(csv.str().rfind("key,value\nrank,2\n", 0), 0u);
  EXPECT_NE(csv.str().find("satisfied_lemma,1\n"), std::string::npos);
}

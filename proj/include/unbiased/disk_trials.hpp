#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "combinatorics.hpp"
#include "disk.hpp"
#include "estimators.hpp"
#include "whitening.hpp"

namespace unbiased::disk {

/// Seed of trial t in a run seeded with `seed` (splitmix64 step, so nearby seeds decorrelate).
inline std::uint64_t trial_seed(std::uint64_t seed, int t) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(t + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct SingleSourceTrials {
  std::vector<double> mixture_error; ///< distance from the MAP block to the true source
  std::vector<double> mne_error;     ///< distance from the largest-norm MNE block
  int mixture_wins = 0;              ///< trials with mixture_error < mne_error
};

/*
 * One source, `trials` noisy realizations. The model assumes P = I and
 * C = (level * RMS(clean))^2 I. The mixture estimate takes its highest-weight
 * single block; MNE takes the block with the largest coefficient norm.
 */
inline SingleSourceTrials single_source_trials(const DiskGeometry &g, const DiskScenario &s, double noise_level,
                                               int trials, std::uint64_t seed) {
  require(s.sources.size() == 1, "single_source_trials: scenario must hold one source");
  require(trials >= 1, "single_source_trials: trials must be >= 1");
  const BlockForwardModel L = disk_lead_field(g);
  const Eigen::VectorXd clean = scenario_signal(g, s);
  const double sigma = noise_level * rms(clean);
  const CovarianceSpec cov = CovarianceSpec::isotropic(L, 1.0, sigma * sigma);
  const WhitenedModel wm = whiten(L, cov);
  const Eigen::Vector2d truth = s.sources[0].position;
  const auto distance = [&](int k) { return (g.source_grid.row(k).transpose() - truth).norm(); };

  SingleSourceTrials out;
  for (int t = 0; t < trials; ++t) {
    const Observation obs = noisy_observation(clean, noise_level, trial_seed(seed, t));
    const Eigen::VectorXd x = mne(L, cov, obs.y);
    int k_mne = 0;
    double best = -1.0;
    for (int k = 0; k < g.n(); ++k)
      if (const double v = x.segment(2 * k, 2).norm(); v > best) {
        best = v;
        k_mne = k;
      }
    const MixtureEstimate est = uge(wm, whiten_observation(wm, obs.y), 1, static_cast<std::uint64_t>(g.n()), 1);
    const double e_mix = distance(est.map_set().blocks.front());
    const double e_mne = distance(k_mne);
    out.mixture_error.push_back(e_mix);
    out.mne_error.push_back(e_mne);
    out.mixture_wins += e_mix < e_mne;
  }
  return out;
}

struct PeakTrials {
  std::vector<int> block_found;     ///< sources matched by the two strongest peaks, free-orientation blocks
  std::vector<int> fixed_found;     ///< same for the fixed radial-orientation field
  int block_resolved = 0;           ///< trials where block_found == 2
  int fixed_unresolved = 0;         ///< trials where fixed_found < 2
};

/// Number of sources within `tol` of one of the peaks.
inline int sources_matched(const DiskGeometry &g, const DiskScenario &s, const std::vector<int> &peaks, double tol) {
  int found = 0;
  for (const auto &src : s.sources) {
    bool hit = false;
    for (int p : peaks) hit = hit || (g.source_grid.row(p).transpose() - src.position).norm() < tol;
    found += hit;
  }
  return found;
}

/*
 * Two-source peak test. The standardized field over 2-column blocks (free
 * orientation in the plane) is compared with the classical one-parameter field
 * built from fixed radial moments. Only the two strongest local maxima of each
 * field count; a source is found when one of them lies within tol_fraction * R.
 */
inline PeakTrials two_source_peak_trials(const DiskGeometry &g, const DiskScenario &s, double noise_level, int trials,
                                         std::uint64_t seed, double tol_fraction = 0.1) {
  require(trials >= 1, "two_source_peak_trials: trials must be >= 1");
  const BlockForwardModel L = disk_lead_field(g);
  const BlockForwardModel L_fixed = radial_lead_field(g);
  const auto neighbors = grid_neighbors(g.grid);
  const Eigen::VectorXd clean = scenario_signal(g, s);
  const double var = std::pow(noise_level * rms(clean), 2);
  const CovarianceSpec cov = CovarianceSpec::isotropic(L, 1.0, var);
  const CovarianceSpec cov_fixed = CovarianceSpec::isotropic(L_fixed, 1.0, var);
  const double tol = tol_fraction * g.radius;

  const auto top_two = [&](const Eigen::VectorXd &scores) {
    auto peaks = local_maxima(scores, neighbors);
    if (peaks.size() > 2) peaks.resize(2);
    return peaks;
  };

  PeakTrials out;
  for (int t = 0; t < trials; ++t) {
    const Observation obs = noisy_observation(clean, noise_level, trial_seed(seed, t));
    const int b = sources_matched(g, s, top_two(sloreta_scores(L, cov, obs.y, 2).field.scores), tol);
    const int f = sources_matched(g, s, top_two(sloreta_scores(L_fixed, cov_fixed, obs.y, 1).field.scores), tol);
    out.block_found.push_back(b);
    out.fixed_found.push_back(f);
    out.block_resolved += b == static_cast<int>(s.sources.size());
    out.fixed_unresolved += f < static_cast<int>(s.sources.size());
  }
  return out;
}

struct TwoSourceTrials {
  std::vector<double> mixture_error; ///< summed distance, MAP pair of the two-source mixture
  std::vector<double> mne_error;     ///< summed distance, two strongest local maxima of the MNE block norms
  int mixture_wins = 0;
};

/// Two-source localization: exhaustive mixture over all block pairs against MNE peaks.
inline TwoSourceTrials two_source_localization_trials(const DiskGeometry &g, const DiskScenario &s, double noise_level,
                                                      int trials, std::uint64_t seed) {
  require(s.sources.size() == 2, "two_source_localization_trials: scenario must hold two sources");
  require(trials >= 1, "two_source_localization_trials: trials must be >= 1");
  const BlockForwardModel L = disk_lead_field(g);
  const auto neighbors = grid_neighbors(g.grid);
  const Eigen::VectorXd clean = scenario_signal(g, s);
  const double sigma = noise_level * rms(clean);
  const CovarianceSpec cov = CovarianceSpec::isotropic(L, 1.0, sigma * sigma);
  const WhitenedModel wm = whiten(L, cov);
  std::vector<TrueSource> truth;
  for (const auto &src : s.sources) truth.push_back({src.position, src.moment});

  TwoSourceTrials out;
  for (int t = 0; t < trials; ++t) {
    const Observation obs = noisy_observation(clean, noise_level, trial_seed(seed, t));
    const MixtureEstimate est = uge(wm, whiten_observation(wm, obs.y), 2, binomial(g.n(), 2), 1);
    std::vector<EstimatedSource> mix;
    for (int k : est.map_set().blocks) mix.push_back({k, block_source(wm, est.w_hat, k)});

    const Eigen::VectorXd x = mne(L, cov, obs.y);
    Eigen::VectorXd norms(g.n());
    for (int k = 0; k < g.n(); ++k) norms(k) = x.segment(2 * k, 2).norm();
    std::vector<EstimatedSource> peaks;
    for (int k : local_maxima(norms, neighbors)) {
      if (peaks.size() == 2) break;
      peaks.push_back({k, x.segment(2 * k, 2)});
    }
    const double e_mix = localization_metrics(mix, truth, g.source_grid).total_distance();
    const double e_mne = localization_metrics(peaks, truth, g.source_grid).total_distance();
    out.mixture_error.push_back(e_mix);
    out.mne_error.push_back(e_mne);
    out.mixture_wins += e_mix < e_mne;
  }
  return out;
}

} // namespace unbiased::disk

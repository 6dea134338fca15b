#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "error.hpp"
#include "linalg.hpp"
#include "matrix_io.hpp"
#include "model.hpp"

namespace unbiased {

/// Which covariance the whitening transform is built from.
enum class SigmaForm {
  source_prior, ///< Sigma = L P L^T + C, blocks factored as Sigma^{-1/2} L_k P_k (default)
  unit_prior,   ///< Sigma = L L^T + C, blocks factored as Sigma^{-1/2} L_k (classical sLORETA)
  noise_only,   ///< Sigma = C, blocks factored as C^{-1/2} L_k P_k (noise-standardized model)
};

struct BlockFactor {
  Eigen::MatrixXd U; ///< m x r, orthonormal columns
  Eigen::VectorXd S; ///< r singular values, descending, > 0
  Eigen::MatrixXd V; ///< d x r, orthonormal columns
  int rank() const { return static_cast<int>(S.size()); }
};

struct WhitenedModel {
  int m = 0;
  int n = 0;
  int d = 0;
  SigmaForm form = SigmaForm::source_prior;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd sigma_inv_sqrt;
  Eigen::MatrixXd noise_cov; ///< C, kept for the mixture estimator
  int clamped_eigenvalues = 0;
  std::vector<BlockFactor> blocks;
  Eigen::MatrixXd cal_U;          ///< [U_1 ... U_n]
  std::vector<int> block_offsets; ///< n + 1 entries; block k owns cal_U columns [off[k], off[k+1])

  int total_rank() const { return block_offsets.empty() ? 0 : block_offsets.back(); }

  /// A = [U_1 V_1^T ... U_n V_n^T], m x (d*n).
  Eigen::MatrixXd assemble_A() const {
    Eigen::MatrixXd A(m, static_cast<Eigen::Index>(n) * d);
    for (int k = 0; k < n; ++k) A.middleCols(k * d, d) = blocks[k].U * blocks[k].V.transpose();
    return A;
  }
};

inline Eigen::MatrixXd build_sigma(const BlockForwardModel &model, const CovarianceSpec &cov) {
  require_dims(cov.P.rows() == model.entries().cols() && cov.P.cols() == cov.P.rows(), "build_sigma: P shape");
  require_dims(cov.C.rows() == model.m() && cov.C.cols() == cov.C.rows(), "build_sigma: C shape");
  const Eigen::MatrixXd &L = model.entries();
  Eigen::MatrixXd sigma = L * cov.P * L.transpose() + cov.C;
  sigma = 0.5 * (sigma + sigma.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("build_sigma: L P L^T + C is not positive definite");
  return sigma;
}

/// k-th d x d diagonal block of P; P must be block diagonal.
inline Eigen::MatrixXd source_block(const Eigen::MatrixXd &P, int k, int d) { return P.block(k * d, k * d, d, d); }

inline void require_block_diagonal(const Eigen::MatrixXd &P, int d) {
  const double tol = 1e-12 * std::max(1.0, P.cwiseAbs().maxCoeff());
  const auto cols = P.cols();
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < cols; ++i)
      if (i / d != j / d && std::abs(P(i, j)) > tol)
        throw DomainError("whiten: P must be block diagonal with d x d blocks");
}

inline BlockFactor compact_svd(const Eigen::MatrixXd &mat, double rel_tol = 1e-10) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto &sv = svd.singularValues();
  const int r = numerical_rank(sv, rel_tol);
  return {svd.matrixU().leftCols(r), sv.head(r), svd.matrixV().leftCols(r)};
}

inline WhitenedModel whiten(const BlockForwardModel &model, const CovarianceSpec &cov,
                            SigmaForm form = SigmaForm::source_prior) {
  cov.validate(model);
  const int d = model.d();
  require_block_diagonal(cov.P, d);

  WhitenedModel wm;
  wm.m = model.m();
  wm.n = model.n();
  wm.d = d;
  wm.form = form;
  wm.noise_cov = cov.C;
  switch (form) {
  case SigmaForm::source_prior: wm.sigma = build_sigma(model, cov); break;
  case SigmaForm::unit_prior: {
    const auto cols = model.entries().cols();
    wm.sigma = build_sigma(model, {Eigen::MatrixXd::Identity(cols, cols), cov.C});
    break;
  }
  case SigmaForm::noise_only: wm.sigma = cov.C; break;
  }
  const InverseSqrt isq = inverse_sqrt(wm.sigma, 1e-12);
  wm.sigma_inv_sqrt = isq.value;
  wm.clamped_eigenvalues = isq.clamped;

  wm.blocks.reserve(wm.n);
  wm.block_offsets.assign(1, 0);
  for (int k = 0; k < wm.n; ++k) {
    Eigen::MatrixXd whitened_block = wm.sigma_inv_sqrt * model.block(k);
    if (form != SigmaForm::unit_prior) whitened_block = whitened_block * source_block(cov.P, k, d);
    wm.blocks.push_back(compact_svd(whitened_block, 1e-10));
    wm.block_offsets.push_back(wm.block_offsets.back() + wm.blocks.back().rank());
  }
  wm.cal_U.resize(wm.m, wm.total_rank());
  for (int k = 0; k < wm.n; ++k)
    wm.cal_U.middleCols(wm.block_offsets[k], wm.blocks[k].rank()) = wm.blocks[k].U;
  return wm;
}

inline Eigen::VectorXd whiten_observation(const WhitenedModel &wm, const Eigen::VectorXd &y) {
  require_dims(y.size() == wm.m, "whiten_observation: length must be m");
  return wm.sigma_inv_sqrt * y;
}

inline Eigen::VectorXd whiten_observation(const WhitenedModel &wm, const Observation &obs) {
  return whiten_observation(wm, obs.y);
}

struct Backprojection {
  std::vector<Eigen::VectorXd> z; ///< per block, d-vector V_k U_k^T y_hat
  Eigen::VectorXd norms;          ///< |z_k| = |U_k^T y_hat|
};

inline Backprojection backproject(const WhitenedModel &wm, const Eigen::VectorXd &y_hat) {
  require_dims(y_hat.size() == wm.m, "backproject: length must be m");
  Backprojection out;
  out.z.reserve(wm.n);
  out.norms.resize(wm.n);
  for (int k = 0; k < wm.n; ++k) {
    const auto &f = wm.blocks[k];
    const Eigen::VectorXd coords = f.U.transpose() * y_hat;
    out.z.push_back(f.V * coords);
    out.norms(k) = coords.norm();
  }
  return out;
}

/// T_k = diag(S_k) V_k^T (r x d) and its pseudoinverse V_k diag(S_k)^{-1} (d x r).
struct StrengthMap {
  Eigen::MatrixXd T;
  Eigen::MatrixXd T_pinv;
};

inline StrengthMap strength_map(const WhitenedModel &wm, int k) {
  require_dims(k >= 0 && k < wm.n, "strength_map: block index out of range");
  const auto &f = wm.blocks[k];
  return {f.S.asDiagonal() * f.V.transpose(), f.V * f.S.cwiseInverse().asDiagonal()};
}

inline std::string to_string(SigmaForm form) {
  switch (form) {
  case SigmaForm::source_prior: return "source_prior";
  case SigmaForm::unit_prior: return "unit_prior";
  case SigmaForm::noise_only: return "noise_only";
  }
  return "?";
}

inline SigmaForm sigma_form_from_string(const std::string &s) {
  if (s == "source_prior") return SigmaForm::source_prior;
  if (s == "unit_prior") return SigmaForm::unit_prior;
  if (s == "noise_only") return SigmaForm::noise_only;
  throw DomainError("unknown sigma form '" + s + "'");
}

// Directory layout: sigma.bin, sigma_inv_sqrt.bin, noise_cov.bin, U.bin (cal_U),
// S.bin (all singular values as one column), V.bin (d x total rank) and
// manifest.json with dimensions, ranks and offsets.
inline void save(const WhitenedModel &wm, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  io::write_binary(dir / "sigma.bin", wm.sigma);
  io::write_binary(dir / "sigma_inv_sqrt.bin", wm.sigma_inv_sqrt);
  io::write_binary(dir / "noise_cov.bin", wm.noise_cov);
  io::write_binary(dir / "U.bin", wm.cal_U);
  Eigen::MatrixXd S(wm.total_rank(), 1);
  Eigen::MatrixXd V(wm.d, wm.total_rank());
  for (int k = 0; k < wm.n; ++k) {
    S.block(wm.block_offsets[k], 0, wm.blocks[k].rank(), 1) = wm.blocks[k].S;
    V.middleCols(wm.block_offsets[k], wm.blocks[k].rank()) = wm.blocks[k].V;
  }
  io::write_binary(dir / "S.bin", S);
  io::write_binary(dir / "V.bin", V);
  nlohmann::ordered_json manifest;
  manifest["m"] = wm.m;
  manifest["n"] = wm.n;
  manifest["d"] = wm.d;
  manifest["sigma_form"] = to_string(wm.form);
  manifest["clamped_eigenvalues"] = wm.clamped_eigenvalues;
  std::vector<int> ranks;
  for (const auto &b : wm.blocks) ranks.push_back(b.rank());
  manifest["ranks"] = ranks;
  manifest["offsets"] = wm.block_offsets;
  manifest["files"] = {"sigma.bin", "sigma_inv_sqrt.bin", "noise_cov.bin", "U.bin", "S.bin", "V.bin"};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline WhitenedModel load_whitened(const std::filesystem::path &dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  WhitenedModel wm;
  wm.m = manifest.at("m");
  wm.n = manifest.at("n");
  wm.d = manifest.at("d");
  wm.form = sigma_form_from_string(manifest.at("sigma_form"));
  wm.clamped_eigenvalues = manifest.at("clamped_eigenvalues");
  wm.block_offsets = manifest.at("offsets").get<std::vector<int>>();
  wm.sigma = io::read_binary(dir / "sigma.bin");
  wm.sigma_inv_sqrt = io::read_binary(dir / "sigma_inv_sqrt.bin");
  wm.noise_cov = io::read_binary(dir / "noise_cov.bin");
  wm.cal_U = io::read_binary(dir / "U.bin");
  const Eigen::MatrixXd S = io::read_binary(dir / "S.bin");
  const Eigen::MatrixXd V = io::read_binary(dir / "V.bin");
  if (static_cast<int>(wm.block_offsets.size()) != wm.n + 1 || wm.cal_U.cols() != wm.total_rank() ||
      S.rows() != wm.total_rank() || V.cols() != wm.total_rank())
    throw FormatError("whitened model files disagree with manifest");
  for (int k = 0; k < wm.n; ++k) {
    const int off = wm.block_offsets[k];
    const int r = wm.block_offsets[k + 1] - off;
    wm.blocks.push_back({wm.cal_U.middleCols(off, r), S.col(0).segment(off, r), V.middleCols(off, r)});
  }
  return wm;
}

} // namespace unbiased

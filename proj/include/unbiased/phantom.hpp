#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "fft.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace unbiased::phantom {

using Image = Eigen::MatrixXd;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Ellipse {
  double intensity;
  double semi_x;
  double semi_y;
  double center_x;
  double center_y;
  double angle_degrees;
};

// Modified Shepp-Logan table (higher-contrast intensities), coordinates in [-1, 1]^2 with y up.
inline constexpr std::array<Ellipse, 10> modified_shepp_logan_table{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},
    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},
    {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},
    {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},
    {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
}};

/// Table value at a point (sum of the ellipses containing it).
inline double shepp_logan_value(double x, double y) {
  double v = 0.0;
  for (const auto &e : modified_shepp_logan_table) {
    const double t = e.angle_degrees * std::numbers::pi / 180.0;
    const double dx = x - e.center_x;
    const double dy = y - e.center_y;
    const double xr = dx * std::cos(t) + dy * std::sin(t);
    const double yr = -dx * std::sin(t) + dy * std::cos(t);
    if ((xr * xr) / (e.semi_x * e.semi_x) + (yr * yr) / (e.semi_y * e.semi_y) <= 1.0) v += e.intensity;
  }
  // Snap away summation residue so equal table levels compare equal.
  return std::clamp(std::round(v * 1e10) / 1e10, 0.0, 1.0);
}

/// Pixel (row, col) samples the point ((2 col + 1)/s - 1, 1 - (2 row + 1)/s).
inline Image shepp_logan(int s) {
  require(s >= 16, "shepp_logan: size must be >= 16");
  Image img(s, s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) img(r, c) = shepp_logan_value((2.0 * c + 1.0) / s - 1.0, 1.0 - (2.0 * r + 1.0) / s);
  return img;
}

inline std::vector<double> distinct_levels(const Image &img) {
  std::vector<double> levels(img.data(), img.data() + img.size());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

/// Mask in DFT index order (index 0 = DC), point symmetric.
struct SamplingMask {
  Mask mask;
  int lines = 0;

  int size() const { return static_cast<int>(mask.rows()); }
  int count() const { return static_cast<int>(mask.count()); }
};

/*
 * `lines` equally spaced angles in [0, pi). Each digital line steps along its
 * dominant axis over the whole grid and takes the nearest grid point on the
 * other axis; the union is closed under k -> -k.
 */
inline SamplingMask radial_mask(int s, int lines) {
  require(s >= 2, "radial_mask: size must be >= 2");
  require(lines >= 1, "radial_mask: need at least one line");
  SamplingMask out;
  out.lines = lines;
  out.mask = Mask::Constant(s, s, false);
  auto wrap = [s](int f) { return ((f % s) + s) % s; };
  const int lo = -s / 2;
  const int hi = lo + s;
  for (int l = 0; l < lines; ++l) {
    const double theta = std::numbers::pi * l / lines;
    const double c = std::cos(theta);
    const double sn = std::sin(theta);
    for (int t = lo; t < hi; ++t) {
      int u, v; // u: horizontal (column) frequency, v: vertical (row) frequency
      if (std::abs(c) >= std::abs(sn)) {
        u = t;
        v = static_cast<int>(std::lround(t * sn / c));
      } else {
        v = t;
        u = static_cast<int>(std::lround(t * c / sn));
      }
      if (u < lo || u >= hi || v < lo || v >= hi) continue;
      out.mask(wrap(v), wrap(u)) = true;
    }
  }
  out.mask(0, 0) = true;
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c)
      if (out.mask(r, c)) out.mask(wrap(-r), wrap(-c)) = true;
  return out;
}

/// Masked Fourier data: full s x s array, zero off the mask.
struct FourierData {
  Eigen::MatrixXcd values;
  SamplingMask mask;
  double noise_sigma = 0.0; ///< per-coefficient noise standard deviation (0 when noiseless)
};

/// Adds spatial-domain noise to the image per `noise` (level relative to RMS of the image).
inline Image corrupt(const Image &img, const NoiseSpec &noise) {
  noise.validate();
  if (noise.kind == NoiseKind::none) return img;
  const int s = static_cast<int>(img.rows());
  Rng rng(noise.seed);
  Image eta(s, s);
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta.data()[i] = rng.gaussian();
  if (noise.kind == NoiseKind::correlated) {
    // Periodic Gaussian smoothing with standard deviation correlation_length pixels.
    Fft2 fft(s);
    Eigen::MatrixXcd spec = fft.forward(eta);
    const double l = noise.correlation_length;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c) {
        const double fr = static_cast<double>(signed_frequency(r, s)) / s;
        const double fc = static_cast<double>(signed_frequency(c, s)) / s;
        spec(r, c) *= std::exp(-2.0 * std::numbers::pi * std::numbers::pi * l * l * (fr * fr + fc * fc));
      }
    eta = fft.inverse(spec).real();
  }
  const Eigen::Map<const Eigen::VectorXd> flat(img.data(), img.size());
  const Eigen::Map<const Eigen::VectorXd> flat_eta(eta.data(), eta.size());
  const double signal = rms(flat);
  const double raw = rms(flat_eta);
  if (signal == 0.0 || raw == 0.0) return img;
  return img + eta * (noise.level * signal / raw);
}

/// Unitary DFT of the (optionally corrupted) image restricted to the mask.
inline FourierData fourier_sample(const Image &img, const SamplingMask &mask, const NoiseSpec &noise = NoiseSpec::none()) {
  require_dims(img.rows() == img.cols() && img.rows() == mask.size(), "fourier_sample: shape mismatch");
  const Image noisy = corrupt(img, noise);
  Fft2 fft(mask.size());
  FourierData out;
  out.values = fft.forward(noisy);
  for (Eigen::Index i = 0; i < out.values.size(); ++i)
    if (!mask.mask.data()[i]) out.values.data()[i] = 0.0;
  out.mask = mask;
  if (noise.kind != NoiseKind::none) {
    const Eigen::Map<const Eigen::VectorXd> flat(img.data(), img.size());
    // Unitary transform: spatial noise variance carries over per coefficient (exact for iid).
    out.noise_sigma = noise.level * rms(flat);
  }
  return out;
}

inline double relative_error(const Image &recon, const Image &truth) {
  require_dims(recon.rows() == truth.rows() && recon.cols() == truth.cols(), "relative_error: shape mismatch");
  const double tn = truth.norm();
  if (tn == 0.0) throw DomainError("relative_error: zero reference image");
  return (recon - truth).norm() / tn;
}

/// Eigenvalues of the cyclic forward-difference Laplacian D^T D in DFT index order.
inline Eigen::MatrixXd laplacian_symbol(int s) {
  Eigen::MatrixXd K(s, s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      const double a = std::sin(std::numbers::pi * r / s);
      const double b = std::sin(std::numbers::pi * c / s);
      K(r, c) = 4.0 * (a * a + b * b);
    }
  return K;
}

/// Cyclic forward differences: dx along columns, dy along rows.
inline void gradient(const Image &u, Image &dx, Image &dy) {
  const auto s = u.rows();
  dx.resize(s, s);
  dy.resize(s, s);
  for (Eigen::Index r = 0; r < s; ++r)
    for (Eigen::Index c = 0; c < s; ++c) {
      dx(r, c) = u(r, (c + 1) % s) - u(r, c);
      dy(r, c) = u((r + 1) % s, c) - u(r, c);
    }
}

/// Adjoint of `gradient`.
inline Image divergence_adjoint(const Image &px, const Image &py) {
  const auto s = px.rows();
  Image out(s, s);
  for (Eigen::Index r = 0; r < s; ++r)
    for (Eigen::Index c = 0; c < s; ++c)
      out(r, c) = px(r, (c + s - 1) % s) - px(r, c) + py((r + s - 1) % s, c) - py(r, c);
  return out;
}

/// Nonzero entries of the cyclic gradient (both components); the sparsity TV exploits.
inline int gradient_support(const Image &u, double tol = 1e-12) {
  Image dx, dy;
  gradient(u, dx, dy);
  return static_cast<int>((dx.array().abs() > tol).count() + (dy.array().abs() > tol).count());
}

/*
 * Smallest line count whose mask makes a gradient with `support` nonzeros
 * uniquely recoverable under the full-spark bound N < (|mask| + 1) / 2.
 */
inline int sufficient_line_count(int s, int support, int max_lines = 1024) {
  for (int lines = 1; lines <= max_lines; ++lines)
    if (2LL * support < radial_mask(s, lines).count() + 1LL) return lines;
  throw DomainError("sufficient_line_count: no line count up to the limit suffices");
}

struct TVParams {
  double mu = 1.0;      ///< data weight
  double lambda = 1.0;  ///< splitting weight
  int iterations = 100; ///< outer (Bregman data) iterations
  double inner_tol = 1e-6;
  int max_inner = 50;

  void validate() const {
    require(mu > 0.0 && lambda > 0.0, "TVParams: mu and lambda must be positive");
    require(iterations >= 1 && max_inner >= 1, "TVParams: iteration counts must be positive");
    require(inner_tol > 0.0, "TVParams: inner_tol must be positive");
  }
};

struct Reconstruction {
  Image image;
  std::vector<double> error_trace;    ///< relative error per outer iteration (when truth given)
  std::vector<double> residual_trace; ///< |mask * F u - data| per outer iteration
  std::vector<int> inner_iterations;
  double max_imaginary = 0.0;
};

/*
 * Split Bregman total variation:
 *   min_u |grad u|_iso + mu/2 |R F u - f|^2.
 * Inner loop: exact Fourier-domain u-update, isotropic shrinkage, gradient
 * Bregman update, until the relative change of u drops below inner_tol.
 * Outer loop: data Bregman update f_k += f - R F u.
 */
inline Reconstruction split_bregman_tv(const FourierData &data, const TVParams &params, const Image *truth = nullptr) {
  params.validate();
  const int s = data.mask.size();
  require(data.mask.mask(0, 0), "split_bregman_tv: DC must be sampled");
  if (truth) require_dims(truth->rows() == s && truth->cols() == s, "split_bregman_tv: truth shape");
  Fft2 fft(s);
  const Eigen::MatrixXd K = laplacian_symbol(s);
  Eigen::MatrixXd mask_d(s, s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) mask_d(r, c) = data.mask.mask(r, c) ? 1.0 : 0.0;
  const Eigen::MatrixXd denom = params.mu * mask_d + params.lambda * K;

  Eigen::MatrixXcd f_k = data.values;
  Image u = Image::Zero(s, s);
  Image dx = Image::Zero(s, s), dy = Image::Zero(s, s), bx = Image::Zero(s, s), by = Image::Zero(s, s);
  Image gx, gy;
  Reconstruction out;
  const double shrink = 1.0 / params.lambda;

  for (int outer = 0; outer < params.iterations; ++outer) {
    int inner = 0;
    for (; inner < params.max_inner; ++inner) {
      const Image rhs_spatial = divergence_adjoint(dx - bx, dy - by);
      Eigen::MatrixXcd rhs = params.mu * f_k + params.lambda * fft.forward(rhs_spatial);
      rhs.array() /= denom.array();
      const Eigen::MatrixXcd uc = fft.inverse(rhs);
      out.max_imaginary = std::max(out.max_imaginary, uc.imag().cwiseAbs().maxCoeff());
      const Image u_new = uc.real();
      const double change = (u_new - u).norm() / std::max(u_new.norm(), 1e-300);
      u = u_new;

      gradient(u, gx, gy);
      const Image qx = gx + bx;
      const Image qy = gy + by;
      for (Eigen::Index i = 0; i < qx.size(); ++i) {
        const double mag = std::hypot(qx.data()[i], qy.data()[i]);
        const double scale = mag > shrink ? (mag - shrink) / mag : 0.0;
        dx.data()[i] = scale * qx.data()[i];
        dy.data()[i] = scale * qy.data()[i];
      }
      bx += gx - dx;
      by += gy - dy;
      if (change < params.inner_tol) {
        ++inner;
        break;
      }
    }
    out.inner_iterations.push_back(inner);

    Eigen::MatrixXcd Fu = fft.forward(u);
    for (Eigen::Index i = 0; i < Fu.size(); ++i)
      if (!data.mask.mask.data()[i]) Fu.data()[i] = 0.0;
    const Eigen::MatrixXcd resid = data.values - Fu;
    out.residual_trace.push_back(resid.norm());
    f_k += resid;

    if (!u.allFinite()) throw NumericalError("split_bregman_tv: non-finite iterate");
    if (truth) {
      const double err = relative_error(u, *truth);
      if (err > 1e10) throw NumericalError("split_bregman_tv: diverged (relative error > 1e10)");
      out.error_trace.push_back(err);
    }
  }
  out.image = u;
  return out;
}

struct ImageUgeParams {
  double prior_strength = 10.0; ///< weight of |D w|^2 in the negative log prior
  int window = 62;             ///< side of the cyclic window
  int samples = 1000;
  std::uint64_t seed = 0;
  double cg_tol = 1e-6;
  int cg_max_iter = 500;
  double ridge = 1e-8;

  void validate(int s) const {
    require(prior_strength > 0.0, "ImageUgeParams: prior_strength must be positive");
    require(window >= 1, "ImageUgeParams: window must be positive");
    require_dims(window <= s, "image_uge: window larger than grid");
    require(samples >= 1, "ImageUgeParams: samples must be >= 1");
  }
};

struct WindowOffset {
  int row = 0;
  int col = 0;
};

struct ImageUgeResult {
  Image image;
  std::vector<double> error_trace; ///< relative error of the running average after each sample
  std::vector<double> log_weights;
  std::vector<WindowOffset> offsets;
  std::vector<int> cg_iterations;
};

namespace detail {

inline Mask window_mask(int s, int w, WindowOffset off) {
  Mask m = Mask::Constant(s, s, false);
  for (int r = 0; r < w; ++r)
    for (int c = 0; c < w; ++c) m((off.row + r) % s, (off.col + c) % s) = true;
  return m;
}

inline Image apply_window(const Image &x, const Mask &win) {
  Image out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (!win.data()[i]) out.data()[i] = 0.0;
  return out;
}

} // namespace detail

/*
 * Gaussian posterior mean of the image restricted to a cyclic window W:
 *   min_w |R F E w - f|^2 / sigma^2 + alpha |D E w|^2 + ridge |w|^2,
 * solved by conjugate gradients preconditioned with the full-grid Fourier
 * diagonal of the same operator. Returns the embedded image and the residual.
 */
struct WindowFit {
  Image image;
  double residual = 0.0; ///< |R F E w - f|^2
  int iterations = 0;
};

inline WindowFit fit_window(const FourierData &data, const Mask &win, double sigma2, const ImageUgeParams &p,
                            Fft2 &fft, const Eigen::MatrixXd &precond_symbol, const Image *warm = nullptr) {
  const int s = data.mask.size();
  const auto masked_forward = [&](const Image &x) {
    Eigen::MatrixXcd X = fft.forward(x);
    for (Eigen::Index i = 0; i < X.size(); ++i)
      if (!data.mask.mask.data()[i]) X.data()[i] = 0.0;
    return X;
  };
  const auto op = [&](const Image &x) {
    const Image xw = detail::apply_window(x, win);
    Image out = fft.inverse(masked_forward(xw)).real() / sigma2;
    Image gx, gy;
    gradient(xw, gx, gy);
    out += p.prior_strength * divergence_adjoint(gx, gy);
    out += p.ridge * xw;
    return detail::apply_window(out, win);
  };
  const auto precond = [&](const Image &x) {
    Eigen::MatrixXcd X = fft.forward(detail::apply_window(x, win));
    X.array() /= precond_symbol.array();
    return detail::apply_window(fft.inverse(X).real(), win);
  };

  const Image b = detail::apply_window(fft.inverse(data.values).real() / sigma2, win);
  Image x = warm ? detail::apply_window(*warm, win) : Image(Image::Zero(s, s));
  Image r = b - op(x);
  Image z = precond(r);
  Image dir = z;
  double rz = (r.array() * z.array()).sum();
  const double b_norm = std::max(b.norm(), 1e-300);
  WindowFit fit;
  for (int it = 0; it < p.cg_max_iter && r.norm() > p.cg_tol * b_norm; ++it) {
    const Image Ad = op(dir);
    const double alpha = rz / (dir.array() * Ad.array()).sum();
    x += alpha * dir;
    r -= alpha * Ad;
    z = precond(r);
    const double rz_new = (r.array() * z.array()).sum();
    dir = z + (rz_new / rz) * dir;
    rz = rz_new;
    fit.iterations = it + 1;
  }
  fit.image = x;
  fit.residual = (masked_forward(x) - data.values).squaredNorm();
  return fit;
}

/*
 * Mixture of windowed Gaussian reconstructions. Each sample draws a uniform
 * cyclic window offset, fits the window, and is weighted by its Gaussian data
 * likelihood -residual / (2 sigma^2) (log domain). The running weighted average
 * after every sample feeds the error trace.
 */
inline ImageUgeResult image_uge(const FourierData &data, double noise_sigma, const ImageUgeParams &params,
                                const Image *truth = nullptr) {
  const int s = data.mask.size();
  params.validate(s);
  require(noise_sigma > 0.0, "image_uge: noise_sigma must be positive");
  if (truth) require_dims(truth->rows() == s && truth->cols() == s, "image_uge: truth shape");
  const double sigma2 = noise_sigma * noise_sigma;

  Fft2 fft(s);
  const Eigen::MatrixXd K = laplacian_symbol(s);
  Eigen::MatrixXd symbol(s, s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c)
      symbol(r, c) = (data.mask.mask(r, c) ? 1.0 / sigma2 : 0.0) + params.prior_strength * K(r, c) + params.ridge;

  Rng rng(params.seed);
  ImageUgeResult out;
  double top = -std::numeric_limits<double>::infinity();
  Image acc = Image::Zero(s, s); // sum of exp(log_w - top) * fit
  double mass = 0.0;
  Image warm = Image::Zero(s, s);
  for (int i = 0; i < params.samples; ++i) {
    WindowOffset off{0, 0};
    if (params.window < s) {
      off.row = static_cast<int>(rng.index(static_cast<std::uint64_t>(s)));
      off.col = static_cast<int>(rng.index(static_cast<std::uint64_t>(s)));
    }
    const Mask win = detail::window_mask(s, params.window, off);
    const WindowFit fit = fit_window(data, win, sigma2, params, fft, symbol, &warm);
    const double log_w = -0.5 * fit.residual / sigma2;
    if (!std::isfinite(log_w)) throw NumericalError("image_uge: non-finite likelihood");
    if (log_w > top) {
      const double scale = std::isfinite(top) ? std::exp(top - log_w) : 0.0;
      acc *= scale;
      mass *= scale;
      top = log_w;
    }
    const double h = std::exp(log_w - top);
    acc += h * fit.image;
    mass += h;
    out.log_weights.push_back(log_w);
    out.offsets.push_back(off);
    out.cg_iterations.push_back(fit.iterations);
    warm = fit.image;
    if (truth) out.error_trace.push_back(relative_error(acc / mass, *truth));
  }
  out.image = acc / mass;
  return out;
}

/// Final mixture from stored per-sample fits is order independent; this recomputes it from log weights.
inline std::vector<double> normalized_weights(const std::vector<double> &log_weights) {
  require(!log_weights.empty(), "normalized_weights: empty input");
  const double top = *std::max_element(log_weights.begin(), log_weights.end());
  std::vector<double> w(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] = std::exp(log_weights[i] - top));
  for (double &v : w) v /= total;
  return w;
}

struct PaletteFit {
  Image image;
  double gain = 1.0;
  double offset = 0.0;
  int iterations = 0;
};

namespace detail {
inline int nearest_level(const std::vector<double> &palette, double v) {
  const auto it = std::lower_bound(palette.begin(), palette.end(), v);
  if (it == palette.begin()) return 0;
  if (it == palette.end()) return static_cast<int>(palette.size()) - 1;
  const int i = static_cast<int>(it - palette.begin());
  return (v - palette[i - 1] <= palette[i] - v) ? i - 1 : i;
}

// Alternates nearest-level assignment and a least-squares (gain, offset) refit
// max_iter times, then assigns once more under the final pair.
inline void refine_palette_fit(const Image &img, const std::vector<double> &palette, int max_iter,
                               PaletteFit &fit, std::vector<int> &assign) {
  assign.assign(static_cast<std::size_t>(img.size()), -1);
  const auto reassign = [&] {
    bool changed = false;
    for (Eigen::Index i = 0; i < img.size(); ++i) {
      const int a = nearest_level(palette, (img.data()[i] - fit.offset) / fit.gain);
      if (a != assign[i]) changed = true;
      assign[i] = a;
    }
    return changed;
  };
  reassign();
  for (int it = 0; it < max_iter; ++it) {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (Eigen::Index i = 0; i < img.size(); ++i) {
      const double x = palette[assign[i]];
      const double y = img.data()[i];
      n += 1;
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double var = sxx - sx * sx / n;
    if (var <= 0.0 || !(sxy - sx * sy / n > 0.0)) break; // single level in use, keep the pair
    fit.gain = (sxy - sx * sy / n) / var;
    fit.offset = (sy - fit.gain * sx) / n;
    fit.iterations = it + 1;
    if (!reassign()) break;
  }
}
} // namespace detail

enum class PaletteStart {
  identity, ///< reconstruction already in palette units (unitary sampling operator)
  range,    ///< align min/max of the reconstruction with the palette extremes
};

/*
 * Exact-coloring projection. The reconstruction is modelled as
 * gain * palette_level + offset. Pixels are first assigned under the starting
 * pair, the pair is refit by least squares, and pixels are reassigned. The
 * default is that single fit; more passes let the pair drift, which with noisy
 * input tends to trade one level for its neighbour (the residual alone cannot
 * tell the two apart). Output holds palette values only.
 */
inline PaletteFit ec_project(const Image &img, const std::vector<double> &palette, int max_iter = 1,
                             PaletteStart start = PaletteStart::identity) {
  require(!palette.empty(), "ec_project: empty palette");
  require(std::is_sorted(palette.begin(), palette.end()), "ec_project: palette must be ascending");
  require(img.size() > 0, "ec_project: empty image");
  require(max_iter >= 1, "ec_project: max_iter must be >= 1");
  PaletteFit fit;
  const double pmin = palette.front();
  const double pmax = palette.back();
  const double lo = img.minCoeff();
  const double hi = img.maxCoeff();
  if (start == PaletteStart::range && pmax > pmin && hi > lo) {
    fit.gain = (hi - lo) / (pmax - pmin);
    fit.offset = lo - fit.gain * pmin;
  }
  std::vector<int> assign;
  detail::refine_palette_fit(img, palette, max_iter, fit, assign);
  fit.image.resize(img.rows(), img.cols());
  for (Eigen::Index i = 0; i < img.size(); ++i) fit.image.data()[i] = palette[assign[i]];
  return fit;
}

/// 8-bit binary PGM, gray = round(255 * clamp(v, 0, 1)).
inline void write_pgm(const std::filesystem::path &path, const Image &img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c)
      out.put(static_cast<char>(std::lround(255.0 * std::clamp(img(r, c), 0.0, 1.0))));
}

inline Image read_pgm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw FormatError("read_pgm: expected 8-bit P5 image");
  in.get();
  Image img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int v = in.get();
      if (v == EOF) throw FormatError("read_pgm: truncated pixel data");
      img(r, c) = v / 255.0;
    }
  return img;
}

inline void write_error_trace(const std::filesystem::path &path, const std::vector<double> &trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "iteration,relative_error\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i + 1 << ',' << format_real(trace[i]) << '\n';
}

} // namespace unbiased::phantom

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "probability.hpp"
#include "whitening.hpp"

namespace unbiased::disk {

struct PolarGrid {
  int rings = 16;
  int spokes = 48;
  double max_fraction = 0.95; ///< outermost ring radius / disk radius
  bool half_offset = false;   ///< shift rings and spokes by half a cell (synthesis grid)

  double ring_radius(int i, double R) const {
    return max_fraction * R * (i + (half_offset ? 0.5 : 1.0)) / rings;
  }
  double spoke_angle(int j) const { return 2.0 * std::numbers::pi * (j + (half_offset ? 0.5 : 0.0)) / spokes; }
  int index(int ring, int spoke) const { return ring * spokes + ((spoke % spokes) + spokes) % spokes; }
  int size() const { return rings * spokes; }
};

/// Homogeneous disk with sensors on the upper half of the boundary.
struct DiskGeometry {
  double radius = 1.0;
  double conductivity = 1.0;
  std::vector<double> sensor_angles;
  PolarGrid grid;
  Eigen::MatrixXd source_grid; ///< one (x, y) row per block

  int m() const { return static_cast<int>(sensor_angles.size()); }
  int n() const { return static_cast<int>(source_grid.rows()); }

  Eigen::Vector2d sensor(int i) const {
    return radius * Eigen::Vector2d(std::cos(sensor_angles[i]), std::sin(sensor_angles[i]));
  }

  void validate() const {
    require(radius > 0.0 && conductivity > 0.0, "DiskGeometry: radius and conductivity must be positive");
    require(!sensor_angles.empty(), "DiskGeometry: no sensors");
    for (double a : sensor_angles)
      require(a >= 0.0 && a <= std::numbers::pi, "DiskGeometry: sensors must lie on the upper half circle");
    require_dims(source_grid.cols() == 2, "DiskGeometry: grid points are 2D");
    for (Eigen::Index i = 0; i < source_grid.rows(); ++i)
      require(source_grid.row(i).norm() < radius, "DiskGeometry: grid point outside the disk");
  }
};

inline std::vector<double> half_circle_angles(int m) {
  require(m >= 2, "half_circle_angles: need at least two sensors");
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) out[i] = std::numbers::pi * i / (m - 1);
  return out;
}

inline Eigen::MatrixXd polar_points(const PolarGrid &grid, double R) {
  Eigen::MatrixXd pts(grid.size(), 2);
  for (int i = 0; i < grid.rings; ++i)
    for (int j = 0; j < grid.spokes; ++j) {
      const double r = grid.ring_radius(i, R);
      const double t = grid.spoke_angle(j);
      pts.row(grid.index(i, j)) << r * std::cos(t), r * std::sin(t);
    }
  return pts;
}

inline DiskGeometry make_geometry(int sensors = 32, int rings = 16, int spokes = 48, double radius = 1.0,
                                  bool half_offset = false) {
  DiskGeometry g;
  g.radius = radius;
  g.sensor_angles = half_circle_angles(sensors);
  g.grid = {rings, spokes, 0.95, half_offset};
  g.source_grid = polar_points(g.grid, radius);
  g.validate();
  return g;
}

/// Same sensors, grid shifted by half a cell in radius and angle.
inline DiskGeometry synthesis_geometry(const DiskGeometry &inv) {
  DiskGeometry g = inv;
  g.grid.half_offset = !inv.grid.half_offset;
  g.source_grid = polar_points(g.grid, g.radius);
  return g;
}

/*
 * Potential at r of a current dipole p at r0 inside an insulated disk of radius R:
 *   u = p . [ (r - r0) / |r - r0|^2 - (|r|^2 r0 - R^2 r) / (|r0|^2 |r|^2 - 2 R^2 r.r0 + R^4) ] / (2 pi sigma)
 * The second term is the r0-gradient of the image part of the Neumann Green's
 * function; it stays finite at r0 = 0.
 */
inline double dipole_potential(const Eigen::Vector2d &r, const Eigen::Vector2d &r0, const Eigen::Vector2d &moment,
                               double R, double conductivity) {
  const Eigen::Vector2d diff = r - r0;
  const double dist2 = diff.squaredNorm();
  if (dist2 == 0.0) throw DomainError("dipole_potential: evaluation at the source point");
  const double rr = r.squaredNorm();
  const double q = r0.squaredNorm() * rr - 2.0 * R * R * r.dot(r0) + R * R * R * R;
  const Eigen::Vector2d image = (rr * r0 - R * R * r) / q;
  return moment.dot(diff / dist2 - image) / (2.0 * std::numbers::pi * conductivity);
}

/// Sensor potentials of a dipole, mean-referenced.
inline Eigen::VectorXd sensor_signal(const DiskGeometry &g, const Eigen::Vector2d &pos, const Eigen::Vector2d &moment) {
  require(pos.norm() < g.radius, "sensor_signal: source outside the disk");
  Eigen::VectorXd u(g.m());
  for (int i = 0; i < g.m(); ++i) u(i) = dipole_potential(g.sensor(i), pos, moment, g.radius, g.conductivity);
  return u.array() - u.mean();
}

/// d = 2 lead field: block k holds the x- and y-dipole signals of grid point k.
inline BlockForwardModel disk_lead_field(const DiskGeometry &g) {
  g.validate();
  Eigen::MatrixXd L(g.m(), 2 * g.n());
  for (int k = 0; k < g.n(); ++k) {
    const Eigen::Vector2d pos = g.source_grid.row(k).transpose();
    L.col(2 * k) = sensor_signal(g, pos, Eigen::Vector2d::UnitX());
    L.col(2 * k + 1) = sensor_signal(g, pos, Eigen::Vector2d::UnitY());
  }
  return BlockForwardModel(std::move(L), 2);
}

/// One fixed radial orientation per grid point (d = 1), the classical single-parameter model.
inline BlockForwardModel radial_lead_field(const DiskGeometry &g) {
  g.validate();
  Eigen::MatrixXd L(g.m(), g.n());
  for (int k = 0; k < g.n(); ++k) {
    const Eigen::Vector2d pos = g.source_grid.row(k).transpose();
    L.col(k) = sensor_signal(g, pos, pos.norm() > 0.0 ? Eigen::Vector2d(pos.normalized()) : Eigen::Vector2d::UnitY());
  }
  return BlockForwardModel(std::move(L), 1);
}

/// Ring/spoke 8-neighbourhood on the polar grid; the innermost ring is fully connected.
inline std::vector<std::vector<int>> grid_neighbors(const PolarGrid &grid) {
  std::vector<std::vector<int>> nb(grid.size());
  for (int i = 0; i < grid.rings; ++i)
    for (int j = 0; j < grid.spokes; ++j) {
      auto &list = nb[grid.index(i, j)];
      for (int di = -1; di <= 1; ++di) {
        const int ri = i + di;
        if (ri < 0 || ri >= grid.rings) continue;
        for (int dj = -1; dj <= 1; ++dj)
          if (di != 0 || dj != 0) list.push_back(grid.index(ri, j + dj));
      }
      if (i == 0)
        for (int jj = 0; jj < grid.spokes; ++jj)
          if (jj != j && std::find(list.begin(), list.end(), grid.index(0, jj)) == list.end())
            list.push_back(grid.index(0, jj));
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
    }
  return nb;
}

struct PlacedSource {
  Eigen::Vector2d position;
  Eigen::Vector2d moment;
};

struct DiskScenario {
  char label = 'A';
  std::vector<PlacedSource> sources;
  double signature_cosine = 0.0; ///< between the two sources' sensor signals (B, C)
};

inline Eigen::Vector2d polar(double r, double angle) { return {r * std::cos(angle), r * std::sin(angle)}; }

/// Unit moment orthogonal to the radius vector (x-direction at the centre).
inline Eigen::Vector2d tangential(const Eigen::Vector2d &pos) {
  if (pos.norm() == 0.0) return Eigen::Vector2d::UnitX();
  return Eigen::Vector2d(-pos.y(), pos.x()).normalized();
}

inline Eigen::Vector2d radial(const Eigen::Vector2d &pos) {
  if (pos.norm() == 0.0) return Eigen::Vector2d::UnitY();
  return pos.normalized();
}

inline double cosine(const Eigen::VectorXd &a, const Eigen::VectorXd &b) { return a.dot(b) / (a.norm() * b.norm()); }

/*
 * A: one deep source at (0.15 R, -pi/2), tangential moment.
 * B: two sources at 0.9 R in the sensor half with radial moments and
 *    |cos| < 0.05 between their signals; the most separated such pair is taken.
 * C: one source at 0.9 R and one at 0.25 R, radial moments, |cos| > 0.5; the
 *    pair with the largest |cos| (most similar contributions) is taken.
 * Candidate angles are the synthesis-grid spokes.
 */
inline DiskScenario scenario(char label, const DiskGeometry &g) {
  const double R = g.radius;
  DiskScenario s;
  s.label = label;
  const PolarGrid cand{1, g.grid.spokes, 0.95, true};
  if (label == 'A') {
    const Eigen::Vector2d p = polar(0.15 * R, -std::numbers::pi / 2);
    s.sources.push_back({p, tangential(p)});
    return s;
  }
  if (label != 'B' && label != 'C') throw DomainError(std::string("scenario: unknown label '") + label + "'");

  const double r_outer = 0.9 * R;
  const double r_inner = label == 'B' ? 0.9 * R : 0.25 * R;
  std::vector<double> outer_angles;
  for (int j = 0; j < cand.spokes; ++j)
    if (const double t = cand.spoke_angle(j); t > 0.0 && t < std::numbers::pi) outer_angles.push_back(t);

  std::optional<DiskScenario> best;
  double best_key = 0.0;
  for (std::size_t a = 0; a < outer_angles.size(); ++a) {
    const Eigen::Vector2d p1 = polar(r_outer, outer_angles[a]);
    const Eigen::VectorXd s1 = sensor_signal(g, p1, radial(p1));
    for (int j = 0; j < cand.spokes; ++j) {
      const double t2 = cand.spoke_angle(j);
      if (label == 'B' && (t2 <= outer_angles[a] || t2 >= std::numbers::pi)) continue;
      const Eigen::Vector2d p2 = polar(r_inner, t2);
      const Eigen::VectorXd s2 = sensor_signal(g, p2, radial(p2));
      const double c = cosine(s1, s2);
      const double sep = (p1 - p2).norm();
      const bool ok = label == 'B' ? std::abs(c) < 0.05 : std::abs(c) > 0.5;
      if (!ok) continue;
      const double key = label == 'B' ? sep : std::abs(c);
      const bool better = !best || key > best_key;
      if (better) {
        best = DiskScenario{label, {{p1, radial(p1)}, {p2, radial(p2)}}, c};
        best_key = key;
      }
    }
  }
  if (!best) throw NumericalError(std::string("scenario ") + label + ": no pair meets the similarity constraint");
  return *best;
}

/// Noise-free sensor data of a scenario (sources at their exact positions).
inline Eigen::VectorXd scenario_signal(const DiskGeometry &g, const DiskScenario &s) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(g.m());
  for (const auto &src : s.sources) y += sensor_signal(g, src.position, src.moment);
  return y;
}

/// Adds iid Gaussian noise with RMS(noise) = level * RMS(clean).
inline Observation noisy_observation(const Eigen::VectorXd &clean, double level, std::uint64_t seed) {
  Observation obs;
  obs.noise_realization = Eigen::VectorXd::Zero(clean.size());
  if (level > 0.0) {
    Rng rng(seed);
    Eigen::VectorXd eta(clean.size());
    for (Eigen::Index i = 0; i < clean.size(); ++i) eta(i) = rng.gaussian();
    obs.noise_realization = eta * (level * rms(clean) / rms(eta));
  }
  obs.y = clean + obs.noise_realization;
  return obs;
}

inline void write_scenario(std::ostream &out, const DiskScenario &s) {
  out << "label: " << s.label << '\n';
  out << "positions_reconstructed_from_text: true\n";
  if (s.sources.size() > 1) out << "signature_cosine: " << format_real(s.signature_cosine) << '\n';
  out << "sources:\n";
  for (const auto &src : s.sources)
    out << "  - position: [" << format_real(src.position.x()) << ", " << format_real(src.position.y())
        << "]\n    moment: [" << format_real(src.moment.x()) << ", " << format_real(src.moment.y()) << "]\n";
}

struct ProbabilityMap {
  Eigen::VectorXd p;       ///< one value per grid point
  Eigen::VectorXd lambda;  ///< noncentrality used at each point
  double noise_sigma = 0;  ///< per-sensor noise standard deviation
};

/*
 * Weak-reconstruction probability of a single source at every grid point.
 * The noise standard deviation is level * RMS(lead field); the model is
 * whitened by the noise alone (C = sigma^2 I) so that U_k^T y_hat carries the
 * signal strength. A unit-strength source in each singular direction of the
 * block gives lambda = (smallest singular value of L_k / sigma)^2, and
 * p = P(X > 2(m - d)), X ~ F'(1, m - d, lambda).
 */
inline ProbabilityMap spatial_prob_map(const DiskGeometry &g, double noise_level) {
  require(noise_level > 0.0 && noise_level < 1.0, "spatial_prob_map: noise level must lie in (0, 1)");
  const BlockForwardModel L = disk_lead_field(g);
  const double sigma = noise_level * std::sqrt(L.entries().squaredNorm() / static_cast<double>(L.entries().size()));
  const int d = L.d();
  const int dof = g.m() - d;
  require(dof >= 1, "spatial_prob_map: need m > d");
  ProbabilityMap out;
  out.noise_sigma = sigma;
  out.p.resize(g.n());
  out.lambda.resize(g.n());
  for (int k = 0; k < g.n(); ++k) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(L.block(k) / sigma);
    const auto &sv = svd.singularValues();
    const int r = numerical_rank(sv, 1e-10);
    const double lam = r == 0 ? 0.0 : sv(r - 1) * sv(r - 1);
    out.lambda(k) = lam;
    out.p(k) = ncf_sf({1.0, static_cast<double>(dof), lam}, 2.0 * dof);
  }
  return out;
}

inline void write_map_csv(const std::filesystem::path &path, const DiskGeometry &g, const ProbabilityMap &map,
                          double noise_level) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "# m=" << g.m() << "\n# d=2\n# N=1\n# noise_level=" << format_real(noise_level)
      << "\n# noise_sigma=" << format_real(map.noise_sigma) << '\n';
  out << "x,y,p\n";
  for (int k = 0; k < g.n(); ++k)
    out << format_real(g.source_grid(k, 0)) << ',' << format_real(g.source_grid(k, 1)) << ','
        << format_real(map.p(k)) << '\n';
}

/// Rasterized map, p in [0, 1] -> gray round(255 p); pixels outside the disk are 0.
inline void write_map_pgm(const std::filesystem::path &path, const DiskGeometry &g, const ProbabilityMap &map,
                          int size = 128) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "P5\n" << size << ' ' << size << "\n255\n";
  for (int row = 0; row < size; ++row)
    for (int col = 0; col < size; ++col) {
      const double x = g.radius * (2.0 * (col + 0.5) / size - 1.0);
      const double y = g.radius * (1.0 - 2.0 * (row + 0.5) / size);
      unsigned char v = 0;
      if (x * x + y * y < g.radius * g.radius) {
        Eigen::Index nearest = 0;
        (g.source_grid.rowwise() - Eigen::RowVector2d(x, y)).rowwise().squaredNorm().minCoeff(&nearest);
        v = static_cast<unsigned char>(std::lround(255.0 * std::clamp(map.p(nearest), 0.0, 1.0)));
      }
      out.put(static_cast<char>(v));
    }
}

} // namespace unbiased::disk

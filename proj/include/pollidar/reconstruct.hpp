#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pollidar/errors.hpp"
#include "pollidar/material.hpp"
#include "pollidar/parallel.hpp"
#include "pollidar/pbrdf.hpp"
#include "pollidar/preprocess.hpp"
#include "pollidar/pulse.hpp"
#include "pollidar/solver.hpp"

// Geometry recovery baselines: argmax/parabolic time-of-flight distance,
// shape-from-polarization zenith/azimuth from the diffuse DoP/AoP, PCA
// point-cloud normals, and the per-pixel forward-model fit that jointly
// estimates normals and material parameters from the recovered Mueller
// matrices.

namespace pollidar {

// ---- closed-form diffuse degree of polarization ----

/// Diffuse polarization curve rho(theta, eta): DoP of internally unpolarized
/// light transmitted out of a dielectric at exit angle theta. This is the
/// closed form the SfP baseline inverts; the pbrdf module produces the same
/// value through its Mueller construction.
inline double diffuse_dop(double theta, double eta) {
  const double s2 = std::sin(theta) * std::sin(theta);
  const double num = (eta - 1.0 / eta) * (eta - 1.0 / eta) * s2;
  const double den = 2.0 + 2.0 * eta * eta -
                     (eta + 1.0 / eta) * (eta + 1.0 / eta) * s2 +
                     4.0 * std::cos(theta) * std::sqrt(eta * eta - s2);
  return num / den;
}

/// Inverts the monotone diffuse DoP curve by bisection on [0, 89 deg].
/// Values above the curve's maximum clamp to 89 deg (the caller flags them).
inline double invert_diffuse_dop(double dop_value, double eta) {
  const double deg = 3.14159265358979323846 / 180.0;
  const double hi_angle = 89.0 * deg;
  if (dop_value <= 0.0) return 0.0;
  if (dop_value >= diffuse_dop(hi_angle, eta)) return hi_angle;
  double lo = 0.0, hi = hi_angle;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (diffuse_dop(mid, eta) < dop_value ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---- distance ----

enum class PeakRefine { None, Parabolic };

struct DistanceMap {
  int rows = 0, cols = 0;
  std::vector<double> distance;   ///< m
  std::vector<uint8_t> confidence;
};

/// Conventional time-of-flight distance from the argmax of the mean-over-
/// states waveform. Parabolic refinement fits log-amplitudes of the three
/// bins around the peak, which is exact for a Gaussian pulse.
inline DistanceMap tof_distance(const WavefrontCube& cube,
                                PeakRefine refine = PeakRefine::Parabolic) {
  DistanceMap out;
  out.rows = cube.rows;
  out.cols = cube.cols;
  const std::size_t npx = cube.pixel_count();
  out.distance.assign(npx, 0.0);
  out.confidence.assign(npx, 0);
  parallel_for(npx, [&](std::size_t px) {
    const int h = static_cast<int>(px) / cube.cols;
    const int w = static_cast<int>(px) % cube.cols;
    int best = 0;
    double best_sum = 0.0;
    for (int t = 0; t < cube.bins; ++t) {
      double acc = 0.0;
      for (int s = 0; s < cube.states; ++s) acc += cube.at(s, h, w, t);
      if (acc > best_sum) {
        best_sum = acc;
        best = t;
      }
    }
    if (best_sum <= 0.0) return;
    double bin = best;
    if (refine == PeakRefine::Parabolic && best > 0 && best + 1 < cube.bins) {
      double y[3];
      bool positive = true;
      for (int k = -1; k <= 1; ++k) {
        double acc = 0.0;
        for (int s = 0; s < cube.states; ++s) acc += cube.at(s, h, w, best + k);
        if (acc <= 0.0) positive = false;
        y[k + 1] = acc;
      }
      if (positive) {
        const double l0 = std::log(y[0]), l1 = std::log(y[1]),
                     l2 = std::log(y[2]);
        const double denom = l0 - 2.0 * l1 + l2;
        if (denom < -1e-12) {
          const double delta = 0.5 * (l0 - l2) / denom;
          if (std::abs(delta) <= 0.5) bin += delta;
        }
      }
    }
    out.distance[px] = bin_to_distance(bin, cube.bin_width_ns, cube.t0_ns);
    out.confidence[px] = 1;
  });
  return out;
}

// ---- reconstruction outputs ----

struct ReconMaps {
  int rows = 0, cols = 0;
  std::string method;
  std::vector<double> distance;
  std::vector<Vec3> normal;
  std::vector<uint8_t> confidence;     ///< estimate defined at all
  std::vector<uint8_t> low_confidence; ///< defined but flagged
  std::vector<Material> material;      ///< modelfit only
  std::vector<double> fit_residual;

  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * cols + c;
  }

  void init(int r, int c, const std::string& m) {
    rows = r;
    cols = c;
    method = m;
    const std::size_t n = static_cast<std::size_t>(r) * c;
    distance.assign(n, 0.0);
    normal.assign(n, Vec3::Zero());
    confidence.assign(n, 0);
    low_confidence.assign(n, 0);
    fit_residual.assign(n, 0.0);
  }
};

/// Per-pixel center view directions for the sensor grid.
inline std::vector<Vec3> view_directions(const SensorConfig& sensor) {
  std::vector<Vec3> v(static_cast<std::size_t>(sensor.rows) * sensor.cols);
  for (int r = 0; r < sensor.rows; ++r)
    for (int c = 0; c < sensor.cols; ++c)
      v[static_cast<std::size_t>(r) * sensor.cols + c] =
          sensor.ray_direction(r, c);
  return v;
}

// ---- shape from polarization (DoP) ----

struct SfpOptions {
  double eta_assumed = 1.5;
  double dop_floor = 0.01;
  int peak_bin_offset = 0;  ///< window bin = center + offset
};

/// Normals from the diffuse DoP/AoP of the peak-bin Mueller matrix: zenith
/// from inverting diffuse_dop, azimuth from the AoP with the pi ambiguity
/// broken toward the sensor axis.
inline ReconMaps sfp_dop_normals(const MuellerMovie& movie,
                                 const SlicedCube& sliced,
                                 const SensorConfig& sensor,
                                 const SfpOptions& opt = {}) {
  if (!(opt.eta_assumed > 1.0))
    throw ConfigError("sfp: eta_assumed must be > 1");
  ReconMaps out;
  out.init(movie.rows, movie.cols, "sfp");
  const std::vector<Vec3> views = view_directions(sensor);
  const Stokes laser = sliced.schedule.laser_stokes;
  const int center = movie.window / 2 + opt.peak_bin_offset;
  if (center < 0 || center >= movie.window)
    throw ConfigError("sfp: peak_bin_offset outside the window");

  parallel_for(static_cast<std::size_t>(movie.rows) * movie.cols,
               [&](std::size_t px) {
    if (!sliced.valid[px]) return;
    const int r = static_cast<int>(px) / movie.cols;
    const int c = static_cast<int>(px) % movie.cols;
    const Vec3 omega = views[px];
    out.confidence[px] = 1;
    out.distance[px] = bin_to_distance(sliced.t_peak[px], sliced.bin_width_ns,
                                       sliced.t0_ns);
    const Stokes s_ret = movie.at(r, c, center) * laser;
    if (!(s_ret[0] > 0.0)) {
      out.normal[px] = -omega;
      out.low_confidence[px] = 1;
      return;
    }
    const double dop_meas = dop(s_ret);
    if (dop_meas < opt.dop_floor) {
      out.normal[px] = -omega;
      out.low_confidence[px] = 1;
      return;
    }
    const double zenith = invert_diffuse_dop(dop_meas, opt.eta_assumed);
    if (dop_meas >= diffuse_dop(89.0 * 3.14159265358979323846 / 180.0,
                                opt.eta_assumed))
      out.low_confidence[px] = 1;
    double azimuth;
    if (s_ret[1] * s_ret[1] + s_ret[2] * s_ret[2] > 0.0) {
      azimuth = aop(s_ret);
    } else {
      azimuth = 0.0;
      out.low_confidence[px] = 1;
    }
    const auto [e1, e2] = pixel_stokes_basis(omega);
    const Vec3 n1 = std::cos(zenith) * (-omega) +
                    std::sin(zenith) * (std::cos(azimuth) * e1 +
                                        std::sin(azimuth) * e2);
    const Vec3 n2 = std::cos(zenith) * (-omega) -
                    std::sin(zenith) * (std::cos(azimuth) * e1 +
                                        std::sin(azimuth) * e2);
    // pi ambiguity: prefer the candidate facing the sensor axis
    const Vec3 axis(0, 0, -1);
    out.normal[px] = n1.dot(axis) >= n2.dot(axis) ? n1 : n2;
  });
  return out;
}

// ---- point cloud + PCA normals ----

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::size_t> pixel;  ///< back-reference into the raster
};

inline PointCloud unproject(const DistanceMap& dmap,
                            const SensorConfig& sensor) {
  PointCloud pc;
  for (int r = 0; r < dmap.rows; ++r)
    for (int c = 0; c < dmap.cols; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * dmap.cols + c;
      if (!dmap.confidence[px]) continue;
      pc.points.push_back(dmap.distance[px] * sensor.ray_direction(r, c));
      pc.pixel.push_back(px);
    }
  return pc;
}

struct PcaOptions {
  int k = 16;
  double radius = 2.0;  ///< m, neighbor cutoff
};

/// PCA plane normals over k nearest neighbors within a radius. Pixels with
/// too few neighbors or a degenerate (collinear) neighborhood fall back to
/// the sensor direction and are flagged.
inline ReconMaps pca_normals(const PointCloud& pc, const DistanceMap& dmap,
                             const SensorConfig& sensor,
                             const PcaOptions& opt = {}) {
  if (opt.k < 3) throw ConfigError("pca: k must be >= 3");
  ReconMaps out;
  out.init(dmap.rows, dmap.cols, "pca");

  // uniform hash grid with cell size = radius
  const double cell = opt.radius;
  struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey& o) const {
      return x == o.x && y == o.y && z == o.z;
    }
  };
  struct CellHash {
    std::size_t operator()(const CellKey& k) const {
      return static_cast<std::size_t>(k.x * 73856093 ^ k.y * 19349663 ^
                                      k.z * 83492791);
    }
  };
  std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
  auto key_of = [&](const Vec3& p) {
    return CellKey{static_cast<int64_t>(std::floor(p.x() / cell)),
                   static_cast<int64_t>(std::floor(p.y() / cell)),
                   static_cast<int64_t>(std::floor(p.z() / cell))};
  };
  for (int i = 0; i < static_cast<int>(pc.points.size()); ++i)
    grid[key_of(pc.points[i])].push_back(i);

  parallel_for(pc.points.size(), [&](std::size_t i) {
    const Vec3& p = pc.points[i];
    const std::size_t px = pc.pixel[i];
    out.confidence[px] = 1;
    out.distance[px] = dmap.distance[px];
    const Vec3 view = p.normalized();

    std::vector<std::pair<double, int>> cand;
    const CellKey k0 = key_of(p);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = grid.find(CellKey{k0.x + dx, k0.y + dy, k0.z + dz});
          if (it == grid.end()) continue;
          for (int j : it->second) {
            const double d2 = (pc.points[j] - p).squaredNorm();
            if (d2 <= opt.radius * opt.radius)
              cand.emplace_back(d2, j);
          }
        }
    if (static_cast<int>(cand.size()) < opt.k) {
      out.normal[px] = -view;
      out.low_confidence[px] = 1;
      return;
    }
    std::sort(cand.begin(), cand.end());  // (distance, index): deterministic
    Vec3 mean = Vec3::Zero();
    for (int j = 0; j < opt.k; ++j) mean += pc.points[cand[j].second];
    mean /= opt.k;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int j = 0; j < opt.k; ++j) {
      const Vec3 d = pc.points[cand[j].second] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Eigen::Vector3d evals = eig.eigenvalues();  // ascending
    if (evals[1] <= 1e-9 * std::max(evals[2], 1e-30)) {
      // collinear neighborhood
      out.normal[px] = -view;
      out.low_confidence[px] = 1;
      return;
    }
    Vec3 n = eig.eigenvectors().col(0);
    if (n.dot(view) > 0.0) n = -n;  // face the sensor
    out.normal[px] = n;
  });
  return out;
}

// ---- per-pixel forward-model fit ----

struct ModelFitOptions {
  double eta_lo = 1.1, eta_hi = 2.5;
  double rough_lo = 0.01, rough_hi = 1.0;
  double depol_lo = 0.0, depol_hi = 1.0;
  double amp_hi = 1e12;       ///< bound for the free lobe amplitudes
  int max_iters = 200;
  int refine_starts = 3;      ///< LM runs from the best-scoring seeds
  double dop_floor = 0.005;   ///< below: keep the sensor-facing fallback
};

namespace detail {

/// Specular and diffuse Mueller parts for a normal given by (azimuth,
/// zenith) about -omega, with unit albedos; amplitudes are fitted separately.
struct LobeParts {
  Mueller spec;
  Mueller diff;
};

inline LobeParts modelfit_lobes(double azimuth, double zenith, double eta,
                                double rough, double spec_depol,
                                double diff_depol, const Vec3& omega,
                                double range) {
  const auto [e1, e2] = pixel_stokes_basis(omega);
  const Vec3 n = std::cos(zenith) * (-omega) +
                 std::sin(zenith) * (std::cos(azimuth) * e1 +
                                     std::sin(azimuth) * e2);
  Material mat;
  mat.eta = eta;
  mat.roughness = rough;
  mat.spec_depol = spec_depol;
  mat.diff_depol = diff_depol;
  mat.diffuse_albedo = 1.0;
  mat.specular_albedo = 1.0;
  const SurfaceInteraction si = make_interaction(n, omega, range);
  LobeParts parts;
  parts.spec = si.cos_phi / (range * range) * specular_mueller(si, mat);
  parts.diff = si.cos_phi / (range * range) * diffuse_mueller(si, mat);
  return parts;
}

/// Residual vector (16 smoothed-L1 components) of the peak-bin model fit.
/// x = [azimuth, zenith, eta, roughness, spec_depol, diff_depol,
///      spec_amplitude, diff_amplitude].
inline Eigen::VectorXd modelfit_residual(const Eigen::VectorXd& x,
                                         const Mueller& h_meas,
                                         const Vec3& omega, double range) {
  const LobeParts parts = modelfit_lobes(x[0], x[1], x[2], x[3], x[4], x[5],
                                         omega, range);
  const Mueller model = x[6] * parts.spec + x[7] * parts.diff;
  Eigen::VectorXd r(16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      r[4 * i + j] = soft_abs_residual(h_meas(i, j) - model(i, j));
  return r;
}

}  // namespace detail

/// Per-pixel L1 fit of the forward model to the peak-bin Mueller matrix,
/// jointly over the unit normal (2 DoF) and material parameters, with
/// multi-start over 8 azimuths x zeniths {10, 40, 70} deg. The lobe
/// amplitudes are free scales, so the fit is independent of laser power and
/// of the exact pulse weight at the peak bin.
inline ReconMaps modelfit_normals(const MuellerMovie& movie,
                                  const SlicedCube& sliced,
                                  const DistanceMap& dmap,
                                  const SensorConfig& sensor,
                                  const ModelFitOptions& opt = {}) {
  ReconMaps out;
  out.init(movie.rows, movie.cols, "modelfit");
  out.material.assign(out.distance.size(), Material{});
  const std::vector<Vec3> views = view_directions(sensor);
  const Stokes laser = sliced.schedule.laser_stokes;
  const int center = movie.window / 2;
  const double deg = 3.14159265358979323846 / 180.0;

  Eigen::VectorXd lo(8), hi(8);
  lo << -7.0, 0.0, opt.eta_lo, opt.rough_lo, opt.depol_lo, opt.depol_lo, 0.0,
      0.0;
  hi << 7.0, 89.5 * deg, opt.eta_hi, opt.rough_hi, opt.depol_hi, opt.depol_hi,
      opt.amp_hi, opt.amp_hi;

  parallel_for(static_cast<std::size_t>(movie.rows) * movie.cols,
               [&](std::size_t px) {
    if (!sliced.valid[px] || !dmap.confidence[px]) return;
    const Vec3 omega = views[px];
    const double range = dmap.distance[px];
    if (!(range > 0.0)) return;
    const Mueller h_meas = movie.at(static_cast<int>(px) / movie.cols,
                                    static_cast<int>(px) % movie.cols, center);
    out.confidence[px] = 1;
    out.distance[px] = range;

    const Stokes s_ret = h_meas * laser;
    const double dop_meas =
        s_ret[0] > 0.0
            ? std::sqrt(s_ret[1] * s_ret[1] + s_ret[2] * s_ret[2] +
                        s_ret[3] * s_ret[3]) / s_ret[0]
            : 0.0;

    // Amplitude scale of the data drives the amplitude seeds.
    const double h00 = std::max(std::abs(h_meas(0, 0)), 1e-30);

    struct Seed {
      double cost;
      Eigen::VectorXd x;
    };
    std::vector<Seed> seeds;
    auto score = [&](Eigen::VectorXd x) {
      // closed-form non-negative amplitudes for the two lobes at this seed
      const detail::LobeParts parts = detail::modelfit_lobes(
          x[0], x[1], x[2], x[3], x[4], x[5], omega, range);
      double ss = 0, sd = 0, dd = 0, sy = 0, dy = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          ss += parts.spec(i, j) * parts.spec(i, j);
          sd += parts.spec(i, j) * parts.diff(i, j);
          dd += parts.diff(i, j) * parts.diff(i, j);
          sy += parts.spec(i, j) * h_meas(i, j);
          dy += parts.diff(i, j) * h_meas(i, j);
        }
      const double det = ss * dd - sd * sd;
      double ks = 0.0, kd = 0.0;
      if (det > 1e-30 * std::max(ss * dd, 1e-30)) {
        ks = (dy * (-sd) + sy * dd) / det;
        kd = (dy * ss - sy * sd) / det;
      }
      if (ks < 0.0 || !(det > 0.0)) ks = 0.0;
      if (kd < 0.0) kd = dd > 0.0 ? std::max(dy / dd, 0.0) : 0.0;
      x[6] = std::min(ks, opt.amp_hi);
      x[7] = std::min(kd, opt.amp_hi);
      const double cost =
          detail::modelfit_residual(x, h_meas, omega, range).squaredNorm();
      return Seed{cost, x};
    };

    for (int ai = 0; ai < 8; ++ai)
      for (double zen : {10.0, 40.0, 70.0}) {
        Eigen::VectorXd x(8);
        x << ai * 45.0 * deg, zen * deg, 1.5, 0.3, 0.5, 0.1, h00, h00;
        seeds.push_back(score(x));
      }
    // sensor-facing seed for head-on geometry
    {
      Eigen::VectorXd x(8);
      x << 0.0, 0.5 * deg, 1.5, 0.3, 0.5, 0.1, h00, h00;
      seeds.push_back(score(x));
    }
    std::sort(seeds.begin(), seeds.end(),
              [](const Seed& a, const Seed& b) { return a.cost < b.cost; });

    LmOptions lm;
    lm.max_iters = opt.max_iters;
    LmResult best;
    best.cost = std::numeric_limits<double>::infinity();
    const int starts =
        std::min<int>(opt.refine_starts, static_cast<int>(seeds.size()));
    for (int i = 0; i < starts; ++i) {
      const LmResult res = levenberg_marquardt(
          [&](const Eigen::VectorXd& x) {
            return detail::modelfit_residual(x, h_meas, omega, range);
          },
          seeds[i].x, lo, hi, lm);
      if (res.cost < best.cost) best = res;
    }
    if (!best.converged) out.low_confidence[px] = 1;

    const auto [e1, e2] = pixel_stokes_basis(omega);
    const double az = best.x[0], zen = best.x[1];
    Vec3 n = std::cos(zen) * (-omega) +
             std::sin(zen) * (std::cos(az) * e1 + std::sin(az) * e2);
    if (n.dot(-omega) < 0.0) n = -omega;  // keep sensor-facing
    if (dop_meas < opt.dop_floor) {
      // depolarized return: azimuth ties and oblique solutions are gauge
      // copies of the head-on one, so keep the sensor-facing prior
      n = -omega;
      out.low_confidence[px] = 1;
    }
    out.normal[px] = n;
    Material fit;
    fit.eta = best.x[2];
    fit.roughness = best.x[3];
    fit.spec_depol = best.x[4];
    fit.diff_depol = best.x[5];
    fit.specular_albedo = std::min(best.x[6], 1.0);
    fit.diffuse_albedo = std::min(best.x[7], 1.0);
    out.material[px] = fit;
    out.fit_residual[px] = std::sqrt(best.cost);
  });
  return out;
}

// ---- feature tensor export (PFX1) ----
// magic "PFX1", u32 version=1, u32 H, u32 W, u32 C with
// C = S*L + S + L*16 + 3: sliced wavefronts, per-state distance priors,
// Mueller movie, view direction. (h, w, c) row-major, f32 little-endian.

inline void save_pfx(const SlicedCube& sliced, const MuellerMovie& movie,
                     const SensorConfig& sensor, const std::string& path) {
  const int s_count = sliced.states, l_count = sliced.window;
  const uint32_t channels = static_cast<uint32_t>(
      s_count * l_count + s_count + l_count * 16 + 3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write feature tensor: " + path);
  out.write("PFX1", 4);
  detail::write_pod<uint32_t>(out, 1);
  detail::write_pod<uint32_t>(out, sliced.rows);
  detail::write_pod<uint32_t>(out, sliced.cols);
  detail::write_pod<uint32_t>(out, channels);
  std::vector<float> row(channels);
  for (int r = 0; r < sliced.rows; ++r)
    for (int c = 0; c < sliced.cols; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * sliced.cols + c;
      std::size_t k = 0;
      for (int s = 0; s < s_count; ++s)
        for (int l = 0; l < l_count; ++l)
          row[k++] = sliced.data[sliced.index(s, r, c, l)];
      for (int s = 0; s < s_count; ++s)
        row[k++] = sliced.d_prior[static_cast<std::size_t>(s) *
                                      sliced.pixel_count() + px];
      const float* hp = &movie.h[movie.index(r, c, 0)];
      for (int i = 0; i < l_count * 16; ++i) row[k++] = hp[i];
      const Vec3 v = sensor.ray_direction(r, c);
      row[k++] = static_cast<float>(v.x());
      row[k++] = static_cast<float>(v.y());
      row[k++] = static_cast<float>(v.z());
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
  if (!out) throw RuntimeError("short write: " + path);
}

}  // namespace pollidar

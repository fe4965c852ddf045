#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "pollidar/errors.hpp"
#include "pollidar/parallel.hpp"
#include "pollidar/pbrdf.hpp"
#include "pollidar/preprocess.hpp"
#include "pollidar/pulse.hpp"
#include "pollidar/reconstruct.hpp"
#include "pollidar/solver.hpp"

// Material estimation with fixed normals: a two-phase weighted fit of
// refractive index, roughness, and the two depolarization amplitudes so the
// rendered Mueller matrix best explains the measured one. The diffuse and
// specular components of the measurement are disentangled first, using
// their temporal signatures: the specular lobe follows the laser pulse, the
// diffuse lobe its exponentially delayed copy.

namespace pollidar {

struct MaterialFitConfig {
  double lambda_d_phase1 = 1.0;
  double lambda_s_phase1 = 0.0;
  double lambda_d_phase2 = 0.1;
  double lambda_s_phase2 = 1.0;
  double dop_threshold = 0.1;    ///< diffuse-DoP mask cutoff
  int phase1_iters = 120;
  int phase2_iters = 120;
  double eta_lo = 1.1, eta_hi = 2.5;
  double rough_lo = 0.01, rough_hi = 1.0;
  double tau_lo = 0.2, tau_hi = 12.0;  ///< ns, temporal separation search
  // Albedos are scene constants here, not fitted: the per-pixel specular
  // scalar lobe would otherwise be degenerate with the albedo.
  double specular_albedo = 1.0;
  double diffuse_albedo = 1.0;
  double laser_power = 2e6;
  double pulse_fwhm_ns = 3.0;
  double spec_energy_floor = 1e-6;

  void validate() const {
    if (lambda_d_phase1 < 0 || lambda_s_phase1 < 0 || lambda_d_phase2 < 0 ||
        lambda_s_phase2 < 0)
      throw ConfigError("materialfit: loss weights must be >= 0");
    if (!(dop_threshold > 0.0 && dop_threshold < 1.0))
      throw ConfigError("materialfit: dop_threshold must be in (0, 1)");
  }
};

struct MaterialFitResult {
  int rows = 0, cols = 0;
  std::vector<Material> material;
  std::vector<double> residual;
  std::vector<uint8_t> fitted;          ///< 1 where a fit ran
  std::vector<uint8_t> unidentifiable;  ///< 1 where defaults were returned
  std::vector<uint8_t> dop_mask;        ///< c_dop per pixel
};

namespace detail {

/// Splits the window of Mueller samples into specular and diffuse aggregate
/// matrices by least squares on the known temporal shapes g(t) and
/// emg(t; tau). tau is found by a golden-section refinement of a coarse
/// grid search on the intensity element time series.
struct TemporalSplit {
  Mueller spec = Mueller::Zero();
  Mueller diff = Mueller::Zero();
  double tau = 1.0;
  bool ok = false;
};

/// delta0 is the sub-bin offset between the window center sample and the
/// geometric pulse delay: t_peak*dt - (2d/c + t0). tau and a residual delta
/// correction are found by alternating golden-section refinements of a
/// coarse grid search on the intensity element time series.
inline TemporalSplit split_temporal(const MuellerMovie& movie,
                                    const SlicedCube& sliced, int r, int c,
                                    double sigma, double tau_lo,
                                    double tau_hi, double delta0) {
  const std::size_t px = static_cast<std::size_t>(r) * movie.cols + c;
  TemporalSplit out;
  if (!sliced.valid[px]) return out;
  const int window = movie.window;
  const int center = window / 2;
  const double dt = sliced.bin_width_ns;

  std::vector<double> h00(window);
  for (int l = 0; l < window; ++l) h00[l] = movie.at(r, c, l)(0, 0);

  // 2-column least squares [g(t) emg(t; tau)] on the intensity series;
  // returns the residual for a candidate (tau, delta)
  auto weights = [&](double tau, double delta, std::vector<double>& ws,
                     std::vector<double>& wd) {
    for (int l = 0; l < window; ++l) {
      const double t = (l - center) * dt + delta;
      ws[l] = gaussian_pulse(t, sigma);
      wd[l] = emg_pulse(t, sigma, tau);
    }
  };
  std::vector<double> ws(window), wd(window);
  auto residual_at = [&](double tau, double delta) {
    weights(tau, delta, ws, wd);
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0, yy = 0;
    for (int l = 0; l < window; ++l) {
      a11 += ws[l] * ws[l];
      a12 += ws[l] * wd[l];
      a22 += wd[l] * wd[l];
      b1 += ws[l] * h00[l];
      b2 += wd[l] * h00[l];
      yy += h00[l] * h00[l];
    }
    const double det = a11 * a22 - a12 * a12;
    if (!(det > 1e-30)) return yy;
    const double ks = (b1 * a22 - b2 * a12) / det;
    const double kd = (b2 * a11 - b1 * a12) / det;
    return yy - (ks * b1 + kd * b2);
  };

  auto golden = [](auto f, double a, double b, int iters) {
    const double gr = 0.6180339887498949;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < iters; ++it) {
      if (f1 < f2) {
        b = x2; x2 = x1; f2 = f1;
        x1 = b - gr * (b - a);
        f1 = f(x1);
      } else {
        a = x1; x1 = x2; f1 = f2;
        x2 = a + gr * (b - a);
        f2 = f(x2);
      }
    }
    return 0.5 * (a + b);
  };

  double best_tau = tau_lo, best_res = std::numeric_limits<double>::infinity();
  double delta = delta0;
  const int grid_n = 24;
  for (int i = 0; i <= grid_n; ++i) {
    const double tau = tau_lo * std::pow(tau_hi / tau_lo, double(i) / grid_n);
    const double res = residual_at(tau, delta);
    if (res < best_res) {
      best_res = res;
      best_tau = tau;
    }
  }
  for (int round = 0; round < 2; ++round) {
    best_tau = golden(
        [&](double tau) { return residual_at(tau, delta); },
        std::max(best_tau / 1.7, tau_lo), std::min(best_tau * 1.7, tau_hi),
        32);
    delta = golden(
        [&](double d) { return residual_at(best_tau, d); },
        delta - 0.6 * dt, delta + 0.6 * dt, 32);
  }
  out.tau = best_tau;

  // element-wise 2-column solve with the selected shapes
  weights(best_tau, delta, ws, wd);
  double a11 = 0, a12 = 0, a22 = 0;
  for (int l = 0; l < window; ++l) {
    a11 += ws[l] * ws[l];
    a12 += ws[l] * wd[l];
    a22 += wd[l] * wd[l];
  }
  const double det = a11 * a22 - a12 * a12;
  if (!(det > 1e-30)) return out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double b1 = 0, b2 = 0;
      for (int l = 0; l < window; ++l) {
        const double v = movie.at(r, c, l)(i, j);
        b1 += ws[l] * v;
        b2 += wd[l] * v;
      }
      out.spec(i, j) = (b1 * a22 - b2 * a12) / det;
      out.diff(i, j) = (b2 * a11 - b1 * a12) / det;
    }
  out.ok = true;
  return out;
}

/// Rendered diffuse/specular parts for the fixed geometry, in measurement
/// scale (laser power and attenuation included).
struct RenderedParts {
  Mueller spec;
  Mueller diff;
};

inline RenderedParts render_parts(double eta, double rough, double spec_depol,
                                  double diff_depol, const Vec3& normal,
                                  const Vec3& omega, double range,
                                  const MaterialFitConfig& cfg) {
  Material mat;
  mat.eta = eta;
  mat.roughness = rough;
  mat.spec_depol = spec_depol;
  mat.diff_depol = diff_depol;
  mat.specular_albedo = cfg.specular_albedo;
  mat.diffuse_albedo = cfg.diffuse_albedo;
  const SurfaceInteraction si = make_interaction(normal, omega, range);
  const double scale = cfg.laser_power * si.cos_phi / (range * range);
  RenderedParts parts;
  parts.spec = scale * specular_mueller(si, mat);
  parts.diff = scale * diffuse_mueller(si, mat);
  return parts;
}

/// Weighted two-term residual: lambda_d on the separated diffuse component
/// (gated by the DoP mask) and lambda_s on the specular remainder
/// (H_meas - H_d_render) - H_s_render. 32 smoothed-L1 components.
/// x = [eta, roughness, spec_depol, diff_depol].
inline Eigen::VectorXd materialfit_residual(
    const Eigen::VectorXd& x, const Mueller& h_diff_meas,
    const Mueller& h_total_meas, const Vec3& normal, const Vec3& omega,
    double range, double lambda_d, double lambda_s, bool dop_mask,
    const MaterialFitConfig& cfg) {
  const RenderedParts parts =
      render_parts(x[0], x[1], x[2], x[3], normal, omega, range, cfg);
  Eigen::VectorXd r(32);
  const double wd = dop_mask ? std::sqrt(lambda_d) : 0.0;
  const double ws = std::sqrt(lambda_s);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const int k = 4 * i + j;
      r[k] = wd * soft_abs_residual(h_diff_meas(i, j) - parts.diff(i, j));
      r[16 + k] = ws * soft_abs_residual(h_total_meas(i, j) -
                                         parts.diff(i, j) - parts.spec(i, j));
    }
  return r;
}

}  // namespace detail

/// Estimates per-pixel material parameters (eta, roughness, |D^s|, |D^d|,
/// and the diffuse temporal constant) from the Mueller movie, holding the
/// supplied normals fixed.
inline MaterialFitResult estimate_materials(const MuellerMovie& movie,
                                            const SlicedCube& sliced,
                                            const std::vector<Vec3>& normals,
                                            const DistanceMap& dmap,
                                            const SensorConfig& sensor,
                                            const MaterialFitConfig& cfg = {}) {
  cfg.validate();
  const std::size_t npx = static_cast<std::size_t>(movie.rows) * movie.cols;
  if (normals.size() != npx || dmap.distance.size() != npx)
    throw ConfigError("estimate_materials: input dims disagree");
  MaterialFitResult out;
  out.rows = movie.rows;
  out.cols = movie.cols;
  out.material.assign(npx, Material{});
  out.residual.assign(npx, 0.0);
  out.fitted.assign(npx, 0);
  out.unidentifiable.assign(npx, 0);
  out.dop_mask.assign(npx, 0);

  const std::vector<Vec3> views = view_directions(sensor);
  const Stokes laser = sliced.schedule.laser_stokes;
  const double sigma = cfg.pulse_fwhm_ns * kFwhmToSigma;

  Eigen::VectorXd lo(4), hi(4);
  lo << cfg.eta_lo, cfg.rough_lo, 0.0, 0.0;
  hi << cfg.eta_hi, cfg.rough_hi, 1.0, 1.0;

  parallel_for(npx, [&](std::size_t px) {
    if (!sliced.valid[px] || !dmap.confidence[px]) return;
    const int r = static_cast<int>(px) / movie.cols;
    const int c = static_cast<int>(px) % movie.cols;
    const Vec3 omega = views[px];
    const Vec3 normal = normals[px];
    const double range = dmap.distance[px];
    if (!(range > 0.0) || normal.squaredNorm() < 0.5) return;

    const double delta0 = sliced.t_peak[px] * sliced.bin_width_ns -
                          (2.0 * range / kSpeedOfLight + sliced.t0_ns);
    const detail::TemporalSplit split = detail::split_temporal(
        movie, sliced, r, c, sigma, cfg.tau_lo, cfg.tau_hi, delta0);
    if (!split.ok) return;
    const Mueller h_total = split.spec + split.diff;

    // c_dop: measured diffuse DoP above threshold
    const Stokes s_diff = split.diff * laser;
    const double dop_diff =
        s_diff[0] > 0.0
            ? std::sqrt(s_diff[1] * s_diff[1] + s_diff[2] * s_diff[2] +
                        s_diff[3] * s_diff[3]) / s_diff[0]
            : 0.0;
    const bool masked = dop_diff >= cfg.dop_threshold;
    out.dop_mask[px] = masked ? 1 : 0;

    const double spec_energy = split.spec.cwiseAbs().maxCoeff();
    if (!masked && spec_energy < cfg.spec_energy_floor * cfg.laser_power) {
      out.unidentifiable[px] = 1;
      out.material[px].diff_tau = split.tau;
      return;
    }

    auto residual_fn = [&](double ld, double ls) {
      return [&, ld, ls](const Eigen::VectorXd& x) {
        return detail::materialfit_residual(x, split.diff, h_total, normal,
                                            omega, range, ld, ls, masked, cfg);
      };
    };

    Eigen::VectorXd x(4);
    x << 1.5, 0.3, 0.5, 0.1;
    LmOptions lm1;
    lm1.max_iters = cfg.phase1_iters;
    if (masked && cfg.lambda_d_phase1 > 0.0) {
      // phase 1: the diffuse loss drives eta and |D^d|
      LmResult best;
      best.cost = std::numeric_limits<double>::infinity();
      for (double eta0 : {1.2, 1.5, 1.9, 2.3}) {
        Eigen::VectorXd x0 = x;
        x0[0] = eta0;
        const LmResult res = levenberg_marquardt(
            residual_fn(cfg.lambda_d_phase1, cfg.lambda_s_phase1), x0, lo, hi,
            lm1);
        if (res.cost < best.cost) best = res;
      }
      x = best.x;
    }
    LmOptions lm2;
    lm2.max_iters = cfg.phase2_iters;
    LmResult best;
    best.cost = std::numeric_limits<double>::infinity();
    for (double rough0 : {0.08, 0.3, 0.7}) {
      Eigen::VectorXd x0 = x;
      x0[1] = rough0;
      const LmResult res = levenberg_marquardt(
          residual_fn(cfg.lambda_d_phase2, cfg.lambda_s_phase2), x0, lo, hi,
          lm2);
      if (res.cost < best.cost) best = res;
    }

    Material fit;
    fit.eta = best.x[0];
    fit.roughness = best.x[1];
    fit.spec_depol = best.x[2];
    fit.diff_depol = best.x[3];
    fit.diff_tau = split.tau;
    fit.specular_albedo = cfg.specular_albedo;
    fit.diffuse_albedo = cfg.diffuse_albedo;
    out.material[px] = fit;
    out.residual[px] = best.cost;
    out.fitted[px] = 1;
  });
  return out;
}

}  // namespace pollidar

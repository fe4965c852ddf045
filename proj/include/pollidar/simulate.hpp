#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pollidar/errors.hpp"
#include "pollidar/material.hpp"
#include "pollidar/parallel.hpp"
#include "pollidar/pbrdf.hpp"
#include "pollidar/polmath.hpp"
#include "pollidar/pulse.hpp"
#include "pollidar/rng.hpp"
#include "pollidar/scene.hpp"

// Wavefront rendering: the per-pixel temporal Mueller response is pushed
// through the rotating-retarder acquisition schedule, convolved with the
// laser pulse, and digitized. Noise is applied as a separate pass with
// counter-based per-sample streams.

namespace pollidar {

/// Acquisition schedule: one emitter/receiver optic configuration per
/// polarization state.
struct AngleSchedule {
  std::vector<OpticAngles> entries;
  Stokes laser_stokes{1.0, 1.0, 0.0, 0.0};

  int states() const { return static_cast<int>(entries.size()); }
};

/// Emitter Mueller chain for one state: light passes the HWP, then the QWP.
inline Mueller polarizer_optics(const OpticAngles& a) {
  return quarter_wave_plate(a.qwp_emit) * half_wave_plate(a.hwp_emit);
}

/// Receiver Mueller chain for one state: light passes the QWP, then the LP.
inline Mueller analyzer_optics(const OpticAngles& a) {
  return linear_polarizer(a.lp_recv) * quarter_wave_plate(a.qwp_recv);
}

/// Design matrix of the ellipsometric system: row i maps the row-major
/// vec(H) to the measured intensity [A_i H P_i s_laser]_0.
inline Eigen::MatrixXd design_matrix(const AngleSchedule& schedule) {
  const int s = schedule.states();
  Eigen::MatrixXd a(s, 16);
  for (int i = 0; i < s; ++i) {
    const Eigen::RowVector4d a0 = analyzer_optics(schedule.entries[i]).row(0);
    const Stokes p = polarizer_optics(schedule.entries[i]) * schedule.laser_stokes;
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) a(i, 4 * j + k) = a0[j] * p[k];
  }
  return a;
}

struct ScheduleAnalysis {
  int rank = 0;
  double condition = 0.0;
  Eigen::VectorXd singular_values;
};

inline ScheduleAnalysis analyze_schedule(const AngleSchedule& schedule) {
  const Eigen::MatrixXd a = design_matrix(schedule);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  ScheduleAnalysis out;
  out.singular_values = svd.singularValues();
  const double smax = out.singular_values[0];
  for (int i = 0; i < out.singular_values.size(); ++i)
    if (out.singular_values[i] > smax * 1e-10) out.rank = i + 1;
  const double smin = out.singular_values[out.singular_values.size() - 1];
  out.condition = smin > 0.0 ? smax / smin
                             : std::numeric_limits<double>::infinity();
  return out;
}

/// Throws unless the schedule supports full Mueller inversion: at least 16
/// states and design-matrix rank 16.
inline void validate_for_inversion(const AngleSchedule& schedule) {
  if (schedule.states() < 16)
    throw ConfigError("schedule: inversion needs at least 16 states, got " +
                      std::to_string(schedule.states()));
  const ScheduleAnalysis a = analyze_schedule(schedule);
  if (a.rank < 16)
    throw ConfigError("schedule: design matrix rank " + std::to_string(a.rank) +
                      " < 16");
}

/// Default 36-state dual-rotating-retarder schedule: HWP and LP fixed at 0,
/// emitter QWP stepping 5 degrees and receiver QWP 25 degrees per state (the
/// classic 1:5 ratio sampled over a half turn). Rank and conditioning are
/// verified at construction.
inline AngleSchedule default_schedule(int states = 36) {
  const double deg = 3.14159265358979323846 / 180.0;
  AngleSchedule schedule;
  schedule.entries.reserve(states);
  for (int k = 0; k < states; ++k) {
    OpticAngles a;
    a.hwp_emit = 0.0;
    a.qwp_emit = normalize_axis_angle(k * 5.0 * deg);
    a.qwp_recv = normalize_axis_angle(k * 25.0 * deg);
    a.lp_recv = 0.0;
    schedule.entries.push_back(a);
  }
  if (states >= 16) validate_for_inversion(schedule);
  return schedule;
}

struct NoiseParams {
  double photons_per_unit = 1e4;  ///< expected photons per ADC unit of signal
  double read_sigma = 2.0;        ///< Gaussian read noise std, ADC units
  double adc_saturation = 4095.0;
  double dark_offset = 0.0;
  bool enabled = true;

  void validate() const {
    if (photons_per_unit < 0 || read_sigma < 0 || dark_offset < 0)
      throw ConfigError("noise: parameters must be non-negative");
    if (!(adc_saturation > 0))
      throw ConfigError("noise: adc_saturation must be positive");
  }
};

/// Raw measurement tensor: states x rows x cols x time bins, sample s(t) at
/// t = bin * bin_width + t0. Scaled by laser_power (ADC-like units).
struct WavefrontCube {
  int states = 0, rows = 0, cols = 0, bins = 0;
  double bin_width_ns = 1.0;
  double t0_ns = 0.0;
  AngleSchedule schedule;
  SensorConfig sensor;
  double laser_power = 2e6;
  NoiseParams noise;
  uint64_t seed = 0;
  std::vector<float> data;  ///< (s, h, w, t) row-major

  std::size_t index(int s, int h, int w, int t) const {
    return ((static_cast<std::size_t>(s) * rows + h) * cols + w) * bins + t;
  }
  float at(int s, int h, int w, int t) const { return data[index(s, h, w, t)]; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(rows) * cols;
  }
};

/// Renders the noise-free wavefront cube for the cast scene. Subray
/// responses are averaged, so oblique or multi-depth beam footprints widen
/// the returned pulse.
inline WavefrontCube render_ideal(const RayCastResult& cast,
                                  const MaterialDB& materials,
                                  const AngleSchedule& schedule,
                                  const SensorConfig& sensor,
                                  double laser_power = 2e6) {
  if (schedule.states() < 1)
    throw ConfigError("render_ideal: schedule has no states");
  WavefrontCube cube;
  cube.states = schedule.states();
  cube.rows = sensor.rows;
  cube.cols = sensor.cols;
  cube.bins = sensor.bins;
  cube.bin_width_ns = sensor.bin_width_ns;
  cube.t0_ns = sensor.t0_offset_ns;
  cube.schedule = schedule;
  cube.sensor = sensor;
  cube.laser_power = laser_power;
  if (cast.maps.rows != sensor.rows || cast.maps.cols != sensor.cols)
    throw ConfigError("render_ideal: ray cast and sensor dims disagree");
  cube.data.assign(static_cast<std::size_t>(cube.states) * cube.rows *
                       cube.cols * cube.bins,
                   0.0f);

  const int s_count = cube.states;
  // Per-state receiver rows and emitter output states are scene-independent.
  std::vector<Eigen::RowVector4d> a0(s_count);
  std::vector<Stokes> p(s_count);
  for (int i = 0; i < s_count; ++i) {
    a0[i] = analyzer_optics(schedule.entries[i]).row(0);
    p[i] = polarizer_optics(schedule.entries[i]) * schedule.laser_stokes;
  }

  const double sigma = sensor.pulse_fwhm_ns * kFwhmToSigma;
  const double dt = sensor.bin_width_ns;
  const int bins = sensor.bins;

  const double subray_weight = 1.0 / cast.subrays_per_pixel;
  parallel_for(cube.pixel_count(), [&](std::size_t px) {
    const auto& hits = cast.hits[px];
    if (hits.empty()) return;
    std::vector<double> gauss_buf, emg_buf;
    for (const auto& hit : hits) {
      const SurfaceInteraction si =
          make_interaction(hit.normal, hit.omega, hit.range);
      const TemporalMueller tm =
          reflectance(si, materials.get(hit.material_id));
      const double t_center = 2.0 * hit.range / kSpeedOfLight + cube.t0_ns;
      // Support: the Gaussian is negligible beyond 6 sigma, the diffuse
      // kernel beyond 20 tau.
      const int lo = std::max(
          0, static_cast<int>(std::floor((t_center - 6.0 * sigma) / dt)));
      const int hi = std::min(
          bins - 1,
          static_cast<int>(std::ceil(
              (t_center + 6.0 * sigma + 20.0 * tm.diffuse_kernel_tau) / dt)));
      if (lo > hi) continue;
      const int support = hi - lo + 1;
      gauss_buf.assign(support, 0.0);
      emg_buf.assign(support, 0.0);
      for (int b = 0; b < support; ++b) {
        const double t = (lo + b) * dt - t_center;
        gauss_buf[b] = gaussian_pulse(t, sigma);
        emg_buf[b] = emg_pulse(t, sigma, tm.diffuse_kernel_tau);
      }
      for (int i = 0; i < s_count; ++i) {
        const double amp_s = subray_weight * laser_power *
                             a0[i].dot(tm.specular_part * p[i]);
        const double amp_d = subray_weight * laser_power *
                             a0[i].dot(tm.diffuse_part * p[i]);
        if (amp_s == 0.0 && amp_d == 0.0) continue;
        float* dst = &cube.data[cube.index(i, 0, 0, 0)] + px * bins + lo;
        for (int b = 0; b < support; ++b)
          dst[b] += static_cast<float>(amp_s * gauss_buf[b] +
                                       amp_d * emg_buf[b]);
      }
    }
  });
  return cube;
}

/// Shot + read-out noise and digitization:
///   out = clamp(Poisson(sample * photons_per_unit) / photons_per_unit
///               + N(0, read_sigma) + dark_offset, 0, adc_saturation).
/// Every sample draws from its own (seed, index) stream, so the result is
/// independent of worker count.
inline WavefrontCube apply_noise(const WavefrontCube& cube,
                                 const NoiseParams& params, uint64_t seed) {
  params.validate();
  WavefrontCube out = cube;
  out.noise = params;
  out.seed = seed;
  if (!params.enabled) return out;
  const std::size_t n = out.data.size();
  const std::size_t block = 65536;
  const std::size_t nblocks = (n + block - 1) / block;
  parallel_for(nblocks, [&](std::size_t bi) {
    const std::size_t lo = bi * block;
    const std::size_t hi = std::min(n, lo + block);
    for (std::size_t i = lo; i < hi; ++i) {
      SplitMix64 rng(stream_key(seed, i, 0x9021));
      double v = std::max(0.0, static_cast<double>(cube.data[i]));
      if (params.photons_per_unit > 0.0) {
        const double lambda = v * params.photons_per_unit;
        v = static_cast<double>(rng.next_poisson(lambda)) /
            params.photons_per_unit;
      } else {
        v = 0.0;
      }
      if (params.read_sigma > 0.0)
        v += params.read_sigma * rng.next_gaussian();
      v += params.dark_offset;
      out.data[i] = static_cast<float>(
          std::clamp(v, 0.0, params.adc_saturation));
    }
  });
  return out;
}

// ---- PWF1 wavefront cube file ----
// magic "PWF1", then little-endian: u32 version=1, u32 S, u32 H, u32 W,
// u32 T, f64 bin_width_ns, f64 t0_ns, S*4 f64 schedule angles (radians),
// 4 f64 laser Stokes, then S*H*W*T f32 samples in (s,h,w,t) order.

namespace detail {
template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace detail

inline void save_pwf(const WavefrontCube& cube, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write wavefront cube: " + path);
  out.write("PWF1", 4);
  detail::write_pod<uint32_t>(out, 1);
  detail::write_pod<uint32_t>(out, cube.states);
  detail::write_pod<uint32_t>(out, cube.rows);
  detail::write_pod<uint32_t>(out, cube.cols);
  detail::write_pod<uint32_t>(out, cube.bins);
  detail::write_pod<double>(out, cube.bin_width_ns);
  detail::write_pod<double>(out, cube.t0_ns);
  for (const auto& a : cube.schedule.entries) {
    detail::write_pod<double>(out, a.hwp_emit);
    detail::write_pod<double>(out, a.qwp_emit);
    detail::write_pod<double>(out, a.qwp_recv);
    detail::write_pod<double>(out, a.lp_recv);
  }
  for (int i = 0; i < 4; ++i)
    detail::write_pod<double>(out, cube.schedule.laser_stokes[i]);
  out.write(reinterpret_cast<const char*>(cube.data.data()),
            static_cast<std::streamsize>(cube.data.size() * sizeof(float)));
  if (!out) throw RuntimeError("short write: " + path);
}

inline WavefrontCube load_pwf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open wavefront cube: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PWF1", 4) != 0)
    throw ConfigError(path + ": not a PWF1 file");
  const uint32_t version = detail::read_pod<uint32_t>(in);
  if (version != 1)
    throw ConfigError(path + ": unsupported PWF version " +
                      std::to_string(version));
  WavefrontCube cube;
  cube.states = static_cast<int>(detail::read_pod<uint32_t>(in));
  cube.rows = static_cast<int>(detail::read_pod<uint32_t>(in));
  cube.cols = static_cast<int>(detail::read_pod<uint32_t>(in));
  cube.bins = static_cast<int>(detail::read_pod<uint32_t>(in));
  cube.bin_width_ns = detail::read_pod<double>(in);
  cube.t0_ns = detail::read_pod<double>(in);
  cube.schedule.entries.resize(cube.states);
  for (auto& a : cube.schedule.entries) {
    a.hwp_emit = detail::read_pod<double>(in);
    a.qwp_emit = detail::read_pod<double>(in);
    a.qwp_recv = detail::read_pod<double>(in);
    a.lp_recv = detail::read_pod<double>(in);
  }
  for (int i = 0; i < 4; ++i)
    cube.schedule.laser_stokes[i] = detail::read_pod<double>(in);
  const std::size_t n = static_cast<std::size_t>(cube.states) * cube.rows *
                        cube.cols * cube.bins;
  cube.data.resize(n);
  in.read(reinterpret_cast<char*>(cube.data.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw ConfigError(path + ": truncated sample data");
  cube.sensor.rows = cube.rows;
  cube.sensor.cols = cube.cols;
  cube.sensor.bins = cube.bins;
  cube.sensor.bin_width_ns = cube.bin_width_ns;
  cube.sensor.t0_offset_ns = cube.t0_ns;
  cube.sensor.max_range_m =
      cube.bins * cube.bin_width_ns * kSpeedOfLight / 2.0;
  return cube;
}

}  // namespace pollidar

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pollidar/errors.hpp"
#include "pollidar/parallel.hpp"
#include "pollidar/pulse.hpp"
#include "pollidar/simulate.hpp"

// Peak-based temporal segmentation and per-bin Mueller recovery. The window
// is placed on the per-pixel mean-over-states waveform so all states share
// aligned bins; each state's own argmax is kept as a distance prior.

namespace pollidar {

/// Peak-centered window slice of a wavefront cube.
struct SlicedCube {
  int states = 0, rows = 0, cols = 0, window = 51;
  double bin_width_ns = 1.0;
  double t0_ns = 0.0;
  AngleSchedule schedule;
  std::vector<float> data;        ///< (s, h, w, l) row-major
  std::vector<int> t_peak;        ///< rows*cols, shared window center bin
  std::vector<uint8_t> valid;     ///< rows*cols, 0 for all-zero pixels
  std::vector<uint8_t> padded;    ///< rows*cols, 1 where the window was zero-padded
  std::vector<float> d_prior;     ///< (s, h, w): per-state argmax distance, m

  std::size_t index(int s, int h, int w, int l) const {
    return ((static_cast<std::size_t>(s) * rows + h) * cols + w) * window + l;
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(rows) * cols;
  }
};

/// Distance corresponding to a (possibly fractional) sample index.
inline double bin_to_distance(double bin, double bin_width_ns, double t0_ns) {
  return (bin * bin_width_ns - t0_ns) * kSpeedOfLight / 2.0;
}

inline SlicedCube slice_peaks(const WavefrontCube& cube, int window = 51) {
  if (window < 3 || window % 2 == 0)
    throw ConfigError("slice_peaks: window must be odd and >= 3");
  SlicedCube out;
  out.states = cube.states;
  out.rows = cube.rows;
  out.cols = cube.cols;
  out.window = window;
  out.bin_width_ns = cube.bin_width_ns;
  out.t0_ns = cube.t0_ns;
  out.schedule = cube.schedule;
  const std::size_t npx = out.pixel_count();
  out.data.assign(static_cast<std::size_t>(out.states) * npx * window, 0.0f);
  out.t_peak.assign(npx, 0);
  out.valid.assign(npx, 0);
  out.padded.assign(npx, 0);
  out.d_prior.assign(static_cast<std::size_t>(out.states) * npx, 0.0f);

  const int half = window / 2;
  parallel_for(npx, [&](std::size_t px) {
    const int h = static_cast<int>(px) / cube.cols;
    const int w = static_cast<int>(px) % cube.cols;
    // peak of the mean-over-states waveform; mean needs no normalization
    // for an argmax
    int best_bin = 0;
    double best_sum = 0.0;
    for (int t = 0; t < cube.bins; ++t) {
      double acc = 0.0;
      for (int s = 0; s < cube.states; ++s) acc += cube.at(s, h, w, t);
      if (acc > best_sum) {
        best_sum = acc;
        best_bin = t;
      }
    }
    if (best_sum <= 0.0) {
      out.t_peak[px] = 0;
      return;  // all-zero pixel: valid stays 0, window at bin 0
    }
    out.valid[px] = 1;
    out.t_peak[px] = best_bin;
    if (best_bin - half < 0 || best_bin + half >= cube.bins) out.padded[px] = 1;
    for (int s = 0; s < cube.states; ++s) {
      int state_best = 0;
      double state_max = -1.0;
      for (int t = 0; t < cube.bins; ++t) {
        const float v = cube.at(s, h, w, t);
        if (v > state_max) {
          state_max = v;
          state_best = t;
        }
      }
      out.d_prior[static_cast<std::size_t>(s) * npx + px] = static_cast<float>(
          bin_to_distance(state_best, cube.bin_width_ns, cube.t0_ns));
      for (int l = 0; l < window; ++l) {
        const int t = best_bin - half + l;
        if (t >= 0 && t < cube.bins)
          out.data[out.index(s, h, w, l)] = cube.at(s, h, w, t);
      }
    }
  });
  return out;
}

/// Per-pixel, per-window-bin Mueller matrices recovered from the sliced
/// wavefronts, with the per-pixel least-squares residual norm.
struct MuellerMovie {
  int rows = 0, cols = 0, window = 0;
  std::vector<float> h;          ///< (h, w, l, 16) row-major Mueller elements
  std::vector<float> residual;   ///< rows*cols

  std::size_t index(int r, int c, int l) const {
    return ((static_cast<std::size_t>(r) * cols + c) * window + l) * 16;
  }

  Mueller at(int r, int c, int l) const {
    Mueller m;
    const float* p = &h[index(r, c, l)];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) m(i, j) = p[4 * i + j];
    return m;
  }
};

/// Precomputed minimum-norm least-squares solver for one schedule. The
/// factorization is shared across every pixel and bin.
class EllipsometricInverter {
 public:
  explicit EllipsometricInverter(const AngleSchedule& schedule) {
    validate_for_inversion(schedule);
    design_ = design_matrix(schedule);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        design_, Eigen::ComputeThinU | Eigen::ComputeThinV);
    pinv_ = svd.solve(Eigen::MatrixXd::Identity(design_.rows(), design_.rows()));
  }

  const Eigen::MatrixXd& design() const { return design_; }
  const Eigen::MatrixXd& pseudo_inverse() const { return pinv_; }

 private:
  Eigen::MatrixXd design_;  ///< S x 16
  Eigen::MatrixXd pinv_;    ///< 16 x S
};

inline MuellerMovie invert_ellipsometry(const SlicedCube& sliced,
                                        const AngleSchedule& schedule) {
  if (schedule.states() != sliced.states)
    throw ConfigError("invert_ellipsometry: schedule/cube state mismatch");
  const EllipsometricInverter inverter(schedule);
  const Eigen::MatrixXd& pinv = inverter.pseudo_inverse();
  const Eigen::MatrixXd& design = inverter.design();

  MuellerMovie movie;
  movie.rows = sliced.rows;
  movie.cols = sliced.cols;
  movie.window = sliced.window;
  const std::size_t npx = sliced.pixel_count();
  movie.h.assign(npx * sliced.window * 16, 0.0f);
  movie.residual.assign(npx, 0.0f);

  parallel_for(npx, [&](std::size_t px) {
    const int r = static_cast<int>(px) / sliced.cols;
    const int c = static_cast<int>(px) % sliced.cols;
    Eigen::VectorXd y(sliced.states);
    double res_sq = 0.0;
    for (int l = 0; l < sliced.window; ++l) {
      for (int s = 0; s < sliced.states; ++s)
        y[s] = sliced.data[sliced.index(s, r, c, l)];
      const Eigen::VectorXd hvec = pinv * y;
      res_sq += (design * hvec - y).squaredNorm();
      float* dst = &movie.h[movie.index(r, c, l)];
      for (int i = 0; i < 16; ++i) dst[i] = static_cast<float>(hvec[i]);
    }
    movie.residual[px] = static_cast<float>(std::sqrt(res_sq));
  });
  return movie;
}

// ---- PMM1 Mueller movie file ----
// magic "PMM1", u32 version=1, u32 H, u32 W, u32 L, then H*W*L*16 f32
// (h, w, l, 16 row-major), then H*W f32 residuals.

inline void save_pmm(const MuellerMovie& movie, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write Mueller movie: " + path);
  out.write("PMM1", 4);
  detail::write_pod<uint32_t>(out, 1);
  detail::write_pod<uint32_t>(out, movie.rows);
  detail::write_pod<uint32_t>(out, movie.cols);
  detail::write_pod<uint32_t>(out, movie.window);
  out.write(reinterpret_cast<const char*>(movie.h.data()),
            static_cast<std::streamsize>(movie.h.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(movie.residual.data()),
            static_cast<std::streamsize>(movie.residual.size() * sizeof(float)));
  if (!out) throw RuntimeError("short write: " + path);
}

inline MuellerMovie load_pmm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open Mueller movie: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PMM1", 4) != 0)
    throw ConfigError(path + ": not a PMM1 file");
  if (detail::read_pod<uint32_t>(in) != 1)
    throw ConfigError(path + ": unsupported PMM version");
  MuellerMovie movie;
  movie.rows = static_cast<int>(detail::read_pod<uint32_t>(in));
  movie.cols = static_cast<int>(detail::read_pod<uint32_t>(in));
  movie.window = static_cast<int>(detail::read_pod<uint32_t>(in));
  const std::size_t npx =
      static_cast<std::size_t>(movie.rows) * movie.cols;
  movie.h.resize(npx * movie.window * 16);
  movie.residual.resize(npx);
  in.read(reinterpret_cast<char*>(movie.h.data()),
          static_cast<std::streamsize>(movie.h.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(movie.residual.data()),
          static_cast<std::streamsize>(movie.residual.size() * sizeof(float)));
  if (!in) throw ConfigError(path + ": truncated data");
  return movie;
}

}  // namespace pollidar

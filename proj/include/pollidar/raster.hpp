#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pollidar/errors.hpp"
#include "pollidar/polmath.hpp"

// PFM float rasters (grayscale "Pf", 3-channel "PF") with JSON sidecars.
// Written little-endian (negative scale), top row first in memory; PFM
// stores rows bottom-up, so the writer flips.

namespace pollidar {

inline void save_pfm(const std::vector<float>& data, int rows, int cols,
                     int channels, const std::string& path) {
  if (channels != 1 && channels != 3)
    throw RuntimeError("save_pfm: channels must be 1 or 3");
  if (data.size() != static_cast<std::size_t>(rows) * cols * channels)
    throw RuntimeError("save_pfm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write raster: " + path);
  out << (channels == 1 ? "Pf" : "PF") << "\n"
      << cols << " " << rows << "\n"
      << "-1.0\n";
  for (int r = rows - 1; r >= 0; --r)
    out.write(reinterpret_cast<const char*>(
                  &data[static_cast<std::size_t>(r) * cols * channels]),
              static_cast<std::streamsize>(cols * channels * sizeof(float)));
  if (!out) throw RuntimeError("short write: " + path);
}

struct PfmImage {
  int rows = 0, cols = 0, channels = 1;
  std::vector<float> data;  ///< top row first

  std::size_t index(int r, int c) const {
    return (static_cast<std::size_t>(r) * cols + c) * channels;
  }
};

inline PfmImage load_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open raster: " + path);
  std::string magic;
  in >> magic;
  PfmImage img;
  if (magic == "Pf")
    img.channels = 1;
  else if (magic == "PF")
    img.channels = 3;
  else
    throw ConfigError(path + ": not a PFM file");
  double scale;
  in >> img.cols >> img.rows >> scale;
  in.get();  // single whitespace after the header
  if (img.rows <= 0 || img.cols <= 0)
    throw ConfigError(path + ": bad dimensions");
  if (scale > 0)
    throw ConfigError(path + ": big-endian PFM not supported");
  img.data.resize(static_cast<std::size_t>(img.rows) * img.cols *
                  img.channels);
  for (int r = img.rows - 1; r >= 0; --r)
    in.read(reinterpret_cast<char*>(
                &img.data[static_cast<std::size_t>(r) * img.cols *
                          img.channels]),
            static_cast<std::streamsize>(img.cols * img.channels *
                                         sizeof(float)));
  if (!in) throw ConfigError(path + ": truncated raster");
  return img;
}

inline void save_scalar_raster(const std::vector<double>& v, int rows,
                               int cols, const std::string& path) {
  std::vector<float> f(v.begin(), v.end());
  save_pfm(f, rows, cols, 1, path);
}

inline void save_mask_raster(const std::vector<uint8_t>& v, int rows, int cols,
                             const std::string& path) {
  std::vector<float> f(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) f[i] = v[i] ? 1.0f : 0.0f;
  save_pfm(f, rows, cols, 1, path);
}

inline void save_normal_raster(const std::vector<Vec3>& n, int rows, int cols,
                               const std::string& path) {
  std::vector<float> f(n.size() * 3);
  for (std::size_t i = 0; i < n.size(); ++i) {
    f[3 * i] = static_cast<float>(n[i].x());
    f[3 * i + 1] = static_cast<float>(n[i].y());
    f[3 * i + 2] = static_cast<float>(n[i].z());
  }
  save_pfm(f, rows, cols, 3, path);
}

inline std::vector<Vec3> normals_from_pfm(const PfmImage& img) {
  if (img.channels != 3) throw ConfigError("expected a 3-channel normal raster");
  std::vector<Vec3> n(static_cast<std::size_t>(img.rows) * img.cols);
  for (std::size_t i = 0; i < n.size(); ++i)
    n[i] = Vec3(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
  return n;
}

inline void save_sidecar(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write sidecar: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace pollidar

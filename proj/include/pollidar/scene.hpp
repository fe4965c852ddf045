#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pollidar/errors.hpp"
#include "pollidar/material.hpp"
#include "pollidar/parallel.hpp"
#include "pollidar/pbrdf.hpp"
#include "pollidar/pulse.hpp"
#include "pollidar/rng.hpp"

// Procedural scene representation and monostatic ray casting. The sensor
// scans an equal-angle grid: pixel (r, c) maps linearly to (elevation,
// azimuth) across the field of view, so unprojection of a distance map is
// exact. Camera frame: x right, y up, z forward (optical axis).

namespace pollidar {

struct SensorConfig {
  int rows = 150;
  int cols = 236;
  double vfov_deg = 23.95;
  double hfov_deg = 31.53;
  int bins = 1488;
  double bin_width_ns = 1.0;
  double max_range_m = 223.2;
  double pulse_fwhm_ns = 3.0;
  int beam_subrays = 16;  ///< jittered subrays per pixel (square grid)
  double t0_offset_ns = 0.0;

  void validate() const {
    if (rows <= 0 || cols <= 0 || bins <= 0)
      throw ConfigError("sensor: rows/cols/bins must be positive");
    if (!(vfov_deg > 0 && hfov_deg > 0))
      throw ConfigError("sensor: fov must be positive");
    if (!(bin_width_ns > 0) || !(max_range_m > 0) || !(pulse_fwhm_ns > 0))
      throw ConfigError("sensor: bin width, max range, pulse fwhm must be positive");
    if (beam_subrays < 1) throw ConfigError("sensor: beam_subrays must be >= 1");
    const double implied = bins * bin_width_ns * kSpeedOfLight / 2.0;
    if (std::abs(implied - max_range_m) > 1e-3 * max_range_m)
      throw ConfigError("sensor: bins * bin_width * c/2 = " +
                        std::to_string(implied) +
                        " m disagrees with max_range " +
                        std::to_string(max_range_m) + " m by more than 0.1%");
  }

  /// Ray direction for pixel (r, c) at intra-pixel offset (u, v) in [0,1)^2.
  /// (0.5, 0.5) is the pixel center; r = 0 is the top row.
  Vec3 ray_direction(int r, int c, double u = 0.5, double v = 0.5) const {
    const double deg = 3.14159265358979323846 / 180.0;
    const double az = ((c + u) / cols - 0.5) * hfov_deg * deg;
    const double el = (0.5 - (r + v) / rows) * vfov_deg * deg;
    return Vec3(std::cos(el) * std::sin(az), std::sin(el),
                std::cos(el) * std::cos(az));
  }
};

enum class PrimitiveKind { Plane, Sphere, Box };

/// One scene primitive. Local frames: plane spans local x/z with normal +y
/// (half-extents from `extent`, 0 means unbounded); sphere of radius
/// extent.x(); box with half-extents extent/2.
struct ScenePrimitive {
  PrimitiveKind kind = PrimitiveKind::Plane;
  Vec3 position = Vec3::Zero();
  Vec3 rotation_deg = Vec3::Zero();  ///< intrinsic XYZ Euler angles
  Vec3 extent = Vec3::Zero();
  int material_id = 1;

  Eigen::Matrix3d rotation() const {
    const double deg = 3.14159265358979323846 / 180.0;
    return (Eigen::AngleAxisd(rotation_deg.x() * deg, Vec3::UnitX()) *
            Eigen::AngleAxisd(rotation_deg.y() * deg, Vec3::UnitY()) *
            Eigen::AngleAxisd(rotation_deg.z() * deg, Vec3::UnitZ()))
        .toRotationMatrix();
  }
};

struct Scene {
  SensorConfig sensor;
  MaterialDB materials;
  std::vector<ScenePrimitive> primitives;
};

/// Per-pixel ground truth rasters. confidence is 1 where at least half of
/// the subrays hit geometry.
struct SceneMaps {
  int rows = 0, cols = 0;
  std::vector<double> distance;   ///< m, 0 where no hit
  std::vector<Vec3> normal;       ///< unit where confidence == 1
  std::vector<int> material_id;   ///< -1 where no hit
  std::vector<double> cos_phi;
  std::vector<uint8_t> confidence;

  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * cols + c;
  }
};

/// One subray hit; all quantities in the camera frame.
struct SubrayHit {
  Vec3 omega;
  Vec3 normal;
  double range = 0.0;
  int material_id = -1;
};

struct RayCastResult {
  SceneMaps maps;
  int subrays_per_pixel = 1;
  std::vector<std::vector<SubrayHit>> hits;  ///< rows*cols entries
};

namespace detail {

struct LocalHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
};

inline std::optional<LocalHit> intersect_plane(const ScenePrimitive& p,
                                               const Vec3& ro, const Vec3& rd) {
  const Eigen::Matrix3d rot = p.rotation();
  const Vec3 n = rot * Vec3(0, 1, 0);
  const double denom = rd.dot(n);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = (p.position - ro).dot(n) / denom;
  if (t <= 1e-9) return std::nullopt;
  if (p.extent.x() > 0.0 || p.extent.z() > 0.0) {
    const Vec3 local = rot.transpose() * (ro + t * rd - p.position);
    if (p.extent.x() > 0.0 && std::abs(local.x()) > p.extent.x())
      return std::nullopt;
    if (p.extent.z() > 0.0 && std::abs(local.z()) > p.extent.z())
      return std::nullopt;
  }
  LocalHit h;
  h.t = t;
  h.normal = denom < 0.0 ? n : Vec3(-n);
  return h;
}

inline std::optional<LocalHit> intersect_sphere(const ScenePrimitive& p,
                                                const Vec3& ro, const Vec3& rd) {
  const double radius = p.extent.x();
  const Vec3 oc = ro - p.position;
  const double b = oc.dot(rd);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= 1e-9) t = -b + sq;
  if (t <= 1e-9) return std::nullopt;
  LocalHit h;
  h.t = t;
  h.normal = (ro + t * rd - p.position).normalized();
  return h;
}

inline std::optional<LocalHit> intersect_box(const ScenePrimitive& p,
                                             const Vec3& ro, const Vec3& rd) {
  const Eigen::Matrix3d rot = p.rotation();
  const Vec3 lo = rot.transpose() * (ro - p.position);
  const Vec3 ld = rot.transpose() * rd;
  const Vec3 half = 0.5 * p.extent;
  double tmin = 1e-9, tmax = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld[a]) < 1e-12) {
      if (std::abs(lo[a]) > half[a]) return std::nullopt;
      continue;
    }
    double t1 = (-half[a] - lo[a]) / ld[a];
    double t2 = (half[a] - lo[a]) / ld[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tmin) {
      tmin = t1;
      axis = a;
    }
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return std::nullopt;
  }
  if (axis < 0) return std::nullopt;  // origin inside the box
  LocalHit h;
  h.t = tmin;
  Vec3 ln = Vec3::Zero();
  ln[axis] = ld[axis] > 0.0 ? -1.0 : 1.0;
  h.normal = rot * ln;
  return h;
}

inline std::optional<LocalHit> intersect(const ScenePrimitive& p,
                                         const Vec3& ro, const Vec3& rd) {
  switch (p.kind) {
    case PrimitiveKind::Plane:
      return intersect_plane(p, ro, rd);
    case PrimitiveKind::Sphere:
      return intersect_sphere(p, ro, rd);
    case PrimitiveKind::Box:
      return intersect_box(p, ro, rd);
  }
  return std::nullopt;
}

}  // namespace detail

/// Casts beam_subrays jittered rays per pixel from the origin and records
/// nearest hits. SceneMaps carries the subray-averaged ground truth.
inline RayCastResult cast_rays(const Scene& scene, uint64_t jitter_seed = 0) {
  const SensorConfig& s = scene.sensor;
  s.validate();
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    if (!scene.materials.contains(scene.primitives[i].material_id))
      throw ConfigError("primitives[" + std::to_string(i) +
                        "]: unknown material_id " +
                        std::to_string(scene.primitives[i].material_id));
  }

  const int grid = std::max(1, static_cast<int>(std::lround(
                                   std::sqrt(double(s.beam_subrays)))));
  const int subrays = grid * grid;

  RayCastResult out;
  out.subrays_per_pixel = subrays;
  out.maps.rows = s.rows;
  out.maps.cols = s.cols;
  const std::size_t npx = static_cast<std::size_t>(s.rows) * s.cols;
  out.maps.distance.assign(npx, 0.0);
  out.maps.normal.assign(npx, Vec3::Zero());
  out.maps.material_id.assign(npx, -1);
  out.maps.cos_phi.assign(npx, 0.0);
  out.maps.confidence.assign(npx, 0);
  out.hits.assign(npx, {});

  const Vec3 origin = Vec3::Zero();
  parallel_for(static_cast<std::size_t>(s.rows), [&](std::size_t r) {
    for (int c = 0; c < s.cols; ++c) {
      const std::size_t px = out.maps.index(static_cast<int>(r), c);
      auto& hits = out.hits[px];
      hits.reserve(subrays);
      for (int sub = 0; sub < subrays; ++sub) {
        SplitMix64 rng(stream_key(jitter_seed, px, sub, 0x5ce7));
        const double u = (sub % grid + rng.next_double()) / grid;
        const double v = (sub / grid + rng.next_double()) / grid;
        const Vec3 rd = s.ray_direction(static_cast<int>(r), c, u, v);
        detail::LocalHit best;
        int best_mat = -1;
        for (const auto& p : scene.primitives) {
          if (auto h = detail::intersect(p, origin, rd)) {
            if (h->t < best.t) {
              best = *h;
              best_mat = p.material_id;
            }
          }
        }
        if (best_mat >= 0 && best.t <= s.max_range_m) {
          hits.push_back({rd, best.normal, best.t, best_mat});
        }
      }
      if (2 * hits.size() >= static_cast<std::size_t>(subrays)) {
        double dsum = 0.0, csum = 0.0;
        Vec3 nsum = Vec3::Zero();
        std::map<int, int> mat_votes;
        for (const auto& h : hits) {
          dsum += h.range;
          nsum += h.normal;
          csum += std::max(h.normal.dot(-h.omega), 0.0);
          mat_votes[h.material_id]++;
        }
        out.maps.confidence[px] = 1;
        out.maps.distance[px] = dsum / hits.size();
        out.maps.cos_phi[px] = csum / hits.size();
        const double nn = nsum.norm();
        out.maps.normal[px] = nn > 1e-12 ? Vec3(nsum / nn)
                                         : Vec3(-s.ray_direction(
                                               static_cast<int>(r), c));
        int best_id = -1, best_votes = -1;
        for (const auto& [id, votes] : mat_votes)
          if (votes > best_votes) {
            best_votes = votes;
            best_id = id;
          }
        out.maps.material_id[px] = best_id;
      }
    }
  });
  return out;
}

/// Deterministic procedural layouts standing in for captured automotive
/// scenes: a ground plane, scattered boxes/spheres, and a thin pole.
/// "lostcargo" instead places a single 0.5 m box on the road 50 m out.
inline Scene generate_scene(uint64_t seed, const std::string& tmpl,
                            MaterialDB db = default_material_db()) {
  if (tmpl != "road" && tmpl != "lot" && tmpl != "lostcargo")
    throw ConfigError("generate_scene: unknown template '" + tmpl +
                      "' (expected road, lot, or lostcargo)");
  Scene scene;
  scene.materials = std::move(db);
  SplitMix64 rng(stream_key(seed, 0xabcdef, tmpl.size()));

  const double sensor_height = 1.8;
  ScenePrimitive ground;
  ground.kind = PrimitiveKind::Plane;
  ground.position = Vec3(0, -sensor_height, 0);
  ground.material_id = tmpl == "lot" ? 5 : 1;  // concrete lot, asphalt road
  scene.primitives.push_back(ground);

  if (tmpl == "lostcargo") {
    ScenePrimitive cargo;
    cargo.kind = PrimitiveKind::Box;
    cargo.extent = Vec3(0.5, 0.5, 0.5);
    cargo.position = Vec3(0, -sensor_height + 0.25, 50.0);
    cargo.material_id = 2;
    scene.primitives.push_back(cargo);
    return scene;
  }

  const int ids[] = {1, 2, 3, 4, 5};
  const int nobj = 1 + static_cast<int>(rng.next_u64() % 10);  // 1..10
  for (int i = 0; i < nobj; ++i) {
    ScenePrimitive p;
    const bool box = rng.next_double() < 0.7;
    const double range = 5.0 + 95.0 * rng.next_double();
    const double lateral = (rng.next_double() - 0.5) * 0.5 * range;
    if (box) {
      p.kind = PrimitiveKind::Box;
      const double w = 0.5 + 2.0 * rng.next_double();
      const double h = 0.5 + 1.5 * rng.next_double();
      p.extent = Vec3(w, h, 0.5 + 3.0 * rng.next_double());
      p.position = Vec3(lateral, -sensor_height + h / 2.0, range);
      p.rotation_deg = Vec3(0, rng.next_double() * 90.0, 0);
    } else {
      p.kind = PrimitiveKind::Sphere;
      const double radius = 0.3 + 0.9 * rng.next_double();
      p.extent = Vec3(radius, 0, 0);
      p.position = Vec3(lateral, -sensor_height + radius, range);
    }
    p.material_id = ids[rng.next_u64() % 5];
    scene.primitives.push_back(p);
  }

  ScenePrimitive pole;
  pole.kind = PrimitiveKind::Box;
  pole.extent = Vec3(0.12, 5.0, 0.12);
  const double pole_range = 15.0 + 40.0 * rng.next_double();
  pole.position =
      Vec3((rng.next_double() - 0.5) * 0.4 * pole_range, -sensor_height + 2.5,
           pole_range);
  pole.material_id = 2;
  scene.primitives.push_back(pole);
  return scene;
}

// ---- scene JSON (schema 1) ----

inline nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json j;
  j["schema"] = 1;
  j["sensor"] = {
      {"rows", scene.sensor.rows},
      {"cols", scene.sensor.cols},
      {"vfov_deg", scene.sensor.vfov_deg},
      {"hfov_deg", scene.sensor.hfov_deg},
      {"bins", scene.sensor.bins},
      {"bin_width_ns", scene.sensor.bin_width_ns},
      {"max_range_m", scene.sensor.max_range_m},
      {"pulse_fwhm_ns", scene.sensor.pulse_fwhm_ns},
      {"beam_subrays", scene.sensor.beam_subrays},
      {"t0_offset_ns", scene.sensor.t0_offset_ns},
  };
  j["materials"] = scene.materials.to_json();
  j["primitives"] = nlohmann::json::array();
  for (const auto& p : scene.primitives) {
    const char* kind = p.kind == PrimitiveKind::Plane    ? "plane"
                       : p.kind == PrimitiveKind::Sphere ? "sphere"
                                                         : "box";
    j["primitives"].push_back({
        {"kind", kind},
        {"position", {p.position.x(), p.position.y(), p.position.z()}},
        {"rotation_deg",
         {p.rotation_deg.x(), p.rotation_deg.y(), p.rotation_deg.z()}},
        {"extent", {p.extent.x(), p.extent.y(), p.extent.z()}},
        {"material_id", p.material_id},
    });
  }
  return j;
}

namespace detail {
inline Vec3 parse_vec3(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError(where + ": expected an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}
}  // namespace detail

inline Scene scene_from_json(const nlohmann::json& j) {
  if (!j.contains("schema") || j["schema"].get<int>() != 1)
    throw ConfigError("scene: missing or unsupported \"schema\" (expected 1)");
  Scene scene;
  if (j.contains("sensor")) {
    const auto& s = j["sensor"];
    scene.sensor.rows = s.value("rows", scene.sensor.rows);
    scene.sensor.cols = s.value("cols", scene.sensor.cols);
    scene.sensor.vfov_deg = s.value("vfov_deg", scene.sensor.vfov_deg);
    scene.sensor.hfov_deg = s.value("hfov_deg", scene.sensor.hfov_deg);
    scene.sensor.bins = s.value("bins", scene.sensor.bins);
    scene.sensor.bin_width_ns =
        s.value("bin_width_ns", scene.sensor.bin_width_ns);
    scene.sensor.max_range_m = s.value("max_range_m", scene.sensor.max_range_m);
    scene.sensor.pulse_fwhm_ns =
        s.value("pulse_fwhm_ns", scene.sensor.pulse_fwhm_ns);
    scene.sensor.beam_subrays =
        s.value("beam_subrays", scene.sensor.beam_subrays);
    scene.sensor.t0_offset_ns =
        s.value("t0_offset_ns", scene.sensor.t0_offset_ns);
  }
  scene.sensor.validate();

  if (j.contains("generate")) {
    const auto& g = j["generate"];
    if (!g.contains("template"))
      throw ConfigError("scene.generate: missing \"template\"");
    MaterialDB db = j.contains("materials")
                        ? MaterialDB::from_json(j["materials"])
                        : default_material_db();
    Scene gen = generate_scene(g.value("seed", uint64_t{0}),
                               g["template"].get<std::string>());
    gen.sensor = scene.sensor;
    if (j.contains("materials")) gen.materials = std::move(db);
    return gen;
  }

  scene.materials = j.contains("materials")
                        ? MaterialDB::from_json(j["materials"])
                        : default_material_db();
  if (!j.contains("primitives") || !j["primitives"].is_array())
    throw ConfigError("scene: missing \"primitives\" array");
  int idx = 0;
  for (const auto& pj : j["primitives"]) {
    const std::string where = "primitives[" + std::to_string(idx) + "]";
    ScenePrimitive p;
    const std::string kind = pj.value("kind", std::string());
    if (kind == "plane")
      p.kind = PrimitiveKind::Plane;
    else if (kind == "sphere")
      p.kind = PrimitiveKind::Sphere;
    else if (kind == "box")
      p.kind = PrimitiveKind::Box;
    else if (kind == "mesh")
      throw ConfigError(where + ": mesh primitives are not enabled in this build");
    else
      throw ConfigError(where + ": unknown kind '" + kind + "'");
    if (pj.contains("position"))
      p.position = detail::parse_vec3(pj["position"], where + ".position");
    if (pj.contains("rotation_deg"))
      p.rotation_deg =
          detail::parse_vec3(pj["rotation_deg"], where + ".rotation_deg");
    if (pj.contains("extent"))
      p.extent = detail::parse_vec3(pj["extent"], where + ".extent");
    if (!p.extent.allFinite() || (p.kind == PrimitiveKind::Sphere && p.extent.x() <= 0.0) ||
        (p.kind == PrimitiveKind::Box && p.extent.minCoeff() <= 0.0))
      throw ConfigError(where + ": degenerate extent");
    p.material_id = pj.value("material_id", 1);
    if (!scene.materials.contains(p.material_id))
      throw ConfigError(where + ": unknown material_id " +
                        std::to_string(p.material_id));
    scene.primitives.push_back(p);
    ++idx;
  }
  return scene;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return scene_from_json(j);
}

inline void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write scene file: " + path);
  out << scene_to_json(scene).dump(2) << "\n";
}

}  // namespace pollidar

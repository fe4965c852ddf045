#include "pollidar/reconstruct.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_oracles.hpp"

using namespace pollidar;

namespace {
const double kPi = 3.14159265358979323846;
const double kDeg = kPi / 180.0;

SensorConfig narrow_sensor(int rows, int cols, int bins, double fov_deg) {
  SensorConfig s;
  s.rows = rows;
  s.cols = cols;
  s.vfov_deg = fov_deg;
  s.hfov_deg = fov_deg;
  s.bins = bins;
  s.max_range_m = bins * s.bin_width_ns * kSpeedOfLight / 2.0;
  s.beam_subrays = 4;
  return s;
}

Material mirror_material(int id = 9) {
  Material m;
  m.material_id = id;
  m.name = "mirror";
  m.eta = 1.5;
  m.roughness = 0.2;
  m.spec_depol = 1.0;
  m.diffuse_albedo = 0.0;
  m.specular_albedo = 1.0;
  return m;
}

Material diffuse_material(int id = 8, double eta = 1.5) {
  Material m;
  m.material_id = id;
  m.name = "diffuse";
  m.eta = eta;
  m.roughness = 0.4;
  m.spec_depol = 0.5;
  m.diff_depol = 0.0;
  m.diff_tau = 1.5;
  m.diffuse_albedo = 0.8;
  m.specular_albedo = 0.0;
  return m;
}

Scene plane_scene(double range, const SensorConfig& sensor, int material,
                  double tilt_deg = 0.0) {
  Scene scene;
  scene.sensor = sensor;
  scene.materials = default_material_db();
  scene.materials.add(mirror_material());
  scene.materials.add(diffuse_material());
  ScenePrimitive plane;
  plane.kind = PrimitiveKind::Plane;
  plane.position = Vec3(0, 0, range);
  plane.rotation_deg = Vec3(90.0 + tilt_deg, 0, 0);
  plane.material_id = material;
  scene.primitives.push_back(plane);
  return scene;
}

WavefrontCube render_scene(const Scene& scene, int states,
                           RayCastResult* cast_out = nullptr) {
  const RayCastResult cast = cast_rays(scene);
  const AngleSchedule sched = default_schedule(states);
  WavefrontCube cube =
      render_ideal(cast, scene.materials, sched, scene.sensor);
  if (cast_out) *cast_out = cast;
  return cube;
}
}  // namespace

// ---- closed-form diffuse DoP and its inverse ----

TEST(DiffuseDopCurve, InverseRoundTrip) {
  for (double eta : {1.3, 1.5, 1.8}) {
    for (double deg = 1.0; deg <= 80.0; deg += 1.0) {
      const double rho = diffuse_dop(deg * kDeg, eta);
      const double back = invert_diffuse_dop(rho, eta) / kDeg;
      EXPECT_NEAR(back, deg, 0.01) << "eta=" << eta;
    }
  }
}

TEST(DiffuseDopCurve, ClampsAboveMaximum) {
  EXPECT_NEAR(invert_diffuse_dop(0.9, 1.5) / kDeg, 89.0, 1e-9);
  EXPECT_EQ(invert_diffuse_dop(0.0, 1.5), 0.0);
}

// ---- time-of-flight distance ----

TEST(TofDistance, ExactOnBinCenter) {
  const double range = 200 * kSpeedOfLight / 2.0;  // exactly bin 200
  Scene scene = plane_scene(range, narrow_sensor(4, 4, 512, 1.0), 9);
  const WavefrontCube cube = render_scene(scene, 1);
  const DistanceMap argmax = tof_distance(cube, PeakRefine::None);
  const DistanceMap para = tof_distance(cube, PeakRefine::Parabolic);
  const std::size_t px = 2 * 4 + 2;
  ASSERT_TRUE(argmax.confidence[px]);
  // sub-mm: the subray average skews the pulse by the in-pixel range spread
  EXPECT_NEAR(argmax.distance[px], range, 1e-3);
  EXPECT_NEAR(para.distance[px], range, 1e-3);
}

TEST(TofDistance, SubBinOffsets) {
  // argmax quantizes to the 15 cm bin grid; parabolic refinement on the
  // log-Gaussian recovers the offset nearly exactly
  const SensorConfig sensor = narrow_sensor(2, 2, 512, 0.5);
  double worst_para = 0.0;
  double sum_argmax = 0.0;
  const int n = 10;  // uniform sub-bin offsets, mean |offset| = 1/4 bin
  for (int i = 0; i < n; ++i) {
    const double frac = -0.5 + (i + 0.5) / n;
    const double range = (200.0 + frac) * kSpeedOfLight / 2.0;
    Scene scene = plane_scene(range, sensor, 9);
    const WavefrontCube cube = render_scene(scene, 1);
    const DistanceMap argmax = tof_distance(cube, PeakRefine::None);
    const DistanceMap para = tof_distance(cube, PeakRefine::Parabolic);
    sum_argmax += std::abs(argmax.distance[0] - range);
    worst_para = std::max(worst_para, std::abs(para.distance[0] - range));
  }
  EXPECT_LE(sum_argmax / n, 0.0375 + 1e-4);
  EXPECT_LT(worst_para, 0.02);
  EXPECT_LT(worst_para, 1e-3);  // near-exact for a Gaussian pulse
}

TEST(TofDistance, ArgmaxQuantizedToBinGrid) {
  const double range = 30.05;
  Scene scene = plane_scene(range, narrow_sensor(2, 2, 512, 0.5), 9);
  const WavefrontCube cube = render_scene(scene, 1);
  const DistanceMap argmax = tof_distance(cube, PeakRefine::None);
  const double bin_range = cube.bin_width_ns * kSpeedOfLight / 2.0;
  const double q = argmax.distance[0] / bin_range;
  EXPECT_NEAR(q, std::round(q), 1e-9);
}

TEST(TofDistance, MaxRangePlaneLandsInLastBin) {
  SensorConfig sensor = narrow_sensor(2, 2, 1488, 0.5);
  sensor.max_range_m = 223.2;  // paper range; slightly past the bin window
  Scene scene = plane_scene(223.0, sensor, 9);
  const WavefrontCube cube = render_scene(scene, 1);
  const DistanceMap argmax = tof_distance(cube, PeakRefine::None);
  ASSERT_TRUE(argmax.confidence[0]);
  const int bin = static_cast<int>(
      std::round(argmax.distance[0] / (kSpeedOfLight / 2.0)));
  EXPECT_EQ(bin, 1487);
}

TEST(TofDistance, EmptyPixelNoEstimate) {
  Scene scene;
  scene.sensor = narrow_sensor(2, 2, 256, 0.5);
  scene.materials = default_material_db();
  const WavefrontCube cube = render_scene(scene, 1);
  const DistanceMap d = tof_distance(cube);
  for (auto c : d.confidence) EXPECT_EQ(c, 0);
}

// ---- shape from polarization ----

TEST(SfpNormals, DiffuseSphereZenithRecovery) {
  Scene scene;
  scene.sensor = narrow_sensor(48, 48, 256, 8.0);
  // one ray per pixel: the per-pixel bound is about the inversion, not
  // about normal averaging across the beam footprint
  scene.sensor.beam_subrays = 1;
  scene.materials = default_material_db();
  scene.materials.add(diffuse_material(8, 1.5));
  ScenePrimitive sphere;
  sphere.kind = PrimitiveKind::Sphere;
  sphere.position = Vec3(0, 0, 16);
  sphere.extent = Vec3(1.1, 0, 0);
  sphere.material_id = 8;
  scene.primitives.push_back(sphere);

  RayCastResult cast;
  const WavefrontCube cube = render_scene(scene, 36, &cast);
  const SlicedCube sliced = slice_peaks(cube);
  const MuellerMovie movie = invert_ellipsometry(sliced, cube.schedule);
  SfpOptions opt;
  opt.eta_assumed = 1.5;
  const ReconMaps recon = sfp_dop_normals(movie, sliced, scene.sensor, opt);

  const std::vector<Vec3> views = view_directions(scene.sensor);
  int checked = 0;
  double worst_zenith = 0.0, worst_angle = 0.0;
  for (std::size_t px = 0; px < recon.confidence.size(); ++px) {
    if (!recon.confidence[px] || !cast.maps.confidence[px]) continue;
    if (recon.low_confidence[px]) continue;
    const Mueller h = movie.at(static_cast<int>(px) / 48,
                               static_cast<int>(px) % 48, movie.window / 2);
    const Stokes s = h * cube.schedule.laser_stokes;
    if (!(s[0] > 0) || dop(s) <= 0.05) continue;
    const Vec3 n_true = cast.maps.normal[px];
    const Vec3 n_hat = recon.normal[px];
    const double zen_true = std::acos(std::clamp(
        n_true.dot(-views[px]), -1.0, 1.0));
    const double zen_hat = std::acos(std::clamp(
        n_hat.dot(-views[px]), -1.0, 1.0));
    worst_zenith = std::max(worst_zenith, std::abs(zen_hat - zen_true));
    worst_angle = std::max(
        worst_angle,
        std::acos(std::clamp(n_hat.dot(n_true), -1.0, 1.0)));
    ++checked;
  }
  EXPECT_GT(checked, 100);
  EXPECT_LT(worst_zenith / kDeg, 0.5);
  // azimuth (with the pi ambiguity resolved) must also hold on the sphere
  EXPECT_LT(worst_angle / kDeg, 1.5);
}

TEST(SfpNormals, ZeroDopFallsBackToViewDirection) {
  Scene scene = plane_scene(20.0, narrow_sensor(4, 4, 256, 0.5), 9);
  const WavefrontCube cube = render_scene(scene, 36);
  const SlicedCube sliced = slice_peaks(cube);
  const MuellerMovie movie = invert_ellipsometry(sliced, cube.schedule);
  const ReconMaps recon = sfp_dop_normals(movie, sliced, scene.sensor);
  const std::vector<Vec3> views = view_directions(scene.sensor);
  for (std::size_t px = 0; px < recon.confidence.size(); ++px) {
    ASSERT_TRUE(recon.confidence[px]);
    // mirror return is fully polarized: not a diffuse DoP, clamps high and
    // flags; a zero-DoP depolarized pixel falls back to -view
    EXPECT_GE(recon.normal[px].dot(-views[px]), 0.0);
  }
}

TEST(SfpNormals, RejectsBadEta) {
  MuellerMovie movie;
  SlicedCube sliced;
  SensorConfig sensor;
  SfpOptions opt;
  opt.eta_assumed = 0.9;
  EXPECT_THROW(sfp_dop_normals(movie, sliced, sensor, opt), ConfigError);
}

// ---- unproject + PCA ----

TEST(Unproject, ExactInverseOfEqualAngleGrid) {
  const SensorConfig sensor = narrow_sensor(8, 8, 256, 10.0);
  DistanceMap dmap;
  dmap.rows = 8;
  dmap.cols = 8;
  dmap.distance.assign(64, 0.0);
  dmap.confidence.assign(64, 1);
  for (int i = 0; i < 64; ++i) dmap.distance[i] = 5.0 + 0.1 * i;
  const PointCloud pc = unproject(dmap, sensor);
  ASSERT_EQ(pc.points.size(), 64u);
  for (int i = 0; i < 64; ++i) {
    EXPECT_NEAR(pc.points[i].norm(), dmap.distance[i], 1e-12);
    const Vec3 dir = sensor.ray_direction(i / 8, i % 8);
    EXPECT_NEAR(pc.points[i].normalized().dot(dir), 1.0, 1e-12);
  }
}

TEST(PcaNormals, ExactOnNoiseFreePlane) {
  // exact plane distances (no quantization): PCA is exact for any k >= 3
  const SensorConfig sensor = narrow_sensor(16, 16, 256, 6.0);
  const Vec3 pn = Vec3(0.2, 0.3, -1.0).normalized();
  const double d0 = 12.0;
  DistanceMap dmap;
  dmap.rows = 16;
  dmap.cols = 16;
  dmap.distance.assign(256, 0.0);
  dmap.confidence.assign(256, 1);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const Vec3 dir = sensor.ray_direction(r, c);
      dmap.distance[r * 16 + c] = d0 / dir.dot(-pn);
    }
  const PointCloud pc = unproject(dmap, sensor);
  PcaOptions opt;
  opt.k = 8;
  const ReconMaps recon = pca_normals(pc, dmap, sensor, opt);
  for (std::size_t px = 0; px < recon.confidence.size(); ++px) {
    ASSERT_TRUE(recon.confidence[px]);
    if (recon.low_confidence[px]) continue;
    EXPECT_NEAR(std::abs(recon.normal[px].dot(pn)), 1.0, 1e-9);
  }
}

TEST(PcaNormals, PipelinePlaneUnderOneDegree) {
  Scene scene = plane_scene(15.0, narrow_sensor(24, 24, 256, 8.0), 2, 20.0);
  RayCastResult cast;
  const WavefrontCube cube = render_scene(scene, 1, &cast);
  const DistanceMap dmap = tof_distance(cube, PeakRefine::Parabolic);
  const PointCloud pc = unproject(dmap, scene.sensor);
  const ReconMaps recon = pca_normals(pc, dmap, scene.sensor);
  double sum = 0.0;
  int n = 0;
  for (std::size_t px = 0; px < recon.confidence.size(); ++px) {
    if (!recon.confidence[px] || recon.low_confidence[px]) continue;
    sum += std::acos(std::clamp(
        recon.normal[px].dot(cast.maps.normal[px]), -1.0, 1.0));
    ++n;
  }
  ASSERT_GT(n, 100);
  EXPECT_LT(sum / n / kDeg, 1.0);
}

TEST(PcaNormals, IsolatedThinPoleFlaggedLowConfidence) {
  // a floating thin pole with nothing nearby: neighborhoods are collinear
  // or too small
  Scene scene;
  scene.sensor = narrow_sensor(48, 16, 512, 10.0);
  scene.materials = default_material_db();
  ScenePrimitive pole;
  pole.kind = PrimitiveKind::Box;
  pole.extent = Vec3(0.05, 12.0, 0.05);
  pole.position = Vec3(0, 0, 40.0);
  pole.material_id = 2;
  scene.primitives.push_back(pole);
  RayCastResult cast;
  const WavefrontCube cube = render_scene(scene, 1, &cast);
  const DistanceMap dmap = tof_distance(cube);
  const PointCloud pc = unproject(dmap, scene.sensor);
  const ReconMaps recon = pca_normals(pc, dmap, scene.sensor);
  int pole_pixels = 0, flagged = 0;
  for (std::size_t px = 0; px < recon.confidence.size(); ++px) {
    if (!recon.confidence[px]) continue;
    ++pole_pixels;
    flagged += recon.low_confidence[px];
  }
  ASSERT_GT(pole_pixels, 10);
  EXPECT_EQ(flagged, pole_pixels);
}

TEST(PcaNormals, CreaseErrorsLocalizeAtTransition) {
  // two perpendicular planes meeting in view: errors concentrate at the
  // crease columns
  Scene scene;
  scene.sensor = narrow_sensor(24, 48, 512, 16.0);
  scene.materials = default_material_db();
  // vertical planes with normals yawed +-45 deg, meeting in a convex corner
  // at the center column
  ScenePrimitive left;
  left.kind = PrimitiveKind::Plane;
  left.position = Vec3(0, 0, 20.0);
  left.rotation_deg = Vec3(90.0, 0, -45.0);
  left.extent = Vec3(60.0, 0, 60.0);
  left.material_id = 2;
  ScenePrimitive right;
  right.kind = PrimitiveKind::Plane;
  right.position = Vec3(0, 0, 20.0);
  right.rotation_deg = Vec3(90.0, 0, 45.0);
  right.extent = Vec3(60.0, 0, 60.0);
  right.material_id = 2;
  scene.primitives.push_back(left);
  scene.primitives.push_back(right);

  RayCastResult cast;
  const WavefrontCube cube = render_scene(scene, 1, &cast);
  const DistanceMap dmap = tof_distance(cube);
  const PointCloud pc = unproject(dmap, scene.sensor);
  PcaOptions opt;
  opt.k = 12;
  const ReconMaps recon = pca_normals(pc, dmap, scene.sensor, opt);

  const int crease_col = 24;
  double err_near = 0.0, err_far = 0.0;
  int n_near = 0, n_far = 0;
  for (int r = 2; r < 22; ++r)
    for (int c = 0; c < 48; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * 48 + c;
      if (!recon.confidence[px] || !cast.maps.confidence[px]) continue;
      const double err = std::acos(std::clamp(
          recon.normal[px].dot(cast.maps.normal[px]), -1.0, 1.0));
      if (std::abs(c - crease_col) <= 2) {
        err_near += err;
        ++n_near;
      } else if (std::abs(c - crease_col) >= 6) {
        err_far += err;
        ++n_far;
      }
    }
  ASSERT_GT(n_near, 10);
  ASSERT_GT(n_far, 100);
  EXPECT_GT(err_near / n_near, 5.0 * (err_far / n_far));
  EXPECT_LT(err_far / n_far / kDeg, 2.0);
}

// ---- model fit ----

TEST(ModelFit, MixedSceneRoundTrip) {
  Scene scene;
  scene.sensor = narrow_sensor(32, 32, 384, 9.0);
  scene.materials = default_material_db();
  Material mat;
  mat.material_id = 7;
  mat.eta = 1.5;
  mat.roughness = 0.3;
  mat.spec_depol = 0.8;
  mat.diff_depol = 0.05;
  mat.diff_tau = 1.5;
  mat.diffuse_albedo = 0.6;
  mat.specular_albedo = 0.4;
  scene.materials.add(mat);

  ScenePrimitive plane;
  plane.kind = PrimitiveKind::Plane;
  plane.position = Vec3(0, 0, 22.0);
  plane.rotation_deg = Vec3(90.0 + 35.0, 0, 0);
  plane.material_id = 7;
  scene.primitives.push_back(plane);
  ScenePrimitive sphere;
  sphere.kind = PrimitiveKind::Sphere;
  sphere.position = Vec3(0, 0, 15.0);
  sphere.extent = Vec3(1.0, 0, 0);
  sphere.material_id = 7;
  scene.primitives.push_back(sphere);

  RayCastResult cast;
  const WavefrontCube cube = render_scene(scene, 36, &cast);
  const SlicedCube sliced = slice_peaks(cube);
  const MuellerMovie movie = invert_ellipsometry(sliced, cube.schedule);
  const DistanceMap dmap = tof_distance(cube, PeakRefine::Parabolic);
  const ReconMaps recon = modelfit_normals(movie, sliced, dmap, scene.sensor);

  const std::vector<Vec3> views = view_directions(scene.sensor);
  double err_sum = 0.0;
  int n = 0, eta_checked = 0;
  double worst_eta = 0.0;
  for (std::size_t px = 0; px < recon.confidence.size(); ++px) {
    if (!recon.confidence[px] || !cast.maps.confidence[px]) continue;
    const double err = std::acos(std::clamp(
        recon.normal[px].dot(cast.maps.normal[px]), -1.0, 1.0));
    err_sum += err;
    ++n;
    const Mueller h = movie.at(static_cast<int>(px) / 32,
                               static_cast<int>(px) % 32, movie.window / 2);
    const Stokes s = h * cube.schedule.laser_stokes;
    if (s[0] > 0 && dop(s) > 0.2) {
      worst_eta = std::max(worst_eta,
                           std::abs(recon.material[px].eta - mat.eta));
      ++eta_checked;
    }
  }
  ASSERT_GT(n, 400);
  EXPECT_LT(err_sum / n / kDeg, 5.0);
  ASSERT_GT(eta_checked, 20);
  EXPECT_LT(worst_eta / mat.eta, 0.05);

  // normals face the sensor everywhere
  for (std::size_t px = 0; px < recon.confidence.size(); ++px)
    if (recon.confidence[px])
      EXPECT_GE(recon.normal[px].dot(-views[px]), -1e-12);
}

TEST(ModelFit, HeadOnPixelReturnsViewNormal) {
  Scene scene = plane_scene(18.0, narrow_sensor(4, 4, 256, 0.5), 8);
  RayCastResult cast;
  const WavefrontCube cube = render_scene(scene, 36, &cast);
  const SlicedCube sliced = slice_peaks(cube);
  const MuellerMovie movie = invert_ellipsometry(sliced, cube.schedule);
  const DistanceMap dmap = tof_distance(cube, PeakRefine::Parabolic);
  const ReconMaps recon = modelfit_normals(movie, sliced, dmap, scene.sensor);
  const std::vector<Vec3> views = view_directions(scene.sensor);
  for (std::size_t px = 0; px < recon.confidence.size(); ++px) {
    ASSERT_TRUE(recon.confidence[px]);
    // head-on: azimuth unidentifiable, zenith collapses toward zero
    const double angle = std::acos(std::clamp(
        recon.normal[px].dot(-views[px]), -1.0, 1.0));
    EXPECT_LT(angle / kDeg, 3.0);
    EXPECT_TRUE(recon.low_confidence[px]);
  }
}

TEST(ModelFit, ObjectiveGradientMatchesCentralDifferences) {
  // the solver's forward-difference gradient against central differences of
  // the objective, at random interior points
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Vec3 omega = Vec3(0.05, -0.03, 1.0).normalized();
  const double range = 14.0;

  Eigen::VectorXd lo(8), hi(8);
  lo << -7.0, 0.0, 1.1, 0.01, 0.0, 0.0, 0.0, 0.0;
  hi << 7.0, 89.5 * kDeg, 2.5, 1.0, 1.0, 1.0, 1e12, 1e12;

  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // synthetic measurement from a random parameter point
    const auto truth = detail::modelfit_lobes(
        uni(rng) * 2 * kPi, (5 + 70 * uni(rng)) * kDeg, 1.2 + uni(rng),
        0.05 + 0.9 * uni(rng), uni(rng), uni(rng), omega, range);
    const Mueller h_meas = (0.5 + uni(rng)) * truth.spec +
                           (0.5 + uni(rng)) * truth.diff;

    Eigen::VectorXd x(8);
    x << uni(rng) * 2 * kPi - kPi, (10 + 60 * uni(rng)) * kDeg,
        1.2 + 1.0 * uni(rng), 0.1 + 0.8 * uni(rng), 0.1 + 0.8 * uni(rng),
        0.1 + 0.8 * uni(rng), 0.5 + uni(rng), 0.5 + uni(rng);

    auto fn = [&](const Eigen::VectorXd& p) {
      return detail::modelfit_residual(p, h_meas, omega, range);
    };
    const Eigen::VectorXd grad = lm_gradient(fn, x, lo, hi);
    for (int j = 0; j < 8; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const double central =
          (fn(xp).squaredNorm() - fn(xm).squaredNorm()) / (4.0 * h);
      const double scale = std::max(std::abs(central), 1e-4);
      EXPECT_NEAR(grad[j], central, 1e-4 * scale + 1e-10)
          << "trial " << trial << " param " << j;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 800);
}

TEST(LmSolver, ConvergesOnRosenbrockStyleResidual) {
  auto fn = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(2);
    r[0] = 10.0 * (x[1] - x[0] * x[0]);
    r[1] = 1.0 - x[0];
    return r;
  };
  Eigen::VectorXd x0(2), lo(2), hi(2);
  x0 << -1.2, 1.0;
  lo << -5.0, -5.0;
  hi << 5.0, 5.0;
  const LmResult res = levenberg_marquardt(fn, x0, lo, hi);
  EXPECT_NEAR(res.x[0], 1.0, 1e-6);
  EXPECT_NEAR(res.x[1], 1.0, 1e-6);
  EXPECT_LT(res.cost, 1e-12);
}

TEST(LmSolver, RespectsBounds) {
  auto fn = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(1);
    r[0] = x[0] + 3.0;  // unconstrained minimum at -3
    return r;
  };
  Eigen::VectorXd x0(1), lo(1), hi(1);
  x0 << 0.5;
  lo << -1.0;
  hi << 1.0;
  const LmResult res = levenberg_marquardt(fn, x0, lo, hi);
  EXPECT_NEAR(res.x[0], -1.0, 1e-9);
}

// pollidar: simulate polarimetric lidar wavefronts and reconstruct
// distance, normals, and material properties from them.
//
// Subcommands: gen-scene, simulate, reconstruct, eval, schedule.
// Exit codes: 0 ok, 1 runtime failure, 2 config/schema error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pollidar/manifest.hpp"
#include "pollidar/materialfit.hpp"
#include "pollidar/metrics.hpp"
#include "pollidar/parallel.hpp"
#include "pollidar/preprocess.hpp"
#include "pollidar/raster.hpp"
#include "pollidar/reconstruct.hpp"
#include "pollidar/scene.hpp"
#include "pollidar/simulate.hpp"

namespace fs = std::filesystem;
using namespace pollidar;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

void apply_thread_option(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("POLLIDAR_THREADS"))
      threads = std::atoi(env);
  }
  thread_count() = threads > 0 ? threads : 0;
}

/// Diagnostic rasters for a cube: state-0 peak intensity plus DoP and AoP of
/// the peak-bin Mueller matrix applied to the laser state.
void write_diagnostics(const SlicedCube& sliced, const MuellerMovie& movie,
                       const fs::path& dir, RunManifest& manifest) {
  const std::size_t npx = sliced.pixel_count();
  std::vector<double> intensity(npx, 0.0), dop_map(npx, 0.0),
      aop_map(npx, 0.0);
  const int center = sliced.window / 2;
  for (std::size_t px = 0; px < npx; ++px) {
    if (!sliced.valid[px]) continue;
    const int r = static_cast<int>(px) / sliced.cols;
    const int c = static_cast<int>(px) % sliced.cols;
    intensity[px] = sliced.data[sliced.index(0, r, c, center)];
    const Stokes s = movie.at(r, c, center) * sliced.schedule.laser_stokes;
    if (s[0] > 0.0) {
      dop_map[px] = dop(s);
      if (s[1] * s[1] + s[2] * s[2] > 0.0) aop_map[px] = aop(s);
    }
  }
  save_scalar_raster(intensity, sliced.rows, sliced.cols,
                     (dir / "intensity_state0.pfm").string());
  save_scalar_raster(dop_map, sliced.rows, sliced.cols,
                     (dir / "dop.pfm").string());
  save_scalar_raster(aop_map, sliced.rows, sliced.cols,
                     (dir / "aop.pfm").string());
  manifest.add_output((dir / "intensity_state0.pfm").string());
  manifest.add_output((dir / "dop.pfm").string());
  manifest.add_output((dir / "aop.pfm").string());
}

int cmd_gen_scene(const std::string& tmpl, uint64_t seed,
                  const std::string& out_path) {
  Scene scene = generate_scene(seed, tmpl);
  save_scene(scene, out_path);
  std::cout << "wrote " << out_path << " (" << scene.primitives.size()
            << " primitives)\n";
  return 0;
}

int cmd_simulate(const std::string& scene_path, const std::string& out_dir,
                 const std::string& noise_mode, uint64_t seed,
                 double laser_power, int states) {
  Timer timer;
  Scene scene = load_scene(scene_path);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  RunManifest manifest;
  manifest.command = "simulate";
  manifest.seed = seed;
  manifest.add_input(scene_path);

  AngleSchedule schedule = default_schedule(states);
  RayCastResult cast = cast_rays(scene, seed);
  WavefrontCube cube =
      render_ideal(cast, scene.materials, schedule, scene.sensor, laser_power);

  NoiseParams noise;
  if (noise_mode == "off") {
    noise.enabled = false;
  } else if (noise_mode != "default") {
    std::ifstream in(noise_mode);
    if (!in) throw ConfigError("cannot open noise profile: " + noise_mode);
    nlohmann::json j = nlohmann::json::parse(in);
    noise.photons_per_unit = j.value("photons_per_unit", noise.photons_per_unit);
    noise.read_sigma = j.value("read_sigma", noise.read_sigma);
    noise.adc_saturation = j.value("adc_saturation", noise.adc_saturation);
    noise.dark_offset = j.value("dark_offset", noise.dark_offset);
  }
  if (noise.enabled) cube = apply_noise(cube, noise, seed);

  save_pwf(cube, (dir / "cube.pwf").string());
  save_scalar_raster(cast.maps.distance, cast.maps.rows, cast.maps.cols,
                     (dir / "gt_distance.pfm").string());
  save_normal_raster(cast.maps.normal, cast.maps.rows, cast.maps.cols,
                     (dir / "gt_normals.pfm").string());
  save_mask_raster(cast.maps.confidence, cast.maps.rows, cast.maps.cols,
                   (dir / "gt_confidence.pfm").string());
  std::vector<double> mat_ids(cast.maps.material_id.begin(),
                              cast.maps.material_id.end());
  save_scalar_raster(mat_ids, cast.maps.rows, cast.maps.cols,
                     (dir / "gt_material_id.pfm").string());

  nlohmann::json sidecar;
  sidecar["scene"] = scene_path;
  sidecar["seed"] = seed;
  sidecar["laser_power"] = laser_power;
  sidecar["noise"] = noise_mode;
  sidecar["states"] = schedule.states();
  save_sidecar(sidecar, (dir / "gt_sidecar.json").string());

  manifest.config = {{"noise", noise_mode},
                     {"laser_power", laser_power},
                     {"states", states}};
  manifest.add_output((dir / "cube.pwf").string());
  manifest.add_output((dir / "gt_distance.pfm").string());
  manifest.add_output((dir / "gt_normals.pfm").string());
  manifest.add_output((dir / "gt_confidence.pfm").string());
  manifest.wall_time_s = timer.seconds();
  manifest.save((dir / "manifest.json").string());
  std::cout << "simulated " << cube.states << "x" << cube.rows << "x"
            << cube.cols << "x" << cube.bins << " cube in "
            << manifest.wall_time_s << " s\n";
  return 0;
}

int cmd_reconstruct(const std::string& cube_path, const std::string& method,
                    const std::string& out_dir, double eta, int window,
                    int knn, bool export_features, double pulse_fwhm) {
  Timer timer;
  WavefrontCube cube = load_pwf(cube_path);
  if (pulse_fwhm > 0) cube.sensor.pulse_fwhm_ns = pulse_fwhm;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  RunManifest manifest;
  manifest.command = "reconstruct";
  manifest.add_input(cube_path);
  manifest.config = {{"method", method}, {"eta", eta}, {"window", window}};

  const bool needs_mueller =
      method == "sfp" || method == "modelfit" || export_features;
  if (needs_mueller && cube.states < 16)
    throw ConfigError("method '" + method +
                      "' needs a full ellipsometric cube (>= 16 states); this "
                      "cube has " +
                      std::to_string(cube.states));

  DistanceMap dmap = tof_distance(
      cube, method == "argmax" ? PeakRefine::None : PeakRefine::Parabolic);

  ReconMaps recon;
  nlohmann::json params = {{"method", method}};
  if (method == "argmax" || method == "parabolic") {
    recon.init(dmap.rows, dmap.cols, method);
    recon.distance = dmap.distance;
    recon.confidence = dmap.confidence;
  } else if (method == "sfp" || method == "modelfit" || method == "pca") {
    SlicedCube sliced = slice_peaks(cube, window);
    if (method == "pca") {
      PointCloud pc = unproject(dmap, cube.sensor);
      PcaOptions opt;
      opt.k = knn;
      recon = pca_normals(pc, dmap, cube.sensor, opt);
      params["k"] = knn;
    } else {
      MuellerMovie movie = invert_ellipsometry(sliced, cube.schedule);
      if (method == "sfp") {
        SfpOptions opt;
        opt.eta_assumed = eta;
        recon = sfp_dop_normals(movie, sliced, cube.sensor, opt);
        params["eta_assumed"] = eta;
      } else {
        recon = modelfit_normals(movie, sliced, dmap, cube.sensor);
      }
      if (export_features) {
        save_pfx(sliced, movie, cube.sensor, (dir / "features.pfx").string());
        manifest.add_output((dir / "features.pfx").string());
      }
      save_pmm(movie, (dir / "mueller.pmm").string());
      manifest.add_output((dir / "mueller.pmm").string());
      write_diagnostics(sliced, movie, dir, manifest);
    }
    if (method == "pca" && export_features) {
      MuellerMovie movie = invert_ellipsometry(sliced, cube.schedule);
      save_pfx(sliced, movie, cube.sensor, (dir / "features.pfx").string());
      manifest.add_output((dir / "features.pfx").string());
    }
  } else {
    throw ConfigError("unknown method '" + method +
                      "' (expected argmax, parabolic, sfp, pca, or modelfit)");
  }

  save_scalar_raster(recon.distance, recon.rows, recon.cols,
                     (dir / "distance.pfm").string());
  manifest.add_output((dir / "distance.pfm").string());
  if (method != "argmax" && method != "parabolic") {
    save_normal_raster(recon.normal, recon.rows, recon.cols,
                       (dir / "normals.pfm").string());
    save_mask_raster(recon.low_confidence, recon.rows, recon.cols,
                     (dir / "low_confidence.pfm").string());
    manifest.add_output((dir / "normals.pfm").string());
  }
  save_mask_raster(recon.confidence, recon.rows, recon.cols,
                   (dir / "confidence.pfm").string());
  manifest.add_output((dir / "confidence.pfm").string());

  std::size_t valid = 0;
  for (auto v : recon.confidence) valid += v;
  params["valid_fraction"] =
      recon.confidence.empty()
          ? 0.0
          : double(valid) / double(recon.confidence.size());
  save_sidecar(params, (dir / "sidecar.json").string());

  manifest.wall_time_s = timer.seconds();
  manifest.save((dir / "manifest.json").string());
  std::cout << "reconstructed " << method << " in " << manifest.wall_time_s
            << " s\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& out_path, const std::string& csv_path) {
  const fs::path pred(pred_dir), gt(gt_dir);
  const PfmImage gt_dist = load_pfm((gt / "gt_distance.pfm").string());
  const PfmImage gt_conf = load_pfm((gt / "gt_confidence.pfm").string());
  const PfmImage pr_dist = load_pfm((pred / "distance.pfm").string());
  const PfmImage pr_conf = load_pfm((pred / "confidence.pfm").string());
  if (gt_dist.rows != pr_dist.rows || gt_dist.cols != pr_dist.cols)
    throw ConfigError("eval: prediction and ground truth dims differ");

  const std::size_t npx =
      static_cast<std::size_t>(gt_dist.rows) * gt_dist.cols;
  std::vector<uint8_t> mask(npx);
  for (std::size_t i = 0; i < npx; ++i)
    mask[i] = gt_conf.data[i] > 0.5f && pr_conf.data[i] > 0.5f;

  std::vector<double> dp(npx), dg(npx);
  for (std::size_t i = 0; i < npx; ++i) {
    dp[i] = pr_dist.data[i];
    dg[i] = gt_dist.data[i];
  }
  MetricsReport rep = distance_metrics(dp, dg, mask);

  const fs::path pred_normals = pred / "normals.pfm";
  if (fs::exists(pred_normals)) {
    const PfmImage gt_n = load_pfm((gt / "gt_normals.pfm").string());
    const PfmImage pr_n = load_pfm(pred_normals.string());
    rep = merge_reports(
        angular_metrics(normals_from_pfm(pr_n), normals_from_pfm(gt_n), mask),
        rep);
  }

  std::ofstream out(out_path);
  if (!out) throw RuntimeError("cannot write metrics: " + out_path);
  out << metrics_to_json(rep).dump(2) << "\n";
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    csv << metrics_csv_header() << "\n" << metrics_csv_row(rep) << "\n";
  }
  std::cout << metrics_to_json(rep).dump(2) << "\n";
  return 0;
}

int cmd_schedule(int states) {
  AngleSchedule schedule = default_schedule(std::max(states, 1));
  const ScheduleAnalysis a = analyze_schedule(schedule);
  std::cout << "states: " << schedule.states() << "\nrank: " << a.rank
            << "\ncondition: " << a.condition << "\n";
  if (a.rank < 16) {
    std::cerr << "schedule check FAILED: rank " << a.rank << " < 16\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polarimetric wavefront lidar simulator and reconstruction"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = hardware)");

  auto* gen = app.add_subcommand("gen-scene", "write a procedural scene");
  std::string tmpl = "road", gen_out = "scene.json";
  uint64_t gen_seed = 0;
  gen->add_option("--template", tmpl, "road | lot | lostcargo");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output scene JSON")->required();

  auto* sim = app.add_subcommand("simulate", "render a wavefront cube");
  std::string scene_path, sim_out = "out";
  std::string noise_mode = "default";
  uint64_t sim_seed = 0;
  double laser_power = 2e6;
  int sim_states = 36;
  sim->add_option("scene", scene_path, "scene JSON")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--noise", noise_mode, "default | off | profile.json");
  sim->add_option("--seed", sim_seed, "noise/jitter seed");
  sim->add_option("--laser-power", laser_power, "laser power scale");
  sim->add_option("--states", sim_states, "schedule states to acquire");

  auto* rec = app.add_subcommand("reconstruct", "recover geometry from a cube");
  std::string cube_path, method = "parabolic", rec_out = "recon";
  double eta = 1.5, pulse_fwhm = 0.0;
  int window = 51, knn = 16;
  bool export_features = false;
  rec->add_option("cube", cube_path, "PWF1 wavefront cube")->required();
  rec->add_option("--method", method, "argmax | parabolic | sfp | pca | modelfit");
  rec->add_option("--out", rec_out, "output directory")->required();
  rec->add_option("--eta", eta, "assumed refractive index (sfp)");
  rec->add_option("--window", window, "temporal window length");
  rec->add_option("--knn", knn, "PCA neighborhood size");
  rec->add_option("--pulse-fwhm", pulse_fwhm, "override pulse FWHM (ns)");
  rec->add_flag("--export-features", export_features,
                "write the concatenated feature tensor (PFX1)");

  auto* ev = app.add_subcommand("eval", "metrics between prediction and gt");
  std::string pred_dir, gt_dir, metrics_out = "metrics.json", csv_out;
  ev->add_option("--pred", pred_dir, "prediction directory")->required();
  ev->add_option("--gt", gt_dir, "ground truth directory")->required();
  ev->add_option("--out", metrics_out, "metrics JSON path");
  ev->add_option("--csv", csv_out, "optional CSV row export");

  auto* sch = app.add_subcommand("schedule", "analyze the acquisition schedule");
  int sch_states = 36;
  bool check = false;
  sch->add_option("--states", sch_states, "number of states");
  sch->add_flag("--check", check, "exit nonzero when rank < 16");

  try {
    app.parse(argc, argv);
    apply_thread_option(threads);
    if (gen->parsed()) return cmd_gen_scene(tmpl, gen_seed, gen_out);
    if (sim->parsed())
      return cmd_simulate(scene_path, sim_out, noise_mode, sim_seed,
                          laser_power, sim_states);
    if (rec->parsed())
      return cmd_reconstruct(cube_path, method, rec_out, eta, window, knn,
                             export_features, pulse_fwhm);
    if (ev->parsed()) return cmd_eval(pred_dir, gt_dir, metrics_out, csv_out);
    if (sch->parsed()) return cmd_schedule(sch_states);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

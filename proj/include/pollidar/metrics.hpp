#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pollidar/errors.hpp"
#include "pollidar/polmath.hpp"

// Evaluation metrics over confidence-masked rasters. Accumulation uses
// compensated summation in a fixed pixel order, so results do not depend on
// traversal batching.

namespace pollidar {

struct MetricsReport {
  double mean_deg = 0.0;
  double median_deg = 0.0;
  double rmse_deg = 0.0;
  double acc3_pct = 0.0;
  double acc5_pct = 0.0;
  double acc10_pct = 0.0;
  double mae_m = 0.0;
  double medae_m = 0.0;
  double rmse_m = 0.0;
  std::size_t masked_pixels = 0;
  std::size_t total_pixels = 0;
  bool has_angular = false;
  bool has_distance = false;

  double mask_coverage() const {
    return total_pixels ? double(masked_pixels) / double(total_pixels) : 0.0;
  }
};

namespace detail {

struct KahanSum {
  double sum = 0.0, carry = 0.0;
  void add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

/// Lower median by exact selection (no interpolation).
inline double exact_median(std::vector<double> v) {
  const std::size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[k];
}

}  // namespace detail

/// Angular error statistics between unit normal maps over a mask.
inline MetricsReport angular_metrics(const std::vector<Vec3>& pred,
                                     const std::vector<Vec3>& gt,
                                     const std::vector<uint8_t>& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw ConfigError("angular_metrics: shape mismatch");
  MetricsReport rep;
  rep.total_pixels = mask.size();
  std::vector<double> errs;
  detail::KahanSum sum, sum_sq;
  std::size_t n3 = 0, n5 = 0, n10 = 0;
  const double rad2deg = 180.0 / 3.14159265358979323846;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double d = std::clamp(pred[i].dot(gt[i]), -1.0, 1.0);
    const double angle = std::acos(d) * rad2deg;
    errs.push_back(angle);
    sum.add(angle);
    sum_sq.add(angle * angle);
    if (angle <= 3.0) ++n3;
    if (angle <= 5.0) ++n5;
    if (angle <= 10.0) ++n10;
  }
  if (errs.empty()) throw ConfigError("angular_metrics: empty mask");
  rep.masked_pixels = errs.size();
  rep.mean_deg = sum.sum / errs.size();
  rep.rmse_deg = std::sqrt(sum_sq.sum / errs.size());
  rep.median_deg = detail::exact_median(std::move(errs));
  rep.acc3_pct = 100.0 * n3 / rep.masked_pixels;
  rep.acc5_pct = 100.0 * n5 / rep.masked_pixels;
  rep.acc10_pct = 100.0 * n10 / rep.masked_pixels;
  rep.has_angular = true;
  return rep;
}

/// Absolute distance error statistics over a mask.
inline MetricsReport distance_metrics(const std::vector<double>& pred,
                                      const std::vector<double>& gt,
                                      const std::vector<uint8_t>& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw ConfigError("distance_metrics: shape mismatch");
  MetricsReport rep;
  rep.total_pixels = mask.size();
  std::vector<double> errs;
  detail::KahanSum sum, sum_sq;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double e = std::abs(pred[i] - gt[i]);
    errs.push_back(e);
    sum.add(e);
    sum_sq.add(e * e);
  }
  if (errs.empty()) throw ConfigError("distance_metrics: empty mask");
  rep.masked_pixels = errs.size();
  rep.mae_m = sum.sum / errs.size();
  rep.rmse_m = std::sqrt(sum_sq.sum / errs.size());
  rep.medae_m = detail::exact_median(std::move(errs));
  rep.has_distance = true;
  return rep;
}

inline MetricsReport merge_reports(const MetricsReport& angular,
                                   const MetricsReport& distance) {
  MetricsReport rep = angular;
  rep.mae_m = distance.mae_m;
  rep.medae_m = distance.medae_m;
  rep.rmse_m = distance.rmse_m;
  rep.has_distance = distance.has_distance;
  return rep;
}

inline nlohmann::json metrics_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["schema"] = 1;
  if (rep.has_angular) {
    j["angular"] = {
        {"mean_deg", rep.mean_deg},
        {"median_deg", rep.median_deg},
        {"rmse_deg", rep.rmse_deg},
        {"accuracy_pct",
         {{"3.0", rep.acc3_pct}, {"5.0", rep.acc5_pct}, {"10.0", rep.acc10_pct}}},
    };
  }
  if (rep.has_distance) {
    j["distance"] = {
        {"mae_m", rep.mae_m},
        {"medae_m", rep.medae_m},
        {"rmse_m", rep.rmse_m},
    };
  }
  j["pixels"] = {{"masked", rep.masked_pixels},
                 {"total", rep.total_pixels},
                 {"mask_coverage", rep.mask_coverage()}};
  return j;
}

inline std::string metrics_csv_header() {
  return "mean_deg,median_deg,rmse_deg,acc3_pct,acc5_pct,acc10_pct,"
         "mae_m,medae_m,rmse_m,masked_pixels,total_pixels";
}

inline std::string metrics_csv_row(const MetricsReport& rep) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%.6f,%.6f,%.6f,%.4f,%.4f,%.4f,%.6f,%.6f,%.6f,%zu,%zu",
                rep.mean_deg, rep.median_deg, rep.rmse_deg, rep.acc3_pct,
                rep.acc5_pct, rep.acc10_pct, rep.mae_m, rep.medae_m,
                rep.rmse_m, rep.masked_pixels, rep.total_pixels);
  return buf;
}

}  // namespace pollidar

#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "pollidar/material.hpp"
#include "pollidar/polmath.hpp"
#include "pollidar/pulse.hpp"

// Temporal-polarimetric reflectance under the monostatic approximation:
// emitter and receiver share one viewing direction, so the half vector is
// -omega exactly and theta_h = theta_i = theta_o. The response splits into
// an instantaneous specular part and a diffuse part delayed by an
// exponential kernel of constant diff_tau.

namespace pollidar {

/// Geometry of one surface hit. omega points from the sensor toward the
/// surface; the normal faces the sensor when cos_phi > 0.
struct SurfaceInteraction {
  Vec3 normal{0, 0, -1};
  Vec3 omega{0, 0, 1};
  double range = 1.0;    ///< one-way distance, m
  double cos_phi = 1.0;  ///< max(n . -omega, 0)
};

inline SurfaceInteraction make_interaction(const Vec3& normal,
                                           const Vec3& omega, double range) {
  SurfaceInteraction si;
  si.normal = normal.normalized();
  si.omega = omega.normalized();
  si.range = range;
  si.cos_phi = std::max(si.normal.dot(-si.omega), 0.0);
  return si;
}

/// Transverse reference basis (x, y) for a ray of direction omega, with
/// (x, y, omega) right-handed. Shared by the outgoing and returning light of
/// the ray. Stable for all directions inside the sensor's field of view.
inline std::pair<Vec3, Vec3> pixel_stokes_basis(const Vec3& omega) {
  Vec3 x(1, 0, 0);
  Vec3 xr = x - x.dot(omega) * omega;
  double n = xr.norm();
  if (n < 1e-9) {
    // omega parallel to world x; fall back to world y as the seed
    xr = Vec3(0, 1, 0) - omega.dot(Vec3(0, 1, 0)) * omega;
    n = xr.norm();
  }
  xr /= n;
  return {xr, omega.cross(xr)};
}

/// Signed angle from the ray's reference x axis to the s axis of the plane
/// of incidence (s = omega x n), measured about omega. Zero at normal
/// incidence where the plane of incidence is undefined.
inline double plane_of_incidence_angle(const Vec3& omega, const Vec3& normal) {
  const auto [xr, yr] = pixel_stokes_basis(omega);
  Vec3 s = omega.cross(normal);
  const double n = s.norm();
  if (n < 1e-12) return 0.0;
  s /= n;
  return std::atan2(xr.cross(s).dot(omega), xr.dot(s));
}

/// GGX normal distribution at half-vector angle cos_h for roughness m.
inline double ggx_ndf(double cos_h, double m) {
  const double a2 = m * m;
  const double d = cos_h * cos_h * (a2 - 1.0) + 1.0;
  return a2 / (3.14159265358979323846 * d * d);
}

/// Smith height-correlated masking-shadowing for the monostatic case
/// (both directions at incidence angle acos(cos_i)).
inline double smith_g2_monostatic(double cos_i, double m) {
  const double a2 = m * m;
  const double tan2 = (1.0 - cos_i * cos_i) / (cos_i * cos_i);
  const double lambda = 0.5 * (std::sqrt(1.0 + a2 * tan2) - 1.0);
  return 1.0 / (1.0 + 2.0 * lambda);
}

/// Specular Mueller response: microfacet scalar lobe times the partially
/// depolarized Fresnel reflection, rotated through the plane of incidence.
/// Back-facing interactions return the zero matrix.
inline Mueller specular_mueller(const SurfaceInteraction& si,
                                const Material& mat) {
  const double cos_i = si.normal.dot(-si.omega);
  if (cos_i <= 0.0) return Mueller::Zero();
  const double theta_i = std::acos(std::min(cos_i, 1.0));
  const double lobe = ggx_ndf(cos_i, mat.roughness) *
                      smith_g2_monostatic(cos_i, mat.roughness) /
                      (4.0 * cos_i * cos_i);
  const double phi = plane_of_incidence_angle(si.omega, si.normal);
  // retro path in the shared basis: the reversal flip keeps the response
  // continuous (azimuth-independent) at normal incidence
  const Mueller fr = rotator(-phi) * fresnel_reflection(theta_i, mat.eta) *
                     ray_reversal_flip() * rotator(phi);
  return (lobe * mat.specular_albedo) *
         (partial_depolarizer(mat.spec_depol) * fr);
}

/// Diffuse Mueller response: transmit into the medium, depolarize with
/// residual leakage diff_depol and intensity scale diffuse_albedo, transmit
/// back out. Monostatic, so one plane of incidence serves both rotations.
inline Mueller diffuse_mueller(const SurfaceInteraction& si,
                               const Material& mat) {
  const double cos_i = si.normal.dot(-si.omega);
  if (cos_i <= 0.0) return Mueller::Zero();
  const double theta_i = std::acos(std::min(cos_i, 1.0));
  const double theta_t = std::asin(std::sin(theta_i) / mat.eta);
  const double phi = plane_of_incidence_angle(si.omega, si.normal);
  const Mueller ft_in = fresnel_transmission(theta_i, mat.eta, true);
  const Mueller ft_out = fresnel_transmission(theta_t, mat.eta, false);
  const Mueller depol =
      mat.diffuse_albedo * partial_depolarizer(mat.diff_depol);
  return rotator(-phi) * ft_out * depol * ft_in * rotator(phi);
}

/// Two-component response of one interaction. The specular part is
/// instantaneous at tau = 0; the diffuse part is spread by the unit-integral
/// kernel (1/tau_d) exp(-tau/tau_d) step(tau).
struct TemporalMueller {
  Mueller specular_part = Mueller::Zero();
  Mueller diffuse_part = Mueller::Zero();
  double diffuse_kernel_tau = 1.0;  ///< ns
};

/// Full response with cosine shading and 1/d^2 attenuation applied.
inline TemporalMueller reflectance(const SurfaceInteraction& si,
                                   const Material& mat) {
  if (!(si.range > 0.0))
    throw std::domain_error("reflectance: range must be > 0");
  TemporalMueller tm;
  tm.diffuse_kernel_tau = mat.diff_tau;
  if (si.cos_phi <= 0.0) return tm;
  const double scale = si.cos_phi / (si.range * si.range);
  tm.specular_part = scale * specular_mueller(si, mat);
  tm.diffuse_part = scale * diffuse_mueller(si, mat);
  return tm;
}

}  // namespace pollidar

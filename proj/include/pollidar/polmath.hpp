#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

// Stokes-Mueller algebra and the Mueller matrices of ideal optical elements.
//
// Conventions used everywhere in this library:
//  - Stokes vector (s0, s1, s2, s3): intensity, horizontal/vertical linear,
//    diagonal linear, circular. s1 > 0 means polarization along the local
//    x axis of the ray's reference basis.
//  - Emitted and returned light of one lidar ray share a single transverse
//    reference basis (monostatic path); all Mueller matrices for that ray
//    are expressed in it.
//  - Retarder sign: the canonical quarter-wave plate (fast axis at 0) maps
//    (0,0,1,0) to (0,0,0,-1).
//  - Angles in radians. Element matrices are pi-periodic in their axis angle.

namespace pollidar {

using Stokes = Eigen::Vector4d;
using Mueller = Eigen::Matrix4d;
using Vec3 = Eigen::Vector3d;

/// Rotation angles of the four polarization-modulating elements:
/// emitter half-wave plate, emitter quarter-wave plate, receiver
/// quarter-wave plate, receiver linear polarizer.
struct OpticAngles {
  double hwp_emit = 0.0;
  double qwp_emit = 0.0;
  double qwp_recv = 0.0;
  double lp_recv = 0.0;
};

/// Normalizes an element axis angle to [0, pi).
inline double normalize_axis_angle(double theta) {
  const double pi = 3.14159265358979323846;
  double t = std::fmod(theta, pi);
  if (t < 0.0) t += pi;
  return t;
}

/// Frame-rotation Mueller matrix: rotates the (s1,s2) components by 2*theta,
/// leaving s0 and s3 unchanged. rotator(a)*rotator(b) == rotator(a+b).
inline Mueller rotator(double theta) {
  const double c = std::cos(2.0 * theta);
  const double s = std::sin(2.0 * theta);
  Mueller m = Mueller::Identity();
  m(1, 1) = c;
  m(1, 2) = s;
  m(2, 1) = -s;
  m(2, 2) = c;
  return m;
}

/// Ideal linear polarizer with transmission axis at theta.
inline Mueller linear_polarizer(double theta) {
  const double c = std::cos(2.0 * theta);
  const double s = std::sin(2.0 * theta);
  Mueller m = Mueller::Zero();
  m(0, 0) = 0.5;
  m(0, 1) = 0.5 * c;
  m(0, 2) = 0.5 * s;
  m(1, 0) = 0.5 * c;
  m(1, 1) = 0.5 * c * c;
  m(1, 2) = 0.5 * c * s;
  m(2, 0) = 0.5 * s;
  m(2, 1) = 0.5 * c * s;
  m(2, 2) = 0.5 * s * s;
  return m;
}

/// Ideal linear retarder with fast axis at theta and the given retardance.
/// waveplate(theta, pi) is a half-wave plate, waveplate(theta, pi/2) a
/// quarter-wave plate.
inline Mueller waveplate(double theta, double retardance) {
  const double c = std::cos(2.0 * theta);
  const double s = std::sin(2.0 * theta);
  const double cd = std::cos(retardance);
  const double sd = std::sin(retardance);
  Mueller m = Mueller::Identity();
  m(1, 1) = c * c + s * s * cd;
  m(1, 2) = c * s * (1.0 - cd);
  m(1, 3) = -s * sd;
  m(2, 1) = c * s * (1.0 - cd);
  m(2, 2) = s * s + c * c * cd;
  m(2, 3) = c * sd;
  m(3, 1) = s * sd;
  m(3, 2) = -c * sd;
  m(3, 3) = cd;
  return m;
}

inline Mueller half_wave_plate(double theta) {
  return waveplate(theta, 3.14159265358979323846);
}

inline Mueller quarter_wave_plate(double theta) {
  return waveplate(theta, 1.5707963267948966);
}

/// Partial depolarizer diag(1, a, a, a). a = 1 is the identity, a = 0 the
/// ideal depolarizer.
inline Mueller partial_depolarizer(double a) {
  Mueller m = Mueller::Identity();
  m(1, 1) = a;
  m(2, 2) = a;
  m(3, 3) = a;
  return m;
}

/// Basis flip diag(1,1,-1,-1) for a retro-reflected ray expressed in the
/// outgoing ray's transverse basis. Composing it with the textbook Fresnel
/// reflection matrix gives the Mueller form of the Jones chain
/// diag(rs, -rp), which is azimuth-independent at normal incidence.
inline Mueller ray_reversal_flip() {
  Mueller m = Mueller::Identity();
  m(2, 2) = -1.0;
  m(3, 3) = -1.0;
  return m;
}

/// Real amplitude coefficients at a dielectric interface with relative
/// refractive index eta_rel = n_transmitted / n_incident, below total
/// internal reflection.
struct FresnelAmplitudes {
  double rs = 0.0;
  double rp = 0.0;
  double ts = 0.0;
  double tp = 0.0;
  double cos_i = 1.0;
  double cos_t = 1.0;
};

inline FresnelAmplitudes fresnel_amplitudes(double theta_i, double eta_rel) {
  FresnelAmplitudes f;
  f.cos_i = std::cos(theta_i);
  const double sin_t = std::sin(theta_i) / eta_rel;
  if (sin_t >= 1.0)
    throw std::domain_error("fresnel_amplitudes: beyond critical angle");
  f.cos_t = std::sqrt(1.0 - sin_t * sin_t);
  f.rs = (f.cos_i - eta_rel * f.cos_t) / (f.cos_i + eta_rel * f.cos_t);
  f.rp = (eta_rel * f.cos_i - f.cos_t) / (eta_rel * f.cos_i + f.cos_t);
  f.ts = 2.0 * f.cos_i / (f.cos_i + eta_rel * f.cos_t);
  f.tp = 2.0 * f.cos_i / (eta_rel * f.cos_i + f.cos_t);
  return f;
}

/// Fresnel reflection Mueller matrix at incidence theta_d from air onto a
/// dielectric of refractive index eta > 1, expressed in the s-p basis of the
/// plane of incidence (x axis along s).
inline Mueller fresnel_reflection(double theta_d, double eta) {
  if (!(eta > 1.0))
    throw std::domain_error("fresnel_reflection: eta must be > 1");
  if (!(theta_d >= 0.0 && theta_d < 1.5707963267948966))
    throw std::domain_error("fresnel_reflection: theta_d outside [0, pi/2)");
  const FresnelAmplitudes f = fresnel_amplitudes(theta_d, eta);
  const double rs2 = f.rs * f.rs;
  const double rp2 = f.rp * f.rp;
  Mueller m = Mueller::Zero();
  m(0, 0) = 0.5 * (rs2 + rp2);
  m(0, 1) = 0.5 * (rs2 - rp2);
  m(1, 0) = m(0, 1);
  m(1, 1) = m(0, 0);
  // rs and rp are real for an external dielectric reflection: relative phase
  // is 0 or pi, carried by the sign of the product.
  m(2, 2) = f.rs * f.rp;
  m(3, 3) = f.rs * f.rp;
  return m;
}

/// Fresnel transmission Mueller matrix. entering=true crosses from air into
/// the dielectric (theta measured in air); entering=false crosses back out
/// (theta measured inside the medium). Includes the n^2 cos / cos throughput
/// factor, so reflected + transmitted intensity equals the incident one.
inline Mueller fresnel_transmission(double theta, double eta, bool entering) {
  if (!(eta > 1.0))
    throw std::domain_error("fresnel_transmission: eta must be > 1");
  const double eta_rel = entering ? eta : 1.0 / eta;
  const double sin_t = std::sin(theta) / eta_rel;
  if (sin_t >= 1.0)
    throw std::domain_error("fresnel_transmission: beyond critical angle");
  const FresnelAmplitudes f = fresnel_amplitudes(theta, eta_rel);
  const double through = eta_rel * f.cos_t / f.cos_i;
  const double ts2 = f.ts * f.ts;
  const double tp2 = f.tp * f.tp;
  Mueller m = Mueller::Zero();
  m(0, 0) = 0.5 * through * (ts2 + tp2);
  m(0, 1) = 0.5 * through * (ts2 - tp2);
  m(1, 0) = m(0, 1);
  m(1, 1) = m(0, 0);
  m(2, 2) = through * f.ts * f.tp;
  m(3, 3) = m(2, 2);
  return m;
}

/// Degree of polarization sqrt(s1^2+s2^2+s3^2)/s0. Requires s0 > 0.
inline double dop(const Stokes& s) {
  if (!(s[0] > 0.0)) throw std::domain_error("dop: requires s0 > 0");
  return std::sqrt(s[1] * s[1] + s[2] * s[2] + s[3] * s[3]) / s[0];
}

/// Angle of linear polarization 0.5*atan2(s2, s1), normalized to [0, pi).
/// Undefined when the linear component vanishes.
inline double aop(const Stokes& s) {
  if (s[1] * s[1] + s[2] * s[2] <= 0.0)
    throw std::domain_error("aop: no linear polarization component");
  const double pi = 3.14159265358979323846;
  double a = 0.5 * std::atan2(s[2], s[1]);
  if (a < 0.0) a += pi;
  if (a >= pi) a -= pi;
  return a;
}

/// True when s0^2 >= s1^2+s2^2+s3^2 within an absolute slack and s0 >= 0.
inline bool is_physical_stokes(const Stokes& s, double slack = 1e-9) {
  if (s[0] < 0.0) return false;
  return s[0] * s[0] + slack >= s[1] * s[1] + s[2] * s[2] + s[3] * s[3];
}

}  // namespace pollidar

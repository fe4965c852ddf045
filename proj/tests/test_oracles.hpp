#pragma once

// Independent oracles for the test suites. These stay deliberately separate
// from the library implementations they check: textbook Fresnel amplitude
// formulas, the closed-form diffuse polarization curve, and a generator of
// random physical Mueller matrices built from convex products of passive
// elements.

#include <cmath>
#include <random>

#include "pollidar/polmath.hpp"

namespace oracle {

struct FresnelRT {
  double rs, rp, ts, tp, Rs, Rp, Ts, Tp;
};

/// Textbook amplitude coefficients crossing n1 -> n2 at incidence theta.
inline FresnelRT fresnel(double theta, double n1, double n2) {
  const double ci = std::cos(theta);
  const double st = n1 * std::sin(theta) / n2;
  const double ct = std::sqrt(1.0 - st * st);
  FresnelRT f;
  f.rs = (n1 * ci - n2 * ct) / (n1 * ci + n2 * ct);
  f.rp = (n2 * ci - n1 * ct) / (n2 * ci + n1 * ct);
  f.ts = 2.0 * n1 * ci / (n1 * ci + n2 * ct);
  f.tp = 2.0 * n1 * ci / (n2 * ci + n1 * ct);
  f.Rs = f.rs * f.rs;
  f.Rp = f.rp * f.rp;
  f.Ts = (n2 * ct) / (n1 * ci) * f.ts * f.ts;
  f.Tp = (n2 * ct) / (n1 * ci) * f.tp * f.tp;
  return f;
}

/// Closed-form diffuse degree of polarization at exit angle theta and
/// refractive index eta (Atkinson-Hancock form).
inline double diffuse_dop_closed_form(double theta, double eta) {
  const double s2 = std::sin(theta) * std::sin(theta);
  const double a = eta - 1.0 / eta;
  const double b = eta + 1.0 / eta;
  return a * a * s2 /
         (2.0 + 2.0 * eta * eta - b * b * s2 +
          4.0 * std::cos(theta) * std::sqrt(eta * eta - s2));
}

/// Random physical (completely positive, passive) Mueller matrix: a product
/// of 1-3 random passive elements. With normalize_gain, the unpolarized
/// gain m00 is scaled to 1.
inline pollidar::Mueller random_physical_mueller(std::mt19937_64& rng,
                                                 bool normalize_gain = false) {
  using namespace pollidar;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double pi = 3.14159265358979323846;
  Mueller m = Mueller::Identity();
  const int factors = 1 + static_cast<int>(rng() % 3);
  for (int f = 0; f < factors; ++f) {
    const int kind = static_cast<int>(rng() % 5);
    const double th = uni(rng) * pi;
    switch (kind) {
      case 0:
        m = m * rotator(th);
        break;
      case 1:
        m = m * linear_polarizer(th);
        break;
      case 2:
        m = m * waveplate(th, uni(rng) * pi);
        break;
      case 3:
        m = m * partial_depolarizer(uni(rng));
        break;
      default: {
        const double eta = 1.2 + 0.8 * uni(rng);
        m = m * fresnel_reflection(uni(rng) * 1.3, eta);
        break;
      }
    }
  }
  if (normalize_gain) {
    if (m(0, 0) < 1e-6) return random_physical_mueller(rng, true);
    m /= m(0, 0);
  } else {
    m *= 0.2 + 0.8 * uni(rng);
  }
  return m;
}

/// Random physical Stokes vector with s0 in (0, 1].
inline pollidar::Stokes random_physical_stokes(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double s0 = 0.05 + 0.95 * uni(rng);
  const double p = uni(rng);
  const double z = 2.0 * uni(rng) - 1.0;
  const double phi = 6.283185307179586 * uni(rng);
  const double r = std::sqrt(1.0 - z * z);
  return pollidar::Stokes(s0, s0 * p * r * std::cos(phi),
                          s0 * p * r * std::sin(phi), s0 * p * z);
}

}  // namespace oracle

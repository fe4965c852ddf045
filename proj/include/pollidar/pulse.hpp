#pragma once

#include <cmath>

namespace pollidar {

/// Speed of light in meters per nanosecond. Internal units are m / ns / rad
/// throughout.
inline constexpr double kSpeedOfLight = 0.299792458;

inline constexpr double kFwhmToSigma = 1.0 / 2.3548200450309493;  // 1/(2*sqrt(2 ln 2))

/// Scaled complementary error function exp(x^2)*erfc(x), stable for large x.
inline double erfcx(double x) {
  if (x < 25.0) return std::exp(x * x) * std::erfc(x);
  // asymptotic series, relative error < 1e-12 for x >= 25
  const double sqrt_pi = 1.7724538509055159;
  const double ix2 = 1.0 / (x * x);
  return (1.0 - 0.5 * ix2 + 0.75 * ix2 * ix2 - 1.875 * ix2 * ix2 * ix2) /
         (x * sqrt_pi);
}

/// Unit-area Gaussian pulse of standard deviation sigma, evaluated at t.
inline double gaussian_pulse(double t, double sigma) {
  return std::exp(-t * t / (2.0 * sigma * sigma)) /
         (sigma * 2.5066282746310002);
}

/// Gaussian pulse convolved with the causal exponential kernel
/// (1/tau) exp(-t/tau) step(t): the exponentially modified Gaussian.
/// Evaluated in closed form; both factors of the naive expression can
/// overflow, so the two branches below keep every intermediate bounded.
inline double emg_pulse(double t, double sigma, double tau) {
  const double u = sigma / (1.4142135623730951 * tau) -
                   t / (1.4142135623730951 * sigma);
  if (u >= 0.0) {
    return erfcx(u) * std::exp(-t * t / (2.0 * sigma * sigma)) / (2.0 * tau);
  }
  // u < 0 implies t > sigma^2/tau, so the exponent is negative.
  return std::exp(sigma * sigma / (2.0 * tau * tau) - t / tau) *
         std::erfc(u) / (2.0 * tau);
}

}  // namespace pollidar

#include "pollidar/polmath.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_oracles.hpp"

using namespace pollidar;

namespace {
const double kPi = 3.14159265358979323846;

void expect_stokes_near(const Stokes& a, const Stokes& b, double tol) {
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], tol) << "component " << i;
}
}  // namespace

TEST(Rotator, ZeroIsIdentity) {
  EXPECT_LT((rotator(0.0) - Mueller::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rotator, QuarterTurnFlipsLinearPolarization) {
  expect_stokes_near(rotator(kPi / 2) * Stokes(1, 1, 0, 0),
                     Stokes(1, -1, 0, 0), 1e-12);
}

TEST(Rotator, Composes) {
  const Mueller lhs = rotator(0.3) * rotator(0.7);
  EXPECT_LT((lhs - rotator(1.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rotator, InverseIsNegativeAngle) {
  for (double th = -3.0; th <= 3.0; th += 0.37) {
    const Mueller m = rotator(th) * rotator(-th);
    EXPECT_LT((m - Mueller::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LinearPolarizer, MalusOnUnpolarized) {
  expect_stokes_near(linear_polarizer(0.0) * Stokes(1, 0, 0, 0),
                     Stokes(0.5, 0.5, 0, 0), 1e-15);
}

TEST(LinearPolarizer, CrossedExtinction) {
  expect_stokes_near(linear_polarizer(0.0) * Stokes(1, -1, 0, 0),
                     Stokes(0, 0, 0, 0), 1e-15);
}

TEST(LinearPolarizer, DiagonalAxis) {
  expect_stokes_near(linear_polarizer(kPi / 4) * Stokes(1, 1, 0, 0),
                     Stokes(0.5, 0, 0.5, 0), 1e-15);
}

TEST(LinearPolarizer, MalusLawOverGrid) {
  for (double theta = 0.0; theta < kPi; theta += kPi / 17) {
    for (double phi = 0.0; phi < kPi; phi += kPi / 13) {
      const Stokes in(1.0, std::cos(2 * phi), std::sin(2 * phi), 0.0);
      const Stokes out = linear_polarizer(theta) * in;
      const double expected = std::cos(theta - phi) * std::cos(theta - phi);
      EXPECT_NEAR(out[0], expected, 1e-12);
    }
  }
}

TEST(Waveplate, ZeroRetardanceIsIdentity) {
  for (double th = 0.0; th < kPi; th += 0.31) {
    EXPECT_LT((waveplate(th, 0.0) - Mueller::Identity()).cwiseAbs().maxCoeff(),
              1e-15);
  }
}

TEST(Waveplate, HalfWaveAtEighthTurnRotatesBy45) {
  expect_stokes_near(half_wave_plate(kPi / 8) * Stokes(1, 1, 0, 0),
                     Stokes(1, 0, 1, 0), 1e-12);
}

TEST(Waveplate, QuarterWaveSignConvention) {
  // canonical QWP maps +s2 light down to -s3
  expect_stokes_near(quarter_wave_plate(0.0) * Stokes(0, 0, 1, 0),
                     Stokes(0, 0, 0, -1), 1e-15);
  expect_stokes_near(quarter_wave_plate(0.0) * Stokes(1, 0, 1, 0),
                     Stokes(1, 0, 0, -1), 1e-15);
}

TEST(Waveplate, HalfWaveIsQuarterWaveSquared) {
  for (double th = 0.0; th < kPi; th += kPi / 9) {
    const Mueller q = quarter_wave_plate(th);
    EXPECT_LT((q * q - half_wave_plate(th)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Fresnel, NormalIncidenceReflectance) {
  const Mueller m = fresnel_reflection(0.0, 1.5);
  EXPECT_NEAR(m(0, 0), 0.04, 1e-12);
  EXPECT_NEAR(m(0, 1), 0.0, 1e-12);
}

TEST(Fresnel, BrewsterFullPolarization) {
  const double brewster = std::atan(1.5);
  const Stokes out = fresnel_reflection(brewster, 1.5) * Stokes(1, 0, 0, 0);
  EXPECT_NEAR(dop(out), 1.0, 1e-9);
}

TEST(Fresnel, ReflectionMatchesTextbookOracle) {
  const auto f = oracle::fresnel(kPi / 4, 1.0, 1.5);
  const Mueller m = fresnel_reflection(kPi / 4, 1.5);
  EXPECT_NEAR(m(0, 0), 0.5 * (f.Rs + f.Rp), 1e-12);
  EXPECT_NEAR(m(0, 1), 0.5 * (f.Rs - f.Rp), 1e-12);
  EXPECT_NEAR(m(2, 2), f.rs * f.rp, 1e-12);
}

TEST(Fresnel, RejectsNonDielectric) {
  EXPECT_THROW(fresnel_reflection(0.1, 1.0), std::domain_error);
  EXPECT_THROW(fresnel_reflection(0.1, 0.8), std::domain_error);
}

TEST(FresnelTransmission, NormalIncidenceEnergyComplement) {
  const Mueller m = fresnel_transmission(0.0, 1.5, true);
  EXPECT_NEAR(m(0, 0), 0.96, 1e-12);
  EXPECT_NEAR(m(0, 1), 0.0, 1e-12);
  const Stokes out = m * Stokes(1, 0, 0, 0);
  EXPECT_NEAR(dop(out), 0.0, 1e-15);
}

TEST(FresnelTransmission, MatchesTextbookOracle) {
  const auto f = oracle::fresnel(1.0, 1.0, 1.5);
  const Mueller m = fresnel_transmission(1.0, 1.5, true);
  EXPECT_NEAR(m(0, 0), 0.5 * (f.Ts + f.Tp), 1e-12);
  EXPECT_NEAR(m(0, 1), 0.5 * (f.Ts - f.Tp), 1e-12);
}

TEST(FresnelTransmission, ExitBeyondCriticalAngleThrows) {
  // critical angle inside eta=1.5 is ~41.8 deg
  EXPECT_THROW(fresnel_transmission(0.8, 1.5, false), std::domain_error);
  EXPECT_NO_THROW(fresnel_transmission(0.7, 1.5, false));
}

TEST(FresnelEnergy, ReflectionPlusTransmissionIsOne) {
  for (double eta : {1.3, 1.5, 1.8}) {
    for (double th = 0.0; th < 1.45; th += 0.1) {
      const double r = fresnel_reflection(th, eta)(0, 0);
      const double t = fresnel_transmission(th, eta, true)(0, 0);
      EXPECT_NEAR(r + t, 1.0, 1e-9) << "eta=" << eta << " th=" << th;
    }
  }
}

TEST(DopAop, Examples) {
  EXPECT_NEAR(dop(Stokes(1, 0, 0, 0)), 0.0, 1e-15);
  EXPECT_NEAR(dop(Stokes(1, 1, 0, 0)), 1.0, 1e-15);
  EXPECT_NEAR(aop(Stokes(1, 1, 0, 0)), 0.0, 1e-15);
  EXPECT_NEAR(dop(Stokes(2, 0.6, 0.8, 0)), 0.5, 1e-15);
  EXPECT_NEAR(aop(Stokes(2, 0.6, 0.8, 0)), 0.5 * std::atan2(0.8, 0.6), 1e-15);
}

TEST(DopAop, DomainErrors) {
  EXPECT_THROW(dop(Stokes(0, 0, 0, 0)), std::domain_error);
  EXPECT_THROW(dop(Stokes(-1, 0, 0, 0)), std::domain_error);
  EXPECT_THROW(aop(Stokes(1, 0, 0, 0)), std::domain_error);
  EXPECT_THROW(aop(Stokes(1, 0, 0, 1)), std::domain_error);
}

TEST(DopAop, RangeOnRandomPhysicalInput) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Stokes s = oracle::random_physical_stokes(rng);
    const double d = dop(s);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0 + 1e-12);
    if (s[1] * s[1] + s[2] * s[2] > 0) {
      const double a = aop(s);
      EXPECT_GE(a, 0.0);
      EXPECT_LT(a, kPi);
    }
  }
}

TEST(Passivity, ElementsNeverAmplify) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Mueller> elements;
  for (double th = 0.0; th < kPi; th += kPi / 7) {
    elements.push_back(rotator(th));
    elements.push_back(linear_polarizer(th));
    elements.push_back(waveplate(th, uni(rng) * kPi));
    elements.push_back(fresnel_reflection(std::min(th, 1.4), 1.5));
    elements.push_back(fresnel_transmission(std::min(th, 1.4), 1.5, true));
    elements.push_back(partial_depolarizer(uni(rng)));
  }
  for (int i = 0; i < 1000; ++i) {
    const Stokes s = oracle::random_physical_stokes(rng);
    for (const auto& m : elements) {
      const Stokes out = m * s;
      EXPECT_LE(out[0], s[0] + 1e-12);
      EXPECT_TRUE(is_physical_stokes(out, 1e-9));
    }
  }
}

TEST(Rotators, PreserveDop) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Stokes s = oracle::random_physical_stokes(rng);
    const double th = 3.0 * (i / 100.0 - 0.5);
    EXPECT_NEAR(dop(rotator(th) * s), dop(s), 1e-12);
    EXPECT_NEAR(dop(waveplate(th, 1.1) * s), dop(s), 1e-12);
  }
}

TEST(AxisAngles, NormalizeToHalfTurn) {
  EXPECT_NEAR(normalize_axis_angle(kPi + 0.25), 0.25, 1e-12);
  EXPECT_NEAR(normalize_axis_angle(-0.25), kPi - 0.25, 1e-12);
  EXPECT_GE(normalize_axis_angle(123.456), 0.0);
  EXPECT_LT(normalize_axis_angle(123.456), kPi);
}

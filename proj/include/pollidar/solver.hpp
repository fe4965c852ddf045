#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>

// Small dense Levenberg-Marquardt with box bounds and forward-difference
// Jacobians, shared by the per-pixel model fits. Residual functors may use a
// smoothed-L1 transform (soft_abs_residual) so the minimized objective is a
// robust L1 data term while staying differentiable.

namespace pollidar {

/// Smoothed |e|: q(e)^2 = e^2 / sqrt(e^2 + eps^2) -> |e| for |e| >> eps and
/// exactly 0 at e = 0.
inline double soft_abs_residual(double e, double eps = 1e-12) {
  return e / std::pow(e * e + eps * eps, 0.25);
}

struct LmOptions {
  int max_iters = 200;
  double initial_lambda = 1e-3;
  double step_tol = 1e-12;
  double cost_tol = 1e-14;
  double fd_step = 1e-7;
};

struct LmResult {
  Eigen::VectorXd x;
  double cost = 0.0;  ///< sum of squared residuals at x
  int iters = 0;
  bool converged = false;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline Eigen::VectorXd clamp_to_box(Eigen::VectorXd x,
                                    const Eigen::VectorXd& lo,
                                    const Eigen::VectorXd& hi) {
  for (int i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
  return x;
}

/// Forward-difference Jacobian; steps flip inward at an active bound.
inline Eigen::MatrixXd numeric_jacobian(const ResidualFn& fn,
                                        const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& r0,
                                        const Eigen::VectorXd& lo,
                                        const Eigen::VectorXd& hi,
                                        double rel_step) {
  Eigen::MatrixXd jac(r0.size(), x.size());
  for (int j = 0; j < x.size(); ++j) {
    double h = rel_step * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x;
    if (x[j] + h > hi[j]) h = -h;
    xp[j] = std::clamp(x[j] + h, lo[j], hi[j]);
    const double actual = xp[j] - x[j];
    if (actual == 0.0) {
      jac.col(j).setZero();
      continue;
    }
    jac.col(j) = (fn(xp) - r0) / actual;
  }
  return jac;
}

/// Gradient of 0.5*||r(x)||^2 using the solver's own Jacobian machinery.
inline Eigen::VectorXd lm_gradient(const ResidualFn& fn,
                                   const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi,
                                   double rel_step = 1e-7) {
  const Eigen::VectorXd r0 = fn(x);
  const Eigen::MatrixXd jac = numeric_jacobian(fn, x, r0, lo, hi, rel_step);
  return jac.transpose() * r0;
}

inline LmResult levenberg_marquardt(const ResidualFn& fn, Eigen::VectorXd x0,
                                    const Eigen::VectorXd& lo,
                                    const Eigen::VectorXd& hi,
                                    const LmOptions& opt = {}) {
  LmResult out;
  Eigen::VectorXd x = clamp_to_box(std::move(x0), lo, hi);
  Eigen::VectorXd r = fn(x);
  double cost = r.squaredNorm();
  double lambda = opt.initial_lambda;

  for (int iter = 0; iter < opt.max_iters; ++iter) {
    out.iters = iter + 1;
    const Eigen::MatrixXd jac = numeric_jacobian(fn, x, r, lo, hi, opt.fd_step);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;
    if (jtr.lpNorm<Eigen::Infinity>() < 1e-14) {
      out.converged = true;
      break;
    }
    bool stepped = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      for (int i = 0; i < damped.rows(); ++i)
        damped(i, i) += lambda * std::max(jtj(i, i), 1e-12);
      const Eigen::VectorXd delta = damped.ldlt().solve(-jtr);
      const Eigen::VectorXd xn = clamp_to_box(x + delta, lo, hi);
      const Eigen::VectorXd rn = fn(xn);
      const double cn = rn.squaredNorm();
      if (cn < cost) {
        const double improvement = cost - cn;
        const double step = (xn - x).norm();
        x = xn;
        r = rn;
        cost = cn;
        lambda = std::max(lambda / 3.0, 1e-12);
        stepped = true;
        if (step < opt.step_tol || improvement < opt.cost_tol * (cost + 1e-30))
          out.converged = true;
        break;
      }
      lambda *= 5.0;
    }
    if (!stepped || out.converged) {
      out.converged = out.converged || !stepped;
      break;
    }
  }
  out.x = x;
  out.cost = cost;
  return out;
}

}  // namespace pollidar

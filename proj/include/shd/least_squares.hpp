#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "shd/error.hpp"

namespace shd {

struct LeastSquaresOptions {
  int max_iterations = 200;
  double relative_step_tol = 1e-8;
  double initial_damping = 1e-3;
  // Step sizes are compared against max(|p_i|, param_scale_floor).
  double param_scale_floor = 1.0;
};

template <int N>
struct LeastSquaresResult {
  Eigen::Matrix<double, N, 1> params;
  Eigen::Matrix<double, N, N> covariance;  // (J^T J)^+ s^2, s^2 = RSS / dof
  double residual_sum_squares = 0;
  int iterations = 0;
};

/// Levenberg-Marquardt with a central-difference Jacobian. `residuals(p)`
/// returns an Eigen::VectorXd. Converged when every parameter step is below
/// `relative_step_tol` relative to max(|p_i|, param_scale_floor); throws
/// FitFailure otherwise.
template <int N, typename ResidualFn>
LeastSquaresResult<N> levenberg_marquardt(ResidualFn&& residuals, Eigen::Matrix<double, N, 1> p,
                                          const LeastSquaresOptions& opts = {}) {
  using Vec = Eigen::Matrix<double, N, 1>;
  using Mat = Eigen::Matrix<double, N, N>;

  auto jacobian = [&](const Vec& at, const Eigen::VectorXd& r0) {
    Eigen::MatrixXd j(r0.size(), N);
    for (int k = 0; k < N; ++k) {
      const double h = 1e-6 * std::max(std::abs(at(k)), 1e-3);
      Vec up = at, dn = at;
      up(k) += h;
      dn(k) -= h;
      j.col(k) = (residuals(up) - residuals(dn)) / (2 * h);
    }
    return j;
  };

  Eigen::VectorXd r = residuals(p);
  if (r.size() <= N) throw FitFailure("levenberg_marquardt: fewer residuals than parameters", "");
  double cost = r.squaredNorm();
  double lambda = opts.initial_damping;
  Eigen::MatrixXd j = jacobian(p, r);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Mat jtj = j.transpose() * j;
    const Vec grad = j.transpose() * r;
    bool accepted = false;
    Vec step = Vec::Zero();
    for (int tries = 0; tries < 40 && !accepted; ++tries) {
      Mat a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
      step = -a.ldlt().solve(grad);
      if (!step.allFinite()) {
        lambda *= 10;
        continue;
      }
      const Vec trial = p + step;
      const Eigen::VectorXd r_trial = residuals(trial);
      const double trial_cost = r_trial.allFinite() ? r_trial.squaredNorm() : INFINITY;
      if (trial_cost <= cost) {
        p = trial;
        r = r_trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10, 1e-12);
        accepted = true;
      } else {
        lambda *= 10;
      }
    }
    const Vec scale = p.cwiseAbs().cwiseMax(opts.param_scale_floor);
    const bool small_step = (step.cwiseAbs().array() / scale.array()).maxCoeff() < opts.relative_step_tol;
    if (!accepted || small_step) {
      if (!accepted && !small_step && lambda < 1e10) {
        std::ostringstream diag;
        diag << "iterations=" << it << " cost=" << cost << " lambda=" << lambda;
        throw FitFailure("levenberg_marquardt: no descent step found", diag.str());
      }
      LeastSquaresResult<N> out;
      out.params = p;
      out.residual_sum_squares = cost;
      out.iterations = it;
      j = jacobian(p, r);
      const double dof = static_cast<double>(r.size() - N);
      // Pseudo-inverse: a parameter the data cannot see (a floor driven to
      // zero, say) gets zero variance instead of poisoning the others.
      const Eigen::Matrix<double, N, N> jtj = j.transpose() * j;
      out.covariance = jtj.completeOrthogonalDecomposition().pseudoInverse() * (cost / dof);
      return out;
    }
    j = jacobian(p, r);
  }
  std::ostringstream diag;
  diag << "iterations=" << opts.max_iterations << " cost=" << cost << " params=" << p.transpose();
  throw FitFailure("levenberg_marquardt: no convergence within iteration budget", diag.str());
}

}  // namespace shd

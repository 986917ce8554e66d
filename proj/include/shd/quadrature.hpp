#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <type_traits>

namespace shd {

template <typename Scalar>
struct GaussLegendreRule {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nodes;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1]. Nodes by Newton iteration on the
/// three-term Legendre recurrence, started from the Tricomi approximation.
template <typename Scalar = double>
GaussLegendreRule<Scalar> gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  GaussLegendreRule<Scalar> rule{decltype(rule.nodes)(n), decltype(rule.weights)(n)};
  const Scalar pi = std::numbers::pi_v<Scalar>;
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    Scalar x = std::cos(pi * (Scalar(i) + Scalar(0.75)) / (Scalar(n) + Scalar(0.5)));
    Scalar dp = 0;
    for (int iter = 0; iter < 100; ++iter) {
      Scalar p0 = 1, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const Scalar p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1;
      dp = n * (x * p1 - p0) / (x * x - 1);
      const Scalar step = p1 / dp;
      x -= step;
      if (std::abs(step) < Scalar(4) * std::numeric_limits<Scalar>::epsilon()) break;
    }
    // Derivative at the converged node.
    Scalar p0 = 1, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const Scalar p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = (n == 1) ? Scalar(1) : n * (x * p1 - p0) / (x * x - 1);
    const Scalar w = 2 / ((1 - x * x) * dp * dp);
    rule.nodes(i) = -x;
    rule.nodes(n - 1 - i) = x;
    rule.weights(i) = w;
    rule.weights(n - 1 - i) = w;
  }
  return rule;
}

/// Product rule over the spherical cap 0 <= theta <= theta_cap around +z:
/// Gauss-Legendre in cos(theta), periodic trapezoid in the azimuth.
/// `f(n_hat)` returns a fixed-size Eigen vector; the result integrates it
/// against dOmega.
template <typename Scalar, typename Integrand>
auto integrate_cap_fixed(Scalar theta_cap, int order, Integrand&& f) {
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  using Result = std::decay_t<decltype(f(Vec3{}))>;
  const auto rule = gauss_legendre<Scalar>(order);
  const int n_azimuth = 2 * order;
  const Scalar u_lo = std::cos(theta_cap);
  const Scalar half_span = (Scalar(1) - u_lo) / 2;
  const Scalar mid = (Scalar(1) + u_lo) / 2;
  const Scalar dphi = 2 * std::numbers::pi_v<Scalar> / n_azimuth;

  Result total = Result::Zero();
  for (int i = 0; i < order; ++i) {
    const Scalar u = mid + half_span * rule.nodes(i);
    const Scalar s = std::sqrt(std::max(Scalar(0), Scalar(1) - u * u));
    Result ring = Result::Zero();
    for (int j = 0; j < n_azimuth; ++j) {
      const Scalar phi = dphi * j;
      ring += f(Vec3(s * std::cos(phi), s * std::sin(phi), u));
    }
    total += (rule.weights(i) * half_span * dphi) * ring;
  }
  return total;
}

struct CapQuadratureOptions {
  double abs_tol = 1e-11;
  int min_order = 8;
  int max_order = 1024;
};

/// Order-escalating cap quadrature: doubles the order until two successive
/// estimates agree to `abs_tol` in every component.
template <typename Scalar, typename Integrand>
auto integrate_cap(Scalar theta_cap, Integrand&& f, const CapQuadratureOptions& opts = {}) {
  int order = opts.min_order;
  auto previous = integrate_cap_fixed(theta_cap, order, f);
  while (order < opts.max_order) {
    order *= 2;
    auto current = integrate_cap_fixed(theta_cap, order, f);
    if ((current - previous).cwiseAbs().maxCoeff() < opts.abs_tol) return current;
    previous = current;
  }
  throw std::runtime_error("integrate_cap: no convergence at max order");
}

}  // namespace shd

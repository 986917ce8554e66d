#pragma once

// Test-only reference routines, independent of the library's quadrature
// and fitting code paths.

#include <cmath>
#include <functional>
#include <numbers>

namespace shd::oracle {

inline double adaptive_simpson_impl(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                                    double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15;
  return adaptive_simpson_impl(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         adaptive_simpson_impl(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return adaptive_simpson_impl(f, a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), tol, 40);
}

// Azimuth-integrated dipole pattern for polarization perpendicular to the
// cap axis: integral over phi of (3/8pi)(1 - sin^2 t sin^2 phi) = (3/8)(1 + cos^2 t).
inline double perpendicular_ring_weight(double theta) {
  const double c = std::cos(theta);
  return 3.0 / 8.0 * (1.0 + c * c) * std::sin(theta);
}

// Fringe moments a(q), b(q) and db/dq at q by 1-D adaptive quadrature in theta.
inline double cos_moment(double theta_d, double kq) {
  return adaptive_simpson([&](double t) { return perpendicular_ring_weight(t) * std::cos(kq * std::cos(t)); }, 0,
                          theta_d);
}
inline double sin_moment(double theta_d, double kq) {
  return adaptive_simpson([&](double t) { return perpendicular_ring_weight(t) * std::sin(kq * std::cos(t)); }, 0,
                          theta_d);
}
// (1/kappa) db/dq at q = 0.
inline double sin_moment_slope(double theta_d) {
  return adaptive_simpson([&](double t) { return perpendicular_ring_weight(t) * std::cos(t); }, 0, theta_d);
}

}  // namespace shd::oracle

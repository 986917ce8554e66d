#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "shd/constants.hpp"
#include "shd/error.hpp"

// Radial secular modes of the Paul trap with the position feedback spring
// 1/2 m alpha^2 (x + y)^2 acting along the detection axis q = (x + y)/sqrt2.

namespace shd {

struct TrapConfig {
  double omega_x = constants::two_pi * 2.1e3;  // rad/s
  double omega_y = constants::two_pi * 3.2e3;
  double omega_z = constants::two_pi * 1.1e3;
  double drive_freq_hz = 11e3;
  double stability_q = 0.8;
  double mass_kg = 2.0e-17;

  void validate() const;
};

template <typename Scalar = double>
struct ModeSolution {
  using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
  Scalar nu_x = 0;  // lower eigenfrequency [rad/s]
  Scalar nu_y = 0;  // higher eigenfrequency [rad/s]
  Vec2 eigvec_x = Vec2::UnitX();
  Vec2 eigvec_y = Vec2::UnitY();
  Scalar theta_fb = std::numbers::pi_v<Scalar> / 4;  // angle between y' and q
  Scalar spring_gain = 0;                            // alpha [rad/s]
};

/// Potential matrix [[wx^2 + a^2, a^2], [a^2, wy^2 + a^2]] (units of m/2).
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 2> spring_potential_matrix(Scalar omega_x, Scalar omega_y, Scalar alpha) {
  const Scalar a2 = alpha * alpha;
  Eigen::Matrix<Scalar, 2, 2> m;
  m << omega_x * omega_x + a2, a2, a2, omega_y * omega_y + a2;
  return m;
}

/// Unnormalized eigenvector (c, 1) with c = (nu^2 - wy^2)/alpha^2 - 1.
/// Singular at alpha = 0; radial_modes uses an equivalent cancellation-free form.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> closed_form_eigenvector(Scalar nu_sq, Scalar omega_y, Scalar alpha) {
  const Scalar a2 = alpha * alpha;
  if (a2 == Scalar(0)) throw DivisionError("closed_form_eigenvector: alpha = 0");
  return {(nu_sq - omega_y * omega_y) / a2 - Scalar(1), Scalar(1)};
}

namespace detail {
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> canonical_direction(Eigen::Matrix<Scalar, 2, 1> v) {
  v.normalize();
  if (v(1) < Scalar(0) || (v(1) == Scalar(0) && v(0) < Scalar(0))) v = -v;
  return v;
}
}  // namespace detail

/// Feedback-modified eigenfrequencies, unit eigenvectors (second component
/// positive) and the rotation angle theta_FB of the upper mode against q.
template <typename Scalar>
ModeSolution<Scalar> radial_modes(Scalar omega_x, Scalar omega_y, Scalar alpha) {
  if (!(alpha >= Scalar(0))) throw InvalidArgument("radial_modes: alpha must be non-negative");
  if (!(omega_x > Scalar(0) && omega_y > Scalar(0))) throw InvalidArgument("radial_modes: frequencies must be positive");
  using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
  const Scalar a2 = alpha * alpha;
  const Scalar wx2 = omega_x * omega_x;
  const Scalar wy2 = omega_y * omega_y;
  const Scalar split = wy2 - wx2;
  const Scalar disc = std::sqrt(Scalar(4) * a2 * a2 + split * split);

  ModeSolution<Scalar> sol;
  sol.spring_gain = alpha;
  const Scalar upper_sq = a2 + (wx2 + wy2 + disc) / 2;
  const Scalar det = wx2 * wy2 + a2 * (wx2 + wy2);
  sol.nu_y = std::sqrt(upper_sq);
  sol.nu_x = std::sqrt(det / upper_sq);

  // Upper eigenvector from whichever row avoids cancellation.
  Vec2 upper;
  if (split > Scalar(0)) {
    upper = Vec2(a2, (split + disc) / 2);
  } else if (split < Scalar(0)) {
    upper = Vec2((disc - split) / 2, a2);
  } else {
    upper = (a2 > Scalar(0)) ? Vec2(Scalar(1), Scalar(1)) : Vec2(Scalar(0), Scalar(1));
  }
  sol.eigvec_y = detail::canonical_direction(upper);
  sol.eigvec_x = detail::canonical_direction(Vec2(-sol.eigvec_y(1), sol.eigvec_y(0)));

  const Vec2 q_hat = Vec2(Scalar(1), Scalar(1)) / std::sqrt(Scalar(2));
  const Scalar c = std::min(Scalar(1), std::abs(sol.eigvec_y.dot(q_hat)));
  sol.theta_fb = std::acos(c);
  return sol;
}

/// Spring gain recovered from measured eigenfrequencies by trace inversion.
template <typename Scalar>
Scalar spring_gain_from_frequencies(Scalar nu_x, Scalar nu_y, Scalar omega_x, Scalar omega_y) {
  const Scalar excess = nu_x * nu_x + nu_y * nu_y - omega_x * omega_x - omega_y * omega_y;
  const Scalar scale = omega_x * omega_x + omega_y * omega_y;
  if (excess < -Scalar(1e-12) * scale)
    throw InconsistentSpectrum("spring_gain_from_frequencies: nu_x'^2 + nu_y'^2 below bare trace");
  return std::sqrt(std::max(Scalar(0), excess) / Scalar(2));
}

/// S_qq = S_x'x' sin^2(theta) + S_y'y' cos^2(theta), pointwise.
template <typename DerivedX, typename DerivedY>
Eigen::Matrix<typename DerivedX::Scalar, Eigen::Dynamic, 1> project_psd(const Eigen::MatrixBase<DerivedX>& s_xx,
                                                                        const Eigen::MatrixBase<DerivedY>& s_yy,
                                                                        typename DerivedX::Scalar theta_fb) {
  if (s_xx.size() != s_yy.size()) throw InvalidArgument("project_psd: frequency grids differ");
  const auto s = std::sin(theta_fb);
  const auto c = std::cos(theta_fb);
  return (s * s) * s_xx + (c * c) * s_yy;
}

/// T_y' = m nu^2 <q^2> / (k_B cos^2 theta_FB).
double mode_temperature(double mass_kg, double nu_y, double variance_q, double theta_fb);

/// Bose occupation 1 / (exp(hbar omega / k_B T) - 1).
double phonon_occupation(double temperature_k, double omega);

}  // namespace shd

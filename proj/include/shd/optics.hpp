#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>

#include "shd/constants.hpp"
#include "shd/error.hpp"

// Self-homodyne interference of a dipolar scatterer with its mirror image:
// fringe amplitude and phase, detector sensitivities, collection and
// detection efficiencies, scattered power, imprecision and back-action.
//
// Intensities are normalized so that the total dipole-radiated power is 1.

namespace shd {

struct OpticalSetup {
  double wavelength_m = 780e-9;
  double half_aperture_rad = std::asin(0.18);
  double mirror_reflectivity = 1.0;  // field reflectivity rho
  double visibility = 0.7;
  double path_efficiency = 0.9;
  double detector_qe = 0.82;
  double focal_length_m = 25e-3;
  double mirror_distance_m = 100e-3;
  Eigen::Vector3d polarization_axis = Eigen::Vector3d::UnitY();
  double axis_projection_angle_rad = constants::pi / 4;

  double numerical_aperture() const { return std::sin(half_aperture_rad); }
  void set_numerical_aperture(double na);
  double mirror_path_m() const { return focal_length_m + mirror_distance_m; }
  /// 1 / cos^2 of the angle between the detection axis and a motional axis.
  double projection_factor() const;

  /// Throws InvalidArgument on any violated field invariant.
  void validate() const;

  static OpticalSetup with_numerical_aperture(double na);
};

struct Scatterer {
  double radius_m = 150e-9;
  double refractive_index = 1.45;
  double mass_kg = 2.0e-17;
  Eigen::Vector3d position_m = Eigen::Vector3d::Zero();

  /// Dipole approximation holds for r < lambda / 2. Violation is allowed.
  bool rayleigh_valid(double wavelength_m) const { return radius_m < wavelength_m / 2; }
  void validate() const;
};

struct Beam {
  double power_w = 0.430;
  double waist_m = 0.29e-3;  // field 1/e radius
  double wavelength_m = 780e-9;
  Eigen::Vector3d polarization_axis = Eigen::Vector3d::UnitZ();
};

struct FringeState {
  double amplitude = 0;  // A = 2 rho sqrt(a^2 + b^2)
  double phase = 0;      // atan2(b, a)
  double cos_moment = 0;  // a
  double sin_moment = 0;  // b
};

namespace detail {
inline void require_unit(const Eigen::Vector3d& v, const char* what) {
  if (std::abs(v.norm() - 1.0) > 1e-12) throw InvalidArgument(std::string(what) + " must be a unit vector");
}
}  // namespace detail

/// Differential dipole-radiated power per steradian, (3/8pi)(1 - |eps.n|^2).
template <typename DerivedN, typename DerivedE>
typename DerivedN::Scalar dipole_density(const Eigen::MatrixBase<DerivedN>& n_hat,
                                         const Eigen::MatrixBase<DerivedE>& eps_hat) {
  using Scalar = typename DerivedN::Scalar;
  constexpr Scalar tol = Scalar(1e-12);
  if (std::abs(n_hat.norm() - Scalar(1)) > tol || std::abs(eps_hat.norm() - Scalar(1)) > tol)
    throw InvalidArgument("dipole_density: inputs must be unit vectors");
  const Scalar proj = n_hat.dot(eps_hat);
  return Scalar(3) / (Scalar(8) * std::numbers::pi_v<Scalar>) * (Scalar(1) - proj * proj);
}

/// Cos/sin moments of the interference phase over the collection cap for a
/// scatterer displaced by q along the cap axis.
FringeState fringe_state(const OpticalSetup& setup, double q_m);

/// Derivatives (da/dq, db/dq) of the fringe moments.
Eigen::Vector2d fringe_moment_derivatives(const OpticalSetup& setup, double q_m);

/// Position-dependent part of the detected intensity, -A cos(4 pi R_s / lambda + phi).
double interference_intensity(const OpticalSetup& setup, double q_m, double mirror_path_m);
inline double interference_intensity(const OpticalSetup& setup, double q_m) {
  return interference_intensity(setup, q_m, setup.mirror_path_m());
}

/// Mirror path R_s = (lambda / 8)(2n + 1) of the n-th maximum-slope lock point.
double lock_point_path(double wavelength_m, int setpoint_index);

/// chi_m = 4 pi A / lambda, A evaluated at q.
double mirror_sensitivity(const OpticalSetup& setup, double q_m = 0.0);

enum class SensitivityMode { exact, expansion };

/// Maximum |dI/dq| at the mid-fringe lock point. `exact` maximizes the
/// quadrature derivative over q; `expansion` is the second-order series.
double particle_sensitivity(const OpticalSetup& setup, SensitivityMode mode = SensitivityMode::exact);

/// Relative mirror/particle sensitivity mismatch 2(chi_m - chi_p)/(chi_m + chi_p).
double calibration_deviation(const OpticalSetup& setup);
double calibration_deviation(double numerical_aperture);

/// Fraction of dipole power inside the cap of half-angle theta_d around +z.
double collection_efficiency(double theta_d, const Eigen::Vector3d& polarization_axis = Eigen::Vector3d::UnitY());

double rayleigh_scattered_power(const Beam& beam, const Scatterer& particle);
double total_power_from_collected(double collected_power_w, double collection_eff);

/// Angular factor (128 - 90 cos t - 35 cos 3t - 3 cos 5t) / 128.
double detection_angular_factor(double theta_d);
double detection_efficiency(const OpticalSetup& setup);

/// Position imprecision PSD [m^2/Hz], g * 5 hbar c lambda / (8 pi eta P).
double imprecision(double scattered_power_w, double detection_eff, double wavelength_m,
                   double projection_factor = 1.0);

/// One-sided radiation-pressure shot-noise force PSD [N^2/Hz].
double backaction_psd(double scattered_power_w, double wavelength_m);

/// Maximum fringe slope S = 4 pi A / lambda, in the units of A per metre.
double fringe_slope(double amplitude, double wavelength_m);

struct PositionSeries {
  Eigen::VectorXd q_m;
  double peak_excursion_m = 0;
  bool out_of_linear_range = false;  // excursion above lambda / 4
};

PositionSeries volts_to_meters(const Eigen::Ref<const Eigen::VectorXd>& volts, double volts_per_meter,
                               double wavelength_m);

}  // namespace shd

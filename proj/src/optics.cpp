#include "shd/optics.hpp"

#include <algorithm>

#include "shd/quadrature.hpp"

namespace shd {

namespace {

constexpr double kQuadTol = 1e-12;

void require_fraction(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument(std::string(what) + " must lie in [0, 1]");
}

// Maximizes a unimodal function on [lo, hi].
template <typename F>
double golden_section_max(F&& f, double lo, double hi, double x_tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = f(c), fd = f(d);
  while (hi - lo > x_tol) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = f(d);
    }
  }
  return std::max(fc, fd);
}

}  // namespace

void OpticalSetup::set_numerical_aperture(double na) {
  if (!(na > 0.0 && na <= 1.0)) throw InvalidArgument("numerical aperture must lie in (0, 1]");
  half_aperture_rad = std::asin(na);
}

OpticalSetup OpticalSetup::with_numerical_aperture(double na) {
  OpticalSetup s;
  s.set_numerical_aperture(na);
  return s;
}

double OpticalSetup::projection_factor() const {
  const double c = std::cos(axis_projection_angle_rad);
  if (c == 0.0) throw DivisionError("detection axis orthogonal to the motional axis");
  return 1.0 / (c * c);
}

void OpticalSetup::validate() const {
  if (!(wavelength_m > 0.0)) throw InvalidArgument("wavelength must be positive");
  if (!(half_aperture_rad > 0.0 && half_aperture_rad <= constants::pi / 2))
    throw InvalidArgument("half aperture must lie in (0, pi/2]");
  require_fraction(mirror_reflectivity, "mirror reflectivity");
  require_fraction(visibility, "visibility");
  require_fraction(path_efficiency, "path efficiency");
  require_fraction(detector_qe, "detector quantum efficiency");
  detail::require_unit(polarization_axis, "polarization axis");
  if (!(mirror_path_m() >= 0.0)) throw InvalidArgument("mirror path f + d must be non-negative");
}

void Scatterer::validate() const {
  if (!(radius_m > 0.0)) throw InvalidArgument("radius must be positive");
  if (!(refractive_index > 1.0)) throw InvalidArgument("refractive index must exceed 1");
  if (!(mass_kg > 0.0)) throw InvalidArgument("mass must be positive");
}

FringeState fringe_state(const OpticalSetup& setup, double q_m) {
  setup.validate();
  if (!(std::abs(q_m) < setup.wavelength_m)) throw InvalidArgument("fringe_state: |q| must be below one wavelength");
  const double kappa = 4.0 * constants::pi / setup.wavelength_m;
  const Eigen::Vector3d eps = setup.polarization_axis;
  const Eigen::Vector2d ab = integrate_cap(
      setup.half_aperture_rad,
      [&](const Eigen::Vector3d& n) {
        const double w = dipole_density(n, eps);
        const double arg = kappa * q_m * n.z();
        return Eigen::Vector2d(w * std::cos(arg), w * std::sin(arg));
      },
      CapQuadratureOptions{kQuadTol});
  FringeState s;
  s.cos_moment = ab(0);
  s.sin_moment = ab(1);
  s.amplitude = 2.0 * setup.mirror_reflectivity * ab.norm();
  s.phase = std::atan2(ab(1), ab(0));
  return s;
}

Eigen::Vector2d fringe_moment_derivatives(const OpticalSetup& setup, double q_m) {
  setup.validate();
  const double kappa = 4.0 * constants::pi / setup.wavelength_m;
  const Eigen::Vector3d eps = setup.polarization_axis;
  // Differentiated under the integral sign; kappa is pulled out so the
  // absolute tolerance applies to a dimensionless integrand.
  return kappa * integrate_cap(
                     setup.half_aperture_rad,
                     [&](const Eigen::Vector3d& n) {
                       const double w = dipole_density(n, eps) * n.z();
                       const double arg = kappa * q_m * n.z();
                       return Eigen::Vector2d(-w * std::sin(arg), w * std::cos(arg));
                     },
                     CapQuadratureOptions{kQuadTol});
}

double interference_intensity(const OpticalSetup& setup, double q_m, double mirror_path_m) {
  const FringeState s = fringe_state(setup, q_m);
  return -s.amplitude * std::cos(4.0 * constants::pi * mirror_path_m / setup.wavelength_m + s.phase);
}

double lock_point_path(double wavelength_m, int setpoint_index) {
  return wavelength_m / 8.0 * (2.0 * setpoint_index + 1.0);
}

double mirror_sensitivity(const OpticalSetup& setup, double q_m) {
  return 4.0 * constants::pi * fringe_state(setup, q_m).amplitude / setup.wavelength_m;
}

double particle_sensitivity(const OpticalSetup& setup, SensitivityMode mode) {
  if (mode == SensitivityMode::expansion) {
    const double t = setup.half_aperture_rad;
    return mirror_sensitivity(setup) * (1.0 - t * t / 4.0);
  }
  // At the n = 0 lock point I(q) = 2 rho b(q), so dI/dq = 2 rho b'(q).
  const double rho = setup.mirror_reflectivity;
  if (rho == 0.0) return 0.0;
  const double lambda = setup.wavelength_m;
  auto slope = [&](double q) { return std::abs(2.0 * rho * fringe_moment_derivatives(setup, q)(1)); };
  return golden_section_max(slope, -lambda / 8.0, lambda / 8.0, 1e-6 * lambda);
}

double calibration_deviation(const OpticalSetup& setup) {
  const double chi_m = mirror_sensitivity(setup);
  const double chi_p = particle_sensitivity(setup, SensitivityMode::exact);
  if (chi_m + chi_p == 0.0) throw DivisionError("calibration_deviation: zero sensitivities");
  return 2.0 * (chi_m - chi_p) / (chi_m + chi_p);
}

double calibration_deviation(double numerical_aperture) {
  if (!(numerical_aperture > 0.0 && numerical_aperture < 1.0))
    throw InvalidArgument("calibration_deviation: NA must lie in (0, 1)");
  OpticalSetup setup;
  setup.set_numerical_aperture(numerical_aperture);
  return calibration_deviation(setup);
}

double collection_efficiency(double theta_d, const Eigen::Vector3d& polarization_axis) {
  if (!(theta_d >= 0.0 && theta_d <= constants::pi)) throw InvalidArgument("collection angle must lie in [0, pi]");
  detail::require_unit(polarization_axis, "polarization axis");
  if (theta_d == 0.0) return 0.0;
  return integrate_cap(
      theta_d,
      [&](const Eigen::Vector3d& n) { return Eigen::Matrix<double, 1, 1>(dipole_density(n, polarization_axis)); },
      CapQuadratureOptions{kQuadTol})(0);
}

double rayleigh_scattered_power(const Beam& beam, const Scatterer& particle) {
  particle.validate();
  if (!(beam.waist_m > 0.0)) throw InvalidArgument("beam waist must be positive");
  if (!(beam.power_w >= 0.0)) throw InvalidArgument("beam power must be non-negative");
  using constants::epsilon0;
  using constants::pi;
  const double k = 2.0 * pi / beam.wavelength_m;
  const double n2 = particle.refractive_index * particle.refractive_index;
  const double r = particle.radius_m;
  const double polarizability = 4.0 * pi * r * r * r * epsilon0 * (n2 - 1.0) / (n2 + 2.0);
  const double amp = polarizability * k * k / (4.0 * pi * epsilon0);
  const double cross_section = 8.0 * pi / 3.0 * amp * amp;
  const double intensity = 2.0 * beam.power_w / (pi * beam.waist_m * beam.waist_m);
  return intensity * cross_section;
}

double total_power_from_collected(double collected_power_w, double collection_eff) {
  if (collection_eff == 0.0) throw DivisionError("total_power_from_collected: zero collection efficiency");
  if (!(collection_eff > 0.0 && collection_eff <= 1.0)) throw InvalidArgument("collection efficiency must lie in (0, 1]");
  return collected_power_w / collection_eff;
}

double detection_angular_factor(double theta_d) {
  return (128.0 - 90.0 * std::cos(theta_d) - 35.0 * std::cos(3.0 * theta_d) - 3.0 * std::cos(5.0 * theta_d)) / 128.0;
}

double detection_efficiency(const OpticalSetup& setup) {
  setup.validate();
  return setup.visibility * setup.visibility * setup.path_efficiency * setup.detector_qe *
         detection_angular_factor(setup.half_aperture_rad);
}

double imprecision(double scattered_power_w, double detection_eff, double wavelength_m, double projection_factor) {
  if (scattered_power_w == 0.0 || detection_eff == 0.0) throw DivisionError("imprecision: zero power or efficiency");
  if (!(scattered_power_w > 0.0 && detection_eff > 0.0)) throw InvalidArgument("imprecision: negative power or efficiency");
  if (!(projection_factor >= 1.0)) throw InvalidArgument("imprecision: projection factor must be >= 1");
  using namespace constants;
  return projection_factor * 5.0 * hbar * c * wavelength_m / (8.0 * pi * detection_eff * scattered_power_w);
}

double backaction_psd(double scattered_power_w, double wavelength_m) {
  if (!(scattered_power_w >= 0.0)) throw InvalidArgument("backaction_psd: negative power");
  using namespace constants;
  const double k = 2.0 * pi / wavelength_m;
  return 0.8 * hbar * k * scattered_power_w / c;
}

double fringe_slope(double amplitude, double wavelength_m) {
  if (!(wavelength_m > 0.0)) throw InvalidArgument("wavelength must be positive");
  return 4.0 * constants::pi * amplitude / wavelength_m;
}

PositionSeries volts_to_meters(const Eigen::Ref<const Eigen::VectorXd>& volts, double volts_per_meter,
                               double wavelength_m) {
  if (volts_per_meter == 0.0) throw DivisionError("volts_to_meters: zero fringe slope");
  PositionSeries out;
  out.q_m = volts / volts_per_meter;
  if (out.q_m.size() > 0) {
    const double mean = out.q_m.mean();
    out.peak_excursion_m = (out.q_m.array() - mean).abs().maxCoeff();
  }
  out.out_of_linear_range = out.peak_excursion_m > wavelength_m / 4.0;
  return out;
}

}  // namespace shd

#include "shd/modes.hpp"

namespace shd {

void TrapConfig::validate() const {
  if (!(omega_x > 0 && omega_y > 0 && omega_z > 0 && drive_freq_hz > 0))
    throw InvalidArgument("trap frequencies must be positive");
  if (!(stability_q > 0 && stability_q < 1)) throw InvalidArgument("stability parameter q must lie in (0, 1)");
  if (!(mass_kg > 0)) throw InvalidArgument("mass must be positive");
}

double mode_temperature(double mass_kg, double nu_y, double variance_q, double theta_fb) {
  const double c = std::cos(theta_fb);
  if (c * c < 1e-20) throw DivisionError("mode_temperature: detection axis orthogonal to the mode");
  return mass_kg * nu_y * nu_y * variance_q / (constants::k_B * c * c);
}

double phonon_occupation(double temperature_k, double omega) {
  if (temperature_k < 0) throw InvalidArgument("phonon_occupation: negative temperature");
  if (temperature_k == 0) return 0.0;
  return 1.0 / std::expm1(constants::hbar * omega / (constants::k_B * temperature_k));
}

}  // namespace shd

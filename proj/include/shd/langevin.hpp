#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "shd/modes.hpp"
#include "shd/optics.hpp"

// Time-domain model of the two radial secular modes under gas damping,
// thermal and back-action force noise, and measurement-based feedback along
// the self-homodyne (q) or forward (p) detection axis, together with the
// detector signals those measurements produce.

namespace shd {

struct Bath {
  double pressure_mbar = 2e-8;
  double temperature_k = 300.0;
  double anchor_pressure_mbar = 1e-2;
  double anchor_gamma = constants::two_pi * 4.3;  // rad/s at the anchor pressure

  void validate() const;
};

/// Gas damping, linear in pressure through the anchor point.
double gas_damping_rate(const Bath& bath);

/// One-sided thermal force PSD 4 k_B T gamma m [N^2/Hz].
double thermal_force_psd(const Bath& bath, double mass_kg);

enum class DetectionChannel { self_homodyne, forward };

struct FeedbackConfig {
  double cooling_rate = 0;  // gamma_fb [rad/s]
  double spring_gain = 0;   // alpha [rad/s]
  double loop_delay_s = 0;
  double filter_lo_hz = 100.0;
  double filter_hi_hz = 10e3;
  DetectionChannel source = DetectionChannel::self_homodyne;

  void validate() const;
};

/// Response of the discrete feedback chain (difference, high-pass, low-pass,
/// delay) at angular frequency omega, divided by the ideal derivative i omega.
/// Equals 1 for an ideal differentiator.
std::complex<double> controller_response(const FeedbackConfig& fb, double omega, double dt_s);

/// Damping rate the controller actually delivers to a mode at omega,
/// gamma_fb Re(controller_response).
double effective_cooling_rate(const FeedbackConfig& fb, double omega, double dt_s);

enum class MirrorMode { locked, ramp };

struct DetectorModel {
  double imprecision_self = 3.0e-24;                       // m^2/Hz along q
  double imprecision_forward = 3.0e-24 * 6309.573444801933;  // 38 dB above, along p
  bool fringe_nonlinearity = true;
  MirrorMode mirror_mode = MirrorMode::locked;
  double ramp_rate_m_per_s = 0;
  int lock_setpoint_index = 0;
  double gain_volts = 1.0;               // volts per unit normalized intensity
  double forward_gain_v_per_m = 1.0e6;

  void validate() const;
  /// Sign of dI/dq at the configured lock point, (-1)^n.
  int lock_sign() const { return (lock_setpoint_index % 2 == 0) ? 1 : -1; }
};

struct SimConfig {
  double duration_s = 1.0;
  double dt_s = 5e-6;
  std::uint64_t seed = 1;
  double backaction_psd = 0;  // N^2/Hz per axis, one-sided
  // Initial state: thermal at `initial_temperature_k` (negative: bath
  // temperature) unless `thermal_initial_state` is false.
  bool thermal_initial_state = true;
  double initial_temperature_k = -1.0;
  Eigen::Vector2d initial_position_m = Eigen::Vector2d::Zero();
  Eigen::Vector2d initial_velocity_m_per_s = Eigen::Vector2d::Zero();
  // Optional deterministic tone (micromotion stand-in), acceleration amplitude.
  double drive_accel_m_per_s2 = 0;
  double drive_freq_hz = 0;  // 0: use the trap drive frequency
  Eigen::Vector2d drive_direction = Eigen::Vector2d(1, 1).normalized();
};

struct Trajectory {
  // mirror_d: mirror displacement from the lock point [m].
  Eigen::VectorXd t, x, y, q, volts_self, volts_fwd, mirror_d;
  std::uint64_t seed = 0;
  double dt_s = 0;
  bool lock_lost = false;
  Eigen::Index lock_loss_samples = 0;

  Eigen::Index size() const { return t.size(); }
  double sample_rate_hz() const { return 1.0 / dt_s; }
};

/// Self-homodyne response I(q, R_s) for a fixed optical setup. The fringe
/// moments are tabulated on |q| <= 0.9 lambda and interpolated with cubic
/// Hermite segments using the exact derivatives; outside the table the
/// second-order series is used.
class FringeResponse {
 public:
  FringeResponse(const OpticalSetup& setup, bool nonlinear);

  double intensity(double q_m, double mirror_path_m) const;
  /// dI/dq at q = 0 and the given mirror path.
  double slope(double mirror_path_m) const;
  double amplitude() const { return amplitude_; }
  const OpticalSetup& setup() const { return setup_; }
  bool nonlinear() const { return nonlinear_; }

 private:
  Eigen::Vector2d moments(double q_m) const;

  OpticalSetup setup_;
  bool nonlinear_;
  double amplitude_ = 0;
  double q_step_ = 0;
  double q_max_ = 0;
  Eigen::Vector2d moments0_;
  Eigen::Vector2d derivs0_;
  std::vector<Eigen::Vector4d> table_;  // (a, b, a', b')
};

/// Position-referred white noise: per-sample standard deviation
/// sqrt(S / (2 dt)) for one-sided PSD S.
double white_noise_sigma(double one_sided_psd, double dt_s);
Eigen::VectorXd white_noise(double one_sided_psd, double dt_s, Eigen::Index n, std::mt19937_64& rng);

/// Integrates m x_i'' = -m w_i^2 x_i - m gamma x_i' + F_th + F_ba + F_fb (+ tone)
/// with a kick / exact-rotation / Ornstein-Uhlenbeck splitting. Bit-exact for
/// a given (inputs, seed).
Trajectory simulate(const TrapConfig& trap, const Bath& bath, const FeedbackConfig& fb, const DetectorModel& det,
                    const OpticalSetup& setup, const SimConfig& sim);
/// Same, reusing a prebuilt response (its setup and nonlinearity flag win
/// over the detector's).
Trajectory simulate(const TrapConfig& trap, const Bath& bath, const FeedbackConfig& fb, const DetectorModel& det,
                    const FringeResponse& response, const SimConfig& sim);

struct DetectorSeries {
  Eigen::VectorXd volts;
  Eigen::VectorXd mirror_d;
};

/// Detector output for a given q(t) sampled every dt.
DetectorSeries synthesize_detector(const Eigen::Ref<const Eigen::VectorXd>& q_m, double dt_s,
                                   const OpticalSetup& setup, const DetectorModel& det, std::uint64_t seed);

struct Calibration {
  double amplitude_volts = 0;
  double volts_per_meter = 0;  // 4 pi A_volts / lambda
  double fringes_spanned = 0;
};

/// Sinusoid regression of the self-homodyne channel against the mirror
/// position of a ramp trajectory.
Calibration run_calibration(const Trajectory& ramp, const OpticalSetup& setup);
Calibration run_calibration(const Eigen::Ref<const Eigen::VectorXd>& volts,
                            const Eigen::Ref<const Eigen::VectorXd>& mirror_d, double wavelength_m);

/// Least-squares amplitude of the component at `freq_hz`.
double sinusoid_amplitude(const Eigen::Ref<const Eigen::VectorXd>& series, double sample_rate_hz, double freq_hz);

void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& is);

}  // namespace shd

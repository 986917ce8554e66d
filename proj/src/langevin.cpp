#include "shd/langevin.hpp"

#include <array>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace shd {

void Bath::validate() const {
  if (!(pressure_mbar >= 0)) throw InvalidArgument("bath pressure must be non-negative");
  if (!(temperature_k >= 0)) throw InvalidArgument("bath temperature must be non-negative");
  if (!(anchor_pressure_mbar > 0)) throw InvalidArgument("damping anchor pressure must be positive");
  if (!(anchor_gamma >= 0)) throw InvalidArgument("damping anchor rate must be non-negative");
}

double gas_damping_rate(const Bath& bath) {
  if (bath.pressure_mbar < 0) throw InvalidArgument("gas_damping_rate: negative pressure");
  bath.validate();
  return bath.anchor_gamma * (bath.pressure_mbar / bath.anchor_pressure_mbar);
}

double thermal_force_psd(const Bath& bath, double mass_kg) {
  return 4.0 * constants::k_B * bath.temperature_k * gas_damping_rate(bath) * mass_kg;
}

void FeedbackConfig::validate() const {
  if (!(cooling_rate >= 0)) throw InvalidArgument("feedback cooling rate must be non-negative");
  if (!(spring_gain >= 0)) throw InvalidArgument("feedback spring gain must be non-negative");
  if (!(loop_delay_s >= 0)) throw InvalidArgument("loop delay must be non-negative");
  if (!(filter_lo_hz >= 0 && filter_lo_hz < filter_hi_hz)) throw InvalidArgument("filter band must satisfy 0 <= f_lo < f_hi");
}

void DetectorModel::validate() const {
  if (!(imprecision_self > 0 && imprecision_forward > 0)) throw InvalidArgument("channel imprecision must be positive");
  if (!(gain_volts != 0 && forward_gain_v_per_m != 0)) throw InvalidArgument("detector gains must be non-zero");
}

std::complex<double> controller_response(const FeedbackConfig& fb, double omega, double dt_s) {
  fb.validate();
  if (!(omega > 0 && dt_s > 0)) throw InvalidArgument("controller_response: omega and dt must be positive");
  using cd = std::complex<double>;
  const cd zinv = std::exp(cd(0, -omega * dt_s));
  const double wl = constants::two_pi * fb.filter_lo_hz * dt_s;
  const double wh = constants::two_pi * fb.filter_hi_hz * dt_s;
  const cd diff = (1.0 - zinv) / dt_s;
  const cd hp = 2.0 / (2.0 + wl) * (1.0 - zinv) / (1.0 - (2.0 - wl) / (2.0 + wl) * zinv);
  const cd lp = wh / (2.0 + wh) * (1.0 + zinv) / (1.0 - (2.0 - wh) / (2.0 + wh) * zinv);
  const auto delay = static_cast<double>(std::llround(fb.loop_delay_s / dt_s));
  return diff * hp * lp * std::pow(zinv, delay) / cd(0, omega);
}

double effective_cooling_rate(const FeedbackConfig& fb, double omega, double dt_s) {
  return fb.cooling_rate * controller_response(fb, omega, dt_s).real();
}

// ---------------------------------------------------------------------------

FringeResponse::FringeResponse(const OpticalSetup& setup, bool nonlinear) : setup_(setup), nonlinear_(nonlinear) {
  setup_.validate();
  const FringeState s0 = fringe_state(setup_, 0.0);
  moments0_ = Eigen::Vector2d(s0.cos_moment, s0.sin_moment);
  derivs0_ = fringe_moment_derivatives(setup_, 0.0);
  amplitude_ = s0.amplitude;
  if (!nonlinear_) return;

  const double lambda = setup_.wavelength_m;
  constexpr int half = 180;
  q_max_ = 0.9 * lambda;
  q_step_ = q_max_ / half;
  table_.reserve(2 * half + 1);
  for (int i = -half; i <= half; ++i) {
    const double q = i * q_step_;
    const FringeState s = fringe_state(setup_, q);
    const Eigen::Vector2d d = fringe_moment_derivatives(setup_, q);
    table_.emplace_back(s.cos_moment, s.sin_moment, d(0), d(1));
  }
}

Eigen::Vector2d FringeResponse::moments(double q) const {
  if (!nonlinear_) return Eigen::Vector2d(moments0_(0), moments0_(1) + derivs0_(1) * q);
  if (std::abs(q) >= q_max_) {
    const double t = setup_.half_aperture_rad;
    const double k = 4.0 * constants::pi / setup_.wavelength_m * (1.0 - t * t / 4.0);
    return moments0_(0) * Eigen::Vector2d(std::cos(k * q), std::sin(k * q));
  }
  const double pos = (q + q_max_) / q_step_;
  const auto i = std::min(static_cast<std::size_t>(pos), table_.size() - 2);
  const double u = pos - static_cast<double>(i);
  const Eigen::Vector4d& p0 = table_[i];
  const Eigen::Vector4d& p1 = table_[i + 1];
  const double u2 = u * u, u3 = u2 * u;
  const double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u;
  const double h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
  return h00 * p0.head<2>() + h10 * q_step_ * p0.tail<2>() + h01 * p1.head<2>() + h11 * q_step_ * p1.tail<2>();
}

double FringeResponse::intensity(double q_m, double mirror_path_m) const {
  const double psi = 4.0 * constants::pi * mirror_path_m / setup_.wavelength_m;
  const Eigen::Vector2d ab = moments(q_m);
  return -2.0 * setup_.mirror_reflectivity * (std::cos(psi) * ab(0) - std::sin(psi) * ab(1));
}

double FringeResponse::slope(double mirror_path_m) const {
  const double psi = 4.0 * constants::pi * mirror_path_m / setup_.wavelength_m;
  return -2.0 * setup_.mirror_reflectivity * (std::cos(psi) * derivs0_(0) - std::sin(psi) * derivs0_(1));
}

double white_noise_sigma(double one_sided_psd, double dt_s) { return std::sqrt(one_sided_psd / (2.0 * dt_s)); }

Eigen::VectorXd white_noise(double one_sided_psd, double dt_s, Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const double sigma = white_noise_sigma(one_sided_psd, dt_s);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = sigma * normal(rng);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Band-limited differentiator (first difference, then first-order bilinear
// high-pass at f_lo and low-pass at f_hi) feeding a proportional spring term.
class FeedbackController {
 public:
  FeedbackController(const FeedbackConfig& cfg, double mass_kg, double dt)
      : spring_(2.0 * mass_kg * cfg.spring_gain * cfg.spring_gain),
        damping_(2.0 * mass_kg * cfg.cooling_rate),
        dt_(dt),
        delay_(static_cast<std::size_t>(std::llround(cfg.loop_delay_s / dt))) {
    const double wl = constants::two_pi * cfg.filter_lo_hz * dt;
    const double wh = constants::two_pi * cfg.filter_hi_hz * dt;
    hp_gain_ = 2.0 / (2.0 + wl);
    hp_pole_ = (2.0 - wl) / (2.0 + wl);
    lp_gain_ = wh / (2.0 + wh);
    lp_pole_ = (2.0 - wh) / (2.0 + wh);
    active_ = cfg.cooling_rate > 0 || cfg.spring_gain > 0;
  }

  bool active() const { return active_; }

  // Scalar force along the feedback axis.
  double update(double u) {
    if (!active_) return 0.0;
    if (first_) {
      prev_u_ = u;
      first_ = false;
    }
    const double diff = (u - prev_u_) / dt_;
    prev_u_ = u;
    const double hp = hp_gain_ * (diff - hp_in_) + hp_pole_ * hp_out_;
    hp_in_ = diff;
    hp_out_ = hp;
    const double lp = lp_gain_ * (hp + lp_in_) + lp_pole_ * lp_out_;
    lp_in_ = hp;
    lp_out_ = lp;
    const double force = -(spring_ * u + damping_ * lp);
    if (delay_ == 0) return force;
    pending_.push_back(force);
    if (pending_.size() <= delay_) return 0.0;
    const double out = pending_.front();
    pending_.pop_front();
    return out;
  }

 private:
  double spring_, damping_, dt_;
  std::size_t delay_;
  double hp_gain_ = 0, hp_pole_ = 0, lp_gain_ = 0, lp_pole_ = 0;
  double prev_u_ = 0, hp_in_ = 0, hp_out_ = 0, lp_in_ = 0, lp_out_ = 0;
  bool first_ = true;
  bool active_ = false;
  std::deque<double> pending_;
};

// Mirror displacement from the lock point; zero when locked.
double mirror_displacement_at(const DetectorModel& det, double t) {
  return det.mirror_mode == MirrorMode::ramp ? det.ramp_rate_m_per_s * t : 0.0;
}

}  // namespace

Trajectory simulate(const TrapConfig& trap, const Bath& bath, const FeedbackConfig& fb, const DetectorModel& det,
                    const OpticalSetup& setup, const SimConfig& sim) {
  det.validate();
  return simulate(trap, bath, fb, det, FringeResponse(setup, det.fringe_nonlinearity), sim);
}

Trajectory simulate(const TrapConfig& trap, const Bath& bath, const FeedbackConfig& fb, const DetectorModel& det,
                    const FringeResponse& response, const SimConfig& sim) {
  const OpticalSetup& setup = response.setup();
  trap.validate();
  bath.validate();
  fb.validate();
  det.validate();
  if (!(sim.dt_s > 0 && sim.duration_s > 0)) throw InvalidArgument("simulate: dt and duration must be positive");
  if (!(sim.backaction_psd >= 0)) throw InvalidArgument("simulate: back-action PSD must be non-negative");
  const auto n_samples = static_cast<Eigen::Index>(std::llround(sim.duration_s / sim.dt_s));
  if (n_samples < 2) throw InvalidArgument("simulate: duration shorter than two steps");
  const double h = sim.dt_s;
  const double m = trap.mass_kg;

  FeedbackController controller(fb, m, h);
  if (controller.active()) {
    const auto modes = radial_modes(trap.omega_x, trap.omega_y, fb.spring_gain);
    const double f_max = std::max(modes.nu_y / constants::two_pi, fb.filter_hi_hz);
    if (h > 1.0 / (20.0 * f_max) * (1.0 + 1e-12))
      throw InvalidArgument("simulate: dt must not exceed 1 / (20 max(nu_y', f_hi))");
  }

  const double lambda = setup.wavelength_m;
  const double lock_path = lock_point_path(lambda, det.lock_setpoint_index);
  const double lock_slope = response.slope(lock_path);
  const double sigma_self = white_noise_sigma(det.imprecision_self, h);
  const double sigma_fwd = white_noise_sigma(det.imprecision_forward, h);
  const bool locked = det.mirror_mode == MirrorMode::locked;

  const double gamma = gas_damping_rate(bath);
  const double kT = constants::k_B * bath.temperature_k;
  const double ou_decay = std::exp(-gamma * h);
  const double ou_sigma = std::sqrt((1.0 - ou_decay * ou_decay) * kT / m);
  const double ba_sigma = std::sqrt(sim.backaction_psd * h / 2.0) / m;

  const Eigen::Array2d omega(trap.omega_x, trap.omega_y);
  const Eigen::Array2d rot_c = (omega * h / 2).cos();
  const Eigen::Array2d rot_s = (omega * h / 2).sin();

  const Eigen::Vector2d q_axis = Eigen::Vector2d(1, 1).normalized();
  const Eigen::Vector2d p_axis = Eigen::Vector2d(1, -1).normalized();
  const Eigen::Vector2d& fb_axis = fb.source == DetectionChannel::self_homodyne ? q_axis : p_axis;
  const double drive_freq = sim.drive_freq_hz > 0 ? sim.drive_freq_hz : trap.drive_freq_hz;
  const Eigen::Vector2d drive_dir = sim.drive_direction.normalized();

  std::mt19937_64 rng(sim.seed);
  std::normal_distribution<double> normal;

  Eigen::Array2d pos, vel;
  if (sim.thermal_initial_state) {
    const double t_init = sim.initial_temperature_k < 0 ? bath.temperature_k : sim.initial_temperature_k;
    const double kt0 = constants::k_B * t_init;
    for (int i = 0; i < 2; ++i) {
      pos(i) = std::sqrt(kt0 / (m * omega(i) * omega(i))) * normal(rng);
      vel(i) = std::sqrt(kt0 / m) * normal(rng);
    }
  } else {
    pos = sim.initial_position_m.array();
    vel = sim.initial_velocity_m_per_s.array();
  }

  Trajectory traj;
  traj.seed = sim.seed;
  traj.dt_s = h;
  for (auto* v : {&traj.t, &traj.x, &traj.y, &traj.q, &traj.volts_self, &traj.volts_fwd, &traj.mirror_d})
    v->resize(n_samples);

  struct Sample {
    double volts_self, volts_fwd, mirror_d;
  };
  // Measures the detectors at time t and returns the force to apply.
  auto measure = [&](double t, Sample& out) -> Eigen::Vector2d {
    const double q = (pos(0) + pos(1)) / std::sqrt(2.0);
    const double p = (pos(0) - pos(1)) / std::sqrt(2.0);
    const double disp = mirror_displacement_at(det, t);
    const double path = lock_path + disp;
    const double n_self = sigma_self * normal(rng);
    const double n_fwd = sigma_fwd * normal(rng);
    out.volts_self = det.gain_volts * (response.intensity(q, path) + lock_slope * n_self);
    out.volts_fwd = det.forward_gain_v_per_m * (p + n_fwd);
    out.mirror_d = disp;
    if (locked && std::abs(q) > lambda / 4.0) {
      traj.lock_lost = true;
      ++traj.lock_loss_samples;
    }
    const double u = fb.source == DetectionChannel::self_homodyne ? out.volts_self / (det.gain_volts * lock_slope)
                                                                  : out.volts_fwd / det.forward_gain_v_per_m;
    Eigen::Vector2d force = controller.update(u) * fb_axis;
    if (sim.drive_accel_m_per_s2 != 0.0)
      force += m * sim.drive_accel_m_per_s2 * std::cos(constants::two_pi * drive_freq * t) * drive_dir;
    return force;
  };
  auto rotate = [&]() {
    const Eigen::Array2d x0 = pos, v0 = vel;
    pos = x0 * rot_c + v0 / omega * rot_s;
    vel = -x0 * omega * rot_s + v0 * rot_c;
  };

  Sample current{};
  Eigen::Vector2d force = measure(0.0, current);
  for (Eigen::Index n = 0; n < n_samples; ++n) {
    const double t = n * h;
    traj.t(n) = t;
    traj.x(n) = pos(0);
    traj.y(n) = pos(1);
    traj.q(n) = (pos(0) + pos(1)) / std::sqrt(2.0);
    traj.volts_self(n) = current.volts_self;
    traj.volts_fwd(n) = current.volts_fwd;
    traj.mirror_d(n) = current.mirror_d;

    vel += (0.5 * h / m) * force.array();
    rotate();
    for (int i = 0; i < 2; ++i) {
      vel(i) = ou_decay * vel(i) + (ou_sigma > 0 ? ou_sigma * normal(rng) : 0.0);
      if (ba_sigma > 0) vel(i) += ba_sigma * normal(rng);
    }
    rotate();
    force = measure(t + h, current);
    vel += (0.5 * h / m) * force.array();
  }
  return traj;
}

DetectorSeries synthesize_detector(const Eigen::Ref<const Eigen::VectorXd>& q_m, double dt_s,
                                   const OpticalSetup& setup, const DetectorModel& det, std::uint64_t seed) {
  det.validate();
  const FringeResponse response(setup, det.fringe_nonlinearity);
  const double lock_path = lock_point_path(setup.wavelength_m, det.lock_setpoint_index);
  const double lock_slope = response.slope(lock_path);
  const double sigma = white_noise_sigma(det.imprecision_self, dt_s);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  DetectorSeries out{Eigen::VectorXd(q_m.size()), Eigen::VectorXd(q_m.size())};
  for (Eigen::Index i = 0; i < q_m.size(); ++i) {
    const double disp = mirror_displacement_at(det, i * dt_s);
    out.volts(i) = det.gain_volts * (response.intensity(q_m(i), lock_path + disp) + lock_slope * sigma * normal(rng));
    out.mirror_d(i) = disp;
  }
  return out;
}

Calibration run_calibration(const Eigen::Ref<const Eigen::VectorXd>& volts,
                            const Eigen::Ref<const Eigen::VectorXd>& mirror_d, double wavelength_m) {
  if (volts.size() != mirror_d.size() || volts.size() < 4) throw InvalidArgument("run_calibration: bad series");
  Calibration cal;
  const double travel = mirror_d.maxCoeff() - mirror_d.minCoeff();
  cal.fringes_spanned = travel / (wavelength_m / 2.0);
  if (cal.fringes_spanned < 1.0) throw InsufficientData("run_calibration: mirror travel spans less than one fringe");
  const double k = 4.0 * constants::pi / wavelength_m;
  Eigen::MatrixXd design(volts.size(), 3);
  design.col(0).setOnes();
  design.col(1) = (k * mirror_d.array()).cos();
  design.col(2) = (k * mirror_d.array()).sin();
  const Eigen::Vector3d c = design.colPivHouseholderQr().solve(volts);
  cal.amplitude_volts = std::hypot(c(1), c(2));
  cal.volts_per_meter = fringe_slope(cal.amplitude_volts, wavelength_m);
  return cal;
}

Calibration run_calibration(const Trajectory& ramp, const OpticalSetup& setup) {
  return run_calibration(ramp.volts_self, ramp.mirror_d, setup.wavelength_m);
}

double sinusoid_amplitude(const Eigen::Ref<const Eigen::VectorXd>& series, double sample_rate_hz, double freq_hz) {
  Eigen::MatrixXd design(series.size(), 3);
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    const double ph = constants::two_pi * freq_hz * i / sample_rate_hz;
    design(i, 0) = std::cos(ph);
    design(i, 1) = std::sin(ph);
    design(i, 2) = 1.0;
  }
  const Eigen::Vector3d c = design.colPivHouseholderQr().solve(series);
  return std::hypot(c(0), c(1));
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,x,y,q,volts_self,volts_fwd,mirror_d\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < traj.size(); ++i) {
    os << traj.t(i) << ',' << traj.x(i) << ',' << traj.y(i) << ',' << traj.q(i) << ',' << traj.volts_self(i) << ','
       << traj.volts_fwd(i) << ',' << traj.mirror_d(i) << '\n';
  }
}

Trajectory read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "t,x,y,q,volts_self,volts_fwd,mirror_d")
    throw InvalidArgument("read_trajectory_csv: unexpected header");
  std::vector<std::array<double, 7>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::array<double, 7> row{};
    const char* p = line.c_str();
    for (int c = 0; c < 7; ++c) {
      char* end = nullptr;
      row[static_cast<std::size_t>(c)] = std::strtod(p, &end);
      if (end == p) throw InvalidArgument("read_trajectory_csv: malformed row");
      p = (*end == ',') ? end + 1 : end;
    }
    rows.push_back(row);
  }
  Trajectory traj;
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd* cols[] = {&traj.t, &traj.x, &traj.y, &traj.q, &traj.volts_self, &traj.volts_fwd, &traj.mirror_d};
  for (auto* c : cols) c->resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 7; ++c) (*cols[c])(i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  if (n >= 2) traj.dt_s = traj.t(1) - traj.t(0);
  return traj;
}

}  // namespace shd

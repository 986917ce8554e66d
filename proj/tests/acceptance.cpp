// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <Eigen/Eigenvalues>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "shd/scenario.hpp"

#ifndef SHD_SCENARIO_DIR
#define SHD_SCENARIO_DIR "tests/scenarios"
#endif

using namespace shd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ScenarioConfig scenario(const char* name) { return load_config(std::filesystem::path(SHD_SCENARIO_DIR) / name); }

unsigned threads() { return std::max(1u, std::thread::hardware_concurrency()); }

Outcome calibration_deviation_bound() {
  const double d018 = calibration_deviation(0.18);
  double worst = 0, worst_na = 0;
  for (int i = 1; i <= 50; ++i) {
    const double na = 0.6 * i / 50.0;
    const double d = calibration_deviation(na);
    if (d > worst) worst = d, worst_na = na;
  }
  const bool pass = std::abs(d018 - 0.008) <= 0.001 && worst <= 0.10;
  return {pass, fmt("delta_chi(0.18)=%.6f, max over NA<=0.6 = %.4f at NA=%.3f (bound 0.10)", d018, worst, worst_na)};
}

Outcome collection() {
  const double eta = collection_efficiency(std::asin(0.18));
  return {std::abs(eta - 0.012) <= 0.001, fmt("eta_col=%.6f", eta)};
}

Outcome detection() {
  OpticalSetup s;  // V 0.7, 0.9, 0.82, arcsin 0.18
  const double eta = detection_efficiency(s);
  OpticalSetup ideal;
  ideal.half_aperture_rad = constants::pi / 2;
  ideal.visibility = ideal.path_efficiency = ideal.detector_qe = 1.0;
  // A closed aperture is not a valid setup; the efficiency vanishes through its angular factor.
  const double e0 = eta / detection_angular_factor(s.half_aperture_rad) * detection_angular_factor(0.0);
  const double e1 = detection_efficiency(ideal);
  const bool pass = std::abs(eta - 0.021) <= 0.004 && std::abs(e0) <= 1e-12 && std::abs(e1 - 1) <= 1e-12;
  return {pass, fmt("eta_det=%.5f, eta_det(0)=%.1e, eta_det(pi/2, lossless)-1=%.1e", eta, e0, e1 - 1)};
}

Outcome imprecision_scaling() {
  const double root = std::sqrt(imprecision(84e-9, 0.021, 780e-9));
  const std::vector<double> powers{10e-9, 20e-9, 40e-9, 84e-9, 160e-9, 320e-9, 640e-9};
  Eigen::MatrixXd design(powers.size(), 2);
  Eigen::VectorXd rhs(powers.size());
  for (std::size_t i = 0; i < powers.size(); ++i) {
    design(i, 0) = 1;
    design(i, 1) = std::log(powers[i]);
    rhs(i) = std::log(imprecision(powers[i], 0.021, 780e-9));
  }
  const double slope = design.colPivHouseholderQr().solve(rhs)(1);
  const bool pass = std::abs(root / 1.7e-12 - 1) <= 0.05 && std::abs(slope + 1) <= 1e-12;
  return {pass, fmt("sqrt(S_imp)=%.4e m/rtHz, log-log slope + 1 = %.1e", root, slope + 1)};
}

Outcome rayleigh() {
  Beam b;
  b.power_w = 0.430;
  b.waist_m = 0.29e-3;
  Scatterer p;
  p.radius_m = 150e-9;
  p.refractive_index = 1.45;
  const double pw = rayleigh_scattered_power(b, p);
  return {std::abs(pw / 0.09e-6 - 1) <= 0.5, fmt("P_scat=%.4e W (0.09 uW +- 50%%)", pw)};
}

Outcome eigen_analysis() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> freq(constants::two_pi * 100, constants::two_pi * 20e3);
  std::uniform_real_distribution<double> gain(0, constants::two_pi * 20e3);
  const Eigen::Vector2d q_hat = Eigen::Vector2d(1, 1).normalized();
  double worst = 0, worst_identity = 0;
  for (int i = 0; i < 1000; ++i) {
    const double wx = freq(rng), wy = freq(rng), a = gain(rng);
    const auto m = radial_modes(wx, wy, a);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(spring_potential_matrix(wx, wy, a));
    const Eigen::Vector2d nu = es.eigenvalues().cwiseSqrt();
    const Eigen::Vector2d vy = es.eigenvectors().col(1);
    const double th = std::acos(std::min(1.0, std::abs(vy.dot(q_hat))));
    worst = std::max({worst, std::abs(m.nu_x / nu(0) - 1), std::abs(m.nu_y / nu(1) - 1), std::abs(m.theta_fb - th),
                      std::abs(m.eigvec_y.x() * vy.y() - m.eigvec_y.y() * vy.x())});
    const double a2 = a * a;
    const double tr = wx * wx + wy * wy + 2 * a2;
    const double det = (wx * wx + a2) * (wy * wy + a2) - a2 * a2;
    worst_identity = std::max({worst_identity, std::abs((m.nu_x * m.nu_x + m.nu_y * m.nu_y) / tr - 1),
                               std::abs(m.nu_x * m.nu_x * m.nu_y * m.nu_y / det - 1)});
  }
  const TrapConfig trap;
  const auto free = radial_modes(trap.omega_x, trap.omega_y, 0.0);
  const bool exact = free.nu_x == trap.omega_x && free.nu_y == trap.omega_y;
  const bool pass = worst < 1e-10 && worst_identity < 1e-12 && exact;
  return {pass, fmt("max oracle discrepancy %.2e, trace/det %.2e, alpha=0 exact: %s", worst, worst_identity,
                    exact ? "yes" : "no")};
}

Outcome equipartition() {
  const ScenarioConfig cfg = scenario("equipartition.json");
  const auto ens = ensemble_mode_temperatures(cfg, cfg.analysis.zero_gain_runs, cfg.analysis.zero_gain_duration_s,
                                              threads());
  const double t0 = cfg.bath.temperature_k;
  const bool pass = std::abs(ens.t_x / t0 - 1) <= 0.10 && std::abs(ens.t_y / t0 - 1) <= 0.10 &&
                    ens.periods_per_run >= 1e3;
  return {pass, fmt("T_x=%.1f(%.1f) K, T_y=%.1f(%.1f) K over %d runs of %.0f periods", ens.t_x, ens.stderr_x,
                    ens.t_y, ens.stderr_y, ens.runs, ens.periods_per_run)};
}

Outcome cooling_curve_analytic() {
  const double b = imprecision_heating_coefficient(2.0e-17, constants::two_pi * 3.2e3, 3.0e-24);
  const double a = 112.0;
  const double t_min = 2 * std::sqrt(a * b), g_min = std::sqrt(a / b);
  const double target_g = constants::two_pi * 31e3;
  const bool pass = std::abs(t_min / 1e-3 - 1) <= 0.15 && std::abs(g_min / target_g - 1) <= 0.15;
  return {pass, fmt("T_min=%.3f mK, gamma_min=2pi x %.1f kHz", t_min * 1e3, g_min / constants::two_pi / 1e3)};
}

Outcome simulated_sweep() {
  const ScenarioConfig cfg = scenario("cooling_sweep.json");
  const CoolingSweep sweep = cooling_sweep(cfg, threads());
  const double a_true = gas_damping_rate(cfg.bath) * cfg.bath.temperature_k;
  std::vector<double> self_t, fwd_t;
  for (const auto& p : sweep.points) (p.source == DetectionChannel::forward ? fwd_t : self_t).push_back(p.temperature);
  const CoolingCurveFit* self_fit = nullptr;
  for (const auto& [src, fit] : sweep.fits)
    if (src == DetectionChannel::self_homodyne) self_fit = &fit;
  if (!sweep.errors.empty() || !self_fit) return {false, "sweep failed: " + (sweep.errors.empty() ? "" : sweep.errors[0])};

  bool monotone = true;
  for (std::size_t i = 1; i < self_t.size(); ++i) monotone = monotone && self_t[i] < self_t[i - 1];
  const auto argmin = std::min_element(fwd_t.begin(), fwd_t.end()) - fwd_t.begin();
  const bool interior = argmin > 0 && argmin + 1 < static_cast<long>(fwd_t.size());
  const double rel = self_fit->a / a_true - 1;
  const bool pass = std::abs(rel) <= 0.10 && monotone && interior;
  return {pass, fmt("A=%.3f rad K vs gamma0 T0=%.3f (%+.1f%%), self monotone: %s, forward minimum at point %ld of %zu",
                    self_fit->a, a_true, 100 * rel, monotone ? "yes" : "no", static_cast<long>(argmin) + 1,
                    fwd_t.size())};
}

Outcome calibration() {
  const auto rt = calibration_round_trip(scenario("calibration.json"));
  const double tol = rt.delta_chi + 0.01;
  return {rt.relative_error <= tol && !rt.lock_lost,
          fmt("injected %.4e m, recovered %.4e m, error %.2f%% (limit %.2f%%)", rt.injected_amplitude_m,
              rt.recovered_amplitude_m, 100 * rt.relative_error, 100 * tol)};
}

Outcome floor_ratio() {
  const auto fl = channel_floors(scenario("channel_floors.json"));
  return {std::abs(fl.ratio_db - 38) <= 1,
          fmt("self %.3e, forward %.3e m^2/Hz, ratio %.2f dB", fl.self_m2_per_hz, fl.forward_m2_per_hz, fl.ratio_db)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"calibration deviation", calibration_deviation_bound},
      {"collection efficiency", collection},
      {"detection efficiency", detection},
      {"imprecision scaling", imprecision_scaling},
      {"Rayleigh scattered power", rayleigh},
      {"eigen-analysis oracle", eigen_analysis},
      {"simulated equipartition", equipartition},
      {"analytic cooling minimum", cooling_curve_analytic},
      {"simulated cooling sweep", simulated_sweep},
      {"calibration round trip", calibration},
      {"channel floor ratio", floor_ratio},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("criterion %2zu %s: %s [%s; %.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str(), s);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}

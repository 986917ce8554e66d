#include "shd/scenario.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace shd {

namespace {

// Strict reader for one JSON object: unknown keys are rejected so a typo in
// a unit-suffixed key never silently falls back to a default.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  void mark(const char* key) { seen_.insert(key); }

  const Json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw InvalidArgument(path_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Eigen::Vector3d vec3(const std::vector<double>& v, const std::string& what) {
  if (v.size() != 3) throw InvalidArgument(what + ": expected three components");
  return {v[0], v[1], v[2]};
}

std::vector<double> to_vec(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

std::string mirror_mode_name(MirrorMode m) { return m == MirrorMode::ramp ? "ramp" : "locked"; }

MirrorMode mirror_mode_from(const std::string& s) {
  if (s == "locked") return MirrorMode::locked;
  if (s == "ramp") return MirrorMode::ramp;
  throw InvalidArgument("detector.mirror_mode: expected 'locked' or 'ramp'");
}

std::vector<double> default_cooling_rates() {
  std::vector<double> out;
  for (int i = 0; i < 8; ++i) out.push_back(constants::two_pi * 10.0 * std::pow(40.0, i / 7.0));
  return out;
}

double alpha_for(const ScenarioConfig& cfg, std::size_t i) {
  if (cfg.spring_gains.empty()) return 0.0;
  return cfg.spring_gains.size() == 1 ? cfg.spring_gains.front() : cfg.spring_gains.at(i);
}

double mirror_calibration(const ScenarioConfig& cfg) {
  return cfg.detector.gain_volts * cfg.detector.lock_sign() * mirror_sensitivity(cfg.setup);
}

Eigen::Index clamp_segment(Eigen::Index wanted, Eigen::Index n) { return std::max<Eigen::Index>(2, std::min(wanted, n)); }

Eigen::VectorXd tail_after(const Eigen::VectorXd& v, Eigen::Index skip) { return v.tail(v.size() - skip); }

Table psd_table(const Psd& p) {
  Table t;
  t.header = {"f_hz", "psd_m2_per_hz"};
  for (Eigen::Index i = 0; i < p.size(); ++i) t.add_row({format_number(p.frequencies_hz(i)), format_number(p.values(i))});
  return t;
}

Table trajectory_table(const Trajectory& tr) {
  Table t;
  t.header = {"t", "x", "y", "q", "volts_self", "volts_fwd", "mirror_d"};
  for (Eigen::Index i = 0; i < tr.size(); ++i)
    t.add_row({format_number(tr.t(i)), format_number(tr.x(i)), format_number(tr.y(i)), format_number(tr.q(i)),
               format_number(tr.volts_self(i)), format_number(tr.volts_fwd(i)), format_number(tr.mirror_d(i))});
  return t;
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

// Least-squares [offset, amplitude] of v against cos/sin(k d).
std::pair<double, double> fringe_regression(const Eigen::VectorXd& v, const Eigen::VectorXd& d, double k) {
  Eigen::MatrixXd design(v.size(), 3);
  design.col(0).setOnes();
  design.col(1) = (k * d.array()).cos();
  design.col(2) = (k * d.array()).sin();
  const Eigen::Vector3d c = design.colPivHouseholderQr().solve(v);
  return {c(0), std::hypot(c(1), c(2))};
}

Trajectory ramp_trajectory(const ScenarioConfig& cfg, const FringeResponse& response) {
  DetectorModel det = cfg.detector;
  det.mirror_mode = MirrorMode::ramp;
  if (!(det.ramp_rate_m_per_s > 0)) det.ramp_rate_m_per_s = cfg.setup.wavelength_m / 2 / 2e-3;
  SimConfig sim = cfg.sim;
  sim.duration_s = cfg.analysis.calibration_fringes * cfg.setup.wavelength_m / 2 / det.ramp_rate_m_per_s;
  sim.drive_accel_m_per_s2 = 0;
  sim.seed = derive_seed(cfg.seed, 0);
  FeedbackConfig off = cfg.feedback;
  off.cooling_rate = off.spring_gain = 0;
  return simulate(cfg.trap, cfg.bath, off, det, response, sim);
}

}  // namespace

// ---------------------------------------------------------------------------

void AnalysisConfig::validate() const {
  if (segment_length < 8 || floor_segment_length < 8) throw InvalidArgument("analysis: segment lengths must be >= 8");
  if (!(settle_time_constants >= 0)) throw InvalidArgument("analysis.settle_time_constants must be non-negative");
  if (!(fit_half_width_hz >= 0)) throw InvalidArgument("analysis.fit_half_width_hz must be non-negative");
  if (!(floor_band_lo_hz >= 0 && floor_band_lo_hz < floor_band_hi_hz))
    throw InvalidArgument("analysis: floor band must satisfy 0 <= lo < hi");
  if (!(floor_subtraction_m2_per_hz >= 0)) throw InvalidArgument("analysis.floor_subtraction_m2_per_hz must be >= 0");
  if (cooling_fit_mode != "auto" && cooling_fit_mode != "a_only" && cooling_fit_mode != "a_and_b")
    throw InvalidArgument("analysis.cooling_fit_mode must be auto, a_only or a_and_b");
  if (zero_gain_runs < 1 || !(zero_gain_duration_s > 0)) throw InvalidArgument("analysis: zero-gain ensemble is empty");
  for (double p : scattered_powers_w)
    if (!(p > 0)) throw InvalidArgument("analysis.scattered_powers_w must be positive");
  if (!(injected_freq_hz >= 0)) throw InvalidArgument("analysis.injected_freq_hz must be non-negative");
  if (!(calibration_fringes >= 1)) throw InvalidArgument("analysis.calibration_fringes must be >= 1");
}

ScenarioConfig::ScenarioConfig() {
  cooling_rates = default_cooling_rates();
  spring_gains = {0.0};
  sim.initial_temperature_k = 1e-3;
  feedback.cooling_rate = constants::two_pi * 100.0;
  trap.mass_kg = particle.mass_kg;
}

void ScenarioConfig::validate() const {
  if (scenario_id.empty()) throw InvalidArgument("scenario_id must not be empty");
  setup.validate();
  particle.validate();
  if (!(beam.power_w >= 0 && beam.waist_m > 0 && beam.wavelength_m > 0)) throw InvalidArgument("beam: invalid fields");
  detail::require_unit(beam.polarization_axis, "beam polarization axis");
  trap.validate();
  if (trap.mass_kg != particle.mass_kg) throw InvalidArgument("trap and particle masses differ");
  bath.validate();
  feedback.validate();
  detector.validate();
  if (!(sim.dt_s > 0 && sim.duration_s > 0)) throw InvalidArgument("sim: dt and duration must be positive");
  if (!(sim.backaction_psd >= 0)) throw InvalidArgument("sim: back-action PSD must be non-negative");
  for (double g : cooling_rates)
    if (!(g >= 0)) throw InvalidArgument("feedback.cooling_rates_rad_per_s must be non-negative");
  for (double a : spring_gains)
    if (!(a >= 0)) throw InvalidArgument("feedback.spring_gains_rad_per_s must be non-negative");
  if (spring_gains.size() > 1 && spring_gains.size() != cooling_rates.size())
    throw InvalidArgument("feedback: spring_gains must have one entry or one per cooling rate");
  if (sources.empty()) throw InvalidArgument("feedback.sources must not be empty");
  analysis.validate();
}

std::string to_string(DetectionChannel c) { return c == DetectionChannel::forward ? "forward" : "self_homodyne"; }

DetectionChannel channel_from_string(std::string_view s) {
  if (s == "self_homodyne") return DetectionChannel::self_homodyne;
  if (s == "forward") return DetectionChannel::forward;
  throw InvalidArgument("unknown detection channel '" + std::string(s) + "'");
}

ScenarioConfig config_from_json(const Json& j) {
  ScenarioConfig cfg;
  ObjectReader top(j, "config");
  top.get("scenario_id", cfg.scenario_id);
  top.get("seed", cfg.seed);
  top.get("output_dir", cfg.output_dir);

  if (top.has("optics")) {
    ObjectReader r(top.child("optics"), "optics");
    auto& s = cfg.setup;
    r.get("wavelength_m", s.wavelength_m);
    r.get("half_aperture_rad", s.half_aperture_rad);
    if (r.has("numerical_aperture")) {
      if (r.has("half_aperture_rad")) throw InvalidArgument("optics: give numerical_aperture or half_aperture_rad");
      double na = 0;
      r.get("numerical_aperture", na);
      s.set_numerical_aperture(na);
    }
    r.mark("numerical_aperture");
    r.get("mirror_reflectivity", s.mirror_reflectivity);
    r.get("visibility", s.visibility);
    r.get("path_efficiency", s.path_efficiency);
    r.get("detector_qe", s.detector_qe);
    r.get("focal_length_m", s.focal_length_m);
    r.get("mirror_distance_m", s.mirror_distance_m);
    std::vector<double> pol = to_vec(s.polarization_axis);
    r.get("polarization_axis", pol);
    s.polarization_axis = vec3(pol, "optics.polarization_axis");
    r.get("axis_projection_angle_rad", s.axis_projection_angle_rad);
    r.finish();
  }
  if (top.has("particle")) {
    ObjectReader r(top.child("particle"), "particle");
    r.get("radius_m", cfg.particle.radius_m);
    r.get("refractive_index", cfg.particle.refractive_index);
    r.get("mass_kg", cfg.particle.mass_kg);
    r.finish();
  }
  cfg.trap.mass_kg = cfg.particle.mass_kg;
  if (top.has("beam")) {
    ObjectReader r(top.child("beam"), "beam");
    r.get("power_w", cfg.beam.power_w);
    r.get("waist_m", cfg.beam.waist_m);
    r.get("wavelength_m", cfg.beam.wavelength_m);
    std::vector<double> pol = to_vec(cfg.beam.polarization_axis);
    r.get("polarization_axis", pol);
    cfg.beam.polarization_axis = vec3(pol, "beam.polarization_axis");
    r.finish();
  }
  if (top.has("trap")) {
    ObjectReader r(top.child("trap"), "trap");
    r.get("omega_x_rad_per_s", cfg.trap.omega_x);
    r.get("omega_y_rad_per_s", cfg.trap.omega_y);
    r.get("omega_z_rad_per_s", cfg.trap.omega_z);
    r.get("drive_freq_hz", cfg.trap.drive_freq_hz);
    r.get("stability_q", cfg.trap.stability_q);
    r.finish();
  }
  if (top.has("bath")) {
    ObjectReader r(top.child("bath"), "bath");
    r.get("pressure_mbar", cfg.bath.pressure_mbar);
    r.get("temperature_k", cfg.bath.temperature_k);
    r.get("anchor_pressure_mbar", cfg.bath.anchor_pressure_mbar);
    r.get("anchor_gamma_rad_per_s", cfg.bath.anchor_gamma);
    r.finish();
  }
  if (top.has("feedback")) {
    ObjectReader r(top.child("feedback"), "feedback");
    auto& f = cfg.feedback;
    r.get("cooling_rate_rad_per_s", f.cooling_rate);
    r.get("spring_gain_rad_per_s", f.spring_gain);
    r.get("loop_delay_s", f.loop_delay_s);
    r.get("filter_lo_hz", f.filter_lo_hz);
    r.get("filter_hi_hz", f.filter_hi_hz);
    std::string source = to_string(f.source);
    r.get("source", source);
    f.source = channel_from_string(source);
    r.get("cooling_rates_rad_per_s", cfg.cooling_rates);
    r.get("spring_gains_rad_per_s", cfg.spring_gains);
    if (r.has("sources")) {
      std::vector<std::string> names;
      r.get("sources", names);
      cfg.sources.clear();
      for (const auto& n : names) cfg.sources.push_back(channel_from_string(n));
    }
    r.mark("sources");
    r.finish();
  }
  if (top.has("detector")) {
    ObjectReader r(top.child("detector"), "detector");
    auto& d = cfg.detector;
    r.get("imprecision_self_m2_per_hz", d.imprecision_self);
    r.get("imprecision_forward_m2_per_hz", d.imprecision_forward);
    r.get("fringe_nonlinearity", d.fringe_nonlinearity);
    std::string mode = mirror_mode_name(d.mirror_mode);
    r.get("mirror_mode", mode);
    d.mirror_mode = mirror_mode_from(mode);
    r.get("ramp_rate_m_per_s", d.ramp_rate_m_per_s);
    r.get("lock_setpoint_index", d.lock_setpoint_index);
    r.get("gain_volts", d.gain_volts);
    r.get("forward_gain_v_per_m", d.forward_gain_v_per_m);
    r.finish();
  }
  if (top.has("sim")) {
    ObjectReader r(top.child("sim"), "sim");
    auto& s = cfg.sim;
    r.get("duration_s", s.duration_s);
    r.get("dt_s", s.dt_s);
    r.get("backaction_psd_n2_per_hz", s.backaction_psd);
    r.get("thermal_initial_state", s.thermal_initial_state);
    r.get("initial_temperature_k", s.initial_temperature_k);
    std::vector<double> p{s.initial_position_m.x(), s.initial_position_m.y()};
    std::vector<double> v{s.initial_velocity_m_per_s.x(), s.initial_velocity_m_per_s.y()};
    std::vector<double> dir{s.drive_direction.x(), s.drive_direction.y()};
    r.get("initial_position_m", p);
    r.get("initial_velocity_m_per_s", v);
    r.get("drive_direction", dir);
    if (p.size() != 2 || v.size() != 2 || dir.size() != 2) throw InvalidArgument("sim: 2-vectors expected");
    s.initial_position_m = {p[0], p[1]};
    s.initial_velocity_m_per_s = {v[0], v[1]};
    s.drive_direction = {dir[0], dir[1]};
    r.get("drive_accel_m_per_s2", s.drive_accel_m_per_s2);
    r.get("drive_freq_hz", s.drive_freq_hz);
    r.finish();
  }
  if (top.has("analysis")) {
    ObjectReader r(top.child("analysis"), "analysis");
    auto& a = cfg.analysis;
    r.get("segment_length", a.segment_length);
    r.get("floor_segment_length", a.floor_segment_length);
    r.get("settle_time_constants", a.settle_time_constants);
    r.get("fit_half_width_hz", a.fit_half_width_hz);
    r.get("floor_band_lo_hz", a.floor_band_lo_hz);
    r.get("floor_band_hi_hz", a.floor_band_hi_hz);
    r.get("floor_subtraction_m2_per_hz", a.floor_subtraction_m2_per_hz);
    r.get("cooling_fit_mode", a.cooling_fit_mode);
    r.get("zero_gain_runs", a.zero_gain_runs);
    r.get("zero_gain_duration_s", a.zero_gain_duration_s);
    r.get("scattered_powers_w", a.scattered_powers_w);
    r.get("scattered_power_w", a.scattered_power_w);
    r.get("injected_accel_m_per_s2", a.injected_accel_m_per_s2);
    r.get("injected_freq_hz", a.injected_freq_hz);
    r.get("calibration_fringes", a.calibration_fringes);
    r.get("write_trajectory", a.write_trajectory);
    r.finish();
  }
  top.finish();
  cfg.sim.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

Json config_to_json(const ScenarioConfig& cfg) {
  const auto& s = cfg.setup;
  const auto& f = cfg.feedback;
  const auto& d = cfg.detector;
  const auto& sim = cfg.sim;
  const auto& a = cfg.analysis;
  std::vector<std::string> sources;
  for (auto c : cfg.sources) sources.push_back(to_string(c));
  Json j;
  j["scenario_id"] = cfg.scenario_id;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["optics"] = {{"wavelength_m", s.wavelength_m},
                 {"half_aperture_rad", s.half_aperture_rad},
                 {"mirror_reflectivity", s.mirror_reflectivity},
                 {"visibility", s.visibility},
                 {"path_efficiency", s.path_efficiency},
                 {"detector_qe", s.detector_qe},
                 {"focal_length_m", s.focal_length_m},
                 {"mirror_distance_m", s.mirror_distance_m},
                 {"polarization_axis", to_vec(s.polarization_axis)},
                 {"axis_projection_angle_rad", s.axis_projection_angle_rad}};
  j["particle"] = {{"radius_m", cfg.particle.radius_m},
                   {"refractive_index", cfg.particle.refractive_index},
                   {"mass_kg", cfg.particle.mass_kg}};
  j["beam"] = {{"power_w", cfg.beam.power_w},
               {"waist_m", cfg.beam.waist_m},
               {"wavelength_m", cfg.beam.wavelength_m},
               {"polarization_axis", to_vec(cfg.beam.polarization_axis)}};
  j["trap"] = {{"omega_x_rad_per_s", cfg.trap.omega_x},
               {"omega_y_rad_per_s", cfg.trap.omega_y},
               {"omega_z_rad_per_s", cfg.trap.omega_z},
               {"drive_freq_hz", cfg.trap.drive_freq_hz},
               {"stability_q", cfg.trap.stability_q}};
  j["bath"] = {{"pressure_mbar", cfg.bath.pressure_mbar},
               {"temperature_k", cfg.bath.temperature_k},
               {"anchor_pressure_mbar", cfg.bath.anchor_pressure_mbar},
               {"anchor_gamma_rad_per_s", cfg.bath.anchor_gamma}};
  j["feedback"] = {{"cooling_rate_rad_per_s", f.cooling_rate},
                   {"spring_gain_rad_per_s", f.spring_gain},
                   {"loop_delay_s", f.loop_delay_s},
                   {"filter_lo_hz", f.filter_lo_hz},
                   {"filter_hi_hz", f.filter_hi_hz},
                   {"source", to_string(f.source)},
                   {"cooling_rates_rad_per_s", cfg.cooling_rates},
                   {"spring_gains_rad_per_s", cfg.spring_gains},
                   {"sources", sources}};
  j["detector"] = {{"imprecision_self_m2_per_hz", d.imprecision_self},
                   {"imprecision_forward_m2_per_hz", d.imprecision_forward},
                   {"fringe_nonlinearity", d.fringe_nonlinearity},
                   {"mirror_mode", mirror_mode_name(d.mirror_mode)},
                   {"ramp_rate_m_per_s", d.ramp_rate_m_per_s},
                   {"lock_setpoint_index", d.lock_setpoint_index},
                   {"gain_volts", d.gain_volts},
                   {"forward_gain_v_per_m", d.forward_gain_v_per_m}};
  j["sim"] = {{"duration_s", sim.duration_s},
              {"dt_s", sim.dt_s},
              {"backaction_psd_n2_per_hz", sim.backaction_psd},
              {"thermal_initial_state", sim.thermal_initial_state},
              {"initial_temperature_k", sim.initial_temperature_k},
              {"initial_position_m", {sim.initial_position_m.x(), sim.initial_position_m.y()}},
              {"initial_velocity_m_per_s", {sim.initial_velocity_m_per_s.x(), sim.initial_velocity_m_per_s.y()}},
              {"drive_accel_m_per_s2", sim.drive_accel_m_per_s2},
              {"drive_freq_hz", sim.drive_freq_hz},
              {"drive_direction", {sim.drive_direction.x(), sim.drive_direction.y()}}};
  j["analysis"] = {{"segment_length", a.segment_length},
                   {"floor_segment_length", a.floor_segment_length},
                   {"settle_time_constants", a.settle_time_constants},
                   {"fit_half_width_hz", a.fit_half_width_hz},
                   {"floor_band_lo_hz", a.floor_band_lo_hz},
                   {"floor_band_hi_hz", a.floor_band_hi_hz},
                   {"floor_subtraction_m2_per_hz", a.floor_subtraction_m2_per_hz},
                   {"cooling_fit_mode", a.cooling_fit_mode},
                   {"zero_gain_runs", a.zero_gain_runs},
                   {"zero_gain_duration_s", a.zero_gain_duration_s},
                   {"scattered_powers_w", a.scattered_powers_w},
                   {"scattered_power_w", a.scattered_power_w},
                   {"injected_accel_m_per_s2", a.injected_accel_m_per_s2},
                   {"injected_freq_hz", a.injected_freq_hz},
                   {"calibration_fringes", a.calibration_fringes},
                   {"write_trajectory", a.write_trajectory}};
  return j;
}

ScenarioConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

std::string serialize_config(const ScenarioConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_hash(const ScenarioConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != header.size()) throw InvalidArgument("Table::add_row: width mismatch");
  rows.push_back(std::move(row));
}

std::size_t Table::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw InvalidArgument("Table: no column " + std::string(name));
  return static_cast<std::size_t>(it - header.begin());
}

double Table::number(std::size_t row, std::string_view name) const {
  const std::string& cell = rows.at(row).at(column(name));
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::stod(cell);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

void write_csv(std::ostream& os, const Table& table) {
  auto field = [&](const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) {
      os << s;
      return;
    }
    os << '"';
    for (char c : s) {
      if (c == '"') os << '"';
      os << c;
    }
    os << '"';
  };
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      field(cells[i]);
    }
    os << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

Json lorentzian_report(const LorentzianFit& fit) {
  const Eigen::Vector4d se = fit.standard_errors();
  const char* names[] = {"center_hz", "fwhm_hz", "area_m2", "floor_m2_per_hz"};
  const double values[] = {fit.center_hz, fit.fwhm_hz, fit.area, fit.floor};
  Json params = Json::object();
  for (int i = 0; i < 4; ++i) params[names[i]] = {{"value", values[i]}, {"stderr", number_or_null(se(i))}};
  Json cov = Json::array();
  for (int i = 0; i < 4; ++i) {
    Json row = Json::array();
    for (int k = 0; k < 4; ++k) row.push_back(number_or_null(fit.covariance(i, k)));
    cov.push_back(row);
  }
  return {{"model", "floor + area (fwhm/2pi) / ((f - center)^2 + (fwhm/2)^2)"},
          {"parameters", params},
          {"covariance_order", {"center_hz", "fwhm_hz", "area_m2", "floor_m2_per_hz"}},
          {"covariance", cov},
          {"iterations", fit.iterations}};
}

Json cooling_fit_report(const CoolingCurveFit& fit) {
  const bool both = fit.mode == CoolingFitMode::a_and_b;
  Json j;
  j["mode"] = both ? "a_and_b" : "a_only";
  j["parameters"] = {
      {"a_rad_k", {{"value", fit.a}, {"stderr", std::sqrt(fit.covariance(0, 0))}}},
      {"b_k_per_rad",
       {{"value", fit.b}, {"stderr", both ? Json(std::sqrt(fit.covariance(1, 1))) : Json(nullptr)}, {"external", fit.b_external}}}};
  j["covariance_order"] = {"a_rad_k", "b_k_per_rad"};
  j["covariance"] = {{fit.covariance(0, 0), fit.covariance(0, 1)}, {fit.covariance(1, 0), fit.covariance(1, 1)}};
  j["t_min_k"] = fit.t_min ? Json(*fit.t_min) : Json(nullptr);
  j["gamma_min_rad_per_s"] = fit.gamma_min ? Json(*fit.gamma_min) : Json(nullptr);
  return j;
}

Json constants_json() {
  return {{"source", "CODATA 2018"},
          {"hbar_j_s", constants::hbar},
          {"c_m_per_s", constants::c},
          {"k_b_j_per_k", constants::k_B},
          {"epsilon0_f_per_m", constants::epsilon0}};
}

Json manifest_json(const std::string& command, const std::optional<ScenarioConfig>& cfg,
                   const std::vector<std::string>& files, const std::vector<std::string>& errors) {
  Json j;
  j["tool"] = "shd";
  j["version"] = SHD_VERSION;
  j["command"] = command;
  j["scenario_id"] = cfg ? Json(cfg->scenario_id) : Json(nullptr);
  j["seed"] = cfg ? Json(cfg->seed) : Json(nullptr);
  j["config_hash"] = cfg ? Json("fnv1a64:" + config_hash(*cfg)) : Json(nullptr);
  j["constants"] = constants_json();
  j["outputs"] = files;
  j["status"] = errors.empty() ? "ok" : "error";
  j["errors"] = errors;
  return j;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<std::string> write_outputs(const std::filesystem::path& dir, const std::string& command,
                                       const ScenarioConfig& cfg, const CommandOutput& out) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  write_text(dir / "config.json", serialize_config(cfg));
  files.push_back("config.json");
  for (const auto& [name, table] : out.tables) {
    std::ostringstream os;
    write_csv(os, table);
    write_text(dir / name, os.str());
    files.push_back(name);
  }
  for (const auto& [name, doc] : out.documents) {
    write_text(dir / name, doc.dump(2) + "\n");
    files.push_back(name);
  }
  write_text(dir / "manifest.json", manifest_json(command, cfg, files, out.errors).dump(2) + "\n");
  files.push_back("manifest.json");
  return files;
}

void write_error_manifest(const std::filesystem::path& dir, const std::string& command,
                          const std::optional<ScenarioConfig>& cfg, const std::string& message,
                          const std::vector<std::string>& partial) {
  std::filesystem::create_directories(dir);
  write_text(dir / "manifest.json", manifest_json(command, cfg, partial, {message}).dump(2) + "\n");
}

// ---------------------------------------------------------------------------

FringeScan fringe_scan(const ScenarioConfig& cfg) {
  const FringeResponse response(cfg.setup, cfg.detector.fringe_nonlinearity);
  const Trajectory tr = ramp_trajectory(cfg, response);
  const double g = cfg.detector.gain_volts;
  // DC level from the direct scattering alone, set so that a perfect mirror
  // gives the configured visibility.
  const FringeState s0 = fringe_state(cfg.setup, 0.0);
  const double dc = std::abs(g) * 2 * std::hypot(s0.cos_moment, s0.sin_moment) / cfg.setup.visibility;
  const Eigen::VectorXd volts = tr.volts_self.array() + dc;

  FringeScan scan;
  scan.calibration = run_calibration(tr, cfg.setup);
  const double k0 = 4 * constants::pi / cfg.setup.wavelength_m;
  const auto [offset, amp] = fringe_regression(volts, tr.mirror_d, k0);
  scan.visibility = offset != 0 ? amp / offset : 0.0;
  if (amp > 0) {
    // Gauss-Newton on the spatial frequency: a linear phase drift across the
    // scan shows up in the (d - mean) cos / sin columns.
    const Eigen::ArrayXd dc_d = tr.mirror_d.array() - tr.mirror_d.mean();
    double k = k0;
    for (int it = 0; it < 8; ++it) {
      const Eigen::ArrayXd kd = k * tr.mirror_d.array();
      Eigen::MatrixXd design(volts.size(), 5);
      design.col(0).setOnes();
      design.col(1) = kd.cos().matrix();
      design.col(2) = kd.sin().matrix();
      design.col(3) = (dc_d * kd.cos()).matrix();
      design.col(4) = (dc_d * kd.sin()).matrix();
      const Eigen::VectorXd c = design.colPivHouseholderQr().solve(volts);
      // c1 cos + c2 sin with c3, c4 = delta * (c2, -c1)
      const double step = (c(2) * c(3) - c(1) * c(4)) / (c(1) * c(1) + c(2) * c(2));
      k += step;
      if (std::abs(step) < 1e-12 * k0) break;
    }
    scan.period_m = 2 * constants::pi / k;
  }
  scan.table.header = {"t_s", "mirror_displacement_m", "detector_v", "fringe_visibility"};
  const std::string vis = format_number(scan.visibility);
  for (Eigen::Index i = 0; i < tr.size(); ++i)
    scan.table.add_row({format_number(tr.t(i)), format_number(tr.mirror_d(i)), format_number(volts(i)), vis});
  return scan;
}

CalibrationRoundTrip calibration_round_trip(const ScenarioConfig& cfg) {
  const FringeResponse response(cfg.setup, cfg.detector.fringe_nonlinearity);
  CalibrationRoundTrip out;
  out.calibration = run_calibration(ramp_trajectory(cfg, response), cfg.setup);

  DetectorModel det = cfg.detector;
  det.mirror_mode = MirrorMode::locked;
  SimConfig sim = cfg.sim;
  sim.seed = derive_seed(cfg.seed, 1);
  sim.drive_accel_m_per_s2 = cfg.analysis.injected_accel_m_per_s2;
  sim.drive_freq_hz = cfg.analysis.injected_freq_hz > 0 ? cfg.analysis.injected_freq_hz : cfg.trap.drive_freq_hz;
  FeedbackConfig off = cfg.feedback;
  off.cooling_rate = off.spring_gain = 0;
  const Trajectory tr = simulate(cfg.trap, cfg.bath, off, det, response, sim);
  out.lock_lost = tr.lock_lost;

  const double fs = tr.sample_rate_hz();
  out.injected_amplitude_m = sinusoid_amplitude(tr.q, fs, sim.drive_freq_hz);
  const Eigen::VectorXd q = tr.volts_self / (det.lock_sign() * out.calibration.volts_per_meter);
  out.recovered_amplitude_m = sinusoid_amplitude(q, fs, sim.drive_freq_hz);
  out.relative_error = std::abs(out.recovered_amplitude_m - out.injected_amplitude_m) / out.injected_amplitude_m;
  out.delta_chi = calibration_deviation(cfg.setup);
  return out;
}

EnsembleTemperatures ensemble_mode_temperatures(const ScenarioConfig& cfg, int runs, double duration_s,
                                                unsigned threads) {
  if (runs < 1) throw InvalidArgument("ensemble_mode_temperatures: runs must be positive");
  DetectorModel det = cfg.detector;
  det.mirror_mode = MirrorMode::ramp;
  det.ramp_rate_m_per_s = 0;
  det.fringe_nonlinearity = false;  // only the true coordinate is analysed
  const FringeResponse response(cfg.setup, false);
  FeedbackConfig off = cfg.feedback;
  off.cooling_rate = off.spring_gain = 0;
  const double fx = cfg.trap.omega_x / constants::two_pi, fy = cfg.trap.omega_y / constants::two_pi;
  const double m = cfg.trap.mass_kg;

  const auto temps = parallel_map<Eigen::Vector2d>(
      static_cast<std::size_t>(runs), threads, [&](std::size_t i) -> Eigen::Vector2d {
        SimConfig sim = cfg.sim;
        sim.duration_s = duration_s;
        sim.thermal_initial_state = true;
        sim.initial_temperature_k = -1;
        sim.drive_accel_m_per_s2 = 0;
        sim.seed = derive_seed(cfg.seed, 1000 + i);
        const Trajectory tr = simulate(cfg.trap, cfg.bath, off, det, response, sim);
        const Eigen::Index seg = clamp_segment(tr.size() / 4, tr.size());
        const Psd p = welch_psd(tr.q, tr.sample_rate_hz(), seg);
        const double hw = std::min(0.45 * std::abs(fy - fx), std::max(300.0, 6 * p.resolution_hz));
        return {mode_temperature(m, cfg.trap.omega_x, band_power(p, fx - hw, fx + hw), constants::pi / 4),
                mode_temperature(m, cfg.trap.omega_y, band_power(p, fy - hw, fy + hw), constants::pi / 4)};
      });
  Eigen::MatrixXd all(2, runs);
  for (int i = 0; i < runs; ++i) all.col(i) = temps[static_cast<std::size_t>(i)];
  const Eigen::Vector2d mean = all.rowwise().mean();
  const Eigen::Vector2d var =
      runs > 1 ? Eigen::Vector2d((all.colwise() - mean).rowwise().squaredNorm() / (runs - 1)) : Eigen::Vector2d::Zero();
  EnsembleTemperatures out;
  out.t_x = mean(0);
  out.t_y = mean(1);
  out.stderr_x = std::sqrt(var(0) / runs);
  out.stderr_y = std::sqrt(var(1) / runs);
  out.runs = runs;
  out.periods_per_run = duration_s * std::min(fx, fy);
  return out;
}

CoolingSweep cooling_sweep(const ScenarioConfig& cfg, unsigned threads) {
  cfg.validate();
  const FringeResponse response(cfg.setup, cfg.detector.fringe_nonlinearity);
  const double gamma0 = gas_damping_rate(cfg.bath);
  const double cal = mirror_calibration(cfg);
  const double m = cfg.trap.mass_kg;

  struct Job {
    DetectionChannel source;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (auto src : cfg.sources)
    for (std::size_t i = 0; i < cfg.cooling_rates.size(); ++i) jobs.push_back({src, i});

  auto run_point = [&](std::size_t j) -> CoolingPointResult {
    const Job job = jobs[j];
    CoolingPointResult pt;
    pt.source = job.source;
    pt.gamma_fb = cfg.cooling_rates[job.index];
    pt.alpha = alpha_for(cfg, job.index);
    pt.modes = radial_modes(cfg.trap.omega_x, cfg.trap.omega_y, pt.alpha);
    try {
      if (pt.gamma_fb == 0 && pt.alpha == 0) {
        ScenarioConfig one = cfg;
        one.seed = derive_seed(cfg.seed, 5000 + j);
        const auto ens = ensemble_mode_temperatures(one, cfg.analysis.zero_gain_runs,
                                                    cfg.analysis.zero_gain_duration_s, 1);
        pt.temperature = ens.t_y;
        pt.temperature_stderr = ens.stderr_y;
        pt.estimator = "ensemble_band_power";
        return pt;
      }
      FeedbackConfig fb = cfg.feedback;
      fb.cooling_rate = pt.gamma_fb;
      fb.spring_gain = pt.alpha;
      fb.source = job.source;
      pt.gamma_eff = pt.gamma_fb > 0 ? effective_cooling_rate(fb, pt.modes.nu_y, cfg.sim.dt_s) : 0.0;
      const double total = pt.gamma_eff + gamma0;
      const double settle = total > 0 ? cfg.analysis.settle_time_constants / total : 0.0;
      DetectorModel det = cfg.detector;
      det.mirror_mode = MirrorMode::locked;
      SimConfig sim = cfg.sim;
      sim.duration_s = settle + cfg.sim.duration_s;
      sim.seed = derive_seed(cfg.seed, 100 + j);
      const Trajectory tr = simulate(cfg.trap, cfg.bath, fb, det, response, sim);
      const auto skip = static_cast<Eigen::Index>(std::llround(settle / sim.dt_s));
      Eigen::Index lost = 0;
      if (tr.lock_lost) {
        for (Eigen::Index i = skip; i < tr.size(); ++i) lost += std::abs(tr.q(i)) > cfg.setup.wavelength_m / 4;
      }
      if (lost > 0) {
        pt.lock_lost = true;
        pt.error = "lock lost";
        return pt;
      }
      const Eigen::VectorXd q = tail_after(tr.volts_self, skip) / cal;
      const double fs = tr.sample_rate_hz();
      const double expected_fwhm = total / constants::two_pi;
      // Resolve the line: at least ten bins per linewidth, at least eight segments.
      Eigen::Index seg = cfg.analysis.segment_length;
      while (seg < q.size() / 8 && fs / seg > expected_fwhm / 10) seg *= 2;
      Psd p = welch_psd(q, fs, clamp_segment(seg, q.size()));
      if (cfg.analysis.floor_subtraction_m2_per_hz > 0)
        p.values = (p.values.array() - cfg.analysis.floor_subtraction_m2_per_hz).max(1e-300);
      const double fx = pt.modes.nu_x / constants::two_pi, fy = pt.modes.nu_y / constants::two_pi;
      const double hw = cfg.analysis.fit_half_width_hz > 0 ? cfg.analysis.fit_half_width_hz
                                                           : std::max(8 * expected_fwhm, 40 * p.resolution_hz);
      const LorentzianFit fit = lorentzian_fit(p, std::max(fy - hw, 0.5 * (fx + fy)), fy + hw);
      pt.fwhm_hz = fit.fwhm_hz;
      if (!fit.standard_errors().segment<2>(1).allFinite() || fit.fwhm_hz > 3 * expected_fwhm || fit.fwhm_hz < expected_fwhm / 3)
        throw FitFailure("Lorentzian fit did not lock onto the y' line",
                         "fwhm " + format_number(fit.fwhm_hz) + " Hz, expected " + format_number(expected_fwhm));
      pt.temperature = mode_temperature(m, pt.modes.nu_y, fit.area, pt.modes.theta_fb);
      pt.temperature_stderr = pt.temperature * fit.standard_errors()(2) / fit.area;
      pt.estimator = "lorentzian";
    } catch (const FitFailure& e) {
      pt.error = std::string(e.what()) + " (" + e.diagnostics() + ")";
    } catch (const std::exception& e) {
      pt.error = e.what();
    }
    return pt;
  };

  CoolingSweep sweep;
  sweep.points = parallel_map<CoolingPointResult>(jobs.size(), threads, run_point);
  for (const auto& pt : sweep.points)
    if (!pt.error.empty())
      sweep.errors.push_back(to_string(pt.source) + " gamma_fb=" + format_number(pt.gamma_fb) + ": " + pt.error);

  for (auto src : cfg.sources) {
    std::vector<CoolingPoint> pts;
    for (const auto& pt : sweep.points)
      if (pt.source == src && pt.gamma_eff > 0 && pt.error.empty()) pts.push_back({pt.gamma_eff, pt.temperature, 0});
    const double s_imp =
        src == DetectionChannel::forward ? cfg.detector.imprecision_forward : cfg.detector.imprecision_self;
    const double nu_y = radial_modes(cfg.trap.omega_x, cfg.trap.omega_y, alpha_for(cfg, 0)).nu_y;
    const double b_ext = imprecision_heating_coefficient(m, nu_y, s_imp);
    try {
      CoolingCurveFit fit;
      const auto& mode = cfg.analysis.cooling_fit_mode;
      if (mode == "a_only") {
        fit = cooling_curve_fit(pts, CoolingFitMode::a_only, b_ext);
      } else {
        fit = cooling_curve_fit(pts, CoolingFitMode::a_and_b);
        const bool significant = fit.b > 0 && std::sqrt(fit.covariance(1, 1)) < fit.b;
        if (mode == "auto" && !significant) fit = cooling_curve_fit(pts, CoolingFitMode::a_only, b_ext);
      }
      sweep.fits.emplace_back(src, fit);
    } catch (const std::exception& e) {
      sweep.errors.push_back(to_string(src) + " cooling fit: " + e.what());
    }
  }
  return sweep;
}

ChannelFloors channel_floors(const ScenarioConfig& cfg) {
  const FringeResponse response(cfg.setup, cfg.detector.fringe_nonlinearity);
  DetectorModel det = cfg.detector;
  det.mirror_mode = MirrorMode::locked;
  SimConfig sim = cfg.sim;
  sim.seed = derive_seed(cfg.seed, 2);
  ChannelFloors out;
  out.trajectory = simulate(cfg.trap, cfg.bath, cfg.feedback, det, response, sim);
  const Trajectory& tr = out.trajectory;
  out.lock_lost = tr.lock_lost;
  const Eigen::VectorXd q = tr.volts_self / mirror_calibration(cfg);
  const Eigen::VectorXd p = tr.volts_fwd / det.forward_gain_v_per_m;
  const double fs = tr.sample_rate_hz();
  out.self_psd = welch_psd(q, fs, clamp_segment(cfg.analysis.segment_length, q.size()));
  out.forward_psd = welch_psd(p, fs, clamp_segment(cfg.analysis.segment_length, p.size()));
  const Eigen::Index fseg = clamp_segment(cfg.analysis.floor_segment_length, q.size());
  const auto& a = cfg.analysis;
  out.self_m2_per_hz = imprecision_from_floor(welch_psd(q, fs, fseg), a.floor_band_lo_hz, a.floor_band_hi_hz);
  out.forward_m2_per_hz = imprecision_from_floor(welch_psd(p, fs, fseg), a.floor_band_lo_hz, a.floor_band_hi_hz);
  out.ratio_db = 10 * std::log10(out.forward_m2_per_hz / out.self_m2_per_hz);
  return out;
}

// ---------------------------------------------------------------------------

CommandOutput cmd_fringe_scan(const ScenarioConfig& cfg, const RunOptions&) {
  cfg.validate();
  FringeScan scan = fringe_scan(cfg);
  CommandOutput out;
  out.documents.push_back({"fringe_scan.json",
                           {{"period_m", scan.period_m},
                            {"expected_period_m", cfg.setup.wavelength_m / 2},
                            {"visibility", scan.visibility},
                            {"amplitude_volts", scan.calibration.amplitude_volts},
                            {"volts_per_meter", scan.calibration.volts_per_meter},
                            {"fringes_spanned", scan.calibration.fringes_spanned}}});
  out.tables.push_back({"fringe_scan.csv", std::move(scan.table)});
  return out;
}

CommandOutput cmd_calibrate(const ScenarioConfig& cfg, const RunOptions&) {
  cfg.validate();
  const auto rt = calibration_round_trip(cfg);
  CommandOutput out;
  const double tol = rt.delta_chi + 0.01;
  out.documents.push_back({"calibration.json",
                           {{"amplitude_volts", rt.calibration.amplitude_volts},
                            {"volts_per_meter", rt.calibration.volts_per_meter},
                            {"fringes_spanned", rt.calibration.fringes_spanned},
                            {"injected_amplitude_m", rt.injected_amplitude_m},
                            {"recovered_amplitude_m", rt.recovered_amplitude_m},
                            {"relative_error", rt.relative_error},
                            {"delta_chi", rt.delta_chi},
                            {"tolerance", tol},
                            {"lock_lost", rt.lock_lost}}});
  if (rt.lock_lost) out.errors.push_back("calibration: lock lost during the locked run");
  if (!(rt.relative_error <= tol)) out.errors.push_back("calibration: round-trip error above delta_chi + 1%");
  return out;
}

CommandOutput cmd_imprecision_sweep(const ScenarioConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const double eta = detection_efficiency(cfg.setup);
  const double lambda = cfg.setup.wavelength_m;
  const auto& powers = cfg.analysis.scattered_powers_w;
  const auto extracted = parallel_map<double>(powers.size(), opts.threads, [&](std::size_t i) {
    ScenarioConfig c = cfg;
    c.detector.imprecision_self = imprecision(powers[i], eta, lambda);
    c.seed = derive_seed(cfg.seed, 200 + i);
    return channel_floors(c).self_m2_per_hz;
  });
  CommandOutput out;
  Table t;
  t.header = {"power_w",
              "eta_det",
              "s_imp_predicted_m2_per_hz",
              "s_imp_ideal_m2_per_hz",
              "s_imp_extracted_m2_per_hz",
              "sqrt_s_imp_predicted_m_per_rthz",
              "relative_error"};
  for (std::size_t i = 0; i < powers.size(); ++i) {
    const double pred = imprecision(powers[i], eta, lambda);
    const double rel = (extracted[i] - pred) / pred;
    t.add_row({format_number(powers[i]), format_number(eta), format_number(pred),
               format_number(imprecision(powers[i], 1.0, lambda)), format_number(extracted[i]),
               format_number(std::sqrt(pred)), format_number(rel)});
    if (!(std::abs(rel) <= 0.10))
      out.errors.push_back("imprecision sweep: extracted floor off by more than 10% at P=" + format_number(powers[i]));
  }
  out.tables.push_back({"imprecision_sweep.csv", std::move(t)});
  return out;
}

CommandOutput cmd_cool_sweep(const ScenarioConfig& cfg, const RunOptions& opts) {
  const CoolingSweep sweep = cooling_sweep(cfg, opts.threads);
  CommandOutput out;
  out.errors = sweep.errors;
  Table t;
  t.header = {"channel",          "gamma_fb_rad_per_s", "gamma_eff_rad_per_s", "alpha_rad_per_s", "nu_x_rad_per_s",
              "nu_y_rad_per_s",   "theta_fb_rad",       "t_y_k",               "t_y_stderr_k",    "fwhm_hz",
              "estimator",        "lock_lost",          "fit_a_rad_k",         "fit_b_k_per_rad", "t_min_k",
              "gamma_min_rad_per_s", "error"};
  for (const auto& pt : sweep.points) {
    const bool ok = pt.error.empty();
    t.add_row({to_string(pt.source), format_number(pt.gamma_fb), format_number(pt.gamma_eff), format_number(pt.alpha),
               format_number(pt.modes.nu_x), format_number(pt.modes.nu_y), format_number(pt.modes.theta_fb),
               ok ? format_number(pt.temperature) : "", ok ? format_number(pt.temperature_stderr) : "",
               ok && pt.fwhm_hz > 0 ? format_number(pt.fwhm_hz) : "", pt.estimator, pt.lock_lost ? "true" : "false",
               "", "", "", "", pt.error});
  }
  Json fits = Json::object();
  for (const auto& [src, fit] : sweep.fits) {
    auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    t.add_row({"fit:" + to_string(src), "", "", "", "", "", "", "", "", "", "", "", format_number(fit.a),
               format_number(fit.b), opt(fit.t_min), opt(fit.gamma_min), ""});
    fits[to_string(src)] = cooling_fit_report(fit);
  }
  out.tables.push_back({"cool_sweep.csv", std::move(t)});
  out.documents.push_back({"cool_sweep_fit.json", fits});
  return out;
}

CommandOutput cmd_modes(const ScenarioConfig& cfg, const RunOptions&) {
  cfg.validate();
  auto solve = [](double wx, double wy, double alpha) {
    const auto cf = radial_modes(wx, wy, alpha);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(spring_potential_matrix(wx, wy, alpha));
    Eigen::Vector2d ya = es.eigenvectors().col(1);
    if (ya(1) < 0 || (ya(1) == 0 && ya(0) < 0)) ya = -ya;
    Eigen::Vector2d xa = es.eigenvectors().col(0);
    if (xa(1) < 0 || (xa(1) == 0 && xa(0) < 0)) xa = -xa;
    const Eigen::Vector2d nu = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const double theta = std::acos(std::min(1.0, std::abs(ya.dot(Eigen::Vector2d(1, 1).normalized()))));
    const double disc = std::max({std::abs(cf.nu_x - nu(0)) / nu(0), std::abs(cf.nu_y - nu(1)) / nu(1),
                                  std::abs(cf.theta_fb - theta),
                                  std::abs(cf.eigvec_y.x() * ya.y() - cf.eigvec_y.y() * ya.x())});
    auto sol = [](double nx, double ny, const Eigen::Vector2d& vx, const Eigen::Vector2d& vy, double th) {
      return Json{{"nu_x_rad_per_s", nx},
                  {"nu_y_rad_per_s", ny},
                  {"eigvec_x", {vx.x(), vx.y()}},
                  {"eigvec_y", {vy.x(), vy.y()}},
                  {"theta_fb_rad", th}};
    };
    return std::pair<Json, double>{
        Json{{"omega_x_rad_per_s", wx},
             {"omega_y_rad_per_s", wy},
             {"alpha_rad_per_s", alpha},
             {"closed_form", sol(cf.nu_x, cf.nu_y, cf.eigvec_x, cf.eigvec_y, cf.theta_fb)},
             {"oracle", sol(nu(0), nu(1), xa, ya, theta)},
             {"discrepancy", disc}},
        disc};
  };
  CommandOutput out;
  Table t;
  t.header = {"alpha_rad_per_s", "nu_x_rad_per_s", "nu_y_rad_per_s", "theta_fb_rad", "discrepancy"};
  Json cases = Json::array();
  double worst = 0;
  std::vector<double> alphas = cfg.spring_gains;
  if (alphas.size() <= 1)
    for (double f : {0.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0}) alphas.push_back(constants::two_pi * f);
  std::sort(alphas.begin(), alphas.end());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
  for (double a : alphas) {
    auto [j, d] = solve(cfg.trap.omega_x, cfg.trap.omega_y, a);
    worst = std::max(worst, d);
    const auto cf = radial_modes(cfg.trap.omega_x, cfg.trap.omega_y, a);
    t.add_row({format_number(a), format_number(cf.nu_x), format_number(cf.nu_y), format_number(cf.theta_fb),
               format_number(d)});
    cases.push_back(j);
  }
  Json refs = Json::array();
  {
    auto [j0, d0] = solve(cfg.trap.omega_x, cfg.trap.omega_y, 0.0);
    j0["case"] = "no feedback";
    refs.push_back(j0);
    auto [j1, d1] = solve(cfg.trap.omega_x, cfg.trap.omega_x, constants::two_pi * 1e3);
    j1["case"] = "degenerate trap";
    refs.push_back(j1);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> w(constants::two_pi * 500, constants::two_pi * 10e3);
    auto [j2, d2] = solve(w(rng), w(rng), w(rng));
    j2["case"] = "random";
    refs.push_back(j2);
    worst = std::max({worst, d0, d1, d2});
  }
  out.tables.push_back({"modes.csv", std::move(t)});
  out.documents.push_back({"modes.json", {{"cases", cases}, {"reference_cases", refs}, {"max_discrepancy", worst}}});
  if (!(worst < 1e-10)) out.errors.push_back("modes: closed form and eigensolver disagree beyond 1e-10");
  return out;
}

CommandOutput cmd_efficiency_report(const ScenarioConfig& cfg, const RunOptions&) {
  cfg.validate();
  const auto& s = cfg.setup;
  const double p_rayleigh = rayleigh_scattered_power(cfg.beam, cfg.particle);
  const double p_op = cfg.analysis.scattered_power_w > 0 ? cfg.analysis.scattered_power_w : p_rayleigh;
  const double eta_det = detection_efficiency(s);
  const double s_ba = backaction_psd(p_op, s.wavelength_m);
  const double s_gas = thermal_force_psd(cfg.bath, cfg.particle.mass_kg);
  const double s_imp = imprecision(p_op, eta_det, s.wavelength_m);
  CommandOutput out;
  out.documents.push_back(
      {"efficiency_report.json",
       {{"numerical_aperture", s.numerical_aperture()},
        {"half_aperture_rad", s.half_aperture_rad},
        {"eta_col", collection_efficiency(s.half_aperture_rad, s.polarization_axis)},
        {"detection_angular_factor", detection_angular_factor(s.half_aperture_rad)},
        {"eta_det", eta_det},
        {"chi_m_per_m", mirror_sensitivity(s)},
        {"chi_p_per_m", particle_sensitivity(s)},
        {"delta_chi", calibration_deviation(s)},
        {"p_rayleigh_w", p_rayleigh},
        {"rayleigh_valid", cfg.particle.rayleigh_valid(cfg.beam.wavelength_m)},
        {"scattered_power_w", p_op},
        {"s_imp_m2_per_hz", s_imp},
        {"sqrt_s_imp_m_per_rthz", std::sqrt(s_imp)},
        {"s_ba_n2_per_hz", s_ba},
        {"gamma_gas_rad_per_s", gas_damping_rate(cfg.bath)},
        {"s_gas_n2_per_hz", s_gas},
        {"s_gas_over_s_ba", s_ba > 0 ? Json(s_gas / s_ba) : Json(nullptr)},
        {"imprecision_heating_b_k_per_rad",
         imprecision_heating_coefficient(cfg.particle.mass_kg, cfg.trap.omega_y, cfg.detector.imprecision_self)}}});
  return out;
}

CommandOutput cmd_psd(const ScenarioConfig& cfg, const RunOptions&) {
  cfg.validate();
  ChannelFloors fl = channel_floors(cfg);
  CommandOutput out;
  Json report = {{"floor_self_m2_per_hz", fl.self_m2_per_hz},
                 {"floor_forward_m2_per_hz", fl.forward_m2_per_hz},
                 {"floor_ratio_db", fl.ratio_db},
                 {"lock_lost", fl.lock_lost}};
  const auto modes = radial_modes(cfg.trap.omega_x, cfg.trap.omega_y, cfg.feedback.spring_gain);
  const double fx = modes.nu_x / constants::two_pi, fy = modes.nu_y / constants::two_pi;
  try {
    const double hw = cfg.analysis.fit_half_width_hz > 0 ? cfg.analysis.fit_half_width_hz : 0.5 * (fy - fx);
    const LorentzianFit fit = lorentzian_fit(fl.self_psd, fy - hw, fy + hw);
    report["lorentzian_y"] = lorentzian_report(fit);
    report["t_y_k"] = mode_temperature(cfg.trap.mass_kg, modes.nu_y, fit.area, modes.theta_fb);
  } catch (const std::exception& e) {
    report["lorentzian_y"] = nullptr;
    out.errors.push_back(std::string("psd: ") + e.what());
  }
  if (fl.lock_lost) out.errors.push_back("psd: lock lost");
  out.tables.push_back({"psd_self.csv", psd_table(fl.self_psd)});
  out.tables.push_back({"psd_forward.csv", psd_table(fl.forward_psd)});
  if (cfg.analysis.write_trajectory) out.tables.push_back({"trajectory.csv", trajectory_table(fl.trajectory)});
  out.documents.push_back({"psd_report.json", report});
  return out;
}

}  // namespace shd

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shd/langevin.hpp"
#include "shd/modes.hpp"
#include "shd/optics.hpp"
#include "shd/spectral.hpp"

// Scenario configuration, the command implementations behind the `shd` tool,
// and their tabular / JSON outputs.

namespace shd {

using Json = nlohmann::ordered_json;

struct AnalysisConfig {
  Eigen::Index segment_length = 1 << 15;
  double settle_time_constants = 10.0;  // discarded 1/gamma_eff intervals before recording
  double fit_half_width_hz = 0;         // 0: chosen from the expected linewidth
  double floor_band_lo_hz = 40e3;
  double floor_band_hi_hz = 90e3;
  double floor_subtraction_m2_per_hz = 0;  // constant removed from the PSD before peak fits
  std::string cooling_fit_mode = "auto";   // auto | a_only | a_and_b
  int zero_gain_runs = 1000;
  double zero_gain_duration_s = 0.05;
  std::vector<double> scattered_powers_w{10e-9, 20e-9, 40e-9, 84e-9, 160e-9, 320e-9, 640e-9};
  double scattered_power_w = 84e-9;  // operating point for reports; <= 0 uses the Rayleigh estimate
  double injected_accel_m_per_s2 = 5.0;
  double injected_freq_hz = 0;  // 0: trap drive frequency
  double calibration_fringes = 4.0;
  Eigen::Index floor_segment_length = 4096;
  bool write_trajectory = false;

  void validate() const;
};

struct ScenarioConfig {
  std::string scenario_id = "default";
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  OpticalSetup setup;
  Scatterer particle;
  Beam beam;
  TrapConfig trap;
  Bath bath;
  FeedbackConfig feedback;  // filter, delay, source and the operating point of single runs
  std::vector<double> cooling_rates;  // rad/s
  std::vector<double> spring_gains;   // rad/s; one value applies to every point
  std::vector<DetectionChannel> sources{DetectionChannel::self_homodyne};
  DetectorModel detector;
  SimConfig sim;
  AnalysisConfig analysis;

  ScenarioConfig();
  /// Throws InvalidArgument naming the first violated invariant.
  void validate() const;
};

ScenarioConfig config_from_json(const Json& j);
Json config_to_json(const ScenarioConfig& cfg);
ScenarioConfig parse_config(std::string_view text);
std::string serialize_config(const ScenarioConfig& cfg);
ScenarioConfig load_config(const std::filesystem::path& path);

/// FNV-1a 64 of the serialized config, as 16 hex digits.
std::string config_hash(const ScenarioConfig& cfg);
/// Independent per-point seed derived from the scenario seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Runs fn(0..n-1) on up to `threads` workers; results keep index order.
template <typename T>
std::vector<T> parallel_map(std::size_t n, unsigned threads, const std::function<T(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
};

std::string format_number(double v);
/// RFC 4180: comma separated, CRLF-free, fields quoted when needed.
void write_csv(std::ostream& os, const Table& table);
Json lorentzian_report(const LorentzianFit& fit);
Json cooling_fit_report(const CoolingCurveFit& fit);
Json constants_json();

// ---------------------------------------------------------------------------
// Commands. Each returns its artifacts; `errors` lists non-fatal per-point
// failures (the tool exits non-zero when it is non-empty).

struct CommandOutput {
  std::vector<std::pair<std::string, Table>> tables;  // file name, table
  std::vector<std::pair<std::string, Json>> documents;
  std::vector<std::string> errors;
};

struct RunOptions {
  unsigned threads = 1;
};

CommandOutput cmd_fringe_scan(const ScenarioConfig& cfg, const RunOptions& opts = {});
CommandOutput cmd_calibrate(const ScenarioConfig& cfg, const RunOptions& opts = {});
CommandOutput cmd_imprecision_sweep(const ScenarioConfig& cfg, const RunOptions& opts = {});
CommandOutput cmd_cool_sweep(const ScenarioConfig& cfg, const RunOptions& opts = {});
CommandOutput cmd_modes(const ScenarioConfig& cfg, const RunOptions& opts = {});
CommandOutput cmd_efficiency_report(const ScenarioConfig& cfg, const RunOptions& opts = {});
CommandOutput cmd_psd(const ScenarioConfig& cfg, const RunOptions& opts = {});

/// Writes every artifact plus manifest.json into `dir`. Returns the file names.
std::vector<std::string> write_outputs(const std::filesystem::path& dir, const std::string& command,
                                       const ScenarioConfig& cfg, const CommandOutput& out);
/// Manifest for a failed run; `partial` lists artifacts already written.
void write_error_manifest(const std::filesystem::path& dir, const std::string& command,
                          const std::optional<ScenarioConfig>& cfg, const std::string& message,
                          const std::vector<std::string>& partial = {});
Json manifest_json(const std::string& command, const std::optional<ScenarioConfig>& cfg,
                   const std::vector<std::string>& files, const std::vector<std::string>& errors);

// ---------------------------------------------------------------------------
// Building blocks shared by the commands and the acceptance runner.

struct FringeScan {
  Table table;
  double period_m = 0;
  double visibility = 0;
  Calibration calibration;
};
FringeScan fringe_scan(const ScenarioConfig& cfg);

struct CalibrationRoundTrip {
  Calibration calibration;
  double injected_amplitude_m = 0;
  double recovered_amplitude_m = 0;
  double relative_error = 0;
  double delta_chi = 0;
  bool lock_lost = false;
};
CalibrationRoundTrip calibration_round_trip(const ScenarioConfig& cfg);

struct EnsembleTemperatures {
  double t_x = 0, t_y = 0;
  double stderr_x = 0, stderr_y = 0;
  int runs = 0;
  double periods_per_run = 0;  // of the slower mode
};
/// Mean mode temperatures from band power of the true q PSD around each
/// mode, averaged over `runs` independent thermal starts without feedback.
EnsembleTemperatures ensemble_mode_temperatures(const ScenarioConfig& cfg, int runs, double duration_s,
                                                unsigned threads);

struct CoolingPointResult {
  DetectionChannel source = DetectionChannel::self_homodyne;
  double gamma_fb = 0, gamma_eff = 0, alpha = 0;
  ModeSolution<double> modes;
  double temperature = 0, temperature_stderr = 0;
  double fwhm_hz = 0;
  std::string estimator;
  bool lock_lost = false;
  std::string error;
};
struct CoolingSweep {
  std::vector<CoolingPointResult> points;
  std::vector<std::pair<DetectionChannel, CoolingCurveFit>> fits;
  std::vector<std::string> errors;
};
CoolingSweep cooling_sweep(const ScenarioConfig& cfg, unsigned threads);

struct ChannelFloors {
  double self_m2_per_hz = 0;
  double forward_m2_per_hz = 0;
  double ratio_db = 0;
  Psd self_psd, forward_psd;
  bool lock_lost = false;
  Trajectory trajectory;
};
/// Locked run with the first feedback point; both channels in position units.
ChannelFloors channel_floors(const ScenarioConfig& cfg);

std::string to_string(DetectionChannel c);
DetectionChannel channel_from_string(std::string_view s);

}  // namespace shd

#include "shd/detail/parallel.hpp"

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <ostream>
#include <span>

#include "shd/error.hpp"

namespace shd {

enum class Window { rectangular, hann };

/// One-sided PSD on a uniform grid f_k = k * resolution.
struct Psd {
  Eigen::VectorXd frequencies_hz;
  Eigen::VectorXd values;  // [unit^2 / Hz]
  bool one_sided = true;
  double resolution_hz = 0;
  int segments = 0;

  Eigen::Index size() const { return values.size(); }
  /// Rectangle-rule integral over the whole grid (the mean square).
  double integral() const { return values.sum() * resolution_hz; }
};

/// Averaged modified periodogram. Scaled by 1 / (fs * sum w^2) and doubled
/// off DC/Nyquist, so white noise of one-sided PSD S is flat at S and
/// integral() equals the mean square of the input. No detrending.
Psd welch_psd(const Eigen::Ref<const Eigen::VectorXd>& series, double sample_rate_hz, Eigen::Index segment_len,
              double overlap = 0.5, Window window = Window::hann);

/// Integral of (psd - floor) over [f_lo, f_hi].
double band_power(const Psd& psd, double f_lo, double f_hi, double floor = 0.0);

struct LorentzianFit {
  double center_hz = 0;
  double fwhm_hz = 0;
  double area = 0;   // integrated peak power, <q^2>
  double floor = 0;  // white background
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // (center, fwhm, area, floor)
  int iterations = 0;

  double operator()(double f_hz) const;
  Eigen::Vector4d standard_errors() const { return covariance.diagonal().cwiseSqrt(); }
};

/// Fits floor + area (fwhm / 2pi) / ((f - f0)^2 + (fwhm / 2)^2) on the band,
/// least squares on log(psd) so every bin carries equal relative weight.
/// For Welch estimates (segments > 0) area and floor are corrected for the
/// downward bias of the log of an averaged periodogram.
LorentzianFit lorentzian_fit(const Psd& psd, double f_lo, double f_hi);

enum class CoolingFitMode { a_only, a_and_b };

struct CoolingPoint {
  double gamma_fb = 0;     // rad/s
  double temperature = 0;  // K
  double sigma = 0;        // K; 0 means relative weighting (sigma = temperature)
};

struct CoolingCurveFit {
  double a = 0;  // rad K
  double b = 0;  // K / rad
  CoolingFitMode mode = CoolingFitMode::a_only;
  bool b_external = false;
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();  // (A, B); B row zero unless fitted
  std::optional<double> t_min;      // 2 sqrt(A B)
  std::optional<double> gamma_min;  // sqrt(A / B)

  double temperature(double gamma_fb) const { return a / gamma_fb + b * gamma_fb; }
};

/// Weighted least squares of T = A / gamma (+ B gamma). In A-only mode an
/// externally supplied B is used for the derived minimum.
CoolingCurveFit cooling_curve_fit(std::span<const CoolingPoint> points, CoolingFitMode mode,
                                  std::optional<double> external_b = std::nullopt);

/// B = pi m omega_y^2 S_imp / (2 k_B).
double imprecision_heating_coefficient(double mass_kg, double omega_y, double imprecision_m2_per_hz);

struct WaistFit {
  double waist_m = 0;
  double waist_stderr_m = 0;
  double peak = 0;
  double center_m = 0;
  double offset = 0;
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // (peak, center, waist, offset)
};

/// Fits I(z) = I_pk exp(-2 (z - z0)^2 / w0^2) + offset.
WaistFit gaussian_waist_fit(const Eigen::Ref<const Eigen::VectorXd>& positions_m,
                            const Eigen::Ref<const Eigen::VectorXd>& intensities);

/// Median PSD value inside [f_lo, f_hi].
double imprecision_from_floor(const Psd& psd, double f_lo, double f_hi);

/// CSV with header f_hz,psd_m2_per_hz.
void write_psd_csv(std::ostream& os, const Psd& psd);

}  // namespace shd

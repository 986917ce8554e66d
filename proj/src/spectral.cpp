#include "shd/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <sstream>
#include <unsupported/Eigen/FFT>
#include <vector>

#include "shd/constants.hpp"
#include "shd/least_squares.hpp"

namespace shd {

namespace {

Eigen::VectorXd make_window(Eigen::Index n, Window w) {
  if (w == Window::rectangular) return Eigen::VectorXd::Ones(n);
  // Periodic Hann.
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = 0.5 - 0.5 * std::cos(constants::two_pi * i / n);
  return out;
}

std::vector<Eigen::Index> band_indices(const Psd& psd, double f_lo, double f_hi) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < psd.size(); ++i) {
    const double f = psd.frequencies_hz(i);
    if (f >= f_lo && f <= f_hi) idx.push_back(i);
  }
  return idx;
}

double median_of(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

Psd welch_psd(const Eigen::Ref<const Eigen::VectorXd>& series, double sample_rate_hz, Eigen::Index segment_len,
              double overlap, Window window) {
  if (series.size() == 0) throw InvalidArgument("welch_psd: empty series");
  if (segment_len < 2 || segment_len > series.size())
    throw InvalidArgument("welch_psd: segment length must lie in [2, series length]");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidArgument("welch_psd: overlap must lie in [0, 1)");
  if (!(sample_rate_hz > 0.0)) throw InvalidArgument("welch_psd: sample rate must be positive");

  const Eigen::Index hop = std::max<Eigen::Index>(1, segment_len - static_cast<Eigen::Index>(std::llround(overlap * segment_len)));
  const Eigen::Index n_seg = (series.size() - segment_len) / hop + 1;
  const Eigen::Index n_bins = segment_len / 2 + 1;
  const Eigen::VectorXd w = make_window(segment_len, window);
  const double norm = sample_rate_hz * w.squaredNorm();

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(segment_len));
  std::vector<std::complex<double>> spec;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_bins);
  for (Eigen::Index s = 0; s < n_seg; ++s) {
    const Eigen::Index start = s * hop;
    for (Eigen::Index i = 0; i < segment_len; ++i) buf[static_cast<std::size_t>(i)] = series(start + i) * w(i);
    fft.fwd(spec, buf);
    for (Eigen::Index k = 0; k < n_bins; ++k) acc(k) += std::norm(spec[static_cast<std::size_t>(k)]);
  }

  Psd psd;
  psd.segments = static_cast<int>(n_seg);
  psd.resolution_hz = sample_rate_hz / segment_len;
  psd.frequencies_hz = Eigen::VectorXd::LinSpaced(n_bins, 0.0, psd.resolution_hz * (n_bins - 1));
  psd.values = acc / (norm * n_seg);
  psd.values.segment(1, n_bins - 1) *= 2.0;
  if (segment_len % 2 == 0) psd.values(n_bins - 1) /= 2.0;  // Nyquist bin is unpaired
  return psd;
}

double band_power(const Psd& psd, double f_lo, double f_hi, double floor) {
  double sum = 0;
  for (Eigen::Index i : band_indices(psd, f_lo, f_hi)) sum += psd.values(i) - floor;
  return sum * psd.resolution_hz;
}

double LorentzianFit::operator()(double f_hz) const {
  const double hw = fwhm_hz / 2;
  const double d = f_hz - center_hz;
  return floor + area * (fwhm_hz / constants::two_pi) / (d * d + hw * hw);
}

LorentzianFit lorentzian_fit(const Psd& psd, double f_lo, double f_hi) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i : band_indices(psd, f_lo, f_hi))
    if (psd.values(i) > 0) idx.push_back(i);
  if (idx.size() < 8) throw InvalidArgument("lorentzian_fit: fewer than 8 positive bins in band");

  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd f(n), s(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    f(k) = psd.frequencies_hz(idx[static_cast<std::size_t>(k)]);
    s(k) = psd.values(idx[static_cast<std::size_t>(k)]);
  }
  const Eigen::VectorXd log_s = s.array().log();

  Eigen::Index peak;
  const double s_peak = s.maxCoeff(&peak);
  std::vector<double> sorted(s.data(), s.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const double floor0 = std::max(sorted[sorted.size() / 10], s_peak * 1e-12);
  const double df = psd.resolution_hz;
  const double area0 = std::max((s.array() - floor0).cwiseMax(0.0).sum() * df, s_peak * df);
  const double fwhm0 = std::max(2.0 * area0 / (constants::pi * std::max(s_peak - floor0, 1e-300)), df);

  // Centre is fitted relative to the band midpoint so all parameters are O(1..10).
  const double f_mid = 0.5 * (f(0) + f(n - 1));
  auto model_log = [&](const Eigen::Vector4d& p) {
    const double fwhm = std::exp(p(1)), area = std::exp(p(2)), fl = std::exp(p(3));
    const double hw2 = 0.25 * fwhm * fwhm;
    Eigen::VectorXd out(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double d = f(k) - (f_mid + p(0));
      out(k) = std::log(fl + area * (fwhm / constants::two_pi) / (d * d + hw2));
    }
    return out;
  };
  auto residuals = [&](const Eigen::Vector4d& p) -> Eigen::VectorXd { return model_log(p) - log_s; };

  Eigen::Vector4d p0(f(peak) - f_mid, std::log(fwhm0), std::log(area0), std::log(floor0));
  LeastSquaresOptions opts;
  opts.max_iterations = 500;
  const auto res = levenberg_marquardt<4>(residuals, p0, opts);

  LorentzianFit fit;
  fit.center_hz = f_mid + res.params(0);
  fit.fwhm_hz = std::exp(res.params(1));
  fit.area = std::exp(res.params(2));
  fit.floor = std::exp(res.params(3));
  fit.iterations = res.iterations;
  // A Welch bin is ~ S Gamma(K, 1/K), so log(psd) sits psi(K) - ln K below
  // log S. Hann at 50% overlap gives K ~ segments / 1.056.
  if (psd.segments > 0) {
    const double k = psd.segments / 1.056;
    const double log_bias = -1.0 / (2 * k) - 1.0 / (12 * k * k) + 1.0 / (120 * k * k * k * k);
    fit.area *= std::exp(-log_bias);
    fit.floor *= std::exp(-log_bias);
  }
  const Eigen::Vector4d jac(1.0, fit.fwhm_hz, fit.area, fit.floor);
  fit.covariance = jac.asDiagonal() * res.covariance * jac.asDiagonal();
  return fit;
}

CoolingCurveFit cooling_curve_fit(std::span<const CoolingPoint> points, CoolingFitMode mode,
                                  std::optional<double> external_b) {
  if (points.size() < 3) throw InvalidArgument("cooling_curve_fit: at least 3 points required");
  const int n_par = (mode == CoolingFitMode::a_and_b) ? 2 : 1;
  Eigen::MatrixXd design(static_cast<Eigen::Index>(points.size()), n_par);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& pt = points[i];
    if (!(pt.gamma_fb > 0)) throw InvalidArgument("cooling_curve_fit: cooling rates must be positive");
    const double sigma = pt.sigma > 0 ? pt.sigma : pt.temperature;
    if (!(sigma > 0)) throw InvalidArgument("cooling_curve_fit: temperatures must be positive");
    const auto r = static_cast<Eigen::Index>(i);
    design(r, 0) = 1.0 / (pt.gamma_fb * sigma);
    if (n_par == 2) design(r, 1) = pt.gamma_fb / sigma;
    rhs(r) = pt.temperature / sigma;
  }
  // Columns are equilibrated first; A and B differ by many decades.
  const Eigen::VectorXd scale = design.colwise().norm().transpose();
  if ((scale.array() == 0).any()) throw FitFailure("cooling_curve_fit: degenerate design matrix", "zero column");
  const Eigen::MatrixXd scaled = design * scale.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double cond = svd.singularValues()(0) / svd.singularValues()(n_par - 1);
  if (!std::isfinite(cond) || cond > 1e7) {
    std::ostringstream diag;
    diag << "condition number " << cond;
    throw FitFailure("cooling_curve_fit: degenerate design matrix", diag.str());
  }
  const Eigen::VectorXd coef = svd.solve(rhs).cwiseQuotient(scale);
  const Eigen::VectorXd resid = design * coef - rhs;
  const double dof = static_cast<double>(points.size()) - n_par;
  const Eigen::MatrixXd scaled_inv = (scaled.transpose() * scaled).inverse();
  const Eigen::MatrixXd cov =
      scale.cwiseInverse().asDiagonal() * scaled_inv * scale.cwiseInverse().asDiagonal() * (resid.squaredNorm() / dof);

  CoolingCurveFit fit;
  fit.mode = mode;
  fit.a = coef(0);
  fit.covariance(0, 0) = cov(0, 0);
  if (n_par == 2) {
    fit.b = coef(1);
    fit.covariance(0, 1) = fit.covariance(1, 0) = cov(0, 1);
    fit.covariance(1, 1) = cov(1, 1);
  } else if (external_b) {
    fit.b = *external_b;
    fit.b_external = true;
  }
  if (fit.a > 0 && fit.b > 0) {
    fit.t_min = 2.0 * std::sqrt(fit.a * fit.b);
    fit.gamma_min = std::sqrt(fit.a / fit.b);
  }
  return fit;
}

double imprecision_heating_coefficient(double mass_kg, double omega_y, double imprecision_m2_per_hz) {
  return constants::pi * mass_kg * omega_y * omega_y * imprecision_m2_per_hz / (2.0 * constants::k_B);
}

WaistFit gaussian_waist_fit(const Eigen::Ref<const Eigen::VectorXd>& positions_m,
                            const Eigen::Ref<const Eigen::VectorXd>& intensities) {
  const Eigen::Index n = positions_m.size();
  if (n != intensities.size()) throw InvalidArgument("gaussian_waist_fit: size mismatch");
  if (n < 5) throw InvalidArgument("gaussian_waist_fit: at least 5 samples required");

  // Fit in normalized coordinates so the problem is scale invariant.
  const double z_mid = 0.5 * (positions_m.maxCoeff() + positions_m.minCoeff());
  const double z_scale = 0.5 * (positions_m.maxCoeff() - positions_m.minCoeff());
  const double i_scale = intensities.cwiseAbs().maxCoeff();
  if (!(z_scale > 0) || !(i_scale > 0)) throw InvalidArgument("gaussian_waist_fit: degenerate samples");
  const Eigen::VectorXd z = (positions_m.array() - z_mid) / z_scale;
  const Eigen::VectorXd y = intensities / i_scale;

  Eigen::Index imax;
  const double y_max = y.maxCoeff(&imax);
  const double y_min = y.minCoeff();
  // Width guess from the samples above the 1/e^2 level.
  const double level = y_min + (y_max - y_min) * std::exp(-2.0);
  double z_lo = z(imax), z_hi = z(imax);
  for (Eigen::Index i = 0; i < n; ++i)
    if (y(i) >= level) {
      z_lo = std::min(z_lo, z(i));
      z_hi = std::max(z_hi, z(i));
    }
  const double w_guess = std::max(0.5 * (z_hi - z_lo), 2.0 / static_cast<double>(n));

  auto residuals = [&](const Eigen::Vector4d& p) -> Eigen::VectorXd {
    return (p(0) * (-2.0 * (z.array() - p(1)).square() / (p(2) * p(2))).exp() + p(3)).matrix() - y;
  };
  const Eigen::Vector4d p0(y_max - y_min, z(imax), w_guess, y_min);
  const auto res = levenberg_marquardt<4>(residuals, p0);

  WaistFit fit;
  fit.peak = res.params(0) * i_scale;
  fit.center_m = z_mid + res.params(1) * z_scale;
  fit.waist_m = std::abs(res.params(2)) * z_scale;
  fit.offset = res.params(3) * i_scale;
  const Eigen::Vector4d jac(i_scale, z_scale, z_scale, i_scale);
  fit.covariance = jac.asDiagonal() * res.covariance * jac.asDiagonal();
  fit.waist_stderr_m = std::sqrt(fit.covariance(2, 2));
  return fit;
}

double imprecision_from_floor(const Psd& psd, double f_lo, double f_hi) {
  std::vector<double> vals;
  for (Eigen::Index i : band_indices(psd, f_lo, f_hi)) vals.push_back(psd.values(i));
  if (vals.empty()) throw InvalidArgument("imprecision_from_floor: no bins in band");
  return median_of(std::move(vals));
}

void write_psd_csv(std::ostream& os, const Psd& psd) {
  os << "f_hz,psd_m2_per_hz\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < psd.size(); ++i) os << psd.frequencies_hz(i) << ',' << psd.values(i) << '\n';
}

}  // namespace shd

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <random>
#include <sstream>
#include <vector>

#include "shd/constants.hpp"
#include "shd/spectral.hpp"

using namespace shd;
using doctest::Approx;

namespace {

Eigen::VectorXd gaussian_series(Eigen::Index n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

Psd synthetic_lorentzian(double f0, double fwhm, double area, double floor) {
  Psd p;
  p.resolution_hz = 2.0;
  const int n = 4000;
  p.frequencies_hz = Eigen::VectorXd::LinSpaced(n, 0, (n - 1) * p.resolution_hz);
  LorentzianFit truth;
  truth.center_hz = f0;
  truth.fwhm_hz = fwhm;
  truth.area = area;
  truth.floor = floor;
  p.values = p.frequencies_hz.unaryExpr([&](double f) { return truth(f); });
  p.segments = 1;
  return p;
}

}  // namespace

TEST_CASE("welch: sinusoid power") {
  const double fs = 1e4, f = 1234.5, a = 0.7;
  const Eigen::Index n = 1 << 18;
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = a * std::sin(constants::two_pi * f * i / fs + 0.3);
  for (Window w : {Window::hann, Window::rectangular}) {
    const Psd p = welch_psd(s, fs, 4096, 0.5, w);
    const double peak = band_power(p, f - 40, f + 40);
    if (w == Window::hann) CHECK(peak == Approx(a * a / 2).epsilon(0.01));
    CHECK(p.integral() == Approx(a * a / 2).epsilon(0.02));
  }
}

TEST_CASE("welch: white noise is flat at its one-sided PSD") {
  const double fs = 2e4, s_target = 3e-24;
  const double sigma = std::sqrt(s_target * fs / 2);
  const Eigen::VectorXd x = gaussian_series(1 << 21, sigma, 11);
  const Psd p = welch_psd(x, fs, 2048);
  CHECK(p.segments >= 100);
  CHECK(p.one_sided);
  CHECK(p.resolution_hz == Approx(fs / 2048));
  const Eigen::VectorXd interior = p.values.segment(1, p.size() - 2);
  CHECK(interior.mean() == Approx(s_target).epsilon(0.01));
  for (Eigen::Index b = 0; b + 32 <= interior.size(); b += 32)
    CHECK(interior.segment(b, 32).mean() == Approx(s_target).epsilon(0.03));
  CHECK((p.values.array() >= 0).all());
}

TEST_CASE("welch: DC input") {
  const Eigen::VectorXd dc = Eigen::VectorXd::Constant(8192, 2.5);
  const Psd rect = welch_psd(dc, 100.0, 1024, 0.5, Window::rectangular);
  CHECK(rect.values(0) * rect.resolution_hz == Approx(6.25).epsilon(1e-12));
  CHECK(rect.values.tail(rect.size() - 1).cwiseAbs().maxCoeff() < 1e-20);
  // The Hann window leaks DC into the first bin only; the total is kept.
  const Psd hann = welch_psd(dc, 100.0, 1024);
  CHECK(hann.integral() == Approx(6.25).epsilon(1e-12));
  CHECK(hann.values.tail(hann.size() - 2).cwiseAbs().maxCoeff() < 1e-20);
}

TEST_CASE("welch: Parseval on coloured stationary signals") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (double phi : {0.0, 0.5, 0.9, 0.99}) {
    Eigen::VectorXd x(1 << 19);
    double prev = 0;
    for (auto& v : x) v = prev = phi * prev + g(rng);
    const double ms = x.squaredNorm() / x.size();
    CHECK(welch_psd(x, 1.0, 1024).integral() == Approx(ms).epsilon(0.02));
  }
}

TEST_CASE("welch: argument checks") {
  CHECK_THROWS_AS(welch_psd(Eigen::VectorXd(), 1.0, 4), InvalidArgument);
  CHECK_THROWS_AS(welch_psd(Eigen::VectorXd::Ones(8), 1.0, 16), InvalidArgument);
  CHECK_THROWS_AS(welch_psd(Eigen::VectorXd::Ones(64), 1.0, 16, 1.0), InvalidArgument);
}

TEST_CASE("lorentzian_fit recovers exact synthetic parameters") {
  const double f0 = 3200, fwhm = 35, area = 4.2e-18, floor = 3e-24;
  const Psd p = synthetic_lorentzian(f0, fwhm, area, floor);
  const auto fit = lorentzian_fit(p, 2600, 3800);
  CHECK(fit.center_hz == Approx(f0).epsilon(1e-3));
  CHECK(fit.fwhm_hz == Approx(fwhm).epsilon(1e-3));
  CHECK(fit.area == Approx(area).epsilon(1e-3));
  CHECK(fit.floor == Approx(floor).epsilon(1e-3));
  CHECK((fit.standard_errors().array() >= 0).all());

  // The model integrates to the area above the floor.
  LorentzianFit peak = fit;
  peak.floor = 0;
  double sum = 0;
  for (double f = f0 - 2e5; f < f0 + 2e5; f += 0.05) sum += peak(f) * 0.05;
  CHECK(sum == Approx(fit.area).epsilon(1e-3));
}

TEST_CASE("lorentzian_fit needs bins") {
  const Psd p = synthetic_lorentzian(3200, 35, 1e-18, 1e-24);
  CHECK_THROWS_AS(lorentzian_fit(p, 3200, 3205), InvalidArgument);
}

TEST_CASE("cooling_curve_fit recovers exact points") {
  const double a = 112.0, b = 3.4e-10;
  std::vector<CoolingPoint> pts;
  for (int i = 0; i < 12; ++i) {
    const double g = constants::two_pi * 100.0 * std::pow(1.7, i);
    pts.push_back({g, a / g + b * g, 0});
  }
  const auto ab = cooling_curve_fit(pts, CoolingFitMode::a_and_b);
  CHECK(ab.a == Approx(a).epsilon(1e-6));
  CHECK(ab.b == Approx(b).epsilon(1e-6));
  REQUIRE(ab.t_min);
  CHECK(*ab.t_min == Approx(2 * std::sqrt(a * b)).epsilon(1e-6));
  CHECK(*ab.gamma_min == Approx(std::sqrt(a / b)).epsilon(1e-6));

  std::vector<CoolingPoint> low;
  for (int i = 0; i < 6; ++i) {
    const double g = constants::two_pi * 10.0 * (i + 1);
    low.push_back({g, a / g, 0});
  }
  const auto ao = cooling_curve_fit(low, CoolingFitMode::a_only);
  CHECK(ao.a == Approx(a).epsilon(1e-9));
  CHECK_FALSE(ao.t_min);
}

TEST_CASE("cooling_curve_fit with the imprecision-limited B") {
  const double b = imprecision_heating_coefficient(2.0e-17, constants::two_pi * 3.2e3, 3.0e-24);
  std::vector<CoolingPoint> pts;
  for (int i = 1; i <= 5; ++i) {
    const double g = constants::two_pi * 20.0 * i;
    pts.push_back({g, 112.0 / g, 0});
  }
  const auto fit = cooling_curve_fit(pts, CoolingFitMode::a_only, b);
  REQUIRE(fit.t_min);
  CHECK(fit.b_external);
  CHECK(*fit.t_min == Approx(1.112e-3).epsilon(1e-3));
  CHECK(std::abs(*fit.t_min - 1e-3) / 1e-3 <= 0.15);
  CHECK(std::abs(*fit.gamma_min / constants::two_pi - 31e3) / 31e3 <= 0.15);
}

TEST_CASE("cooling curve has an interior minimum when B > 0") {
  const double a = 105, b = 6.5e-5;
  std::vector<CoolingPoint> pts;
  for (int i = 0; i < 10; ++i) {
    const double g = 200.0 * std::pow(1.6, i);
    pts.push_back({g, a / g + b * g, 0});
  }
  const auto fit = cooling_curve_fit(pts, CoolingFitMode::a_and_b);
  REQUIRE(fit.gamma_min);
  CHECK(*fit.gamma_min > pts.front().gamma_fb);
  CHECK(*fit.gamma_min < pts.back().gamma_fb);
  CHECK(fit.temperature(*fit.gamma_min) < fit.temperature(pts.front().gamma_fb));
  CHECK(fit.temperature(*fit.gamma_min) < fit.temperature(pts.back().gamma_fb));
}

TEST_CASE("A-only residuals grow past a third of gamma_min") {
  const double a = 112, b = 3.4e-10;
  const double gmin = std::sqrt(a / b);
  std::vector<CoolingPoint> low, all;
  for (int i = 0; i < 16; ++i) {
    const double g = gmin * 1e-3 * std::pow(1.6, i);
    const CoolingPoint p{g, a / g + b * g, 0};
    all.push_back(p);
    if (g < gmin / 10) low.push_back(p);
  }
  const auto fit = cooling_curve_fit(low, CoolingFitMode::a_only);
  for (const auto& p : all) {
    const double rel = (p.temperature - fit.temperature(p.gamma_fb)) / p.temperature;
    if (p.gamma_fb < gmin / 10) CHECK(std::abs(rel) < 0.02);
    if (p.gamma_fb > gmin / 3) CHECK(rel > 0.05);
  }
}

TEST_CASE("cooling_curve_fit failures") {
  std::vector<CoolingPoint> two{{1, 1, 0}, {2, 0.5, 0}};
  CHECK_THROWS_AS(cooling_curve_fit(two, CoolingFitMode::a_only), InvalidArgument);
  std::vector<CoolingPoint> same{{5, 1, 0}, {5, 1, 0}, {5, 1, 0}};
  CHECK_THROWS_AS(cooling_curve_fit(same, CoolingFitMode::a_and_b), FitFailure);
}

TEST_CASE("gaussian waist fit") {
  const double w0 = 0.29e-3;
  const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(61, -2 * w0, 2 * w0);
  const Eigen::VectorXd exact = z.unaryExpr([&](double v) { return 3.0 * std::exp(-2 * v * v / (w0 * w0)) + 0.1; });
  const auto fit = gaussian_waist_fit(z, exact);
  CHECK(std::abs(2 * fit.waist_m - 0.58e-3) <= std::max(fit.waist_stderr_m * 2, 1e-12));
  CHECK(fit.waist_m == Approx(w0).epsilon(1e-8));
  const auto scaled = gaussian_waist_fit(z, 10 * exact);
  CHECK(std::abs(scaled.waist_m - fit.waist_m) / fit.waist_m < 1e-10);

  // Monte Carlo with 5% additive noise: the estimator is unbiased to 3% and
  // its reported standard error covers the scatter.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 0.05 * 3.0);
  double sum = 0;
  int covered = 0;
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd noisy = exact;
    for (auto& v : noisy) v += g(rng);
    const auto f = gaussian_waist_fit(z, noisy);
    sum += f.waist_m;
    if (std::abs(f.waist_m - w0) <= 2 * f.waist_stderr_m) ++covered;
  }
  CHECK(std::abs(sum / 100 - w0) / w0 <= 0.03);
  CHECK(covered >= 90);
  CHECK_THROWS_AS(gaussian_waist_fit(z.head(4), exact.head(4)), InvalidArgument);
}

TEST_CASE("imprecision_from_floor") {
  const Psd p = synthetic_lorentzian(3200, 35, 1e-18, 3e-24);
  CHECK(imprecision_from_floor(p, 5000, 7000) == Approx(3e-24).epsilon(1e-3));
  CHECK_THROWS_AS(imprecision_from_floor(p, 1e6, 2e6), InvalidArgument);
  Eigen::VectorXd quiet(1 << 14);
  for (Eigen::Index i = 0; i < quiet.size(); ++i) quiet(i) = 1e-9 * std::sin(constants::two_pi * 500.0 * i / 1e4);
  const Psd q = welch_psd(quiet, 1e4, 1024);
  CHECK(imprecision_from_floor(q, 2000, 4000) < 1e-3 * 3e-24);
}

TEST_CASE("psd csv") {
  const Psd p = synthetic_lorentzian(3200, 35, 1e-18, 3e-24);
  std::ostringstream os;
  write_psd_csv(os, p);
  const std::string s = os.str();
  CHECK(s.rfind("f_hz,psd_m2_per_hz\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == p.size() + 1);
}

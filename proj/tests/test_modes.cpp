#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "shd/modes.hpp"

using namespace shd;
using doctest::Approx;

namespace {

const double wx = constants::two_pi * 2.1e3;
const double wy = constants::two_pi * 3.2e3;
const Eigen::Vector2d q_hat = Eigen::Vector2d(1, 1).normalized();

struct OracleModes {
  Eigen::Vector2d nu;
  Eigen::Matrix2d vecs;  // columns ascending
};

OracleModes oracle_modes(double ax, double ay, double alpha) {
  Eigen::Matrix2d m;
  const double a2 = alpha * alpha;
  m << ax * ax + a2, a2, a2, ay * ay + a2;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(m);
  return {es.eigenvalues().cwiseSqrt(), es.eigenvectors()};
}

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

TEST_CASE("no feedback leaves the trap modes") {
  const auto m = radial_modes(wx, wy, 0.0);
  CHECK(m.nu_x == wx);
  CHECK(m.nu_y == wy);
  CHECK(m.eigvec_x.isApprox(Eigen::Vector2d::UnitX()));
  CHECK(m.eigvec_y.isApprox(Eigen::Vector2d::UnitY()));
  CHECK(m.theta_fb == Approx(constants::pi / 4).epsilon(1e-14));
}

TEST_CASE("degenerate trap") {
  const double w = wx, a = constants::two_pi * 700;
  const auto m = radial_modes(w, w, a);
  CHECK(m.nu_x == Approx(w).epsilon(1e-14));
  CHECK(m.nu_y * m.nu_y == Approx(w * w + 2 * a * a).epsilon(1e-14));
  CHECK(std::abs(cross2(m.eigvec_y, q_hat)) < 1e-12);
  CHECK(m.theta_fb < 1e-7);
  CHECK(spring_gain_from_frequencies(m.nu_x, m.nu_y, w, w) == Approx(a).epsilon(1e-12));
}

TEST_CASE("closed form against the symmetric eigensolver") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> freq(constants::two_pi * 100, constants::two_pi * 20e3);
  std::uniform_real_distribution<double> gain(0, constants::two_pi * 20e3);
  for (int i = 0; i < 1000; ++i) {
    const double ax = freq(rng), ay = freq(rng), alpha = gain(rng);
    const auto m = radial_modes(ax, ay, alpha);
    const auto o = oracle_modes(ax, ay, alpha);
    CHECK(m.nu_x <= m.nu_y);
    CHECK(m.nu_x == Approx(o.nu(0)).epsilon(1e-12));
    CHECK(m.nu_y == Approx(o.nu(1)).epsilon(1e-12));
    CHECK(std::abs(cross2(m.eigvec_y, o.vecs.col(1))) < 1e-10);
    CHECK(std::abs(cross2(m.eigvec_x, o.vecs.col(0))) < 1e-10);
    CHECK(std::abs(m.eigvec_x.dot(m.eigvec_y)) < 1e-10);
    CHECK(m.theta_fb >= 0);
    CHECK(m.theta_fb <= constants::pi / 4 + 1e-12);
    const double th = std::acos(std::min(1.0, std::abs(o.vecs.col(1).dot(q_hat))));
    CHECK(std::abs(m.theta_fb - th) < 1e-10);

    const double a2 = alpha * alpha;
    const double tr = 2 * a2 + ax * ax + ay * ay;
    const double det = (ax * ax + a2) * (ay * ay + a2) - a2 * a2;
    CHECK(m.nu_x * m.nu_x + m.nu_y * m.nu_y == Approx(tr).epsilon(1e-12));
    CHECK(m.nu_x * m.nu_x * m.nu_y * m.nu_y == Approx(det).epsilon(1e-12));

    // Component formula for the unnormalized vector (c, 1).
    const Eigen::Vector2d c = closed_form_eigenvector(m.nu_y * m.nu_y, ay, alpha);
    if (alpha > 1e-2 * std::max(ax, ay)) CHECK(std::abs(cross2(c.normalized(), m.eigvec_y)) < 1e-8);

    if (ax != ay && alpha > 1e-2 * std::max(ax, ay))
      CHECK(spring_gain_from_frequencies(m.nu_x, m.nu_y, ax, ay) == Approx(alpha).epsilon(1e-10));
  }
}

TEST_CASE("theta_fb decreases with gain") {
  double prev = radial_modes(wx, wy, 0.0).theta_fb;
  for (int i = 1; i <= 200; ++i) {
    const double th = radial_modes(wx, wy, constants::two_pi * 50.0 * i).theta_fb;
    CHECK(th < prev);
    CHECK(prev - th < 0.05);
    prev = th;
  }
  CHECK(radial_modes(wx, wy, constants::two_pi * 1e6).theta_fb < 1e-3);
}

TEST_CASE("spring gain inversion") {
  CHECK(spring_gain_from_frequencies(wx, wy, wx, wy) == 0.0);
  CHECK_THROWS_AS(spring_gain_from_frequencies(0.9 * wx, wy, wx, wy), InconsistentSpectrum);
}

TEST_CASE("project_psd") {
  Eigen::VectorXd sx = Eigen::VectorXd::LinSpaced(32, 1, 2);
  Eigen::VectorXd sy = Eigen::VectorXd::LinSpaced(32, 5, 3);
  CHECK(project_psd(sx, sy, 0.0).isApprox(sy));
  CHECK(project_psd(sx, sy, constants::pi / 4).isApprox(0.5 * (sx + sy)));
  const double th = 0.3;
  const Eigen::VectorXd p = project_psd(sx, sy, th);
  CHECK(p.sum() == Approx(std::pow(std::sin(th), 2) * sx.sum() + std::pow(std::cos(th), 2) * sy.sum()));
  CHECK_THROWS_AS(project_psd(sx, sy.head(10), th), InvalidArgument);
}

TEST_CASE("mode temperature") {
  const double m = 2.0e-17, t = 0.37;
  const double var = constants::k_B * t / (m * wy * wy);
  CHECK(mode_temperature(m, wy, var, 0.0) == Approx(t).epsilon(1e-14));
  const double th = std::acos(std::sqrt(0.5) * std::cos(0.2));
  CHECK(mode_temperature(m, wy, var, th) == Approx(2 * mode_temperature(m, wy, var, 0.2)).epsilon(1e-12));
  CHECK_THROWS_AS(mode_temperature(m, wy, var, constants::pi / 2), DivisionError);
}

TEST_CASE("phonon occupation") {
  const double w = 1e5;
  const double t1 = constants::hbar * w / (constants::k_B * std::log(2.0));
  CHECK(phonon_occupation(t1, w) == Approx(1.0).epsilon(1e-13));
  CHECK(phonon_occupation(0.0, w) == 0.0);
  CHECK(phonon_occupation(1e-9, w) < 1e-100);
  CHECK_THROWS_AS(phonon_occupation(-1.0, w), InvalidArgument);
  const double n = phonon_occupation(1e-3, wy);
  CHECK(n == Approx(6511).epsilon(1e-3));
  CHECK(n > 1e3);
  CHECK(n < 1e4);
  const double hot = 1e4 * constants::hbar * w / constants::k_B;
  CHECK(phonon_occupation(hot, w) == Approx(1e4 - 0.5).epsilon(1e-6));
}

TEST_CASE("trap config validation") {
  TrapConfig t;
  CHECK_NOTHROW(t.validate());
  t.stability_q = 1.2;
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
}

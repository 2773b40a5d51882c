#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "switchts/rng.hpp"
#include "switchts/ssm.hpp"

using namespace switchts;

namespace {

DiscretizedSSM random_diagonal_discrete(Rng& rng, int n) {
  CVec a(n), b(n), c(n);
  for (int i = 0; i < n; ++i) {
    const double rho = rng.uniform(0.3, 0.98);
    const double theta = rng.uniform(-3.0, 3.0);
    a(i) = std::polar(rho, theta);
    b(i) = Complex(rng.normal(), rng.normal());
    c(i) = Complex(rng.normal(), rng.normal());
  }
  return DiscretizedSSM::diagonal(a, b, c, 0.0);
}

double max_abs_diff(const CVec& x, const CVec& y) {
  return (x - y).cwiseAbs().maxCoeff();
}

} // namespace

TEST_CASE("hippo_legs matches the casewise definition") {
  const Mat a1 = hippo_legs(1);
  REQUIRE(a1.rows() == 1);
  CHECK(a1(0, 0) == Catch::Approx(-1.0).margin(1e-15));

  const Mat a2 = hippo_legs(2);
  CHECK(a2(0, 0) == Catch::Approx(-1.0).margin(1e-15));
  CHECK(a2(0, 1) == 0.0);
  CHECK(a2(1, 0) == Catch::Approx(-std::sqrt(3.0)).margin(1e-15));
  CHECK(a2(1, 1) == Catch::Approx(-2.0).margin(1e-15));

  const Mat a6 = hippo_legs(6);
  for (int n = 0; n < 6; ++n) {
    CHECK(a6(n, n) == Catch::Approx(-(n + 1.0)).margin(1e-15));
    for (int k = n + 1; k < 6; ++k) CHECK(a6(n, k) == 0.0);
  }
  CHECK_THROWS_AS(hippo_legs(0), std::invalid_argument);
}

TEST_CASE("s4_init produces the skewed normal part and sqrt-odd input vector") {
  const auto [a, b] = s4_init(2);
  CHECK(b(0) == Catch::Approx(1.0).margin(1e-15));
  CHECK(b(1) == Catch::Approx(std::sqrt(3.0)).margin(1e-15));
  CHECK(a(0, 0) == Catch::Approx(-0.5).margin(1e-15));
  CHECK(a(1, 1) == Catch::Approx(-0.5).margin(1e-15));
  CHECK(a(1, 0) == Catch::Approx(-std::sqrt(3.0)).margin(1e-15));
  CHECK(a(0, 1) == Catch::Approx(std::sqrt(3.0)).margin(1e-15));

  const auto [a4, b4] = s4_init(4);
  // Off-diagonal part is skew-symmetric, so every eigenvalue has real part -1/2.
  const Mat sym = a4 + a4.transpose();
  CHECK((sym + Mat::Identity(4, 4)).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-14));
  CHECK_THROWS_AS(s4_init(0), std::invalid_argument);
}

TEST_CASE("s4d_inv_init matches the inverse-law imaginary parts") {
  const CVec lam = s4d_inv_init(4);
  CHECK(lam(0).real() == Catch::Approx(-0.5).margin(1e-15));
  CHECK(lam(0).imag() == Catch::Approx((4.0 / M_PI) * 3.0).margin(1e-12));
  CHECK(lam(3).imag() == Catch::Approx((4.0 / M_PI) * (4.0 / 7.0 - 1.0)).margin(1e-12));
  for (int n = 0; n < 4; ++n) CHECK(lam(n).real() == -0.5);

  const CVec lam9 = s4d_inv_init(9);
  for (int n = 0; n < 9; ++n) CHECK(lam9(n).real() == -0.5);
}

TEST_CASE("bilinear discretization: scalar example and C passthrough") {
  CVec lam(1), b(1), c(1);
  lam(0) = -1.0;
  b(0) = 1.0;
  c(0) = Complex(2.0, -0.5);
  const auto ssm = ContinuousSSM::diagonal(lam, b, c, 0.0);
  const auto d = discretize(ssm, 0.5, Discretization::Bilinear);
  CHECK(d.a_diag(0).real() == Catch::Approx(0.6).margin(1e-15));
  CHECK(d.b(0).real() == Catch::Approx(0.4).margin(1e-15));
  CHECK(d.c(0) == c(0)); // exact, not approximate

  const auto d_small = discretize(ssm, 1e-12, Discretization::Bilinear);
  CHECK(std::abs(d_small.a_diag(0) - 1.0) < 1e-11);
  CHECK(std::abs(d_small.b(0)) < 1e-11);
}

TEST_CASE("zoh discretization: scalar example and degenerate eigenvalue") {
  CVec lam(1), b(1), c(1);
  lam(0) = -1.0;
  b(0) = 1.0;
  c(0) = 1.0;
  const auto ssm = ContinuousSSM::diagonal(lam, b, c, 0.0);
  const auto d = discretize(ssm, 0.5, Discretization::Zoh);
  CHECK(d.a_diag(0).real() == Catch::Approx(std::exp(-0.5)).margin(1e-15));
  CHECK(d.b(0).real() == Catch::Approx((std::exp(-0.5) - 1.0) / -1.0).margin(1e-15));

  // lambda = 0 is rejected at construction already (Re >= 0); build the
  // degenerate case through a dense detour is not possible for zoh, so check
  // the construction-time guard here.
  CVec lam0(1);
  lam0(0) = 0.0;
  CHECK_THROWS_AS(ContinuousSSM::diagonal(lam0, b, c, 0.0), std::invalid_argument);
}

TEST_CASE("bilinear discretization failure on singular I - delta/2 A") {
  CMat a(1, 1);
  a(0, 0) = 4.0; // delta = 0.5 makes I - delta/2 A exactly zero
  CVec b(1), c(1);
  b(0) = 1.0;
  c(0) = 1.0;
  const auto ssm = ContinuousSSM::dense(a, b, c, 0.0);
  CHECK_THROWS_AS(discretize(ssm, 0.5, Discretization::Bilinear), std::runtime_error);
  CHECK_THROWS_AS(discretize(ssm, 0.0, Discretization::Bilinear), std::invalid_argument);
}

TEST_CASE("kernel_direct scalar arithmetic") {
  const auto d = DiscretizedSSM::scalar(0.6, 0.4, 2.0, 0.0);
  const auto k = kernel_direct(d, 3);
  CHECK(k.values(0).real() == Catch::Approx(0.8).margin(1e-15));
  CHECK(k.values(1).real() == Catch::Approx(0.48).margin(1e-15));
  CHECK(k.values(2).real() == Catch::Approx(0.288).margin(1e-15));

  const auto zero_c = DiscretizedSSM::scalar(0.7, 1.0, 0.0, 0.0);
  const auto kz = kernel_direct(zero_c, 5);
  CHECK(kz.values.cwiseAbs().maxCoeff() == 0.0);

  const auto k1 = kernel_direct(d, 1);
  CHECK(k1.length == 1);
  CHECK(k1.values(0).real() == Catch::Approx(0.8).margin(1e-15));
}

TEST_CASE("kernel first tap equals C_bar B_bar on every path") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = random_diagonal_discrete(rng, 8);
    const Complex cb = (d.c.array() * d.b.array()).sum();
    const auto kd = kernel_direct(d, 4);
    const auto kv = kernel_vandermonde(d, 4);
    CHECK(std::abs(kd.values(0) - cb) <= 1e-12 * std::max(1.0, std::abs(cb)));
    CHECK(std::abs(kv.values(0) - cb) <= 1e-12 * std::max(1.0, std::abs(cb)));
  }
}

TEST_CASE("kernel_vandermonde agrees with kernel_direct") {
  const auto single = DiscretizedSSM::scalar(0.9, 0.5, 1.5, 0.0);
  const auto kd1 = kernel_direct(single, 8);
  const auto kv1 = kernel_vandermonde(single, 8);
  CHECK(max_abs_diff(kd1.values, kv1.values) < 1e-14);

  Rng rng(7);
  const auto d = random_diagonal_discrete(rng, 16);
  const auto kd = kernel_direct(d, 256);
  const auto kv = kernel_vandermonde(d, 256);
  const double scale = kd.values.cwiseAbs().maxCoeff();
  CHECK(max_abs_diff(kd.values, kv.values) <= 1e-10 * std::max(1.0, scale));

  // Nilpotent system: A_bar = 0 gives (sum C B, 0, 0).
  CVec a = CVec::Zero(3), b(3), c(3);
  b << 1.0, 2.0, 3.0;
  c << 1.0, 1.0, -1.0;
  const auto nil = DiscretizedSSM::diagonal(a, b, c, 0.0);
  const auto kn = kernel_vandermonde(nil, 3);
  CHECK(kn.values(0).real() == Catch::Approx(0.0).margin(1e-15));
  CHECK(std::abs(kn.values(1)) == 0.0);
  CHECK(std::abs(kn.values(2)) == 0.0);

  const auto dense = DiscretizedSSM::dense(CMat::Identity(2, 2), CVec::Ones(2), CVec::Ones(2));
  CHECK_THROWS_AS(kernel_vandermonde(dense, 4), std::invalid_argument);
}

TEST_CASE("apply_recurrent: worked example, impulse, zeros, empty input") {
  const auto d = DiscretizedSSM::scalar(0.6, 0.4, 2.0, 1.0);
  Vec u(2);
  u << 1.0, 1.0;
  const Vec y = apply_recurrent(d, u);
  CHECK(y(0) == Catch::Approx(1.8).margin(1e-15));
  CHECK(y(1) == Catch::Approx(2.28).margin(1e-15));

  const auto d0 = DiscretizedSSM::scalar(0.6, 0.4, 2.0, 0.0);
  Vec impulse = Vec::Zero(3);
  impulse(0) = 1.0;
  const Vec resp = apply_recurrent(d0, impulse);
  const auto k = kernel_direct(d0, 3);
  for (int i = 0; i < 3; ++i) CHECK(resp(i) == Catch::Approx(k.values(i).real()).margin(1e-15));

  const Vec zeros = Vec::Zero(5);
  CHECK(apply_recurrent(d, zeros).cwiseAbs().maxCoeff() == 0.0);

  CHECK(apply_recurrent(d, Vec()).size() == 0);
}

TEST_CASE("apply_recurrent is linear in the input") {
  Rng rng(3);
  const auto d = random_diagonal_discrete(rng, 6);
  auto with_d = d;
  with_d.d = 0.7;
  Vec u(32), v(32);
  for (int i = 0; i < 32; ++i) {
    u(i) = rng.normal();
    v(i) = rng.normal();
  }
  const double alpha = 1.3, beta = -0.4;
  const Vec lhs = apply_recurrent(with_d, alpha * u + beta * v);
  const Vec rhs = alpha * apply_recurrent(with_d, u) + beta * apply_recurrent(with_d, v);
  const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10 * scale);
}

TEST_CASE("path equivalence: direct, vandermonde, impulse response") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 64);
    const int len = 1 + static_cast<int>(rng.next_u64() % 300);
    const auto d = random_diagonal_discrete(rng, n);
    const auto kd = kernel_direct(d, len);
    const auto kv = kernel_vandermonde(d, len);
    Vec impulse = Vec::Zero(len);
    impulse(0) = 1.0;
    const Vec resp = apply_recurrent(d, impulse);
    const double scale = std::max(1.0, kd.values.cwiseAbs().maxCoeff());
    CHECK(max_abs_diff(kd.values, kv.values) <= 1e-10 * scale);
    CHECK((resp - kd.values.real()).cwiseAbs().maxCoeff() <= 1e-10 * scale);
  }
}

TEST_CASE("bilinear discretization of the standard inits is stable for delta in (0,1]") {
  for (const double delta : {1e-3, 0.05, 0.3, 0.7, 1.0}) {
    for (const int n : {2, 4, 16}) {
      const Mat hip = hippo_legs(n);
      const auto hip_ssm =
          ContinuousSSM::dense(hip.cast<Complex>(), CVec::Ones(n), CVec::Ones(n), 0.0);
      CHECK(spectral_radius(discretize(hip_ssm, delta, Discretization::Bilinear)) < 1.0);

      const auto [a, b] = s4_init(n);
      const auto s4_ssm =
          ContinuousSSM::dense(a.cast<Complex>(), b.cast<Complex>(), CVec::Ones(n), 0.0);
      CHECK(spectral_radius(discretize(s4_ssm, delta, Discretization::Bilinear)) < 1.0);

      const auto s4d_ssm = ContinuousSSM::diagonal(s4d_inv_init(n), CVec::Ones(n), CVec::Ones(n));
      CHECK(spectral_radius(discretize(s4d_ssm, delta, Discretization::Bilinear)) < 1.0);
      CHECK(is_discrete_stable(discretize(s4d_ssm, delta, Discretization::Bilinear)));
    }
  }
}

TEST_CASE("dplr densification: kernel matches the explicitly assembled dense matrix") {
  Rng rng(19);
  const int n = 6, rank = 2, len = 64;
  CVec lam(n), b(n), c(n);
  CMat p(n, rank);
  for (int i = 0; i < n; ++i) {
    lam(i) = Complex(rng.uniform(-1.5, -0.2), rng.uniform(-2.0, 2.0));
    b(i) = Complex(rng.normal(), rng.normal());
    c(i) = Complex(rng.normal(), rng.normal());
    for (int j = 0; j < rank; ++j) p(i, j) = 0.3 * Complex(rng.normal(), rng.normal());
  }
  const auto dplr = ContinuousSSM::dplr(lam, p, b, c, 0.0);
  const CMat dense_a = CMat(lam.asDiagonal()) - p * p.adjoint();
  const auto densed = ContinuousSSM::dense(dense_a, b, c, 0.0);

  const auto kd = kernel_direct(discretize(dplr, 0.1, Discretization::Bilinear), len);
  const auto kdense = kernel_direct(discretize(densed, 0.1, Discretization::Bilinear), len);
  const double scale = std::max(1.0, kdense.values.cwiseAbs().maxCoeff());
  CHECK(max_abs_diff(kd.values, kdense.values) <= 1e-10 * scale);
}

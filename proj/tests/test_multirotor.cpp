#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "frs/multirotor.hpp"
#include "test_support.hpp"

using frs::ControlInput;
using frs::MultirotorState;
using frs::kGravity;

namespace {

// Hat map for the body-rate consistency check.
Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w(2), w(1), w(2), 0.0, -w(0), -w(1), w(0), 0.0;
  return m;
}

MultirotorState integrate_n(MultirotorState x, const ControlInput& u,
                            const Eigen::Vector3d& d_amp, double dt, int n) {
  const auto d = [&](double tau) {
    return Eigen::Vector3d(d_amp(0) * std::sin(3.0 * tau),
                           d_amp(1) * std::cos(2.0 * tau), d_amp(2) * tau);
  };
  for (int k = 0; k < n; ++k) x = frs::integrate_step(x, u, d, k * dt, dt);
  return x;
}

}  // namespace

TEST_CASE("rotation matrix follows the ZYX convention") {
  CHECK((frs::rotation_matrix(Eigen::Vector3d::Zero()) -
         Eigen::Matrix3d::Identity())
            .norm() < 1e-15);

  // Pure yaw of +90 degrees maps body-x onto inertial-y.
  Eigen::Vector3d yaw90(0.0, 0.0, M_PI / 2.0);
  Eigen::Vector3d ex = frs::rotation_matrix(yaw90) * Eigen::Vector3d::UnitX();
  CHECK((ex - Eigen::Vector3d::UnitY()).norm() < 1e-12);

  auto rng = frs_test::make_rng(101);
  std::uniform_real_distribution<double> ang(-1.2, 1.2);
  for (int k = 0; k < 50; ++k) {
    Eigen::Vector3d phi(ang(rng), ang(rng), ang(rng));
    Eigen::Matrix3d r = frs::rotation_matrix(phi);
    CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-13);
    CHECK(r.determinant() == Catch::Approx(1.0));
    // Explicit ZYX composition, written out independently.
    const double c1 = std::cos(phi(0)), s1 = std::sin(phi(0));
    const double c2 = std::cos(phi(1)), s2 = std::sin(phi(1));
    const double c3 = std::cos(phi(2)), s3 = std::sin(phi(2));
    Eigen::Matrix3d rz, ry, rx;
    rz << c3, -s3, 0, s3, c3, 0, 0, 0, 1;
    ry << c2, 0, s2, 0, 1, 0, -s2, 0, c2;
    rx << 1, 0, 0, 0, c1, -s1, 0, s1, c1;
    CHECK((r - rz * ry * rx).norm() < 1e-14);
  }
}

TEST_CASE("euler rate map matches the kinematics of R") {
  CHECK((frs::euler_rate_map(Eigen::Vector3d::Zero()) -
         Eigen::Matrix3d::Identity())
            .norm() < 1e-15);

  // R(phi + eps C w) ~ R(phi) (I + eps hat(w)) for body rate w.
  auto rng = frs_test::make_rng(103);
  std::uniform_real_distribution<double> ang(-1.0, 1.0);
  const double eps = 1e-6;
  for (int k = 0; k < 50; ++k) {
    Eigen::Vector3d phi(ang(rng), ang(rng), ang(rng));
    Eigen::Vector3d w(ang(rng), ang(rng), ang(rng));
    Eigen::Vector3d phi_dot = frs::euler_rate_map(phi) * w;
    Eigen::Matrix3d lhs = frs::rotation_matrix(phi + eps * phi_dot);
    Eigen::Matrix3d rhs =
        frs::rotation_matrix(phi) * (Eigen::Matrix3d::Identity() + eps * hat(w));
    CHECK((lhs - rhs).norm() < 20.0 * eps * eps);
  }

  Eigen::Vector3d near_gimbal(0.0, M_PI / 2.0 - 1e-7, 0.0);
  CHECK_THROWS(frs::euler_rate_map(near_gimbal));
}

TEST_CASE("hover is an equilibrium of the dynamics") {
  MultirotorState x;
  ControlInput u{kGravity, Eigen::Vector3d::Zero()};
  frs::Vector9d dx = frs::dynamics_rhs(x, u, Eigen::Vector3d::Zero());
  CHECK(dx.norm() == 0.0);
}

TEST_CASE("free fall integrates gravity exactly") {
  MultirotorState x;
  ControlInput u{0.0, Eigen::Vector3d::Zero()};
  const auto no_d = [](double) { return Eigen::Vector3d::Zero(); };
  for (int k = 0; k < 50; ++k) x = frs::integrate_step(x, u, no_d, k * 0.02, 0.02);
  CHECK(x.v(2) == Catch::Approx(-kGravity).margin(1e-9));
  CHECK(x.p(2) == Catch::Approx(-0.5 * kGravity).margin(1e-9));
  CHECK(x.p.head(2).norm() == 0.0);
  CHECK(x.phi.norm() == 0.0);
}

TEST_CASE("disturbance is sampled at the RK4 stage times") {
  std::vector<double> calls;
  const auto probe = [&](double tau) {
    calls.push_back(tau);
    return Eigen::Vector3d::Zero();
  };
  MultirotorState x;
  ControlInput u{kGravity, Eigen::Vector3d::Zero()};
  frs::integrate_step(x, u, probe, 1.0, 0.02);
  REQUIRE(calls.size() == 4);
  CHECK(calls[0] == Catch::Approx(1.0));
  CHECK(calls[1] == Catch::Approx(1.01));
  CHECK(calls[2] == Catch::Approx(1.01));
  CHECK(calls[3] == Catch::Approx(1.02));
}

TEST_CASE("RK4 converges at fourth order on a smooth trajectory") {
  MultirotorState x0;
  x0.v << 0.3, -0.2, 0.1;
  ControlInput u{kGravity + 0.5, Eigen::Vector3d(0.4, -0.3, 0.2)};
  Eigen::Vector3d amp(1.0, 0.8, 0.5);
  const double tf = 0.64;

  frs::Vector9d ref = integrate_n(x0, u, amp, tf / 4096.0, 4096).vec();
  const double e1 = (integrate_n(x0, u, amp, tf / 16.0, 16).vec() - ref).norm();
  const double e2 = (integrate_n(x0, u, amp, tf / 32.0, 32).vec() - ref).norm();
  CHECK(e1 / e2 >= 8.0);  // fourth order would give ~16
}

TEST_CASE("integration faults on gimbal approach") {
  MultirotorState x;
  ControlInput u{kGravity, Eigen::Vector3d(0.0, 20.0, 0.0)};  // aggressive pitch rate
  const auto no_d = [](double) { return Eigen::Vector3d::Zero(); };
  CHECK_THROWS([&] {
    MultirotorState s = x;
    for (int k = 0; k < 500; ++k) s = frs::integrate_step(s, u, no_d, k * 0.02, 0.02);
  }());
}

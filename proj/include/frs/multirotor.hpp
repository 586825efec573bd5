#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace frs {

inline constexpr double kGravity = 9.81;       // m/s^2
inline constexpr double kGimbalMargin = 1e-6;  // pitch must stay below pi/2 - margin

using Vector9d = Eigen::Matrix<double, 9, 1>;

// Translational position/velocity plus ZYX Euler attitude (roll, pitch, yaw).
struct MultirotorState {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d phi = Eigen::Vector3d::Zero();

  Vector9d vec() const {
    Vector9d y;
    y << p, v, phi;
    return y;
  }
  static MultirotorState from_vec(const Vector9d& y) {
    return {y.segment<3>(0), y.segment<3>(3), y.segment<3>(6)};
  }
};

// Mass-normalized collective thrust along body z plus body angular velocity.
struct ControlInput {
  double thrust = 0.0;
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
};

// Body-to-inertial rotation, R = Rz(yaw) Ry(pitch) Rx(roll).
inline Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& phi) {
  return (Eigen::AngleAxisd(phi(2), Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(phi(1), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(phi(0), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

// C(phi) mapping body rates to Euler-angle rates, phi_dot = C(phi) omega.
inline Eigen::Matrix3d euler_rate_map(const Eigen::Vector3d& phi) {
  const double th = phi(1);
  if (std::abs(th) >= M_PI / 2.0 - kGimbalMargin)
    throw std::runtime_error("euler_rate_map: pitch at gimbal singularity");
  const double sph = std::sin(phi(0)), cph = std::cos(phi(0));
  const double tth = std::tan(th), cth = std::cos(th);
  Eigen::Matrix3d c;
  c << 1.0, sph * tth, cph * tth,
       0.0, cph, -sph,
       0.0, sph / cth, cph / cth;
  return c;
}

// Continuous-time dynamics: p_dot = v, v_dot = -g e3 + F R e3 + d,
// phi_dot = C(phi) omega, with d an external acceleration disturbance.
inline Vector9d dynamics_rhs(const MultirotorState& x, const ControlInput& u,
                             const Eigen::Vector3d& d) {
  Vector9d dx;
  dx.segment<3>(0) = x.v;
  dx.segment<3>(3) = -kGravity * Eigen::Vector3d::UnitZ() +
                     u.thrust * rotation_matrix(x.phi).col(2) + d;
  dx.segment<3>(6) = euler_rate_map(x.phi) * u.omega;
  return dx;
}

// One RK4 step with the input held constant and the disturbance sampled at
// the stage times.  Throws on non-finite results or gimbal proximity.
template <class DisturbanceFn>
MultirotorState integrate_step(const MultirotorState& x, const ControlInput& u,
                               DisturbanceFn&& d_of_t, double t, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_step: dt must be positive");
  const auto f = [&](const Vector9d& y, double tau) {
    return dynamics_rhs(MultirotorState::from_vec(y), u, d_of_t(tau));
  };
  const Vector9d y0 = x.vec();
  const Vector9d k1 = f(y0, t);
  const Vector9d k2 = f(y0 + 0.5 * dt * k1, t + 0.5 * dt);
  const Vector9d k3 = f(y0 + 0.5 * dt * k2, t + 0.5 * dt);
  const Vector9d k4 = f(y0 + dt * k3, t + dt);
  const Vector9d y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!y1.allFinite())
    throw std::runtime_error("integrate_step: non-finite state");
  if (std::abs(y1(7)) >= M_PI / 2.0 - kGimbalMargin)
    throw std::runtime_error("integrate_step: pitch reached gimbal singularity");
  return MultirotorState::from_vec(y1);
}

}  // namespace frs

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "frs/multirotor.hpp"

namespace frs {

struct ControllerGains {
  double k_p = 18.0;
  double k_v = 6.0;
  Eigen::Vector3d k_phi = Eigen::Vector3d(7.0, 7.0, 21.0);
};

// Reference position with the first two derivatives plus yaw.
struct FlatOutput {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  double yaw_rate = 0.0;
};

// Circle of given radius and angular rate in a tilted plane: the flat circle
// is rotated by a roll about x followed by a yaw about z, then shifted.
struct CircularTrajectory {
  double radius = 10.0;
  double rate = 0.6;  // rad/s
  double tilt_roll = M_PI / 6.0;
  double tilt_yaw = M_PI / 6.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  Eigen::Matrix3d tilt() const {
    return (Eigen::AngleAxisd(tilt_yaw, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(tilt_roll, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
  }

  FlatOutput sample(double t) const {
    const double w = rate, a = radius;
    const Eigen::Matrix3d r = tilt();
    FlatOutput out;
    out.p = center + r * Eigen::Vector3d(a * std::cos(w * t), a * std::sin(w * t), 0.0);
    out.v = r * Eigen::Vector3d(-a * w * std::sin(w * t), a * w * std::cos(w * t), 0.0);
    out.a = r * Eigen::Vector3d(-a * w * w * std::cos(w * t),
                                -a * w * w * std::sin(w * t), 0.0);
    return out;
  }

  double max_accel() const { return radius * rate * rate; }
};

// ZYX Euler angles whose body-z axis aligns with f (not necessarily unit)
// and whose yaw equals the given value.  Faults near the gimbal pitch.
inline Eigen::Vector3d desired_attitude(const Eigen::Vector3d& f, double yaw) {
  const double n = f.norm();
  if (n < 1e-9) throw std::runtime_error("desired_attitude: degenerate direction");
  // Remove yaw, then read roll and pitch off the direction components.
  const Eigen::Vector3d z =
      Eigen::AngleAxisd(-yaw, Eigen::Vector3d::UnitZ()) * (f / n);
  if (std::abs(z(1)) >= 1.0 - 1e-9)
    throw std::runtime_error("desired_attitude: roll at gimbal singularity");
  const double roll = std::asin(-z(1));
  const double pitch = std::atan2(z(0), z(2));
  if (std::abs(pitch) >= M_PI / 2.0 - kGimbalMargin)
    throw std::runtime_error("desired_attitude: pitch at gimbal singularity");
  return Eigen::Vector3d(roll, pitch, yaw);
}

// Proportional attitude law: omega = C(phi)^{-1} (phi_r_rate - k .* (phi - phi_r)),
// with each angle error wrapped to (-pi, pi].
inline Eigen::Vector3d attitude_law(const Eigen::Vector3d& phi,
                                    const Eigen::Vector3d& phi_r,
                                    const Eigen::Vector3d& phi_r_rate,
                                    const Eigen::Vector3d& k_phi) {
  Eigen::Vector3d e;
  for (int i = 0; i < 3; ++i) e(i) = std::remainder(phi(i) - phi_r(i), 2.0 * M_PI);
  const Eigen::Vector3d rate = phi_r_rate - k_phi.cwiseProduct(e);
  return euler_rate_map(phi).partialPivLu().solve(rate);
}

// Full control decision with the intermediate quantities used by audits.
struct ControlDecision {
  ControlInput input;
  Eigen::Vector3d f_d = Eigen::Vector3d::Zero();    // desired specific force
  Eigen::Vector3d phi_r = Eigen::Vector3d::Zero();  // commanded attitude
  Eigen::Vector3d z_b = Eigen::Vector3d::Zero();    // current body z
  Eigen::Vector3d z_b_r = Eigen::Vector3d::Zero();  // desired body z
  double sin_tilt_err = 0.0;                        // |sin| of angle between them
  bool thrust_floored = false;
};

// Position/velocity feedback with gravity and feed-forward acceleration,
// compensating the estimated disturbance; thrust is the projection of the
// desired force onto the current body z, floored at zero.
inline ControlDecision adaptive_control(const MultirotorState& x,
                                        const Eigen::Vector3d& d_hat,
                                        const FlatOutput& ref,
                                        const ControllerGains& g,
                                        const Eigen::Vector3d& phi_r_rate =
                                            Eigen::Vector3d::Zero()) {
  ControlDecision out;
  const Eigen::Vector3d e_p = x.p - ref.p;
  const Eigen::Vector3d e_v = x.v - ref.v;
  out.f_d = -g.k_p * e_p - g.k_v * e_v + kGravity * Eigen::Vector3d::UnitZ() +
            ref.a - d_hat;
  out.phi_r = desired_attitude(out.f_d, ref.yaw);  // validates f_d as well
  out.z_b = rotation_matrix(x.phi).col(2);
  out.z_b_r = out.f_d.normalized();
  const double thrust = out.f_d.dot(out.z_b);
  out.thrust_floored = thrust < 0.0;
  out.input.thrust = std::max(thrust, 0.0);
  out.input.omega = attitude_law(x.phi, out.phi_r, phi_r_rate, g.k_phi);
  out.sin_tilt_err = out.z_b.cross(out.z_b_r).norm();
  return out;
}

// Attitude rate of the nominal reference attitude (zero tracking error, no
// disturbance correction), for optional feedforward into the attitude law.
template <typename RefFn>
Eigen::Vector3d nominal_attitude_rate(const RefFn& ref, double t) {
  const double h = 1e-4;
  const auto nominal = [&](double tau) {
    const FlatOutput s = ref(tau);
    return desired_attitude(kGravity * Eigen::Vector3d::UnitZ() + s.a, s.yaw);
  };
  return (nominal(t + h) - nominal(t - h)) / (2.0 * h);
}

}  // namespace frs

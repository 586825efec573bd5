#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "frs/controller.hpp"
#include "frs/disturbance.hpp"
#include "frs/multirotor.hpp"

namespace frs {

struct SimOptions {
  double dt = 0.02;
  double alpha = 2.0;
  // With use_estimate the controller consumes the observer output; without
  // it the loop flies blind (d_hat = 0) and logs a zero estimate channel.
  bool use_estimate = true;
  bool attitude_feedforward = true;
};

struct SimSample {
  double t = 0.0;
  MultirotorState x;
  Eigen::Vector3d d = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_hat = Eigen::Vector3d::Zero();
  ControlDecision ctl;
};

struct SimTrace {
  std::vector<SimSample> samples;
};

// Closed loop truth rollout: joint RK4 on (vehicle, observer) with the
// controller re-evaluated at every integrator stage, so the simulated system
// is the continuous-time loop rather than a zero-order-hold approximation.
template <typename RefFn, typename DFn>
SimTrace simulate_closed_loop(const MultirotorState& x0,
                              const DisturbanceObserver& obs0,
                              const RefFn& ref, const DFn& d_of_t,
                              const ControllerGains& gains, double t0,
                              int nsteps, const SimOptions& opt) {
  if (opt.dt <= 0.0) throw std::invalid_argument("step size must be positive");
  if (nsteps < 0) throw std::invalid_argument("step count must be nonnegative");

  using Vec = Eigen::Matrix<double, 12, 1>;
  const auto rhs = [&](const Vec& y, double tau) {
    const MultirotorState s = MultirotorState::from_vec(y.template head<9>());
    const DisturbanceObserver o{opt.alpha, y.template tail<3>()};
    const Eigen::Vector3d d_hat = opt.use_estimate
                                      ? estimated_disturbance(o, s.v)
                                      : Eigen::Vector3d::Zero();
    const Eigen::Vector3d ff = opt.attitude_feedforward
                                   ? nominal_attitude_rate(ref, tau)
                                   : Eigen::Vector3d::Zero();
    const ControlDecision ctl = adaptive_control(s, d_hat, ref(tau), gains, ff);
    Vec dy;
    dy << dynamics_rhs(s, ctl.input, d_of_t(tau)),
        (opt.use_estimate ? observer_rhs(o, s, ctl.input)
                          : Eigen::Vector3d::Zero().eval());
    return dy;
  };

  const auto log_sample = [&](const Vec& y, double t) {
    SimSample s;
    s.t = t;
    s.x = MultirotorState::from_vec(y.head<9>());
    s.d = d_of_t(t);
    s.d_hat = opt.use_estimate
                  ? estimated_disturbance({opt.alpha, y.tail<3>()}, s.x.v)
                  : Eigen::Vector3d::Zero();
    const Eigen::Vector3d ff = opt.attitude_feedforward
                                   ? nominal_attitude_rate(ref, t)
                                   : Eigen::Vector3d::Zero();
    s.ctl = adaptive_control(s.x, s.d_hat, ref(t), gains, ff);
    return s;
  };

  SimTrace trace;
  trace.samples.reserve(nsteps + 1);
  Vec y;
  y << x0.vec(), obs0.z;
  double t = t0;
  trace.samples.push_back(log_sample(y, t));
  for (int k = 0; k < nsteps; ++k) {
    const Vec k1 = rhs(y, t);
    const Vec k2 = rhs(y + 0.5 * opt.dt * k1, t + 0.5 * opt.dt);
    const Vec k3 = rhs(y + 0.5 * opt.dt * k2, t + 0.5 * opt.dt);
    const Vec k4 = rhs(y + opt.dt * k3, t + opt.dt);
    y += (opt.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y.allFinite()) throw std::runtime_error("closed loop simulation diverged");
    t = t0 + (k + 1) * opt.dt;
    trace.samples.push_back(log_sample(y, t));
  }
  return trace;
}

}  // namespace frs

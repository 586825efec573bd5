#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>

#include "frs/multirotor.hpp"

namespace frs {

namespace detail {

// Uniform double in [0, 1) built from the top 53 bits of the generator so
// sampled paths are reproducible across standard library implementations.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

// Componentwise bounds |d_i| <= level(i), |d_dot_i| <= rate(i).
struct DisturbanceModel {
  Eigen::Vector3d level{3.0, 3.0, 1.0};
  Eigen::Vector3d rate{2.0, 2.0, 2.0};
};

inline void validate(const DisturbanceModel& model) {
  if ((model.level.array() < 0.0).any() || (model.rate.array() < 0.0).any()) {
    throw std::invalid_argument("disturbance bounds must be nonnegative");
  }
}

// Piecewise linear signal on a uniform knot grid.
class DisturbancePath {
 public:
  DisturbancePath(double t0, double knot_dt, Eigen::Matrix3Xd knots,
                  Eigen::Matrix3Xd slopes)
      : t0_(t0), knot_dt_(knot_dt), knots_(std::move(knots)),
        slopes_(std::move(slopes)) {
    if (knot_dt_ <= 0.0) throw std::invalid_argument("knot spacing must be positive");
    if (knots_.cols() < 2 || slopes_.cols() != knots_.cols() - 1) {
      throw std::invalid_argument("need n >= 2 knots and n - 1 slopes");
    }
  }

  double t0() const { return t0_; }
  double t1() const { return t0_ + knot_dt_ * static_cast<double>(slopes_.cols()); }
  double knot_dt() const { return knot_dt_; }
  const Eigen::Matrix3Xd& knots() const { return knots_; }
  const Eigen::Matrix3Xd& slopes() const { return slopes_; }

  Eigen::Vector3d value(double t) const {
    const int k = segment(t);
    const double s = std::min(std::max(t - t0_ - k * knot_dt_, 0.0), knot_dt_);
    return knots_.col(k) + s * slopes_.col(k);
  }

  Eigen::Vector3d slope(double t) const { return slopes_.col(segment(t)); }

 private:
  int segment(double t) const {
    const int last = static_cast<int>(slopes_.cols()) - 1;
    const int k = static_cast<int>(std::floor((t - t0_) / knot_dt_));
    return std::min(std::max(k, 0), last);
  }

  double t0_;
  double knot_dt_;
  Eigen::Matrix3Xd knots_;
  Eigen::Matrix3Xd slopes_;
};

// Random admissible path: per segment the slope is uniform in [-rate, rate]
// and the endpoint is reflected back into [-level, level]. The stored slope
// is the effective one, so the path is exactly linear between knots and both
// bounds hold everywhere.
inline DisturbancePath sample_disturbance(const DisturbanceModel& model,
                                          double t0, double horizon,
                                          double knot_dt,
                                          const Eigen::Vector3d& d0,
                                          std::mt19937_64& rng) {
  validate(model);
  if (horizon <= 0.0 || knot_dt <= 0.0) {
    throw std::invalid_argument("horizon and knot spacing must be positive");
  }
  if (((d0.array().abs() - model.level.array()) > 0.0).any()) {
    throw std::invalid_argument("initial disturbance exceeds its level bound");
  }
  const int nseg = std::max(1, static_cast<int>(std::ceil(horizon / knot_dt)));
  Eigen::Matrix3Xd knots(3, nseg + 1);
  Eigen::Matrix3Xd slopes(3, nseg);
  knots.col(0) = d0;
  for (int k = 0; k < nseg; ++k) {
    for (int i = 0; i < 3; ++i) {
      const double lim = model.level(i);
      if (lim == 0.0) {
        knots(i, k + 1) = 0.0;
        slopes(i, k) = 0.0;
        continue;
      }
      const double s = (2.0 * detail::uniform01(rng) - 1.0) * model.rate(i);
      double next = knots(i, k) + s * knot_dt;
      while (next > lim || next < -lim) {
        next = (next > lim) ? 2.0 * lim - next : -2.0 * lim - next;
      }
      knots(i, k + 1) = next;
      slopes(i, k) = (next - knots(i, k)) / knot_dt;
    }
  }
  return DisturbancePath(t0, knot_dt, std::move(knots), std::move(slopes));
}

// First order observer d_hat = z + alpha * v with z driven so that
// d_hat_dot = alpha * (d - d_hat) along the true dynamics.
struct DisturbanceObserver {
  double alpha = 2.0;
  Eigen::Vector3d z = Eigen::Vector3d::Zero();
};

inline DisturbanceObserver make_observer(
    double alpha, const Eigen::Vector3d& v0,
    const Eigen::Vector3d& d_hat0 = Eigen::Vector3d::Zero()) {
  if (alpha <= 0.0) throw std::invalid_argument("observer gain must be positive");
  return DisturbanceObserver{alpha, d_hat0 - alpha * v0};
}

inline Eigen::Vector3d estimated_disturbance(const DisturbanceObserver& obs,
                                             const Eigen::Vector3d& v) {
  return obs.z + obs.alpha * v;
}

inline Eigen::Vector3d observer_rhs(const DisturbanceObserver& obs,
                                    const MultirotorState& x,
                                    const ControlInput& u) {
  const Eigen::Vector3d d_hat = estimated_disturbance(obs, x.v);
  const Eigen::Vector3d a_nom =
      -kGravity * Eigen::Vector3d::UnitZ() +
      u.thrust * rotation_matrix(x.phi).col(2);
  return -obs.alpha * (a_nom + d_hat);
}

// Advances the vehicle and the observer together over one step with the
// input held fixed, so the observer sees the exact RK4 stage states of the
// plant. d_of_t supplies the true disturbance at the stage times.
template <typename DOfT>
inline std::pair<MultirotorState, DisturbanceObserver> ndob_step(
    const MultirotorState& x, const DisturbanceObserver& obs,
    const ControlInput& u, const DOfT& d_of_t, double t, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("step size must be positive");
  using Vec = Eigen::Matrix<double, 12, 1>;
  const auto rhs = [&](const Vec& y, double tau) {
    const MultirotorState s = MultirotorState::from_vec(y.template head<9>());
    const DisturbanceObserver o{obs.alpha, y.template tail<3>()};
    Vec dy;
    dy << dynamics_rhs(s, u, d_of_t(tau)), observer_rhs(o, s, u);
    return dy;
  };
  Vec y0;
  y0 << x.vec(), obs.z;
  const Vec k1 = rhs(y0, t);
  const Vec k2 = rhs(y0 + 0.5 * dt * k1, t + 0.5 * dt);
  const Vec k3 = rhs(y0 + 0.5 * dt * k2, t + 0.5 * dt);
  const Vec k4 = rhs(y0 + dt * k3, t + dt);
  const Vec y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!y1.allFinite()) throw std::runtime_error("observer step diverged");
  return {MultirotorState::from_vec(y1.head<9>()),
          DisturbanceObserver{obs.alpha, y1.tail<3>()}};
}

// Worst case estimation error radius at time t after an estimator reset
// with d_hat(0) = 0: the transient from the initial error decays at rate
// (1 - theta1) * alpha and the steady floor is |rate| / (theta1 * alpha).
inline double error_radius(const DisturbanceModel& model, double alpha,
                           double theta1, double t) {
  validate(model);
  if (alpha <= 0.0) throw std::invalid_argument("observer gain must be positive");
  if (theta1 <= 0.0 || theta1 >= 1.0) {
    throw std::invalid_argument("theta1 must lie in (0, 1)");
  }
  if (t < 0.0) throw std::invalid_argument("time must be nonnegative");
  const double transient =
      model.level.norm() * std::exp(-(1.0 - theta1) * alpha * t);
  const double floor = model.rate.norm() / (theta1 * alpha);
  return std::max(transient, floor);
}

// Frozen snapshot of what is known about the disturbance at prediction
// start: the estimate at t0 and the estimation error radius r0.
struct DisturbancePrediction {
  double t0 = 0.0;
  Eigen::Vector3d d_hat_t0 = Eigen::Vector3d::Zero();
  double r0 = 0.0;
  DisturbanceModel model;
  double theta1 = 0.8;
};

inline void validate(const DisturbancePrediction& pred) {
  validate(pred.model);
  if (pred.r0 < 0.0) throw std::invalid_argument("error radius must be nonnegative");
  if (pred.theta1 <= 0.0 || pred.theta1 >= 1.0) {
    throw std::invalid_argument("theta1 must lie in (0, 1)");
  }
}

// Interval center d_m and half width d_M per channel.
struct PredictedBounds {
  Eigen::Vector3d d_m;
  Eigen::Vector3d d_M;
};

// Componentwise bracket for the true disturbance at lookahead time tau:
// the estimate at t0, widened by the estimation error radius and by how far
// the signal can drift, clipped to the level bounds.
inline PredictedBounds predict_bounds(const DisturbancePrediction& pred,
                                      double tau) {
  validate(pred);
  if (tau < pred.t0) throw std::invalid_argument("lookahead precedes prediction start");
  PredictedBounds out;
  for (int i = 0; i < 3; ++i) {
    const double spread = pred.r0 + pred.model.rate(i) * (tau - pred.t0);
    const double lo = std::max(pred.d_hat_t0(i) - spread, -pred.model.level(i));
    const double hi = std::min(pred.d_hat_t0(i) + spread, pred.model.level(i));
    if (lo > hi) throw std::runtime_error("disturbance prediction interval is empty");
    out.d_m(i) = 0.5 * (lo + hi);
    out.d_M(i) = 0.5 * (hi - lo);
  }
  return out;
}

}  // namespace frs

#pragma once

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "frs/controller.hpp"
#include "frs/disturbance.hpp"
#include "frs/ellipsoid.hpp"
#include "frs/multirotor.hpp"

namespace frs {

using Vector15d = Eigen::Matrix<double, 15, 1>;
using Matrix15d = Eigen::Matrix<double, 15, 15>;

// Augmented state layout: y = [x (9); d_hat (3); d (3)].
enum class TubeMode { kBaseline, kProposedNolin, kProposedLin };

inline const char* mode_name(TubeMode mode) {
  switch (mode) {
    case TubeMode::kBaseline: return "baseline";
    case TubeMode::kProposedNolin: return "proposed_nolin";
    case TubeMode::kProposedLin: return "proposed_lin";
  }
  throw std::invalid_argument("unknown tube mode");
}

// Closed loop dynamics of the augmented state: the vehicle under the
// controller fed by the estimate channel, the estimate channel chasing the
// true disturbance, and the disturbance driven by its rate input w. With
// use_estimate off the controller flies blind and the estimate channel is
// frozen.
inline Vector15d augmented_rhs(const Vector15d& y, const FlatOutput& sigma,
                               const Eigen::Vector3d& w,
                               const ControllerGains& gains, double alpha,
                               bool use_estimate = true,
                               const Eigen::Vector3d& phi_r_rate =
                                   Eigen::Vector3d::Zero()) {
  const MultirotorState x = MultirotorState::from_vec(y.head<9>());
  const Eigen::Vector3d d_hat = y.segment<3>(9);
  const Eigen::Vector3d d = y.tail<3>();
  const ControlDecision ctl = adaptive_control(
      x, use_estimate ? d_hat : Eigen::Vector3d::Zero(), sigma, gains,
      phi_r_rate);
  Vector15d dy;
  dy.head<9>() = dynamics_rhs(x, ctl.input, d);
  dy.segment<3>(9) =
      use_estimate ? (alpha * (d - d_hat)).eval() : Eigen::Vector3d::Zero().eval();
  dy.tail<3>() = w;
  return dy;
}

// Zero-disturbance reference rollout sampled at quarter-step spacing (the
// grid the per-step linearization nodes need). The d channel of the initial
// state is forced to zero and stays there since w = 0.
struct ReferencePath {
  double t0 = 0.0;
  double dt = 0.02;
  std::vector<Vector15d> fine;  // 4 * nsteps + 1 states, spacing dt / 4

  const Vector15d& at(int step, int quarter) const {
    return fine[static_cast<size_t>(4 * step + quarter)];
  }
  double time_at(int step, int quarter) const {
    return t0 + dt * (step + 0.25 * quarter);
  }
};

template <typename RefFn>
ReferencePath reference_rollout(const Vector15d& y_t0, const RefFn& ref,
                                double t0, int nsteps, double dt,
                                const ControllerGains& gains, double alpha,
                                bool use_estimate = true,
                                bool attitude_feedforward = true) {
  if (dt <= 0.0) throw std::invalid_argument("step size must be positive");
  if (nsteps < 0) throw std::invalid_argument("step count must be nonnegative");
  const auto rhs = [&](const Vector15d& y, double tau) {
    const Eigen::Vector3d ff = attitude_feedforward
                                   ? nominal_attitude_rate(ref, tau)
                                   : Eigen::Vector3d::Zero();
    return augmented_rhs(y, ref(tau), Eigen::Vector3d::Zero(), gains, alpha,
                         use_estimate, ff);
  };
  ReferencePath path;
  path.t0 = t0;
  path.dt = dt;
  path.fine.reserve(static_cast<size_t>(4 * nsteps + 1));
  Vector15d y = y_t0;
  y.tail<3>().setZero();
  if (!use_estimate) y.segment<3>(9).setZero();
  path.fine.push_back(y);
  const double h = 0.25 * dt;
  for (int m = 0; m < 4 * nsteps; ++m) {
    const double t = t0 + m * h;
    const Vector15d k1 = rhs(y, t);
    const Vector15d k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h);
    const Vector15d k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h);
    const Vector15d k4 = rhs(y + h * k3, t + h);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y.allFinite()) throw std::runtime_error("reference rollout diverged");
    path.fine.push_back(y);
  }
  return path;
}

// Central finite-difference Jacobian of the closed loop rhs at a reference
// state, all 15 columns, step h.
inline Matrix15d jacobian_fd(const Vector15d& y_r, const FlatOutput& sigma,
                             const ControllerGains& gains, double alpha,
                             bool use_estimate, double h,
                             const Eigen::Vector3d& phi_r_rate =
                                 Eigen::Vector3d::Zero()) {
  if (h <= 0.0) throw std::invalid_argument("difference step must be positive");
  Matrix15d a;
  for (int j = 0; j < 15; ++j) {
    Vector15d yp = y_r, ym = y_r;
    yp(j) += h;
    ym(j) -= h;
    a.col(j) = (augmented_rhs(yp, sigma, Eigen::Vector3d::Zero(), gains, alpha,
                              use_estimate, phi_r_rate) -
                augmented_rhs(ym, sigma, Eigen::Vector3d::Zero(), gains, alpha,
                              use_estimate, phi_r_rate)) /
               (2.0 * h);
  }
  return a;
}

// Linearization used by the propagation: finite differences for the vehicle
// rows, with the structurally exact rows written analytically so roundoff
// in the differencing cannot leak into channels that are linear by
// construction.
// Without the estimate the model treats the true disturbance as an external
// bounded input rather than a tracked state, so the estimate rows and the
// disturbance feedthrough vanish and the vehicle block decouples; the input
// channels of the growth set carry the forcing instead.
inline Matrix15d jacobian(const Vector15d& y_r, const FlatOutput& sigma,
                          const ControllerGains& gains, double alpha,
                          bool use_estimate = true,
                          const Eigen::Vector3d& phi_r_rate =
                              Eigen::Vector3d::Zero()) {
  Matrix15d a = jacobian_fd(y_r, sigma, gains, alpha, use_estimate, 1e-6,
                            phi_r_rate);
  a.block<3, 15>(9, 0).setZero();
  a.block<3, 15>(12, 0).setZero();
  a.block<9, 3>(0, 12).setZero();
  if (use_estimate) {
    a.block<3, 3>(9, 9) = -alpha * Eigen::Matrix3d::Identity();
    a.block<3, 3>(9, 12) = alpha * Eigen::Matrix3d::Identity();
    a.block<3, 3>(3, 12).setIdentity();
  }
  return a;
}

// State transition pair over one step, integrated jointly so the inverse is
// an independent solution and the product Psi * Psi_inv is a genuine
// accuracy audit rather than an identity by construction. A(tau) between
// the five quarter-point nodes is interpolated exactly (degree 4).
struct StateTransition {
  Matrix15d psi;
  Matrix15d psi_inv_mid;
  Matrix15d psi_inv;
  double pairing_error = 0.0;
};

inline StateTransition state_transition(const std::array<Matrix15d, 5>& a_nodes,
                                        double dt, int nsub = 16) {
  if (dt <= 0.0) throw std::invalid_argument("step size must be positive");
  if (nsub < 2 || nsub % 2 != 0) {
    throw std::invalid_argument("substep count must be even and at least 2");
  }
  static const std::array<double, 5> kNodes = {0.0, 0.25, 0.5, 0.75, 1.0};
  const auto interp = [&](double s) {
    Matrix15d a = Matrix15d::Zero();
    for (int i = 0; i < 5; ++i) {
      double w = 1.0;
      for (int j = 0; j < 5; ++j) {
        if (j != i) w *= (s - kNodes[j]) / (kNodes[i] - kNodes[j]);
      }
      a += w * a_nodes[static_cast<size_t>(i)];
    }
    return a;
  };
  std::vector<Matrix15d> a_half(static_cast<size_t>(2 * nsub + 1));
  for (int m = 0; m <= 2 * nsub; ++m) {
    a_half[static_cast<size_t>(m)] = interp(m / (2.0 * nsub));
  }
  StateTransition out;
  out.psi.setIdentity();
  out.psi_inv.setIdentity();
  const double h = dt / nsub;
  for (int j = 0; j < nsub; ++j) {
    const Matrix15d& a0 = a_half[static_cast<size_t>(2 * j)];
    const Matrix15d& am = a_half[static_cast<size_t>(2 * j + 1)];
    const Matrix15d& a1 = a_half[static_cast<size_t>(2 * j + 2)];
    const Matrix15d k1 = a0 * out.psi;
    const Matrix15d l1 = -out.psi_inv * a0;
    const Matrix15d k2 = am * (out.psi + 0.5 * h * k1);
    const Matrix15d l2 = -(out.psi_inv + 0.5 * h * l1) * am;
    const Matrix15d k3 = am * (out.psi + 0.5 * h * k2);
    const Matrix15d l3 = -(out.psi_inv + 0.5 * h * l2) * am;
    const Matrix15d k4 = a1 * (out.psi + h * k3);
    const Matrix15d l4 = -(out.psi_inv + h * l3) * a1;
    out.psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out.psi_inv += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    if (j == nsub / 2 - 1) out.psi_inv_mid = out.psi_inv;
  }
  out.pairing_error =
      (out.psi * out.psi_inv - Matrix15d::Identity()).cwiseAbs().maxCoeff();
  if (!(out.pairing_error < 1e-6)) {
    throw std::runtime_error("state transition pair lost accuracy");
  }
  return out;
}

// Input channels of the error-dynamics growth set, per mode. The
// disturbance-rate channels enter the d rows in every mode. The proposed
// mode with linearization errors adds the residual bounds M_p, M_v, M_Phi
// on the vehicle rows. The baseline carries no estimator, so the
// disturbance itself acts as a bounded input on the velocity rows at its
// full static level, alongside the same residual channels.
inline Eigen::MatrixXd input_matrix(TubeMode mode) {
  switch (mode) {
    case TubeMode::kProposedNolin: {
      Eigen::MatrixXd f = Eigen::MatrixXd::Zero(15, 3);
      f.block<3, 3>(12, 0).setIdentity();
      return f;
    }
    case TubeMode::kProposedLin: {
      Eigen::MatrixXd f = Eigen::MatrixXd::Zero(15, 12);
      f.block<9, 9>(0, 0).setIdentity();
      f.block<3, 3>(12, 9).setIdentity();
      return f;
    }
    case TubeMode::kBaseline: {
      Eigen::MatrixXd f = Eigen::MatrixXd::Zero(15, 15);
      f.block<9, 9>(0, 0).setIdentity();
      f.block<3, 3>(3, 9).setIdentity();
      f.block<3, 3>(12, 12).setIdentity();
      return f;
    }
  }
  throw std::invalid_argument("unknown tube mode");
}

inline Eigen::VectorXd input_bounds(TubeMode mode,
                                    const DisturbanceModel& model,
                                    const Eigen::Vector3d& m_p,
                                    const Eigen::Vector3d& m_v,
                                    const Eigen::Vector3d& m_phi) {
  switch (mode) {
    case TubeMode::kProposedNolin:
      return model.rate;
    case TubeMode::kProposedLin: {
      Eigen::VectorXd b(12);
      b << m_p, m_v, m_phi, model.rate;
      return b;
    }
    case TubeMode::kBaseline: {
      Eigen::VectorXd b(15);
      b << m_p, m_v, m_phi, model.level, model.rate;
      return b;
    }
  }
  throw std::invalid_argument("unknown tube mode");
}

// Per-step reachable-growth ellipsoid shape (inverse-shape convention):
// each input channel contributes dt * integral of beta_i^2 F_eta_i F_eta_i^T
// + eps I over the step (two-panel trapezoid at start/mid/end), and the
// channels combine by the minimal-trace sum. Returns the zero matrix when
// every channel is identically zero (no growth).
inline Matrix15d hopf_step_shape(const StateTransition& stm,
                                 const Eigen::MatrixXd& fbar,
                                 const Eigen::VectorXd& betabar, double dt,
                                 double eps) {
  if (fbar.rows() != 15 || fbar.cols() != betabar.size()) {
    throw std::invalid_argument("input matrix and bounds disagree");
  }
  if (dt <= 0.0 || eps < 0.0) {
    throw std::invalid_argument("need dt > 0 and eps >= 0");
  }
  std::vector<Eigen::MatrixXd> pieces;
  pieces.reserve(static_cast<size_t>(betabar.size()));
  for (Eigen::Index i = 0; i < betabar.size(); ++i) {
    const Eigen::VectorXd u0 = fbar.col(i);
    const Eigen::VectorXd um = stm.psi_inv_mid * fbar.col(i);
    const Eigen::VectorXd u1 = stm.psi_inv * fbar.col(i);
    const double b2 = betabar(i) * betabar(i);
    Eigen::MatrixXd piece =
        dt * ((0.25 * dt * b2) *
                  (u0 * u0.transpose() + 2.0 * (um * um.transpose()) +
                   u1 * u1.transpose()) +
              dt * eps * Eigen::MatrixXd::Identity(15, 15));
    if (piece.trace() > 0.0) pieces.push_back(std::move(piece));
  }
  if (pieces.empty()) return Matrix15d::Zero();
  return min_trace_sum(pieces);
}

// Support function of the exact per-step reachable growth set in direction
// nu, under the same quadrature nodes and weights as hopf_step_shape; used
// to certify that the ellipsoidal shape over-approximates it.
inline double support_oracle(const StateTransition& stm,
                             const Eigen::MatrixXd& fbar,
                             const Eigen::VectorXd& betabar, double dt,
                             const Vector15d& nu) {
  if (fbar.rows() != 15 || fbar.cols() != betabar.size()) {
    throw std::invalid_argument("input matrix and bounds disagree");
  }
  if (nu.norm() == 0.0) throw std::invalid_argument("direction must be nonzero");
  double total = 0.0;
  for (Eigen::Index i = 0; i < betabar.size(); ++i) {
    const double f0 = std::abs(nu.dot(fbar.col(i)));
    const double fm = std::abs(nu.dot(stm.psi_inv_mid * fbar.col(i)));
    const double f1 = std::abs(nu.dot(stm.psi_inv * fbar.col(i)));
    total += betabar(i) * (0.25 * dt) * (f0 + 2.0 * fm + f1);
  }
  return total;
}

// One propagation step in error coordinates: grow the current set by the
// step reachable set (minimal-trace sum in eta space), push it through the
// state transition, and fuse with the predicted disturbance cylinder over
// the true-disturbance coordinates.
inline Ellipsoid propagate_step(const Ellipsoid& s_t,
                                const StateTransition& stm,
                                const Matrix15d& b_eta, double b,
                                const Eigen::Vector3d& d_m,
                                const Eigen::Vector3d& d_M) {
  if (s_t.dim() != 15) throw std::invalid_argument("expected a 15-dim set");
  const Eigen::MatrixXd q0 = s_t.inverse_shape();
  Eigen::MatrixXd q_eta;
  if (b_eta.trace() > 0.0) {
    q_eta = min_trace_sum({q0, b_eta});
  } else {
    q_eta = q0;
  }
  const Vector15d c1 = stm.psi * s_t.center();
  const Matrix15d q_y = stm.psi * q_eta * stm.psi.transpose();
  const Eigen::LLT<Matrix15d> llt(0.5 * (q_y + q_y.transpose()));
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("propagated shape lost positive definiteness");
  }
  const Matrix15d k1 = llt.solve(Matrix15d::Identity());
  const Ellipsoid e1(c1, k1);
  const Eigen::Vector3d floored = d_M.cwiseMax(1e-9);
  const Ellipsoid cyl(
      d_m, Eigen::MatrixXd(min_trace_box_ellipsoid(floored).asDiagonal()));
  const DegenerateEllipsoid lifted = propagate_to_space(cyl, 15, {12, 13, 14});
  return fuse_intersection(e1, lifted, b);
}

// Initial set in error coordinates: tight boxes on the known vehicle state
// and estimate, and the predicted disturbance bracket scaled by 3 so the
// whole bracket box fits inside the ellipsoid.
inline Ellipsoid initial_tube_set(const PredictedBounds& at_t0,
                                  double radius_x = 0.05,
                                  double radius_dhat = 0.05) {
  if (radius_x <= 0.0 || radius_dhat <= 0.0) {
    throw std::invalid_argument("initial radii must be positive");
  }
  Vector15d c = Vector15d::Zero();
  c.tail<3>() = at_t0.d_m;
  Vector15d r;
  r.head<9>().setConstant(radius_x);
  r.segment<3>(9).setConstant(radius_dhat);
  // A tiny radius floor keeps the shape matrix well conditioned when a
  // disturbance channel is known exactly.
  r.tail<3>() = (3.0 * at_t0.d_M).cwiseMax(1e-5);
  const Matrix15d k = r.array().square().inverse().matrix().asDiagonal();
  return Ellipsoid(c, k);
}

struct TubeProblem {
  ControllerGains gains;
  double alpha = 2.0;
  DisturbanceModel model;
  Eigen::Vector3d m_p = Eigen::Vector3d::Constant(0.001);
  Eigen::Vector3d m_v = Eigen::Vector3d::Constant(0.01);
  Eigen::Vector3d m_phi = Eigen::Vector3d::Constant(0.01);
  double dt = 0.02;
  double b = 0.99;
  double epsilon = 1e-9;
  int stm_substeps = 16;
  bool attitude_feedforward = true;
  double radius_x = 0.05;
  double radius_dhat = 0.05;
  DisturbancePrediction prediction;
};

struct TubeStep {
  double t = 0.0;
  Ellipsoid set;        // 15-dim, error coordinates
  Ellipsoid projected;  // 9-dim vehicle block, error coordinates
  Vector15d y_r = Vector15d::Zero();
  double trace_inv = 0.0;
  double logdet_inv = 0.0;
  std::int64_t step_ns = 0;
};

struct FrsTube {
  TubeMode mode = TubeMode::kProposedLin;
  std::vector<TubeStep> steps;
};

// Raw per-step byproducts, exposed for audits.
struct StepDiagnostics {
  const StateTransition& stm;
  const Eigen::MatrixXd& fbar;
  const Eigen::VectorXd& betabar;
  const Matrix15d& b_eta;
  double t = 0.0;
  double dt = 0.0;
};

using StepCallback = std::function<void(const StepDiagnostics&)>;

// Full tube propagation from the augmented state at t0. y_t0 carries the
// vehicle state and the current estimate; the true-disturbance block is
// ignored (the reference uses zero, the initial set uses the prediction).
template <typename RefFn>
FrsTube run_tube(const TubeProblem& prob, const RefFn& ref,
                 const Vector15d& y_t0, double t0, int nsteps, TubeMode mode,
                 const StepCallback& on_step = {}) {
  if (nsteps < 1) throw std::invalid_argument("need at least one step");
  const bool use_estimate = mode != TubeMode::kBaseline;

  const ReferencePath rollout =
      reference_rollout(y_t0, ref, t0, nsteps, prob.dt, prob.gains, prob.alpha,
                        use_estimate, prob.attitude_feedforward);

  const Eigen::MatrixXd fbar = input_matrix(mode);
  const Eigen::VectorXd betabar =
      input_bounds(mode, prob.model, prob.m_p, prob.m_v, prob.m_phi);

  const auto bounds_at = [&](double tau) -> PredictedBounds {
    if (mode == TubeMode::kBaseline) {
      return {Eigen::Vector3d::Zero(), prob.model.level};
    }
    return predict_bounds(prob.prediction, tau);
  };
  const auto jac_at = [&](int step, int quarter) {
    const double tau = rollout.time_at(step, quarter);
    const Eigen::Vector3d ff = prob.attitude_feedforward
                                   ? nominal_attitude_rate(ref, tau)
                                   : Eigen::Vector3d::Zero();
    return jacobian(rollout.at(step, quarter), ref(tau), prob.gains,
                    prob.alpha, use_estimate, ff);
  };

  FrsTube tube;
  tube.mode = mode;
  tube.steps.reserve(static_cast<size_t>(nsteps + 1));

  // Reported size metrics describe the projected state-space tube, the set
  // the comparison cares about; the estimate and disturbance blocks are
  // bookkeeping coordinates.
  const auto make_step = [](double t, const Ellipsoid& set,
                            const Vector15d& y_r, std::int64_t ns) {
    Ellipsoid proj = project(set, {0, 1, 2, 3, 4, 5, 6, 7, 8});
    const double trace_inv = proj.inverse_shape().trace();
    const double logdet_inv = proj.logdet_inverse_shape();
    return TubeStep{t, set, std::move(proj), y_r, trace_inv, logdet_inv, ns};
  };

  Ellipsoid s = initial_tube_set(bounds_at(t0), prob.radius_x, prob.radius_dhat);
  tube.steps.push_back(make_step(t0, s, rollout.at(0, 0), 0));

  Matrix15d a_end = jac_at(0, 0);
  for (int k = 0; k < nsteps; ++k) {
    const auto tic = std::chrono::steady_clock::now();
    std::array<Matrix15d, 5> a_nodes;
    a_nodes[0] = a_end;
    for (int q = 1; q <= 4; ++q) a_nodes[static_cast<size_t>(q)] = jac_at(k, q);
    a_end = a_nodes[4];
    const StateTransition stm = state_transition(a_nodes, prob.dt, prob.stm_substeps);
    const Matrix15d b_eta =
        hopf_step_shape(stm, fbar, betabar, prob.dt, prob.epsilon);
    const double t_next = t0 + (k + 1) * prob.dt;
    const PredictedBounds pb = bounds_at(t_next);
    s = propagate_step(s, stm, b_eta, prob.b, pb.d_m, pb.d_M);
    const auto toc = std::chrono::steady_clock::now();
    const std::int64_t ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(toc - tic).count();
    tube.steps.push_back(make_step(t_next, s, rollout.at(k + 1, 0), ns));
    if (on_step) {
      on_step(StepDiagnostics{stm, fbar, betabar, b_eta, t0 + k * prob.dt,
                              prob.dt});
    }
  }
  return tube;
}

}  // namespace frs

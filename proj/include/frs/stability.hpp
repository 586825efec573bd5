#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "frs/controller.hpp"
#include "frs/disturbance.hpp"
#include "frs/simulation.hpp"

namespace frs {

// Closed form certificate for the translational error dynamics under the
// observer based controller.  The error state is (e_p, e_v, e_d) and the
// Lyapunov function is V = 1/2 (e_p, e_v)' P (e_p, e_v) + 1/2 e_d' e_d.
// Its derivative is bounded by -|e|' Q |e| + N |e| with |e| the vector of
// channel norms, Q = Q1 + s_m Q2, and s_m a ceiling on the sine of the
// thrust tilt error.  Hypotheses and the resulting ultimate bounds are
// reported rather than enforced, so a failing gain set can be inspected.
struct StabilityCertificate {
  double k_p = 0.0;
  double k_v = 0.0;
  double alpha = 0.0;

  Eigen::Matrix3d q1 = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d q2 = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d q = Eigen::Matrix3d::Zero();
  Eigen::Matrix<double, 6, 6> p = Eigen::Matrix<double, 6, 6>::Zero();

  double lambda_min_q1 = 0.0;
  double lambda_min_q2 = 0.0;
  double lambda_min_q = 0.0;

  double alpha_threshold = 0.0;  // observer gain must exceed this
  double s_m = 0.0;              // tilt ceiling the certificate was built for
  double s_m_limit = 0.0;        // largest tilt ceiling the gains admit
  bool tilt_bound_vacuous = false;  // lambda_min(Q2) >= 0, any tilt admissible

  bool gain_ok = false;      // k_p > 0 and k_v > 1
  bool observer_ok = false;  // alpha above its threshold
  bool tilt_ok = false;      // s_m below its limit
  bool conditions_ok = false;

  double m_bound = 0.0;  // ceiling on |g e3 + a_r + d| along the flight
  double n_bound = 0.0;  // forcing magnitude sqrt(2 s_m^2 m^2 + |rate|^2)
  double theta1 = 0.8;
  double theta2 = 0.8;
  double disturbance_radius = 0.0;  // ultimate bound on |e_d|
  double tracking_radius = 0.0;     // ultimate bound on |(e_p, e_v, e_d)|
};

inline StabilityCertificate build_certificate(const ControllerGains& gains,
                                              double alpha,
                                              const DisturbanceModel& model,
                                              double s_m, double m_bound,
                                              double theta1 = 0.8,
                                              double theta2 = 0.8) {
  validate(model);
  if (alpha <= 0.0) throw std::invalid_argument("observer gain must be positive");
  if (s_m < 0.0 || s_m > 1.0) throw std::invalid_argument("tilt ceiling must lie in [0, 1]");
  if (m_bound < 0.0) throw std::invalid_argument("force ceiling must be nonnegative");
  if (theta1 <= 0.0 || theta1 >= 1.0 || theta2 <= 0.0 || theta2 >= 1.0) {
    throw std::invalid_argument("split factors must lie in (0, 1)");
  }
  const double inf = std::numeric_limits<double>::infinity();

  StabilityCertificate cert;
  cert.k_p = gains.k_p;
  cert.k_v = gains.k_v;
  cert.alpha = alpha;
  cert.s_m = s_m;
  cert.theta1 = theta1;
  cert.theta2 = theta2;
  cert.m_bound = m_bound;

  const double kp = gains.k_p, kv = gains.k_v;
  cert.q1 << kp, 0.0, -0.5, 0.0, kv - 1.0, -0.5, -0.5, -0.5, alpha;
  cert.q2 << -kp, -0.5 * (kp + kv), -0.5, -0.5 * (kp + kv), -kv, -0.5, -0.5,
      -0.5, 0.0;
  cert.q = cert.q1 + s_m * cert.q2;
  cert.p.setZero();
  cert.p.topLeftCorner<3, 3>() = (kp + kv) * Eigen::Matrix3d::Identity();
  cert.p.topRightCorner<3, 3>().setIdentity();
  cert.p.bottomLeftCorner<3, 3>().setIdentity();
  cert.p.bottomRightCorner<3, 3>().setIdentity();

  const auto lambda_min = [](const Eigen::Matrix3d& m) {
    return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(m).eigenvalues()(0);
  };
  cert.lambda_min_q1 = lambda_min(cert.q1);
  cert.lambda_min_q2 = lambda_min(cert.q2);
  cert.lambda_min_q = lambda_min(cert.q);

  cert.gain_ok = kp > 0.0 && kv > 1.0;
  cert.alpha_threshold =
      cert.gain_ok ? 0.25 * (1.0 / kp + 1.0 / (kv - 1.0)) : inf;
  cert.observer_ok = alpha > cert.alpha_threshold;

  cert.tilt_bound_vacuous = cert.lambda_min_q2 >= 0.0;
  cert.s_m_limit = cert.tilt_bound_vacuous
                       ? inf
                       : -cert.lambda_min_q1 / cert.lambda_min_q2;
  cert.tilt_ok = s_m < cert.s_m_limit;
  cert.conditions_ok = cert.gain_ok && cert.observer_ok && cert.tilt_ok &&
                       cert.lambda_min_q > 0.0;

  cert.n_bound = std::sqrt(2.0 * s_m * s_m * m_bound * m_bound +
                           model.rate.squaredNorm());
  cert.disturbance_radius = model.rate.norm() / (theta1 * alpha);
  cert.tracking_radius =
      cert.conditions_ok ? cert.n_bound / (cert.lambda_min_q * theta2) : inf;
  return cert;
}

// Thrust shortfall written as a tilt forcing: with unfloored thrust the
// achieved specific force minus the desired one equals
// |f_d| ((z_b . z_br) z_b - z_br), whose norm is |f_d| sin(tilt error).
inline Eigen::Vector3d tilt_forcing(const ControlDecision& ctl) {
  return ctl.f_d.norm() *
         (ctl.z_b.dot(ctl.z_b_r) * ctl.z_b - ctl.z_b_r);
}

// Observer convergence audit over a logged rollout.  The estimation error
// obeys V1 = 1/2 |e_d|^2 with dV1/dt <= -2 alpha (1 - theta1) V1 whenever
// |e_d| >= |rate| / (theta1 alpha), so the log of V1 must fall at least
// that fast until the error enters the ball and must stay inside afterward
// (up to the containment slack, which absorbs sampling effects).
struct DisturbanceAudit {
  double radius = 0.0;       // certified ultimate bound on |e_d|
  double decay_bound = 0.0;  // certified log rate of V1 during the approach
  double fitted_decay = 0.0; // measured log slope, infinite when no approach
  int approach_samples = 0;
  bool entered = false;
  double entry_time = 0.0;
  int violations = 0;
  double worst_ratio = 0.0;  // max |e_d| / radius at or after entry
  bool ok = false;
};

inline DisturbanceAudit audit_disturbance_convergence(
    const SimTrace& trace, double alpha, double theta1,
    const DisturbanceModel& model, double slack = 0.05) {
  validate(model);
  if (alpha <= 0.0) throw std::invalid_argument("observer gain must be positive");
  if (theta1 <= 0.0 || theta1 >= 1.0) {
    throw std::invalid_argument("split factor must lie in (0, 1)");
  }
  if (model.rate.norm() == 0.0) {
    throw std::invalid_argument("audit needs a nonzero rate bound");
  }
  if (trace.samples.size() < 2) {
    throw std::invalid_argument("audit needs at least two samples");
  }

  DisturbanceAudit audit;
  audit.radius = model.rate.norm() / (theta1 * alpha);
  audit.decay_bound = 2.0 * alpha * (1.0 - theta1);
  audit.fitted_decay = std::numeric_limits<double>::infinity();

  std::vector<double> ts, logs;
  for (const SimSample& s : trace.samples) {
    const double err = (s.d - s.d_hat).norm();
    if (!audit.entered && err < audit.radius) {
      audit.entered = true;
      audit.entry_time = s.t;
    }
    if (!audit.entered) {
      ++audit.approach_samples;
      if (err > 0.0) {
        ts.push_back(s.t);
        logs.push_back(2.0 * std::log(err) - std::log(2.0));
      }
    } else {
      audit.worst_ratio = std::max(audit.worst_ratio, err / audit.radius);
      if (err > audit.radius * (1.0 + slack)) ++audit.violations;
    }
  }

  if (ts.size() >= 2) {
    const auto n = static_cast<double>(ts.size());
    double mt = 0.0, ml = 0.0;
    for (size_t i = 0; i < ts.size(); ++i) { mt += ts[i]; ml += logs[i]; }
    mt /= n;
    ml /= n;
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < ts.size(); ++i) {
      num += (ts[i] - mt) * (logs[i] - ml);
      den += (ts[i] - mt) * (ts[i] - mt);
    }
    audit.fitted_decay = -num / den;
  }
  audit.ok = audit.entered && audit.violations == 0;
  return audit;
}

// Residual audit of the closed loop against the modeled error dynamics
//   e_p' = e_v
//   e_v' = -k_p e_p - k_v e_v + e_d + tilt forcing
//   e_d' = w - alpha e_d
// using central differences of the logged channels, together with the
// ultimate bound check over the tail of the trace.  The disturbance slope w
// cancels by differencing e_d against d, so only the estimate channel is
// differentiated; samples too close to a slope knot of the disturbance are
// skipped because the second derivative of the estimate jumps there, and
// samples around floored thrust are skipped because the tilt identity
// assumes the unfloored projection.
struct ErrorAuditOptions {
  double tail_fraction = 0.5;   // portion of the trace the checks run on
  double residual_tol = 2e-3;
  double bound_slack = 1.10;
  double knot_dt = 0.0;         // slope knot spacing of d, zero when smooth
};

struct ErrorDynamicsAudit {
  double max_residual_p = 0.0;
  double max_residual_v = 0.0;
  double max_residual_d = 0.0;
  int checked_samples = 0;
  int skipped_samples = 0;
  double max_tilt = 0.0;        // max sine of the tilt error over the tail
  double max_error_tail = 0.0;  // max |(|e_p|, |e_v|, |e_d|)| over the tail
  bool residuals_ok = false;
  bool bound_ok = false;
  bool ok = false;
};

template <typename RefFn>
ErrorDynamicsAudit audit_error_dynamics(const SimTrace& trace,
                                        const RefFn& ref,
                                        const ControllerGains& gains,
                                        const StabilityCertificate& cert,
                                        const ErrorAuditOptions& opt = {}) {
  if (opt.tail_fraction <= 0.0 || opt.tail_fraction > 1.0) {
    throw std::invalid_argument("tail fraction must lie in (0, 1]");
  }
  const auto& samples = trace.samples;
  if (samples.size() < 3) {
    throw std::invalid_argument("audit needs at least three samples");
  }
  const size_t first =
      static_cast<size_t>(std::floor(static_cast<double>(samples.size()) *
                                     (1.0 - opt.tail_fraction)));

  const auto near_knot = [&](double t) {
    if (opt.knot_dt <= 0.0) return false;
    const double k = std::round(t / opt.knot_dt);
    const double dist = std::abs(t - k * opt.knot_dt);
    return dist < 1.5 * (samples[1].t - samples[0].t);
  };

  ErrorDynamicsAudit audit;
  for (size_t k = first; k < samples.size(); ++k) {
    const SimSample& s = samples[k];
    const FlatOutput r = ref(s.t);
    const Eigen::Vector3d e_p = s.x.p - r.p;
    const Eigen::Vector3d e_v = s.x.v - r.v;
    const Eigen::Vector3d e_d = s.d - s.d_hat;
    const Eigen::Vector3d e(e_p.norm(), e_v.norm(), e_d.norm());
    audit.max_error_tail = std::max(audit.max_error_tail, e.norm());
    audit.max_tilt = std::max(audit.max_tilt, s.ctl.sin_tilt_err);

    if (k == first || k + 1 == samples.size()) continue;
    const SimSample& lo = samples[k - 1];
    const SimSample& hi = samples[k + 1];
    const bool floored = lo.ctl.thrust_floored || s.ctl.thrust_floored ||
                         hi.ctl.thrust_floored;
    if (floored || near_knot(s.t)) {
      ++audit.skipped_samples;
      continue;
    }
    const double h2 = hi.t - lo.t;
    const FlatOutput rlo = ref(lo.t);
    const FlatOutput rhi = ref(hi.t);
    const Eigen::Vector3d dep =
        ((hi.x.p - rhi.p) - (lo.x.p - rlo.p)) / h2;
    const Eigen::Vector3d dev =
        ((hi.x.v - rhi.v) - (lo.x.v - rlo.v)) / h2;
    const Eigen::Vector3d dhat_dot = (hi.d_hat - lo.d_hat) / h2;

    const Eigen::Vector3d r_p = dep - e_v;
    const Eigen::Vector3d r_v = dev - (-gains.k_p * e_p - gains.k_v * e_v +
                                       e_d + tilt_forcing(s.ctl));
    const Eigen::Vector3d r_d = cert.alpha * e_d - dhat_dot;
    audit.max_residual_p = std::max(audit.max_residual_p, r_p.norm());
    audit.max_residual_v = std::max(audit.max_residual_v, r_v.norm());
    audit.max_residual_d = std::max(audit.max_residual_d, r_d.norm());
    ++audit.checked_samples;
  }

  audit.residuals_ok = audit.checked_samples > 0 &&
                       audit.max_residual_p <= opt.residual_tol &&
                       audit.max_residual_v <= opt.residual_tol &&
                       audit.max_residual_d <= opt.residual_tol;
  audit.bound_ok = cert.conditions_ok &&
                   audit.max_error_tail <=
                       cert.tracking_radius * opt.bound_slack;
  audit.ok = audit.residuals_ok && audit.bound_ok;
  return audit;
}

}  // namespace frs

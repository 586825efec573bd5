#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "frs/controller.hpp"
#include "frs/disturbance.hpp"
#include "frs/frs_engine.hpp"
#include "frs/scenario.hpp"
#include "frs/simulation.hpp"
#include "frs/stability.hpp"

namespace frs {

#ifndef FRS_GIT_DESCRIBE
#define FRS_GIT_DESCRIBE "unknown"
#endif

inline const char* git_describe() { return FRS_GIT_DESCRIBE; }

// Containment slack absorbing a few ulps of roundtrip and centering
// roundoff; violations beyond it are treated as genuine.
inline constexpr double kContainmentSlack = 1e-6;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

// Independent generator per sample index, so results do not depend on the
// order rollouts execute in.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(detail::splitmix64(seed ^ detail::splitmix64(stream + 1)));
}

inline MultirotorState on_reference_state(const CircularTrajectory& traj,
                                          double t) {
  const FlatOutput r = traj.sample(t);
  MultirotorState x;
  x.p = r.p;
  x.v = r.v;
  x.phi = desired_attitude(kGravity * Eigen::Vector3d::UnitZ() + r.a, 0.0);
  return x;
}

inline TubeProblem tube_problem(const ScenarioConfig& cfg,
                                const DisturbancePrediction& pred) {
  TubeProblem prob;
  prob.gains = cfg.gains;
  prob.alpha = cfg.alpha_d;
  prob.model = cfg.model;
  prob.m_p = cfg.m_p;
  prob.m_v = cfg.m_v;
  prob.m_phi = cfg.m_phi;
  prob.dt = cfg.dt;
  prob.b = cfg.b;
  prob.epsilon = cfg.epsilon;
  prob.stm_substeps = cfg.stm_substeps;
  prob.attitude_feedforward = cfg.attitude_feedforward;
  prob.radius_x = cfg.radius_x;
  prob.radius_dhat = cfg.radius_dhat;
  prob.prediction = pred;
  return prob;
}

inline std::vector<TubeMode> modes_for(ModeSelect sel) {
  switch (sel) {
    case ModeSelect::kAll:
      return {TubeMode::kBaseline, TubeMode::kProposedNolin,
              TubeMode::kProposedLin};
    case ModeSelect::kBaseline: return {TubeMode::kBaseline};
    case ModeSelect::kProposedNolin: return {TubeMode::kProposedNolin};
    case ModeSelect::kProposedLin: return {TubeMode::kProposedLin};
  }
  throw std::invalid_argument("unknown mode selection");
}

// One tube slice in absolute state-space coordinates: the exported center is
// reference plus error-set center, computed once here so exported files and
// in-memory verdicts share the exact same arithmetic.
struct TubeSlice {
  double t = 0.0;
  Eigen::VectorXd center;  // 9, absolute
  Eigen::MatrixXd shape;   // 9 x 9, membership form (x-c)' K (x-c) <= 1
  Eigen::VectorXd extent;  // 9, per-channel half widths sqrt(diag K^{-1})
  double trace_inv = 0.0;
  double logdet_inv = 0.0;
  std::int64_t step_ns = 0;
};

inline std::vector<TubeSlice> absolute_slices(const FrsTube& tube) {
  std::vector<TubeSlice> out;
  out.reserve(tube.steps.size());
  for (const TubeStep& s : tube.steps) {
    TubeSlice slice;
    slice.t = s.t;
    slice.center = s.y_r.head<9>() + s.projected.center();
    slice.shape = s.projected.shape();
    slice.extent = s.projected.inverse_shape().diagonal().cwiseSqrt();
    slice.trace_inv = s.trace_inv;
    slice.logdet_inv = s.logdet_inv;
    slice.step_ns = s.step_ns;
    out.push_back(std::move(slice));
  }
  return out;
}

inline bool slice_contains(const TubeSlice& slice, const Eigen::VectorXd& x,
                           double slack = kContainmentSlack) {
  const Eigen::VectorXd r = x - slice.center;
  return r.dot(slice.shape * r) <= 1.0 + slack;
}

struct ModeArtifacts {
  TubeMode mode = TubeMode::kProposedLin;
  FrsTube tube;
  std::vector<TubeSlice> slices;
  double wall_ms = 0.0;
};

inline const ModeArtifacts* find_mode(const std::vector<ModeArtifacts>& v,
                                      TubeMode mode) {
  for (const auto& m : v) {
    if (m.mode == mode) return &m;
  }
  return nullptr;
}

struct SampleRecord {
  int sample_id = 0;
  double t = 0.0;
  Vector9d x = Vector9d::Zero();
  Eigen::Vector3d d = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_hat = Eigen::Vector3d::Zero();
  bool contained = true;
};

struct ContainmentStats {
  long checked = 0;
  long violations = 0;
};

// Gain certification report: the certificate built from the measured tilt
// ceiling plus the two empirical audits on one seeded flight.
struct GainsReport {
  std::string hash;
  StabilityCertificate certificate;
  DisturbanceAudit disturbance;
  ErrorDynamicsAudit dynamics;
  double measured_s_m = 0.0;
  bool ok = false;
};

inline GainsReport run_check_gains(const ScenarioConfig& cfg) {
  validate(cfg);
  GainsReport rep;
  rep.hash = scenario_hash(cfg);
  const CircularTrajectory traj = cfg.trajectory;
  const auto ref = [traj](double t) { return traj.sample(t); };

  auto rng = sample_rng(cfg.seed, 0);
  const DisturbancePath path = sample_disturbance(
      cfg.model, 0.0, cfg.total_time, cfg.knot_dt, cfg.d0, rng);
  SimOptions opt;
  opt.dt = cfg.dt;
  opt.alpha = cfg.alpha_d;
  opt.use_estimate = true;
  opt.attitude_feedforward = cfg.attitude_feedforward;
  const MultirotorState x0 = on_reference_state(traj, 0.0);
  const int nsteps = static_cast<int>(std::round(cfg.total_time / cfg.dt));
  const SimTrace trace = simulate_closed_loop(
      x0, make_observer(cfg.alpha_d, x0.v), ref,
      [&](double t) { return path.value(t); }, cfg.gains, 0.0, nsteps, opt);

  rep.disturbance =
      audit_disturbance_convergence(trace, cfg.alpha_d, cfg.theta1, cfg.model);

  ErrorAuditOptions aopt;
  aopt.knot_dt = cfg.knot_dt;
  const double ceiling = certificate_force_ceiling(cfg);
  const StabilityCertificate probe = build_certificate(
      cfg.gains, cfg.alpha_d, cfg.model, 0.0, ceiling, cfg.theta1, cfg.theta2);
  rep.measured_s_m =
      audit_error_dynamics(trace, ref, cfg.gains, probe, aopt).max_tilt;
  rep.certificate =
      build_certificate(cfg.gains, cfg.alpha_d, cfg.model, rep.measured_s_m,
                        ceiling, cfg.theta1, cfg.theta2);
  rep.dynamics = audit_error_dynamics(trace, ref, cfg.gains, rep.certificate, aopt);
  rep.ok = rep.certificate.conditions_ok && rep.disturbance.ok && rep.dynamics.ok;
  return rep;
}

// Shared scenario-1 preamble: one admissible disturbance over the warm-up,
// both control families flown through it from the same on-reference start,
// and the prediction snapshot frozen at t0.
struct WarmStart {
  double t0 = 0.0;
  Eigen::Vector3d d_t0 = Eigen::Vector3d::Zero();
  DisturbancePrediction prediction;
  SimTrace warm_proposed;
  SimTrace warm_baseline;
};

inline WarmStart warm_start(const ScenarioConfig& cfg) {
  const CircularTrajectory traj = cfg.trajectory;
  const auto ref = [traj](double t) { return traj.sample(t); };
  const int warm_steps = static_cast<int>(std::round(cfg.warm_up / cfg.dt));

  WarmStart ws;
  ws.t0 = warm_steps * cfg.dt;
  auto rng = sample_rng(cfg.seed, 0);
  const DisturbancePath path =
      sample_disturbance(cfg.model, 0.0, std::max(cfg.warm_up, cfg.knot_dt),
                         cfg.knot_dt, cfg.d0, rng);
  ws.d_t0 = path.value(ws.t0);

  const MultirotorState x0 = on_reference_state(traj, 0.0);
  SimOptions po;
  po.dt = cfg.dt;
  po.alpha = cfg.alpha_d;
  po.use_estimate = true;
  po.attitude_feedforward = cfg.attitude_feedforward;
  SimOptions bo = po;
  bo.use_estimate = false;
  const auto d_of = [&](double t) { return path.value(t); };
  ws.warm_proposed = simulate_closed_loop(x0, make_observer(cfg.alpha_d, x0.v),
                                          ref, d_of, cfg.gains, 0.0,
                                          warm_steps, po);
  ws.warm_baseline = simulate_closed_loop(x0, make_observer(cfg.alpha_d, x0.v),
                                          ref, d_of, cfg.gains, 0.0,
                                          warm_steps, bo);

  ws.prediction.t0 = ws.t0;
  ws.prediction.d_hat_t0 = ws.warm_proposed.samples.back().d_hat;
  ws.prediction.r0 = error_radius(cfg.model, cfg.alpha_d, cfg.theta1, ws.t0);
  ws.prediction.model = cfg.model;
  ws.prediction.theta1 = cfg.theta1;
  return ws;
}

inline Vector15d tube_start_state(const WarmStart& ws, TubeMode mode) {
  const bool baseline = mode == TubeMode::kBaseline;
  const SimSample& s = baseline ? ws.warm_baseline.samples.back()
                                : ws.warm_proposed.samples.back();
  Vector15d y0 = Vector15d::Zero();
  y0.head<9>() = s.x.vec();
  if (!baseline) y0.segment<3>(9) = s.d_hat;
  return y0;
}

using DiagCallback = std::function<void(TubeMode, const StepDiagnostics&)>;

inline ModeArtifacts timed_tube(const TubeProblem& prob,
                                const CircularTrajectory& traj,
                                const Vector15d& y0, double t0, int nsteps,
                                TubeMode mode, const DiagCallback& diag) {
  const auto ref = [traj](double t) { return traj.sample(t); };
  StepCallback cb;
  if (diag) cb = [&](const StepDiagnostics& d) { diag(mode, d); };
  const auto start = std::chrono::steady_clock::now();
  FrsTube tube = run_tube(prob, ref, y0, t0, nsteps, mode, cb);
  const auto stop = std::chrono::steady_clock::now();
  ModeArtifacts out;
  out.mode = mode;
  out.wall_ms =
      std::chrono::duration<double, std::milli>(stop - start).count();
  out.slices = absolute_slices(tube);
  out.tube = std::move(tube);
  return out;
}

struct Scenario1Result {
  ScenarioConfig config;
  std::string hash;
  WarmStart warm;
  std::vector<ModeArtifacts> modes;
  std::vector<SampleRecord> proposed_records;  // judged against proposed_lin
  std::vector<SampleRecord> baseline_records;  // judged against baseline
  ContainmentStats proposed_containment;
  ContainmentStats baseline_containment;
  double det_ratio_lin = 0.0;    // baseline det over proposed_lin det at the end
  double det_ratio_nolin = 0.0;  // baseline det over proposed_nolin det
  GainsReport gains_report;
};

inline Scenario1Result run_scenario1(const ScenarioConfig& cfg,
                                     const DiagCallback& diag = {}) {
  validate(cfg);
  Scenario1Result out;
  out.config = cfg;
  out.hash = scenario_hash(cfg);
  out.warm = warm_start(cfg);
  const CircularTrajectory traj = cfg.trajectory;
  const auto ref = [traj](double t) { return traj.sample(t); };
  const int nsteps = static_cast<int>(std::round(cfg.horizon / cfg.dt));
  const TubeProblem prob = tube_problem(cfg, out.warm.prediction);

  for (const TubeMode mode : modes_for(cfg.mode)) {
    out.modes.push_back(timed_tube(prob, traj, tube_start_state(out.warm, mode),
                                   out.warm.t0, nsteps, mode, diag));
  }

  const ModeArtifacts* lin = find_mode(out.modes, TubeMode::kProposedLin);
  const ModeArtifacts* base = find_mode(out.modes, TubeMode::kBaseline);
  const ModeArtifacts* nolin = find_mode(out.modes, TubeMode::kProposedNolin);
  if (lin && base) {
    out.det_ratio_lin = std::exp(base->slices.back().logdet_inv -
                                 lin->slices.back().logdet_inv);
  }
  if (nolin && base) {
    out.det_ratio_nolin = std::exp(base->slices.back().logdet_inv -
                                   nolin->slices.back().logdet_inv);
  }

  SimOptions po;
  po.dt = cfg.dt;
  po.alpha = cfg.alpha_d;
  po.use_estimate = true;
  po.attitude_feedforward = cfg.attitude_feedforward;
  SimOptions bo = po;
  bo.use_estimate = false;
  const SimSample& sp = out.warm.warm_proposed.samples.back();
  const SimSample& sb = out.warm.warm_baseline.samples.back();

  const auto roll_family = [&](const SimSample& at_t0, const SimOptions& opt,
                               const DisturbancePath& path,
                               const std::vector<TubeSlice>& slices,
                               int sample_id, std::vector<SampleRecord>& records,
                               ContainmentStats& stats) {
    const SimTrace tr = simulate_closed_loop(
        at_t0.x, make_observer(cfg.alpha_d, at_t0.x.v, at_t0.d_hat), ref,
        [&](double t) { return path.value(t); }, cfg.gains, out.warm.t0,
        nsteps, opt);
    for (int k = 0; k <= nsteps; ++k) {
      const SimSample& s = tr.samples[static_cast<size_t>(k)];
      SampleRecord rec;
      rec.sample_id = sample_id;
      rec.t = s.t;
      rec.x = s.x.vec();
      rec.d = s.d;
      rec.d_hat = s.d_hat;
      rec.contained = slice_contains(slices[static_cast<size_t>(k)], rec.x);
      ++stats.checked;
      if (!rec.contained) ++stats.violations;
      records.push_back(std::move(rec));
    }
  };

  if (lin || base) {
    const size_t per_family = static_cast<size_t>(cfg.n_samples) *
                              static_cast<size_t>(nsteps + 1);
    if (lin) out.proposed_records.reserve(per_family);
    if (base) out.baseline_records.reserve(per_family);
    for (int i = 0; i < cfg.n_samples; ++i) {
      auto rng = sample_rng(cfg.seed, static_cast<std::uint64_t>(i) + 1);
      const DisturbancePath path = sample_disturbance(
          cfg.model, out.warm.t0, cfg.horizon, cfg.knot_dt, out.warm.d_t0, rng);
      if (lin) {
        roll_family(sp, po, path, lin->slices, i, out.proposed_records,
                    out.proposed_containment);
      }
      if (base) {
        roll_family(sb, bo, path, base->slices, i, out.baseline_records,
                    out.baseline_containment);
      }
    }
  }

  out.gains_report = run_check_gains(cfg);
  return out;
}

struct ReplanTube {
  double t0 = 0.0;
  ModeArtifacts artifacts;
};

struct Scenario2Result {
  ScenarioConfig config;
  std::string hash;
  SimTrace flight_proposed;
  SimTrace flight_baseline;
  std::vector<ReplanTube> proposed_tubes;  // proposed_lin at each replan
  std::vector<ReplanTube> baseline_tubes;
  std::vector<SampleRecord> proposed_records;  // the flown path, one sample
  std::vector<SampleRecord> baseline_records;
  ContainmentStats proposed_containment;
  ContainmentStats baseline_containment;
  double proposed_mean_wall_ms = 0.0;
  double baseline_mean_wall_ms = 0.0;
  GainsReport gains_report;
};

inline Scenario2Result run_scenario2(const ScenarioConfig& cfg,
                                     const DiagCallback& diag = {}) {
  validate(cfg);
  Scenario2Result out;
  out.config = cfg;
  out.hash = scenario_hash(cfg);
  const CircularTrajectory traj = cfg.trajectory;
  const auto ref = [traj](double t) { return traj.sample(t); };
  const int total_steps = static_cast<int>(std::round(cfg.total_time / cfg.dt));
  const int tube_steps = static_cast<int>(std::round(cfg.horizon / cfg.dt));
  const int replan_stride =
      static_cast<int>(std::round(cfg.replan_period / cfg.dt));

  auto rng = sample_rng(cfg.seed, 0);
  const DisturbancePath path = sample_disturbance(
      cfg.model, 0.0, cfg.total_time, cfg.knot_dt, cfg.d0, rng);
  const auto d_of = [&](double t) { return path.value(t); };

  SimOptions po;
  po.dt = cfg.dt;
  po.alpha = cfg.alpha_d;
  po.use_estimate = true;
  po.attitude_feedforward = cfg.attitude_feedforward;
  SimOptions bo = po;
  bo.use_estimate = false;
  const MultirotorState x0 = on_reference_state(traj, 0.0);
  out.flight_proposed =
      simulate_closed_loop(x0, make_observer(cfg.alpha_d, x0.v), ref, d_of,
                           cfg.gains, 0.0, total_steps, po);
  out.flight_baseline =
      simulate_closed_loop(x0, make_observer(cfg.alpha_d, x0.v), ref, d_of,
                           cfg.gains, 0.0, total_steps, bo);

  const int nreplans = total_steps / replan_stride + 1;
  for (int k = 0; k < nreplans; ++k) {
    const int idx = k * replan_stride;
    const double tk = idx * cfg.dt;
    {
      const SimSample& s = out.flight_proposed.samples[static_cast<size_t>(idx)];
      DisturbancePrediction pred;
      pred.t0 = tk;
      pred.d_hat_t0 = s.d_hat;
      pred.r0 = error_radius(cfg.model, cfg.alpha_d, cfg.theta1, tk);
      pred.model = cfg.model;
      pred.theta1 = cfg.theta1;
      Vector15d y0 = Vector15d::Zero();
      y0.head<9>() = s.x.vec();
      y0.segment<3>(9) = s.d_hat;
      out.proposed_tubes.push_back(
          {tk, timed_tube(tube_problem(cfg, pred), traj, y0, tk, tube_steps,
                          TubeMode::kProposedLin, diag)});
    }
    {
      const SimSample& s = out.flight_baseline.samples[static_cast<size_t>(idx)];
      DisturbancePrediction pred;  // placeholder, the baseline ignores it
      pred.t0 = tk;
      pred.model = cfg.model;
      pred.theta1 = cfg.theta1;
      Vector15d y0 = Vector15d::Zero();
      y0.head<9>() = s.x.vec();
      out.baseline_tubes.push_back(
          {tk, timed_tube(tube_problem(cfg, pred), traj, y0, tk, tube_steps,
                          TubeMode::kBaseline, diag)});
    }
  }

  const auto audit_flight = [&](const SimTrace& flight,
                                const std::vector<ReplanTube>& tubes,
                                std::vector<SampleRecord>& records,
                                ContainmentStats& stats) {
    records.reserve(flight.samples.size());
    for (int j = 0; j <= total_steps; ++j) {
      const SimSample& s = flight.samples[static_cast<size_t>(j)];
      SampleRecord rec;
      rec.sample_id = 0;
      rec.t = s.t;
      rec.x = s.x.vec();
      rec.d = s.d;
      rec.d_hat = s.d_hat;
      for (size_t k = 0; k < tubes.size(); ++k) {
        const int idx0 = static_cast<int>(k) * replan_stride;
        const int local = j - idx0;
        if (local < 0 || local > tube_steps) continue;
        ++stats.checked;
        if (!slice_contains(tubes[k].artifacts.slices[static_cast<size_t>(local)],
                            rec.x)) {
          rec.contained = false;
          ++stats.violations;
        }
      }
      records.push_back(std::move(rec));
    }
  };
  audit_flight(out.flight_proposed, out.proposed_tubes, out.proposed_records,
               out.proposed_containment);
  audit_flight(out.flight_baseline, out.baseline_tubes, out.baseline_records,
               out.baseline_containment);

  for (const auto& t : out.proposed_tubes) out.proposed_mean_wall_ms += t.artifacts.wall_ms;
  for (const auto& t : out.baseline_tubes) out.baseline_mean_wall_ms += t.artifacts.wall_ms;
  out.proposed_mean_wall_ms /= static_cast<double>(out.proposed_tubes.size());
  out.baseline_mean_wall_ms /= static_cast<double>(out.baseline_tubes.size());

  out.gains_report = run_check_gains(cfg);
  return out;
}

struct BenchResult {
  TubeMode mode = TubeMode::kProposedLin;
  int iters = 0;
  int steps = 0;
  double median_ms = 0.0;
  std::vector<double> samples_ms;
};

inline std::vector<BenchResult> run_bench(const ScenarioConfig& cfg, int iters) {
  validate(cfg);
  if (iters < 1) throw ConfigError("need at least one benchmark iteration");
  const WarmStart ws = warm_start(cfg);
  const TubeProblem prob = tube_problem(cfg, ws.prediction);
  const int nsteps = static_cast<int>(std::round(cfg.horizon / cfg.dt));

  std::vector<BenchResult> out;
  for (const TubeMode mode : modes_for(cfg.mode)) {
    BenchResult r;
    r.mode = mode;
    r.iters = iters;
    r.steps = nsteps;
    const Vector15d y0 = tube_start_state(ws, mode);
    for (int i = 0; i < iters; ++i) {
      r.samples_ms.push_back(
          timed_tube(prob, cfg.trajectory, y0, ws.t0, nsteps, mode, {}).wall_ms);
    }
    std::vector<double> sorted = r.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    r.median_ms = (n % 2 == 1) ? sorted[n / 2]
                               : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization.

namespace detail {

inline nlohmann::json finite_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

struct File {
  explicit File(const std::string& path) : f(std::fopen(path.c_str(), "w")) {
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
  }
  ~File() {
    if (f) std::fclose(f);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
  std::FILE* f = nullptr;
};

inline void provenance_line(std::FILE* f, const std::string& hash,
                            std::uint64_t seed, const std::string& tag) {
  std::fprintf(f, "# scenario_hash=%s seed=%llu git=%s%s%s\n", hash.c_str(),
               static_cast<unsigned long long>(seed), git_describe(),
               tag.empty() ? "" : " ", tag.c_str());
}

}  // namespace detail

inline std::string tube_csv_header() {
  std::string h = "t";
  for (int i = 0; i < 9; ++i) h += ",c" + std::to_string(i);
  for (int i = 0; i < 9; ++i) {
    for (int j = 0; j < 9; ++j) h += ",m" + std::to_string(i) + std::to_string(j);
  }
  h += ",trace_inv,logdet_inv,step_ns";
  return h;
}

inline std::string samples_csv_header() {
  std::string h = "sample_id,t";
  for (int i = 0; i < 9; ++i) h += ",x" + std::to_string(i);
  for (int i = 0; i < 3; ++i) h += ",d" + std::to_string(i);
  for (int i = 0; i < 3; ++i) h += ",dhat" + std::to_string(i);
  h += ",contained";
  return h;
}

inline std::string bounds_csv_header() {
  std::string h = "t";
  for (int i = 0; i < 9; ++i) {
    h += ",x" + std::to_string(i) + "_lo,x" + std::to_string(i) + "_hi";
  }
  return h;
}

inline void write_tube_csv(const std::string& path,
                           const std::vector<TubeSlice>& slices,
                           const std::string& hash, std::uint64_t seed,
                           const std::string& mode) {
  detail::File out(path);
  detail::provenance_line(out.f, hash, seed, "mode=" + mode);
  std::fprintf(out.f, "%s\n", tube_csv_header().c_str());
  for (const TubeSlice& s : slices) {
    std::fprintf(out.f, "%.17g", s.t);
    for (int i = 0; i < 9; ++i) std::fprintf(out.f, ",%.17g", s.center(i));
    for (int i = 0; i < 9; ++i) {
      for (int j = 0; j < 9; ++j) std::fprintf(out.f, ",%.17g", s.shape(i, j));
    }
    std::fprintf(out.f, ",%.17g,%.17g,%lld\n", s.trace_inv, s.logdet_inv,
                 static_cast<long long>(s.step_ns));
  }
}

inline void write_bounds_csv(const std::string& path,
                             const std::vector<TubeSlice>& slices,
                             const std::string& hash, std::uint64_t seed,
                             const std::string& mode) {
  detail::File out(path);
  detail::provenance_line(out.f, hash, seed, "mode=" + mode);
  std::fprintf(out.f, "%s\n", bounds_csv_header().c_str());
  for (const TubeSlice& s : slices) {
    std::fprintf(out.f, "%.17g", s.t);
    for (int i = 0; i < 9; ++i) {
      std::fprintf(out.f, ",%.17g,%.17g", s.center(i) - s.extent(i),
                   s.center(i) + s.extent(i));
    }
    std::fprintf(out.f, "\n");
  }
}

inline void write_samples_csv(const std::string& path,
                              const std::vector<SampleRecord>& records,
                              const std::string& hash, std::uint64_t seed,
                              const std::string& family) {
  detail::File out(path);
  detail::provenance_line(out.f, hash, seed, "family=" + family);
  std::fprintf(out.f, "%s\n", samples_csv_header().c_str());
  for (const SampleRecord& r : records) {
    std::fprintf(out.f, "%d,%.17g", r.sample_id, r.t);
    for (int i = 0; i < 9; ++i) std::fprintf(out.f, ",%.17g", r.x(i));
    for (int i = 0; i < 3; ++i) std::fprintf(out.f, ",%.17g", r.d(i));
    for (int i = 0; i < 3; ++i) std::fprintf(out.f, ",%.17g", r.d_hat(i));
    std::fprintf(out.f, ",%d\n", r.contained ? 1 : 0);
  }
}

// Reads a tube CSV back; verifies the header and returns full-precision
// slices (extents are not stored in the file and stay empty).
inline std::vector<TubeSlice> read_tube_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  bool header_seen = false;
  std::vector<TubeSlice> out;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != tube_csv_header()) {
        throw std::runtime_error("unexpected tube csv header in " + path);
      }
      header_seen = true;
      continue;
    }
    std::vector<double> vals;
    vals.reserve(94);
    const char* p = line.c_str();
    char* end = nullptr;
    while (true) {
      const double v = std::strtod(p, &end);
      if (end == p) throw std::runtime_error("malformed tube csv row in " + path);
      vals.push_back(v);
      if (*end == ',') {
        p = end + 1;
      } else {
        break;
      }
    }
    if (vals.size() != 94) throw std::runtime_error("short tube csv row in " + path);
    TubeSlice s;
    s.t = vals[0];
    s.center = Eigen::VectorXd(9);
    s.shape = Eigen::MatrixXd(9, 9);
    for (int i = 0; i < 9; ++i) s.center(i) = vals[static_cast<size_t>(1 + i)];
    for (int i = 0; i < 9; ++i) {
      for (int j = 0; j < 9; ++j) {
        s.shape(i, j) = vals[static_cast<size_t>(10 + 9 * i + j)];
      }
    }
    s.trace_inv = vals[91];
    s.logdet_inv = vals[92];
    s.step_ns = static_cast<std::int64_t>(vals[93]);
    out.push_back(std::move(s));
  }
  if (!header_seen) throw std::runtime_error("empty tube csv: " + path);
  return out;
}

inline nlohmann::json to_json(const GainsReport& rep, const ScenarioConfig& cfg) {
  using detail::finite_or_null;
  nlohmann::json j;
  j["scenario_hash"] = rep.hash;
  j["seed"] = cfg.seed;
  j["git_describe"] = git_describe();
  j["gains"] = {{"k_p", cfg.gains.k_p},
                {"k_v", cfg.gains.k_v},
                {"k_phi", detail::vec3_json(cfg.gains.k_phi)}};
  j["alpha_d"] = cfg.alpha_d;
  j["theta1"] = cfg.theta1;
  j["theta2"] = cfg.theta2;
  const StabilityCertificate& c = rep.certificate;
  j["certificate"] = {
      {"hypothesis1_gain_ok", c.gain_ok},
      {"hypothesis2_observer_ok", c.observer_ok},
      {"hypothesis3_tilt_ok", c.tilt_ok},
      {"tilt_bound_vacuous", c.tilt_bound_vacuous},
      {"alpha_threshold", finite_or_null(c.alpha_threshold)},
      {"lambda_min_q1", c.lambda_min_q1},
      {"lambda_min_q2", c.lambda_min_q2},
      {"lambda_min_q", c.lambda_min_q},
      {"s_m", c.s_m},
      {"s_m_limit", finite_or_null(c.s_m_limit)},
      {"m_bound", c.m_bound},
      {"n_bound", c.n_bound},
      {"disturbance_radius", c.disturbance_radius},
      {"tracking_radius", finite_or_null(c.tracking_radius)},
      {"conditions_ok", c.conditions_ok}};
  const DisturbanceAudit& da = rep.disturbance;
  j["disturbance_audit"] = {{"radius", da.radius},
                            {"decay_bound", da.decay_bound},
                            {"fitted_decay", finite_or_null(da.fitted_decay)},
                            {"approach_samples", da.approach_samples},
                            {"entered", da.entered},
                            {"entry_time", da.entry_time},
                            {"violations", da.violations},
                            {"worst_ratio", da.worst_ratio},
                            {"ok", da.ok}};
  const ErrorDynamicsAudit& dy = rep.dynamics;
  j["dynamics_audit"] = {{"max_residual_p", dy.max_residual_p},
                         {"max_residual_v", dy.max_residual_v},
                         {"max_residual_d", dy.max_residual_d},
                         {"checked_samples", dy.checked_samples},
                         {"skipped_samples", dy.skipped_samples},
                         {"measured_s_m", rep.measured_s_m},
                         {"max_error_tail", dy.max_error_tail},
                         {"residuals_ok", dy.residuals_ok},
                         {"bound_ok", dy.bound_ok},
                         {"ok", dy.ok}};
  j["ok"] = rep.ok;
  return j;
}

namespace detail {

inline nlohmann::json tube_summary(const ModeArtifacts& m) {
  double mean_ns = 0.0;
  long long max_ns = 0;
  long counted = 0;
  for (const TubeSlice& s : m.slices) {
    if (s.step_ns == 0) continue;
    mean_ns += static_cast<double>(s.step_ns);
    max_ns = std::max(max_ns, static_cast<long long>(s.step_ns));
    ++counted;
  }
  if (counted > 0) mean_ns /= static_cast<double>(counted);
  return {{"steps", m.slices.size()},
          {"wall_ms", m.wall_ms},
          {"final_trace_inv", m.slices.back().trace_inv},
          {"final_logdet_inv", m.slices.back().logdet_inv},
          {"mean_step_ns", mean_ns},
          {"max_step_ns", max_ns}};
}

inline nlohmann::json containment_json(const ContainmentStats& s) {
  const double rate =
      s.checked > 0
          ? 1.0 - static_cast<double>(s.violations) / static_cast<double>(s.checked)
          : 0.0;
  return {{"checked", s.checked}, {"violations", s.violations}, {"rate", rate}};
}

}  // namespace detail

inline nlohmann::json scenario1_metrics(const Scenario1Result& r) {
  nlohmann::json j;
  j["scenario"] = "scenario1";
  j["scenario_hash"] = r.hash;
  j["seed"] = r.config.seed;
  j["git_describe"] = git_describe();
  j["t0"] = r.warm.t0;
  j["config"] = to_json(r.config);
  nlohmann::json tubes = nlohmann::json::object();
  for (const ModeArtifacts& m : r.modes) {
    tubes[mode_name(m.mode)] = detail::tube_summary(m);
  }
  j["tubes"] = tubes;
  nlohmann::json containment = nlohmann::json::object();
  if (find_mode(r.modes, TubeMode::kProposedLin)) {
    containment["proposed_lin"] = detail::containment_json(r.proposed_containment);
  }
  if (find_mode(r.modes, TubeMode::kBaseline)) {
    containment["baseline"] = detail::containment_json(r.baseline_containment);
  }
  j["containment"] = containment;
  nlohmann::json ratios = nlohmann::json::object();
  if (r.det_ratio_lin > 0.0) ratios["baseline_over_proposed_lin"] = r.det_ratio_lin;
  if (r.det_ratio_nolin > 0.0) ratios["baseline_over_proposed_nolin"] = r.det_ratio_nolin;
  j["det_ratio_end"] = ratios;
  return j;
}

inline nlohmann::json scenario2_metrics(const Scenario2Result& r) {
  nlohmann::json j;
  j["scenario"] = "scenario2";
  j["scenario_hash"] = r.hash;
  j["seed"] = r.config.seed;
  j["git_describe"] = git_describe();
  j["config"] = to_json(r.config);
  const auto family = [&](const std::vector<ReplanTube>& tubes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ReplanTube& t : tubes) {
      nlohmann::json e = detail::tube_summary(t.artifacts);
      e["t0"] = t.t0;
      arr.push_back(std::move(e));
    }
    return arr;
  };
  j["tubes"] = {{"proposed_lin", family(r.proposed_tubes)},
                {"baseline", family(r.baseline_tubes)}};
  j["mean_wall_ms"] = {{"proposed_lin", r.proposed_mean_wall_ms},
                       {"baseline", r.baseline_mean_wall_ms}};
  j["containment"] = {
      {"proposed_lin", detail::containment_json(r.proposed_containment)},
      {"baseline", detail::containment_json(r.baseline_containment)}};
  return j;
}

inline nlohmann::json bench_json(const std::vector<BenchResult>& results,
                                 const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["scenario_hash"] = scenario_hash(cfg);
  j["seed"] = cfg.seed;
  j["git_describe"] = git_describe();
  nlohmann::json modes = nlohmann::json::object();
  for (const BenchResult& r : results) {
    modes[mode_name(r.mode)] = {{"iters", r.iters},
                                {"steps", r.steps},
                                {"median_ms", r.median_ms},
                                {"samples_ms", r.samples_ms}};
  }
  j["modes"] = modes;
  return j;
}

namespace detail {

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  File out(path);
  const std::string text = j.dump(2);
  std::fwrite(text.data(), 1, text.size(), out.f);
  std::fputc('\n', out.f);
}

}  // namespace detail

inline void export_scenario1(const Scenario1Result& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto p = [&](const std::string& name) { return dir + "/" + name; };
  for (const ModeArtifacts& m : r.modes) {
    const std::string name = mode_name(m.mode);
    write_tube_csv(p("tube_" + name + ".csv"), m.slices, r.hash, r.config.seed, name);
    write_bounds_csv(p("bounds_" + name + ".csv"), m.slices, r.hash,
                     r.config.seed, name);
  }
  if (find_mode(r.modes, TubeMode::kProposedLin)) {
    write_samples_csv(p("samples.csv"), r.proposed_records, r.hash,
                      r.config.seed, "proposed");
  }
  if (find_mode(r.modes, TubeMode::kBaseline)) {
    write_samples_csv(p("samples_baseline.csv"), r.baseline_records, r.hash,
                      r.config.seed, "baseline");
  }
  detail::write_json_file(p("metrics.json"), scenario1_metrics(r));
  detail::write_json_file(p("stability.json"), to_json(r.gains_report, r.config));
}

inline void export_scenario2(const Scenario2Result& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto p = [&](const std::string& name) { return dir + "/" + name; };
  const auto family = [&](const std::vector<ReplanTube>& tubes) {
    for (size_t k = 0; k < tubes.size(); ++k) {
      const std::string name = std::string(mode_name(tubes[k].artifacts.mode)) +
                               "_r" + std::to_string(k);
      write_tube_csv(p("tube_" + name + ".csv"), tubes[k].artifacts.slices,
                     r.hash, r.config.seed, name);
    }
  };
  family(r.proposed_tubes);
  family(r.baseline_tubes);
  write_samples_csv(p("samples.csv"), r.proposed_records, r.hash,
                    r.config.seed, "proposed");
  write_samples_csv(p("samples_baseline.csv"), r.baseline_records, r.hash,
                    r.config.seed, "baseline");
  detail::write_json_file(p("metrics.json"), scenario2_metrics(r));
  detail::write_json_file(p("stability.json"), to_json(r.gains_report, r.config));
}

}  // namespace frs

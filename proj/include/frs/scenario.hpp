#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "frs/controller.hpp"
#include "frs/disturbance.hpp"
#include "frs/frs_engine.hpp"

namespace frs {

// Configuration faults get their own type so the command line can map them
// to a dedicated exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ModeSelect { kAll, kBaseline, kProposedNolin, kProposedLin };

inline const char* mode_select_name(ModeSelect m) {
  switch (m) {
    case ModeSelect::kAll: return "all";
    case ModeSelect::kBaseline: return "baseline";
    case ModeSelect::kProposedNolin: return "proposed-nolin";
    case ModeSelect::kProposedLin: return "proposed-lin";
  }
  throw std::invalid_argument("unknown mode selection");
}

inline ModeSelect parse_mode_select(const std::string& s) {
  if (s == "all") return ModeSelect::kAll;
  if (s == "baseline") return ModeSelect::kBaseline;
  if (s == "proposed-nolin") return ModeSelect::kProposedNolin;
  if (s == "proposed-lin") return ModeSelect::kProposedLin;
  throw ConfigError("unknown mode: " + s);
}

// Everything a scenario run needs, defaulted to the nominal parameter set.
struct ScenarioConfig {
  CircularTrajectory trajectory;
  double horizon = 2.7;
  double replan_period = 2.5;
  double total_time = 15.2;
  double dt = 0.02;
  ControllerGains gains;
  double alpha_d = 2.0;
  double theta1 = 0.8;
  double theta2 = 0.8;
  double b = 0.99;
  double epsilon = 1e-9;
  DisturbanceModel model;
  double knot_dt = 0.1;
  Eigen::Vector3d d0 = Eigen::Vector3d(2.0, 2.0, 0.5);
  Eigen::Vector3d m_p = Eigen::Vector3d::Constant(0.001);
  Eigen::Vector3d m_v = Eigen::Vector3d::Constant(0.01);
  Eigen::Vector3d m_phi = Eigen::Vector3d::Constant(0.01);
  double radius_x = 0.05;
  double radius_dhat = 0.05;
  double warm_up = 0.5;
  int n_samples = 500;
  std::uint64_t seed = 2024;
  ModeSelect mode = ModeSelect::kAll;
  int stm_substeps = 16;
  bool attitude_feedforward = true;
  // Ceiling on |g e3 + a_r + d| for the stability certificate; zero means
  // derive it from the trajectory and the disturbance level.
  double m_bound = 0.0;
};

inline ScenarioConfig table1_config() { return ScenarioConfig{}; }

inline double certificate_force_ceiling(const ScenarioConfig& cfg) {
  if (cfg.m_bound > 0.0) return cfg.m_bound;
  return kGravity + cfg.trajectory.max_accel() + cfg.model.level.norm();
}

inline void validate(const ScenarioConfig& cfg) {
  validate(cfg.model);
  const auto multiple_of_dt = [&](double x, const char* what) {
    const double k = std::round(x / cfg.dt);
    if (std::abs(x - k * cfg.dt) > 1e-9) {
      throw ConfigError(std::string(what) + " must be a multiple of dt");
    }
  };
  if (cfg.dt <= 0.0) throw ConfigError("dt must be positive");
  if (cfg.horizon <= 0.0) throw ConfigError("horizon must be positive");
  if (cfg.replan_period <= 0.0) throw ConfigError("replan period must be positive");
  if (cfg.total_time <= 0.0) throw ConfigError("total time must be positive");
  multiple_of_dt(cfg.horizon, "horizon");
  multiple_of_dt(cfg.replan_period, "replan period");
  multiple_of_dt(cfg.total_time, "total time");
  if (cfg.warm_up < 0.0) throw ConfigError("warm up must be nonnegative");
  multiple_of_dt(cfg.warm_up, "warm up");
  if (cfg.n_samples < 1) throw ConfigError("need at least one sample");
  if (cfg.alpha_d <= 0.0) throw ConfigError("observer gain must be positive");
  if (cfg.theta1 <= 0.0 || cfg.theta1 >= 1.0 || cfg.theta2 <= 0.0 ||
      cfg.theta2 >= 1.0) {
    throw ConfigError("split factors must lie in (0, 1)");
  }
  if (cfg.b < 0.0 || cfg.b > 1.0) throw ConfigError("fusion weight must lie in [0, 1]");
  if (cfg.epsilon < 0.0) throw ConfigError("regularization must be nonnegative");
  if (cfg.knot_dt <= 0.0) throw ConfigError("knot spacing must be positive");
  if (((cfg.d0.array().abs() - cfg.model.level.array()) > 0.0).any()) {
    throw ConfigError("initial disturbance exceeds its level bound");
  }
  if (cfg.radius_x <= 0.0 || cfg.radius_dhat <= 0.0) {
    throw ConfigError("initial radii must be positive");
  }
  if ((cfg.m_p.array() < 0.0).any() || (cfg.m_v.array() < 0.0).any() ||
      (cfg.m_phi.array() < 0.0).any()) {
    throw ConfigError("linearization bounds must be nonnegative");
  }
  if (cfg.stm_substeps < 2 || cfg.stm_substeps % 2 != 0) {
    throw ConfigError("substep count must be even and at least two");
  }
  if (cfg.m_bound < 0.0) throw ConfigError("force ceiling must be nonnegative");
  if (cfg.trajectory.radius <= 0.0) throw ConfigError("trajectory radius must be positive");
}

namespace detail {

inline nlohmann::json vec3_json(const Eigen::Vector3d& v) {
  return nlohmann::json::array({v(0), v(1), v(2)});
}

inline Eigen::Vector3d parse_vec3(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError(where + " must be an array of three numbers");
  }
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ConfigError(where + " must be numeric");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline double parse_num(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + " must be a number");
  return j.get<double>();
}

// Walks an object with a closed key set: every listed key is consumed by its
// handler and anything left over is a schema violation.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <typename Fn>
  ObjectReader& required(const std::string& key, const Fn& fn) {
    const auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError(where_ + " is missing key " + key);
    fn(*it, where_ + "." + key);
    seen_.push_back(key);
    return *this;
  }

  template <typename Fn>
  ObjectReader& optional(const std::string& key, const Fn& fn) {
    const auto it = j_.find(key);
    if (it != j_.end()) fn(*it, where_ + "." + key);
    seen_.push_back(key);
    return *this;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool known = false;
      for (const auto& k : seen_) known = known || k == it.key();
      if (!known) throw ConfigError(where_ + " has unknown key " + it.key());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& cfg) {
  using detail::vec3_json;
  nlohmann::json j;
  j["trajectory"] = {{"radius", cfg.trajectory.radius},
                     {"rate", cfg.trajectory.rate},
                     {"tilt_roll", cfg.trajectory.tilt_roll},
                     {"tilt_yaw", cfg.trajectory.tilt_yaw},
                     {"center", vec3_json(cfg.trajectory.center)}};
  j["horizon"] = cfg.horizon;
  j["replan_period"] = cfg.replan_period;
  j["total_time"] = cfg.total_time;
  j["dt"] = cfg.dt;
  j["gains"] = {{"k_p", cfg.gains.k_p},
                {"k_v", cfg.gains.k_v},
                {"k_phi", vec3_json(cfg.gains.k_phi)}};
  j["alpha_d"] = cfg.alpha_d;
  j["theta1"] = cfg.theta1;
  j["theta2"] = cfg.theta2;
  j["b"] = cfg.b;
  j["epsilon"] = cfg.epsilon;
  j["disturbance"] = {{"level", vec3_json(cfg.model.level)},
                      {"rate", vec3_json(cfg.model.rate)},
                      {"knot_dt", cfg.knot_dt},
                      {"d0", vec3_json(cfg.d0)}};
  j["lin_bounds"] = {{"m_p", vec3_json(cfg.m_p)},
                     {"m_v", vec3_json(cfg.m_v)},
                     {"m_phi", vec3_json(cfg.m_phi)}};
  j["initial_set"] = {{"radius_x", cfg.radius_x},
                      {"radius_dhat", cfg.radius_dhat}};
  j["warm_up"] = cfg.warm_up;
  j["n_samples"] = cfg.n_samples;
  j["seed"] = cfg.seed;
  j["mode"] = mode_select_name(cfg.mode);
  j["stm_substeps"] = cfg.stm_substeps;
  j["attitude_feedforward"] = cfg.attitude_feedforward;
  j["m_bound"] = cfg.m_bound;
  return j;
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  using detail::ObjectReader;
  using detail::parse_num;
  using detail::parse_vec3;
  ScenarioConfig cfg;

  ObjectReader root(j, "config");
  root.required("trajectory", [&](const nlohmann::json& t, const std::string& w) {
    ObjectReader r(t, w);
    r.required("radius", [&](const auto& v, const auto& ww) { cfg.trajectory.radius = parse_num(v, ww); })
        .required("rate", [&](const auto& v, const auto& ww) { cfg.trajectory.rate = parse_num(v, ww); })
        .required("tilt_roll", [&](const auto& v, const auto& ww) { cfg.trajectory.tilt_roll = parse_num(v, ww); })
        .required("tilt_yaw", [&](const auto& v, const auto& ww) { cfg.trajectory.tilt_yaw = parse_num(v, ww); })
        .required("center", [&](const auto& v, const auto& ww) { cfg.trajectory.center = parse_vec3(v, ww); })
        .finish();
  });
  root.required("horizon", [&](const auto& v, const auto& w) { cfg.horizon = parse_num(v, w); });
  root.required("replan_period", [&](const auto& v, const auto& w) { cfg.replan_period = parse_num(v, w); });
  root.required("total_time", [&](const auto& v, const auto& w) { cfg.total_time = parse_num(v, w); });
  root.required("dt", [&](const auto& v, const auto& w) { cfg.dt = parse_num(v, w); });
  root.required("gains", [&](const nlohmann::json& g, const std::string& w) {
    ObjectReader r(g, w);
    r.required("k_p", [&](const auto& v, const auto& ww) { cfg.gains.k_p = parse_num(v, ww); })
        .required("k_v", [&](const auto& v, const auto& ww) { cfg.gains.k_v = parse_num(v, ww); })
        .required("k_phi", [&](const auto& v, const auto& ww) { cfg.gains.k_phi = parse_vec3(v, ww); })
        .finish();
  });
  root.required("alpha_d", [&](const auto& v, const auto& w) { cfg.alpha_d = parse_num(v, w); });
  root.required("theta1", [&](const auto& v, const auto& w) { cfg.theta1 = parse_num(v, w); });
  root.optional("theta2", [&](const auto& v, const auto& w) { cfg.theta2 = parse_num(v, w); });
  root.required("b", [&](const auto& v, const auto& w) { cfg.b = parse_num(v, w); });
  root.required("epsilon", [&](const auto& v, const auto& w) { cfg.epsilon = parse_num(v, w); });
  root.required("disturbance", [&](const nlohmann::json& d, const std::string& w) {
    ObjectReader r(d, w);
    r.required("level", [&](const auto& v, const auto& ww) { cfg.model.level = parse_vec3(v, ww); })
        .required("rate", [&](const auto& v, const auto& ww) { cfg.model.rate = parse_vec3(v, ww); })
        .optional("knot_dt", [&](const auto& v, const auto& ww) { cfg.knot_dt = parse_num(v, ww); })
        .optional("d0", [&](const auto& v, const auto& ww) { cfg.d0 = parse_vec3(v, ww); })
        .finish();
  });
  root.required("lin_bounds", [&](const nlohmann::json& m, const std::string& w) {
    ObjectReader r(m, w);
    r.required("m_p", [&](const auto& v, const auto& ww) { cfg.m_p = parse_vec3(v, ww); })
        .required("m_v", [&](const auto& v, const auto& ww) { cfg.m_v = parse_vec3(v, ww); })
        .required("m_phi", [&](const auto& v, const auto& ww) { cfg.m_phi = parse_vec3(v, ww); })
        .finish();
  });
  root.required("initial_set", [&](const nlohmann::json& s, const std::string& w) {
    ObjectReader r(s, w);
    r.required("radius_x", [&](const auto& v, const auto& ww) { cfg.radius_x = parse_num(v, ww); })
        .required("radius_dhat", [&](const auto& v, const auto& ww) { cfg.radius_dhat = parse_num(v, ww); })
        .finish();
  });
  root.required("warm_up", [&](const auto& v, const auto& w) { cfg.warm_up = parse_num(v, w); });
  root.required("n_samples", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_number_integer()) throw ConfigError(w + " must be an integer");
    cfg.n_samples = v.get<int>();
  });
  root.required("seed", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_number_unsigned() && !v.is_number_integer()) {
      throw ConfigError(w + " must be an integer");
    }
    cfg.seed = v.get<std::uint64_t>();
  });
  root.required("mode", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_string()) throw ConfigError(w + " must be a string");
    cfg.mode = parse_mode_select(v.get<std::string>());
  });
  root.optional("stm_substeps", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_number_integer()) throw ConfigError(w + " must be an integer");
    cfg.stm_substeps = v.get<int>();
  });
  root.optional("attitude_feedforward", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_boolean()) throw ConfigError(w + " must be a boolean");
    cfg.attitude_feedforward = v.get<bool>();
  });
  root.optional("m_bound", [&](const auto& v, const auto& w) { cfg.m_bound = parse_num(v, w); });
  root.finish();

  validate(cfg);
  return cfg;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

// 64-bit FNV-1a over the canonical serialization, so any two runs with the
// same effective configuration share a hash regardless of where the values
// came from.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string scenario_hash(const ScenarioConfig& cfg) {
  const std::uint64_t h = fnv1a(to_json(cfg).dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace frs

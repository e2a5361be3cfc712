#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>

#include <json.hpp>

#include "fddprec/errors.hpp"

namespace fddprec {

enum class ChannelModel { rayleigh, geometric };

inline std::string to_string(ChannelModel m) {
  return m == ChannelModel::rayleigh ? "rayleigh" : "geometric";
}

inline ChannelModel channel_model_from_string(const std::string& s) {
  if (s == "rayleigh") return ChannelModel::rayleigh;
  if (s == "geometric") return ChannelModel::geometric;
  throw std::invalid_argument("channel_model: unknown value '" + s +
                              "' (expected rayleigh or geometric)");
}

// One heterogeneous system configuration: antenna count, user count,
// pilot/feedback budgets as fractions of the antenna count, and the
// physical-layer scalars that pin down the signal model.
struct TaskConfig {
  std::string task_id;
  std::size_t n_tx = 0;      // N_t
  std::size_t n_users = 0;   // K
  double pilot_ratio = 0.0;     // L / N_t
  double feedback_ratio = 0.0;  // B / N_t
  double snr_db = 10.0;
  double power = 1.0;               // P (linear)
  double pilot_symbol_energy = 1.0; // E_s (linear)
  ChannelModel channel_model = ChannelModel::rayleigh;
  std::size_t paths = 4;           // geometric model only
  double angle_spread_deg = 120.0; // geometric model only
  std::uint64_t seed = 0;
};

struct ResolvedDims {
  std::size_t pilot_len = 0;    // L
  std::size_t feedback_bits = 0;  // B
};

// sigma^2 = P / 10^(SNR_dB / 10)
inline double snr_to_sigma2(double snr_db, double power) {
  if (!(power > 0.0))
    throw std::invalid_argument("snr_to_sigma2: power must be positive, got " +
                                std::to_string(power));
  return power / std::pow(10.0, snr_db / 10.0);
}

namespace detail {

// round-half-to-even, applied only on exact .5; plain nearest elsewhere
inline std::size_t round_dim(double x) {
  return static_cast<std::size_t>(std::nearbyint(x));
}

}  // namespace detail

// Turns the fractional pilot/feedback budgets into integer widths.
// Idempotent: depends only on n_tx and the two ratios.
inline ResolvedDims resolve_config(const TaskConfig& cfg) {
  if (!(cfg.pilot_ratio > 0.0) || !(cfg.feedback_ratio > 0.0))
    throw std::invalid_argument("resolve_config[" + cfg.task_id +
                                "]: pilot_ratio and feedback_ratio must be positive");
  ResolvedDims r;
  r.pilot_len = detail::round_dim(static_cast<double>(cfg.n_tx) * cfg.pilot_ratio);
  r.feedback_bits = detail::round_dim(static_cast<double>(cfg.n_tx) * cfg.feedback_ratio);
  if (r.pilot_len == 0)
    throw std::invalid_argument("resolve_config[" + cfg.task_id +
                                "]: pilot length resolves to 0");
  if (r.feedback_bits == 0)
    throw std::invalid_argument("resolve_config[" + cfg.task_id +
                                "]: feedback width resolves to 0");
  return r;
}

inline void validate_config(const TaskConfig& cfg) {
  if (cfg.task_id.empty()) throw std::invalid_argument("config: task_id must be nonempty");
  if (cfg.n_users < 1)
    throw std::invalid_argument("config[" + cfg.task_id + "]: n_users must be >= 1");
  if (cfg.n_tx < 1)
    throw std::invalid_argument("config[" + cfg.task_id + "]: n_tx must be >= 1");
  if (!(cfg.power > 0.0))
    throw std::invalid_argument("config[" + cfg.task_id + "]: power must be positive");
  if (!(cfg.pilot_symbol_energy > 0.0))
    throw std::invalid_argument("config[" + cfg.task_id +
                                "]: pilot_symbol_energy must be positive");
  if (cfg.channel_model == ChannelModel::geometric && cfg.paths < 1)
    throw std::invalid_argument("config[" + cfg.task_id + "]: paths must be >= 1");
  resolve_config(cfg);
  if (cfg.n_tx < cfg.n_users)
    std::cerr << "warning: config[" << cfg.task_id << "]: n_tx (" << cfg.n_tx
              << ") < n_users (" << cfg.n_users << "); zero-forcing not applicable\n";
}

inline double sigma2_of(const TaskConfig& cfg) { return snr_to_sigma2(cfg.snr_db, cfg.power); }

// Accepts a plain number or a "p/q" string so configs can state exact
// rationals like "2/9".
inline double parse_ratio(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return std::stod(s);
      const double num = std::stod(s.substr(0, slash));
      const double den = std::stod(s.substr(slash + 1));
      if (den == 0.0) throw std::invalid_argument("zero denominator");
      return num / den;
    } catch (const std::exception&) {
      throw std::invalid_argument(key + ": cannot parse ratio '" + s + "'");
    }
  }
  throw std::invalid_argument(key + ": expected number or \"p/q\" string");
}

inline void to_json(nlohmann::json& j, const TaskConfig& c) {
  j = nlohmann::json{{"task_id", c.task_id},
                     {"n_tx", c.n_tx},
                     {"n_users", c.n_users},
                     {"pilot_ratio", c.pilot_ratio},
                     {"feedback_ratio", c.feedback_ratio},
                     {"snr_db", c.snr_db},
                     {"power", c.power},
                     {"pilot_symbol_energy", c.pilot_symbol_energy},
                     {"channel_model", to_string(c.channel_model)},
                     {"paths", c.paths},
                     {"angle_spread_deg", c.angle_spread_deg},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TaskConfig& c) {
  c.task_id = j.at("task_id").get<std::string>();
  c.n_tx = j.at("n_tx").get<std::size_t>();
  c.n_users = j.at("n_users").get<std::size_t>();
  c.pilot_ratio = parse_ratio(j, "pilot_ratio");
  c.feedback_ratio = parse_ratio(j, "feedback_ratio");
  if (j.contains("snr_db")) c.snr_db = j.at("snr_db").get<double>();
  if (j.contains("power")) c.power = j.at("power").get<double>();
  if (j.contains("pilot_symbol_energy"))
    c.pilot_symbol_energy = j.at("pilot_symbol_energy").get<double>();
  if (j.contains("channel_model"))
    c.channel_model = channel_model_from_string(j.at("channel_model").get<std::string>());
  if (j.contains("paths")) c.paths = j.at("paths").get<std::size_t>();
  if (j.contains("angle_spread_deg"))
    c.angle_spread_deg = j.at("angle_spread_deg").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace fddprec

#pragma once

// Surrogate demand-response plant: a production unit that liquefies surplus
// product into a storage tank and evaporates from it when production falls
// short of demand. The low-level tracking controller is modelled as a
// first-order lag toward the requested production setpoint.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gspdr/error.hpp"

namespace gspdr {

struct EnvParams {
  int horizon = 72;               // T, steps per episode
  double dt = 1.0;                // hours per step
  double capacity = 1.0;          // N_max
  double demand = 0.03;           // mol/h, constant
  double u_min = 0.01;
  double u_max = 0.05;
  double tracking_lag = 0.7;      // alpha in (0, 1]
  double c0 = 0.2;                // fixed power draw
  double c1 = 1.0;                // per unit production
  double c2 = 0.6;                // per unit liquefaction
  double terminal_target = 0.5;
  double terminal_tolerance = 0.05;
  double penalty_weight = 10.0;   // weight of the squared shortfall
  int activation_time = 68;       // penalty applies after this step
  double terminal_bonus = 15.0;
  int forecast_len = 12;

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError(m); };
    if (horizon < 1) fail("env.horizon must be >= 1");
    if (!(dt > 0)) fail("env.dt must be > 0");
    if (!(capacity > 0)) fail("env.capacity must be > 0");
    if (!(demand > 0)) fail("env.demand must be > 0");
    if (!(u_min > 0 && u_min < u_max)) fail("env requires 0 < u_min < u_max");
    if (!(tracking_lag > 0 && tracking_lag <= 1)) fail("env.tracking_lag must lie in (0, 1]");
    if (!(terminal_target >= 0 && terminal_target <= capacity))
      fail("env.terminal_target must lie in [0, capacity]");
    if (!(terminal_tolerance >= 0)) fail("env.terminal_tolerance must be >= 0");
    if (!(penalty_weight > 0)) fail("env.penalty_weight must be > 0");
    if (activation_time >= horizon) fail("env.activation_time must be < env.horizon");
    if (forecast_len < 1) fail("env.forecast_len must be >= 1");
  }

  // Terminal band: at or above target, or within tolerance below it.
  bool terminal_satisfied(double level) const {
    return level >= terminal_target - terminal_tolerance;
  }
};

struct PriceProfile {
  std::vector<double> prices;

  std::size_t size() const { return prices.size(); }
  double operator[](std::size_t i) const { return prices[i]; }
};

struct EnvState {
  double tank_level = 0.0;
  double production = 0.0;
  int step = 0;
  double time_of_day = 0.0;
  std::vector<double> price_forecast;
};

struct RewardBreakdown {
  double elec = 0.0;
  double path = 0.0;
  double terminal = 0.0;
  double total = 0.0;
};

struct StepResult {
  EnvState state;
  RewardBreakdown reward;
  bool done = false;
  // Tank ran dry while production was below demand; shortfall is not modelled.
  bool starved = false;
};

namespace detail {

inline std::vector<double> forecast_window(const PriceProfile& profile, int step,
                                           const EnvParams& params) {
  std::vector<double> window(static_cast<std::size_t>(params.forecast_len));
  const int last = params.horizon - 1;
  for (int i = 0; i < params.forecast_len; ++i)
    window[static_cast<std::size_t>(i)] = profile[static_cast<std::size_t>(std::min(step + i, last))];
  return window;
}

inline double time_of_day(int step, double dt) { return std::fmod(step * dt, 24.0); }

}  // namespace detail

inline EnvState reset(const EnvParams& params, const PriceProfile& profile, double initial_level) {
  params.validate();
  if (profile.size() < static_cast<std::size_t>(params.horizon))
    throw ConfigError("price profile has " + std::to_string(profile.size()) +
                      " entries, horizon needs " + std::to_string(params.horizon));
  if (!(initial_level >= 0 && initial_level <= params.capacity))
    throw ValidationError("initial level outside [0, capacity]");
  EnvState s;
  s.tank_level = initial_level;
  s.production = params.demand;
  s.step = 0;
  s.time_of_day = 0.0;
  s.price_forecast = detail::forecast_window(profile, 0, params);
  return s;
}

inline double liquefied_fraction(double production, double demand) {
  return production > demand ? 1.0 - demand / production : 0.0;
}

inline double path_penalty(const EnvState& state, const EnvParams& params) {
  const double violation = params.terminal_target - state.tank_level;
  if (violation > 0 && state.step > params.activation_time)
    return -params.penalty_weight * violation * violation;
  return 0.0;
}

inline StepResult step(const EnvState& state, double setpoint, const EnvParams& params,
                       const PriceProfile& profile) {
  if (state.step >= params.horizon) throw UsageError("step called on a finished episode");
  setpoint = std::clamp(setpoint, params.u_min, params.u_max);

  const double production = state.production + params.tracking_lag * (setpoint - state.production);
  const double xi = liquefied_fraction(production, params.demand);
  const double evaporation = std::max(0.0, params.demand - production);
  const double unclamped = state.tank_level + (xi * production - evaporation) * params.dt;

  StepResult out;
  out.starved = unclamped < 0.0;
  out.state.tank_level = std::clamp(unclamped, 0.0, params.capacity);
  out.state.production = production;
  out.state.step = state.step + 1;
  out.state.time_of_day = detail::time_of_day(out.state.step, params.dt);
  out.state.price_forecast = detail::forecast_window(profile, out.state.step, params);
  out.done = out.state.step == params.horizon;

  const double power = params.c0 + params.c1 * production + params.c2 * xi * production;
  out.reward.elec = -profile[static_cast<std::size_t>(state.step)] * power * params.dt;
  out.reward.path = path_penalty(out.state, params);
  out.reward.terminal =
      out.done && params.terminal_satisfied(out.state.tank_level) ? params.terminal_bonus : 0.0;
  out.reward.total = out.reward.elec + out.reward.path + out.reward.terminal;
  return out;
}

// Maps a normalized action in [-1, 1] onto the production setpoint range.
inline double action_to_setpoint(double action, const EnvParams& params) {
  const double a = std::clamp(action, -1.0, 1.0);
  return params.u_min + 0.5 * (a + 1.0) * (params.u_max - params.u_min);
}

inline int observation_dim(const EnvParams& params) { return 4 + params.forecast_len; }

// Network features: storage fraction, production scaled to [-1, 1],
// time of day, elapsed fraction of the horizon, then the price forecast.
inline Eigen::VectorXd observe(const EnvState& state, const EnvParams& params) {
  Eigen::VectorXd x(observation_dim(params));
  x[0] = state.tank_level / params.capacity;
  x[1] = 2.0 * (state.production - params.u_min) / (params.u_max - params.u_min) - 1.0;
  x[2] = state.time_of_day / 24.0;
  x[3] = static_cast<double>(state.step) / params.horizon;
  for (int i = 0; i < params.forecast_len; ++i)
    x[4 + i] = state.price_forecast[static_cast<std::size_t>(i)];
  return x;
}

inline PriceProfile generate_price_profile(std::uint64_t seed, int hours, double base,
                                           double amplitude, double noise_std, double dt = 1.0) {
  if (hours < 1) throw ValidationError("price profile needs at least one hour");
  if (!(amplitude >= 0 && amplitude < base))
    throw ValidationError("price amplitude must satisfy 0 <= amplitude < base");
  if (!(noise_std >= 0)) throw ValidationError("price noise_std must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  PriceProfile p;
  p.prices.reserve(static_cast<std::size_t>(hours));
  for (int t = 0; t < hours; ++t) {
    const double td = detail::time_of_day(t, dt);
    double v = base + amplitude * std::sin(2.0 * std::numbers::pi * td / 24.0);
    if (noise_std > 0) v += noise_std * noise(rng);
    p.prices.push_back(std::max(0.0, v));
  }
  return p;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace detail

// Accepts either one number per line or a CSV whose header names a `price` column.
inline PriceProfile load_price_profile(const std::string& path, std::size_t min_length = 1) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open price file '" + path + "'");
  PriceProfile p;
  std::string line;
  int line_no = 0;
  int column = -1;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto fields = detail::split(body, ',');
    if (first) {
      first = false;
      double probe;
      if (!detail::parse_double(fields[0], probe) || fields.size() > 1) {
        for (std::size_t i = 0; i < fields.size(); ++i)
          if (detail::trim(fields[i]) == "price") column = static_cast<int>(i);
        if (column >= 0) continue;
        if (fields.size() > 1)
          throw ParseError(path + ":" + std::to_string(line_no) + ": no 'price' column in header");
      }
      if (column < 0) column = 0;
    }
    if (static_cast<std::size_t>(column) >= fields.size())
      throw ParseError(path + ":" + std::to_string(line_no) + ": missing price column");
    double v;
    if (!detail::parse_double(fields[static_cast<std::size_t>(column)], v))
      throw ParseError(path + ":" + std::to_string(line_no) + ": not a number: '" +
                       std::string(detail::trim(fields[static_cast<std::size_t>(column)])) + "'");
    if (!(v >= 0) || !std::isfinite(v))
      throw ValidationError(path + ":" + std::to_string(line_no) + ": negative or non-finite price");
    p.prices.push_back(v);
  }
  if (p.prices.empty()) throw ValidationError("price file '" + path + "' contains no prices");
  if (p.prices.size() < min_length)
    throw ValidationError("price file '" + path + "' has " + std::to_string(p.prices.size()) +
                          " prices, need " + std::to_string(min_length));
  return p;
}

inline void save_price_profile(const std::string& path, const PriceProfile& profile) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write price file '" + path + "'");
  out.precision(17);
  out << "price\n";
  for (double v : profile.prices) out << v << '\n';
}

}  // namespace gspdr

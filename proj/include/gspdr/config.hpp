#pragma once

// Run configuration. Files are either flat `key = value` text (with `#`
// comments) or a JSON object whose nesting maps onto dotted keys, e.g.
// {"agent": {"gamma": 0.99}} is agent.gamma. Unknown keys are rejected.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gspdr/ddpg.hpp"
#include "gspdr/env.hpp"
#include "gspdr/error.hpp"

namespace gspdr {

enum class Algorithm { ddpg, gsp_offline, gsp_online, gsp_online_np };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ddpg: return "ddpg";
    case Algorithm::gsp_offline: return "gsp_offline";
    case Algorithm::gsp_online: return "gsp_online";
    case Algorithm::gsp_online_np: return "gsp_online_np";
  }
  return "ddpg";
}

struct GspConfig {
  int levels = 40;
  int periods = 16;
  double tolerance_fraction = 0.4;  // of the level spacing
  int radius = 5;                   // nearby-goal window, in level indices
  double model_lr = 1e-3;
  std::vector<int> model_hidden{64, 64};
  int model_steps = 40;             // per episode, online variants
  std::size_t model_batch = 128;
  int offline_episodes = 50;
  int offline_model_steps = 2000;
};

struct PriceConfig {
  std::string file;  // empty: generate
  std::uint64_t seed = 7;
  double base = 1.0;
  double amplitude = 0.5;
  double noise = 0.05;
};

struct RunConfig {
  Algorithm algorithm = Algorithm::ddpg;
  int episodes = 80;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out_dir = "runs/default";
  int workers = 1;
  double initial_level = 0.1;
  EnvParams env;
  bool activation_time_set = false;  // otherwise horizon - 4
  PriceConfig prices;
  AgentConfig agent;
  GspConfig gsp;

  bool uses_gsp() const { return algorithm != Algorithm::ddpg; }

  EnvParams resolved_env() const {
    EnvParams p = env;
    if (!activation_time_set) p.activation_time = p.horizon - 4;
    return p;
  }

  void validate() const {
    if (episodes < 1) throw ValidationError("episodes must be >= 1");
    if (seeds.empty()) throw ValidationError("seeds must not be empty");
    if (workers < 1) throw ValidationError("workers must be >= 1");
    const EnvParams p = resolved_env();
    p.validate();
    if (!(initial_level >= 0 && initial_level <= p.capacity))
      throw ValidationError("initial_level must lie in [0, env.capacity]");
    agent.validate();
    if (uses_gsp()) {
      if (gsp.levels < 2) throw ValidationError("gsp.levels must be >= 2");
      if (gsp.periods < 2 || gsp.periods > p.horizon + 1)
        throw ValidationError("gsp.periods must lie in [2, env.horizon + 1]");
      if (!(gsp.tolerance_fraction > 0 && gsp.tolerance_fraction < 0.5))
        throw ValidationError("gsp.tolerance_fraction must lie in (0, 0.5)");
      if (gsp.radius < 0) throw ValidationError("gsp.radius must be >= 0");
      if (!(gsp.model_lr > 0)) throw ValidationError("gsp.model_lr must be > 0");
      if (gsp.model_hidden.empty()) throw ValidationError("gsp.model_hidden must list at least one layer");
      if (gsp.model_steps < 0 || gsp.offline_model_steps < 0)
        throw ValidationError("gsp model step counts must be >= 0");
      if (gsp.model_batch == 0) throw ValidationError("gsp.model_batch must be positive");
      if (algorithm == Algorithm::gsp_offline && gsp.offline_episodes < 1)
        throw ValidationError("gsp.offline_episodes must be >= 1 for gsp_offline");
    }
  }
};

namespace detail {

[[noreturn]] inline void bad_value(const std::string& key, std::string_view value, const char* expected) {
  throw ConfigError("key '" + key + "': expected " + expected + ", got '" + std::string(value) + "'");
}

inline double to_double(const std::string& key, std::string_view v) {
  double d;
  if (!parse_double(v, d)) bad_value(key, v, "a number");
  return d;
}

inline std::int64_t to_int(const std::string& key, std::string_view v) {
  v = trim(v);
  std::int64_t i = 0;
  if (!v.empty() && v.front() == '+') v.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return i;
}

inline std::size_t to_size(const std::string& key, std::string_view v) {
  const auto i = to_int(key, v);
  if (i < 0) bad_value(key, v, "a non-negative integer");
  return static_cast<std::size_t>(i);
}

inline bool to_bool(const std::string& key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

inline std::vector<std::int64_t> to_int_list(const std::string& key, std::string_view v) {
  std::vector<std::int64_t> out;
  v = trim(v);
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  for (auto part : split(v, ',')) {
    if (trim(part).empty()) bad_value(key, v, "a comma-separated list of integers");
    out.push_back(to_int(key, part));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

inline std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add = [&k](std::string name, auto setter, auto getter) {
      k.push_back({std::move(name), setter, getter});
    };
#define GSPDR_DOUBLE(NAME, FIELD)                                                                          \
  add(NAME, [](RunConfig& c, std::string_view v) { c.FIELD = to_double(NAME, v); },                     \
      [](const RunConfig& c) { return fmt_double(c.FIELD); })
#define GSPDR_INT(NAME, FIELD)                                                                             \
  add(NAME, [](RunConfig& c, std::string_view v) { c.FIELD = static_cast<int>(to_int(NAME, v)); },      \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })
#define GSPDR_SIZE(NAME, FIELD)                                                                            \
  add(NAME, [](RunConfig& c, std::string_view v) { c.FIELD = to_size(NAME, v); },                       \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })

    add("algorithm",
        [](RunConfig& c, std::string_view v) {
          v = trim(v);
          for (auto a : {Algorithm::ddpg, Algorithm::gsp_offline, Algorithm::gsp_online, Algorithm::gsp_online_np})
            if (v == to_string(a)) {
              c.algorithm = a;
              return;
            }
          bad_value("algorithm", v, "one of ddpg, gsp_offline, gsp_online, gsp_online_np");
        },
        [](const RunConfig& c) { return std::string(to_string(c.algorithm)); });
    GSPDR_INT("episodes", episodes);
    add("seeds",
        [](RunConfig& c, std::string_view v) {
          c.seeds.clear();
          for (auto s : to_int_list("seeds", v)) {
            if (s < 0) bad_value("seeds", v, "non-negative seeds");
            c.seeds.push_back(static_cast<std::uint64_t>(s));
          }
        },
        [](const RunConfig& c) { return join(c.seeds); });
    add("out", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(trim(v)); },
        [](const RunConfig& c) { return c.out_dir; });
    GSPDR_INT("workers", workers);
    GSPDR_DOUBLE("initial_level", initial_level);

    GSPDR_INT("env.horizon", env.horizon);
    GSPDR_DOUBLE("env.dt", env.dt);
    GSPDR_DOUBLE("env.capacity", env.capacity);
    GSPDR_DOUBLE("env.demand", env.demand);
    GSPDR_DOUBLE("env.u_min", env.u_min);
    GSPDR_DOUBLE("env.u_max", env.u_max);
    GSPDR_DOUBLE("env.tracking_lag", env.tracking_lag);
    GSPDR_DOUBLE("env.c0", env.c0);
    GSPDR_DOUBLE("env.c1", env.c1);
    GSPDR_DOUBLE("env.c2", env.c2);
    GSPDR_DOUBLE("env.terminal_target", env.terminal_target);
    GSPDR_DOUBLE("env.terminal_tolerance", env.terminal_tolerance);
    GSPDR_DOUBLE("env.penalty_weight", env.penalty_weight);
    add("env.activation_time",
        [](RunConfig& c, std::string_view v) {
          c.env.activation_time = static_cast<int>(to_int("env.activation_time", v));
          c.activation_time_set = true;
        },
        [](const RunConfig& c) { return std::to_string(c.resolved_env().activation_time); });
    GSPDR_DOUBLE("env.terminal_bonus", env.terminal_bonus);
    GSPDR_INT("env.forecast_len", env.forecast_len);

    add("prices.file", [](RunConfig& c, std::string_view v) { c.prices.file = std::string(trim(v)); },
        [](const RunConfig& c) { return c.prices.file; });
    add("prices.seed",
        [](RunConfig& c, std::string_view v) { c.prices.seed = static_cast<std::uint64_t>(to_size("prices.seed", v)); },
        [](const RunConfig& c) { return std::to_string(c.prices.seed); });
    GSPDR_DOUBLE("prices.base", prices.base);
    GSPDR_DOUBLE("prices.amplitude", prices.amplitude);
    GSPDR_DOUBLE("prices.noise", prices.noise);

    GSPDR_DOUBLE("agent.actor_lr", agent.actor_lr);
    GSPDR_DOUBLE("agent.critic_lr", agent.critic_lr);
    GSPDR_SIZE("agent.buffer_size", agent.buffer_size);
    GSPDR_SIZE("agent.batch_size", agent.batch_size);
    GSPDR_DOUBLE("agent.gamma", agent.gamma);
    GSPDR_DOUBLE("agent.tau", agent.tau);
    GSPDR_DOUBLE("agent.noise_std", agent.noise_std);
    GSPDR_SIZE("agent.learning_starts", agent.learning_starts);
    GSPDR_DOUBLE("agent.preact_penalty", agent.preact_penalty);
    add("agent.random_warmup",
        [](RunConfig& c, std::string_view v) { c.agent.random_warmup = to_bool("agent.random_warmup", v); },
        [](const RunConfig& c) { return std::string(c.agent.random_warmup ? "true" : "false"); });
    add("agent.hidden",
        [](RunConfig& c, std::string_view v) {
          c.agent.hidden.clear();
          for (auto h : to_int_list("agent.hidden", v)) c.agent.hidden.push_back(static_cast<int>(h));
        },
        [](const RunConfig& c) { return join(c.agent.hidden); });

    GSPDR_INT("gsp.levels", gsp.levels);
    GSPDR_INT("gsp.periods", gsp.periods);
    GSPDR_DOUBLE("gsp.tolerance_fraction", gsp.tolerance_fraction);
    GSPDR_INT("gsp.radius", gsp.radius);
    GSPDR_DOUBLE("gsp.model_lr", gsp.model_lr);
    add("gsp.model_hidden",
        [](RunConfig& c, std::string_view v) {
          c.gsp.model_hidden.clear();
          for (auto h : to_int_list("gsp.model_hidden", v)) c.gsp.model_hidden.push_back(static_cast<int>(h));
        },
        [](const RunConfig& c) { return join(c.gsp.model_hidden); });
    GSPDR_INT("gsp.model_steps", gsp.model_steps);
    GSPDR_SIZE("gsp.model_batch", gsp.model_batch);
    GSPDR_INT("gsp.offline_episodes", gsp.offline_episodes);
    GSPDR_INT("gsp.offline_model_steps", gsp.offline_model_steps);
#undef GSPDR_DOUBLE
#undef GSPDR_INT
#undef GSPDR_SIZE
    return k;
  }();
  return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, std::string_view value) {
  for (const auto& k : config_keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("unknown key '" + key + "'");
}

// "key=value"
inline void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const auto key = std::string(detail::trim(assignment.substr(0, eq)));
  if (key.empty()) throw ConfigError("override '" + std::string(assignment) + "' has an empty key");
  set_config_value(cfg, key, assignment.substr(eq + 1));
}

namespace detail {

inline void flatten_json(const nlohmann::json& j, const std::string& prefix, RunConfig& cfg) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), cfg);
    return;
  }
  std::string text;
  if (j.is_string()) {
    text = j.get<std::string>();
  } else if (j.is_array()) {
    std::vector<std::string> parts;
    for (const auto& e : j) {
      if (!e.is_number_integer() && !e.is_number_unsigned())
        throw ConfigError("key '" + prefix + "': expected a list of integers");
      parts.push_back(e.dump());
    }
    text = join(parts);
  } else {
    text = j.dump();
  }
  set_config_value(cfg, prefix, text);
}

}  // namespace detail

inline void parse_config_text(RunConfig& cfg, std::string_view text, const std::string& origin = "<config>") {
  const auto body = detail::trim(text);
  const auto first = body.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && body[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(origin + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError(origin + ": JSON config must be an object");
    detail::flatten_json(j, "", cfg);
    return;
  }
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = detail::trim(l);
    if (l.empty()) continue;
    if (l.find('=') == std::string_view::npos)
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    apply_override(cfg, l);
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  parse_config_text(cfg, ss.str(), path);
}

inline std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& k : config_keys()) os << k.name << " = " << k.get(cfg) << '\n';
  return os.str();
}

}  // namespace gspdr

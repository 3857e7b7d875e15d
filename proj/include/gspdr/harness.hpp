#pragma once

// Experiment driver: the training loop for plain DDPG and the goal-space
// planning variants, noise-free evaluation, and cross-run comparison.
//
// Run directory layout:
//   <out>/config.txt          resolved configuration (key = value)
//   <out>/metrics.csv         one row per (seed, episode); deterministic
//   <out>/timing.csv          wall-clock seconds per (seed, episode)
//   <out>/seed_<s>/checkpoint.txt
//   <out>/seed_<s>/graph_edges.csv, goal_nodes.csv, values_heatmap.csv  (GSP only)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gspdr/config.hpp"
#include "gspdr/ddpg.hpp"
#include "gspdr/env.hpp"
#include "gspdr/error.hpp"
#include "gspdr/gsp.hpp"

namespace gspdr {

struct EpisodeMetrics {
  std::uint64_t seed = 0;
  int episode = 0;
  std::int64_t env_steps = 0;  // cumulative at episode end
  double episode_return = 0.0;  // unshaped
  double shaped_bonus = 0.0;    // sum of gamma*phi(x') - phi(x)
  double final_storage = 0.0;
  bool satisfied = false;
  double elec_cost = 0.0;
  double wall_seconds = 0.0;
  std::size_t graph_nodes_raw = 0;  // before pruning
  std::size_t graph_nodes = 0;
  std::size_t graph_edges = 0;
  double eval_return = 0.0;  // noise-free rollout after the episode
  double eval_final_storage = 0.0;
  bool eval_satisfied = false;
  int numeric_skips = 0;
};

inline const char* metrics_header() {
  return "seed,episode,env_steps,return,shaped_bonus,final_storage,satisfied,elec_cost,graph_nodes_raw,"
         "graph_nodes,graph_edges,eval_return,eval_final_storage,eval_satisfied,numeric_skips";
}

inline void write_metrics_row(std::ostream& out, const EpisodeMetrics& m) {
  out << std::setprecision(17) << m.seed << ',' << m.episode << ',' << m.env_steps << ',' << m.episode_return
      << ',' << m.shaped_bonus << ',' << m.final_storage << ',' << (m.satisfied ? 1 : 0) << ',' << m.elec_cost
      << ',' << m.graph_nodes_raw << ',' << m.graph_nodes << ',' << m.graph_edges << ',' << m.eval_return << ','
      << m.eval_final_storage << ',' << (m.eval_satisfied ? 1 : 0) << ',' << m.numeric_skips << '\n';
}

inline std::vector<EpisodeMetrics> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != metrics_header()) throw ParseError(path + ": unexpected metrics header");
  std::vector<EpisodeMetrics> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(detail::trim(line), ',');
    std::vector<double> v(f.size());
    if (f.size() != 15) throw ParseError(path + ":" + std::to_string(line_no) + ": expected 15 columns");
    for (std::size_t i = 0; i < f.size(); ++i)
      if (!detail::parse_double(f[i], v[i])) throw ParseError(path + ":" + std::to_string(line_no) + ": bad number");
    EpisodeMetrics m;
    m.seed = static_cast<std::uint64_t>(v[0]);
    m.episode = static_cast<int>(v[1]);
    m.env_steps = static_cast<std::int64_t>(v[2]);
    m.episode_return = v[3];
    m.shaped_bonus = v[4];
    m.final_storage = v[5];
    m.satisfied = v[6] != 0;
    m.elec_cost = v[7];
    m.graph_nodes_raw = static_cast<std::size_t>(v[8]);
    m.graph_nodes = static_cast<std::size_t>(v[9]);
    m.graph_edges = static_cast<std::size_t>(v[10]);
    m.eval_return = v[11];
    m.eval_final_storage = v[12];
    m.eval_satisfied = v[13] != 0;
    m.numeric_skips = static_cast<int>(v[14]);
    out.push_back(m);
  }
  return out;
}

inline PriceProfile make_price_profile(const RunConfig& cfg) {
  const EnvParams env = cfg.resolved_env();
  if (!cfg.prices.file.empty())
    return load_price_profile(cfg.prices.file, static_cast<std::size_t>(env.horizon));
  return generate_price_profile(cfg.prices.seed, env.horizon, cfg.prices.base, cfg.prices.amplitude,
                                cfg.prices.noise, env.dt);
}

inline GoalGrid make_goal_grid(const RunConfig& cfg) {
  const EnvParams env = cfg.resolved_env();
  return GoalGrid::with_fraction(cfg.gsp.levels, cfg.gsp.periods, env.horizon, env.capacity,
                                 cfg.gsp.tolerance_fraction);
}

// Independent RNG stream per (seed, purpose).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct RolloutResult {
  std::vector<Transition> transitions;
  double episode_return = 0.0;
  double elec_cost = 0.0;
  double final_storage = 0.0;
  bool satisfied = false;
};

// Runs one episode with `policy(features, state) -> normalized action`.
template <class Policy>
RolloutResult rollout(const EnvParams& env, const PriceProfile& profile, double initial_level, int episode_id,
                      Policy&& policy) {
  RolloutResult r;
  EnvState s = reset(env, profile, initial_level);
  for (int t = 0; t < env.horizon; ++t) {
    Eigen::VectorXd x = observe(s, env);
    const Eigen::VectorXd a = policy(x, s);
    const StepResult res = step(s, action_to_setpoint(a[0], env), env, profile);
    Transition tr;
    tr.state = std::move(x);
    tr.action = a;
    tr.reward = res.reward.total;
      tr.terminal_reward = res.reward.terminal;
    tr.next_state = observe(res.state, env);
    tr.done = res.done;
    tr.episode = episode_id;
    tr.step = t;
    tr.level = s.tank_level;
    tr.next_level = res.state.tank_level;
    r.episode_return += res.reward.total;
    r.elec_cost -= res.reward.elec;
    r.transitions.push_back(std::move(tr));
    s = res.state;
  }
  r.final_storage = s.tank_level;
  r.satisfied = env.terminal_satisfied(s.tank_level);
  return r;
}

// Exploration data for offline pretraining: half the episodes follow a
// persistent random walk in action space, half a price-threshold rule with a
// random threshold and jitter.
inline GoalData collect_offline_data(const RunConfig& cfg, const PriceProfile& profile, const GoalGrid& grid,
                                     std::mt19937_64& rng) {
  const EnvParams env = cfg.resolved_env();
  GoalData data;
  std::vector<double> sorted(profile.prices.begin(), profile.prices.begin() + env.horizon);
  std::sort(sorted.begin(), sorted.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int e = 0; e < cfg.gsp.offline_episodes; ++e) {
    const bool walk = e % 2 == 0;
    const double quantile = 0.2 + 0.6 * unit(rng);
    const double threshold = sorted[static_cast<std::size_t>(quantile * (sorted.size() - 1))];
    double a_prev = 2.0 * unit(rng) - 1.0;
    auto policy = [&](const Eigen::VectorXd&, const EnvState& s) {
      Eigen::VectorXd a(1);
      if (walk) {
        a_prev = std::clamp(a_prev + 0.4 * jitter(rng), -1.0, 1.0);
        a[0] = a_prev;
      } else {
        const double p = s.price_forecast.front();
        a[0] = std::clamp((p < threshold ? 0.8 : -0.8) + 0.3 * jitter(rng), -1.0, 1.0);
      }
      return a;
    };
    const auto r = rollout(env, profile, cfg.initial_level, -1 - e, policy);
    data.append(extract_goal_transitions(r.transitions, grid, cfg.agent.gamma));
  }
  return data;
}

struct GspSnapshot {
  GoalGraph raw;
  GoalGraph pruned;
  PotentialFunction potential;
};

// Rebuild the graph, prune it, refresh the state-to-goal models and run VI.
inline GspSnapshot update_gsp(const GoalData& data, const GoalGrid& grid, const RunConfig& cfg,
                              StateGoalModel& model, int model_steps, std::mt19937_64& rng) {
  GspSnapshot snap;
  snap.raw = build_graph(data, grid);
  snap.pruned = prune_graph(snap.raw);
  if (!snap.pruned.empty()) value_iteration(snap.pruned);
  const bool projection = cfg.algorithm != Algorithm::gsp_online_np;
  if (projection && !data.samples.empty() && model_steps > 0)
    train_state_goal_models(data.samples, model, grid, {model_steps, cfg.gsp.model_batch}, rng);
  if (snap.pruned.empty())
    snap.potential = PotentialFunction::zero();
  else if (projection)
    snap.potential = PotentialFunction::projected(snap.pruned, model.net, cfg.gsp.radius);
  else
    snap.potential = PotentialFunction::table(snap.pruned);
  return snap;
}

inline void write_checkpoint(const std::string& path, const RunConfig& cfg, const Agent& agent,
                             const ReplayBuffer& buffer) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << "gspdr-checkpoint 1\n";
  out << "config_begin\n" << config_to_text(cfg) << "config_end\n";
  out << "buffer " << buffer.capacity() << ' ' << buffer.size() << ' ' << buffer.cursor() << '\n';
  write_agent(out, agent);
}

struct Checkpoint {
  RunConfig config;
  Agent agent;
  std::size_t buffer_capacity = 0, buffer_size = 0, buffer_cursor = 0;
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line != "gspdr-checkpoint 1") throw ParseError(path + ": not a version 1 checkpoint");
  std::getline(in, line);
  if (line != "config_begin") throw ParseError(path + ": missing config block");
  Checkpoint ck;
  std::string text;
  while (std::getline(in, line) && line != "config_end") text += line + '\n';
  if (line != "config_end") throw ParseError(path + ": unterminated config block");
  parse_config_text(ck.config, text, path);
  detail::expect_token(in, "buffer");
  if (!(in >> ck.buffer_capacity >> ck.buffer_size >> ck.buffer_cursor))
    throw ParseError(path + ": bad buffer metadata");
  ck.agent = read_agent(in);
  const EnvParams env = ck.config.resolved_env();
  if (ck.agent.actor.input_dim() != observation_dim(env) || ck.agent.actor.output_dim() != 1)
    throw ShapeError("checkpoint networks do not match the environment observation/action sizes");
  return ck;
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<EpisodeMetrics> metrics;
  // Potential of each episode's initial state, through the batched path.
  std::vector<double> initial_potential;
  Agent agent;
  std::optional<GspSnapshot> gsp;
};

// Bookkeeping for shaped rewards: each buffer slot caches its potentials
// along with the snapshot generation they came from.
struct PotentialCache {
  std::vector<double> current, next;
  std::vector<std::uint64_t> generation;

  explicit PotentialCache(std::size_t n) : current(n, 0.0), next(n, 0.0), generation(n, 0) {}
};

inline SeedResult train_seed(const RunConfig& cfg, std::uint64_t seed, const std::string& seed_dir = "") {
  const EnvParams env = cfg.resolved_env();
  const PriceProfile profile = make_price_profile(cfg);
  auto init_rng = make_rng(seed, 1);
  auto rng = make_rng(seed, 2);
  auto gsp_rng = make_rng(seed, 3);

  SeedResult result;
  result.seed = seed;
  Agent agent = make_agent(observation_dim(env), 1, cfg.agent, init_rng);
  ReplayBuffer buffer(cfg.agent.buffer_size);
  PotentialCache cache(cfg.agent.buffer_size);
  std::uint64_t generation = 1;

  std::optional<GoalGrid> grid;
  std::optional<StateGoalModel> model;
  PotentialFunction potential;
  std::optional<GspSnapshot> snapshot;
  if (cfg.uses_gsp()) {
    grid = make_goal_grid(cfg);
    model = make_state_goal_model(observation_dim(env), cfg.gsp.model_hidden, cfg.gsp.model_lr, init_rng);
    if (cfg.algorithm == Algorithm::gsp_offline) {
      const GoalData data = collect_offline_data(cfg, profile, *grid, gsp_rng);
      snapshot = update_gsp(data, *grid, cfg, *model, cfg.gsp.offline_model_steps, gsp_rng);
      potential = snapshot->potential;
    }
  }
  const bool shaping = cfg.uses_gsp();
  const std::size_t train_after = std::max(cfg.agent.learning_starts, cfg.agent.batch_size);

  std::int64_t env_steps = 0;
  for (int e = 0; e < cfg.episodes; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpisodeMetrics m;
    m.seed = seed;
    m.episode = e;

    EnvState s = reset(env, profile, cfg.initial_level);
    Eigen::VectorXd x = observe(s, env);
    double phi_x = shaping ? potential(x, s.tank_level, s.step) : 0.0;
    {
      const PotentialQuery q{&x, s.tank_level, s.step};
      result.initial_potential.push_back(potential.evaluate(std::span(&q, 1))[0]);
    }
    for (int t = 0; t < env.horizon; ++t) {
      Eigen::VectorXd a;
      if (cfg.agent.random_warmup && buffer.size() < train_after) {
        a.resize(1);
        a[0] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
      } else {
        a = select_action(agent.actor, x, cfg.agent.noise_std, -1.0, 1.0, rng);
      }
      const StepResult res = step(s, action_to_setpoint(a[0], env), env, profile);
      Eigen::VectorXd x_next = observe(res.state, env);
      const double phi_next = shaping && !res.done ? potential(x_next, res.state.tank_level, res.state.step) : 0.0;
      m.shaped_bonus += cfg.agent.gamma * phi_next - phi_x;
      m.episode_return += res.reward.total;
      m.elec_cost -= res.reward.elec;

      Transition tr;
      tr.state = x;
      tr.action = a;
      tr.reward = res.reward.total;
      tr.terminal_reward = res.reward.terminal;
      tr.next_state = x_next;
      tr.done = res.done;
      tr.episode = e;
      tr.step = t;
      tr.level = s.tank_level;
      tr.next_level = res.state.tank_level;
      const std::size_t slot = buffer.push(std::move(tr));
      cache.current[slot] = phi_x;
      cache.next[slot] = phi_next;
      cache.generation[slot] = generation;
      ++env_steps;

      if (buffer.size() >= train_after) {
        const auto idx = buffer.sample_indices(cfg.agent.batch_size, rng);
        std::vector<Transition> picked;
        picked.reserve(idx.size());
        for (auto i : idx) picked.push_back(buffer[i]);
        const Batch batch = make_batch(picked);
        BatchPotentials phis;
        if (shaping) {
          // Refresh potentials computed under an older snapshot.
          std::vector<PotentialQuery> queries;
          std::vector<std::pair<std::size_t, bool>> owners;
          for (auto i : idx) {
            if (cache.generation[i] == generation) continue;
            const Transition& tt = buffer[i];
            queries.push_back({&tt.state, tt.level, tt.step});
            owners.emplace_back(i, false);
            if (!tt.done) {
              queries.push_back({&tt.next_state, tt.next_level, tt.step + 1});
              owners.emplace_back(i, true);
            }
          }
          const auto vals = potential.evaluate(queries);
          for (std::size_t q = 0; q < queries.size(); ++q) {
            const auto [i, is_next] = owners[q];
            (is_next ? cache.next : cache.current)[i] = vals[q];
            if (!is_next && buffer[i].done) cache.next[i] = 0.0;
            cache.generation[i] = generation;
          }
          phis.current.resize(static_cast<Eigen::Index>(idx.size()));
          phis.next.resize(static_cast<Eigen::Index>(idx.size()));
          for (std::size_t k = 0; k < idx.size(); ++k) {
            phis.current[static_cast<Eigen::Index>(k)] = cache.current[idx[k]];
            phis.next[static_cast<Eigen::Index>(k)] = cache.next[idx[k]];
          }
        }
        try {
          train_step(agent, batch, cfg.agent, shaping ? &phis : nullptr);
        } catch (const NumericError&) {
          ++m.numeric_skips;
        }
      }
      s = res.state;
      x = std::move(x_next);
      phi_x = phi_next;
    }
    m.env_steps = env_steps;
    m.final_storage = s.tank_level;
    m.satisfied = env.terminal_satisfied(s.tank_level);

    if (cfg.uses_gsp()) {
      if (cfg.algorithm != Algorithm::gsp_offline) {
        const GoalData data = extract_from_buffer(buffer, *grid, cfg.agent.gamma);
        snapshot = update_gsp(data, *grid, cfg, *model, cfg.gsp.model_steps, gsp_rng);
        potential = snapshot->potential;
        ++generation;
      }
      m.graph_nodes_raw = snapshot->raw.node_count();
      m.graph_nodes = snapshot->pruned.node_count();
      m.graph_edges = snapshot->pruned.edge_count();
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto eval = rollout(env, profile, cfg.initial_level, e, [&](const Eigen::VectorXd& obs, const EnvState&) {
      return Eigen::VectorXd(forward(agent.actor, obs));
    });
    m.eval_return = eval.episode_return;
    m.eval_final_storage = eval.final_storage;
    m.eval_satisfied = eval.satisfied;
    result.metrics.push_back(m);
  }

  if (!seed_dir.empty()) {
    std::filesystem::create_directories(seed_dir);
    write_checkpoint(seed_dir + "/checkpoint.txt", cfg, agent, buffer);
    if (snapshot) {
      write_graph_edges_csv(seed_dir + "/graph_edges.csv", snapshot->pruned);
      write_goal_nodes_csv(seed_dir + "/goal_nodes.csv", snapshot->pruned);
      write_heatmap_csv(seed_dir + "/values_heatmap.csv", heatmap_rows(node_values(snapshot->pruned)));
    }
  }
  result.agent = std::move(agent);
  result.gsp = std::move(snapshot);
  return result;
}

inline std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

struct TrainResult {
  std::vector<SeedResult> seeds;
};

// Runs every seed (in parallel when cfg.workers > 1) and writes the run directory.
inline TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream c(cfg.out_dir + "/config.txt");
    if (!c) throw IoError("cannot write into '" + cfg.out_dir + "'");
    c << config_to_text(cfg);
  }
  TrainResult result;
  result.seeds.resize(cfg.seeds.size());
  for (std::size_t start = 0; start < cfg.seeds.size(); start += static_cast<std::size_t>(cfg.workers)) {
    std::vector<std::future<SeedResult>> jobs;
    const std::size_t end = std::min(cfg.seeds.size(), start + static_cast<std::size_t>(cfg.workers));
    for (std::size_t i = start; i < end; ++i) {
      const auto seed = cfg.seeds[i];
      const std::string dir = cfg.out_dir + "/" + seed_dir_name(seed);
      jobs.push_back(std::async(cfg.workers > 1 ? std::launch::async : std::launch::deferred,
                                [&cfg, seed, dir] { return train_seed(cfg, seed, dir); }));
    }
    for (std::size_t i = start; i < end; ++i) result.seeds[i] = jobs[i - start].get();
  }

  std::ofstream metrics(cfg.out_dir + "/metrics.csv");
  std::ofstream timing(cfg.out_dir + "/timing.csv");
  if (!metrics || !timing) throw IoError("cannot write metrics into '" + cfg.out_dir + "'");
  metrics << metrics_header() << '\n';
  timing << "seed,episode,wall_seconds\n" << std::setprecision(9);
  for (const auto& s : result.seeds)
    for (const auto& m : s.metrics) {
      write_metrics_row(metrics, m);
      timing << m.seed << ',' << m.episode << ',' << m.wall_seconds << '\n';
    }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvaluationSummary {
  int episodes = 0;
  double mean_return = 0.0;
  double satisfaction_rate = 0.0;
  std::vector<double> final_storage;
};

inline EvaluationSummary evaluate(const Agent& agent, const RunConfig& cfg, int n_episodes) {
  if (n_episodes < 1) throw UsageError("evaluation needs at least one episode");
  const EnvParams env = cfg.resolved_env();
  if (agent.actor.input_dim() != observation_dim(env))
    throw ShapeError("actor input does not match the environment observation size");
  const PriceProfile profile = make_price_profile(cfg);
  EvaluationSummary s;
  s.episodes = n_episodes;
  int satisfied = 0;
  for (int e = 0; e < n_episodes; ++e) {
    const auto r = rollout(env, profile, cfg.initial_level, e, [&](const Eigen::VectorXd& obs, const EnvState&) {
      return Eigen::VectorXd(forward(agent.actor, obs));
    });
    s.mean_return += r.episode_return / n_episodes;
    satisfied += r.satisfied ? 1 : 0;
    s.final_storage.push_back(r.final_storage);
  }
  s.satisfaction_rate = static_cast<double>(satisfied) / n_episodes;
  return s;
}

inline EvaluationSummary evaluate(const std::string& checkpoint_path, int n_episodes) {
  if (n_episodes < 1) throw UsageError("evaluation needs at least one episode");
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  return evaluate(ck.agent, ck.config, n_episodes);
}

// ---------------------------------------------------------------------------
// Statistics and comparison

inline double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Spread across seeds, normalised by n: seeds {1, 3} give 1.
inline double std_dev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Trailing moving average over `window` episodes (shorter at the start).
inline std::vector<double> moving_average(const std::vector<double>& xs, int window) {
  std::vector<double> out(xs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sum += xs[i];
    if (i >= static_cast<std::size_t>(window)) sum -= xs[i - static_cast<std::size_t>(window)];
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

// Environment steps at the end of the first episode whose smoothed return
// reaches `threshold`; +inf when never reached.
inline double steps_to_threshold(const std::vector<double>& returns, int horizon, double threshold, int window) {
  const auto sm = moving_average(returns, window);
  for (std::size_t i = 0; i < sm.size(); ++i)
    if (sm[i] >= threshold) return static_cast<double>((i + 1) * static_cast<std::size_t>(horizon));
  return std::numeric_limits<double>::infinity();
}

// Per-seed return curves of one run.
struct RunCurves {
  std::string name;
  int horizon = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> returns;  // [seed][episode]
  std::vector<std::vector<bool>> satisfied;

  std::size_t episodes() const {
    std::size_t n = std::numeric_limits<std::size_t>::max();
    for (const auto& r : returns) n = std::min(n, r.size());
    return returns.empty() ? 0 : n;
  }

  std::vector<double> mean_curve() const {
    std::vector<double> out(episodes(), 0.0);
    for (std::size_t e = 0; e < out.size(); ++e) {
      std::vector<double> col;
      for (const auto& r : returns) col.push_back(r[e]);
      out[e] = mean_of(col);
    }
    return out;
  }
};

inline RunCurves curves_from_metrics(const std::string& name, int horizon, const std::vector<EpisodeMetrics>& rows) {
  RunCurves c;
  c.name = name;
  c.horizon = horizon;
  for (const auto& m : rows) {
    auto it = std::find(c.seeds.begin(), c.seeds.end(), m.seed);
    std::size_t k;
    if (it == c.seeds.end()) {
      c.seeds.push_back(m.seed);
      c.returns.emplace_back();
      c.satisfied.emplace_back();
      k = c.seeds.size() - 1;
    } else {
      k = static_cast<std::size_t>(it - c.seeds.begin());
    }
    c.returns[k].push_back(m.episode_return);
    c.satisfied[k].push_back(m.satisfied);
  }
  return c;
}

inline RunCurves load_run(const std::string& dir) {
  RunConfig cfg;
  load_config_file(cfg, dir + "/config.txt");
  return curves_from_metrics(dir, cfg.resolved_env().horizon, read_metrics_csv(dir + "/metrics.csv"));
}

struct CompareOptions {
  double fraction = 0.8;
  int smoothing = 5;
  std::optional<double> absolute_threshold;
};

// threshold = start + fraction * (best - start), where best is the highest
// final smoothed mean return over runs and start the lowest mean return of the
// first episode, i.e. the untrained policy. Returns are typically negative, so
// the fraction is taken of the improvement range rather than of the raw value.
inline double relative_threshold(const std::vector<RunCurves>& runs, double fraction, int window) {
  double best = -std::numeric_limits<double>::infinity();
  double start = std::numeric_limits<double>::infinity();
  for (const auto& r : runs) {
    const auto mean = r.mean_curve();
    if (mean.empty()) continue;
    best = std::max(best, moving_average(mean, window).back());
    start = std::min(start, mean.front());
  }
  return start + fraction * (best - start);
}

struct RunSummary {
  std::string name;
  std::vector<double> steps_to_threshold;  // per seed
  double median_steps = 0.0;               // +inf when not reached
};

struct ComparisonTable {
  std::size_t episodes = 0;
  double threshold = 0.0;
  std::vector<std::vector<double>> mean;  // [run][episode]
  std::vector<std::vector<double>> std;
  std::vector<RunSummary> summaries;
};

inline ComparisonTable compare(const std::vector<RunCurves>& runs, const CompareOptions& opt = {}) {
  if (runs.size() < 2) throw UsageError("compare needs at least two runs");
  for (const auto& r : runs)
    if (r.horizon != runs.front().horizon)
      throw ValidationError("runs have different horizons (" + std::to_string(r.horizon) + " vs " +
                            std::to_string(runs.front().horizon) + ")");
  ComparisonTable t;
  t.episodes = std::numeric_limits<std::size_t>::max();
  for (const auto& r : runs) t.episodes = std::min(t.episodes, r.episodes());
  t.threshold = opt.absolute_threshold ? *opt.absolute_threshold
                                       : relative_threshold(runs, opt.fraction, opt.smoothing);
  for (const auto& r : runs) {
    std::vector<double> mean(t.episodes), sd(t.episodes);
    for (std::size_t e = 0; e < t.episodes; ++e) {
      std::vector<double> col;
      for (const auto& s : r.returns) col.push_back(s[e]);
      mean[e] = mean_of(col);
      sd[e] = std_dev(col);
    }
    t.mean.push_back(std::move(mean));
    t.std.push_back(std::move(sd));
    RunSummary sum;
    sum.name = r.name;
    for (const auto& s : r.returns) sum.steps_to_threshold.push_back(steps_to_threshold(s, r.horizon, t.threshold, opt.smoothing));
    sum.median_steps = median_of(sum.steps_to_threshold);
    t.summaries.push_back(std::move(sum));
  }
  return t;
}

// CSV: episode, then mean/std per run and the difference of each run's mean
// from the first run's; followed by a steps-to-threshold block.
inline void write_comparison(std::ostream& out, const ComparisonTable& t) {
  out << std::setprecision(10) << "episode";
  for (std::size_t r = 0; r < t.summaries.size(); ++r) out << ",mean_" << r << ",std_" << r;
  for (std::size_t r = 1; r < t.summaries.size(); ++r) out << ",diff_" << r;
  out << '\n';
  for (std::size_t e = 0; e < t.episodes; ++e) {
    out << e;
    for (std::size_t r = 0; r < t.summaries.size(); ++r) out << ',' << t.mean[r][e] << ',' << t.std[r][e];
    for (std::size_t r = 1; r < t.summaries.size(); ++r) out << ',' << t.mean[r][e] - t.mean[0][e];
    out << '\n';
  }
  out << "\nrun,name,median_steps_to_threshold (threshold " << t.threshold << ")\n";
  for (std::size_t r = 0; r < t.summaries.size(); ++r) {
    out << r << ',' << t.summaries[r].name << ',';
    if (std::isinf(t.summaries[r].median_steps))
      out << "not reached";
    else
      out << t.summaries[r].median_steps;
    out << '\n';
  }
}

// Writes values_heatmap.csv next to every goal_nodes.csv under `dir`
// (either a run directory or a single seed directory). Returns files written.
inline std::vector<std::string> export_heatmap(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> sources;
  if (fs::exists(fs::path(dir) / "goal_nodes.csv")) sources.push_back(dir);
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "goal_nodes.csv")) subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& p : subdirs) sources.push_back(p.string());
  if (sources.empty()) {
    if (fs::exists(fs::path(dir) / "config.txt")) {
      RunConfig cfg;
      load_config_file(cfg, (fs::path(dir) / "config.txt").string());
      if (!cfg.uses_gsp()) throw UsageError("run '" + dir + "' used plain DDPG and has no goal values");
    }
    throw IoError("no goal_nodes.csv found under '" + dir + "'");
  }
  std::vector<std::string> written;
  for (const auto& s : sources) {
    const auto out = s + "/values_heatmap.csv";
    write_heatmap_csv(out, heatmap_rows(read_goal_nodes_csv(s + "/goal_nodes.csv")));
    written.push_back(out);
  }
  return written;
}

}  // namespace gspdr

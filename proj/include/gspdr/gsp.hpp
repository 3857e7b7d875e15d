#pragma once

// Goal-space planning over a (storage level x time period) grid.
//
// Trajectories are abstracted into transitions between subgoals of adjacent
// periods. Those transitions form a period-layered DAG whose edges carry the
// mean discounted return and mean discount; value iteration on the DAG gives
// subgoal values, which learned state-to-goal models project back onto
// concrete states as a shaping potential.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gspdr/approximator.hpp"
#include "gspdr/ddpg.hpp"
#include "gspdr/env.hpp"
#include "gspdr/error.hpp"

namespace gspdr {

// Period 0 holds the initial state and carries no goals, so valid goals have
// period in [1, periods) and level in [0, levels).
struct Subgoal {
  int period = 0;
  int level = 0;

  auto operator<=>(const Subgoal&) const = default;
};

class GoalGrid {
 public:
  GoalGrid() = default;

  GoalGrid(int levels, int periods, int horizon, double capacity, double tolerance)
      : levels_(levels), periods_(periods), horizon_(horizon), capacity_(capacity), tolerance_(tolerance) {
    if (levels < 2) throw ValidationError("goal grid needs at least 2 levels");
    if (periods < 2) throw ValidationError("goal grid needs at least 2 periods");
    if (horizon < 1 || periods > horizon + 1) throw ValidationError("goal grid has more periods than time steps");
    if (!(capacity > 0)) throw ValidationError("goal grid capacity must be positive");
    if (!(tolerance > 0 && tolerance < 0.5 * spacing()))
      throw ValidationError("membership tolerance must lie in (0, spacing/2) so goals are disjoint");
  }

  // Tolerance given as a fraction of the level spacing.
  static GoalGrid with_fraction(int levels, int periods, int horizon, double capacity, double fraction) {
    if (levels < 2) throw ValidationError("goal grid needs at least 2 levels");
    return GoalGrid(levels, periods, horizon, capacity, fraction * capacity / (levels - 1));
  }

  int levels() const { return levels_; }
  int periods() const { return periods_; }
  int horizon() const { return horizon_; }
  double capacity() const { return capacity_; }
  double tolerance() const { return tolerance_; }
  double spacing() const { return capacity_ / (levels_ - 1); }
  int terminal_period() const { return periods_ - 1; }
  int goal_count() const { return levels_ * (periods_ - 1); }

  double level_center(int level) const { return level * spacing(); }

  // Periods partition the time indices {0..T}.
  int period_of(int step) const {
    const auto p = static_cast<int>((static_cast<std::int64_t>(step) * periods_) / (horizon_ + 1));
    return std::clamp(p, 0, periods_ - 1);
  }

  int period_start(int period) const {
    for (int t = 0; t <= horizon_; ++t)
      if (period_of(t) == period) return t;
    return horizon_ + 1;
  }

  int nearest_level(double storage) const {
    return std::clamp(static_cast<int>(std::lround(storage / spacing())), 0, levels_ - 1);
  }

  std::optional<Subgoal> membership(double storage, int step) const {
    const int p = period_of(step);
    if (p == 0) return std::nullopt;
    const int l = nearest_level(storage);
    if (std::abs(storage - level_center(l)) > tolerance_) return std::nullopt;
    return Subgoal{p, l};
  }

  bool contains(Subgoal g) const {
    return g.period >= 1 && g.period < periods_ && g.level >= 0 && g.level < levels_;
  }

  std::size_t index(Subgoal g) const {
    return static_cast<std::size_t>((g.period - 1) * levels_ + g.level);
  }

  Subgoal goal(std::size_t idx) const {
    const auto i = static_cast<int>(idx);
    return Subgoal{i / levels_ + 1, i % levels_};
  }

  // Goal coordinates fed to the state-to-goal models, both in [0, 1].
  std::pair<double, double> normalized(Subgoal g) const {
    return {static_cast<double>(g.level) / (levels_ - 1), static_cast<double>(g.period) / (periods_ - 1)};
  }

 private:
  int levels_ = 2;
  int periods_ = 2;
  int horizon_ = 1;
  double capacity_ = 1.0;
  double tolerance_ = 0.1;
};

// ---------------------------------------------------------------------------
// Trajectory abstraction

struct GoalTransitionRecord {
  Subgoal from, to;
  double discounted_return = 0.0;
  double discount = 1.0;
  int steps = 0;
};

// Terminal reward of an episode, keyed by its entry goal in the terminal period.
struct TerminalRecord {
  Subgoal goal;
  double terminal_reward = 0.0;
};

struct StateGoalSample {
  Eigen::VectorXd state;
  Subgoal goal;
  double discounted_return = 0.0;
  double discount = 1.0;
  int steps = 0;
};

struct GoalData {
  std::vector<GoalTransitionRecord> goal_records;
  std::vector<TerminalRecord> terminal_records;
  std::vector<StateGoalSample> samples;

  void append(GoalData&& other) {
    for (auto& r : other.goal_records) goal_records.push_back(r);
    for (auto& r : other.terminal_records) terminal_records.push_back(r);
    for (auto& s : other.samples) samples.push_back(std::move(s));
  }
};

// The first state of each period that belongs to a goal is that period's
// entry event. Consecutive entry events yield goal-to-goal records; every
// state yields a sample toward the entry event of the following period.
inline GoalData extract_goal_transitions(std::span<const Transition> episode, const GoalGrid& grid,
                                         double gamma) {
  GoalData out;
  const std::size_t n = episode.size();
  if (n == 0) return out;
  for (std::size_t i = 1; i < n; ++i)
    if (episode[i].step != episode[0].step + static_cast<int>(i) || episode[i].episode != episode[0].episode)
      throw ContractError("trajectory steps are not contiguous");

  // State k is x at step episode[0].step + k, for k in [0, n]; state n is the final successor.
  auto level_at = [&](std::size_t k) { return k < n ? episode[k].level : episode[n - 1].next_level; };
  auto step_at = [&](std::size_t k) { return episode[0].step + static_cast<int>(k); };

  std::vector<std::optional<std::size_t>> entry(static_cast<std::size_t>(grid.periods()));
  std::vector<Subgoal> entry_goal(static_cast<std::size_t>(grid.periods()));
  for (std::size_t k = 0; k <= n; ++k) {
    const auto g = grid.membership(level_at(k), step_at(k));
    if (!g) continue;
    auto& e = entry[static_cast<std::size_t>(g->period)];
    if (!e) {
      e = k;
      entry_goal[static_cast<std::size_t>(g->period)] = *g;
    }
  }

  auto discounted = [&](std::size_t from, std::size_t to) {
    double sum = 0.0, scale = 1.0;
    for (std::size_t k = from; k < to; ++k) {
      sum += scale * episode[k].reward;
      scale *= gamma;
    }
    return sum;
  };

  for (int p = 1; p + 1 < grid.periods(); ++p) {
    const auto& a = entry[static_cast<std::size_t>(p)];
    const auto& b = entry[static_cast<std::size_t>(p + 1)];
    if (!a || !b) continue;
    const int h = static_cast<int>(*b - *a);
    out.goal_records.push_back({entry_goal[static_cast<std::size_t>(p)], entry_goal[static_cast<std::size_t>(p + 1)],
                                discounted(*a, *b), std::pow(gamma, h), h});
  }

  const auto& last = entry[static_cast<std::size_t>(grid.terminal_period())];
  if (last && episode[n - 1].done)
    out.terminal_records.push_back({entry_goal[static_cast<std::size_t>(grid.terminal_period())],
                                    episode[n - 1].terminal_reward});

  for (std::size_t t = 0; t < n; ++t) {
    const int next_period = grid.period_of(step_at(t)) + 1;
    if (next_period >= grid.periods()) continue;
    const auto& target = entry[static_cast<std::size_t>(next_period)];
    if (!target || *target <= t) continue;
    const int h = static_cast<int>(*target - t);
    out.samples.push_back({episode[t].state, entry_goal[static_cast<std::size_t>(next_period)],
                           discounted(t, *target), std::pow(gamma, h), h});
  }
  return out;
}

// Splits the buffer into complete episodes (steps 0..T-1) and extracts each.
inline GoalData extract_from_buffer(const ReplayBuffer& buffer, const GoalGrid& grid, double gamma) {
  GoalData out;
  std::vector<Transition> episode;
  auto flush = [&] {
    if (!episode.empty() && episode.front().step == 0 && episode.back().done)
      out.append(extract_goal_transitions(episode, grid, gamma));
    episode.clear();
  };
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const Transition& t = buffer[buffer.chronological_slot(i)];
    if (!episode.empty() &&
        (t.episode != episode.back().episode || t.step != episode.back().step + 1))
      flush();
    episode.push_back(t);
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Goal graph

struct EdgeStats {
  double mean_return = 0.0;
  double mean_discount = 0.0;
  std::size_t count = 0;
};

struct GoalEdge {
  Subgoal from, to;
  EdgeStats stats;
};

class GoalGraph {
 public:
  GoalGraph() = default;
  explicit GoalGraph(const GoalGrid& grid)
      : grid_(grid),
        present_(static_cast<std::size_t>(grid.goal_count()), 0),
        succ_(static_cast<std::size_t>(grid.goal_count())),
        pred_(static_cast<std::size_t>(grid.goal_count())),
        terminal_sum_(static_cast<std::size_t>(grid.goal_count()), 0.0),
        terminal_count_(static_cast<std::size_t>(grid.goal_count()), 0),
        values_(static_cast<std::size_t>(grid.goal_count()), 0.0) {}

  const GoalGrid& grid() const { return grid_; }

  bool has_node(Subgoal g) const { return grid_.contains(g) && present_[grid_.index(g)]; }

  void add_node(Subgoal g) {
    if (!grid_.contains(g)) throw ContractError("subgoal outside the grid");
    present_[grid_.index(g)] = 1;
  }

  void observe_edge(Subgoal from, Subgoal to, double discounted_return, double discount) {
    if (to.period != from.period + 1)
      throw ContractError("goal edge must advance exactly one period");
    add_node(from);
    add_node(to);
    auto& e = succ_[grid_.index(from)][grid_.index(to)];
    ++e.count;
    e.mean_return += (discounted_return - e.mean_return) / static_cast<double>(e.count);
    e.mean_discount += (discount - e.mean_discount) / static_cast<double>(e.count);
    pred_[grid_.index(to)].insert(grid_.index(from));
  }

  void observe_terminal(Subgoal g, double terminal_reward) {
    if (g.period != grid_.terminal_period()) throw ContractError("terminal record outside the terminal period");
    add_node(g);
    const auto i = grid_.index(g);
    terminal_sum_[i] += terminal_reward;
    ++terminal_count_[i];
  }

  void remove_node(Subgoal g) {
    const auto i = grid_.index(g);
    for (auto& [j, _] : succ_[i]) pred_[j].erase(i);
    for (auto j : pred_[i]) succ_[j].erase(i);
    succ_[i].clear();
    pred_[i].clear();
    present_[i] = 0;
    values_[i] = 0.0;
  }

  std::vector<Subgoal> nodes() const {
    std::vector<Subgoal> out;
    for (std::size_t i = 0; i < present_.size(); ++i)
      if (present_[i]) out.push_back(grid_.goal(i));
    return out;
  }

  std::vector<Subgoal> nodes_in_period(int period) const {
    std::vector<Subgoal> out;
    for (int l = 0; l < grid_.levels(); ++l)
      if (has_node({period, l})) out.push_back({period, l});
    return out;
  }

  std::size_t node_count() const { return static_cast<std::size_t>(std::count(present_.begin(), present_.end(), 1)); }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& s : succ_) n += s.size();
    return n;
  }

  bool empty() const { return node_count() == 0; }

  std::vector<GoalEdge> edges() const {
    std::vector<GoalEdge> out;
    for (std::size_t i = 0; i < succ_.size(); ++i)
      for (const auto& [j, stats] : succ_[i]) out.push_back({grid_.goal(i), grid_.goal(j), stats});
    return out;
  }

  std::vector<std::pair<Subgoal, EdgeStats>> successors(Subgoal g) const {
    std::vector<std::pair<Subgoal, EdgeStats>> out;
    for (const auto& [j, stats] : succ_[grid_.index(g)]) out.emplace_back(grid_.goal(j), stats);
    return out;
  }

  std::vector<Subgoal> predecessors(Subgoal g) const {
    std::vector<Subgoal> out;
    for (auto j : pred_[grid_.index(g)]) out.push_back(grid_.goal(j));
    return out;
  }

  // Mean observed terminal reward of a terminal-period node, 0 when unobserved.
  double terminal_value(Subgoal g) const {
    const auto i = grid_.index(g);
    return terminal_count_[i] ? terminal_sum_[i] / static_cast<double>(terminal_count_[i]) : 0.0;
  }

  std::size_t terminal_count(Subgoal g) const { return terminal_count_[grid_.index(g)]; }

  double value(Subgoal g) const { return values_[grid_.index(g)]; }
  void set_value(Subgoal g, double v) { values_[grid_.index(g)] = v; }

 private:
  GoalGrid grid_;
  std::vector<char> present_;
  std::vector<std::map<std::size_t, EdgeStats>> succ_;
  std::vector<std::set<std::size_t>> pred_;
  std::vector<double> terminal_sum_;
  std::vector<std::size_t> terminal_count_;
  std::vector<double> values_;
};

inline GoalGraph build_graph(const GoalData& data, const GoalGrid& grid) {
  GoalGraph g(grid);
  for (const auto& r : data.goal_records) g.observe_edge(r.from, r.to, r.discounted_return, r.discount);
  for (const auto& r : data.terminal_records) g.observe_terminal(r.goal, r.terminal_reward);
  return g;
}

struct PruneReport {
  std::size_t removed_backward = 0;
  std::size_t removed_forward = 0;
  bool empty = false;
};

// Backward BFS from the terminal period over reversed edges, then forward BFS
// from the first goal period. Nodes not visited by a pass are removed.
inline GoalGraph prune_graph(const GoalGraph& graph, PruneReport* report = nullptr) {
  GoalGraph g = graph;
  const GoalGrid& grid = g.grid();
  const std::size_t n = static_cast<std::size_t>(grid.goal_count());
  PruneReport rep;

  auto sweep = [&](const std::vector<Subgoal>& seeds, bool reverse) {
    std::vector<char> seen(n, 0);
    std::deque<Subgoal> queue;
    for (auto s : seeds) {
      seen[grid.index(s)] = 1;
      queue.push_back(s);
    }
    while (!queue.empty()) {
      const Subgoal cur = queue.front();
      queue.pop_front();
      std::vector<Subgoal> next;
      if (reverse) {
        next = g.predecessors(cur);
      } else {
        for (const auto& [s, _] : g.successors(cur)) next.push_back(s);
      }
      for (auto s : next)
        if (!seen[grid.index(s)]) {
          seen[grid.index(s)] = 1;
          queue.push_back(s);
        }
    }
    std::size_t removed = 0;
    for (auto node : g.nodes())
      if (!seen[grid.index(node)]) {
        g.remove_node(node);
        ++removed;
      }
    return removed;
  };

  rep.removed_backward = sweep(g.nodes_in_period(grid.terminal_period()), true);
  rep.removed_forward = sweep(g.nodes_in_period(1), false);
  rep.empty = g.empty();
  if (report) *report = rep;
  return g;
}

// One sweep in reverse period order; exact on a period-layered DAG.
// Terminal-period nodes take their mean observed terminal reward.
inline std::vector<double> value_iteration(GoalGraph& graph) {
  const GoalGrid& grid = graph.grid();
  std::vector<double> values(static_cast<std::size_t>(grid.goal_count()), 0.0);
  for (int p = grid.terminal_period(); p >= 1; --p) {
    for (auto g : graph.nodes_in_period(p)) {
      double v;
      if (p == grid.terminal_period()) {
        v = graph.terminal_value(g);
      } else {
        const auto succ = graph.successors(g);
        if (succ.empty())
          throw ContractError("value iteration on a graph with a dead end; prune it first");
        v = -std::numeric_limits<double>::infinity();
        for (const auto& [s, e] : succ)
          v = std::max(v, e.mean_return + e.mean_discount * values[grid.index(s)]);
      }
      values[grid.index(g)] = v;
      graph.set_value(g, v);
    }
  }
  return values;
}

// ---------------------------------------------------------------------------
// State-to-goal models

struct StateGoalModel {
  TwoHeadModel net;
  TwoHeadAdam opt;
};

inline StateGoalModel make_state_goal_model(int state_dim, const std::vector<int>& hidden, double lr,
                                            std::mt19937_64& rng) {
  StateGoalModel m;
  m.net = make_two_head(state_dim + 2, hidden, rng);
  m.opt = TwoHeadAdam(m.net, lr);
  return m;
}

inline void write_goal_inputs(Eigen::Ref<Eigen::VectorXd> column, const Eigen::VectorXd& state, Subgoal g,
                              const GoalGrid& grid) {
  const auto [lv, pd] = grid.normalized(g);
  column.head(state.size()) = state;
  column[state.size()] = lv;
  column[state.size() + 1] = pd;
}

struct ModelTrainConfig {
  int steps = 40;
  std::size_t batch_size = 128;
};

struct ModelTrainReport {
  double last_loss = 0.0;
  int skipped = 0;
};

// Minibatch Adam on the summed squared error of both heads.
inline ModelTrainReport train_state_goal_models(std::span<const StateGoalSample> samples, StateGoalModel& model,
                                                const GoalGrid& grid, const ModelTrainConfig& cfg,
                                                std::mt19937_64& rng) {
  if (samples.empty()) throw UsageError("no state-to-goal samples to train on");
  ModelTrainReport rep;
  const std::size_t n = samples.size();
  const std::size_t b = std::min(cfg.batch_size, n);
  const auto dim = samples[0].state.size();
  Eigen::MatrixXd inputs(dim + 2, static_cast<Eigen::Index>(b));
  Eigen::RowVectorXd r_target(static_cast<Eigen::Index>(b)), d_target(static_cast<Eigen::Index>(b));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int s = 0; s < cfg.steps; ++s) {
    for (std::size_t i = 0; i < b; ++i) {
      const auto& smp = samples[b == n ? i : pick(rng)];
      write_goal_inputs(inputs.col(static_cast<Eigen::Index>(i)), smp.state, smp.goal, grid);
      r_target[static_cast<Eigen::Index>(i)] = smp.discounted_return;
      d_target[static_cast<Eigen::Index>(i)] = smp.discount;
    }
    TwoHeadCache cache;
    const auto out = forward(model.net, inputs, &cache);
    const Eigen::RowVectorXd er = out.reward - r_target;
    const Eigen::RowVectorXd ed = out.discount - d_target;
    const double loss = (er.squaredNorm() + ed.squaredNorm()) / static_cast<double>(b);
    if (!std::isfinite(loss)) {
      ++rep.skipped;
      continue;
    }
    const double scale = 2.0 / static_cast<double>(b);
    const auto g = backward(model.net, cache, scale * er, scale * ed);
    try {
      adam_step(model.net, g, model.opt);
    } catch (const NumericError&) {
      ++rep.skipped;
      continue;
    }
    rep.last_loss = loss;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Potentials

// Candidate goals for projection: surviving goals in the period after the
// state's period whose level index is within `radius` of the nearest level.
inline std::vector<Subgoal> nearby_goals(double level, int step, const GoalGrid& grid, const GoalGraph& graph,
                                         int radius) {
  std::vector<Subgoal> out;
  const int next = grid.period_of(step) + 1;
  if (next >= grid.periods()) return out;
  const int centre = grid.nearest_level(level);
  for (int l = std::max(0, centre - radius); l <= std::min(grid.levels() - 1, centre + radius); ++l)
    if (graph.has_node({next, l})) out.push_back({next, l});
  return out;
}

// max over nearby goals of reward + discount * goal value; 0 when no goal is nearby.
inline double project_value(const Eigen::VectorXd& features, double level, int step, const GoalGrid& grid,
                            const GoalGraph& graph, const TwoHeadModel& model, int radius) {
  const auto goals = nearby_goals(level, step, grid, graph, radius);
  if (goals.empty()) return 0.0;
  Eigen::MatrixXd inputs(features.size() + 2, static_cast<Eigen::Index>(goals.size()));
  for (std::size_t i = 0; i < goals.size(); ++i)
    write_goal_inputs(inputs.col(static_cast<Eigen::Index>(i)), features, goals[i], grid);
  const auto out = forward(model, inputs);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < goals.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    best = std::max(best, out.reward[c] + out.discount[c] * graph.value(goals[i]));
  }
  return best;
}

// Lookup potential without projection: v(goal containing x), 0 outside every goal.
inline double table_value(double level, int step, const GoalGrid& grid, const GoalGraph& graph) {
  const auto g = grid.membership(level, step);
  return g && graph.has_node(*g) ? graph.value(*g) : 0.0;
}

// Where a potential is evaluated: network features plus the plant coordinates.
struct PotentialQuery {
  const Eigen::VectorXd* features = nullptr;
  double level = 0.0;
  int step = 0;
};

// Frozen snapshot of whatever defines the shaping potential.
class PotentialFunction {
 public:
  enum class Mode { zero, projected, table };

  PotentialFunction() = default;

  static PotentialFunction zero() { return {}; }

  static PotentialFunction projected(GoalGraph graph, TwoHeadModel model, int radius) {
    PotentialFunction p;
    p.mode_ = graph.empty() ? Mode::zero : Mode::projected;
    p.graph_ = std::move(graph);
    p.model_ = std::move(model);
    p.radius_ = radius;
    return p;
  }

  static PotentialFunction table(GoalGraph graph) {
    PotentialFunction p;
    p.mode_ = graph.empty() ? Mode::zero : Mode::table;
    p.graph_ = std::move(graph);
    return p;
  }

  Mode mode() const { return mode_; }
  const GoalGraph& graph() const { return graph_; }

  double operator()(const Eigen::VectorXd& features, double level, int step) const {
    switch (mode_) {
      case Mode::zero: return 0.0;
      case Mode::table: return table_value(level, step, graph_.grid(), graph_);
      case Mode::projected:
        return project_value(features, level, step, graph_.grid(), graph_, model_, radius_);
    }
    return 0.0;
  }

  // Batched evaluation: one forward pass over every (state, candidate) pair.
  std::vector<double> evaluate(std::span<const PotentialQuery> queries) const {
    std::vector<double> out(queries.size(), 0.0);
    if (mode_ == Mode::zero) return out;
    if (mode_ == Mode::table) {
      for (std::size_t i = 0; i < queries.size(); ++i)
        out[i] = table_value(queries[i].level, queries[i].step, graph_.grid(), graph_);
      return out;
    }
    const GoalGrid& grid = graph_.grid();
    std::vector<std::vector<Subgoal>> cand(queries.size());
    Eigen::Index total = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      cand[i] = nearby_goals(queries[i].level, queries[i].step, grid, graph_, radius_);
      total += static_cast<Eigen::Index>(cand[i].size());
    }
    if (total == 0) return out;
    const auto dim = queries[0].features->size();
    Eigen::MatrixXd inputs(dim + 2, total);
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < queries.size(); ++i)
      for (auto g : cand[i]) write_goal_inputs(inputs.col(c++), *queries[i].features, g, grid);
    const auto res = forward(model_, inputs);
    c = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      if (cand[i].empty()) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (auto g : cand[i]) {
        best = std::max(best, res.reward[c] + res.discount[c] * graph_.value(g));
        ++c;
      }
      out[i] = best;
    }
    return out;
  }

 private:
  Mode mode_ = Mode::zero;
  GoalGraph graph_;
  TwoHeadModel model_;
  int radius_ = 5;
};

// r + gamma * phi(x') - phi(x); a terminal successor has potential 0.
inline double shape_reward(double reward, double phi_current, double phi_next, double gamma, bool next_terminal) {
  return reward + gamma * (next_terminal ? 0.0 : phi_next) - phi_current;
}

// ---------------------------------------------------------------------------
// CSV exports

struct NodeValue {
  int period = 0;
  int level = 0;
  double value = 0.0;
};

struct HeatmapRow {
  int period = 0;
  int level = 0;
  double value = 0.0;
  double normalized = 0.0;
};

// Per-period min-max normalisation; a constant period maps to 0.
inline std::vector<HeatmapRow> heatmap_rows(std::vector<NodeValue> nodes) {
  std::sort(nodes.begin(), nodes.end(), [](const NodeValue& a, const NodeValue& b) {
    return std::tie(a.period, a.level) < std::tie(b.period, b.level);
  });
  std::vector<HeatmapRow> rows;
  std::size_t i = 0;
  while (i < nodes.size()) {
    std::size_t j = i;
    double lo = nodes[i].value, hi = nodes[i].value;
    while (j < nodes.size() && nodes[j].period == nodes[i].period) {
      lo = std::min(lo, nodes[j].value);
      hi = std::max(hi, nodes[j].value);
      ++j;
    }
    for (std::size_t k = i; k < j; ++k) {
      const double norm = hi > lo ? (nodes[k].value - lo) / (hi - lo) : 0.0;
      rows.push_back({nodes[k].period, nodes[k].level, nodes[k].value, norm});
    }
    i = j;
  }
  return rows;
}

inline std::vector<NodeValue> node_values(const GoalGraph& graph) {
  std::vector<NodeValue> out;
  for (auto g : graph.nodes()) out.push_back({g.period, g.level, graph.value(g)});
  return out;
}

inline void write_heatmap_csv(const std::string& path, const std::vector<HeatmapRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(17);
  out << "period,level,value,normalized_value\n";
  for (const auto& r : rows) out << r.period << ',' << r.level << ',' << r.value << ',' << r.normalized << '\n';
}

inline void write_goal_nodes_csv(const std::string& path, const GoalGraph& graph) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(17);
  out << "period,level,value\n";
  for (const auto& n : node_values(graph)) out << n.period << ',' << n.level << ',' << n.value << '\n';
}

inline std::vector<NodeValue> read_goal_nodes_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open goal value file '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != "period,level,value") throw ParseError(path + ": unexpected header");
  std::vector<NodeValue> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(detail::trim(line), ',');
    double p, l, v;
    if (f.size() != 3 || !detail::parse_double(f[0], p) || !detail::parse_double(f[1], l) ||
        !detail::parse_double(f[2], v))
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed row");
    out.push_back({static_cast<int>(p), static_cast<int>(l), v});
  }
  return out;
}

inline void write_graph_edges_csv(const std::string& path, const GoalGraph& graph) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(17);
  out << "q,l,q_next,l_next,mean_return,mean_discount,count\n";
  for (const auto& e : graph.edges())
    out << e.from.period << ',' << e.from.level << ',' << e.to.period << ',' << e.to.level << ','
        << e.stats.mean_return << ',' << e.stats.mean_discount << ',' << e.stats.count << '\n';
}

}  // namespace gspdr

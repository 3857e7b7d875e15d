#pragma once

// Deterministic-policy actor-critic with replay, target networks and
// Polyak averaging. Rewards may be shaped by a state potential supplied
// at sampling time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gspdr/approximator.hpp"
#include "gspdr/error.hpp"

namespace gspdr {

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
  int episode = 0;
  int step = 0;
  // Plant quantities kept for goal-space bookkeeping.
  double level = 0.0;
  double next_level = 0.0;
  double terminal_reward = 0.0;  // terminal bonus part of reward
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValidationError("replay buffer capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  // Returns the slot written; the oldest entry is overwritten once full.
  std::size_t push(Transition t) {
    const std::size_t slot = cursor_;
    if (data_.size() < capacity_)
      data_.push_back(std::move(t));
    else
      data_[slot] = std::move(t);
    cursor_ = (cursor_ + 1) % capacity_;
    return slot;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  const Transition& operator[](std::size_t slot) const { return data_[slot]; }

  // Slot of the i-th oldest stored transition.
  std::size_t chronological_slot(std::size_t i) const {
    return data_.size() < capacity_ ? i : (cursor_ + i) % capacity_;
  }

  // Uniform without replacement inside a batch (Floyd's subset sampling).
  std::vector<std::size_t> sample_indices(std::size_t batch_size, std::mt19937_64& rng) const {
    if (batch_size == 0) throw UsageError("batch size must be positive");
    if (data_.size() < batch_size)
      throw UsageError("cannot sample " + std::to_string(batch_size) + " from buffer of size " +
                       std::to_string(data_.size()));
    const std::size_t n = data_.size();
    std::vector<std::size_t> picked;
    picked.reserve(batch_size);
    for (std::size_t j = n - batch_size; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> u(0, j);
      const std::size_t t = u(rng);
      if (std::find(picked.begin(), picked.end(), t) == picked.end())
        picked.push_back(t);
      else
        picked.push_back(j);
    }
    return picked;
  }

  std::vector<Transition> sample(std::size_t batch_size, std::mt19937_64& rng) const {
    std::vector<Transition> out;
    for (auto i : sample_indices(batch_size, rng)) out.push_back(data_[i]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> data_;
};

// Column-stacked view of a minibatch.
struct Batch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;
  Eigen::VectorXd not_done;  // 0 for terminal transitions, 1 otherwise

  Eigen::Index size() const { return rewards.size(); }
};

template <class Range>
Batch make_batch(const Range& transitions) {
  const auto n = static_cast<Eigen::Index>(std::size(transitions));
  if (n == 0) throw UsageError("empty batch");
  const auto& first = *std::begin(transitions);
  Batch b;
  b.states.resize(first.state.size(), n);
  b.actions.resize(first.action.size(), n);
  b.rewards.resize(n);
  b.next_states.resize(first.next_state.size(), n);
  b.not_done.resize(n);
  Eigen::Index i = 0;
  for (const Transition& t : transitions) {
    b.states.col(i) = t.state;
    b.actions.col(i) = t.action;
    b.rewards[i] = t.reward;
    b.next_states.col(i) = t.next_state;
    b.not_done[i] = t.done ? 0.0 : 1.0;
    ++i;
  }
  return b;
}

struct AgentConfig {
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  std::size_t buffer_size = 50000;
  std::size_t batch_size = 256;
  double gamma = 0.99;
  double tau = 0.005;
  double noise_std = 0.1;
  std::size_t learning_starts = 1000;
  bool random_warmup = true;     // uniform actions until learning starts
  double preact_penalty = 1e-3;  // L2 weight on the actor's output pre-activation
  std::vector<int> hidden{64, 64};

  void validate() const {
    if (!(gamma > 0 && gamma <= 1)) throw ValidationError("agent.gamma must lie in (0, 1]");
    if (!(tau > 0 && tau <= 1)) throw ValidationError("agent.tau must lie in (0, 1]");
    if (!(noise_std >= 0)) throw ValidationError("agent.noise_std must be >= 0");
    if (!(preact_penalty >= 0)) throw ValidationError("agent.preact_penalty must be >= 0");
    if (!(actor_lr >= 0) || !(critic_lr >= 0)) throw ValidationError("learning rates must be >= 0");
    if (batch_size == 0) throw ValidationError("agent.batch_size must be positive");
    if (buffer_size < batch_size) throw ValidationError("agent.buffer_size must be >= agent.batch_size");
    if (hidden.empty()) throw ValidationError("agent.hidden must list at least one layer");
    for (int h : hidden)
      if (h < 1) throw ValidationError("agent.hidden sizes must be positive");
  }
};

struct Agent {
  Mlp actor, critic, target_actor, target_critic;
  AdamState actor_opt, critic_opt;
};

inline Agent make_agent(int state_dim, int action_dim, const AgentConfig& cfg, std::mt19937_64& rng) {
  std::vector<int> a_sizes{state_dim}, c_sizes{state_dim + action_dim};
  a_sizes.insert(a_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  c_sizes.insert(c_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  a_sizes.push_back(action_dim);
  c_sizes.push_back(1);
  Agent a;
  a.actor = make_mlp(a_sizes, Activation::relu, Activation::tanh, rng);
  a.critic = make_mlp(c_sizes, Activation::relu, Activation::identity, rng);
  a.target_actor = a.actor;
  a.target_critic = a.critic;
  a.actor_opt = AdamState(a.actor, cfg.actor_lr);
  a.critic_opt = AdamState(a.critic, cfg.critic_lr);
  return a;
}

// mu(x) + N(0, sigma), clamped elementwise to [lo, hi].
inline Eigen::VectorXd select_action(const Mlp& actor, const Eigen::VectorXd& state, double noise_std, double lo,
                                     double hi, std::mt19937_64& rng) {
  Eigen::VectorXd a = forward(actor, state);
  if (noise_std > 0) {
    std::normal_distribution<double> n(0.0, noise_std);
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += n(rng);
  }
  return a.cwiseMax(lo).cwiseMin(hi);
}

inline Eigen::MatrixXd stack(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd m(top.rows() + bottom.rows(), top.cols());
  m << top, bottom;
  return m;
}

// Potentials of each sample's state and successor, for shaped targets.
struct BatchPotentials {
  Eigen::VectorXd current;
  Eigen::VectorXd next;  // must already be 0 for terminal successors
};

// r + gamma * phi(x') - phi(x)
inline Eigen::VectorXd shaped_rewards(const Batch& batch, double gamma, const BatchPotentials& phi) {
  if (phi.current.size() != batch.size() || phi.next.size() != batch.size())
    throw ShapeError("potentials do not match batch");
  return batch.rewards + gamma * phi.next - phi.current;
}

// y = r + gamma * Q'(x', mu'(x')) for non-terminal samples, y = r otherwise.
inline Eigen::VectorXd td_target(const Batch& batch, const Mlp& target_actor, const Mlp& target_critic, double gamma,
                                 const BatchPotentials* shaped = nullptr) {
  if (batch.size() == 0) throw UsageError("empty batch");
  const Eigen::VectorXd r = shaped ? shaped_rewards(batch, gamma, *shaped) : batch.rewards;
  const Eigen::MatrixXd next_actions = forward(target_actor, batch.next_states);
  const Eigen::RowVectorXd q_next = forward(target_critic, stack(batch.next_states, next_actions)).row(0);
  return r + gamma * batch.not_done.cwiseProduct(q_next.transpose());
}

// One Adam step on mean squared Bellman error; returns the loss before the step.
inline double critic_update(Mlp& critic, const Batch& batch, const Eigen::VectorXd& targets, AdamState& opt) {
  if (targets.size() != batch.size()) throw ShapeError("targets do not align with batch");
  ForwardCache cache;
  const Eigen::RowVectorXd q = forward(critic, stack(batch.states, batch.actions), &cache).row(0);
  const Eigen::RowVectorXd err = q - targets.transpose();
  const double loss = err.squaredNorm() / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericError("non-finite critic loss, update skipped");
  const MlpGradients g = backward(critic, cache, (2.0 / static_cast<double>(batch.size())) * err);
  adam_step(critic, g, opt);
  return loss;
}

// Gradient of -(1/N) sum Q(x, mu(x)) + preact_l2 * (1/N) sum z^2 with respect to
// the actor parameters, z the actor's output pre-activation. The penalty keeps
// the bounded output out of deep saturation, where its gradient vanishes.
inline MlpGradients actor_gradient(const Mlp& actor, const Mlp& critic, const Eigen::MatrixXd& states,
                                   double* mean_q = nullptr, double preact_l2 = 0.0) {
  ForwardCache a_cache, c_cache;
  const Eigen::MatrixXd actions = forward(actor, states, &a_cache);
  const Eigen::RowVectorXd q = forward(critic, stack(states, actions), &c_cache).row(0);
  if (mean_q) *mean_q = q.mean();
  const auto n = static_cast<double>(states.cols());
  const MlpGradients cg = backward(critic, c_cache, Eigen::RowVectorXd::Constant(states.cols(), -1.0 / n));
  const Eigen::MatrixXd action_grad = cg.input.bottomRows(actions.rows());
  if (preact_l2 == 0.0) return backward(actor, a_cache, action_grad);
  const Eigen::MatrixXd pre_grad = (2.0 * preact_l2 / n) * a_cache.pre.back();
  return backward(actor, a_cache, action_grad, &pre_grad);
}

// Ascends the critic's mean Q through the action input; the critic is left unchanged.
inline double actor_update(Mlp& actor, const Mlp& critic, const Batch& batch, AdamState& opt,
                           double preact_l2 = 0.0) {
  if (batch.size() == 0) throw UsageError("empty batch");
  double mean_q = 0.0;
  const MlpGradients g = actor_gradient(actor, critic, batch.states, &mean_q, preact_l2);
  adam_step(actor, g, opt);
  return mean_q;
}

inline void polyak_update(Mlp& target, const Mlp& online, double tau) {
  if (!target.same_shape(online)) throw ShapeError("target and online networks differ in shape");
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    auto& t = target.layers[k];
    const auto& o = online.layers[k];
    t.weight = tau * o.weight + (1.0 - tau) * t.weight;
    t.bias = tau * o.bias + (1.0 - tau) * t.bias;
  }
}

struct UpdateStats {
  double critic_loss = 0.0;
  double mean_q = 0.0;
};

// Critic step, actor step, then both target networks.
inline UpdateStats train_step(Agent& agent, const Batch& batch, const AgentConfig& cfg,
                              const BatchPotentials* shaped = nullptr) {
  UpdateStats s;
  const Eigen::VectorXd y = td_target(batch, agent.target_actor, agent.target_critic, cfg.gamma, shaped);
  s.critic_loss = critic_update(agent.critic, batch, y, agent.critic_opt);
  s.mean_q = actor_update(agent.actor, agent.critic, batch, agent.actor_opt, cfg.preact_penalty);
  polyak_update(agent.target_critic, agent.critic, cfg.tau);
  polyak_update(agent.target_actor, agent.actor, cfg.tau);
  return s;
}

inline void write_agent(std::ostream& out, const Agent& a) {
  write_mlp(out, "actor", a.actor);
  write_mlp(out, "critic", a.critic);
  write_mlp(out, "target_actor", a.target_actor);
  write_mlp(out, "target_critic", a.target_critic);
  write_adam(out, "actor_opt", a.actor_opt);
  write_adam(out, "critic_opt", a.critic_opt);
}

inline Agent read_agent(std::istream& in) {
  Agent a;
  a.actor = read_mlp(in, "actor");
  a.critic = read_mlp(in, "critic");
  a.target_actor = read_mlp(in, "target_actor");
  a.target_critic = read_mlp(in, "target_critic");
  a.actor_opt = read_adam(in, "actor_opt");
  a.critic_opt = read_adam(in, "critic_opt");
  if (!a.actor.same_shape(a.target_actor) || !a.critic.same_shape(a.target_critic))
    throw ShapeError("checkpoint target networks do not match online networks");
  if (a.critic.input_dim() != a.actor.input_dim() + a.actor.output_dim())
    throw ShapeError("checkpoint critic input does not match actor state/action sizes");
  return a;
}

}  // namespace gspdr

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include "gspdr/ddpg.hpp"

using namespace gspdr;

namespace {

Transition make_transition(int id, bool done = false) {
  Transition t;
  t.state = Eigen::VectorXd::Constant(2, id);
  t.action = Eigen::VectorXd::Constant(1, 0.1 * id);
  t.reward = id;
  t.next_state = Eigen::VectorXd::Constant(2, id + 1);
  t.done = done;
  t.step = id;
  return t;
}

Mlp constant_net(int in, int out, double value) {
  Mlp net;
  Layer l;
  l.weight = Eigen::MatrixXd::Zero(out, in);
  l.bias = Eigen::VectorXd::Constant(out, value);
  net.layers.push_back(l);
  return net;
}

Batch single(double reward, bool done) {
  Transition t;
  t.state = Eigen::VectorXd::Zero(2);
  t.action = Eigen::VectorXd::Zero(1);
  t.next_state = Eigen::VectorXd::Ones(2);
  t.reward = reward;
  t.done = done;
  return make_batch(std::vector<Transition>{t});
}

double distance(const Mlp& a, const Mlp& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.layers.size(); ++k)
    s += (a.layers[k].weight - b.layers[k].weight).squaredNorm() + (a.layers[k].bias - b.layers[k].bias).squaredNorm();
  return std::sqrt(s);
}

}  // namespace

TEST(SelectAction, NoiseFreeIsActorOutput) {
  std::mt19937_64 rng(1);
  auto actor = make_mlp({3, 8, 1}, Activation::relu, Activation::tanh, rng);
  const Eigen::Vector3d x(0.1, 0.2, 0.3);
  EXPECT_EQ(select_action(actor, x, 0.0, -1, 1, rng), forward(actor, x));
}

TEST(SelectAction, ClampedToBounds) {
  std::mt19937_64 rng(2);
  const auto actor = constant_net(2, 1, 0.95);
  for (int i = 0; i < 1000; ++i) {
    const double a = select_action(actor, Eigen::Vector2d::Zero(), 1.0, -1.0, 1.0, rng)[0];
    EXPECT_LE(a, 1.0);
    EXPECT_GE(a, -1.0);
  }
}

TEST(SelectAction, NoiseStdMatchesTable) {
  std::mt19937_64 rng(3);
  const auto actor = constant_net(2, 1, 0.0);
  const int n = 10000;
  double s = 0, ss = 0;
  for (int i = 0; i < n; ++i) {
    const double a = select_action(actor, Eigen::Vector2d::Zero(), 0.1, -10.0, 10.0, rng)[0];
    s += a;
    ss += a * a;
  }
  const double mean = s / n;
  const double sd = std::sqrt((ss - n * mean * mean) / (n - 1));
  EXPECT_NEAR(sd, 0.1, 0.01);
}

TEST(TdTarget, TerminalDoesNotBootstrap) {
  const auto ta = constant_net(2, 1, 0.0);
  const auto tc = constant_net(3, 1, 100.0);
  EXPECT_DOUBLE_EQ(td_target(single(1.5, true), ta, tc, 0.99)[0], 1.5);
}

TEST(TdTarget, ZeroGammaIsReward) {
  const auto ta = constant_net(2, 1, 0.0);
  const auto tc = constant_net(3, 1, 100.0);
  EXPECT_DOUBLE_EQ(td_target(single(1.5, false), ta, tc, 0.0)[0], 1.5);
}

TEST(TdTarget, BootstrapValue) {
  const auto ta = constant_net(2, 1, 0.0);
  const auto tc = constant_net(3, 1, 2.0);
  EXPECT_NEAR(td_target(single(1.0, false), ta, tc, 0.99)[0], 2.98, 1e-12);
}

TEST(TdTarget, ShapedVariantAddsPotentialDifference) {
  const auto ta = constant_net(2, 1, 0.0);
  const auto tc = constant_net(3, 1, 2.0);
  BatchPotentials phi{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 2.0)};
  EXPECT_NEAR(td_target(single(0.0, false), ta, tc, 0.99, &phi)[0], 0.98 + 0.99 * 2.0, 1e-12);
}

TEST(TdTarget, EmptyBatchIsError) {
  EXPECT_THROW(make_batch(std::vector<Transition>{}), UsageError);
}

TEST(CriticUpdate, ZeroLossWhenAlreadyAtTargets) {
  auto critic = constant_net(3, 1, 0.7);
  AdamState opt(critic, 1e-3);
  const auto before = critic;
  const double loss = critic_update(critic, single(0.0, true), Eigen::VectorXd::Constant(1, 0.7), opt);
  EXPECT_EQ(loss, 0.0);
  EXPECT_LT(distance(before, critic), 1e-12);
}

TEST(CriticUpdate, UnitErrorGivesUnitLoss) {
  auto critic = constant_net(3, 1, 0.0);
  AdamState opt(critic, 1e-3);
  EXPECT_DOUBLE_EQ(critic_update(critic, single(0.0, true), Eigen::VectorXd::Constant(1, 1.0), opt), 1.0);
}

TEST(CriticUpdate, DuplicatedBatchHasSameLoss) {
  std::mt19937_64 rng(4);
  auto critic = make_mlp({3, 8, 1}, Activation::relu, Activation::identity, rng);
  auto c2 = critic;
  AdamState o1(critic, 1e-3), o2(c2, 1e-3);
  Transition t = make_transition(1);
  const auto one = make_batch(std::vector<Transition>{t});
  const auto many = make_batch(std::vector<Transition>{t, t, t, t});
  const double l1 = critic_update(critic, one, Eigen::VectorXd::Constant(1, 3.0), o1);
  const double l4 = critic_update(c2, many, Eigen::VectorXd::Constant(4, 3.0), o2);
  EXPECT_NEAR(l1, l4, 1e-12);
  EXPECT_LT(distance(critic, c2), 1e-12);
}

TEST(CriticUpdate, ZeroLearningRateIsNoOp) {
  std::mt19937_64 rng(5);
  auto critic = make_mlp({3, 8, 1}, Activation::relu, Activation::identity, rng);
  const auto before = critic;
  AdamState opt(critic, 0.0);
  critic_update(critic, make_batch(std::vector<Transition>{make_transition(1), make_transition(2)}),
                Eigen::Vector2d(5, -5), opt);
  EXPECT_EQ(distance(before, critic), 0.0);
}

TEST(CriticUpdate, NonFiniteTargetLeavesParameters) {
  std::mt19937_64 rng(6);
  auto critic = make_mlp({3, 4, 1}, Activation::relu, Activation::identity, rng);
  const auto before = critic;
  AdamState opt(critic, 1e-3);
  EXPECT_THROW(critic_update(critic, single(0, true), Eigen::VectorXd::Constant(1, NAN), opt), NumericError);
  EXPECT_EQ(distance(before, critic), 0.0);
}

TEST(ActorUpdate, ZeroCriticGivesZeroGradient) {
  std::mt19937_64 rng(7);
  auto actor = make_mlp({2, 8, 1}, Activation::relu, Activation::tanh, rng);
  const auto critic = constant_net(3, 1, 0.0);
  const auto g = actor_gradient(actor, critic, Eigen::MatrixXd::Random(2, 5));
  for (const auto& w : g.weight) EXPECT_TRUE(w.isZero(0.0));
}

TEST(ActorUpdate, CriticUnchanged) {
  std::mt19937_64 rng(8);
  auto actor = make_mlp({2, 8, 1}, Activation::relu, Activation::tanh, rng);
  auto critic = make_mlp({3, 8, 1}, Activation::relu, Activation::identity, rng);
  const auto before = critic;
  AdamState opt(actor, 1e-3);
  actor_update(actor, critic, make_batch(std::vector<Transition>{make_transition(1)}), opt);
  EXPECT_EQ(distance(before, critic), 0.0);
}

TEST(ActorUpdate, DriftsTowardCriticOptimum) {
  std::mt19937_64 rng(9);
  // Fit a small critic to Q(x, u) = -u^2.
  auto critic = make_mlp({2, 32, 32, 1}, Activation::relu, Activation::identity, rng);
  AdamState copt(critic, 3e-3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 3000; ++i) {
    Eigen::MatrixXd in(2, 64);
    Eigen::RowVectorXd y(64);
    for (int j = 0; j < 64; ++j) {
      in(0, j) = u(rng);
      in(1, j) = u(rng);
      y[j] = -in(1, j) * in(1, j);
    }
    ForwardCache c;
    const Eigen::RowVectorXd q = forward(critic, in, &c).row(0);
    adam_step(critic, backward(critic, c, 2.0 * (q - y) / 64.0), copt);
  }
  auto actor = make_mlp({1, 16, 1}, Activation::relu, Activation::tanh, rng);
  actor.layers.back().bias[0] = 1.5;  // start far from the optimum
  AdamState aopt(actor, 1e-2);
  Eigen::MatrixXd states(1, 32);
  for (int j = 0; j < 32; ++j) states(0, j) = u(rng);
  const double start = forward(actor, states).cwiseAbs().mean();
  for (int i = 0; i < 500; ++i) adam_step(actor, actor_gradient(actor, critic, states), aopt);
  const double end = forward(actor, states).cwiseAbs().mean();
  EXPECT_GT(start, 0.8);
  EXPECT_LT(end, 0.1);
}

TEST(ActorUpdate, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    auto actor = make_mlp({4, 16, 16, 1}, Activation::relu, Activation::tanh, rng);
    const auto critic = make_mlp({5, 16, 16, 1}, Activation::relu, Activation::identity, rng);
    const Eigen::MatrixXd states = Eigen::MatrixXd::Random(4, 8);
    const auto g = actor_gradient(actor, critic, states);
    auto objective = [&](std::vector<bool>& sig) {
      ForwardCache ac, cc;
      const Eigen::MatrixXd a = forward(actor, states, &ac);
      const double v = -forward(critic, stack(states, a), &cc).mean();
      sig = kink_signature(actor, ac);
      const auto s2 = kink_signature(critic, cc);
      sig.insert(sig.end(), s2.begin(), s2.end());
      return v;
    };
    const auto r = finite_difference_check(parameter_pointers(actor), flatten(g), objective);
    EXPECT_LT(r.max_relative_error, 1e-3);
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(ActorUpdate, PreactivationPenaltyGradient) {
  std::mt19937_64 rng(11);
  const double beta = 0.05;
  for (int trial = 0; trial < 10; ++trial) {
    auto actor = make_mlp({4, 16, 1}, Activation::relu, Activation::tanh, rng);
    const auto critic = make_mlp({5, 16, 1}, Activation::relu, Activation::identity, rng);
    const Eigen::MatrixXd states = Eigen::MatrixXd::Random(4, 8);
    const auto g = actor_gradient(actor, critic, states, nullptr, beta);
    auto objective = [&](std::vector<bool>& sig) {
      ForwardCache ac, cc;
      const Eigen::MatrixXd a = forward(actor, states, &ac);
      const double v = -forward(critic, stack(states, a), &cc).mean() + beta * ac.pre.back().squaredNorm() / 8.0;
      sig = kink_signature(actor, ac);
      const auto s2 = kink_signature(critic, cc);
      sig.insert(sig.end(), s2.begin(), s2.end());
      return v;
    };
    const auto r = finite_difference_check(parameter_pointers(actor), flatten(g), objective);
    EXPECT_LT(r.max_relative_error, 1e-3);
  }
}

TEST(ActorUpdate, PreactivationPenaltyPullsOutOfSaturation) {
  std::mt19937_64 rng(12);
  auto actor = make_mlp({2, 8, 1}, Activation::relu, Activation::tanh, rng);
  actor.layers.back().bias[0] = 30.0;  // tanh'(30) is below Adam's epsilon
  const auto critic = constant_net(3, 1, 0.0);
  const Eigen::MatrixXd states = Eigen::MatrixXd::Random(2, 16);
  AdamState plain(actor, 1e-2), penalised(actor, 1e-2);
  auto a = actor, b = actor;
  for (int i = 0; i < 200; ++i) {
    adam_step(a, actor_gradient(a, critic, states), plain);
    adam_step(b, actor_gradient(b, critic, states, nullptr, 1e-3), penalised);
  }
  EXPECT_EQ(a.layers.back().bias[0], 30.0);
  EXPECT_LT(b.layers.back().bias[0], 29.0);
}

TEST(Polyak, FullAndZeroTau) {
  std::mt19937_64 rng(11);
  const auto online = make_mlp({3, 4, 1}, Activation::relu, Activation::identity, rng);
  auto target = make_mlp({3, 4, 1}, Activation::relu, Activation::identity, rng);
  const auto before = target;
  polyak_update(target, online, 0.0);
  EXPECT_EQ(distance(before, target), 0.0);
  polyak_update(target, online, 1.0);
  EXPECT_EQ(distance(online, target), 0.0);
}

TEST(Polyak, TableTau) {
  auto target = constant_net(1, 1, 0.0);
  const auto online = constant_net(1, 1, 1.0);
  polyak_update(target, online, 0.005);
  EXPECT_DOUBLE_EQ(target.layers[0].bias[0], 0.005);
}

TEST(Polyak, GeometricShrinkage) {
  std::mt19937_64 rng(12);
  const auto online = make_mlp({3, 4, 1}, Activation::relu, Activation::identity, rng);
  auto target = make_mlp({3, 4, 1}, Activation::relu, Activation::identity, rng);
  const double d0 = distance(online, target);
  const double tau = 0.005;
  for (int k = 1; k <= 200; ++k) {
    polyak_update(target, online, tau);
    if (k % 50 == 0) {
      EXPECT_NEAR(distance(online, target), d0 * std::pow(1 - tau, k), 1e-12 * d0);
    }
  }
}

TEST(Polyak, ShapeMismatch) {
  std::mt19937_64 rng(13);
  auto target = make_mlp({3, 4, 1}, Activation::relu, Activation::identity, rng);
  EXPECT_THROW(polyak_update(target, make_mlp({3, 5, 1}, Activation::relu, Activation::identity, rng), 0.1),
               ShapeError);
}

TEST(Buffer, FifoEviction) {
  ReplayBuffer b(3);
  for (int i = 0; i < 4; ++i) b.push(make_transition(i));
  EXPECT_EQ(b.size(), 3u);
  std::vector<int> ids;
  for (std::size_t i = 0; i < b.size(); ++i) ids.push_back(b[b.chronological_slot(i)].step);
  EXPECT_EQ(ids, (std::vector<int>{1, 2, 3}));
}

TEST(Buffer, SampleReproducible) {
  ReplayBuffer b(100);
  for (int i = 0; i < 50; ++i) b.push(make_transition(i));
  std::mt19937_64 r1(5), r2(5);
  EXPECT_EQ(b.sample_indices(16, r1), b.sample_indices(16, r2));
}

TEST(Buffer, NoDuplicatesWithinBatch) {
  ReplayBuffer b(100);
  for (int i = 0; i < 20; ++i) b.push(make_transition(i));
  std::mt19937_64 rng(6);
  for (int k = 0; k < 200; ++k) {
    auto idx = b.sample_indices(20, rng);
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
  }
}

TEST(Buffer, UnderfilledIsUsageError) {
  ReplayBuffer b(10);
  b.push(make_transition(0));
  std::mt19937_64 rng(7);
  EXPECT_THROW(b.sample(2, rng), UsageError);
}

TEST(Buffer, ChiSquareUniformity) {
  ReplayBuffer b(10);
  for (int i = 0; i < 10; ++i) b.push(make_transition(i));
  std::mt19937_64 rng(8);
  // Single draws and within-batch marginals should both be uniform.
  for (std::size_t batch : {std::size_t{1}, std::size_t{4}}) {
    std::array<double, 10> counts{};
    const int draws = 100000;
    for (int k = 0; k < draws / static_cast<int>(batch); ++k)
      for (auto i : b.sample_indices(batch, rng)) counts[i] += 1;
    const double expected = static_cast<double>(draws / static_cast<int>(batch) * static_cast<int>(batch)) / 10.0;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    EXPECT_LT(chi2, 21.666) << "batch " << batch;  // chi-square 0.99 quantile, 9 dof
  }
}

TEST(Batch, DoneMask) {
  const auto b = make_batch(std::vector<Transition>{make_transition(0), make_transition(1, true)});
  EXPECT_EQ(b.not_done, Eigen::Vector2d(1, 0));
  EXPECT_EQ(b.states.cols(), 2);
}

// Two states, two actions, deterministic transitions; a linear critic on a
// one-hot (state, action) code emulates a table. Fitted Q iteration through
// td-style targets, critic_update and polyak_update must reach the exact Q*.
TEST(TabularOracle, MatchesValueIteration) {
  const double gamma = 0.9;
  const int next[2][2] = {{0, 1}, {1, 0}};
  const double reward[2][2] = {{0.0, 1.0}, {2.0, -1.0}};
  double q_star[2][2] = {};
  for (int it = 0; it < 2000; ++it) {
    double q_new[2][2];
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) {
        const int s2 = next[s][a];
        q_new[s][a] = reward[s][a] + gamma * std::max(q_star[s2][0], q_star[s2][1]);
      }
    std::copy(&q_new[0][0], &q_new[0][0] + 4, &q_star[0][0]);
  }

  auto code = [](int s, int a) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(4);
    v[2 * s + a] = 1.0;
    return v;
  };
  Mlp critic = constant_net(5, 1, 0.0);
  Mlp target = critic;
  AdamState opt(critic, 0.05);
  std::vector<Transition> all;
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) {
      Transition t;
      t.state = code(s, a);
      t.action = Eigen::VectorXd::Zero(1);
      t.reward = reward[s][a];
      t.next_state = Eigen::VectorXd::Zero(4);
      all.push_back(t);
    }
  const Batch batch = make_batch(all);
  auto q_of = [](const Mlp& net, int s, int a) {
    Eigen::VectorXd in(5);
    in << Eigen::VectorXd::Zero(4), 0.0;
    in[2 * s + a] = 1.0;
    return forward(net, in)(0, 0);
  };
  for (int it = 0; it < 20000; ++it) {
    Eigen::VectorXd y(4);
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) {
        const int s2 = next[s][a];
        y[2 * s + a] = reward[s][a] + gamma * std::max(q_of(target, s2, 0), q_of(target, s2, 1));
      }
    if (it == 15000) opt.lr = 0.005;
    critic_update(critic, batch, y, opt);
    polyak_update(target, critic, 0.05);
  }
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) EXPECT_NEAR(q_of(critic, s, a), q_star[s][a], 1e-2) << s << "," << a;
}

TEST(Agent, ShapesAndCheckpointRoundTrip) {
  std::mt19937_64 rng(14);
  AgentConfig cfg;
  auto agent = make_agent(16, 1, cfg, rng);
  EXPECT_EQ(agent.actor.input_dim(), 16);
  EXPECT_EQ(agent.critic.input_dim(), 17);
  EXPECT_TRUE(agent.actor.same_shape(agent.target_actor));
  ReplayBuffer b(1000);
  for (int i = 0; i < 300; ++i) {
    Transition t;
    t.state = Eigen::VectorXd::Random(16);
    t.action = Eigen::VectorXd::Random(1);
    t.next_state = Eigen::VectorXd::Random(16);
    t.reward = std::sin(i);
    t.done = i % 72 == 71;
    b.push(t);
  }
  for (int i = 0; i < 5; ++i) train_step(agent, make_batch(b.sample(cfg.batch_size, rng)), cfg);
  std::stringstream ss;
  write_agent(ss, agent);
  const auto back = read_agent(ss);
  EXPECT_EQ(distance(agent.actor, back.actor), 0.0);
  EXPECT_EQ(distance(agent.target_critic, back.target_critic), 0.0);
  EXPECT_EQ(back.critic_opt.step, 5);
}

TEST(AgentConfig, TableDefaultsAndValidation) {
  AgentConfig cfg;
  EXPECT_EQ(cfg.actor_lr, 3e-4);
  EXPECT_EQ(cfg.critic_lr, 3e-4);
  EXPECT_EQ(cfg.buffer_size, 50000u);
  EXPECT_EQ(cfg.batch_size, 256u);
  EXPECT_EQ(cfg.gamma, 0.99);
  EXPECT_EQ(cfg.tau, 0.005);
  EXPECT_EQ(cfg.noise_std, 0.1);
  EXPECT_EQ(cfg.learning_starts, 1000u);
  cfg.gamma = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

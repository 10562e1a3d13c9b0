#include "nicf/agent.hpp"
#include "reference_qnet.hpp"
#include "toy_mdp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

using namespace nicf;
using nicf::testing::random_state;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

class ScriptedPolicy final : public EpisodePolicy {
 public:
  explicit ScriptedPolicy(std::vector<int> order) : order_(std::move(order)) {}
  int select(const EnvState&) override { return order_.at(next_++); }

 private:
  std::vector<int> order_;
  std::size_t next_ = 0;
};

class RandomPolicy final : public EpisodePolicy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed) {}
  int select(const EnvState& s) override { return s.remaining[uniform_index(rng_, s.remaining.size())]; }

 private:
  Rng rng_;
};

RatingLog small_log(int users, int items, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RatingRecord> recs;
  for (int u = 0; u < users; ++u) {
    for (int i = 0; i < items; ++i) {
      if (uniform_index(rng, 3) == 0) continue;
      recs.push_back({u, i, 1 + static_cast<int>(uniform_index(rng, 5)), std::nullopt});
    }
    recs.push_back({u, items + u % 2, 5, std::nullopt});
  }
  return RatingLog::from_records(recs);
}

Transition random_transition(Rng& rng, int n_items, bool done) {
  Transition t;
  t.state = random_state(rng, n_items, 3, 5);
  std::vector<int> unused;
  for (int i = 0; i < n_items; ++i) {
    bool seen = false;
    for (auto [item, r] : t.state.steps()) seen = seen || item == i;
    if (!seen) unused.push_back(i);
  }
  t.action = unused.front();
  const int rating = 1 + static_cast<int>(uniform_index(rng, 5));
  t.reward = rating >= 4 ? 1.0 : 0.0;
  t.next_state = t.state;
  t.next_state.push(t.action, rating);
  t.valid_next.assign(unused.begin() + 1, unused.end());
  t.done = done || t.valid_next.empty();
  return t;
}

std::vector<const Transition*> pointers(const std::vector<Transition>& v) {
  std::vector<const Transition*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

}  // namespace

TEST(SelectAction, GreedyAndMasked) {
  Rng rng(1);
  const RowVector q = row({1, 3, 2});
  EXPECT_EQ(select_action(q, {0, 1, 2}, 0.0, rng), 1);
  EXPECT_EQ(select_action(q, {0, 2}, 0.0, rng), 2);
  EXPECT_EQ(select_action(row({2, 2, 2}), {2, 1}, 0.0, rng), 1);
  EXPECT_THROW(select_action(q, {}, 0.0, rng), std::invalid_argument);
}

TEST(SelectAction, UniformWhenFullyExploring) {
  Rng rng(8);
  const RowVector q = row({1, 3, 2});
  int zero = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) zero += select_action(q, {0, 2}, 1.0, rng) == 0;
  EXPECT_NEAR(static_cast<double>(zero) / n, 0.5, 0.02);
}

TEST(SelectAction, NeverLeavesValidSet) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100000; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 12));
    RowVector q(n);
    for (int i = 0; i < n; ++i) q(i) = u(rng);
    std::vector<int> valid;
    for (int i = 0; i < n; ++i) {
      if (uniform_index(rng, 2)) valid.push_back(i);
    }
    if (valid.empty()) valid.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n))));
    const int a = select_action(q, valid, u(rng), rng);
    ASSERT_TRUE(std::find(valid.begin(), valid.end(), a) != valid.end());
  }
}

TEST(Replay, FifoEviction) {
  ReplayBuffer buffer(5);
  for (int k = 0; k < 8; ++k) {
    Transition t;
    t.action = k;
    buffer.push(t);
    EXPECT_LE(buffer.size(), 5u);
  }
  ASSERT_EQ(buffer.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(buffer.at(i).action, static_cast<int>(i) + 3);
  Rng rng(2);
  for (const Transition* t : buffer.sample(100, rng)) EXPECT_GE(t->action, 3);
}

TEST(GammaSchedule, EndpointsAndValue) {
  EXPECT_EQ(gamma_schedule(100, 100, 0.2), 1.0);
  EXPECT_NEAR(gamma_schedule(0, 100, 0.2), 1.0 / (1.0 + std::pow(100.0, 0.2)), 1e-15);
  EXPECT_NEAR(gamma_schedule(0, 100, 0.2), 0.2847, 1e-4);
}

TEST(GammaSchedule, MonotoneInUnitInterval) {
  Rng rng(4);
  std::uniform_real_distribution<double> eta(0.01, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int total = 1 + static_cast<int>(uniform_index(rng, 500));
    const double h = eta(rng);
    double prev = 0;
    for (int e = 0; e <= total; ++e) {
      const double g = gamma_schedule(e, total, h);
      EXPECT_GT(g, 0.0);
      EXPECT_LE(g, 1.0);
      EXPECT_GE(g, prev);
      prev = g;
    }
    EXPECT_EQ(prev, 1.0);
  }
}

TEST(EpsilonSchedule, LinearDecay) {
  EXPECT_EQ(epsilon_schedule(0, 1000), 1.0);
  EXPECT_EQ(epsilon_schedule(1000, 1000), 0.0);
  EXPECT_EQ(epsilon_schedule(500, 1000), 0.5);
}

TEST(ComputeTarget, Cases) {
  QNetParams p = QNetParams::zeros({4, 2, 1, 5});
  p.policy_b2 << 0.5, 2.0, 7.0, -1.0;  // Q(s, .) = b2 when hidden is zero
  Transition t;
  t.state = SupportState(5);
  t.next_state = SupportState(5);
  t.next_state.push(3, 5);
  t.action = 3;
  t.reward = 1.0;
  t.valid_next = {0, 1};
  EXPECT_EQ(compute_target(t, p, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(compute_target(t, p, 0.5), 2.0);  // max over {0, 1} is 2, item 2 masked
  t.done = true;
  EXPECT_EQ(compute_target(t, p, 0.9), 1.0);
  t.done = false;
  t.valid_next.clear();
  EXPECT_THROW(compute_target(t, p, 0.5), std::invalid_argument);
}

TEST(TdUpdate, FixedPointHasZeroLoss) {
  Rng rng(6);
  const QNetParams p = QNetParams::init({6, 3, 1, 5}, 3);
  std::vector<Transition> batch;
  for (int k = 0; k < 4; ++k) {
    Transition t = random_transition(rng, 6, true);
    t.reward = q_values(p, t.state)(t.action);
    batch.push_back(t);
  }
  const TdResult r = td_loss_and_grad(pointers(batch), p, 0.9);
  EXPECT_NEAR(r.loss, 0.0, 1e-24);
  EXPECT_LT(r.grads.flatten().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TdUpdate, GammaZeroRegressionConverges) {
  Rng rng(10);
  QNetParams p = QNetParams::init({5, 4, 1, 5}, 17);
  Transition t = random_transition(rng, 5, false);
  t.reward = 1.0;
  Adam adam(p.shape, {0.01, 0.9, 0.999, 1e-8});
  const std::vector<const Transition*> batch{&t};
  double error = std::abs(q_values(p, t.state)(t.action) - 1.0);
  int steps = 0;
  while (error >= 1e-3 && steps < 2000) {
    td_update(batch, p, adam, 0.0);
    error = std::abs(q_values(p, t.state)(t.action) - 1.0);
    ++steps;
  }
  EXPECT_LT(error, 1e-3);
}

TEST(TdUpdate, LossGradientMatchesFiniteDifferences) {
  Rng rng(21);
  QNetParams p = QNetParams::init({6, 4, 2, 5}, 5);
  p.policy_b1.setConstant(0.3);
  std::vector<Transition> batch;
  for (int k = 0; k < 3; ++k) batch.push_back(random_transition(rng, 6, k == 0));
  const double gamma = 0.7;
  // Targets are constants: freeze them at the current parameters.
  std::vector<double> targets;
  for (const auto& t : batch) targets.push_back(compute_target(t, p, gamma));
  auto loss = [&](const Vector& theta) {
    QNetParams probe = p;
    probe.assign(theta);
    double total = 0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const double d = q_values(probe, batch[k].state)(batch[k].action) - targets[k];
      total += d * d;
    }
    return total / static_cast<double>(batch.size());
  };
  const TdResult r = td_loss_and_grad(pointers(batch), p, gamma);
  EXPECT_NEAR(r.loss, loss(p.flatten()), 1e-12);
  const Vector analytic = r.grads.flatten();
  const Vector numeric = finite_diff_grad(loss, p.flatten());
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic(i)) <= 1e-6) continue;
    EXPECT_LT(std::abs(analytic(i) - numeric(i)) / std::abs(analytic(i)), 1e-4) << i;
  }
}

TEST(TdUpdate, GammaZeroIsSupervisedRegression) {
  Rng rng(33);
  const QNetParams p = QNetParams::init({7, 4, 2, 5}, 9);
  const QNetParams other = QNetParams::init({7, 4, 2, 5}, 10);
  std::vector<Transition> batch;
  for (int k = 0; k < 6; ++k) batch.push_back(random_transition(rng, 7, false));
  // Supervised squared error onto the 0/1 rewards, computed directly.
  double mse = 0;
  QNetParams grads = p.zeros_like();
  for (const auto& t : batch) {
    const ForwardCache c = forward(p, t.state);
    const double d = c.q(t.action) - t.reward;
    mse += d * d / 6.0;
    accumulate_backward(p, c, t.action, 2.0 * d / 6.0, grads);
  }
  const TdResult online = td_loss_and_grad(pointers(batch), p, 0.0);
  const TdResult with_target = td_loss_and_grad(pointers(batch), p, 0.0, &other);
  EXPECT_NEAR(online.loss, mse, 1e-14);
  EXPECT_EQ(online.grads.flatten(), grads.flatten());
  EXPECT_EQ(with_target.grads.flatten(), grads.flatten());
}

TEST(Evaluate, OracleRandomAndScripted) {
  std::vector<RatingRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back({0, i, i < 6 ? 5 : 1, std::nullopt});
  for (int i = 0; i < 4; ++i) recs.push_back({1, i, 2, std::nullopt});
  recs.push_back({2, 20, 5, std::nullopt});
  recs.push_back({2, 21, 3, std::nullopt});
  recs.push_back({2, 22, 4, std::nullopt});
  recs.push_back({2, 23, 2, std::nullopt});
  const RatingLog log = RatingLog::from_records(recs);

  const PolicyFactory oracle = [&](int user) {
    struct Oracle final : EpisodePolicy {
      const RatingLog* log;
      int user;
      int select(const EnvState& s) override {
        for (int item : s.remaining) {
          if (is_satisfied(*log->rating(user, item))) return item;
        }
        return s.remaining.front();
      }
    };
    auto p = std::make_unique<Oracle>();
    p->log = &log;
    p->user = user;
    return p;
  };
  EXPECT_DOUBLE_EQ(evaluate(oracle, log, {0}, {5}).rows.back().precision, 5.0);

  const PolicyFactory random = [](int user) { return std::make_unique<RandomPolicy>(user); };
  EXPECT_EQ(evaluate(random, log, {1}, {4}).rows.back().precision, 0.0);

  const int u2 = *log.dense_user(2);
  const auto& items = log.ratings_of(u2);
  std::vector<int> order;
  for (const auto& [item, r] : items) order.push_back(item);  // rated 5, 3, 4, 2 in id order
  const PolicyFactory scripted = [&](int) { return std::make_unique<ScriptedPolicy>(order); };
  const EvaluationResult r = evaluate(scripted, log, {u2}, {4});
  ASSERT_EQ(r.traces[0].steps.size(), 4u);
  const std::vector<bool> bits{true, false, true, false};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(r.traces[0].steps[t].satisfied, bits[t]);
  EXPECT_DOUBLE_EQ(r.rows.back().precision, 2.0);
}

TEST(Evaluate, DeterministicAndParallelSafe) {
  const RatingLog log = small_log(30, 12, 3);
  const QNetParams p = QNetParams::init({log.n_items(), 4, 2, 5}, 1);
  std::vector<int> users;
  for (int u = 0; u < log.n_users(); ++u) users.push_back(u);
  const Vector before = p.flatten();
  const EvaluationResult a = evaluate(nicf_policy(p), log, users, {10, 0.5, nullptr, 1});
  const EvaluationResult b = evaluate(nicf_policy(p), log, users, {10, 0.5, nullptr, 4});
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].precision, b.rows[i].precision);
    EXPECT_EQ(a.rows[i].recall, b.rows[i].recall);
  }
  EXPECT_EQ(p.flatten(), before);
}

TEST(Train, SmokeAndDeterminism) {
  const RatingLog log = small_log(20, 10, 7);
  const UserSplit split = split_users(log, {0.7, 0.15, 0.15}, 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.horizon = 5;
  cfg.batch_size = 8;
  cfg.dim = 4;
  cfg.seed = 11;
  const TrainResult a = train(log, split, cfg);
  ASSERT_EQ(a.log.size(), 1u);
  EXPECT_EQ(a.log[0].gamma, 1.0);
  std::ostringstream la;
  write_training_log(la, a.log);
  cfg.epochs = 1;
  const TrainResult b = train(log, split, cfg);
  std::ostringstream lb;
  write_training_log(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(a.params.flatten(), b.params.flatten());
}

TEST(Train, RejectsBadConfig) {
  const RatingLog log = small_log(5, 5, 1);
  const UserSplit split = split_users(log, {0.6, 0.2, 0.2}, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train(log, split, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.eta = 0;
  EXPECT_THROW(train(log, split, cfg), std::invalid_argument);
  UserSplit empty = split;
  empty.train.clear();
  EXPECT_THROW(train(log, empty, TrainConfig{}), std::invalid_argument);
}

TEST(Train, ToyMdpMatchesValueIteration) {
  using namespace nicf::testing;
  const RatingLog log = toy_log();
  UserSplit split;
  split.train = {0};
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.horizon = 2;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-3;
  cfg.dim = 8;
  cfg.blocks = 2;
  cfg.episodes_per_epoch = 100;
  cfg.replay_capacity = 40000;  // keep every exploratory transition
  cfg.seed = 5;
  const TrainResult trained = train(log, split, cfg);
  const ToyOracle oracle = value_iteration(log, 0, 2, 1.0, RewardMode::Binary);
  EXPECT_LE(oracle.states, 13u);
  for (const auto& [history, actions] : oracle.q) {
    const SupportState s = history_state(log, 0, history);
    const RowVector q = q_values(trained.params, s);
    std::vector<int> valid;
    for (const auto& [a, v] : actions) valid.push_back(a);
    const int greedy = masked_argmax(q, valid);
    const auto best = optimal_actions(actions);
    EXPECT_TRUE(std::find(best.begin(), best.end(), greedy) != best.end())
        << "history size " << history.size();
    for (const auto& [a, v] : actions) {
      EXPECT_NEAR(q(a), v, 1e-2) << "history size " << history.size() << " action " << a;
    }
  }
}

#pragma once

#include "nicf/data.hpp"
#include "nicf/metrics.hpp"
#include "nicf/numerics.hpp"
#include "nicf/policy.hpp"
#include "nicf/qnet.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace nicf {

/// One replay element (s_t, i_t, r_t, s_{t+1}, done) plus the items still
/// recommendable in s_{t+1}.
struct Transition {
  SupportState state;
  int action = 0;
  double reward = 0;
  SupportState next_state;
  bool done = false;
  std::vector<int> valid_next;
};

/// Fixed-capacity FIFO of transitions with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000);

  void push(Transition t);
  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest element still held.
  const Transition& at(std::size_t i) const;
  /// Uniform draws with replacement.
  std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t head_ = 0;  // oldest slot once full
};

enum class RewardMode { Binary, Raw };

RewardMode parse_reward_mode(const std::string& name);
std::string to_string(RewardMode mode);

struct TrainConfig {
  int epochs = 20;
  double eta = 0.2;
  int horizon = 40;
  int batch_size = 128;
  double learning_rate = 1e-3;
  int dim = 16;
  int blocks = 2;
  std::uint64_t seed = 0;
  double epsilon_start = 1.0;
  double epsilon_end = 0.0;
  RewardMode reward_mode = RewardMode::Binary;
  int episodes_per_epoch = 0;  // 0: one episode per training user
  int replay_capacity = 10000;
  int updates_per_step = 1;
  int update_every = 1;           // env steps between update rounds
  int patience = 10;              // epochs without validation gain; 0 disables
  int target_sync_interval = 0;   // 0: bootstrap from the online network

  void validate() const;
};

/// With probability epsilon a uniform draw over valid, otherwise the masked argmax.
int select_action(const RowVector& q, const std::vector<int>& valid, double epsilon, Rng& rng);

/// 1 / (1 + (E - e)^eta).
double gamma_schedule(int epoch, int total_epochs, double eta);

/// Linear decay from 1 at step 0 to 0 at total_steps.
double epsilon_schedule(std::int64_t step, std::int64_t total_steps);

/// r + gamma * max over valid_next of Q(s', .), or r for terminal transitions.
double compute_target(const Transition& tr, const QNetParams& params, double gamma);

struct TdResult {
  double loss = 0;
  QNetParams grads;
};

/// Mean squared TD error over the batch and its gradient (targets held fixed).
/// Targets are computed with target_params when given.
TdResult td_loss_and_grad(const std::vector<const Transition*>& batch, const QNetParams& params,
                          double gamma, const QNetParams* target_params = nullptr);

/// One optimizer step on the batch; returns the pre-update loss.
double td_update(const std::vector<const Transition*>& batch, QNetParams& params, Adam& optimizer,
                 double gamma, const QNetParams* target_params = nullptr);

inline constexpr std::array<int, 4> kReportHorizons{5, 10, 20, 40};

struct EpochLog {
  int epoch = 0;
  double gamma = 0;
  double epsilon = 0;
  double mean_loss = 0;
  std::int64_t updates = 0;
  int episodes = 0;
  std::array<double, 4> valid_precision{};  // at kReportHorizons
};

struct TrainResult {
  QNetParams params;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&, const QNetParams&)>;

/// Curriculum Q-learning over episodes of training users. Returns the
/// parameters of the best validation epoch (the last epoch without
/// validation users).
TrainResult train(const RatingLog& log, const UserSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);

/// Greedy policy w.r.t. the Q-network.
PolicyFactory nicf_policy(const QNetParams& params);

struct MetricRow {
  int horizon = 0;
  double precision = 0;
  double recall = 0;
  double alpha_ndcg = 0;
};

struct EvaluationResult {
  std::vector<EpisodeTrace> traces;
  std::vector<MetricRow> rows;  // one per reported horizon
  std::vector<MetricRow> curve; // every t = 1..T
};

struct EvaluateOptions {
  int horizon = 40;
  double alpha = 0.5;
  const TopicCatalog* topics = nullptr;
  int workers = 1;
  bool full_curve = false;
};

/// Reported horizons: the standard grid clipped to T, plus T itself.
std::vector<int> report_horizons(int horizon);

/// Rolls one greedy episode per user and aggregates the metrics.
EvaluationResult evaluate(const PolicyFactory& policy, const RatingLog& log,
                          const std::vector<int>& users, const EvaluateOptions& options);

/// Single episode rollout.
EpisodeTrace run_episode(EpisodePolicy& policy, const RatingLog& log, int user, int horizon);

}  // namespace nicf

#include "nicf/agent.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <locale>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nicf {

// Replay -----------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  storage_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::push(Transition t) {
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
    return;
  }
  storage_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= storage_.size()) throw std::out_of_range("ReplayBuffer::at");
  return storage_[(head_ + i) % storage_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (storage_.empty()) throw std::logic_error("ReplayBuffer::sample on empty buffer");
  std::vector<const Transition*> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(&storage_[uniform_index(rng, storage_.size())]);
  return out;
}

// Config -------------------------------------------------------------------------

RewardMode parse_reward_mode(const std::string& name) {
  if (name == "binary") return RewardMode::Binary;
  if (name == "raw") return RewardMode::Raw;
  throw std::invalid_argument("unknown reward mode '" + name + "'");
}

std::string to_string(RewardMode mode) { return mode == RewardMode::Binary ? "binary" : "raw"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(eta > 0)) throw std::invalid_argument("train: eta must be > 0");
  if (horizon < 1) throw std::invalid_argument("train: horizon must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be > 0");
  if (dim < 1 || blocks < 1) throw std::invalid_argument("train: dim and blocks must be >= 1");
  if (replay_capacity < 1) throw std::invalid_argument("train: replay_capacity must be >= 1");
  if (updates_per_step < 0) throw std::invalid_argument("train: updates_per_step must be >= 0");
  if (update_every < 1) throw std::invalid_argument("train: update_every must be >= 1");
  if (episodes_per_epoch < 0) throw std::invalid_argument("train: episodes_per_epoch must be >= 0");
  if (epsilon_start < 0 || epsilon_start > 1 || epsilon_end < 0 || epsilon_end > 1) {
    throw std::invalid_argument("train: epsilon bounds must lie in [0, 1]");
  }
}

// Action selection and schedules ---------------------------------------------------

int select_action(const RowVector& q, const std::vector<int>& valid, double epsilon, Rng& rng) {
  if (valid.empty()) throw std::invalid_argument("select_action: empty valid set");
  if (epsilon < 0 || epsilon > 1) throw std::invalid_argument("select_action: epsilon outside [0, 1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (epsilon > 0 && coin(rng) < epsilon) return valid[uniform_index(rng, valid.size())];
  return masked_argmax(q, valid);
}

double gamma_schedule(int epoch, int total_epochs, double eta) {
  if (epoch < 0 || epoch > total_epochs) throw std::invalid_argument("gamma_schedule: epoch out of range");
  return 1.0 / (1.0 + std::pow(static_cast<double>(total_epochs - epoch), eta));
}

double epsilon_schedule(std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return 0.0;
  if (step < 0 || step > total_steps) throw std::invalid_argument("epsilon_schedule: step out of range");
  return 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
}

// TD learning ------------------------------------------------------------------------

double compute_target(const Transition& tr, const QNetParams& params, double gamma) {
  if (tr.done) return tr.reward;
  if (tr.valid_next.empty()) {
    throw std::invalid_argument("compute_target: non-terminal transition without valid actions");
  }
  if (gamma == 0.0) return tr.reward;
  const RowVector q = q_values(params, tr.next_state);
  double best = -std::numeric_limits<double>::infinity();
  for (int item : tr.valid_next) best = std::max(best, q(item));
  return tr.reward + gamma * best;
}

namespace {

// next_state is state plus the chosen action.
bool appends_action(const Transition& tr) {
  const auto& a = tr.state.steps();
  const auto& b = tr.next_state.steps();
  return b.size() == a.size() + 1 && b.back().first == tr.action && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

TdResult td_loss_and_grad(const std::vector<const Transition*>& batch, const QNetParams& params,
                          double gamma, const QNetParams* target_params) {
  if (batch.empty()) throw std::invalid_argument("td_update: empty batch");
  const QNetParams& bootstrap = target_params ? *target_params : params;
  TdResult result{0.0, params.zeros_like()};
  const double n = static_cast<double>(batch.size());
  for (const Transition* tr : batch) {
    const ForwardCache cache = forward(params, tr->state);
    double y = tr->reward;
    if (!target_params && !tr->done && gamma != 0.0 && appends_action(*tr)) {
      // Same network for both states: reuse the cache for the one new row.
      if (tr->valid_next.empty()) {
        throw std::invalid_argument("compute_target: non-terminal transition without valid actions");
      }
      const RowVector q = q_values_appended(params, cache, tr->action, tr->next_state.steps().back().second);
      double best = -std::numeric_limits<double>::infinity();
      for (int item : tr->valid_next) best = std::max(best, q(item));
      y += gamma * best;
    } else {
      y = compute_target(*tr, bootstrap, gamma);
    }
    const double diff = cache.q(tr->action) - y;
    result.loss += diff * diff / n;
    accumulate_backward(params, cache, tr->action, 2.0 * diff / n, result.grads);
  }
  if (!std::isfinite(result.loss)) {
    throw NumericError("td_update: non-finite loss; aborting training");
  }
  return result;
}

double td_update(const std::vector<const Transition*>& batch, QNetParams& params, Adam& optimizer,
                 double gamma, const QNetParams* target_params) {
  TdResult r = td_loss_and_grad(batch, params, gamma, target_params);
  optimizer.step(params, r.grads);
  return r.loss;
}

// Policies and evaluation -------------------------------------------------------------

namespace {

class GreedyQPolicy final : public EpisodePolicy {
 public:
  explicit GreedyQPolicy(std::shared_ptr<const QNetParams> params) : params_(std::move(params)) {}
  int select(const EnvState& state) override {
    return masked_argmax(q_values(*params_, state.history), state.remaining);
  }

 private:
  std::shared_ptr<const QNetParams> params_;
};

}  // namespace

PolicyFactory nicf_policy(const QNetParams& params) {
  auto shared = std::make_shared<const QNetParams>(params);
  return [shared](int) { return std::make_unique<GreedyQPolicy>(shared); };
}

EpisodeTrace run_episode(EpisodePolicy& policy, const RatingLog& log, int user, int horizon) {
  EpisodeTrace trace{user, {}};
  EnvState state = env_reset(log, user, horizon);
  while (!state.done) {
    const int item = policy.select(state);
    StepOutcome out = env_step(log, std::move(state), item);
    policy.observe(item, out.rating);
    trace.steps.push_back({item, out.rating, out.satisfied});
    state = std::move(out.next);
  }
  return trace;
}

std::vector<int> report_horizons(int horizon) {
  std::vector<int> out;
  for (int t : kReportHorizons) {
    if (t <= horizon) out.push_back(t);
  }
  if (out.empty() || out.back() != horizon) out.push_back(horizon);
  return out;
}

EvaluationResult evaluate(const PolicyFactory& policy, const RatingLog& log,
                          const std::vector<int>& users, const EvaluateOptions& options) {
  if (users.empty()) throw std::invalid_argument("evaluate: no users");
  EvaluationResult result;
  result.traces.resize(users.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < users.size(); i = next++) {
      auto p = policy(users[i]);
      result.traces[i] = run_episode(*p, log, users[i], options.horizon);
    }
  };
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(users.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::map<int, int> satisfied;
  for (int u : users) satisfied[u] = satisfied_count(log, u);

  auto row = [&](int t) {
    MetricRow r;
    r.horizon = t;
    r.precision = cumulative_precision(result.traces, t);
    r.recall = cumulative_recall(result.traces, t, satisfied);
    r.alpha_ndcg = options.topics ? mean_alpha_ndcg(result.traces, *options.topics, options.alpha, t) : 0.0;
    return r;
  };
  for (int t : report_horizons(options.horizon)) result.rows.push_back(row(t));
  if (options.full_curve) {
    for (int t = 1; t <= options.horizon; ++t) result.curve.push_back(row(t));
  }
  return result;
}

// Training ---------------------------------------------------------------------------

namespace {

std::array<double, 4> validation_precision(const QNetParams& params, const RatingLog& log,
                                           const std::vector<int>& users, int horizon) {
  std::array<double, 4> out{};
  if (users.empty()) return out;
  std::vector<EpisodeTrace> traces;
  traces.reserve(users.size());
  const auto shared = std::make_shared<const QNetParams>(params);
  for (int u : users) {
    GreedyQPolicy policy(shared);
    traces.push_back(run_episode(policy, log, u, horizon));
  }
  for (std::size_t k = 0; k < kReportHorizons.size(); ++k) {
    out[k] = cumulative_precision(traces, std::min(kReportHorizons[k], horizon));
  }
  return out;
}

// Precision at min(40, T).
double headline(const std::array<double, 4>& precision) { return precision.back(); }

}  // namespace

TrainResult train(const RatingLog& log, const UserSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (split.train.empty()) throw std::invalid_argument("train: no training users");

  Rng rng(cfg.seed);
  const QNetShape shape{log.n_items(), cfg.dim, cfg.blocks, log.max_rating()};
  QNetParams params = QNetParams::init(shape, rng());
  Adam optimizer(shape, {cfg.learning_rate, 0.9, 0.999, 1e-8});
  ReplayBuffer replay(static_cast<std::size_t>(cfg.replay_capacity));
  std::optional<QNetParams> target;
  if (cfg.target_sync_interval > 0) target = params;

  const int episodes = cfg.episodes_per_epoch > 0 ? cfg.episodes_per_epoch
                                                  : static_cast<int>(split.train.size());
  const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * episodes * cfg.horizon;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;

  TrainResult result;
  result.params = params;
  double best_score = -std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  std::vector<int> order = split.train;
  std::size_t cursor = order.size();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double gamma = gamma_schedule(epoch, cfg.epochs, cfg.eta);
    double loss_total = 0;
    std::int64_t epoch_updates = 0;
    double epsilon = 0;

    for (int ep = 0; ep < episodes; ++ep) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      EnvState state = env_reset(log, order[cursor++], cfg.horizon);
      while (!state.done) {
        const double decay = epsilon_schedule(std::min(env_steps, total_steps), total_steps);
        epsilon = cfg.epsilon_end + (cfg.epsilon_start - cfg.epsilon_end) * decay;
        const RowVector q = q_values(params, state.history);
        const int action = select_action(q, state.remaining, epsilon, rng);
        SupportState before = state.history;
        StepOutcome out = env_step(log, std::move(state), action);
        const double reward = cfg.reward_mode == RewardMode::Binary ? (out.satisfied ? 1.0 : 0.0)
                                                                    : static_cast<double>(out.rating);
        replay.push(Transition{std::move(before), action, reward, out.next.history, out.done,
                               out.next.remaining});
        state = std::move(out.next);
        ++env_steps;

        if (replay.size() >= static_cast<std::size_t>(cfg.batch_size) && env_steps % cfg.update_every == 0) {
          for (int k = 0; k < cfg.updates_per_step; ++k) {
            const auto batch = replay.sample(static_cast<std::size_t>(cfg.batch_size), rng);
            loss_total += td_update(batch, params, optimizer, gamma, target ? &*target : nullptr);
            ++epoch_updates;
            ++updates;
            if (target && updates % cfg.target_sync_interval == 0) target = params;
          }
        }
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.gamma = gamma;
    entry.epsilon = epsilon;
    entry.mean_loss = epoch_updates ? loss_total / static_cast<double>(epoch_updates) : 0.0;
    entry.updates = epoch_updates;
    entry.episodes = episodes;
    entry.valid_precision = validation_precision(params, log, split.valid, cfg.horizon);
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry, params);

    if (split.valid.empty()) {
      result.params = params;
      result.best_epoch = epoch;
      continue;
    }
    const double score = headline(entry.valid_precision);
    if (score > best_score) {
      best_score = score;
      result.params = params;
      result.best_epoch = epoch;
      stale_epochs = 0;
    } else if (cfg.patience > 0 && ++stale_epochs >= cfg.patience) {
      break;
    }
  }
  return result;
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,gamma,epsilon,mean_loss,updates,episodes,valid_precision@5,valid_precision@10,"
         "valid_precision@20,valid_precision@40\n";
  std::ostringstream line;
  line.imbue(std::locale::classic());
  for (const auto& e : log) {
    line.str("");
    line << std::setprecision(6) << e.epoch << ',' << e.gamma << ',' << e.epsilon << ','
         << e.mean_loss << ',' << e.updates << ',' << e.episodes;
    for (double p : e.valid_precision) line << ',' << p;
    out << line.str() << '\n';
  }
}

}  // namespace nicf

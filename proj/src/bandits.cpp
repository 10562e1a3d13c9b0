#include "nicf/bandits.hpp"

#include "nicf/qnet.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace nicf {

namespace {

struct Observations {
  // ratings grouped by row (user) and by item, indices into the fitted user list
  std::vector<std::vector<std::pair<int, double>>> by_user;
  std::vector<std::vector<std::pair<int, double>>> by_item;
};

Observations collect(const RatingLog& log, const std::vector<int>& users) {
  Observations obs;
  obs.by_user.resize(users.size());
  obs.by_item.resize(static_cast<std::size_t>(log.n_items()));
  for (std::size_t k = 0; k < users.size(); ++k) {
    for (const auto& [item, r] : log.ratings_of(users[k])) {
      obs.by_user[k].emplace_back(item, r);
      obs.by_item[static_cast<std::size_t>(item)].emplace_back(static_cast<int>(k), r);
    }
  }
  return obs;
}

// Ridge solve for one row: (sum x x^T / s2 + I / p2)^-1 sum x r / s2.
template <typename Factors>
Vector ridge(const Factors& other, const std::vector<std::pair<int, double>>& rows, double noise_var,
             double prior_var, Matrix* precision_out = nullptr) {
  const int d = static_cast<int>(other.cols());
  Matrix a = Matrix::Identity(d, d) / prior_var;
  Vector b = Vector::Zero(d);
  for (const auto& [j, r] : rows) {
    const Vector x = other.row(j).transpose();
    a.noalias() += x * x.transpose() / noise_var;
    b.noalias() += x * (r / noise_var);
  }
  if (precision_out) *precision_out = a;
  return a.ldlt().solve(b);
}

double objective(const Matrix& users, const Matrix& items, const Observations& obs, double noise_var,
                 double prior_var) {
  double fit = 0;
  for (std::size_t k = 0; k < obs.by_user.size(); ++k) {
    for (const auto& [item, r] : obs.by_user[k]) {
      const double e = r - users.row(static_cast<Eigen::Index>(k)).dot(items.row(item));
      fit += e * e;
    }
  }
  return 0.5 * fit / noise_var + 0.5 * (users.squaredNorm() + items.squaredNorm()) / prior_var;
}

std::string format_real(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

class RandomEpisode final : public EpisodePolicy {
 public:
  explicit RandomEpisode(std::uint64_t seed) : rng_(seed) {}
  int select(const EnvState& s) override {
    if (s.remaining.empty()) throw std::invalid_argument("random policy: no valid items");
    return s.remaining[uniform_index(rng_, s.remaining.size())];
  }

 private:
  Rng rng_;
};

class PopEpisode final : public EpisodePolicy {
 public:
  explicit PopEpisode(std::shared_ptr<const Vector> scores) : scores_(std::move(scores)) {}
  int select(const EnvState& s) override {
    if (s.remaining.empty()) throw std::invalid_argument("pop policy: no valid items");
    return masked_argmax(*scores_, s.remaining);
  }

 private:
  std::shared_ptr<const Vector> scores_;
};

enum class Rule { Greedy, EpsGreedy, Thompson, Ucb };

class PosteriorEpisode final : public EpisodePolicy {
 public:
  PosteriorEpisode(std::shared_ptr<const PmfModel> model, Rule rule, double param, std::uint64_t seed)
      : model_(std::move(model)),
        post_(PmfPosterior::prior(model_->dim(), model_->prior_var)),
        rule_(rule),
        param_(param),
        rng_(seed) {}

  int select(const EnvState& s) override {
    switch (rule_) {
      case Rule::Greedy: return greedy_select(post_, *model_, s.remaining);
      case Rule::EpsGreedy: return eps_greedy_select(post_, *model_, s.remaining, param_, rng_);
      case Rule::Thompson: return thompson_select(post_, *model_, s.remaining, rng_);
      case Rule::Ucb: return glm_ucb_select(post_, *model_, s.remaining, param_, s.step);
    }
    throw std::logic_error("unknown selection rule");
  }

  void observe(int item, int rating) override {
    post_ = posterior_update(post_, model_->mean(item).transpose(), rating, model_->noise_var);
  }

 private:
  std::shared_ptr<const PmfModel> model_;
  PmfPosterior post_;
  Rule rule_;
  double param_;
  Rng rng_;
};

PolicyFactory posterior_factory(const PmfModel& model, Rule rule, double param, std::uint64_t seed) {
  auto shared = std::make_shared<const PmfModel>(model);
  return [shared, rule, param, seed](int user) -> std::unique_ptr<EpisodePolicy> {
    return std::make_unique<PosteriorEpisode>(shared, rule, param, episode_seed(seed, user));
  };
}

void require_valid(const std::vector<int>& valid, const char* who) {
  if (valid.empty()) throw std::invalid_argument(std::string(who) + ": no valid items");
}

}  // namespace

Matrix PmfModel::cov(int item) const {
  return item_cov_diag.row(item).asDiagonal();
}

PmfPosterior PmfPosterior::prior(int dim, double prior_var) {
  if (dim < 1) throw std::invalid_argument("PmfPosterior: dim must be >= 1");
  if (!(prior_var > 0)) throw std::invalid_argument("PmfPosterior: prior variance must be > 0");
  return {Vector::Zero(dim), Matrix::Identity(dim, dim) * prior_var};
}

PmfModel init_pmf(int n_items, const PmfOptions& options) {
  if (options.dim < 1) throw std::invalid_argument("fit_pmf: dim must be >= 1");
  if (!(options.noise_var > 0) || !(options.prior_var > 0))
    throw std::invalid_argument("fit_pmf: variances must be > 0");
  if (options.iters < 0) throw std::invalid_argument("fit_pmf: iters must be >= 0");
  Rng rng(options.seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  PmfModel model;
  model.item_means.resize(n_items, options.dim);
  for (Eigen::Index i = 0; i < model.item_means.size(); ++i) model.item_means.data()[i] = normal(rng);
  model.item_cov_diag = Matrix::Constant(n_items, options.dim, options.prior_var);
  model.noise_var = options.noise_var;
  model.prior_var = options.prior_var;
  return model;
}

PmfModel fit_pmf(const RatingLog& log, const std::vector<int>& users, const PmfOptions& options,
                 std::vector<double>* losses) {
  if (users.empty()) throw std::invalid_argument("fit_pmf: no training users");
  PmfModel model = init_pmf(log.n_items(), options);
  if (options.iters == 0) return model;

  const Observations obs = collect(log, users);
  const double s2 = options.noise_var;
  const double p2 = options.prior_var;
  Matrix user_factors(static_cast<Eigen::Index>(users.size()), options.dim);
  std::vector<Matrix> precisions(obs.by_item.size());
  for (int it = 0; it < options.iters; ++it) {
    for (std::size_t k = 0; k < obs.by_user.size(); ++k) {
      user_factors.row(static_cast<Eigen::Index>(k)) = ridge(model.item_means, obs.by_user[k], s2, p2).transpose();
    }
    if (losses) losses->push_back(objective(user_factors, model.item_means, obs, s2, p2));
    for (std::size_t i = 0; i < obs.by_item.size(); ++i) {
      model.item_means.row(static_cast<Eigen::Index>(i)) =
          ridge(user_factors, obs.by_item[i], s2, p2, &precisions[i]).transpose();
    }
    if (losses) losses->push_back(objective(user_factors, model.item_means, obs, s2, p2));
  }
  for (std::size_t i = 0; i < precisions.size(); ++i) {
    const Matrix cov = precisions[i].ldlt().solve(Matrix::Identity(options.dim, options.dim));
    model.item_cov_diag.row(static_cast<Eigen::Index>(i)) = cov.diagonal().transpose();
  }
  return model;
}

PmfPosterior posterior_update(const PmfPosterior& post, const Vector& nu, double rating, double noise_var) {
  const Eigen::Index d = post.mean.size();
  if (nu.size() != d || post.cov.rows() != d || post.cov.cols() != d)
    throw std::invalid_argument("posterior_update: dimension mismatch");
  if (!(noise_var > 0)) throw std::invalid_argument("posterior_update: noise variance must be > 0");
  cholesky(post.cov);  // rejects singular or indefinite beliefs

  // Sherman-Morrison form of (Sigma^-1 + nu nu^T / s2)^-1.
  const Vector sn = post.cov * nu;
  const double denom = noise_var + nu.dot(sn);
  PmfPosterior next;
  next.cov = post.cov - sn * sn.transpose() / denom;
  next.cov = (0.5 * (next.cov + next.cov.transpose())).eval();
  next.mean = post.mean + sn * ((rating - nu.dot(post.mean)) / denom);
  return next;
}

int greedy_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid) {
  require_valid(valid, "greedy_select");
  const Vector scores = model.item_means * post.mean;
  return masked_argmax(scores, valid);
}

int thompson_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid, Rng& rng) {
  require_valid(valid, "thompson_select");
  const Vector user = sample_gaussian(post.mean, post.cov, rng);
  std::normal_distribution<double> normal;
  Vector scores = Vector::Zero(model.n_items());
  for (int item : valid) {
    double s = 0;
    for (int k = 0; k < model.dim(); ++k) {
      const double q = model.item_means(item, k) + std::sqrt(model.item_cov_diag(item, k)) * normal(rng);
      s += user(k) * q;
    }
    scores(item) = s;
  }
  return masked_argmax(scores, valid);
}

int glm_ucb_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid,
                   double c, int t) {
  require_valid(valid, "glm_ucb_select");
  if (t < 1) throw std::invalid_argument("glm_ucb_select: t must be >= 1");
  if (c < 0) throw std::invalid_argument("glm_ucb_select: c must be >= 0");
  const double scale = c * std::sqrt(std::log(static_cast<double>(t)));
  Vector scores = Vector::Zero(model.n_items());
  for (int item : valid) {
    const Vector nu = model.item_means.row(item).transpose();
    double s = sigmoid(post.mean.dot(nu));
    if (scale > 0) s += scale * std::sqrt(std::max(0.0, nu.dot(post.cov * nu)));
    scores(item) = s;
  }
  return masked_argmax(scores, valid);
}

int eps_greedy_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid,
                      double epsilon, Rng& rng) {
  require_valid(valid, "eps_greedy_select");
  if (epsilon > 0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon) {
    return valid[uniform_index(rng, valid.size())];
  }
  return greedy_select(post, model, valid);
}

PopTable PopTable::from_log(const RatingLog& log, const std::vector<int>& users) {
  PopTable table;
  table.counts.assign(static_cast<std::size_t>(log.n_items()), 0);
  for (int u : users) {
    for (const auto& [item, r] : log.ratings_of(u)) ++table.counts[static_cast<std::size_t>(item)];
  }
  return table;
}

std::vector<int> PopTable::ranking() const {
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)]; });
  return order;
}

std::uint64_t episode_seed(std::uint64_t seed, int user) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(user)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

PolicyFactory random_policy(std::uint64_t seed) {
  return [seed](int user) -> std::unique_ptr<EpisodePolicy> {
    return std::make_unique<RandomEpisode>(episode_seed(seed, user));
  };
}

PolicyFactory pop_policy(PopTable table) {
  auto scores = std::make_shared<Vector>(static_cast<Eigen::Index>(table.counts.size()));
  for (std::size_t i = 0; i < table.counts.size(); ++i) (*scores)(static_cast<Eigen::Index>(i)) = static_cast<double>(table.counts[i]);
  std::shared_ptr<const Vector> frozen = std::move(scores);
  return [frozen](int) -> std::unique_ptr<EpisodePolicy> { return std::make_unique<PopEpisode>(frozen); };
}

PolicyFactory mf_greedy_policy(const PmfModel& model) {
  return posterior_factory(model, Rule::Greedy, 0.0, 0);
}

PolicyFactory pmf_eps_greedy_policy(const PmfModel& model, double epsilon, std::uint64_t seed) {
  if (epsilon < 0 || epsilon > 1) throw std::invalid_argument("pmf_eps_greedy_policy: epsilon outside [0, 1]");
  return posterior_factory(model, Rule::EpsGreedy, epsilon, seed);
}

PolicyFactory thompson_policy(const PmfModel& model, std::uint64_t seed) {
  return posterior_factory(model, Rule::Thompson, 0.0, seed);
}

PolicyFactory glm_ucb_policy(const PmfModel& model, double c) {
  if (c < 0) throw std::invalid_argument("glm_ucb_policy: c must be >= 0");
  return posterior_factory(model, Rule::Ucb, c, 0);
}

void save_pmf(std::ostream& out, const PmfModel& model) {
  write_tensors(out, "pmf",
                {{"n_items", std::to_string(model.n_items())},
                 {"dim", std::to_string(model.dim())},
                 {"noise_var", format_real(model.noise_var)},
                 {"prior_var", format_real(model.prior_var)}},
                {{"item_means", model.item_means}, {"item_cov_diag", model.item_cov_diag}});
}

void save_pmf(const std::string& path, const PmfModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  save_pmf(out, model);
}

PmfModel load_pmf(std::istream& in) {
  const TensorFile file = read_tensors(in);
  if (file.kind != "pmf") throw std::runtime_error("checkpoint: expected kind pmf, got " + file.kind);
  PmfModel model;
  const int n = std::stoi(file.meta_value("n_items"));
  const int d = std::stoi(file.meta_value("dim"));
  model.noise_var = std::stod(file.meta_value("noise_var"));
  model.prior_var = std::stod(file.meta_value("prior_var"));
  model.item_means = file.tensor("item_means");
  model.item_cov_diag = file.tensor("item_cov_diag");
  if (model.item_means.rows() != n || model.item_means.cols() != d || model.item_cov_diag.rows() != n ||
      model.item_cov_diag.cols() != d)
    throw std::runtime_error("checkpoint: pmf tensor shape mismatch");
  if (file.tensors.size() != 2) throw std::runtime_error("checkpoint: unexpected extra tensors");
  if (!(model.noise_var > 0) || !(model.prior_var > 0) || (model.item_cov_diag.array() <= 0).any())
    throw std::runtime_error("checkpoint: pmf variances must be positive");
  return model;
}

PmfModel load_pmf(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return load_pmf(in);
}

}  // namespace nicf

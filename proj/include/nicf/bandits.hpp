#pragma once

#include "nicf/data.hpp"
#include "nicf/numerics.hpp"
#include "nicf/policy.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace nicf {

/// Item factors of a probabilistic MF model with a diagonal covariance per item.
struct PmfModel {
  Matrix item_means;     // |I| x d
  Matrix item_cov_diag;  // |I| x d, diagonal of each item's covariance
  double noise_var = 0.25;
  double prior_var = 1.0;

  int dim() const { return static_cast<int>(item_means.cols()); }
  int n_items() const { return static_cast<int>(item_means.rows()); }
  RowVector mean(int item) const { return item_means.row(item); }
  Matrix cov(int item) const;
};

/// Gaussian belief over one user's latent vector.
struct PmfPosterior {
  Vector mean;
  Matrix cov;

  static PmfPosterior prior(int dim, double prior_var);
};

struct PmfOptions {
  int dim = 10;
  double noise_var = 0.25;
  double prior_var = 1.0;
  int iters = 20;
  std::uint64_t seed = 0;
};

/// Seeded starting point of the alternating fit: N(0, 0.1^2) item means,
/// prior-variance item covariances.
PmfModel init_pmf(int n_items, const PmfOptions& options);

/// MAP fit by alternating ridge regressions over the ratings of `users`.
/// The negative log posterior after each half-step is appended to `losses`.
PmfModel fit_pmf(const RatingLog& log, const std::vector<int>& users, const PmfOptions& options,
                 std::vector<double>* losses = nullptr);

/// Conjugate update of the user belief after observing `rating` on an item with factor nu.
PmfPosterior posterior_update(const PmfPosterior& post, const Vector& nu, double rating, double noise_var);

int thompson_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid, Rng& rng);

/// argmax of sigmoid(mu^T nu) + c sqrt(log t) sqrt(nu^T Sigma nu).
int glm_ucb_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid,
                   double c, int t);

int eps_greedy_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid,
                      double epsilon, Rng& rng);

/// argmax of mu^T nu over valid, ties to the lowest id.
int greedy_select(const PmfPosterior& post, const PmfModel& model, const std::vector<int>& valid);

/// Training-log rating counts per item.
struct PopTable {
  std::vector<std::int64_t> counts;

  static PopTable from_log(const RatingLog& log, const std::vector<int>& users);
  /// Items by decreasing count, ties to the lowest id.
  std::vector<int> ranking() const;
};

PolicyFactory random_policy(std::uint64_t seed);
PolicyFactory pop_policy(PopTable table);
PolicyFactory mf_greedy_policy(const PmfModel& model);
PolicyFactory pmf_eps_greedy_policy(const PmfModel& model, double epsilon, std::uint64_t seed);
PolicyFactory thompson_policy(const PmfModel& model, std::uint64_t seed);
PolicyFactory glm_ucb_policy(const PmfModel& model, double c);

/// Per-user RNG seed so episodes do not depend on scheduling order.
std::uint64_t episode_seed(std::uint64_t seed, int user);

void save_pmf(std::ostream& out, const PmfModel& model);
void save_pmf(const std::string& path, const PmfModel& model);
PmfModel load_pmf(std::istream& in);
PmfModel load_pmf(const std::string& path);

}  // namespace nicf

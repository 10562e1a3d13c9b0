#pragma once

// Synthetic linear bandit: fixed arm factors, a user vector drawn from the
// prior, sigmoid-squashed expected rewards with Gaussian noise. Arms may be
// pulled repeatedly.

#include "nicf/bandits.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace nicf::testing {

struct LinearBanditSpec {
  int dim = 5;
  int arms = 50;
  int steps = 200;
  double noise_var = 0.25;
  double prior_var = 1.0;
};

enum class BanditRule { Thompson, EpsGreedy, GlmUcb };

/// Cumulative realized reward of one run.
inline double run_linear_bandit(const LinearBanditSpec& spec, BanditRule rule, double param,
                                std::uint64_t seed) {
  Rng world(seed);
  std::normal_distribution<double> normal;
  PmfModel model;
  model.item_means.resize(spec.arms, spec.dim);
  for (Eigen::Index i = 0; i < model.item_means.size(); ++i) model.item_means.data()[i] = normal(world);
  model.item_cov_diag = Matrix::Constant(spec.arms, spec.dim, 1e-6);
  model.noise_var = spec.noise_var;
  model.prior_var = spec.prior_var;
  Vector theta(spec.dim);
  for (int k = 0; k < spec.dim; ++k) theta(k) = std::sqrt(spec.prior_var) * normal(world);
  const double noise_sd = std::sqrt(spec.noise_var);

  std::vector<int> valid(static_cast<std::size_t>(spec.arms));
  for (int i = 0; i < spec.arms; ++i) valid[static_cast<std::size_t>(i)] = i;
  Rng agent(seed ^ 0x5bd1e995u);
  PmfPosterior post = PmfPosterior::prior(spec.dim, spec.prior_var);
  double total = 0;
  for (int t = 1; t <= spec.steps; ++t) {
    int arm = 0;
    switch (rule) {
      case BanditRule::Thompson: arm = thompson_select(post, model, valid, agent); break;
      case BanditRule::EpsGreedy: arm = eps_greedy_select(post, model, valid, param, agent); break;
      case BanditRule::GlmUcb: arm = glm_ucb_select(post, model, valid, param, t); break;
    }
    const Vector nu = model.item_means.row(arm).transpose();
    const double reward = sigmoid(theta.dot(nu)) + noise_sd * normal(world);
    total += reward;
    post = posterior_update(post, nu, reward, spec.noise_var);
  }
  return total;
}

struct PairedComparison {
  double mean_a = 0;
  double mean_b = 0;
  double mean_diff = 0;
  double se_diff = 0;  // standard error of the paired difference
};

inline PairedComparison compare_rules(const LinearBanditSpec& spec, BanditRule a, double pa, BanditRule b,
                                      double pb, std::uint64_t first_seed, int seeds) {
  std::vector<double> diffs;
  PairedComparison out;
  for (int s = 0; s < seeds; ++s) {
    const double ra = run_linear_bandit(spec, a, pa, first_seed + static_cast<std::uint64_t>(s));
    const double rb = run_linear_bandit(spec, b, pb, first_seed + static_cast<std::uint64_t>(s));
    out.mean_a += ra / seeds;
    out.mean_b += rb / seeds;
    diffs.push_back(ra - rb);
  }
  out.mean_diff = out.mean_a - out.mean_b;
  double ss = 0;
  for (double d : diffs) ss += (d - out.mean_diff) * (d - out.mean_diff);
  out.se_diff = std::sqrt(ss / (seeds - 1)) / std::sqrt(static_cast<double>(seeds));
  return out;
}

/// Best GLM-UCB constant on the tuning seeds.
inline double tune_ucb_c(const LinearBanditSpec& spec, std::uint64_t first_seed, int seeds) {
  double best_c = 0;
  double best = -1e300;
  for (double c : {0.01, 0.05, 0.1, 0.5, 1.0}) {
    double total = 0;
    for (int s = 0; s < seeds; ++s) {
      total += run_linear_bandit(spec, BanditRule::GlmUcb, c, first_seed + static_cast<std::uint64_t>(s));
    }
    if (total > best) {
      best = total;
      best_c = c;
    }
  }
  return best_c;
}

}  // namespace nicf::testing

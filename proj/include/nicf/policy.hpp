#pragma once

#include "nicf/data.hpp"

#include <functional>
#include <memory>

namespace nicf {

/// A recommendation policy for one episode. Instances are created per user so
/// that episodes can run concurrently without sharing mutable state.
class EpisodePolicy {
 public:
  virtual ~EpisodePolicy() = default;
  /// Must return an element of state.remaining.
  virtual int select(const EnvState& state) = 0;
  virtual void observe(int /*item*/, int /*rating*/) {}
};

using PolicyFactory = std::function<std::unique_ptr<EpisodePolicy>(int user)>;

/// Argmax of scores over `valid`; ties go to the lowest item id.
template <typename Scores>
int masked_argmax(const Scores& scores, const std::vector<int>& valid) {
  int best = -1;
  double best_score = 0;
  for (int item : valid) {
    const double s = scores(item);
    if (best < 0 || s > best_score || (s == best_score && item < best)) {
      best = item;
      best_score = s;
    }
  }
  return best;
}

}  // namespace nicf

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nicf {

/// The interaction history s_t seen by a policy: every (item, rating) pair in
/// recommendation order, plus one item sequence per rating score.
class SupportState {
 public:
  explicit SupportState(int max_rating = 5) : channels_(static_cast<std::size_t>(max_rating)) {
    if (max_rating < 1) throw std::invalid_argument("SupportState: max_rating must be >= 1");
  }

  void push(int item, int rating) {
    if (rating < 1 || rating > max_rating()) {
      throw std::out_of_range("SupportState: rating " + std::to_string(rating) + " out of range");
    }
    channels_[static_cast<std::size_t>(rating - 1)].push_back(item);
    steps_.emplace_back(item, rating);
  }

  int max_rating() const { return static_cast<int>(channels_.size()); }
  std::size_t size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }

  /// Items rated `rating` (1-based score), in the order they were observed.
  const std::vector<int>& channel(int rating) const {
    return channels_.at(static_cast<std::size_t>(rating - 1));
  }
  const std::vector<std::pair<int, int>>& steps() const { return steps_; }

  bool operator==(const SupportState&) const = default;

 private:
  std::vector<std::vector<int>> channels_;
  std::vector<std::pair<int, int>> steps_;
};

}  // namespace nicf

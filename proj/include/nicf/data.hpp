#pragma once

#include "nicf/support.hpp"

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace nicf {

struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a policy breaks the simulator contract (repeat or unlogged item).
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RatingFormat { MovielensDat, Csv };

RatingFormat parse_rating_format(const std::string& name);

/// One rating with dense ids.
struct RatingRecord {
  int user = 0;
  int item = 0;
  int rating = 0;
  std::optional<std::int64_t> timestamp;

  bool operator==(const RatingRecord&) const = default;
};

/// Immutable set of ratings with dense re-indexing. Dense ids are assigned in
/// order of first appearance.
class RatingLog {
 public:
  static constexpr int kDefaultMaxRating = 5;

  RatingLog() = default;

  const std::vector<RatingRecord>& records() const { return records_; }
  int n_users() const { return static_cast<int>(user_ids_.size()); }
  int n_items() const { return static_cast<int>(item_ids_.size()); }
  int max_rating() const { return max_rating_; }

  /// item -> rating for a dense user id.
  const std::map<int, int>& ratings_of(int user) const;
  std::optional<int> rating(int user, int item) const;

  std::int64_t original_user(int user) const { return user_ids_.at(static_cast<std::size_t>(user)); }
  std::int64_t original_item(int item) const { return item_ids_.at(static_cast<std::size_t>(item)); }
  std::optional<int> dense_user(std::int64_t original) const;
  std::optional<int> dense_item(std::int64_t original) const;

  /// Builds a log from records that carry original ids in user/item. Later
  /// duplicates replace earlier ones unless they carry an older timestamp.
  static RatingLog from_records(const std::vector<RatingRecord>& original_records,
                                int max_rating = kDefaultMaxRating);

  bool operator==(const RatingLog& other) const {
    return records_ == other.records_ && user_ids_ == other.user_ids_ &&
           item_ids_ == other.item_ids_ && max_rating_ == other.max_rating_;
  }

 private:
  std::vector<RatingRecord> records_;
  std::vector<std::int64_t> user_ids_;
  std::vector<std::int64_t> item_ids_;
  std::unordered_map<std::int64_t, int> user_index_;
  std::unordered_map<std::int64_t, int> item_index_;
  std::vector<std::map<int, int>> per_user_;
  int max_rating_ = kDefaultMaxRating;
};

/// Reads "UserID::MovieID::Rating::Timestamp" lines or "user,item,rating[,timestamp]"
/// CSV rows (an optional header line is skipped). Blank lines are ignored.
RatingLog parse_ratings(std::istream& in, RatingFormat format,
                        int max_rating = RatingLog::kDefaultMaxRating);
RatingLog load_ratings(const std::string& path, RatingFormat format,
                       int max_rating = RatingLog::kDefaultMaxRating);

/// Writes the log back with original ids, in record order.
void write_ratings(std::ostream& out, const RatingLog& log, RatingFormat format);

struct UserSplit {
  std::vector<int> train;
  std::vector<int> valid;
  std::vector<int> test;
  std::uint64_t seed = 0;
};

UserSplit split_users(const RatingLog& log, const std::array<double, 3>& fractions,
                      std::uint64_t seed);

/// Number of items the user rated at or above the satisfaction threshold.
int satisfied_count(const RatingLog& log, int user);

inline constexpr int kSatisfiedThreshold = 4;
inline bool is_satisfied(int rating) { return rating >= kSatisfiedThreshold; }

// Offline simulator --------------------------------------------------------

struct EnvState {
  int user = 0;
  int step = 1;
  int horizon = 40;
  SupportState history;
  std::vector<int> remaining;  // sorted ascending
  bool done = false;
};

struct StepOutcome {
  int rating = 0;
  bool satisfied = false;
  EnvState next;
  bool done = false;
};

/// Starts an episode: the candidate set is every item the user rated.
EnvState env_reset(const RatingLog& log, int user, int horizon);

/// Plays `item`; throws ProtocolError when it is not in state.remaining or
/// the episode already ended.
StepOutcome env_step(const RatingLog& log, EnvState state, int item);

}  // namespace nicf

#pragma once

#include <istream>
#include <map>
#include <string>
#include <vector>

namespace nicf {

class RatingLog;

struct TraceStep {
  int item = 0;
  int rating = 0;
  bool satisfied = false;
};

/// One evaluated episode: what was recommended and how the user responded.
struct EpisodeTrace {
  int user = 0;
  std::vector<TraceStep> steps;
};

/// item -> topic ids (e.g. genres). Items without topics map to an empty set.
class TopicCatalog {
 public:
  TopicCatalog() = default;
  explicit TopicCatalog(std::vector<std::vector<int>> topics) : topics_(std::move(topics)) {}

  const std::vector<int>& topics_of(int item) const;
  std::size_t n_items() const { return topics_.size(); }
  bool empty() const { return topics_.empty(); }

 private:
  std::vector<std::vector<int>> topics_;
};

/// Reads `item,topic` rows (optional header). Items are original ids and are
/// mapped through the log's dense index; rows for unknown items are skipped.
TopicCatalog load_topics(std::istream& in, const RatingLog& log);
TopicCatalog load_topics(const std::string& path, const RatingLog& log);

/// Mean over traces of the number of satisfied steps among the first T.
double cumulative_precision(const std::vector<EpisodeTrace>& traces, int horizon);

/// Mean over users with at least one satisfied item of hits / #satisfied.
double cumulative_recall(const std::vector<EpisodeTrace>& traces, int horizon,
                         const std::map<int, int>& satisfied_counts);

/// alpha-DCG of the first T items in the given order.
double alpha_dcg(const std::vector<int>& items, const TopicCatalog& catalog, double alpha,
                 int horizon);

/// Best achievable alpha-DCG over orderings of the first T items: exact for
/// short lists, greedy (ties -> lowest item id) otherwise.
double ideal_gain(const std::vector<int>& items, const TopicCatalog& catalog, double alpha,
                  int horizon);

/// alpha-DCG / ideal, 0 when the items carry no topics at all.
double alpha_ndcg(const std::vector<int>& items, const TopicCatalog& catalog, double alpha,
                  int horizon);

/// Mean alpha-NDCG@T over traces.
double mean_alpha_ndcg(const std::vector<EpisodeTrace>& traces, const TopicCatalog& catalog,
                       double alpha, int horizon);

inline constexpr int kExactIdealLimit = 14;

}  // namespace nicf

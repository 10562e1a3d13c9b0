#include "nicf/metrics.hpp"

#include "nicf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace nicf {

namespace {

const std::vector<int> kNoTopics;

std::vector<int> prefix(const std::vector<int>& items, int horizon) {
  const auto n = std::min<std::size_t>(items.size(), static_cast<std::size_t>(std::max(horizon, 0)));
  return {items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n)};
}

double discount(std::size_t position) { return std::log2(1.0 + static_cast<double>(position)); }

// Local topic ids for a short item list, so counts fit in a flat vector.
struct LocalTopics {
  std::vector<std::vector<int>> per_item;
  std::size_t universe = 0;
};

LocalTopics localize(const std::vector<int>& items, const TopicCatalog& catalog) {
  LocalTopics local;
  std::unordered_map<int, int> ids;
  for (int item : items) {
    std::vector<int> mapped;
    for (int topic : catalog.topics_of(item)) {
      auto [it, fresh] = ids.try_emplace(topic, static_cast<int>(ids.size()));
      mapped.push_back(it->second);
    }
    local.per_item.push_back(std::move(mapped));
  }
  local.universe = ids.size();
  return local;
}

double exact_ideal(const LocalTopics& local, double alpha) {
  const std::size_t n = local.per_item.size();
  const std::size_t full = std::size_t{1} << n;
  std::vector<double> best(full, -1.0);
  best[0] = 0.0;
  std::vector<int> counts(local.universe);
  for (std::size_t set = 0; set < full; ++set) {
    if (best[set] < 0) continue;
    std::fill(counts.begin(), counts.end(), 0);
    std::size_t placed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(set >> i & 1u)) continue;
      ++placed;
      for (int t : local.per_item[i]) ++counts[static_cast<std::size_t>(t)];
    }
    const double weight = 1.0 / discount(placed + 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (set >> i & 1u) continue;
      double gain = 0;
      for (int t : local.per_item[i]) gain += std::pow(1.0 - alpha, counts[static_cast<std::size_t>(t)]);
      const std::size_t next = set | (std::size_t{1} << i);
      best[next] = std::max(best[next], best[set] + gain * weight);
    }
  }
  return best[full - 1];
}

double greedy_ideal(const std::vector<int>& items, const LocalTopics& local, double alpha) {
  const std::size_t n = items.size();
  std::vector<bool> used(n, false);
  std::vector<int> counts(local.universe, 0);
  double total = 0;
  for (std::size_t pos = 1; pos <= n; ++pos) {
    std::size_t pick = n;
    double pick_gain = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double gain = 0;
      for (int t : local.per_item[i]) gain += std::pow(1.0 - alpha, counts[static_cast<std::size_t>(t)]);
      if (pick == n || gain > pick_gain || (gain == pick_gain && items[i] < items[pick])) {
        pick = i;
        pick_gain = gain;
      }
    }
    used[pick] = true;
    for (int t : local.per_item[pick]) ++counts[static_cast<std::size_t>(t)];
    total += pick_gain / discount(pos);
  }
  return total;
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
}

}  // namespace

const std::vector<int>& TopicCatalog::topics_of(int item) const {
  if (item < 0 || static_cast<std::size_t>(item) >= topics_.size()) return kNoTopics;
  return topics_[static_cast<std::size_t>(item)];
}

TopicCatalog load_topics(std::istream& in, const RatingLog& log) {
  std::vector<std::vector<int>> topics(static_cast<std::size_t>(log.n_items()));
  std::unordered_map<std::string, int> names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(line_no, "expected 'item,topic'");
    const std::string item_text = line.substr(0, comma);
    const std::string topic = line.substr(comma + 1);
    std::int64_t item = 0;
    try {
      std::size_t used = 0;
      item = std::stoll(item_text, &used);
      if (used != item_text.size()) throw std::invalid_argument(item_text);
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header
      throw ParseError(line_no, "malformed item id '" + item_text + "'");
    }
    const auto dense = log.dense_item(item);
    if (!dense) continue;
    auto [it, fresh] = names.try_emplace(topic, static_cast<int>(names.size()));
    auto& set = topics[static_cast<std::size_t>(*dense)];
    if (std::find(set.begin(), set.end(), it->second) == set.end()) set.push_back(it->second);
  }
  for (auto& set : topics) std::sort(set.begin(), set.end());
  return TopicCatalog(std::move(topics));
}

TopicCatalog load_topics(const std::string& path, const RatingLog& log) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open topic file '" + path + "'");
  return load_topics(in, log);
}

double cumulative_precision(const std::vector<EpisodeTrace>& traces, int horizon) {
  if (horizon < 1) throw std::invalid_argument("cumulative_precision: T must be >= 1");
  if (traces.empty()) return 0.0;
  double total = 0;
  for (const auto& trace : traces) {
    const auto n = std::min<std::size_t>(trace.steps.size(), static_cast<std::size_t>(horizon));
    for (std::size_t t = 0; t < n; ++t) total += trace.steps[t].satisfied ? 1.0 : 0.0;
  }
  return total / static_cast<double>(traces.size());
}

double cumulative_recall(const std::vector<EpisodeTrace>& traces, int horizon,
                         const std::map<int, int>& satisfied_counts) {
  if (horizon < 1) throw std::invalid_argument("cumulative_recall: T must be >= 1");
  double total = 0;
  std::size_t users = 0;
  for (const auto& trace : traces) {
    const auto it = satisfied_counts.find(trace.user);
    if (it == satisfied_counts.end()) {
      throw std::invalid_argument("cumulative_recall: no satisfied count for user " +
                                  std::to_string(trace.user));
    }
    if (it->second < 1) continue;
    const auto n = std::min<std::size_t>(trace.steps.size(), static_cast<std::size_t>(horizon));
    double hits = 0;
    for (std::size_t t = 0; t < n; ++t) hits += trace.steps[t].satisfied ? 1.0 : 0.0;
    total += hits / it->second;
    ++users;
  }
  return users == 0 ? 0.0 : total / static_cast<double>(users);
}

double alpha_dcg(const std::vector<int>& items, const TopicCatalog& catalog, double alpha,
                 int horizon) {
  check_alpha(alpha);
  const std::vector<int> ranked = prefix(items, horizon);
  std::unordered_map<int, int> counts;
  double total = 0;
  for (std::size_t t = 0; t < ranked.size(); ++t) {
    double gain = 0;
    for (int topic : catalog.topics_of(ranked[t])) {
      const int c = ++counts[topic];
      gain += std::pow(1.0 - alpha, c - 1);
    }
    total += gain / discount(t + 1);
  }
  return total;
}

double ideal_gain(const std::vector<int>& items, const TopicCatalog& catalog, double alpha,
                  int horizon) {
  check_alpha(alpha);
  const std::vector<int> ranked = prefix(items, horizon);
  const LocalTopics local = localize(ranked, catalog);
  if (ranked.size() <= static_cast<std::size_t>(kExactIdealLimit)) return exact_ideal(local, alpha);
  return greedy_ideal(ranked, local, alpha);
}

double alpha_ndcg(const std::vector<int>& items, const TopicCatalog& catalog, double alpha,
                  int horizon) {
  const double dcg = alpha_dcg(items, catalog, alpha, horizon);
  const double z = std::max(ideal_gain(items, catalog, alpha, horizon), dcg);
  if (z <= 0.0) {
    static std::once_flag warned;
    std::call_once(warned, [] {
      std::clog << "warning: alpha-NDCG normalizer is zero (no topics); reporting 0\n";
    });
    return 0.0;
  }
  return dcg / z;
}

double mean_alpha_ndcg(const std::vector<EpisodeTrace>& traces, const TopicCatalog& catalog,
                       double alpha, int horizon) {
  if (traces.empty()) return 0.0;
  double total = 0;
  for (const auto& trace : traces) {
    std::vector<int> items;
    items.reserve(trace.steps.size());
    for (const auto& s : trace.steps) items.push_back(s.item);
    total += alpha_ndcg(items, catalog, alpha, horizon);
  }
  return total / static_cast<double>(traces.size());
}

}  // namespace nicf

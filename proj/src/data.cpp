#include "nicf/data.hpp"
#include "nicf/numerics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace nicf {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(trim(line.substr(start)));
      break;
    }
    parts.push_back(trim(line.substr(start, pos - start)));
    start = pos + sep.size();
  }
  return parts;
}

std::optional<std::int64_t> to_int(std::string_view s) {
  std::int64_t value = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return value;
}

// Ratings in some exports are written as "4.0"; accept integral decimals only.
std::optional<std::int64_t> to_rating(std::string_view s) {
  if (auto v = to_int(s)) return v;
  double value = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  if (value != std::floor(value)) return std::nullopt;
  return static_cast<std::int64_t>(value);
}

bool looks_like_header(std::string_view line) {
  line = trim(line);
  return !line.empty() && !(std::isdigit(static_cast<unsigned char>(line.front())) ||
                            line.front() == '-' || line.front() == '+');
}

}  // namespace

RatingFormat parse_rating_format(const std::string& name) {
  if (name == "movielens_dat" || name == "dat") return RatingFormat::MovielensDat;
  if (name == "csv") return RatingFormat::Csv;
  throw ValueError("unknown rating format '" + name + "'");
}

const std::map<int, int>& RatingLog::ratings_of(int user) const {
  if (user < 0 || user >= n_users()) {
    throw ValueError("unknown user " + std::to_string(user));
  }
  return per_user_[static_cast<std::size_t>(user)];
}

std::optional<int> RatingLog::rating(int user, int item) const {
  const auto& items = ratings_of(user);
  const auto it = items.find(item);
  if (it == items.end()) return std::nullopt;
  return it->second;
}

std::optional<int> RatingLog::dense_user(std::int64_t original) const {
  const auto it = user_index_.find(original);
  if (it == user_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> RatingLog::dense_item(std::int64_t original) const {
  const auto it = item_index_.find(original);
  if (it == item_index_.end()) return std::nullopt;
  return it->second;
}

RatingLog RatingLog::from_records(const std::vector<RatingRecord>& original_records,
                                  int max_rating) {
  RatingLog log;
  log.max_rating_ = max_rating;
  std::map<std::pair<int, int>, std::size_t> position;
  for (const auto& rec : original_records) {
    if (rec.user < 0 || rec.item < 0) throw ValueError("ids must be nonnegative");
    if (rec.rating < 1 || rec.rating > max_rating) {
      throw ValueError("rating " + std::to_string(rec.rating) + " outside [1, " +
                       std::to_string(max_rating) + "]");
    }
    auto [uit, new_user] = log.user_index_.try_emplace(rec.user, log.n_users());
    if (new_user) {
      log.user_ids_.push_back(rec.user);
      log.per_user_.emplace_back();
    }
    auto [iit, new_item] = log.item_index_.try_emplace(rec.item, log.n_items());
    if (new_item) log.item_ids_.push_back(rec.item);

    RatingRecord dense{uit->second, iit->second, rec.rating, rec.timestamp};
    auto [pos, fresh] = position.try_emplace({dense.user, dense.item}, log.records_.size());
    if (fresh) {
      log.records_.push_back(dense);
    } else {
      RatingRecord& kept = log.records_[pos->second];
      const bool older = kept.timestamp && dense.timestamp && *dense.timestamp < *kept.timestamp;
      if (!older) kept = dense;
    }
  }
  for (const auto& rec : log.records_) {
    log.per_user_[static_cast<std::size_t>(rec.user)][rec.item] = rec.rating;
  }
  return log;
}

RatingLog parse_ratings(std::istream& in, RatingFormat format, int max_rating) {
  std::vector<RatingRecord> records;
  std::string line;
  std::size_t line_no = 0;
  const std::string_view sep = format == RatingFormat::MovielensDat ? "::" : ",";
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (format == RatingFormat::Csv && records.empty() && looks_like_header(line)) continue;
    const auto parts = split(line, sep);
    const bool arity_ok = format == RatingFormat::MovielensDat
                              ? parts.size() == 4
                              : (parts.size() == 3 || parts.size() == 4);
    if (!arity_ok) throw ParseError(line_no, "unexpected field count in '" + line + "'");
    const auto user = to_int(parts[0]);
    const auto item = to_int(parts[1]);
    const auto rating = to_rating(parts[2]);
    if (!user || !item || !rating) throw ParseError(line_no, "malformed record '" + line + "'");
    RatingRecord rec{static_cast<int>(*user), static_cast<int>(*item), static_cast<int>(*rating),
                     std::nullopt};
    if (parts.size() == 4) {
      const auto ts = to_int(parts[3]);
      if (!ts) throw ParseError(line_no, "malformed timestamp in '" + line + "'");
      rec.timestamp = *ts;
    }
    if (*rating < 1 || *rating > max_rating) {
      throw ValueError("line " + std::to_string(line_no) + ": rating " +
                       std::to_string(*rating) + " outside [1, " + std::to_string(max_rating) +
                       "]");
    }
    if (*user < 0 || *item < 0) {
      throw ValueError("line " + std::to_string(line_no) + ": negative id");
    }
    records.push_back(rec);
  }
  return RatingLog::from_records(records, max_rating);
}

RatingLog load_ratings(const std::string& path, RatingFormat format, int max_rating) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open ratings file '" + path + "'");
  return parse_ratings(in, format, max_rating);
}

void write_ratings(std::ostream& out, const RatingLog& log, RatingFormat format) {
  const char* sep = format == RatingFormat::MovielensDat ? "::" : ",";
  if (format == RatingFormat::Csv) out << "user,item,rating,timestamp\n";
  for (const auto& rec : log.records()) {
    out << log.original_user(rec.user) << sep << log.original_item(rec.item) << sep << rec.rating;
    if (rec.timestamp) {
      out << sep << *rec.timestamp;
    } else if (format == RatingFormat::MovielensDat) {
      out << sep << 0;
    }
    out << '\n';
  }
}

UserSplit split_users(const RatingLog& log, const std::array<double, 3>& fractions,
                      std::uint64_t seed) {
  if (log.n_users() == 0) throw ValueError("split_users: empty log");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ValueError("split_users: fractions must sum to 1");
  for (double f : fractions) {
    if (f < 0) throw ValueError("split_users: negative fraction");
  }
  const int n = log.n_users();
  std::vector<int> users(static_cast<std::size_t>(n));
  std::iota(users.begin(), users.end(), 0);
  Rng rng(seed);
  std::shuffle(users.begin(), users.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_valid =
      std::min(static_cast<std::size_t>(std::llround(fractions[1] * n)), users.size() - n_train);
  UserSplit split;
  split.seed = seed;
  split.train.assign(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.valid.assign(users.begin() + static_cast<std::ptrdiff_t>(n_train),
                     users.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  split.test.assign(users.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), users.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

int satisfied_count(const RatingLog& log, int user) {
  int count = 0;
  for (const auto& [item, rating] : log.ratings_of(user)) count += is_satisfied(rating) ? 1 : 0;
  return count;
}

EnvState env_reset(const RatingLog& log, int user, int horizon) {
  if (user < 0 || user >= log.n_users()) {
    throw ValueError("env_reset: unknown user " + std::to_string(user));
  }
  if (horizon < 1) throw ValueError("env_reset: horizon must be >= 1");
  const auto& items = log.ratings_of(user);
  if (items.empty()) throw ValueError("env_reset: user " + std::to_string(user) + " has no ratings");
  EnvState state{user, 1, horizon, SupportState(log.max_rating()), {}, false};
  state.remaining.reserve(items.size());
  for (const auto& [item, rating] : items) state.remaining.push_back(item);
  return state;
}

StepOutcome env_step(const RatingLog& log, EnvState state, int item) {
  if (state.done) throw ProtocolError("env_step: episode already finished");
  const auto it = std::lower_bound(state.remaining.begin(), state.remaining.end(), item);
  if (it == state.remaining.end() || *it != item) {
    throw ProtocolError("env_step: item " + std::to_string(item) +
                        " is not a remaining candidate for user " + std::to_string(state.user));
  }
  const int rating = *log.rating(state.user, item);
  state.remaining.erase(it);
  state.history.push(item, rating);
  const bool done = state.step >= state.horizon || state.remaining.empty();
  ++state.step;
  state.done = done;
  return StepOutcome{rating, is_satisfied(rating), std::move(state), done};
}

}  // namespace nicf

#include "nicf/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace nicf {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kAllMetrics{"precision", "recall", "alpha_ndcg"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

void require_file(const std::string& path, const std::string& key) {
  if (path.empty()) throw ConfigError("config: " + key + " is not set");
  if (!fs::is_regular_file(path)) throw ConfigError("config: " + key + " '" + path + "' does not exist");
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

double metric_value(const MetricRow& row, const std::string& metric) {
  if (metric == "precision") return row.precision;
  if (metric == "recall") return row.recall;
  return row.alpha_ndcg;
}

void write_manifest(const fs::path& path, const ExperimentConfig& cfg, const std::string& mode,
                    const std::vector<std::pair<std::string, std::string>>& notes) {
  std::ofstream out = open_output(path);
  out << "# nicf run manifest\n";
  out << "# version = " << code_version() << "\n";
  out << "# config_hash = " << config_hash(cfg) << "\n";
  out << "# mode = " << mode << "\n";
  for (const auto& [k, v] : notes) out << "# " << k << " = " << v << "\n";
  out << canonical_config(cfg);
}

bool uses_pmf(PolicyKind kind) {
  return kind == PolicyKind::MfGreedy || kind == PolicyKind::PmfEps || kind == PolicyKind::PmfTs ||
         kind == PolicyKind::PmfUcb;
}

PolicyFactory pmf_policy(const ExperimentConfig& cfg, const PmfModel& model, double c) {
  switch (cfg.policy) {
    case PolicyKind::MfGreedy: return mf_greedy_policy(model);
    case PolicyKind::PmfEps: return pmf_eps_greedy_policy(model, cfg.pmf_epsilon, cfg.seed);
    case PolicyKind::PmfTs: return thompson_policy(model, cfg.seed);
    case PolicyKind::PmfUcb: return glm_ucb_policy(model, c);
    default: throw std::logic_error("not a PMF policy");
  }
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  require_file(cfg.data_path, "data.path");
  PreparedData data{load_ratings(cfg.data_path, cfg.data_format, cfg.max_rating), {}, std::nullopt};
  if (cfg.split_path.empty()) {
    data.split = split_users(data.log, cfg.split_fractions, cfg.split_seed);
  } else {
    require_file(cfg.split_path, "data.split");
    std::ifstream in(cfg.split_path);
    data.split = read_split(in, data.log);
  }
  if (!cfg.topics_path.empty()) {
    require_file(cfg.topics_path, "data.topics");
    data.topics = load_topics(cfg.topics_path, data.log);
  }
  return data;
}

void write_split(std::ostream& out, const RatingLog& log, const UserSplit& split) {
  std::vector<std::pair<int, const char*>> rows;
  for (int u : split.train) rows.emplace_back(u, "train");
  for (int u : split.valid) rows.emplace_back(u, "valid");
  for (int u : split.test) rows.emplace_back(u, "test");
  std::sort(rows.begin(), rows.end());
  out << "user,set\n";
  for (const auto& [u, set] : rows) out << log.original_user(u) << ',' << set << '\n';
}

UserSplit read_split(std::istream& in, const RatingLog& log) {
  UserSplit split;
  std::string line;
  int number = 0;
  std::set<int> seen;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (number == 1 && line == "user,set")) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) throw ParseError(number, "split: expected user,set");
    std::int64_t original = 0;
    try {
      original = std::stoll(fields[0]);
    } catch (const std::exception&) {
      throw ParseError(number, "split: bad user id '" + fields[0] + "'");
    }
    const auto dense = log.dense_user(original);
    if (!dense) throw ParseError(number, "split: user " + fields[0] + " is not in the rating log");
    if (!seen.insert(*dense).second) throw ParseError(number, "split: user " + fields[0] + " listed twice");
    if (fields[1] == "train") split.train.push_back(*dense);
    else if (fields[1] == "valid") split.valid.push_back(*dense);
    else if (fields[1] == "test") split.test.push_back(*dense);
    else throw ParseError(number, "split: unknown set '" + fields[1] + "'");
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void write_metrics_csv(std::ostream& out, const std::string& policy, const std::vector<MetricRow>& rows,
                       const std::vector<std::string>& metrics, std::uint64_t seed) {
  out << "policy,T,precision,recall,alpha_ndcg,seed\n";
  for (const auto& row : rows) {
    out << policy << ',' << row.horizon;
    for (const auto& m : kAllMetrics) {
      out << ',';
      if (std::find(metrics.begin(), metrics.end(), m) != metrics.end()) out << format_number(metric_value(row, m));
    }
    out << ',' << seed << '\n';
  }
}

RunSummary run_experiment(const ExperimentConfig& cfg, RunMode mode, int workers, std::ostream* progress) {
  cfg.validate();
  const bool learned = cfg.policy == PolicyKind::Nicf || uses_pmf(cfg.policy);
  if (mode == RunMode::Evaluate && learned) require_file(cfg.checkpoint, "run.checkpoint");
  if (cfg.out_dir.empty()) throw ConfigError("config: run.out is not set");

  PreparedData data = prepare_data(cfg);
  std::vector<int> test = data.split.test;
  if (test.empty()) throw ConfigError("config: the split has no test users");
  if (cfg.max_eval_users > 0 && static_cast<int>(test.size()) > cfg.max_eval_users) test.resize(cfg.max_eval_users);

  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  RunSummary summary;
  std::vector<std::pair<std::string, std::string>> notes;
  EvaluateOptions eval{cfg.horizon, cfg.alpha, data.topics ? &*data.topics : nullptr, workers, cfg.curve};

  PolicyFactory policy;
  if (cfg.policy == PolicyKind::Nicf) {
    QNetParams params;
    if (mode == RunMode::Train) {
      TrainConfig tc = cfg.train;
      tc.horizon = cfg.horizon;
      tc.seed = cfg.seed;
      auto report = [&](const EpochLog& e, const QNetParams&) {
        if (!progress) return;
        *progress << "epoch " << e.epoch << " gamma " << format_number(e.gamma) << " loss "
                  << format_number(e.mean_loss) << " valid_precision@" << std::min(cfg.horizon, kReportHorizons.back()) << " "
                  << format_number(e.valid_precision[kReportHorizons.size() - 1]) << std::endl;
      };
      TrainResult trained = train(data.log, data.split, tc, report);
      params = std::move(trained.params);
      summary.best_epoch = trained.best_epoch;
      notes.emplace_back("best_epoch", std::to_string(trained.best_epoch));
      std::ofstream log_out = open_output(out_dir / "training_log.csv");
      write_training_log(log_out, trained.log);
      summary.files.push_back("training_log.csv");
      save_qnet((out_dir / "qnet.ckpt").string(), params);
      summary.files.push_back("qnet.ckpt");
    } else {
      params = load_qnet(cfg.checkpoint);
      if (params.shape.n_items != data.log.n_items())
        throw ConfigError("checkpoint item count does not match the rating log");
    }
    policy = nicf_policy(params);
  } else if (uses_pmf(cfg.policy)) {
    PmfModel model;
    if (mode == RunMode::Train) {
      PmfOptions po = cfg.pmf;
      po.seed = cfg.seed;
      model = fit_pmf(data.log, data.split.train, po);
      save_pmf((out_dir / "pmf.ckpt").string(), model);
      summary.files.push_back("pmf.ckpt");
    } else {
      model = load_pmf(cfg.checkpoint);
      if (model.n_items() != data.log.n_items())
        throw ConfigError("checkpoint item count does not match the rating log");
    }
    double c = cfg.ucb_c;
    if (cfg.policy == PolicyKind::PmfUcb && cfg.tune_ucb_c && !data.split.valid.empty()) {
      EvaluateOptions tune{cfg.horizon, cfg.alpha, nullptr, workers, false};
      double best = -1;
      for (double candidate : cfg.ucb_grid) {
        const double score = evaluate(glm_ucb_policy(model, candidate), data.log, data.split.valid, tune).rows.back().precision;
        if (progress) *progress << "ucb c " << format_number(candidate) << " valid precision " << format_number(score) << std::endl;
        if (score > best) {
          best = score;
          c = candidate;
        }
      }
    }
    if (cfg.policy == PolicyKind::PmfUcb) notes.emplace_back("ucb_c", format_number(c));
    summary.ucb_c = c;
    policy = pmf_policy(cfg, model, c);
  } else if (cfg.policy == PolicyKind::Pop) {
    policy = pop_policy(PopTable::from_log(data.log, data.split.train));
  } else {
    policy = random_policy(cfg.seed);
  }

  const EvaluationResult result = evaluate(policy, data.log, test, eval);
  summary.rows = result.rows;
  {
    std::ofstream out = open_output(out_dir / "metrics.csv");
    write_metrics_csv(out, to_string(cfg.policy), result.rows, cfg.metrics, cfg.seed);
    summary.files.push_back("metrics.csv");
  }
  if (cfg.curve) {
    std::ofstream out = open_output(out_dir / "curve.csv");
    out << "t,precision,recall,alpha_ndcg\n";
    for (const auto& row : result.curve) {
      out << row.horizon << ',' << format_number(row.precision) << ',' << format_number(row.recall) << ','
          << format_number(row.alpha_ndcg) << '\n';
    }
    summary.files.push_back("curve.csv");
  }
  notes.emplace_back("test_users", std::to_string(test.size()));
  write_manifest(out_dir / "manifest.txt", cfg, mode == RunMode::Train ? "train" : "evaluate", notes);
  summary.files.push_back("manifest.txt");
  if (progress) {
    for (const auto& row : result.rows) {
      *progress << to_string(cfg.policy) << " T=" << row.horizon << " precision " << format_number(row.precision)
                << " recall " << format_number(row.recall) << std::endl;
    }
  }
  return summary;
}

void run_prepare(const ExperimentConfig& cfg, std::ostream* progress) {
  cfg.validate();
  if (cfg.out_dir.empty()) throw ConfigError("config: run.out is not set");
  const PreparedData data = prepare_data(cfg);
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  {
    std::ofstream out = open_output(out_dir / "split.csv");
    write_split(out, data.log, data.split);
  }
  std::size_t satisfied = 0;
  for (const auto& r : data.log.records()) satisfied += is_satisfied(r.rating);
  const std::vector<std::pair<std::string, std::string>> notes{
      {"users", std::to_string(data.log.n_users())},
      {"items", std::to_string(data.log.n_items())},
      {"ratings", std::to_string(data.log.records().size())},
      {"satisfied_ratings", std::to_string(satisfied)},
      {"train_users", std::to_string(data.split.train.size())},
      {"valid_users", std::to_string(data.split.valid.size())},
      {"test_users", std::to_string(data.split.test.size())}};
  write_manifest(out_dir / "manifest.txt", cfg, "prepare", notes);
  if (progress) {
    for (const auto& [k, v] : notes) *progress << k << ' ' << v << '\n';
  }
}

MetricsTable read_metrics_csv(std::istream& in, const std::string& label) {
  MetricsTable table;
  table.label = label;
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"policy", "T", "precision", "recall",
                                                                                      "alpha_ndcg", "seed"}) {
    throw std::runtime_error("metrics.csv: unexpected header in '" + label + "'");
  }
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 6) throw ParseError(number, "metrics.csv: expected 6 fields");
    try {
      table.horizons.push_back(std::stoi(fields[1]));
    } catch (const std::exception&) {
      throw ParseError(number, "metrics.csv: bad T '" + fields[1] + "'");
    }
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k) table.columns[kAllMetrics[k]].push_back(fields[2 + k]);
  }
  if (table.horizons.empty()) throw std::runtime_error("metrics.csv: no rows in '" + label + "'");
  return table;
}

void compare_tables(const std::vector<MetricsTable>& tables, std::ostream& csv_out, std::ostream& text_out) {
  if (tables.size() < 2) throw std::invalid_argument("compare: need at least two result bundles");
  for (const auto& t : tables) {
    if (t.horizons != tables.front().horizons)
      throw std::invalid_argument("compare: T grids differ between '" + tables.front().label + "' and '" + t.label + "'");
  }
  const auto& horizons = tables.front().horizons;
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"metric", "T"};
  for (const auto& t : tables) header.push_back(t.label);
  grid.push_back(header);
  for (const auto& m : kAllMetrics) {
    bool present = false;
    for (const auto& t : tables) {
      for (const auto& v : t.columns.at(m)) present = present || !v.empty();
    }
    if (!present) continue;
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      std::vector<std::string> row{m, std::to_string(horizons[h])};
      for (const auto& t : tables) row.push_back(t.columns.at(m)[h]);
      grid.push_back(row);
    }
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : grid) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : grid) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      csv_out << (c ? "," : "") << row[c];
      if (c) text_out << "  ";
      text_out << (c < 2 ? std::left : std::right) << std::setw(static_cast<int>(width[c])) << row[c];
    }
    csv_out << '\n';
    text_out << '\n';
  }
}

void run_compare(const std::vector<std::string>& dirs, const std::string& out_dir, std::ostream& text_out) {
  std::vector<MetricsTable> tables;
  for (const auto& dir : dirs) {
    const fs::path path = fs::path(dir) / "metrics.csv";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("compare: cannot open '" + path.string() + "'");
    std::string label;
    {
      std::string header, first;
      std::getline(in, header);
      std::getline(in, first);
      label = split_csv_line(first).front();
      in.clear();
      in.seekg(0);
    }
    tables.push_back(read_metrics_csv(in, label));
  }
  // Disambiguate repeated policy names with the directory name.
  for (std::size_t i = 0; i < tables.size(); ++i) {
    for (std::size_t j = 0; j < tables.size(); ++j) {
      if (i != j && tables[i].label == tables[j].label) {
        tables[i].label += "(" + fs::path(dirs[i]).filename().string() + ")";
        break;
      }
    }
  }
  std::ostringstream csv;
  compare_tables(tables, csv, text_out);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream out = open_output(fs::path(out_dir) / "comparison.csv");
    out << csv.str();
  }
}

DemoResult demo_session(const QNetParams& params, const std::function<std::string(int)>& title, int horizon,
                        std::istream& in, std::ostream& out) {
  DemoResult result;
  const int max_rating = params.shape.max_rating;
  SupportState state(max_rating);
  std::vector<int> remaining(static_cast<std::size_t>(params.shape.n_items));
  for (int i = 0; i < params.shape.n_items; ++i) remaining[static_cast<std::size_t>(i)] = i;
  std::vector<std::string> pending;

  auto next_token = [&](std::string& token) {
    while (pending.empty()) {
      std::string line;
      if (!std::getline(in, line)) return false;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream words(line);
      std::string w;
      std::vector<std::string> found;
      while (words >> w) found.push_back(w);
      pending.insert(pending.end(), found.rbegin(), found.rend());
    }
    token = pending.back();
    pending.pop_back();
    return true;
  };

  bool quit = false;
  while (!quit && result.steps < horizon && !remaining.empty()) {
    const int item = masked_argmax(q_values(params, state), remaining);
    out << "[" << result.steps + 1 << "] " << title(item) << "\n";
    while (true) {
      out << "rating 1-" << max_rating << " or quit: " << std::flush;
      std::string token;
      if (!next_token(token) || token == "quit" || token == "q") {
        quit = true;
        break;
      }
      int rating = 0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), rating);
      if (ec != std::errc() || ptr != token.data() + token.size() || rating < 1 || rating > max_rating) {
        out << "expected a whole number from 1 to " << max_rating << "\n";
        continue;
      }
      state.push(item, rating);
      remaining.erase(std::find(remaining.begin(), remaining.end(), item));
      ++result.steps;
      result.satisfied += is_satisfied(rating) ? 1 : 0;
      out << "precision " << result.satisfied << " of " << result.steps << "\n";
      break;
    }
  }
  out << "session over: " << result.steps << " steps, precision " << result.satisfied << "\n";
  return result;
}

std::map<int, std::string> load_titles(const std::string& path, const RatingLog& log) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open titles '" + path + "'");
  std::map<int, std::string> titles;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (number == 1 && line.rfind("item,", 0) == 0)) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < 2) throw ParseError(number, "titles: expected item,title");
    std::int64_t original = 0;
    try {
      original = std::stoll(fields[0]);
    } catch (const std::exception&) {
      throw ParseError(number, "titles: bad item id '" + fields[0] + "'");
    }
    if (const auto dense = log.dense_item(original)) titles[*dense] = fields[1];
  }
  return titles;
}

}  // namespace nicf

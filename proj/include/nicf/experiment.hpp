#pragma once

#include "nicf/agent.hpp"
#include "nicf/bandits.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace nicf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PolicyKind { Nicf, Random, Pop, MfGreedy, PmfEps, PmfTs, PmfUcb };

PolicyKind parse_policy(const std::string& name);
std::string to_string(PolicyKind kind);

struct ExperimentConfig {
  std::string data_path;
  RatingFormat data_format = RatingFormat::Csv;
  int max_rating = 5;
  std::string topics_path;  // optional, needed for alpha-NDCG
  std::string titles_path;  // optional, used by the demo
  std::string split_path;   // optional, split written by `prepare`

  std::array<double, 3> split_fractions{0.85, 0.05, 0.10};
  std::uint64_t split_seed = 0;

  PolicyKind policy = PolicyKind::Nicf;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::string checkpoint;  // input checkpoint for `evaluate` and `demo`

  int horizon = 40;
  double alpha = 0.5;
  std::vector<std::string> metrics{"precision", "recall", "alpha_ndcg"};
  bool curve = false;
  int max_eval_users = 0;  // 0: every test user

  TrainConfig train;
  PmfOptions pmf;
  double pmf_epsilon = 0.1;
  double ucb_c = 0.1;
  bool tune_ucb_c = true;
  std::vector<double> ucb_grid{0.01, 0.05, 0.1, 0.5, 1.0};

  /// Throws ConfigError on inconsistent values; does not touch the filesystem.
  void validate() const;
};

/// One configuration key: dotted name, help text, and typed accessors.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key; unknown keys and malformed values raise ConfigError.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Reads `key = value` lines; '#' starts a comment.
void apply_config(ExperimentConfig& cfg, std::istream& in);
void apply_config_file(ExperimentConfig& cfg, const std::string& path);

/// Every key in registry order as `key = value` lines.
std::string canonical_config(const ExperimentConfig& cfg);

/// FNV-1a 64 over the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

std::string code_version();

/// Number formatting used by every CSV: classic locale, 6 significant digits.
std::string format_number(double value);

struct PreparedData {
  RatingLog log;
  UserSplit split;
  std::optional<TopicCatalog> topics;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

void write_split(std::ostream& out, const RatingLog& log, const UserSplit& split);
UserSplit read_split(std::istream& in, const RatingLog& log);

enum class RunMode { Train, Evaluate };

struct RunSummary {
  std::vector<MetricRow> rows;
  std::vector<std::string> files;  // written, relative to out_dir
  int best_epoch = 0;
  double ucb_c = 0;
};

/// Full run: fit (Train) or load (Evaluate) the policy, evaluate it on the test
/// users and write the result bundle into cfg.out_dir.
RunSummary run_experiment(const ExperimentConfig& cfg, RunMode mode, int workers = 1,
                          std::ostream* progress = nullptr);

/// `prepare`: ingest, split and write split.csv plus a manifest.
void run_prepare(const ExperimentConfig& cfg, std::ostream* progress = nullptr);

void write_metrics_csv(std::ostream& out, const std::string& policy, const std::vector<MetricRow>& rows,
                       const std::vector<std::string>& metrics, std::uint64_t seed);

struct MetricsTable {
  std::string label;
  std::vector<int> horizons;
  std::map<std::string, std::vector<std::string>> columns;  // metric -> value per horizon
};

MetricsTable read_metrics_csv(std::istream& in, const std::string& label);

/// Side-by-side comparison; writes the CSV to csv_out and an aligned table to text_out.
void compare_tables(const std::vector<MetricsTable>& tables, std::ostream& csv_out, std::ostream& text_out);

/// `compare` over result directories; writes comparison.csv into out_dir when not empty.
void run_compare(const std::vector<std::string>& dirs, const std::string& out_dir, std::ostream& text_out);

struct DemoResult {
  int steps = 0;
  int satisfied = 0;
};

/// Interactive loop with a human playing the user: show the greedy item, read
/// a rating, repeat until `quit` or the horizon.
DemoResult demo_session(const QNetParams& params, const std::function<std::string(int)>& title, int horizon,
                        std::istream& in, std::ostream& out);

std::map<int, std::string> load_titles(const std::string& path, const RatingLog& log);

}  // namespace nicf

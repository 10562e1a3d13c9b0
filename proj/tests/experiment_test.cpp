#include "nicf/experiment.hpp"
#include "synthetic_log.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace nicf;
using nicf::testing::read_text;
using nicf::testing::synthetic_csv;
using nicf::testing::SyntheticSpec;
using nicf::testing::TempDir;
using nicf::testing::write_text;

namespace {

ExperimentConfig from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  apply_config(cfg, in);
  return cfg;
}

// A run over a synthetic log with precision and recall only.
ExperimentConfig small_run(const TempDir& dir, PolicyKind policy, const std::string& out) {
  const std::string data = dir.file("ratings.csv");
  if (!std::filesystem::exists(data)) write_text(data, synthetic_csv(SyntheticSpec{}));
  ExperimentConfig cfg;
  cfg.data_path = data;
  cfg.metrics = {"precision", "recall"};
  cfg.split_fractions = {0.7, 0.1, 0.2};
  cfg.split_seed = 3;
  cfg.horizon = 10;
  cfg.policy = policy;
  cfg.seed = 11;
  cfg.out_dir = dir.file(out);
  cfg.train.epochs = 2;
  cfg.train.dim = 4;
  cfg.train.blocks = 1;
  cfg.train.batch_size = 8;
  cfg.train.episodes_per_epoch = 10;
  cfg.pmf.dim = 3;
  cfg.pmf.iters = 5;
  return cfg;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig cfg = from_text(
      "# comment line\n"
      "run.policy = pop   # trailing comment\n"
      "  run.seed=42\n"
      "\n"
      "train.learning_rate = 0.01\n"
      "eval.metrics = precision, recall\n"
      "pmf.ucb_grid = 0.5,1\n"
      "pmf.tune_c = false\n");
  EXPECT_EQ(cfg.policy, PolicyKind::Pop);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_DOUBLE_EQ(cfg.train.learning_rate, 0.01);
  EXPECT_EQ(cfg.metrics, (std::vector<std::string>{"precision", "recall"}));
  EXPECT_EQ(cfg.ucb_grid, (std::vector<double>{0.5, 1.0}));
  EXPECT_FALSE(cfg.tune_ucb_c);
  EXPECT_EQ(cfg.horizon, 40);
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.5);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  ExperimentConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "train.nope", "1"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "train.epochs", "ten"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "train.epochs", "3.5"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "eval.alpha", "nan"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "run.policy", "oracle"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "pmf.tune_c", "maybe"), ConfigError);
  EXPECT_THROW(from_text("just words\n"), ConfigError);
}

TEST(Config, ValidateCatchesInconsistencies) {
  ExperimentConfig cfg;
  cfg.metrics = {"precision"};
  EXPECT_NO_THROW(cfg.validate());
  cfg.metrics = {"precision", "alpha_ndcg"};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.topics_path = "genres.csv";
  EXPECT_NO_THROW(cfg.validate());
  cfg.split_fractions = {0.5, 0.2, 0.2};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.split_fractions = {0.8, 0.1, 0.1};
  cfg.alpha = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, EveryKeyRoundTripsThroughCanonicalText) {
  ExperimentConfig cfg;
  cfg.policy = PolicyKind::PmfUcb;
  cfg.seed = 7;
  cfg.train.eta = 0.35;
  cfg.ucb_grid = {0.25, 2};
  cfg.metrics = {"recall"};
  const std::string text = canonical_config(cfg);
  const ExperimentConfig back = from_text(text);
  EXPECT_EQ(canonical_config(back), text);
  for (const auto& key : config_keys()) EXPECT_NE(text.find(key.name + " = "), std::string::npos) << key.name;
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(FormatNumber, SixSignificantDigitsWithDot) {
  EXPECT_EQ(format_number(0.0), "0");
  EXPECT_EQ(format_number(21.44), "21.44");
  EXPECT_EQ(format_number(0.1234567), "0.123457");
  EXPECT_EQ(format_number(123456789.0), "1.23457e+08");
  EXPECT_EQ(format_number(-2.5), "-2.5");
  EXPECT_EQ(format_number(40), "40");
}

TEST(Split, RoundTripUsesOriginalIds) {
  const RatingLog log = [] {
    std::istringstream in(synthetic_csv(SyntheticSpec{}));
    return parse_ratings(in, RatingFormat::Csv);
  }();
  const UserSplit split = split_users(log, {0.7, 0.1, 0.2}, 5);
  std::ostringstream out;
  write_split(out, log, split);
  EXPECT_EQ(out.str().rfind("user,set\n", 0), 0u);
  EXPECT_NE(out.str().find("100,"), std::string::npos);
  std::istringstream in(out.str());
  const UserSplit back = read_split(in, log);
  auto sorted = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(back.train, sorted(split.train));
  EXPECT_EQ(back.valid, sorted(split.valid));
  EXPECT_EQ(back.test, sorted(split.test));
}

TEST(Split, RejectsUnknownAndRepeatedUsers) {
  std::istringstream in(synthetic_csv(SyntheticSpec{}));
  const RatingLog log = parse_ratings(in, RatingFormat::Csv);
  std::istringstream unknown("user,set\n99999,train\n");
  EXPECT_THROW(read_split(unknown, log), ParseError);
  std::istringstream twice("user,set\n100,train\n100,test\n");
  EXPECT_THROW(read_split(twice, log), ParseError);
  std::istringstream bad_set("user,set\n100,holdout\n");
  EXPECT_THROW(read_split(bad_set, log), ParseError);
}

TEST(Baselines, RandomMatchesHypergeometricExpectation) {
  SyntheticSpec spec;
  spec.users = 2000;
  spec.items = 40;
  spec.min_rated = 8;
  spec.max_rated = 30;
  std::istringstream in(synthetic_csv(spec));
  const RatingLog log = parse_ratings(in, RatingFormat::Csv);
  std::vector<int> users(static_cast<std::size_t>(log.n_users()));
  std::iota(users.begin(), users.end(), 0);
  const int t = 5;
  double expected = 0, variance = 0;
  for (int u : users) {
    const double n = static_cast<double>(log.ratings_of(u).size());
    const double s = satisfied_count(log, u);
    expected += t * s / n;
    variance += t * (s / n) * (1 - s / n) * (n - t) / (n - 1);
  }
  const double m = static_cast<double>(users.size());
  expected /= m;
  const double se = std::sqrt(variance) / m;
  const auto result = evaluate(random_policy(3), log, users, EvaluateOptions{t, 0.5, nullptr, 1, false});
  ASSERT_EQ(result.rows.back().horizon, t);
  EXPECT_LT(std::abs(result.rows.back().precision - expected), 4 * se)
      << "observed " << result.rows.back().precision << " expected " << expected << " se " << se;
}

TEST(Baselines, PopFollowsTrainingCountsOverValidItems) {
  // Train counts: item 1 -> 3, item 2 -> 2, items 3 and 4 -> 1, item 5 -> 0.
  const std::string csv =
      "user,item,rating\n"
      "1,1,3\n1,2,4\n1,3,2\n"
      "2,1,5\n2,2,1\n"
      "3,1,4\n3,4,2\n"
      "4,5,5\n4,4,4\n4,2,2\n4,3,5\n";
  std::istringstream in(csv);
  const RatingLog log = parse_ratings(in, RatingFormat::Csv);
  const std::vector<int> train{*log.dense_user(1), *log.dense_user(2), *log.dense_user(3)};
  const int test = *log.dense_user(4);
  const auto result = evaluate(pop_policy(PopTable::from_log(log, train)), log, {test},
                               EvaluateOptions{5, 0.5, nullptr, 1, false});
  std::vector<std::int64_t> shown;
  for (const auto& step : result.traces.front().steps) shown.push_back(log.original_item(step.item));
  // Item 3 precedes item 4 on the count tie because it has the lower index.
  EXPECT_EQ(shown, (std::vector<std::int64_t>{2, 3, 4, 5}));
  EXPECT_DOUBLE_EQ(result.rows.back().precision, 3.0);
  EXPECT_DOUBLE_EQ(result.rows.back().recall, 1.0);
}

TEST(MetricsCsv, LeavesUnrequestedColumnsEmpty) {
  std::ostringstream out;
  write_metrics_csv(out, "pop", {MetricRow{5, 2.5, 0.25, 0}, MetricRow{10, 4.123456789, 0.5, 0}},
                    {"precision", "recall"}, 9);
  EXPECT_EQ(out.str(),
            "policy,T,precision,recall,alpha_ndcg,seed\n"
            "pop,5,2.5,0.25,,9\n"
            "pop,10,4.12346,0.5,,9\n");
}

TEST(Compare, SideBySideColumns) {
  std::istringstream a("policy,T,precision,recall,alpha_ndcg,seed\npop,5,2.5,0.25,,1\npop,10,4,0.5,,1\n");
  std::istringstream b("policy,T,precision,recall,alpha_ndcg,seed\nnicf,5,3,0.3,,1\nnicf,10,5,0.6,,1\n");
  const std::vector<MetricsTable> tables{read_metrics_csv(a, "pop"), read_metrics_csv(b, "nicf")};
  std::ostringstream csv, text;
  compare_tables(tables, csv, text);
  EXPECT_EQ(csv.str(),
            "metric,T,pop,nicf\n"
            "precision,5,2.5,3\n"
            "precision,10,4,5\n"
            "recall,5,0.25,0.3\n"
            "recall,10,0.5,0.6\n");
  EXPECT_NE(text.str().find("nicf"), std::string::npos);
}

TEST(Compare, RejectsMismatchedHorizonsAndSingleBundle) {
  std::istringstream a("policy,T,precision,recall,alpha_ndcg,seed\npop,5,2.5,0.25,,1\n");
  std::istringstream b("policy,T,precision,recall,alpha_ndcg,seed\nnicf,10,3,0.3,,1\n");
  const std::vector<MetricsTable> tables{read_metrics_csv(a, "pop"), read_metrics_csv(b, "nicf")};
  std::ostringstream csv, text;
  EXPECT_THROW(compare_tables(tables, csv, text), std::invalid_argument);
  EXPECT_THROW(compare_tables({tables.front()}, csv, text), std::invalid_argument);
  std::istringstream bad("user,item\n");
  EXPECT_THROW(read_metrics_csv(bad, "x"), std::runtime_error);
}

TEST(Demo, ScriptedSessions) {
  const QNetParams params = QNetParams::init(QNetShape{6, 4, 1, 5}, 2);
  auto title = [](int item) { return "film " + std::to_string(item); };
  {
    std::istringstream in("5,3,quit\n");
    std::ostringstream out;
    const DemoResult r = demo_session(params, title, 10, in, out);
    EXPECT_EQ(r.steps, 2);
    EXPECT_EQ(r.satisfied, 1);
    EXPECT_NE(out.str().find("session over: 2 steps, precision 1"), std::string::npos);
  }
  {
    std::istringstream in("quit\n");
    std::ostringstream out;
    const DemoResult r = demo_session(params, title, 10, in, out);
    EXPECT_EQ(r.steps, 0);
    EXPECT_NE(out.str().find("session over: 0 steps, precision 0"), std::string::npos);
  }
  {
    std::istringstream in("7\nfour\n4\nq\n");
    std::ostringstream out;
    const DemoResult r = demo_session(params, title, 10, in, out);
    EXPECT_EQ(r.steps, 1);
    EXPECT_EQ(r.satisfied, 1);
    const std::string text = out.str();
    std::size_t reprompts = 0;
    for (std::size_t p = text.find("expected a whole number"); p != std::string::npos;
         p = text.find("expected a whole number", p + 1))
      ++reprompts;
    EXPECT_EQ(reprompts, 2u);
  }
  {
    // Every item shown once, then the session ends on its own.
    std::istringstream in("1 2 3 4 5 5 5 5\n");
    std::ostringstream out;
    const DemoResult r = demo_session(params, title, 40, in, out);
    EXPECT_EQ(r.steps, 6);
    EXPECT_EQ(r.satisfied, 3);
  }
}

TEST(RunExperiment, BundleFilesAndManifest) {
  TempDir dir("bundle");
  const ExperimentConfig cfg = small_run(dir, PolicyKind::Pop, "pop");
  const RunSummary s = run_experiment(cfg, RunMode::Train);
  EXPECT_EQ(s.rows.back().horizon, 10);
  const std::string metrics = read_text(dir.file("pop/metrics.csv"));
  EXPECT_EQ(metrics.rfind("policy,T,precision,recall,alpha_ndcg,seed\npop,5,", 0), 0u);
  const std::string manifest = read_text(dir.file("pop/manifest.txt"));
  EXPECT_NE(manifest.find("# config_hash = " + config_hash(cfg)), std::string::npos);
  EXPECT_NE(manifest.find(canonical_config(cfg)), std::string::npos);
}

TEST(RunExperiment, RepeatedRunsAreByteIdentical) {
  TempDir dir("repeat");
  for (PolicyKind kind : {PolicyKind::Random, PolicyKind::Nicf, PolicyKind::PmfTs, PolicyKind::PmfUcb}) {
    const std::string name = to_string(kind);
    ExperimentConfig a = small_run(dir, kind, name + "_a");
    ExperimentConfig b = small_run(dir, kind, name + "_b");
    run_experiment(a, RunMode::Train, 1);
    run_experiment(b, RunMode::Train, 3);
    EXPECT_EQ(read_text(a.out_dir + "/metrics.csv"), read_text(b.out_dir + "/metrics.csv")) << name;
    if (kind == PolicyKind::Nicf)
      EXPECT_EQ(read_text(a.out_dir + "/training_log.csv"), read_text(b.out_dir + "/training_log.csv"));
  }
}

TEST(RunExperiment, EvaluateReproducesTrainedCheckpoint) {
  TempDir dir("evaluate");
  for (PolicyKind kind : {PolicyKind::Nicf, PolicyKind::MfGreedy}) {
    const std::string name = to_string(kind);
    const ExperimentConfig trained = small_run(dir, kind, name + "_train");
    run_experiment(trained, RunMode::Train);
    ExperimentConfig eval = small_run(dir, kind, name + "_eval");
    eval.checkpoint = trained.out_dir + (kind == PolicyKind::Nicf ? "/qnet.ckpt" : "/pmf.ckpt");
    run_experiment(eval, RunMode::Evaluate);
    EXPECT_EQ(read_text(trained.out_dir + "/metrics.csv"), read_text(eval.out_dir + "/metrics.csv")) << name;
  }
}

TEST(RunExperiment, ConfigErrorsSurfaceBeforeWork) {
  TempDir dir("errors");
  ExperimentConfig cfg = small_run(dir, PolicyKind::Nicf, "x");
  cfg.data_path = dir.file("missing.csv");
  EXPECT_THROW(run_experiment(cfg, RunMode::Train), ConfigError);
  cfg = small_run(dir, PolicyKind::Nicf, "x");
  EXPECT_THROW(run_experiment(cfg, RunMode::Evaluate), ConfigError);  // no checkpoint
  cfg.metrics = {"alpha_ndcg"};
  EXPECT_THROW(run_experiment(cfg, RunMode::Train), ConfigError);
}

TEST(RunPrepare, WritesSplitThatRunsCanReuse) {
  TempDir dir("prepare");
  ExperimentConfig cfg = small_run(dir, PolicyKind::Pop, "prepared");
  run_prepare(cfg);
  const std::string split = dir.file("prepared/split.csv");
  ASSERT_TRUE(std::filesystem::exists(split));
  ExperimentConfig direct = small_run(dir, PolicyKind::Pop, "direct");
  ExperimentConfig reuse = small_run(dir, PolicyKind::Pop, "reuse");
  reuse.split_path = split;
  run_experiment(direct, RunMode::Train);
  run_experiment(reuse, RunMode::Train);
  EXPECT_EQ(read_text(direct.out_dir + "/metrics.csv"), read_text(reuse.out_dir + "/metrics.csv"));
}

TEST(RunCompare, WritesComparisonCsv) {
  TempDir dir("compare");
  const ExperimentConfig pop = small_run(dir, PolicyKind::Pop, "pop");
  const ExperimentConfig rnd = small_run(dir, PolicyKind::Random, "random");
  run_experiment(pop, RunMode::Train);
  run_experiment(rnd, RunMode::Train);
  std::ostringstream text;
  run_compare({pop.out_dir, rnd.out_dir}, dir.file("cmp"), text);
  const std::string csv = read_text(dir.file("cmp/comparison.csv"));
  EXPECT_EQ(csv.rfind("metric,T,pop,random\n", 0), 0u);
  EXPECT_THROW(run_compare({pop.out_dir}, "", text), std::invalid_argument);
}

#include "nicf/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <locale>
#include <sstream>

#ifndef NICF_VERSION
#define NICF_VERSION "0.0.0"
#endif

namespace nicf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config: " + key + " = '" + value + "': expected " + expected);
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& value) {
  Int out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, "an integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0;
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty() || !std::isfinite(out)) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string real_text(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_name(RatingFormat f) { return f == RatingFormat::Csv ? "csv" : "movielens_dat"; }

using Cfg = ExperimentConfig;

ConfigKey text_key(std::string name, std::string help, std::string Cfg::*field) {
  return {std::move(name), std::move(help), [field](Cfg& c, const std::string& v) { c.*field = v; },
          [field](const Cfg& c) { return c.*field; }};
}

template <typename Owner, typename Int>
ConfigKey int_key(std::string name, std::string help, Owner Cfg::*owner, Int Owner::*field) {
  const std::string key = name;
  return {std::move(name), std::move(help),
          [=](Cfg& c, const std::string& v) { (c.*owner).*field = parse_integer<Int>(key, v); },
          [=](const Cfg& c) { return std::to_string((c.*owner).*field); }};
}

template <typename Int>
ConfigKey int_key(std::string name, std::string help, Int Cfg::*field) {
  const std::string key = name;
  return {std::move(name), std::move(help), [=](Cfg& c, const std::string& v) { c.*field = parse_integer<Int>(key, v); },
          [=](const Cfg& c) { return std::to_string(c.*field); }};
}

template <typename Owner>
ConfigKey real_key(std::string name, std::string help, Owner Cfg::*owner, double Owner::*field) {
  const std::string key = name;
  return {std::move(name), std::move(help), [=](Cfg& c, const std::string& v) { (c.*owner).*field = parse_real(key, v); },
          [=](const Cfg& c) { return real_text((c.*owner).*field); }};
}

ConfigKey real_key(std::string name, std::string help, double Cfg::*field) {
  const std::string key = name;
  return {std::move(name), std::move(help), [=](Cfg& c, const std::string& v) { c.*field = parse_real(key, v); },
          [=](const Cfg& c) { return real_text(c.*field); }};
}

ConfigKey bool_key(std::string name, std::string help, bool Cfg::*field) {
  const std::string key = name;
  return {std::move(name), std::move(help), [=](Cfg& c, const std::string& v) { c.*field = parse_bool(key, v); },
          [=](const Cfg& c) { return std::string(c.*field ? "true" : "false"); }};
}

ConfigKey fraction_key(std::string name, std::string help, std::size_t index) {
  const std::string key = name;
  return {std::move(name), std::move(help),
          [=](Cfg& c, const std::string& v) { c.split_fractions[index] = parse_real(key, v); },
          [=](const Cfg& c) { return real_text(c.split_fractions[index]); }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back(text_key("data.path", "rating log file", &Cfg::data_path));
  k.push_back({"data.format", "rating log format: csv or movielens_dat",
               [](Cfg& c, const std::string& v) {
                 try {
                   c.data_format = parse_rating_format(v);
                 } catch (const std::exception&) {
                   bad_value("data.format", v, "csv or movielens_dat");
                 }
               },
               [](const Cfg& c) { return format_name(c.data_format); }});
  k.push_back(int_key("data.max_rating", "largest rating value", &Cfg::max_rating));
  k.push_back(text_key("data.topics", "item,topic CSV for alpha-NDCG", &Cfg::topics_path));
  k.push_back(text_key("data.titles", "item,title CSV for the demo", &Cfg::titles_path));
  k.push_back(text_key("data.split", "split.csv written by prepare (overrides split.*)", &Cfg::split_path));
  k.push_back(fraction_key("split.train", "fraction of users used for training", 0));
  k.push_back(fraction_key("split.valid", "fraction of users used for validation", 1));
  k.push_back(fraction_key("split.test", "fraction of users used for testing", 2));
  k.push_back(int_key("split.seed", "user split seed", &Cfg::split_seed));
  k.push_back({"run.policy", "nicf, random, pop, mf_greedy, pmf_eps, pmf_ts or pmf_ucb",
               [](Cfg& c, const std::string& v) {
                 try {
                   c.policy = parse_policy(v);
                 } catch (const std::exception&) {
                   bad_value("run.policy", v, "nicf, random, pop, mf_greedy, pmf_eps, pmf_ts or pmf_ucb");
                 }
               },
               [](const Cfg& c) { return to_string(c.policy); }});
  k.push_back(int_key("run.seed", "seed for training and stochastic policies", &Cfg::seed));
  k.push_back(text_key("run.out", "output directory", &Cfg::out_dir));
  k.push_back(text_key("run.checkpoint", "checkpoint to evaluate or demo", &Cfg::checkpoint));
  k.push_back(int_key("eval.horizon", "episode length T", &Cfg::horizon));
  k.push_back(real_key("eval.alpha", "alpha-NDCG redundancy penalty", &Cfg::alpha));
  k.push_back({"eval.metrics", "comma list of precision, recall, alpha_ndcg",
               [](Cfg& c, const std::string& v) { c.metrics = split_list(v); },
               [](const Cfg& c) {
                 std::string s;
                 for (const auto& m : c.metrics) s += (s.empty() ? "" : ",") + m;
                 return s;
               }});
  k.push_back(bool_key("eval.curve", "also write curve.csv for every t", &Cfg::curve));
  k.push_back(int_key("eval.max_users", "evaluate at most this many test users (0: all)", &Cfg::max_eval_users));
  k.push_back(int_key("train.epochs", "curriculum epochs E", &Cfg::train, &TrainConfig::epochs));
  k.push_back(real_key("train.eta", "curriculum exponent", &Cfg::train, &TrainConfig::eta));
  k.push_back(int_key("train.batch_size", "TD mini-batch size", &Cfg::train, &TrainConfig::batch_size));
  k.push_back(real_key("train.learning_rate", "Adam learning rate", &Cfg::train, &TrainConfig::learning_rate));
  k.push_back(int_key("train.dim", "embedding dimension", &Cfg::train, &TrainConfig::dim));
  k.push_back(int_key("train.blocks", "attention blocks per channel", &Cfg::train, &TrainConfig::blocks));
  k.push_back(real_key("train.epsilon_start", "exploration rate at the first step", &Cfg::train,
                       &TrainConfig::epsilon_start));
  k.push_back(real_key("train.epsilon_end", "exploration rate at the last step", &Cfg::train,
                       &TrainConfig::epsilon_end));
  k.push_back({"train.reward", "binary or raw",
               [](Cfg& c, const std::string& v) {
                 try {
                   c.train.reward_mode = parse_reward_mode(v);
                 } catch (const std::exception&) {
                   bad_value("train.reward", v, "binary or raw");
                 }
               },
               [](const Cfg& c) { return to_string(c.train.reward_mode); }});
  k.push_back(int_key("train.episodes_per_epoch", "episodes per epoch (0: one per training user)", &Cfg::train,
                      &TrainConfig::episodes_per_epoch));
  k.push_back(int_key("train.replay_capacity", "replay buffer size", &Cfg::train, &TrainConfig::replay_capacity));
  k.push_back(int_key("train.updates_per_step", "TD updates per environment step", &Cfg::train,
                      &TrainConfig::updates_per_step));
  k.push_back(int_key("train.update_every", "environment steps between update rounds", &Cfg::train,
                      &TrainConfig::update_every));
  k.push_back(int_key("train.patience", "early stopping patience in epochs (0: off)", &Cfg::train,
                      &TrainConfig::patience));
  k.push_back(int_key("train.target_sync", "target network sync interval in updates (0: online targets)",
                      &Cfg::train, &TrainConfig::target_sync_interval));
  k.push_back(int_key("pmf.dim", "PMF latent dimension", &Cfg::pmf, &PmfOptions::dim));
  k.push_back(real_key("pmf.noise_var", "rating noise variance", &Cfg::pmf, &PmfOptions::noise_var));
  k.push_back(real_key("pmf.prior_var", "latent factor prior variance", &Cfg::pmf, &PmfOptions::prior_var));
  k.push_back(int_key("pmf.iters", "alternating least squares sweeps", &Cfg::pmf, &PmfOptions::iters));
  k.push_back(real_key("pmf.epsilon", "exploration rate of pmf_eps", &Cfg::pmf_epsilon));
  k.push_back(real_key("pmf.ucb_c", "GLM-UCB exploration constant", &Cfg::ucb_c));
  k.push_back(bool_key("pmf.tune_c", "pick pmf.ucb_c from pmf.ucb_grid on validation users", &Cfg::tune_ucb_c));
  k.push_back({"pmf.ucb_grid", "comma list of candidate GLM-UCB constants",
               [](Cfg& c, const std::string& v) {
                 c.ucb_grid.clear();
                 for (const auto& item : split_list(v)) c.ucb_grid.push_back(parse_real("pmf.ucb_grid", item));
               },
               [](const Cfg& c) {
                 std::string s;
                 for (double x : c.ucb_grid) s += (s.empty() ? "" : ",") + real_text(x);
                 return s;
               }});
  return k;
}

}  // namespace

PolicyKind parse_policy(const std::string& name) {
  if (name == "nicf") return PolicyKind::Nicf;
  if (name == "random") return PolicyKind::Random;
  if (name == "pop") return PolicyKind::Pop;
  if (name == "mf_greedy") return PolicyKind::MfGreedy;
  if (name == "pmf_eps") return PolicyKind::PmfEps;
  if (name == "pmf_ts") return PolicyKind::PmfTs;
  if (name == "pmf_ucb") return PolicyKind::PmfUcb;
  throw std::invalid_argument("unknown policy '" + name + "'");
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Nicf: return "nicf";
    case PolicyKind::Random: return "random";
    case PolicyKind::Pop: return "pop";
    case PolicyKind::MfGreedy: return "mf_greedy";
    case PolicyKind::PmfEps: return "pmf_eps";
    case PolicyKind::PmfTs: return "pmf_ts";
    case PolicyKind::PmfUcb: return "pmf_ucb";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  double total = 0;
  for (double f : split_fractions) {
    if (f < 0) throw ConfigError("config: split fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("config: split fractions must sum to 1");
  if (max_rating < 1) throw ConfigError("config: data.max_rating must be >= 1");
  if (horizon < 1) throw ConfigError("config: eval.horizon must be >= 1");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("config: eval.alpha must lie in (0, 1)");
  if (max_eval_users < 0) throw ConfigError("config: eval.max_users must be >= 0");
  if (metrics.empty()) throw ConfigError("config: eval.metrics is empty");
  for (const auto& m : metrics) {
    if (m != "precision" && m != "recall" && m != "alpha_ndcg") throw ConfigError("config: unknown metric '" + m + "'");
    if (m == "alpha_ndcg" && topics_path.empty())
      throw ConfigError("config: eval.metrics includes alpha_ndcg but data.topics is not set");
  }
  TrainConfig t = train;
  t.horizon = horizon;
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (pmf.dim < 1) throw ConfigError("config: pmf.dim must be >= 1");
  if (!(pmf.noise_var > 0) || !(pmf.prior_var > 0)) throw ConfigError("config: pmf variances must be > 0");
  if (pmf.iters < 0) throw ConfigError("config: pmf.iters must be >= 0");
  if (pmf_epsilon < 0 || pmf_epsilon > 1) throw ConfigError("config: pmf.epsilon must lie in [0, 1]");
  if (ucb_c < 0) throw ConfigError("config: pmf.ucb_c must be >= 0");
  if (ucb_grid.empty()) throw ConfigError("config: pmf.ucb_grid is empty");
  for (double c : ucb_grid) {
    if (c < 0) throw ConfigError("config: pmf.ucb_grid values must be >= 0");
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void apply_config(ExperimentConfig& cfg, std::istream& in) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  apply_config(cfg, in);
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // The output directory does not change results, so it stays out of the hash.
  ExperimentConfig probe = cfg;
  probe.out_dir.clear();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical_config(probe)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string code_version() { return NICF_VERSION; }

std::string format_number(double value) {
  if (value == 0) return "0";
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << std::setprecision(6) << value;
  return s.str();
}

}  // namespace nicf

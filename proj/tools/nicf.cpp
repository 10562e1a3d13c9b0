// Command-line front end: prepare, train, evaluate, compare, demo.

#include "nicf/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <thread>

namespace {

struct Overrides {
  std::string config;
  std::map<std::string, std::string> values;  // key -> raw text
  std::map<std::string, CLI::Option*> options;
};

// Registers --config, the short flags and one --<key> option per config key.
void add_config_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key = value configuration file");
  cmd->add_option("--seed", o.values["run.seed"], "same as --run.seed");
  cmd->add_option("--policy", o.values["run.policy"], "same as --run.policy");
  cmd->add_option("--out", o.values["run.out"], "same as --run.out");
  for (const auto& key : nicf::config_keys()) {
    o.options[key.name] = cmd->add_option("--" + key.name, o.values["--" + key.name], key.help)->group("Config keys");
  }
}

nicf::ExperimentConfig resolve(const Overrides& o, CLI::App* cmd) {
  nicf::ExperimentConfig cfg;
  if (!o.config.empty()) nicf::apply_config_file(cfg, o.config);
  for (const auto& [name, opt] : o.options) {
    if (opt->count() > 0) nicf::set_config_value(cfg, name, o.values.at("--" + name));
  }
  for (const char* key : {"run.seed", "run.policy", "run.out"}) {
    const std::string flag = std::string("--") + (std::string(key).substr(4));
    if (cmd->get_option(flag)->count() > 0) nicf::set_config_value(cfg, key, o.values.at(key));
  }
  return cfg;
}

int worker_count() {
  const char* env = std::getenv("NICF_WORKERS");
  if (env && *env) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw nicf::ConfigError(std::string("NICF_WORKERS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive recommendation laboratory"};
  app.require_subcommand(1);

  Overrides prepare_o, train_o, evaluate_o, demo_o;
  CLI::App* prepare = app.add_subcommand("prepare", "load a rating log and write the user split");
  add_config_options(prepare, prepare_o);
  CLI::App* train = app.add_subcommand("train", "fit a policy and evaluate it on the test users");
  add_config_options(train, train_o);
  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint or a fixed policy");
  add_config_options(evaluate, evaluate_o);
  CLI::App* demo = app.add_subcommand("demo", "play the user against a trained Q-network");
  add_config_options(demo, demo_o);

  std::vector<std::string> compare_dirs;
  std::string compare_out;
  CLI::App* compare = app.add_subcommand("compare", "side-by-side table of result directories");
  compare->add_option("runs", compare_dirs, "result directories")->required()->expected(2, -1);
  compare->add_option("--out", compare_out, "directory for comparison.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) {
      nicf::run_prepare(resolve(prepare_o, prepare), &std::cout);
    } else if (*train) {
      nicf::run_experiment(resolve(train_o, train), nicf::RunMode::Train, worker_count(), &std::cout);
    } else if (*evaluate) {
      nicf::run_experiment(resolve(evaluate_o, evaluate), nicf::RunMode::Evaluate, worker_count(), &std::cout);
    } else if (*compare) {
      nicf::run_compare(compare_dirs, compare_out, std::cout);
    } else if (*demo) {
      const nicf::ExperimentConfig cfg = resolve(demo_o, demo);
      if (cfg.checkpoint.empty()) throw nicf::ConfigError("config: run.checkpoint is not set");
      const nicf::QNetParams params = nicf::load_qnet(cfg.checkpoint);
      std::map<int, std::string> titles;
      if (!cfg.data_path.empty()) {
        const nicf::RatingLog log = nicf::load_ratings(cfg.data_path, cfg.data_format, cfg.max_rating);
        if (log.n_items() != params.shape.n_items)
          throw nicf::ConfigError("checkpoint item count does not match the rating log");
        if (!cfg.titles_path.empty()) titles = nicf::load_titles(cfg.titles_path, log);
        for (int i = 0; i < log.n_items(); ++i) {
          if (!titles.count(i)) titles[i] = "item " + std::to_string(log.original_item(i));
        }
      }
      auto title = [&](int item) {
        const auto it = titles.find(item);
        return it != titles.end() ? it->second : "item #" + std::to_string(item);
      };
      nicf::demo_session(params, title, cfg.horizon, std::cin, std::cout);
    }
  } catch (const nicf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

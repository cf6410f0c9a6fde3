#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpnorm/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Train, compress and evaluate CP-normalized networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> flags;
  std::vector<std::string> rank_flags;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"estimate-ranks", "Estimate the CP rank of every freshly initialized layer"},
      {"train", "Train a model and write metrics, lambda trajectories and a checkpoint"},
      {"compress", "Truncate a CP checkpoint by lambda magnitude and fine-tune it"},
      {"eval", "Evaluate a checkpoint on the test split"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value configuration file");
    for (const auto& key : cpnorm::config_keys()) {
      std::string names = "--" + key;
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != key) names += ",--" + dashed;
      sub->add_option_function<std::string>(names, [&flags, key](const std::string& v) { flags[key] = v; },
                                            "overrides " + key);
    }
    sub->add_option("--rank", rank_flags, "rank override LAYER=R (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 2);
  }

  cpnorm::RunConfig config;
  try {
    if (!config_path.empty()) cpnorm::apply_config_file(config, config_path);
    for (const auto& [key, value] : flags) cpnorm::apply_setting(config, key, value);
    for (const auto& r : rank_flags) {
      const auto eq = r.find('=');
      if (eq == std::string::npos) throw cpnorm::ConfigError("--rank expects LAYER=R, got " + r);
      cpnorm::apply_setting(config, "rank." + r.substr(0, eq), r.substr(eq + 1));
    }
    cpnorm::apply_preset(config);
  } catch (const cpnorm::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  }
  return cpnorm::run_command(app.get_subcommands().front()->get_name(), config, std::cout, std::cerr);
}

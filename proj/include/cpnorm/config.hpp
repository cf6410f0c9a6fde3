#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpnorm/cp.hpp"
#include "cpnorm/model.hpp"
#include "cpnorm/optim.hpp"

namespace cpnorm {

/// Invalid configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { mnist, cifar10 };
DatasetKind parse_dataset(const std::string& name);
std::string to_string(DatasetKind d);

struct RunConfig {
  Architecture architecture = Architecture::lenet;
  DatasetKind dataset = DatasetKind::mnist;
  Normalization normalization = Normalization::cp;
  InitMode init = InitMode::power;
  LambdaInit lambda_init = LambdaInit::ones;
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  double lr = 0.001;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  double fit_threshold = 0.999;
  std::map<std::string, std::size_t> ranks;
  std::string out = "runs/default";
  std::string data_dir = "data";
  /// Early stopping on validation accuracy; 0 disables it.
  std::size_t patience = 0;
  double val_fraction = 0.1;
  /// Cap on training images before the validation split; 0 keeps all.
  std::size_t max_train = 0;
  std::string preset;
  std::size_t histogram_bins = 20;

  // compress / eval
  std::string checkpoint;
  double rate = 0.25;
  std::size_t fine_tune_epochs = 20;
  /// 0 selects the rate-dependent default.
  double fine_tune_lr = 0.0;
  bool select_lr = false;

  /// Keys assigned by a file or a flag.
  std::set<std::string> explicit_keys;
};

/// Every accepted key, as used in files and as `--key` flags.
const std::vector<std::string>& config_keys();

/// Assigns one key; `rank.<layer>` sets a rank override. Throws ConfigError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// `key = value` lines; `#` starts a comment; blank lines ignored.
void apply_config_file(RunConfig& config, const std::string& path);

/// desk: epochs capped at 5, training images capped at 20% of the canonical
/// training split, 3 seeds unless given. paper: full-scale epochs and the
/// full training split.
void apply_preset(RunConfig& config);

/// Cross-field checks; throws ConfigError.
void validate(const RunConfig& config);

/// key = value listing of every field, in config_keys() order.
std::string config_to_text(const RunConfig& config);

}  // namespace cpnorm

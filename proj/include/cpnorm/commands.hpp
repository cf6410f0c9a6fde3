#pragma once

#include <ostream>
#include <string>

#include "cpnorm/config.hpp"
#include "cpnorm/data.hpp"

namespace cpnorm {

struct Splits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Loads the configured dataset from data_dir (or its mnist/ or
/// cifar-10-batches-bin/ subdirectory), caps the training rows at max_train
/// and splits off the validation rows. Throws DataError.
Splits load_splits(const RunConfig& config);

/// Each command writes its files under config.out and a readable summary to
/// `log`. Errors propagate as ConfigError, DataError or DivergenceError.
void cmd_estimate_ranks(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_compress(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log);

/// Runs `name` with exception-to-exit-code mapping: 0 success, 2 config,
/// 3 data, 4 divergence, 1 anything else.
int run_command(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err);

}  // namespace cpnorm

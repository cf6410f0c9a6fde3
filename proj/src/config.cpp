#include "cpnorm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace cpnorm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean '" + value + "' for " + key);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class Fn>
auto wrap(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

DatasetKind parse_dataset(const std::string& name) {
  if (name == "mnist") return DatasetKind::mnist;
  if (name == "cifar10") return DatasetKind::cifar10;
  throw std::invalid_argument("unknown dataset '" + name + "' (expected mnist or cifar10)");
}

std::string to_string(DatasetKind d) { return d == DatasetKind::mnist ? "mnist" : "cifar10"; }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "architecture", "dataset",  "normalization", "init",         "lambda_init",
      "optimizer",    "lr",       "epochs",        "batch_size",   "seed",
      "seeds",        "fit_threshold", "out",      "data_dir",     "patience",
      "val_fraction", "max_train", "preset",       "histogram_bins", "checkpoint",
      "rate",         "fine_tune_epochs", "fine_tune_lr", "select_lr"};
  return keys;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key.rfind("rank.", 0) == 0) {
    const auto rank = parse_number<std::size_t>(key, value);
    if (rank == 0) throw ConfigError(key + " must be >= 1");
    c.ranks[key.substr(5)] = rank;
  } else if (key == "architecture") {
    c.architecture = wrap(key, [&] { return parse_architecture(value); });
  } else if (key == "dataset") {
    c.dataset = wrap(key, [&] { return parse_dataset(value); });
  } else if (key == "normalization") {
    c.normalization = wrap(key, [&] { return parse_normalization(value); });
  } else if (key == "init") {
    c.init = wrap(key, [&] { return parse_init_mode(value); });
  } else if (key == "lambda_init") {
    c.lambda_init = wrap(key, [&] { return parse_lambda_init(value); });
  } else if (key == "optimizer") {
    c.optimizer = wrap(key, [&] { return parse_optimizer(value); });
  } else if (key == "lr") {
    c.lr = parse_number<double>(key, value);
  } else if (key == "epochs") {
    c.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "batch_size") {
    c.batch_size = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "seeds") {
    c.seeds = parse_number<std::size_t>(key, value);
  } else if (key == "fit_threshold") {
    c.fit_threshold = parse_number<double>(key, value);
  } else if (key == "out") {
    c.out = value;
  } else if (key == "data_dir") {
    c.data_dir = value;
  } else if (key == "patience") {
    c.patience = parse_number<std::size_t>(key, value);
  } else if (key == "val_fraction") {
    c.val_fraction = parse_number<double>(key, value);
  } else if (key == "max_train") {
    c.max_train = parse_number<std::size_t>(key, value);
  } else if (key == "preset") {
    if (value != "desk" && value != "paper" && !value.empty()) {
      throw ConfigError("unknown preset '" + value + "' (expected desk or paper)");
    }
    c.preset = value;
  } else if (key == "histogram_bins") {
    c.histogram_bins = parse_number<std::size_t>(key, value);
  } else if (key == "checkpoint") {
    c.checkpoint = value;
  } else if (key == "rate") {
    c.rate = parse_number<double>(key, value);
  } else if (key == "fine_tune_epochs") {
    c.fine_tune_epochs = parse_number<std::size_t>(key, value);
  } else if (key == "fine_tune_lr") {
    c.fine_tune_lr = parse_number<double>(key, value);
  } else if (key == "select_lr") {
    c.select_lr = parse_bool(key, value);
  } else {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
  c.explicit_keys.insert(key);
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_preset(RunConfig& c) {
  const bool mnist = c.dataset == DatasetKind::mnist;
  if (c.preset == "desk") {
    c.epochs = std::min<std::size_t>(c.epochs, 5);
    const std::size_t cap = mnist ? 12000 : 10000;
    c.max_train = c.max_train == 0 ? cap : std::min(c.max_train, cap);
    if (!c.explicit_keys.count("seeds")) c.seeds = 3;
  } else if (c.preset == "paper") {
    if (!c.explicit_keys.count("epochs")) c.epochs = c.architecture == Architecture::lenet ? 50 : 150;
    if (!c.explicit_keys.count("max_train")) c.max_train = 0;
  }
}

void validate(const RunConfig& c) {
  if (!c.ranks.empty() && c.normalization != Normalization::cp) {
    throw ConfigError("rank overrides require normalization = cp");
  }
  if (!(c.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (c.seeds == 0) throw ConfigError("seeds must be >= 1");
  if (!(c.fit_threshold > 0.0 && c.fit_threshold <= 1.0)) throw ConfigError("fit_threshold must lie in (0, 1]");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (!(c.rate >= 0.0 && c.rate < 1.0)) throw ConfigError("rate must lie in [0, 1)");
  if (c.fine_tune_lr < 0.0) throw ConfigError("fine_tune_lr must be >= 0");
  if (c.histogram_bins == 0) throw ConfigError("histogram_bins must be >= 1");
  if ((c.architecture == Architecture::lenet) != (c.dataset == DatasetKind::mnist)) {
    throw ConfigError("architecture " + to_string(c.architecture) + " does not match dataset " +
                      to_string(c.dataset) + " (lenet uses mnist, alexnet uses cifar10)");
  }
  try {
    architecture_specs(c.architecture, c.normalization, c.ranks);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string config_to_text(const RunConfig& c) {
  std::ostringstream os;
  os << "architecture = " << to_string(c.architecture) << '\n'
     << "dataset = " << to_string(c.dataset) << '\n'
     << "normalization = " << to_string(c.normalization) << '\n'
     << "init = " << to_string(c.init) << '\n'
     << "lambda_init = " << to_string(c.lambda_init) << '\n'
     << "optimizer = " << to_string(c.optimizer) << '\n'
     << "lr = " << format_double(c.lr) << '\n'
     << "epochs = " << c.epochs << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "seed = " << c.seed << '\n'
     << "seeds = " << c.seeds << '\n'
     << "fit_threshold = " << format_double(c.fit_threshold) << '\n'
     << "out = " << c.out << '\n'
     << "data_dir = " << c.data_dir << '\n'
     << "patience = " << c.patience << '\n'
     << "val_fraction = " << format_double(c.val_fraction) << '\n'
     << "max_train = " << c.max_train << '\n'
     << "preset = " << c.preset << '\n'
     << "histogram_bins = " << c.histogram_bins << '\n'
     << "checkpoint = " << c.checkpoint << '\n'
     << "rate = " << format_double(c.rate) << '\n'
     << "fine_tune_epochs = " << c.fine_tune_epochs << '\n'
     << "fine_tune_lr = " << format_double(c.fine_tune_lr) << '\n'
     << "select_lr = " << (c.select_lr ? "true" : "false") << '\n';
  for (const auto& [layer, rank] : c.ranks) os << "rank." << layer << " = " << rank << '\n';
  return os.str();
}

}  // namespace cpnorm

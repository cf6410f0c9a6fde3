#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "cpnorm/compress.hpp"
#include "cpnorm/config.hpp"
#include "cpnorm/train.hpp"

using namespace cpnorm;
namespace fs = std::filesystem;

namespace {

// Three classes, each a noisy bright quadrant on an 8×8 image.
Dataset synthetic(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset ds;
  ds.images = Tensor({n, 1, 8, 8});
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 3);
    ds.labels.push_back(label);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        const bool on = (label == 0 && y < 4 && x < 4) || (label == 1 && y >= 4 && x >= 4) ||
                        (label == 2 && y < 4 && x >= 4);
        ds.images.at({i, 0, y, x}) = (on ? 1.0 : 0.0) + noise(rng);
      }
    }
  }
  return ds;
}

std::vector<LayerSpec> specs(Normalization norm) {
  std::vector<LayerSpec> s(6);
  s[0] = {.name = "c1", .kind = LayerKind::conv2d, .in = 1, .out = 4, .kernel = 3, .normalization = norm,
          .rank = norm == Normalization::cp ? 5u : 0u};
  s[1] = {.name = "r1", .kind = LayerKind::relu};
  s[2] = {.name = "p1", .kind = LayerKind::maxpool};
  s[3] = {.name = "f", .kind = LayerKind::flatten};
  s[4] = {.name = "d", .kind = LayerKind::dropout, .keep_prob = 0.9};
  s[5] = {.name = "l1", .kind = LayerKind::linear, .in = 36, .out = 3, .normalization = norm,
          .rank = norm == Normalization::cp ? 3u : 0u};
  return s;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cpnorm_test_train" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("training learns a separable task and writes its artifacts") {
  const Dataset data = synthetic(240, 1);
  auto [tr, val] = split_validation(data, 0.1);
  const Dataset test = synthetic(60, 2);
  for (auto norm : {Normalization::none, Normalization::weight, Normalization::cp}) {
    Model m(specs(norm), {1, 8, 8});
    m.init({InitMode::kaiming_normal, LambdaInit::ones, 3});
    const auto dir = temp_dir(to_string(norm));
    TrainOptions opt{.optimizer = OptimizerKind::adam, .lr = 0.01, .epochs = 6, .batch_size = 16, .seed = 4,
                     .out_dir = dir.string()};
    const TrainResult r = train(m, tr, &val, &test, opt);
    CHECK(r.metrics.size() == 18);
    CHECK(r.metrics.back().split == "test");
    CHECK(r.metrics.back().accuracy > 0.9);
    CHECK(r.step_losses.back() < r.step_losses.front());

    std::istringstream metrics(read_all(dir / "metrics.csv"));
    std::string header;
    std::getline(metrics, header);
    CHECK(header == "epoch,split,loss,accuracy");
    if (norm == Normalization::cp) {
      std::istringstream lam(read_all(dir / "lambda_c1.csv"));
      std::string h, first;
      std::getline(lam, h);
      std::getline(lam, first);
      CHECK(h == "step,sigma,lambda_0,lambda_1,lambda_2,lambda_3,lambda_4");
      CHECK(first == "0,1,1,1,1,1,1");
      std::size_t rows = 0;
      for (std::string line; std::getline(lam, line);) ++rows;
      CHECK(rows == 6 * 14);  // 216 images / 16 per batch = 14 steps per epoch
      CHECK(fs::exists(dir / "lambda_hist_start.csv"));
      CHECK(fs::exists(dir / "lambda_hist_end.csv"));
    } else {
      CHECK_FALSE(fs::exists(dir / "lambda_c1.csv"));
    }
  }
}

TEST_CASE("identical runs write identical files") {
  const Dataset data = synthetic(90, 5);
  auto run = [&](const std::string& name) {
    Model m(specs(Normalization::cp), {1, 8, 8});
    m.init({InitMode::power, LambdaInit::ones, 6});
    const auto dir = temp_dir(name);
    train(m, data, nullptr, nullptr, {.optimizer = OptimizerKind::rmsprop, .lr = 1e-3, .epochs = 2, .batch_size = 8, .seed = 7, .out_dir = dir.string()});
    return read_all(dir / "metrics.csv") + read_all(dir / "lambda_l1.csv") + read_all(dir / "lambda_hist_end.csv");
  };
  CHECK(run("a") == run("b"));
}

TEST_CASE("early stopping and epoch callback") {
  const Dataset data = synthetic(60, 8);
  auto [tr, val] = split_validation(data, 0.5);
  Model m(specs(Normalization::none), {1, 8, 8});
  m.init({});
  std::size_t calls = 0;
  TrainOptions opt{.optimizer = OptimizerKind::sgd, .lr = 1e-9, .epochs = 10, .batch_size = 10, .seed = 1, .patience = 2};
  opt.on_epoch_end = [&](std::size_t, Model&, const std::vector<EpochMetrics>&) { ++calls; };
  const auto r = train(m, tr, &val, nullptr, opt);
  CHECK(r.early_stopped);
  CHECK(r.epochs_run == 3);
  CHECK(calls == 3);
}

TEST_CASE("non-finite loss signals divergence") {
  const Dataset data = synthetic(30, 9);
  Model m(specs(Normalization::none), {1, 8, 8});
  m.init({});
  std::get<Tensor>(m.layer("l1").weight)[0] = NAN;
  CHECK_THROWS_AS(train(m, data, nullptr, nullptr, {.epochs = 1}), DivergenceError);
}

TEST_CASE("fine-tuning") {
  const Dataset data = synthetic(120, 10);
  auto [tr, val] = split_validation(data, 0.2);
  Model m(specs(Normalization::cp), {1, 8, 8});
  m.init({InitMode::kaiming_normal, LambdaInit::ones, 11});
  auto [small, plan] = compress_model(m, 0.5);
  auto none = fine_tune(small, 0.5, tr, &val, nullptr, {.epochs = 0});
  std::vector<double> a, b;
  for (auto& p : none.model.params()) a.insert(a.end(), p.value, p.value + p.size);
  for (auto& p : small.params()) b.insert(b.end(), p.value, p.value + p.size);
  CHECK(a == b);
  CHECK(none.lr == 1e-3);

  CHECK(default_fine_tune_lr(0.25) == 1e-4);
  CHECK(default_fine_tune_lr(0.5) == 1e-3);
  CHECK(default_fine_tune_lr(0.75) == 1e-2);

  const auto sel = fine_tune(small, 0.5, tr, &val, nullptr, {.epochs = 1, .select_lr = true, .batch_size = 16});
  CHECK(sel.candidates.size() == 3);
  double best = 0.0;
  for (auto [lr, acc] : sel.candidates) best = std::max(best, acc);
  CHECK(sel.training.metrics.back().accuracy == best);
}

TEST_CASE("configuration files, flags and presets") {
  const auto dir = temp_dir("cfg");
  fs::create_directories(dir);
  const auto path = (dir / "run.cfg").string();
  std::ofstream(path) << "# LeNet run\narchitecture = lenet\nnormalization=cp  # trailing comment\n\n"
                         "optimizer = sgd\nlr = 0.01\nrank.conv1 = 9\nepochs = 40\n";
  RunConfig c;
  apply_config_file(c, path);
  CHECK(c.optimizer == OptimizerKind::sgd);
  CHECK(c.lr == 0.01);
  CHECK(c.ranks.at("conv1") == 9);
  apply_setting(c, "lr", "0.05");  // a flag overrides the file
  CHECK(c.lr == 0.05);
  validate(c);

  RunConfig desk = c;
  desk.preset = "desk";
  apply_preset(desk);
  CHECK(desk.epochs == 5);
  CHECK(desk.max_train == 12000);
  CHECK(desk.seeds == 3);

  RunConfig paper;
  paper.preset = "paper";
  apply_preset(paper);
  CHECK(paper.epochs == 50);

  RunConfig bad;
  CHECK_THROWS_AS(apply_setting(bad, "colour", "red"), ConfigError);
  CHECK_THROWS_AS(apply_setting(bad, "lr", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_setting(bad, "optimizer", "lbfgs"), ConfigError);
  bad.normalization = Normalization::none;
  bad.ranks["conv1"] = 3;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  RunConfig mismatch;
  mismatch.dataset = DatasetKind::cifar10;
  CHECK_THROWS_AS(validate(mismatch), ConfigError);
  RunConfig unknown_layer;
  unknown_layer.ranks["fc9"] = 3;
  CHECK_THROWS_AS(validate(unknown_layer), ConfigError);

  std::ofstream(path) << "lr 0.1\n";
  CHECK_THROWS_WITH_AS(apply_config_file(bad, path), doctest::Contains(":1:"), ConfigError);

  // The text echo parses back to the same configuration.
  const auto echo = (dir / "echo.cfg").string();
  std::ofstream(echo) << config_to_text(c);
  RunConfig again;
  apply_config_file(again, echo);
  CHECK(config_to_text(again) == config_to_text(c));
}

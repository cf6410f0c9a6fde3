#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "cpnorm/data.hpp"

using namespace cpnorm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "cpnorm_test_data";
  fs::create_directories(dir);
  return dir;
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::string write_bytes(const std::string& name, const std::vector<std::uint8_t>& bytes) {
  const auto path = (temp_dir() / name).string();
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  return path;
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  put_be32(out, 0x803);
  put_be32(out, n);
  put_be32(out, h);
  put_be32(out, w);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, 0x801);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

}  // namespace

TEST_CASE("IDX round trip reproduces pixels exactly") {
  std::vector<std::uint8_t> pixels(3 * 4 * 5);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i * 37 % 256);
  const auto img = write_bytes("img", idx_images(3, 4, 5, pixels));
  const auto lab = write_bytes("lab", idx_labels({7, 0, 9}));
  const Dataset raw = load_mnist(img, lab, false);
  REQUIRE(raw.images.shape() == Shape{3, 1, 4, 5});
  CHECK(raw.labels == std::vector<int>{7, 0, 9});
  for (std::size_t i = 0; i < pixels.size(); ++i) CHECK(raw.images[i] * 255.0 == doctest::Approx(pixels[i]).epsilon(1e-15));

  const Dataset std_ds = load_mnist(img, lab);
  CHECK(std_ds.images[1] == doctest::Approx((37 / 255.0 - 0.1307) / 0.3081));
}

TEST_CASE("IDX framing errors") {
  const std::vector<std::uint8_t> pixels(2 * 2 * 2, 1);
  const auto img = write_bytes("img2", idx_images(2, 2, 2, pixels));
  const auto lab = write_bytes("lab2", idx_labels({1, 2}));
  CHECK_THROWS_WITH_AS(load_mnist(img, img), doctest::Contains("magic 0x00000803"), DataError);

  auto short_bytes = idx_images(2, 2, 2, pixels);
  short_bytes.pop_back();
  CHECK_THROWS_WITH_AS(load_mnist(write_bytes("img3", short_bytes), lab),
                       doctest::Contains("expected 24 bytes, got 23"), DataError);

  auto long_bytes = idx_images(2, 2, 2, pixels);
  long_bytes.push_back(0);
  CHECK_THROWS_WITH_AS(load_mnist(write_bytes("img4", long_bytes), lab), doctest::Contains("trailing"),
                       DataError);
  CHECK_THROWS_WITH_AS(load_mnist(img, write_bytes("lab3", idx_labels({1, 2, 3}))),
                       doctest::Contains("label file has 3"), DataError);
  CHECK_THROWS_AS(load_mnist((temp_dir() / "missing").string(), lab), DataError);
}

TEST_CASE("CIFAR-10 rows") {
  std::vector<std::uint8_t> row(3073, 0);
  row[0] = 3;
  const Dataset ds = load_cifar10({write_bytes("c1", row)});
  REQUIRE(ds.images.shape() == Shape{1, 3, 32, 32});
  CHECK(ds.labels == std::vector<int>{3});
  CHECK(ds.images.at({0, 0, 0, 0}) == doctest::Approx(-0.4914 / 0.2470));
  CHECK(ds.images.at({0, 2, 31, 31}) == doctest::Approx(-0.4465 / 0.2616));

  // Plane order: byte 1 + 1024 + 5 is green, pixel (0, 5).
  std::vector<std::uint8_t> two(2 * 3073, 0);
  two[3073] = 9;
  two[3073 + 1 + 1024 + 5] = 255;
  const Dataset raw = load_cifar10({write_bytes("c2", row), write_bytes("c3", two)}, false);
  CHECK(raw.size() == 3);
  CHECK(raw.labels == std::vector<int>{3, 0, 9});
  CHECK(raw.images.at({2, 1, 0, 5}) == 1.0);

  CHECK_THROWS_AS(load_cifar10({write_bytes("c4", std::vector<std::uint8_t>(3074, 0))}), DataError);
  row[0] = 10;
  CHECK_THROWS_WITH_AS(load_cifar10({write_bytes("c5", row)}), doctest::Contains("exceeds 9"), DataError);
}

TEST_CASE("batch iteration") {
  const auto b = batch_iter(10, 4, false, 0);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  CHECK(b[0] == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(b[2] == std::vector<std::size_t>{8, 9});

  const auto s1 = batch_iter(100, 7, true, 42);
  CHECK(s1 == batch_iter(100, 7, true, 42));
  CHECK(s1 != batch_iter(100, 7, true, 43));
  std::set<std::size_t> seen;
  for (const auto& batch : s1) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 100);
  CHECK_THROWS_AS(batch_iter(5, 0, false, 0), std::invalid_argument);
}

TEST_CASE("validation split and gather") {
  Dataset ds;
  ds.images = Tensor({20, 1, 1, 2});
  for (std::size_t i = 0; i < 40; ++i) ds.images[i] = static_cast<double>(i);
  for (int i = 0; i < 20; ++i) ds.labels.push_back(i % 10);
  auto [train, val] = split_validation(ds, 0.1);
  CHECK(train.size() == 18);
  CHECK(val.size() == 2);
  CHECK(val.labels == std::vector<int>{8, 9});
  CHECK(val.images[0] == 36.0);

  const std::vector<std::size_t> idx{5, 1};
  const Batch b = gather(ds, idx);
  CHECK(b.images.shape() == Shape{2, 1, 1, 2});
  CHECK(b.images[0] == 10.0);
  CHECK(b.images[3] == 3.0);
  CHECK(b.labels == std::vector<int>{5, 1});
}

TEST_CASE("bundled MNIST files standardize to zero mean and unit variance") {
  const fs::path dir = fs::path(CPNORM_SOURCE_DIR) / "data" / "mnist";
  if (!fs::exists(dir / "train-images-idx3-ubyte")) return;
  const Dataset ds = load_mnist((dir / "train-images-idx3-ubyte").string(),
                                (dir / "train-labels-idx1-ubyte").string());
  CHECK(ds.sample_shape() == Shape{1, 28, 28});
  double sum = 0.0, sq = 0.0;
  for (double v : ds.images.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(ds.images.size());
  const double mean = sum / n;
  MESSAGE("mean " << mean << " std " << std::sqrt(sq / n - mean * mean));
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(std::sqrt(sq / n - mean * mean) - 1.0) < 0.02);
}

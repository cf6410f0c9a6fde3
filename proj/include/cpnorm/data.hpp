#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpnorm/tensor.hpp"

namespace cpnorm {

/// Malformed or missing dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor images{{1}};  // N × C × H × W
  std::vector<int> labels;
  std::string split;

  std::size_t size() const { return labels.size(); }
  /// Per-sample image shape (C, H, W).
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
};

inline constexpr double mnist_mean = 0.1307;
inline constexpr double mnist_std = 0.3081;
inline constexpr double cifar_mean[3] = {0.4914, 0.4822, 0.4465};
inline constexpr double cifar_std[3] = {0.2470, 0.2435, 0.2616};

/// IDX image/label pair. Pixels are scaled to [0, 1], then standardized
/// unless `standardize` is false.
Dataset load_mnist(const std::string& image_path, const std::string& label_path,
                   bool standardize = true);

/// Concatenation of CIFAR-10 binary batch files (rows of 1 label byte and
/// 3072 pixel bytes, R/G/B planes).
Dataset load_cifar10(const std::vector<std::string>& paths, bool standardize = true);

/// Rows [begin, end) as a new dataset.
Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end);

/// Splits off the last `fraction` of the rows: {train, validation}.
std::pair<Dataset, Dataset> split_validation(const Dataset& ds, double fraction = 0.1);

/// Index batches covering 0..n-1; the final partial batch is kept. With
/// `shuffle` the order is a permutation drawn from `seed`.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, bool shuffle,
                                                 std::uint64_t seed);

struct Batch {
  Tensor images{{1}};
  std::vector<int> labels;
};

Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace cpnorm

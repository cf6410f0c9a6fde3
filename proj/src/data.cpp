#include "cpnorm/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace cpnorm {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

// Validates magic and total length; returns the declared dimensions.
std::vector<std::size_t> idx_header(const std::vector<std::uint8_t>& bytes, std::uint32_t magic,
                                    const std::string& path) {
  const std::size_t ndims = magic & 0xff;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < 4) throw DataError(path + ": file too short for an IDX header");
  const std::uint32_t got = be32(bytes, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ": wrong IDX magic 0x%08x (expected 0x%08x)", got, magic);
    throw DataError(path + buf);
  }
  if (bytes.size() < header) throw DataError(path + ": truncated IDX header");
  std::vector<std::size_t> dims(ndims);
  std::size_t payload = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    dims[i] = be32(bytes, 4 + 4 * i);
    payload *= dims[i];
  }
  const std::size_t expected = header + payload;
  if (bytes.size() < expected) {
    throw DataError(path + ": truncated payload, expected " + std::to_string(expected) +
                    " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw DataError(path + ": " + std::to_string(bytes.size() - expected) +
                    " trailing bytes after the declared payload (expected " +
                    std::to_string(expected) + " bytes)");
  }
  return dims;
}

}  // namespace

Dataset load_mnist(const std::string& image_path, const std::string& label_path, bool standardize) {
  const auto img = read_file(image_path);
  const auto lab = read_file(label_path);
  const auto idims = idx_header(img, 0x00000803, image_path);
  const auto ldims = idx_header(lab, 0x00000801, label_path);
  if (idims[0] != ldims[0]) {
    throw DataError("image file has " + std::to_string(idims[0]) + " items but label file has " +
                    std::to_string(ldims[0]));
  }
  const std::size_t n = idims[0], h = idims[1], w = idims[2];
  if (n == 0) throw DataError(image_path + ": no images");
  Dataset ds;
  ds.images = Tensor({n, 1, h, w});
  const std::uint8_t* pixels = img.data() + 16;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const double v = pixels[i] / 255.0;
    ds.images[i] = standardize ? (v - mnist_mean) / mnist_std : v;
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = lab[8 + i];
    if (label > 9) throw DataError(label_path + ": label " + std::to_string(label) + " out of range");
    ds.labels[i] = label;
  }
  return ds;
}

Dataset load_cifar10(const std::vector<std::string>& paths, bool standardize) {
  constexpr std::size_t row = 3073, plane = 1024;
  std::vector<std::vector<std::uint8_t>> files;
  std::size_t n = 0;
  for (const auto& path : paths) {
    files.push_back(read_file(path));
    const std::size_t len = files.back().size();
    if (len == 0 || len % row != 0) {
      throw DataError(path + ": length " + std::to_string(len) + " is not a positive multiple of " +
                      std::to_string(row));
    }
    n += len / row;
  }
  if (n == 0) throw DataError("no CIFAR-10 batch files given");
  Dataset ds;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  std::size_t item = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& bytes = files[f];
    for (std::size_t off = 0; off < bytes.size(); off += row, ++item) {
      if (bytes[off] > 9) {
        throw DataError(paths[f] + ": label byte " + std::to_string(bytes[off]) + " at row " +
                        std::to_string(off / row) + " exceeds 9");
      }
      ds.labels[item] = bytes[off];
      double* dst = ds.images.ptr() + item * 3 * plane;
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = bytes[off + 1 + c * plane + i] / 255.0;
          dst[c * plane + i] = standardize ? (v - cifar_mean[c]) / cifar_std[c] : v;
        }
      }
    }
  }
  return ds;
}

Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end) {
  if (begin >= end || end > ds.size()) throw std::out_of_range("dataset slice out of range");
  Shape shape = ds.images.shape();
  const std::size_t stride = ds.images.size() / shape[0];
  shape[0] = end - begin;
  Dataset out;
  out.images = Tensor(shape, std::vector<double>(ds.images.ptr() + begin * stride,
                                                 ds.images.ptr() + end * stride));
  out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    ds.labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.split = ds.split;
  return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& ds, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("validation fraction must lie in (0, 1)");
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  if (n_val == 0 || n_val >= ds.size()) throw std::invalid_argument("dataset too small for a validation split");
  auto train = slice(ds, 0, ds.size() - n_val);
  auto val = slice(ds, ds.size() - n_val, ds.size());
  train.split = "train";
  val.split = "validation";
  return {std::move(train), std::move(val)};
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, bool shuffle,
                                                 std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    // Fisher-Yates with an explicit draw so the permutation does not depend
    // on the standard library's shuffle implementation.
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = rng() % i;
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return batches;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Shape shape = ds.images.shape();
  const std::size_t stride = ds.images.size() / shape[0];
  shape[0] = indices.size();
  Batch b{Tensor(shape), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(b.images.ptr() + i * stride, ds.images.ptr() + indices[i] * stride, stride * sizeof(double));
    b.labels.push_back(ds.labels[indices[i]]);
  }
  return b;
}

}  // namespace cpnorm

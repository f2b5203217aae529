// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "conseq/matrix.hpp"

namespace conseq {

struct ImageShape {
  std::size_t channels = 1, height = 0, width = 0;
  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct Dataset {
  Matrix features;  // D x M, one sample per column
  std::vector<int> labels;
  std::size_t num_classes = 0;
  // Present for image sources; feature order is CHW.
  std::optional<ImageShape> image;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rows(); }
};

// IDX pair: images with magic 0x00000803 and three dimensions, labels with
// magic 0x00000801, all big-endian. Features keep raw byte values (0..255).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes = 10);

// CIFAR-10 binary records (1 label byte + 3072 CHW pixel bytes). `source` is a
// single batch file or a directory whose data_batch_*.bin files are read in
// name order.
Dataset load_cifar10(const std::filesystem::path& source);

// First `count` samples, or the whole set when count >= size().
Dataset take(const Dataset& ds, std::size_t count);

enum class Normalization { kNone, kUnitRange, kCenteredHalf, kStandardizeFeatures };

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at 1e-8
};

FeatureStats compute_feature_stats(const Matrix& features);

// kUnitRange: x / 255. kCenteredHalf: x / 255 - 0.5. kStandardizeFeatures:
// per-row zero mean, unit variance using statistics of `ds` itself.
Dataset normalize(const Dataset& ds, Normalization mode);

// Standardize with statistics computed elsewhere (normally the training split).
Dataset standardize(const Dataset& ds, const FeatureStats& stats);

Matrix one_hot(std::span<const int> labels, std::size_t num_classes);

struct Batch {
  Matrix x;  // D x N
  Matrix t;  // num_classes x N, one-hot
  std::vector<std::size_t> indices;
};

// Sample order for one epoch: a permutation of 0..M-1 fixed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t m, std::uint64_t seed, std::uint64_t epoch);

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

// Shuffled mini-batches for one epoch. The trailing partial batch is dropped.
class EpochBatches {
 public:
  EpochBatches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

  std::size_t size() const { return order_.size() / batch_size_; }
  Batch operator[](std::size_t i) const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

EpochBatches batch_iter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                        std::uint64_t epoch);

// Standard-normal inputs (d_in x n) and targets (d_out x n).
std::pair<Matrix, Matrix> synthetic_gaussian(std::size_t d_in, std::size_t d_out, std::size_t n,
                                             std::uint64_t seed);

}  // namespace conseq

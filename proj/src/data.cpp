// SPDX-License-Identifier: Apache-2.0
#include "conseq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "conseq/error.hpp"

namespace conseq {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw TruncatedFile(path.string() + " ends inside its header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

void append_cifar_file(const std::filesystem::path& path, std::vector<unsigned char>& pixels,
                       std::vector<int>& labels) {
  constexpr std::size_t kRecord = 3073;
  const auto bytes = read_file(path);
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw TruncatedFile(path.string() + " has " + std::to_string(bytes.size()) +
                        " bytes, not a multiple of 3073");
  }
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    if (bytes[off] >= 10) {
      throw BadLabel(path.string() + " record " + std::to_string(off / kRecord) + " has label " +
                     std::to_string(bytes[off]));
    }
    labels.push_back(bytes[off]);
    pixels.insert(pixels.end(), bytes.begin() + off + 1, bytes.begin() + off + kRecord);
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (read_be32(img, 0, images) != 0x00000803) {
    throw BadMagic(images.string() + " is not an IDX image file");
  }
  if (read_be32(lab, 0, labels) != 0x00000801) {
    throw BadMagic(labels.string() + " is not an IDX label file");
  }
  const std::size_t count = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t label_count = read_be32(lab, 4, labels);
  const std::size_t dim = rows * cols;
  if (img.size() != 16 + count * dim) {
    throw TruncatedFile(images.string() + " holds " + std::to_string(img.size() - 16) +
                        " pixel bytes, header promises " + std::to_string(count * dim));
  }
  if (lab.size() != 8 + label_count) {
    throw TruncatedFile(labels.string() + " holds " + std::to_string(lab.size() - 8) +
                        " labels, header promises " + std::to_string(label_count));
  }
  if (count != label_count) {
    throw CountMismatch(std::to_string(count) + " images but " + std::to_string(label_count) +
                        " labels");
  }
  Dataset ds;
  ds.num_classes = num_classes;
  ds.image = ImageShape{1, rows, cols};
  ds.features = Matrix(dim, count);
  ds.labels.resize(count);
  for (std::size_t s = 0; s < count; ++s) {
    if (lab[8 + s] >= num_classes) {
      throw BadLabel("sample " + std::to_string(s) + " has label " + std::to_string(lab[8 + s]));
    }
    ds.labels[s] = lab[8 + s];
    for (std::size_t p = 0; p < dim; ++p) ds.features(p, s) = img[16 + s * dim + p];
  }
  return ds;
}

Dataset load_cifar10(const std::filesystem::path& source) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(source)) {
    for (const auto& entry : std::filesystem::directory_iterator(source)) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("data_batch_") && name.ends_with(".bin")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no data_batch_*.bin files in " + source.string());
  } else {
    files.push_back(source);
  }
  std::vector<unsigned char> pixels;
  std::vector<int> labels;
  for (const auto& f : files) append_cifar_file(f, pixels, labels);

  constexpr std::size_t kDim = 3072;
  Dataset ds;
  ds.num_classes = 10;
  ds.image = ImageShape{3, 32, 32};
  ds.features = Matrix(kDim, labels.size());
  ds.labels = std::move(labels);
  for (std::size_t s = 0; s < ds.labels.size(); ++s)
    for (std::size_t p = 0; p < kDim; ++p) ds.features(p, s) = pixels[s * kDim + p];
  return ds;
}

Dataset take(const Dataset& ds, std::size_t count) {
  if (count >= ds.size()) return ds;
  Dataset out;
  out.num_classes = ds.num_classes;
  out.image = ds.image;
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<long>(count));
  out.features = Matrix(ds.dim(), count);
  for (std::size_t r = 0; r < ds.dim(); ++r)
    for (std::size_t c = 0; c < count; ++c) out.features(r, c) = ds.features(r, c);
  return out;
}

FeatureStats compute_feature_stats(const Matrix& features) {
  FeatureStats stats;
  stats.mean.resize(features.rows());
  stats.stddev.resize(features.rows());
  const double m = static_cast<double>(features.cols());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row_span(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= m;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= m;
    stats.mean[r] = mean;
    stats.stddev[r] = std::max(std::sqrt(var), 1e-8);
  }
  return stats;
}

Dataset standardize(const Dataset& ds, const FeatureStats& stats) {
  if (stats.mean.size() != ds.dim() || stats.stddev.size() != ds.dim()) {
    throw DimensionMismatch("feature statistics cover " + std::to_string(stats.mean.size()) +
                            " features, dataset has " + std::to_string(ds.dim()));
  }
  Dataset out = ds;
  for (std::size_t r = 0; r < out.dim(); ++r)
    for (double& v : out.features.row_span(r)) v = (v - stats.mean[r]) / stats.stddev[r];
  return out;
}

Dataset normalize(const Dataset& ds, Normalization mode) {
  Dataset out = ds;
  switch (mode) {
    case Normalization::kNone:
      break;
    case Normalization::kUnitRange:
      for (double& v : out.features.data()) v /= 255.0;
      break;
    case Normalization::kCenteredHalf:
      for (double& v : out.features.data()) v = v / 255.0 - 0.5;
      break;
    case Normalization::kStandardizeFeatures:
      return standardize(ds, compute_feature_stats(ds.features));
  }
  return out;
}

Matrix one_hot(std::span<const int> labels, std::size_t num_classes) {
  Matrix t(num_classes, labels.size());
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= num_classes) {
      throw BadLabel("label " + std::to_string(labels[n]) + " outside [0, " +
                     std::to_string(num_classes) + ")");
    }
    t(static_cast<std::size_t>(labels[n]), n) = 1.0;
  }
  return t;
}

std::vector<std::size_t> epoch_order(std::size_t m, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  auto rng = seeded_rng(seed, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.x = Matrix(ds.dim(), indices.size());
  std::vector<int> labels(indices.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    for (std::size_t r = 0; r < ds.dim(); ++r) b.x(r, n) = ds.features(r, indices[n]);
    labels[n] = ds.labels[indices[n]];
  }
  b.t = one_hot(labels, ds.num_classes);
  return b;
}

EpochBatches::EpochBatches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch)
    : ds_(&ds), batch_size_(batch_size), order_(epoch_order(ds.size(), seed, epoch)) {
  if (batch_size == 0 || batch_size > ds.size()) {
    throw InvalidArgument("batch size " + std::to_string(batch_size) + " does not fit " +
                          std::to_string(ds.size()) + " samples");
  }
}

Batch EpochBatches::operator[](std::size_t i) const {
  return make_batch(*ds_, std::span(order_).subspan(i * batch_size_, batch_size_));
}

EpochBatches batch_iter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                        std::uint64_t epoch) {
  return EpochBatches(ds, batch_size, seed, epoch);
}

std::pair<Matrix, Matrix> synthetic_gaussian(std::size_t d_in, std::size_t d_out, std::size_t n,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix x(d_in, n);
  Matrix t(d_out, n);
  for (double& v : x.data()) v = dist(rng);
  for (double& v : t.data()) v = dist(rng);
  return {std::move(x), std::move(t)};
}

}  // namespace conseq

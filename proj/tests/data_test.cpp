// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <unistd.h>

#include "conseq/data.hpp"
#include "conseq/error.hpp"

namespace conseq {
namespace {

namespace fs = std::filesystem;
using Bytes = std::vector<unsigned char>;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("conseq_data_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path file(const std::string& name, const Bytes& bytes) const {
    const fs::path p = path_ / name;
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    return p;
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void put_u32(Bytes& b, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) b.push_back((v >> shift) & 0xff);
}

Bytes idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols, const Bytes& pixels,
                 std::uint32_t magic = 0x803) {
  Bytes b;
  put_u32(b, magic);
  put_u32(b, count);
  put_u32(b, rows);
  put_u32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

Bytes idx_labels(const Bytes& labels, std::uint32_t magic = 0x801) {
  Bytes b;
  put_u32(b, magic);
  put_u32(b, std::uint32_t(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

Bytes cifar_record(unsigned char label, unsigned char base) {
  Bytes r{label};
  for (int i = 0; i < 3072; ++i) r.push_back(static_cast<unsigned char>((base + i) % 256));
  return r;
}

TEST(LoadIdx, HandBuiltFixture) {
  TempDir dir;
  const auto images = dir.file("img", idx_images(2, 2, 2, {0, 1, 2, 3, 250, 251, 252, 255}));
  const auto labels = dir.file("lab", idx_labels({7, 2}));
  const Dataset ds = load_idx(images, labels);
  EXPECT_EQ(ds.features, (Matrix{{0, 250}, {1, 251}, {2, 252}, {3, 255}}));
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 2}));
  EXPECT_EQ(ds.num_classes, 10u);
  ASSERT_TRUE(ds.image.has_value());
  EXPECT_EQ(*ds.image, (ImageShape{1, 2, 2}));
}

TEST(LoadIdx, Errors) {
  TempDir dir;
  const Bytes px(12, 0);
  const auto good_images = dir.file("img", idx_images(3, 2, 2, px));
  const auto good_labels = dir.file("lab", idx_labels({1, 2, 3}));
  EXPECT_THROW(load_idx(dir.file("bad_img", idx_images(3, 2, 2, px, 0x801)), good_labels),
               BadMagic);
  EXPECT_THROW(load_idx(good_images, dir.file("bad_lab", idx_labels({1, 2, 3}, 0x803))), BadMagic);
  EXPECT_THROW(load_idx(good_images, dir.file("two", idx_labels({1, 2}))), CountMismatch);
  EXPECT_THROW(load_idx(dir.file("short", idx_images(3, 2, 2, Bytes(11, 0))), good_labels),
               TruncatedFile);
  EXPECT_THROW(load_idx(dir.file("stub", Bytes{0, 0}), good_labels), TruncatedFile);
  EXPECT_THROW(load_idx(good_images, dir.file("big", idx_labels({1, 2, 10}))), BadLabel);
  EXPECT_THROW(load_idx(dir.path() / "missing", good_labels), IoError);
}

TEST(LoadIdx, BundledFashionSubset) {
  const fs::path root = fs::path(CONSEQ_DATA_DIR) / "fashion-mnist-1k";
  const Dataset ds = load_idx(root / "images-idx3-ubyte", root / "labels-idx1-ubyte");
  EXPECT_EQ(ds.size(), 1000u);
  EXPECT_EQ(ds.dim(), 784u);
  std::vector<int> counts(10, 0);
  for (int l : ds.labels) ++counts[std::size_t(l)];
  for (int c : counts) EXPECT_EQ(c, 100);
  EXPECT_NE(ds.features.column_values(0), ds.features.column_values(1));
  EXPECT_LE(max_abs(ds.features), 255.0);
}

TEST(LoadCifar10, TwoRecordFile) {
  TempDir dir;
  Bytes bytes = cifar_record(3, 0);
  const Bytes second = cifar_record(9, 100);
  bytes.insert(bytes.end(), second.begin(), second.end());
  const Dataset ds = load_cifar10(dir.file("data_batch_1.bin", bytes));
  EXPECT_EQ(ds.dim(), 3072u);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(ds.features(0, 0), 0.0);
  EXPECT_EQ(ds.features(3071, 0), double(3071 % 256));
  EXPECT_EQ(ds.features(0, 1), 100.0);
  EXPECT_EQ(*ds.image, (ImageShape{3, 32, 32}));
}

TEST(LoadCifar10, DirectoryConcatenatesInNameOrder) {
  TempDir dir;
  dir.file("data_batch_2.bin", cifar_record(2, 7));
  dir.file("data_batch_1.bin", cifar_record(1, 5));
  dir.file("test_batch.bin", cifar_record(0, 0));
  const Dataset ds = load_cifar10(dir.path());
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 2}));
  EXPECT_EQ(ds.features(0, 0), 5.0);
}

TEST(LoadCifar10, Errors) {
  TempDir dir;
  Bytes bad = cifar_record(1, 0);
  bad.pop_back();
  EXPECT_THROW(load_cifar10(dir.file("a.bin", bad)), TruncatedFile);
  EXPECT_THROW(load_cifar10(dir.file("b.bin", cifar_record(17, 0))), BadLabel);
  EXPECT_THROW(load_cifar10(dir.file("c.bin", Bytes{})), TruncatedFile);
}

Dataset bytes_dataset(Matrix features) {
  Dataset ds;
  ds.labels.assign(features.cols(), 0);
  ds.features = std::move(features);
  ds.num_classes = 2;
  return ds;
}

TEST(Normalize, Modes) {
  const Dataset ds = bytes_dataset(Matrix{{255, 0}, {51, 255}});
  EXPECT_EQ(normalize(ds, Normalization::kUnitRange).features, (Matrix{{1, 0}, {0.2, 1}}));
  EXPECT_EQ(normalize(ds, Normalization::kCenteredHalf).features(0, 0), 0.5);
  EXPECT_EQ(normalize(ds, Normalization::kCenteredHalf).features(0, 1), -0.5);
  EXPECT_EQ(normalize(ds, Normalization::kNone).features, ds.features);
}

TEST(Normalize, StandardizeFeatures) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> dist(0, 255);
  Matrix f(4, 50);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 50; ++c) f(r, c) = dist(rng);  // row 0 stays all-zero
  const Dataset out = normalize(bytes_dataset(f), Normalization::kStandardizeFeatures);
  for (std::size_t c = 0; c < 50; ++c) EXPECT_EQ(out.features(0, c), 0.0);
  for (std::size_t r = 1; r < 4; ++r) {
    double mean = 0, sq = 0;
    for (std::size_t c = 0; c < 50; ++c) mean += out.features(r, c);
    mean /= 50;
    for (std::size_t c = 0; c < 50; ++c) sq += std::pow(out.features(r, c) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(sq / 50), 1.0, 1e-12);
  }
}

TEST(Normalize, TrainingStatisticsReused) {
  const Dataset train = bytes_dataset(Matrix{{0, 2}});
  const FeatureStats stats = compute_feature_stats(train.features);
  EXPECT_EQ(stats.mean, (std::vector<double>{1.0}));
  EXPECT_EQ(stats.stddev, (std::vector<double>{1.0}));
  EXPECT_EQ(standardize(bytes_dataset(Matrix{{5}}), stats).features, (Matrix{{4}}));
}

TEST(OneHot, ColumnsSumToOne) {
  const std::vector<int> labels{0, 2, 1, 2};
  const Matrix t = one_hot(labels, 3);
  EXPECT_EQ(t, (Matrix{{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 1}}));
}

TEST(Batches, CountDropsShortBatch) {
  Dataset ds = bytes_dataset(Matrix(2, 10));
  EXPECT_EQ(batch_iter(ds, 3, 1, 0).size(), 3u);
  EXPECT_EQ(batch_iter(ds, 10, 1, 0).size(), 1u);
  EXPECT_THROW(batch_iter(ds, 11, 1, 0), InvalidArgument);
  EXPECT_THROW(batch_iter(ds, 0, 1, 0), InvalidArgument);
}

TEST(Batches, OrderIsSeededPermutation) {
  const auto a = epoch_order(100, 5, 3);
  EXPECT_EQ(a, epoch_order(100, 5, 3));
  EXPECT_NE(a, epoch_order(100, 5, 4));
  EXPECT_NE(a, epoch_order(100, 6, 3));
  std::vector<std::size_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expected(100);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(sorted, expected);
}

TEST(Batches, ContentsFollowOrder) {
  Matrix f(1, 7);
  for (std::size_t c = 0; c < 7; ++c) f(0, c) = double(c);
  Dataset ds = bytes_dataset(f);
  for (std::size_t c = 0; c < 7; ++c) ds.labels[c] = int(c % 2);
  const EpochBatches batches = batch_iter(ds, 2, 9, 1);
  ASSERT_EQ(batches.size(), 3u);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Batch batch = batches[b];
    ASSERT_EQ(batch.x.cols(), 2u);
    for (std::size_t j = 0; j < 2; ++j) {
      const std::size_t idx = batches.order()[b * 2 + j];
      EXPECT_EQ(batch.indices[j], idx);
      EXPECT_EQ(batch.x(0, j), double(idx));
      EXPECT_EQ(batch.t(std::size_t(ds.labels[idx]), j), 1.0);
      EXPECT_EQ(batch.t(0, j) + batch.t(1, j), 1.0);
    }
  }
}

TEST(Take, Prefix) {
  Dataset ds = bytes_dataset(Matrix{{1, 2, 3}});
  EXPECT_EQ(take(ds, 2).features, (Matrix{{1, 2}}));
  EXPECT_EQ(take(ds, 2).labels.size(), 2u);
  EXPECT_EQ(take(ds, 9).size(), 3u);
}

TEST(SyntheticGaussian, ShapesSeedAndMean) {
  const auto [x, t] = synthetic_gaussian(20, 3, 50, 11);
  EXPECT_EQ(x.rows(), 20u);
  EXPECT_EQ(x.cols(), 50u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 50u);
  const auto [x2, t2] = synthetic_gaussian(20, 3, 50, 11);
  EXPECT_EQ(x, x2);
  EXPECT_EQ(t, t2);
  EXPECT_NE(x, synthetic_gaussian(20, 3, 50, 12).first);
  double mean = 0;
  for (double v : x.data()) mean += v;
  mean /= double(x.size());
  EXPECT_LE(std::abs(mean), 4.0 / std::sqrt(20.0 * 50.0));
}

}  // namespace
}  // namespace conseq

#include <gtest/gtest.h>
#include <zlib.h>

#include <filesystem>
#include <fstream>

#include "symclone/checkpoint.hpp"
#include "symclone/config.hpp"
#include "symclone/dataset.hpp"
#include "symclone/fetch.hpp"

using namespace symclone;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("symclone_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::string idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
  std::string s;
  put_u32(s, magic);
  put_u32(s, n);
  put_u32(s, rows);
  put_u32(s, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) s.push_back(static_cast<char>(i % 2 == 0 ? 255 : i % 256));
  return s;
}

std::string idx_labels(std::uint32_t n) {
  std::string s;
  put_u32(s, 2049);
  put_u32(s, n);
  for (std::uint32_t i = 0; i < n; ++i) s.push_back(static_cast<char>(i % 10));
  return s;
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_gz(const fs::path& p, const std::string& bytes) {
  gzFile f = gzopen(p.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
}

StudentLayer trained_like_student(StudentKind kind, std::int64_t blocks = 9) {
  StudentSpec spec;
  spec.kind = kind;
  spec.height = spec.width = 5;
  spec.blocks = blocks;
  spec.embed_dim = 6;
  SeededRng rng(3);
  return StudentLayer(spec, rng);
}

Dataset numbered(std::int64_t n) {
  Dataset d;
  d.images = Tensor({n, 2, 2});
  for (std::int64_t i = 0; i < n; ++i) {
    d.labels.push_back(static_cast<int>(i));
    d.images.set(i * 4, static_cast<double>(i));
  }
  return d;
}

}  // namespace

TEST(Idx, ReadsHeaderAndScalesPixels) {
  const auto dir = scratch("idx");
  write_file(dir / "img", idx_images(2051, 10, 28, 28));
  write_file(dir / "lbl", idx_labels(10));
  const Dataset d = load_mnist_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(d.images.shape(), (Shape{10, 28, 28}));
  EXPECT_EQ(d.size(), 10);
  EXPECT_FLOAT_EQ(static_cast<float>(d.images.at(0)), 1.0f);
  EXPECT_FLOAT_EQ(static_cast<float>(d.images.at(1)), 1.0f / 255.0f);
  EXPECT_EQ(d.labels[7], 7);
  fs::remove_all(dir);
}

TEST(Idx, ReadsGzip) {
  const auto dir = scratch("idx_gz");
  write_gz(dir / "img.gz", idx_images(2051, 3, 4, 4));
  write_gz(dir / "lbl.gz", idx_labels(3));
  const Dataset d = load_mnist_idx(dir / "img.gz", dir / "lbl.gz");
  EXPECT_EQ(d.images.shape(), (Shape{3, 4, 4}));
  fs::remove_all(dir);
}

TEST(Idx, Rejections) {
  const auto dir = scratch("idx_bad");
  write_file(dir / "bad_magic", idx_images(1234, 2, 2, 2));
  write_file(dir / "img", idx_images(2051, 2, 2, 2));
  write_file(dir / "lbl3", idx_labels(3));
  std::string short_img = idx_images(2051, 2, 2, 2);
  short_img.resize(short_img.size() - 3);
  write_file(dir / "short", short_img);
  write_file(dir / "lbl", idx_labels(2));
  EXPECT_THROW(load_mnist_idx(dir / "bad_magic", dir / "lbl"), FormatError);
  EXPECT_THROW(load_mnist_idx(dir / "img", dir / "lbl3"), FormatError);
  EXPECT_THROW(load_mnist_idx(dir / "short", dir / "lbl"), FormatError);
  EXPECT_THROW(load_mnist_idx(dir / "missing", dir / "lbl"), Error);
  fs::remove_all(dir);
}

TEST(Idx, BundledFixture) {
  const auto root = default_data_dir() / "fixture";
  const Dataset d = load_mnist_idx(root / "images-idx3-ubyte", root / "labels-idx1-ubyte");
  EXPECT_EQ(d.height(), 28);
  EXPECT_GT(d.size(), 0);
  for (int y : d.labels) {
    EXPECT_GE(y, 0);
    EXPECT_LE(y, 9);
  }
}

TEST(Split, Sizes) {
  const auto parts = deterministic_split(numbered(10), {0.8, 0.2}, 0);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].size(), 8);
  EXPECT_EQ(parts[1].size(), 2);
}

TEST(Split, SingleFractionIsPermutation) {
  const auto parts = deterministic_split(numbered(12), {1.0}, 4);
  ASSERT_EQ(parts.size(), 1u);
  auto labels = parts[0].labels;
  std::sort(labels.begin(), labels.end());
  for (int i = 0; i < 12; ++i) EXPECT_EQ(labels[static_cast<std::size_t>(i)], i);
  for (std::int64_t i = 0; i < 12; ++i) EXPECT_EQ(parts[0].images.at(i * 4), parts[0].labels[static_cast<std::size_t>(i)]);
}

TEST(Split, Deterministic) {
  const auto a = deterministic_split(numbered(30), {0.5, 0.5}, 9);
  const auto b = deterministic_split(numbered(30), {0.5, 0.5}, 9);
  EXPECT_EQ(a[0].labels, b[0].labels);
  EXPECT_THROW(deterministic_split(numbered(4), {0.5, 0.4}, 0), Error);
}

TEST(Downsample, MeanPools) {
  Dataset d;
  d.images = Tensor::from({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  d.labels = {0};
  const Dataset s = downsample(d, 2);
  EXPECT_EQ(s.images.shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(s.images.at(0), 3.5);
  EXPECT_DOUBLE_EQ(s.images.at(1), 5.5);
}

TEST(Checkpoint, RoundTripBitIdentical) {
  const auto dir = scratch("ckpt");
  for (auto [kind, blocks] : {std::pair{StudentKind::blockmlp9, 9}, std::pair{StudentKind::mlp2gcnn_approx, 8}}) {
    const StudentLayer s = trained_like_student(kind, blocks);
    save_student(s, dir / "s.ckpt", {{"note", "x"}});
    const StudentLayer t = load_student(dir / "s.ckpt", kind);
    const auto a = s.parameters(), b = t.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_TRUE(a[i]->value.bit_equal(b[i]->value)) << a[i]->name;
      EXPECT_EQ(a[i]->role, b[i]->role);
    }
    EXPECT_EQ(load_checkpoint(dir / "s.ckpt").meta["note"], "x");
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, TruncatedRejected) {
  const auto dir = scratch("ckpt_trunc");
  save_student(trained_like_student(StudentKind::blockmlp9), dir / "s.ckpt");
  fs::resize_file(dir / "s.ckpt", fs::file_size(dir / "s.ckpt") - 17);
  EXPECT_THROW(load_student(dir / "s.ckpt"), FormatError);
  fs::resize_file(dir / "s.ckpt", 5);
  EXPECT_THROW(load_student(dir / "s.ckpt"), FormatError);
  fs::remove_all(dir);
}

TEST(Checkpoint, KindMismatchRejected) {
  const auto dir = scratch("ckpt_kind");
  save_student(trained_like_student(StudentKind::blockmlp9), dir / "s.ckpt");
  EXPECT_THROW(load_student(dir / "s.ckpt", StudentKind::mlp2gcnn), FormatError);
  fs::remove_all(dir);
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  RunConfig c;
  c.validate();
  RunConfig d;
  d.merge(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
}

TEST(Config, UnknownKeysNamed) {
  RunConfig c;
  try {
    c.merge(nlohmann::json{{"clone", {{"learning_rate", 1}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "clone.learning_rate");
  }
  EXPECT_THROW(c.merge(nlohmann::json{{"misc", nlohmann::json::object()}}), ConfigError);
  EXPECT_THROW(c.merge(nlohmann::json{{"train", {{"epochs", "five"}}}}), ConfigError);
}

TEST(Config, ValidationNamesKey) {
  const auto key_of = [](nlohmann::json doc) {
    RunConfig c;
    c.merge(doc);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string();
  };
  EXPECT_EQ(key_of({{"student", {{"kind", "mlp3"}}}}), "student.kind");
  EXPECT_EQ(key_of({{"student", {{"blocks", 8}}}}), "student.blocks");
  EXPECT_EQ(key_of({{"task", {{"split", {0.5, 0.2}}}}}), "task.split");
  EXPECT_EQ(key_of({{"train", {{"gcnn_pool_after", {5}}}}}), "train.gcnn_pool_after");
  EXPECT_EQ(key_of({{"clone", {{"window", 0}}}}), "clone.window");
  EXPECT_EQ(key_of({{"student", {{"kind", "mlp2gcnn_approx"}, {"blocks", 7}}}}), "");
}

TEST(Config, CheckpointStringOrList) {
  RunConfig c;
  c.merge({{"task", {{"checkpoint", "a.ckpt"}}}});
  EXPECT_EQ(c.task.checkpoint, (std::vector<std::string>{"a.ckpt"}));
  c.merge({{"task", {{"checkpoint", {"a.ckpt", "b.ckpt"}}}}});
  EXPECT_EQ(c.task.checkpoint.size(), 2u);
  EXPECT_THROW(c.merge({{"task", {{"checkpoint", 3}}}}), ConfigError);
}

TEST(Digest, KnownVectors) {
  const auto dir = scratch("digest");
  write_file(dir / "abc", "abc");
  EXPECT_EQ(md5_file(dir / "abc"), "900150983cd24fb0d6963f7d28e17f72");
  EXPECT_EQ(sha256_file(dir / "abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(canonical_mnist_files().size(), 4u);
  fs::remove_all(dir);
}

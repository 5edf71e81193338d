#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "purekit/checkpoint.hpp"
#include "purekit/dataset.hpp"
#include "purekit/error.hpp"
#include "purekit/io.hpp"
#include "purekit/rng.hpp"

using namespace purekit;

namespace {

class TempDir {
 public:
  TempDir() : path_(std::filesystem::temp_directory_path() / ("purekit_formats_" + std::to_string(::getpid()))) {
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<std::uint8_t> le32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 24)};
}

void append(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

Dataset random_dataset(int n, Shape shape, std::uint64_t seed) {
  Dataset d;
  d.shape = shape;
  RngStream rng(seed, 0);
  for (int i = 0; i < n; ++i) {
    ImageTensor x(shape);
    rng.fill_uniform(x.values(), 0.0f, 1.0f);
    d.images.push_back(quantize(x));
    d.labels.push_back(static_cast<int>(rng.next_below(10)));
  }
  return d;
}

std::vector<ParamEntry> some_entries() {
  return {{"conv1.weight", {2, 1, 3, 3}, std::vector<float>(18, 0.25f)},
          {"conv1.bias", {2}, {-1.5f, 3.0f}},
          {"scalar", {}, {7.0f}}};
}

}  // namespace

TEST(Dataset, EncodingMatchesHandBuiltBytes) {
  Dataset d;
  d.shape = Shape{1, 1, 2};
  d.images = {ImageTensor(d.shape, {0.0f, 1.0f}), ImageTensor(d.shape, {128.0f / 255.0f, 0.5f})};
  d.labels = {3, 9};
  std::vector<std::uint8_t> expected{'P', 'I', 'M', 'G'};
  for (std::uint32_t v : {1u, 2u, 1u, 1u, 2u}) append(expected, le32(v));
  append(expected, {3, 0, 255, 9, 128, 128});  // round(127.5) = 128
  EXPECT_EQ(encode_dataset(d), expected);
}

TEST(Dataset, RoundTripsBitwise) {
  TempDir dir;
  const auto d = random_dataset(17, Shape{3, 4, 5}, 1);
  save_dataset(dir / "d.pimg", d);
  const auto back = load_dataset(dir / "d.pimg");
  EXPECT_EQ(back.shape, d.shape);
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  save_dataset(dir / "e.pimg", back);
  EXPECT_EQ(read_file(dir / "d.pimg"), read_file(dir / "e.pimg"));
}

TEST(Dataset, QuantizeIsIdempotentAndOnGrid) {
  const auto d = random_dataset(3, Shape{3, 8, 8}, 2);
  for (const auto& x : d.images) {
    EXPECT_EQ(quantize(x), x);
    for (float v : x.values()) EXPECT_EQ(v, std::round(v * 255.0f) / 255.0f);
  }
}

TEST(Dataset, RejectsTruncatedAndPaddedFiles) {
  const auto bytes = encode_dataset(random_dataset(4, Shape{1, 2, 2}, 3));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{23}, bytes.size() - 1}) {
    EXPECT_THROW(decode_dataset(std::span(bytes).first(cut)), FormatError) << cut;
  }
  auto padded = bytes;
  padded.push_back(0);
  EXPECT_THROW(decode_dataset(padded), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_dataset(bad_version), FormatError);
}

TEST(Dataset, MissingFileIsAnIoError) {
  TempDir dir;
  EXPECT_THROW(load_dataset(dir / "absent.pimg"), IoError);
}

TEST(Dataset, CifarImportKeepsBytes) {
  TempDir dir;
  std::vector<std::uint8_t> batch;
  for (int r = 0; r < 3; ++r) {
    batch.push_back(static_cast<std::uint8_t>(r * 4));
    for (int k = 0; k < 3072; ++k) batch.push_back(static_cast<std::uint8_t>((k + 31 * r) % 256));
  }
  write_file_atomic(dir / "data_batch_1.bin", batch);
  const std::vector<std::filesystem::path> paths{dir / "data_batch_1.bin", dir / "data_batch_1.bin"};
  const auto d = import_cifar(paths);
  ASSERT_EQ(d.size(), 6u);
  EXPECT_EQ(d.shape, (Shape{3, 32, 32}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 4, 8, 0, 4, 8}));
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3072; k += 97) {
      EXPECT_EQ(d.images[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)],
                static_cast<float>((k + 31 * r) % 256) / 255.0f);
    }

  batch.pop_back();
  write_file_atomic(dir / "short.bin", batch);
  const std::vector<std::filesystem::path> bad{dir / "short.bin"};
  EXPECT_THROW(import_cifar(bad), FormatError);
  batch.push_back(0);
  batch[0] = 10;
  write_file_atomic(dir / "label.bin", batch);
  const std::vector<std::filesystem::path> bad_label{dir / "label.bin"};
  EXPECT_THROW(import_cifar(bad_label), FormatError);
}

TEST(Toy, DeterministicAndBalanced) {
  ToyConfig cfg;
  cfg.train_per_class = 5;
  cfg.test_per_class = 3;
  const auto a = generate_toy(cfg, 7), b = generate_toy(cfg, 7), c = generate_toy(cfg, 8);
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.test.labels, b.test.labels);
  EXPECT_NE(a.train.images, c.train.images);
  ASSERT_EQ(a.train.size(), 20u);
  ASSERT_EQ(a.test.size(), 12u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(std::count(a.train.labels.begin(), a.train.labels.end(), k), 5);
  for (const auto& x : a.train.images) {
    EXPECT_EQ(quantize(x), x);
    for (float v : x.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  cfg.classes = 0;
  EXPECT_THROW(generate_toy(cfg, 1), ConfigError);
}

TEST(Checkpoint, EncodingMatchesHandBuiltBytes) {
  const std::vector<ParamEntry> entries{{"ab", {2}, {1.0f, -2.0f}}};
  std::vector<std::uint8_t> expected{'P', 'E', 'B', 'M'};
  append(expected, le32(1));
  append(expected, le32(1));
  append(expected, {2, 0, 'a', 'b', 1});
  append(expected, le32(2));
  append(expected, {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0});
  EXPECT_EQ(encode_checkpoint(entries), expected);
}

TEST(Checkpoint, RoundTripsBitwise) {
  TempDir dir;
  auto entries = some_entries();
  entries[0].values[4] = -0.0f;
  entries[0].values[5] = std::nanf("");
  entries.push_back(make_meta_entry({{"arch", "x"}, {"step", "12"}}));
  save_checkpoint(dir / "a.pebm", entries);
  const auto back = load_checkpoint(dir / "a.pebm");
  ASSERT_EQ(back.size(), entries.size());
  save_checkpoint(dir / "b.pebm", back);
  EXPECT_EQ(read_file(dir / "a.pebm"), read_file(dir / "b.pebm"));
  EXPECT_TRUE(std::signbit(back[0].values[4]));
  EXPECT_TRUE(is_meta_entry(back.back()));
  EXPECT_EQ(parse_meta_entry(back.back()).at("step"), "12");
}

TEST(Checkpoint, RejectsTruncatedAndPaddedFiles) {
  const auto bytes = encode_checkpoint(some_entries());
  for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
    EXPECT_THROW(decode_checkpoint(std::span(bytes).first(cut)), FormatError) << cut;
  }
  auto padded = bytes;
  padded.push_back(1);
  EXPECT_THROW(decode_checkpoint(padded), FormatError);
}

TEST(Checkpoint, ModelFileRoundTrip) {
  const auto spec = NetworkSpec::energy_net(Shape{3, 8, 8}, 4, 6, 5);
  RngStream rng(1, 1);
  ModelFile m{spec, NetworkParams::normal(spec, 0.1f, rng), {{"bank", {1, 3, 8, 8}, std::vector<float>(192, 0.5f)}},
              {{"kind", "ebm"}}};
  const auto bytes = encode_checkpoint(model_entries(m));
  const auto back = model_from_entries(decode_checkpoint(bytes));
  EXPECT_EQ(back.spec.to_string(), spec.to_string());
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.extras, m.extras);
  EXPECT_EQ(back.meta.at("kind"), "ebm");
  EXPECT_EQ(encode_checkpoint(model_entries(back)), bytes);

  auto no_meta = decode_checkpoint(bytes);
  no_meta.pop_back();
  EXPECT_THROW(model_from_entries(no_meta), FormatError);
}

TEST(KeyValues, ParseAndFormat) {
  const auto kv = parse_key_values("# comment\n\nalpha=0.5\nkind = triggered\n");
  EXPECT_EQ(kv.at("alpha"), "0.5");
  EXPECT_EQ(kv.at("kind"), "triggered");
  EXPECT_EQ(parse_key_values(format_key_values(kv)), kv);
  EXPECT_THROW(parse_key_values("a=1\na=2\n"), FormatError);
  EXPECT_THROW(parse_key_values("no equals sign\n"), FormatError);
}

TEST(Io, AtomicWriteLeavesNoTemporary) {
  TempDir dir;
  write_text_atomic(dir / "out.txt", "hello\n");
  write_text_atomic(dir / "out.txt", "again\n");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "")) ++files;
  EXPECT_EQ(files, 1u);
  const auto bytes = read_file(dir / "out.txt");
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "again\n");
  EXPECT_EQ(file_hash(dir / "out.txt").size(), 16u);
}

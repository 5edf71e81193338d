#include "purekit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "purekit/error.hpp"
#include "purekit/io.hpp"
#include "purekit/rng.hpp"

namespace purekit {

namespace {

constexpr std::uint8_t kMagic[4] = {'P', 'I', 'M', 'G'};
constexpr std::size_t kHeaderBytes = 4 + 5 * 4;
constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

std::uint8_t to_byte(float v) {
  const float c = std::min(std::max(v, 0.0f), 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void Dataset::validate() const {
  if (images.size() != labels.size()) throw FormatError("dataset image and label counts differ");
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(shape, images[i].shape(), "dataset record");
    if (labels[i] < 0 || labels[i] > 255) {
      throw FormatError("label " + std::to_string(labels[i]) + " does not fit in a byte");
    }
  }
}

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  data.validate();
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.shape.channels));
  w.u32(static_cast<std::uint32_t>(data.shape.height));
  w.u32(static_cast<std::uint32_t>(data.shape.width));
  for (std::size_t i = 0; i < data.size(); ++i) {
    w.u8(static_cast<std::uint8_t>(data.labels[i]));
    for (float v : data.images[i].values()) w.u8(to_byte(v));
  }
  return std::move(w.bytes());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset");
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("dataset: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Dataset d;
  const std::uint32_t c = r.u32(), h = r.u32(), wd = r.u32();
  if (c == 0 || h == 0 || wd == 0 || c > 4096 || h > 65536 || wd > 65536) {
    throw FormatError("dataset: implausible image shape");
  }
  d.shape = Shape{static_cast<int>(c), static_cast<int>(h), static_cast<int>(wd)};
  const std::size_t record = 1 + d.shape.numel();
  const std::size_t expected = kHeaderBytes + static_cast<std::size_t>(count) * record;
  if (bytes.size() != expected) {
    throw FormatError("dataset: header promises " + std::to_string(count) + " records (" +
                      std::to_string(expected) + " bytes) but the file has " +
                      std::to_string(bytes.size()) + " bytes");
  }
  d.images.reserve(count);
  d.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    d.labels.push_back(r.u8());
    const auto px = r.take(d.shape.numel());
    std::vector<float> v(px.size());
    for (std::size_t k = 0; k < px.size(); ++k) v[k] = static_cast<float>(px[k]) / 255.0f;
    d.images.emplace_back(d.shape, std::move(v));
  }
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  write_file_atomic(path, encode_dataset(data));
}

Dataset load_dataset(const std::filesystem::path& path) {
  try {
    return decode_dataset(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ImageTensor quantize(const ImageTensor& x) {
  ImageTensor out = x;
  for (float& v : out.values()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

Dataset import_cifar(std::span<const std::filesystem::path> batches) {
  Dataset d;
  d.shape = Shape{3, 32, 32};
  for (const auto& path : batches) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecord != 0) {
      throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of the 3073-byte record");
    }
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
      const int label = bytes[off];
      if (label > 9) {
        throw FormatError(path.string() + ": record " + std::to_string(off / kCifarRecord) +
                          " has label " + std::to_string(label));
      }
      std::vector<float> v(kCifarRecord - 1);
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(bytes[off + 1 + k]) / 255.0f;
      d.images.emplace_back(d.shape, std::move(v));
      d.labels.push_back(label);
    }
  }
  return d;
}

void ToyConfig::validate() const {
  if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
    throw ConfigError("toy image shape must be positive");
  }
  if (classes < 1 || classes > 256) throw ConfigError("toy classes must lie in [1, 256]");
  if (train_per_class < 0 || test_per_class < 0) throw ConfigError("toy counts must be >= 0");
  if (!(prototype_amplitude >= 0.0f) || !(background_amplitude >= 0.0f) || !(pixel_noise >= 0.0f)) {
    throw ConfigError("toy amplitudes must be >= 0");
  }
  if (!(strength_min <= strength_max)) throw ConfigError("toy strength range is empty");
  if (!(blank_fraction >= 0.0f && blank_fraction <= 1.0f)) {
    throw ConfigError("toy blank fraction must lie in [0, 1]");
  }
  if (modes < 1) throw ConfigError("toy modes must be >= 1");
  if (frequencies < 1) throw ConfigError("toy frequencies must be >= 1");
  if (support < 0 || static_cast<std::size_t>(support) > shape.numel()) {
    throw ConfigError("toy support must lie in [0, C*H*W]");
  }
}

namespace {

// Sum of random low-frequency cosines per channel, scaled to the given RMS.
ImageTensor smooth_field(Shape shape, int frequencies, float rms, RngStream& rng) {
  ImageTensor f(shape);
  for (int c = 0; c < shape.channels; ++c) {
    for (int k = 0; k < frequencies; ++k) {
      const float fx = static_cast<float>(rng.next_below(3));
      const float fy = static_cast<float>(rng.next_below(3));
      const float phase = 2.0f * std::numbers::pi_v<float> * rng.next_uniform();
      const float a = rng.next_normal();
      for (int y = 0; y < shape.height; ++y) {
        for (int x = 0; x < shape.width; ++x) {
          const float arg = 2.0f * std::numbers::pi_v<float> *
                                (fx * static_cast<float>(x) / static_cast<float>(shape.width) +
                                 fy * static_cast<float>(y) / static_cast<float>(shape.height)) +
                            phase;
          f.at(c, y, x) += a * std::cos(arg);
        }
      }
    }
  }
  double sq = 0.0;
  for (float v : f.values()) sq += static_cast<double>(v) * v;
  const double cur = std::sqrt(sq / static_cast<double>(f.size()));
  if (cur > 0.0) {
    const float scale = static_cast<float>(rms / cur);
    for (float& v : f.values()) v *= scale;
  }
  return f;
}

Dataset toy_split(const ToyConfig& cfg, const std::vector<ImageTensor>& protos, int per_class,
                  std::uint64_t seed, const char* purpose) {
  Dataset d;
  d.shape = cfg.shape;
  const std::size_t n = static_cast<std::size_t>(per_class) * static_cast<std::size_t>(cfg.classes);
  RngStream order_rng = RngStream::named(seed, std::string(purpose) + "-order");
  const auto order = permutation(n, order_rng);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t slot = order[k];
    const int label = static_cast<int>(slot / static_cast<std::size_t>(per_class));
    RngStream rng = RngStream::named(seed, purpose, slot);
    const float u = rng.next_uniform();
    float strength = cfg.strength_min + (cfg.strength_max - cfg.strength_min) * rng.next_uniform();
    if (u < cfg.blank_fraction) strength = 0.0f;
    if (cfg.random_sign && rng.next_uniform() < 0.5f) strength = -strength;
    ImageTensor bg = smooth_field(cfg.shape, cfg.frequencies, cfg.background_amplitude, rng);
    ImageTensor x(cfg.shape);
    const std::size_t mode = cfg.modes > 1 ? rng.next_below(static_cast<std::uint32_t>(cfg.modes)) : 0;
    int source = label;
    if (label == cfg.mixed_class && cfg.classes > 1 && rng.next_uniform() < cfg.mixed_fraction) {
      source = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(cfg.classes - 1)));
      if (source >= label) ++source;
    }
    const ImageTensor& p = protos[static_cast<std::size_t>(source * cfg.modes) + mode];
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = 0.5f + strength * p[i] + bg[i] + cfg.pixel_noise * rng.next_normal();
    }
    d.images.push_back(quantize(x));
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace

std::vector<ImageTensor> toy_prototypes(const ToyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<ImageTensor> protos;
  for (int k = 0; k < cfg.classes * cfg.modes; ++k) {
    const int c = k / cfg.modes;
    RngStream rng = RngStream::named(seed, "toy-prototype", static_cast<std::uint64_t>(k));
    const float amp = cfg.prototype_amplitude * (c == cfg.faint_class ? cfg.faint_scale : 1.0f);
    if (cfg.support > 0) {
      ImageTensor p(cfg.shape);
      for (std::size_t i : sample_without_replacement(p.size(), static_cast<std::size_t>(cfg.support), rng)) {
        p[i] = rng.next_uniform() < 0.5f ? -amp : amp;
      }
      protos.push_back(std::move(p));
    } else {
      protos.push_back(smooth_field(cfg.shape, cfg.frequencies, amp, rng));
    }
  }
  return protos;
}

ToySplit generate_toy(const ToyConfig& cfg, std::uint64_t seed) {
  const auto protos = toy_prototypes(cfg, seed);
  return ToySplit{toy_split(cfg, protos, cfg.train_per_class, seed, "toy-train"),
                  toy_split(cfg, protos, cfg.test_per_class, seed, "toy-test")};
}

}  // namespace purekit

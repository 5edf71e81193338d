#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "purekit/tensor.hpp"

namespace purekit {

struct Dataset {
  Shape shape;
  std::vector<ImageTensor> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  void validate() const;
};

// "PIMG" image set:
//   magic "PIMG" | version u32 | count u32 | C u32 | H u32 | W u32
//   per record: label u8 | C*H*W pixel bytes, channel-planar row-major
// Pixels are stored as round(255 * v) and read back as byte / 255.
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

// Snaps every pixel onto the 8-bit grid the file format stores.
ImageTensor quantize(const ImageTensor& x);

// Standard CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per
// record) rewrapped as one dataset; pixel bytes are carried over unchanged.
Dataset import_cifar(std::span<const std::filesystem::path> batches);

// Synthetic classes at desk scale. Each class owns a smooth prototype (a few
// random low-frequency cosines per channel). An image is
//   0.5 + strength * prototype + background + pixel noise,
// with a random smooth background shared by all classes, clamped and snapped
// to the 8-bit grid.
struct ToyConfig {
  Shape shape{3, 8, 8};
  int classes = 4;
  int train_per_class = 250;
  int test_per_class = 250;
  float prototype_amplitude = 0.15f;
  float strength_min = 0.5f;  // per-image class strength ~ U[min, max]
  float strength_max = 1.0f;
  float blank_fraction = 0.0f;  // share of images drawn with strength 0
  int modes = 1;                // prototypes per class; each image uses one
  int support = 0;              // > 0: prototypes are this many +-amplitude pixels
  bool random_sign = false;     // prototype enters with a random sign per image
  int faint_class = -1;         // this class's prototype is scaled by faint_scale
  float faint_scale = 1.0f;
  int mixed_class = -1;         // a share of this class's images use another class's prototype
  float mixed_fraction = 0.0f;
  float background_amplitude = 0.1f;
  float pixel_noise = 0.03f;
  int frequencies = 2;        // cosines per channel in a prototype or background

  void validate() const;
};

struct ToySplit {
  Dataset train;
  Dataset test;
};

ToySplit generate_toy(const ToyConfig& cfg, std::uint64_t seed);

// The class prototypes generate_toy draws for `seed`.
std::vector<ImageTensor> toy_prototypes(const ToyConfig& cfg, std::uint64_t seed);

}  // namespace purekit

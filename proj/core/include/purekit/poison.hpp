#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "purekit/io.hpp"
#include "purekit/network.hpp"
#include "purekit/tensor.hpp"

namespace purekit {

enum class PoisonKind { triggered, triggerless_random };

std::string to_string(PoisonKind kind);
PoisonKind parse_poison_kind(const std::string& s);

inline constexpr float kDefaultXi = 8.0f / 255.0f;

struct PoisonSpec {
  PoisonKind kind = PoisonKind::triggered;
  float xi = kDefaultXi;
  float alpha = 1.0f;      // fraction of class pi (triggered) or of the set (random)
  int target_class = 0;    // y^pi
  int adv_label = 0;       // y^adv
  std::optional<ImageTensor> rho;  // triggered kind only

  void validate() const;

  // Scalar fields as key=value text; rho travels in its own file.
  KeyValues to_key_values() const;
  static PoisonSpec from_key_values(const KeyValues& kv);
};

struct PoisonedDataset {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  std::vector<std::uint8_t> poison_mask;  // 1 = poisoned; bookkeeping only

  std::size_t size() const { return images.size(); }
};

// Elementwise clip to [-xi, xi].
ImageTensor project_linf(const ImageTensor& t, float xi);

// clamp(x + rho, 0, 1)
ImageTensor apply_trigger(const ImageTensor& x, const ImageTensor& rho);

// Mean cross-entropy of clamp(x + rho) against `target` over `images`.
double trigger_loss(const NetworkSpec& spec, const NetworkParams& surrogate,
                    std::span<const ImageTensor> images, const ImageTensor& rho, int target);

struct TriggerConfig {
  int iters = 300;
  std::optional<float> lr;  // default xi / 10
  int batch_size = 64;      // minibatch of class-pi images per iteration
  std::uint64_t seed = 0;
};

// Class-wide trigger: signed-gradient descent on the surrogate's
// cross-entropy toward `target` over class-pi images only, projected onto
// the l-inf ball after every step.
ImageTensor craft_trigger(const NetworkSpec& spec, const NetworkParams& surrogate,
                          std::span<const ImageTensor> dataset_pi, int target, float xi,
                          const TriggerConfig& cfg);

// Deterministic selection from `seed`. Labels are never changed.
PoisonedDataset build_poisoned_dataset(std::span<const ImageTensor> clean,
                                       std::span<const int> labels, const PoisonSpec& spec,
                                       std::uint64_t seed);

// Number of records this PoisonSpec poisons in a set with these labels.
std::size_t poison_count(std::span<const int> labels, const PoisonSpec& spec);

// Trigger file: a single-entry checkpoint named "rho" with shape [C,H,W].
void save_trigger(const std::filesystem::path& path, const ImageTensor& rho);
ImageTensor load_trigger(const std::filesystem::path& path);

// Mask sidecar: one byte (0/1) per record.
void save_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask);
std::vector<std::uint8_t> load_mask(const std::filesystem::path& path);

}  // namespace purekit

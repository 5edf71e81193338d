#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace purekit {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

// Named sub-stream key: the same global seed expands into independent
// "data", "init", "langevin", "sgd", ... streams.
std::uint64_t derive_key(std::uint64_t seed, std::string_view purpose);

// A cursor into one Philox stream. The 128-bit counter is laid out as
//   word0 = block index within a step, word1 = step, word2..3 = stream id,
// so any (stream, step) position is addressable without replaying earlier
// draws. Langevin chains consume exactly one step per update.
class RngStream {
 public:
  RngStream(std::uint64_t key, std::uint64_t stream_id, std::uint32_t step = 0);

  static RngStream named(std::uint64_t seed, std::string_view purpose,
                         std::uint64_t stream_id = 0, std::uint32_t step = 0) {
    return RngStream(derive_key(seed, purpose), stream_id, step);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint32_t step() const { return step_; }

  // Moves to the start of `step`'s draw block.
  void seek(std::uint32_t step);
  // Moves to the start of the next step's draw block.
  void advance() { seek(step_ + 1); }

  std::uint32_t next_u32();
  // Uniform in [0, 1) with 24 random bits.
  float next_uniform();
  // Standard normal via Box-Muller.
  float next_normal();
  // Unbiased integer in [0, bound).
  std::uint32_t next_below(std::uint32_t bound);

  void fill_normal(std::span<float> out);
  void fill_uniform(std::span<float> out, float lo, float hi);

 private:
  void refill();

  std::uint64_t key_;
  std::uint64_t stream_id_;
  std::uint32_t step_;
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  float spare_normal_ = 0.0f;
};

// First `count` entries of a Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count,
                                                    RngStream& rng);

// Full Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, RngStream& rng);

}  // namespace purekit

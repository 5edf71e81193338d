#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "purekit/energy_model.hpp"
#include "purekit/rng.hpp"
#include "purekit/tensor.hpp"

namespace purekit {

struct LangevinConfig {
  int steps = 150;            // T
  float step_size = 5e-5f;    // dtau; per-step noise std is noise_scale * sqrt(2 dtau)
  float noise_scale = 1.0f;   // eta
  std::optional<std::pair<float, float>> clamp = std::pair{0.0f, 1.0f};

  void validate() const;
};

// Purpose tag of the per-chain noise streams; chain c of a run seeded with s
// draws step t's noise from RngStream::named(s, kLangevinStream, c) at step t.
inline constexpr const char* kLangevinStream = "langevin";

struct ChainState {
  ImageTensor x;
  std::uint32_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t chain_id = 0;

  RngStream stream() const { return RngStream::named(seed, kLangevinStream, chain_id, step); }
};

// x' = x - dtau * dG/dx + eta * sqrt(2 dtau) * eps, then the optional clamp.
// Draws eps at the stream's current step and advances the stream by one step.
// Throws NumericError (carrying the step) on a non-finite gradient.
ImageTensor langevin_step(const ImageTensor& x, const EnergyModel& model,
                          const LangevinConfig& cfg, RngStream& rng);

// Advances a chain by `steps` updates.
void run_chain(ChainState& chain, const EnergyModel& model, const LangevinConfig& cfg, int steps);

// Psi_T applied to every image; image i runs as chain chain_ids[i] (default: i).
// Output order matches input; bitwise reproducible for (model, cfg, seed).
std::vector<ImageTensor> purify(std::span<const ImageTensor> images, const EnergyModel& model,
                                const LangevinConfig& cfg, std::uint64_t seed,
                                std::span<const std::uint64_t> chain_ids = {});

// Chain id derived from the image bytes, so the noise follows the image
// through any reordering of the dataset.
std::uint64_t content_chain_id(const ImageTensor& x);

struct TrajectoryRecord {
  std::vector<int> steps;
  std::vector<float> d_clean_pure;         // ||x - Psi_t(x)||
  std::vector<float> d_clean_poisonpure;   // ||x - Psi_t(x + delta)||
  std::vector<float> d_poison_poisonpure;  // ||(x + delta) - Psi_t(x + delta)||
  // First recorded step where d_poison_poisonpure > d_clean_poisonpure holds
  // at it and at the next recorded point.
  std::optional<int> crossover;
};

// Runs Psi_t on x and on x + delta with shared noise, sampling the three
// distance curves every `record_every` steps (and at cfg.steps).
TrajectoryRecord trajectory_distances(const ImageTensor& x_clean, const ImageTensor& delta,
                                      const EnergyModel& model, const LangevinConfig& cfg,
                                      int record_every, std::uint64_t seed,
                                      std::uint64_t chain_id = 0);

// Pointwise mean of records that share a step grid; crossover recomputed.
TrajectoryRecord mean_trajectory(std::span<const TrajectoryRecord> records);
std::optional<int> find_crossover(const TrajectoryRecord& record);

struct LyapunovConfig {
  int horizon = 2000;
  int renorm_every = 10;
  float d0 = 1e-4f;
};

// Maximal Lyapunov exponent (per step) of the Langevin map by Benettin's
// method: a base chain and a chain offset by d0 share every noise draw, the
// offset is renormalized to d0 every renorm_every steps, and the log growth
// factors are averaged over the horizon. cfg.steps is ignored.
double lyapunov_exponent(const EnergyModel& model, const ImageTensor& x0,
                         const LangevinConfig& cfg, const LyapunovConfig& lcfg,
                         std::uint64_t seed, std::uint64_t chain_id = 0);

}  // namespace purekit

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "purekit/checkpoint.hpp"
#include "purekit/langevin.hpp"
#include "purekit/network.hpp"

namespace purekit {

struct TrainConfig {
  int steps = 5000;                  // J
  int batch_size = 64;               // m
  float data_noise = 0.02f;          // tau_data
  int langevin_steps = 100;          // K
  float langevin_step_size = 5e-5f;  // dtau
  float noise_scale = 1.0f;          // eta
  float sgd_lr = 5e-5f;              // gamma_SGD
  float init_std = 0.02f;
  float divergence_limit = 1e4f;     // abort when |mean E+ - mean E-| exceeds this
  std::uint64_t seed = 0;

  void validate() const;
  LangevinConfig langevin() const;
  Metadata to_metadata() const;
  static TrainConfig from_metadata(const Metadata& meta);
};

// Persistent negative chains, initialized as uniform noise.
struct PersistentBank {
  std::vector<ImageTensor> images;
};

PersistentBank init_bank(int n, Shape shape, std::uint64_t seed);

struct TrainStats {
  std::uint32_t step = 0;
  float mean_pos_energy = 0.0f;
  float mean_neg_energy = 0.0f;
  float grad_norm = 0.0f;
};

// Everything needed to continue a run bit-for-bit.
struct EbmState {
  NetworkSpec spec;
  NetworkParams params;
  PersistentBank bank;
  std::uint32_t step = 0;  // completed training steps
};

EbmState init_training(const NetworkSpec& spec, int bank_size, const TrainConfig& cfg);

struct MlGradient {
  NetworkParams grad;  // d/dtheta [mean G(X+) - mean G(X-)]
  float mean_pos_energy = 0.0f;
  float mean_neg_energy = 0.0f;
};

// Maximum-likelihood gradient estimate from positive and negative batches.
MlGradient ml_gradient(const Network& net, std::span<const ImageTensor> positives,
                       std::span<const ImageTensor> negatives);

// Indices of the data batch used at `step` (uniform without replacement).
std::vector<std::size_t> select_data_batch(std::size_t dataset_size, int batch_size,
                                           std::uint64_t seed, std::uint32_t step);

// One iteration: perturb the data batch, advance the selected bank chains by
// K Langevin steps (writing them back), then take an SGD step on theta.
TrainStats train_step(EbmState& state, std::span<const ImageTensor> data_batch,
                      const TrainConfig& cfg);

struct TrainHooks {
  int checkpoint_every = 0;
  std::function<void(const EbmState&)> on_checkpoint;
  std::function<void(const TrainStats&)> on_stats;
};

// Runs until state.step == cfg.steps. Only images are consumed: labels and
// poison bookkeeping never reach the trainer.
void train_until(EbmState& state, std::span<const ImageTensor> dataset, const TrainConfig& cfg,
                 const TrainHooks& hooks = {});

NetworkParams train(std::span<const ImageTensor> dataset, const NetworkSpec& spec,
                    const TrainConfig& cfg, const TrainHooks& hooks = {});

// Training checkpoints: the parameters, the bank as entry "bank" [N,C,H,W],
// and the step/config echo in the metadata record.
ModelFile state_to_model(const EbmState& state, const TrainConfig& cfg);
EbmState state_from_model(const ModelFile& model);

}  // namespace purekit

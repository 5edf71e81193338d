#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "purekit/energy_model.hpp"
#include "purekit/langevin.hpp"
#include "purekit/network.hpp"
#include "purekit/poison.hpp"
#include "purekit/stats.hpp"

namespace purekit {

struct ClassifierConfig {
  int epochs = 30;
  int batch_size = 32;
  float lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::vector<int> milestones{15, 25};  // lr *= decay when these epochs start
  float decay = 0.1f;
  float init_std = 0.02f;

  void validate() const;
  float lr_at(int epoch) const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  float lr = 0.0f;
};

// Cross-entropy SGD. Minibatch order comes from the seed's "shuffle" stream
// and the initialization from its "init" stream.
NetworkParams train_classifier(const NetworkSpec& spec, std::span<const ImageTensor> images,
                               std::span<const int> labels, const ClassifierConfig& cfg,
                               std::uint64_t seed,
                               const std::function<void(const EpochStats&)>& on_epoch = {});

// Purifies the images once with Psi_T (chain i for record i), then trains as
// above with the labels untouched. Never looks at the poison mask. With
// lcfg.steps == 0 the result is bit-identical to train_classifier.
NetworkParams train_defended_classifier(const NetworkSpec& spec, const PoisonedDataset& data,
                                        const EnergyModel& ebm, const LangevinConfig& lcfg,
                                        const ClassifierConfig& cfg, std::uint64_t seed);

using Predictor = std::function<int(const ImageTensor&)>;

// argmax of the network's logits.
Predictor network_predictor(const NetworkSpec& spec, const NetworkParams& params);

std::vector<int> predict_all(const Predictor& model, std::span<const ImageTensor> images);

// Fraction of targets classified as their adversarial label.
double psr_triggerless(const Predictor& model, std::span<const ImageTensor> targets,
                       std::span<const int> adv_labels);

// Fraction of test images with label != y_pi that are classified y_pi once
// rho is applied.
double psr_triggered(const Predictor& model, std::span<const ImageTensor> images,
                     std::span<const int> labels, const ImageTensor& rho, int y_pi);

double natural_accuracy(const Predictor& model, std::span<const ImageTensor> images,
                        std::span<const int> labels);

struct ClassAccuracy {
  int label = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
};

// One row per label present in the set, ascending.
std::vector<ClassAccuracy> per_class_accuracy(const Predictor& model,
                                              std::span<const ImageTensor> images,
                                              std::span<const int> labels);

struct EnergyGap {
  MeanInterval clean;
  MeanInterval poisoned;
  MeanInterval purified;
};

std::vector<double> energies(const EnergyModel& ebm, std::span<const ImageTensor> images);

// Mean energies with 99% percentile-bootstrap intervals.
EnergyGap energy_gap_report(const EnergyModel& ebm, std::span<const ImageTensor> clean,
                            std::span<const ImageTensor> poisoned,
                            std::span<const ImageTensor> purified, std::uint64_t seed,
                            int resamples = 2000);

struct DivergenceCurve {
  std::vector<double> percentiles;
  std::vector<double> l1_distance;
};

// For each p: sum of the largest ceil(p/100 * n) entries of |a - b|.
DivergenceCurve param_divergence(const NetworkParams& a, const NetworkParams& b,
                                 std::span<const double> percentiles);

struct EvalReport {
  std::optional<double> psr;  // triggered or triggerless, per `psr_kind`
  std::string psr_kind;
  double natural_accuracy = 0.0;
  std::vector<ClassAccuracy> per_class;
  std::optional<EnergyGap> energy_gap;
  std::vector<std::string> notes;

  std::string to_csv() const;
  std::string to_text() const;
};

std::string divergence_csv(const DivergenceCurve& curve);

}  // namespace purekit

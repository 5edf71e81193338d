#include "purekit/defense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "purekit/error.hpp"
#include "purekit/optim.hpp"
#include "purekit/parallel.hpp"
#include "purekit/rng.hpp"

namespace purekit {

void ClassifierConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("classifier batch size must be >= 1");
  if (!(lr >= 0.0f)) throw ConfigError("classifier lr must be >= 0");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0f)) throw ConfigError("weight decay must be >= 0");
  if (!(decay > 0.0f)) throw ConfigError("lr decay factor must be > 0");
  if (!(init_std >= 0.0f)) throw ConfigError("init std must be >= 0");
}

float ClassifierConfig::lr_at(int epoch) const {
  float r = lr;
  for (int m : milestones) {
    if (epoch >= m) r *= decay;
  }
  return r;
}

NetworkParams train_classifier(const NetworkSpec& spec, std::span<const ImageTensor> images,
                               std::span<const int> labels, const ClassifierConfig& cfg,
                               std::uint64_t seed,
                               const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (images.size() != labels.size()) throw ConfigError("image and label counts differ");
  if (images.empty()) throw ConfigError("classifier training needs a non-empty dataset");
  RngStream init = RngStream::named(seed, "init");
  NetworkParams params = NetworkParams::normal(spec, cfg.init_std, init);
  for (const auto& x : images) require_same_shape(spec.input, x.shape(), "training image");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= spec.output_size()) {
      throw ConfigError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(spec.output_size()) + ")");
    }
  }

  SgdState state;
  std::vector<float> dlogits(spec.output_size());
  const std::size_t n = images.size();
  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream shuffle = RngStream::named(seed, "shuffle", 0, static_cast<std::uint32_t>(epoch));
    const auto order = permutation(n, shuffle);
    const SgdConfig sgd{cfg.lr_at(epoch), cfg.momentum, cfg.weight_decay};
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += b) {
      const std::size_t end = std::min(n, start + b);
      const Network net(spec, params);
      auto ws = net.make_workspace();
      auto grads = net.make_gradients();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        loss_sum += softmax_cross_entropy(net.forward(images[i], ws), labels[i], dlogits);
        net.backward(dlogits, ws, nullptr, &grads);
      }
      const NetworkParams g = net.to_params(grads, 1.0f / static_cast<float>(end - start));
      sgd_step(params, g, sgd, state);
    }
    const double mean_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(mean_loss) || !params.all_finite()) {
      throw NumericError("classifier training diverged", epoch);
    }
    if (on_epoch) on_epoch(EpochStats{epoch, mean_loss, sgd.lr});
  }
  return params;
}

NetworkParams train_defended_classifier(const NetworkSpec& spec, const PoisonedDataset& data,
                                        const EnergyModel& ebm, const LangevinConfig& lcfg,
                                        const ClassifierConfig& cfg, std::uint64_t seed) {
  const auto purified = purify(data.images, ebm, lcfg, seed);
  return train_classifier(spec, purified, data.labels, cfg, seed);
}

Predictor network_predictor(const NetworkSpec& spec, const NetworkParams& params) {
  auto net = std::make_shared<const Network>(spec, params);
  return [net](const ImageTensor& x) {
    thread_local Network::Workspace ws;
    return argmax(net->forward(x, ws));
  };
}

std::vector<int> predict_all(const Predictor& model, std::span<const ImageTensor> images) {
  std::vector<int> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) { out[i] = model(images[i]); });
  return out;
}

namespace {

void require_labels(std::span<const ImageTensor> images, std::span<const int> labels) {
  if (images.size() != labels.size()) throw ConfigError("image and label counts differ");
  if (images.empty()) throw ConfigError("evaluation set is empty");
}

}  // namespace

double psr_triggerless(const Predictor& model, std::span<const ImageTensor> targets,
                       std::span<const int> adv_labels) {
  if (targets.size() != adv_labels.size()) throw ConfigError("target and label counts differ");
  if (targets.empty()) throw ConfigError("triggerless PSR needs at least one target");
  const auto pred = predict_all(model, targets);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == adv_labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double psr_triggered(const Predictor& model, std::span<const ImageTensor> images,
                     std::span<const int> labels, const ImageTensor& rho, int y_pi) {
  if (images.size() != labels.size()) throw ConfigError("image and label counts differ");
  std::vector<ImageTensor> patched;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] != y_pi) patched.push_back(apply_trigger(images[i], rho));
  }
  if (patched.empty()) throw ConfigError("triggered PSR needs at least one image outside class pi");
  const auto pred = predict_all(model, patched);
  const auto hits = std::count(pred.begin(), pred.end(), y_pi);
  return static_cast<double>(hits) / static_cast<double>(patched.size());
}

double natural_accuracy(const Predictor& model, std::span<const ImageTensor> images,
                        std::span<const int> labels) {
  require_labels(images, labels);
  const auto pred = predict_all(model, images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<ClassAccuracy> per_class_accuracy(const Predictor& model,
                                              std::span<const ImageTensor> images,
                                              std::span<const int> labels) {
  require_labels(images, labels);
  const auto pred = predict_all(model, images);
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // label -> (hits, count)
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto& t = tally[labels[i]];
    t.first += pred[i] == labels[i];
    ++t.second;
  }
  std::vector<ClassAccuracy> out;
  for (const auto& [label, t] : tally) {
    out.push_back({label, t.second, static_cast<double>(t.first) / static_cast<double>(t.second)});
  }
  return out;
}

std::vector<double> energies(const EnergyModel& ebm, std::span<const ImageTensor> images) {
  std::vector<double> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) { out[i] = ebm.energy(images[i]); });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) throw NumericError("non-finite energy", std::nullopt, static_cast<std::int64_t>(i));
  }
  return out;
}

EnergyGap energy_gap_report(const EnergyModel& ebm, std::span<const ImageTensor> clean,
                            std::span<const ImageTensor> poisoned,
                            std::span<const ImageTensor> purified, std::uint64_t seed,
                            int resamples) {
  if (clean.size() != poisoned.size() || clean.size() != purified.size()) {
    throw ConfigError("energy gap needs aligned clean, poisoned and purified sets");
  }
  if (clean.empty()) throw ConfigError("energy gap needs at least one image");
  EnergyGap gap;
  gap.clean = bootstrap_mean(energies(ebm, clean), 0.99, resamples, seed);
  gap.poisoned = bootstrap_mean(energies(ebm, poisoned), 0.99, resamples, seed);
  gap.purified = bootstrap_mean(energies(ebm, purified), 0.99, resamples, seed);
  return gap;
}

DivergenceCurve param_divergence(const NetworkParams& a, const NetworkParams& b,
                                 std::span<const double> percentiles) {
  a.require_same_layout(b, "parameter divergence");
  std::vector<float> diff;
  diff.reserve(a.total_size());
  for (std::size_t e = 0; e < a.entries().size(); ++e) {
    const auto& va = a.entries()[e].values;
    const auto& vb = b.entries()[e].values;
    for (std::size_t i = 0; i < va.size(); ++i) diff.push_back(std::fabs(va[i] - vb[i]));
  }
  std::sort(diff.begin(), diff.end(), std::greater<>());
  // prefix[k] = sum of the k largest entries, added largest first
  std::vector<double> prefix(diff.size() + 1, 0.0);
  for (std::size_t i = 0; i < diff.size(); ++i) prefix[i + 1] = prefix[i] + diff[i];

  DivergenceCurve curve;
  for (double p : percentiles) {
    if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("percentiles must lie in [0, 100]");
    const auto k = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(diff.size())));
    curve.percentiles.push_back(p);
    curve.l1_distance.push_back(prefix[std::min(k, diff.size())]);
  }
  return curve;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "metric,value\n";
  if (psr) os << "psr_" << psr_kind << ',' << num(*psr) << '\n';
  os << "natural_accuracy," << num(natural_accuracy) << '\n';
  for (const auto& c : per_class) os << "accuracy_class_" << c.label << ',' << num(c.accuracy) << '\n';
  if (energy_gap) {
    auto row = [&](const char* name, const MeanInterval& m) {
      os << "energy_" << name << "_mean," << num(m.mean) << '\n';
      os << "energy_" << name << "_lo99," << num(m.lo) << '\n';
      os << "energy_" << name << "_hi99," << num(m.hi) << '\n';
    };
    row("clean", energy_gap->clean);
    row("poisoned", energy_gap->poisoned);
    row("purified", energy_gap->purified);
  }
  return os.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  if (psr) os << "poison success (" << psr_kind << "): " << num(100.0 * *psr) << "%\n";
  os << "natural accuracy: " << num(100.0 * natural_accuracy) << "%\n";
  if (!per_class.empty()) {
    os << "classes evaluated:";
    for (const auto& c : per_class) os << ' ' << c.label;
    os << '\n';
    for (const auto& c : per_class) {
      os << "  class " << c.label << ": " << num(100.0 * c.accuracy) << "% of " << c.count << '\n';
    }
  }
  if (energy_gap) {
    auto row = [&](const char* name, const MeanInterval& m) {
      os << "  " << name << ": " << num(m.mean) << " [" << num(m.lo) << ", " << num(m.hi) << "]\n";
    };
    os << "mean energy (99% bootstrap):\n";
    row("clean", energy_gap->clean);
    row("poisoned", energy_gap->poisoned);
    row("purified", energy_gap->purified);
  }
  for (const auto& n : notes) os << "note: " << n << '\n';
  return os.str();
}

std::string divergence_csv(const DivergenceCurve& curve) {
  std::ostringstream os;
  os << "percentile,l1_distance\n";
  for (std::size_t i = 0; i < curve.percentiles.size(); ++i) {
    os << num(curve.percentiles[i]) << ',' << num(curve.l1_distance[i]) << '\n';
  }
  return os.str();
}

}  // namespace purekit

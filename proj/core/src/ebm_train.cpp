#include "purekit/ebm_train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "purekit/error.hpp"
#include "purekit/optim.hpp"
#include "purekit/parallel.hpp"
#include "purekit/rng.hpp"

namespace purekit {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("training steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(data_noise >= 0.0f)) throw ConfigError("data noise must be >= 0");
  if (langevin_steps < 0) throw ConfigError("Langevin steps per iteration must be >= 0");
  if (!(sgd_lr >= 0.0f)) throw ConfigError("SGD learning rate must be >= 0");
  if (!(init_std >= 0.0f)) throw ConfigError("init std must be >= 0");
  if (!(divergence_limit > 0.0f)) throw ConfigError("divergence limit must be > 0");
  langevin().validate();
}

LangevinConfig TrainConfig::langevin() const {
  LangevinConfig l;
  l.steps = langevin_steps;
  l.step_size = langevin_step_size;
  l.noise_scale = noise_scale;
  l.clamp = std::pair{0.0f, 1.0f};
  return l;
}

namespace {

std::string fstr(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

float meta_float(const Metadata& m, const char* key) {
  auto it = m.find(key);
  if (it == m.end()) throw FormatError(std::string("metadata is missing ") + key);
  return std::stof(it->second);
}

long long meta_int(const Metadata& m, const char* key) {
  auto it = m.find(key);
  if (it == m.end()) throw FormatError(std::string("metadata is missing ") + key);
  return std::stoll(it->second);
}

}  // namespace

Metadata TrainConfig::to_metadata() const {
  return {{"train.steps", std::to_string(steps)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.data_noise", fstr(data_noise)},
          {"train.langevin_steps", std::to_string(langevin_steps)},
          {"train.langevin_step_size", fstr(langevin_step_size)},
          {"train.noise_scale", fstr(noise_scale)},
          {"train.sgd_lr", fstr(sgd_lr)},
          {"train.init_std", fstr(init_std)},
          {"train.divergence_limit", fstr(divergence_limit)},
          {"train.seed", std::to_string(seed)}};
}

TrainConfig TrainConfig::from_metadata(const Metadata& m) {
  TrainConfig c;
  c.steps = static_cast<int>(meta_int(m, "train.steps"));
  c.batch_size = static_cast<int>(meta_int(m, "train.batch_size"));
  c.data_noise = meta_float(m, "train.data_noise");
  c.langevin_steps = static_cast<int>(meta_int(m, "train.langevin_steps"));
  c.langevin_step_size = meta_float(m, "train.langevin_step_size");
  c.noise_scale = meta_float(m, "train.noise_scale");
  c.sgd_lr = meta_float(m, "train.sgd_lr");
  c.init_std = meta_float(m, "train.init_std");
  c.divergence_limit = meta_float(m, "train.divergence_limit");
  c.seed = std::stoull(m.at("train.seed"));
  return c;
}

PersistentBank init_bank(int n, Shape shape, std::uint64_t seed) {
  if (n < 1) throw ConfigError("bank size must be >= 1");
  PersistentBank bank;
  bank.images.reserve(static_cast<std::size_t>(n));
  RngStream rng = RngStream::named(seed, "bank-init");
  for (int i = 0; i < n; ++i) {
    ImageTensor img(shape);
    rng.fill_uniform(img.values(), 0.0f, 1.0f);
    bank.images.push_back(std::move(img));
  }
  return bank;
}

EbmState init_training(const NetworkSpec& spec, int bank_size, const TrainConfig& cfg) {
  cfg.validate();
  if (spec.output_size() != 1) throw ShapeError("energy network must output one scalar");
  EbmState state;
  state.spec = spec;
  RngStream init = RngStream::named(cfg.seed, "init");
  state.params = NetworkParams::normal(spec, cfg.init_std, init);
  state.bank = init_bank(bank_size, spec.input, cfg.seed);
  return state;
}

MlGradient ml_gradient(const Network& net, std::span<const ImageTensor> positives,
                       std::span<const ImageTensor> negatives) {
  if (positives.empty() || negatives.empty()) {
    throw ConfigError("ML gradient needs non-empty positive and negative batches");
  }
  auto ws = net.make_workspace();
  auto pos = net.make_gradients();
  auto neg = net.make_gradients();
  const float one = 1.0f;
  double pos_energy = 0.0, neg_energy = 0.0;
  for (const ImageTensor& x : positives) {
    pos_energy += net.forward(x, ws)[0];
    net.backward(std::span(&one, 1), ws, nullptr, &pos);
  }
  for (const ImageTensor& x : negatives) {
    neg_energy += net.forward(x, ws)[0];
    net.backward(std::span(&one, 1), ws, nullptr, &neg);
  }
  MlGradient out;
  out.grad = net.to_params(pos, 1.0f / static_cast<float>(positives.size()));
  const NetworkParams neg_mean = net.to_params(neg, 1.0f / static_cast<float>(negatives.size()));
  for (std::size_t e = 0; e < out.grad.entries().size(); ++e) {
    auto& g = out.grad.entries()[e].values;
    const auto& n = neg_mean.entries()[e].values;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n[i];
  }
  out.mean_pos_energy = static_cast<float>(pos_energy / static_cast<double>(positives.size()));
  out.mean_neg_energy = static_cast<float>(neg_energy / static_cast<double>(negatives.size()));
  return out;
}

std::vector<std::size_t> select_data_batch(std::size_t dataset_size, int batch_size,
                                           std::uint64_t seed, std::uint32_t step) {
  RngStream rng = RngStream::named(seed, "data", 0, step);
  return sample_without_replacement(dataset_size, static_cast<std::size_t>(batch_size), rng);
}

TrainStats train_step(EbmState& state, std::span<const ImageTensor> data_batch,
                      const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t m = data_batch.size();
  if (m != static_cast<std::size_t>(cfg.batch_size)) {
    throw ConfigError("data batch has " + std::to_string(m) + " images, config expects " +
                      std::to_string(cfg.batch_size));
  }
  if (state.bank.images.size() < m) throw ConfigError("bank is smaller than the batch");
  const std::uint32_t step = state.step;
  const Network net(state.spec, state.params);

  // X+ = clamp(x + tau_data * eps)
  std::vector<ImageTensor> positives(data_batch.begin(), data_batch.end());
  {
    RngStream rng = RngStream::named(cfg.seed, "positive", 0, step);
    for (auto& x : positives) {
      require_same_shape(state.spec.input, x.shape(), "training image");
      for (float& v : x.values()) v = std::min(std::max(v + cfg.data_noise * rng.next_normal(), 0.0f), 1.0f);
    }
  }

  // X- from the persistent bank after K Langevin steps.
  RngStream select = RngStream::named(cfg.seed, "bank-select", 0, step);
  const auto slots = sample_without_replacement(state.bank.images.size(), m, select);
  const NetworkEnergy model(state.spec, state.params);
  const LangevinConfig lcfg = cfg.langevin();
  const std::uint64_t chain_seed = derive_key(cfg.seed, "negatives");
  std::vector<ImageTensor> negatives(m);
  parallel_for(m, [&](std::size_t j) {
    ChainState chain{state.bank.images[slots[j]], 0, chain_seed,
                     (static_cast<std::uint64_t>(step) << 32) | slots[j]};
    try {
      run_chain(chain, model, lcfg, cfg.langevin_steps);
    } catch (const NumericError& e) {
      throw NumericError(std::string("negative chain: ") + e.what(), step);
    }
    negatives[j] = std::move(chain.x);
  });
  for (std::size_t j = 0; j < m; ++j) state.bank.images[slots[j]] = negatives[j];

  MlGradient g = ml_gradient(net, positives, negatives);
  TrainStats stats;
  stats.step = step;
  stats.mean_pos_energy = g.mean_pos_energy;
  stats.mean_neg_energy = g.mean_neg_energy;
  double sq = 0.0;
  for (const auto& e : g.grad.entries())
    for (float v : e.values) sq += static_cast<double>(v) * v;
  stats.grad_norm = static_cast<float>(std::sqrt(sq));

  if (!std::isfinite(stats.mean_pos_energy) || !std::isfinite(stats.mean_neg_energy) ||
      !std::isfinite(stats.grad_norm)) {
    throw NumericError("non-finite energy or gradient during EBM training", step);
  }
  if (std::fabs(stats.mean_pos_energy - stats.mean_neg_energy) > cfg.divergence_limit) {
    throw NumericError("EBM training diverged: |E+ - E-| = " +
                           std::to_string(std::fabs(stats.mean_pos_energy - stats.mean_neg_energy)),
                       step);
  }

  SgdState sgd_state;
  sgd_step(state.params, g.grad, SgdConfig{cfg.sgd_lr, 0.0f, 0.0f}, sgd_state);
  ++state.step;
  return stats;
}

void train_until(EbmState& state, std::span<const ImageTensor> dataset, const TrainConfig& cfg,
                 const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("EBM training needs a non-empty dataset");
  if (dataset.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw ConfigError("dataset is smaller than the batch size");
  }
  std::vector<ImageTensor> batch(static_cast<std::size_t>(cfg.batch_size));
  while (state.step < static_cast<std::uint32_t>(cfg.steps)) {
    const auto idx = select_data_batch(dataset.size(), cfg.batch_size, cfg.seed, state.step);
    for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = dataset[idx[i]];
    const TrainStats stats = train_step(state, batch, cfg);
    if (hooks.on_stats) hooks.on_stats(stats);
    if (hooks.checkpoint_every > 0 && hooks.on_checkpoint &&
        state.step % static_cast<std::uint32_t>(hooks.checkpoint_every) == 0) {
      hooks.on_checkpoint(state);
    }
  }
}

NetworkParams train(std::span<const ImageTensor> dataset, const NetworkSpec& spec,
                    const TrainConfig& cfg, const TrainHooks& hooks) {
  if (dataset.empty()) throw ConfigError("EBM training needs a non-empty dataset");
  EbmState state = init_training(spec, static_cast<int>(dataset.size()), cfg);
  train_until(state, dataset, cfg, hooks);
  return state.params;
}

ModelFile state_to_model(const EbmState& state, const TrainConfig& cfg) {
  ModelFile model;
  model.spec = state.spec;
  model.params = state.params;
  model.meta = cfg.to_metadata();
  model.meta["kind"] = "ebm";
  model.meta["step"] = std::to_string(state.step);
  if (!state.bank.images.empty()) {
    const Shape s = state.bank.images.front().shape();
    ParamEntry bank{"bank",
                    {static_cast<int>(state.bank.images.size()), s.channels, s.height, s.width},
                    {}};
    bank.values.reserve(state.bank.images.size() * s.numel());
    for (const auto& img : state.bank.images) {
      bank.values.insert(bank.values.end(), img.values().begin(), img.values().end());
    }
    model.extras.push_back(std::move(bank));
  }
  return model;
}

EbmState state_from_model(const ModelFile& model) {
  EbmState state;
  state.spec = model.spec;
  state.params = model.params;
  auto step = model.meta.find("step");
  state.step = step == model.meta.end() ? 0 : static_cast<std::uint32_t>(std::stoul(step->second));
  for (const auto& e : model.extras) {
    if (e.name != "bank") continue;
    if (e.shape.size() != 4) throw FormatError("bank entry must have rank 4");
    const Shape s{e.shape[1], e.shape[2], e.shape[3]};
    if (!(s == model.spec.input)) throw FormatError("bank image shape does not match the network");
    for (int i = 0; i < e.shape[0]; ++i) {
      auto first = e.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * s.numel());
      state.bank.images.emplace_back(s, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(s.numel())));
    }
  }
  return state;
}

}  // namespace purekit

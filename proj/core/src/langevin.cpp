#include "purekit/langevin.hpp"

#include <cmath>
#include <string>

#include "purekit/error.hpp"
#include "purekit/parallel.hpp"

namespace purekit {

void LangevinConfig::validate() const {
  if (steps < 0) throw ConfigError("Langevin steps must be >= 0");
  if (!(step_size > 0.0f) || !std::isfinite(step_size)) {
    throw ConfigError("Langevin step size must be > 0");
  }
  if (!(noise_scale >= 0.0f) || !std::isfinite(noise_scale)) {
    throw ConfigError("Langevin noise scale must be >= 0");
  }
  if (clamp && !(clamp->first < clamp->second)) throw ConfigError("clamp range must be lo < hi");
}

namespace {

float noise_coefficient(const LangevinConfig& cfg) {
  return static_cast<float>(static_cast<double>(cfg.noise_scale) *
                            std::sqrt(2.0 * static_cast<double>(cfg.step_size)));
}

// Noise for the stream's current step; leaves the stream advanced by one step.
void draw_noise(RngStream& rng, const LangevinConfig& cfg, std::vector<float>& noise,
                std::size_t n) {
  noise.resize(n);
  if (cfg.noise_scale != 0.0f) rng.fill_normal(noise);
  rng.advance();
}

void check_gradient(const ImageTensor& grad, std::uint32_t step) {
  if (!grad.all_finite()) throw NumericError("non-finite energy gradient", step);
}

// In-place update with pre-drawn noise; `grad` is scratch.
void apply_step(ImageTensor& x, ImageTensor& grad, std::span<const float> noise,
                const EnergyModel& model, const LangevinConfig& cfg, float coef,
                std::uint32_t step) {
  model.energy_and_grad(x, grad);
  check_gradient(grad, step);
  const float dt = cfg.step_size;
  float* xv = x.data();
  const float* g = grad.data();
  const std::size_t n = x.size();
  if (cfg.noise_scale != 0.0f) {
    for (std::size_t i = 0; i < n; ++i) xv[i] = xv[i] - dt * g[i] + coef * noise[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) xv[i] = xv[i] - dt * g[i];
  }
  if (cfg.clamp) {
    const float lo = cfg.clamp->first, hi = cfg.clamp->second;
    for (std::size_t i = 0; i < n; ++i) xv[i] = std::min(std::max(xv[i], lo), hi);
  }
}

double norm_d(const ImageTensor& t) {
  double acc = 0.0;
  for (float v : t.values()) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

}  // namespace

ImageTensor langevin_step(const ImageTensor& x, const EnergyModel& model,
                          const LangevinConfig& cfg, RngStream& rng) {
  cfg.validate();
  require_same_shape(model.input_shape(), x.shape(), "Langevin input");
  const std::uint32_t step = rng.step();
  std::vector<float> noise;
  draw_noise(rng, cfg, noise, x.size());
  ImageTensor out = x;
  ImageTensor grad(x.shape());
  apply_step(out, grad, noise, model, cfg, noise_coefficient(cfg), step);
  return out;
}

void run_chain(ChainState& chain, const EnergyModel& model, const LangevinConfig& cfg,
               int steps) {
  cfg.validate();
  require_same_shape(model.input_shape(), chain.x.shape(), "Langevin input");
  if (steps < 0) throw ConfigError("run_chain needs steps >= 0");
  RngStream rng = chain.stream();
  std::vector<float> noise;
  ImageTensor grad(chain.x.shape());
  const float coef = noise_coefficient(cfg);
  for (int t = 0; t < steps; ++t) {
    const std::uint32_t step = rng.step();
    draw_noise(rng, cfg, noise, chain.x.size());
    apply_step(chain.x, grad, noise, model, cfg, coef, step);
  }
  chain.step = rng.step();
}

std::vector<ImageTensor> purify(std::span<const ImageTensor> images, const EnergyModel& model,
                                const LangevinConfig& cfg, std::uint64_t seed,
                                std::span<const std::uint64_t> chain_ids) {
  cfg.validate();
  if (!chain_ids.empty() && chain_ids.size() != images.size()) {
    throw ConfigError("purify: chain id count does not match image count");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(model.input_shape(), images[i].shape(), "purify input");
  }
  std::vector<ImageTensor> out(images.begin(), images.end());
  if (cfg.steps == 0) return out;
  parallel_for(images.size(), [&](std::size_t i) {
    ChainState chain{std::move(out[i]), 0, seed, chain_ids.empty() ? i : chain_ids[i]};
    try {
      run_chain(chain, model, cfg, cfg.steps);
    } catch (const NumericError& e) {
      throw e.with_item(static_cast<std::int64_t>(i));
    }
    out[i] = std::move(chain.x);
  });
  return out;
}

std::uint64_t content_chain_id(const ImageTensor& x) {
  return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(x.data()), x.size() * sizeof(float)));
}

std::optional<int> find_crossover(const TrajectoryRecord& r) {
  for (std::size_t i = 0; i + 1 < r.steps.size(); ++i) {
    if (r.d_poison_poisonpure[i] > r.d_clean_poisonpure[i] &&
        r.d_poison_poisonpure[i + 1] > r.d_clean_poisonpure[i + 1]) {
      return r.steps[i];
    }
  }
  return std::nullopt;
}

TrajectoryRecord trajectory_distances(const ImageTensor& x_clean, const ImageTensor& delta,
                                      const EnergyModel& model, const LangevinConfig& cfg,
                                      int record_every, std::uint64_t seed,
                                      std::uint64_t chain_id) {
  cfg.validate();
  if (record_every < 1) throw ConfigError("record_every must be >= 1");
  require_same_shape(model.input_shape(), x_clean.shape(), "trajectory input");
  require_same_shape(x_clean.shape(), delta.shape(), "trajectory delta");

  const ImageTensor poisoned = add(x_clean, delta);
  ImageTensor clean_chain = x_clean;
  ImageTensor poison_chain = poisoned;
  TrajectoryRecord rec;
  auto record = [&](int t) {
    rec.steps.push_back(t);
    rec.d_clean_pure.push_back(l2_distance(x_clean, clean_chain));
    rec.d_clean_poisonpure.push_back(l2_distance(x_clean, poison_chain));
    rec.d_poison_poisonpure.push_back(l2_distance(poisoned, poison_chain));
  };
  record(0);

  RngStream rng = RngStream::named(seed, kLangevinStream, chain_id);
  std::vector<float> noise;
  ImageTensor grad(x_clean.shape());
  const float coef = noise_coefficient(cfg);
  for (int t = 1; t <= cfg.steps; ++t) {
    const std::uint32_t step = rng.step();
    draw_noise(rng, cfg, noise, x_clean.size());
    apply_step(clean_chain, grad, noise, model, cfg, coef, step);
    apply_step(poison_chain, grad, noise, model, cfg, coef, step);
    if (t % record_every == 0 || t == cfg.steps) record(t);
  }
  rec.crossover = find_crossover(rec);
  return rec;
}

TrajectoryRecord mean_trajectory(std::span<const TrajectoryRecord> records) {
  if (records.empty()) throw ConfigError("mean_trajectory needs at least one record");
  TrajectoryRecord mean;
  mean.steps = records[0].steps;
  const std::size_t n = mean.steps.size();
  std::vector<double> a(n), b(n), c(n);
  for (const auto& r : records) {
    if (r.steps != mean.steps) throw ShapeError("trajectory records use different step grids");
    for (std::size_t i = 0; i < n; ++i) {
      a[i] += r.d_clean_pure[i];
      b[i] += r.d_clean_poisonpure[i];
      c[i] += r.d_poison_poisonpure[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(records.size());
  for (std::size_t i = 0; i < n; ++i) {
    mean.d_clean_pure.push_back(static_cast<float>(a[i] * inv));
    mean.d_clean_poisonpure.push_back(static_cast<float>(b[i] * inv));
    mean.d_poison_poisonpure.push_back(static_cast<float>(c[i] * inv));
  }
  mean.crossover = find_crossover(mean);
  return mean;
}

double lyapunov_exponent(const EnergyModel& model, const ImageTensor& x0,
                         const LangevinConfig& cfg, const LyapunovConfig& lcfg,
                         std::uint64_t seed, std::uint64_t chain_id) {
  cfg.validate();
  require_same_shape(model.input_shape(), x0.shape(), "Lyapunov start image");
  if (lcfg.renorm_every < 1 || lcfg.horizon < lcfg.renorm_every) {
    throw ConfigError("Lyapunov estimation needs horizon >= renorm_every >= 1");
  }
  if (!(lcfg.d0 > 0.0f)) throw ConfigError("Lyapunov d0 must be > 0");

  ImageTensor base = x0;
  ImageTensor delta(x0.shape());
  {
    RngStream dir = RngStream::named(seed, "lyapunov-direction", chain_id);
    dir.fill_normal(delta.values());
    const double n = norm_d(delta);
    if (n == 0.0) throw NumericError("degenerate initial perturbation");
    const float scale = static_cast<float>(lcfg.d0 / n);
    for (float& v : delta.values()) v *= scale;
  }
  double block_start_norm = norm_d(delta);

  RngStream rng = RngStream::named(seed, kLangevinStream, chain_id);
  std::vector<float> noise;
  ImageTensor grad_base(x0.shape()), grad_pert(x0.shape()), pert(x0.shape());
  const float coef = noise_coefficient(cfg);
  const float dt = cfg.step_size;
  double log_sum = 0.0;
  for (int t = 0; t < lcfg.horizon; ++t) {
    const std::uint32_t step = rng.step();
    draw_noise(rng, cfg, noise, base.size());
    for (std::size_t i = 0; i < base.size(); ++i) pert[i] = base[i] + delta[i];
    if (cfg.clamp) {
      apply_step(base, grad_base, noise, model, cfg, coef, step);
      apply_step(pert, grad_pert, noise, model, cfg, coef, step);
      for (std::size_t i = 0; i < base.size(); ++i) delta[i] = pert[i] - base[i];
    } else {
      // Common noise cancels exactly in the offset's update.
      model.energy_and_grad(pert, grad_pert);
      check_gradient(grad_pert, step);
      apply_step(base, grad_base, noise, model, cfg, coef, step);
      for (std::size_t i = 0; i < base.size(); ++i) {
        delta[i] = delta[i] - dt * (grad_pert[i] - grad_base[i]);
      }
    }
    if ((t + 1) % lcfg.renorm_every == 0 || t + 1 == lcfg.horizon) {
      const double n = norm_d(delta);
      if (n == 0.0) throw NumericError("Lyapunov perturbation collapsed to zero", step);
      if (!std::isfinite(n)) throw NumericError("Lyapunov perturbation is not finite", step);
      log_sum += std::log(n / block_start_norm);
      const float scale = static_cast<float>(lcfg.d0 / n);
      for (float& v : delta.values()) v *= scale;
      block_start_norm = norm_d(delta);
    }
  }
  return log_sum / static_cast<double>(lcfg.horizon);
}

}  // namespace purekit

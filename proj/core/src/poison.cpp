#include "purekit/poison.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "purekit/checkpoint.hpp"
#include "purekit/error.hpp"
#include "purekit/rng.hpp"

namespace purekit {

std::string to_string(PoisonKind kind) {
  return kind == PoisonKind::triggered ? "triggered" : "triggerless-random";
}

PoisonKind parse_poison_kind(const std::string& s) {
  if (s == "triggered") return PoisonKind::triggered;
  if (s == "triggerless-random") return PoisonKind::triggerless_random;
  throw ConfigError("unknown poison kind '" + s + "' (expected triggered or triggerless-random)");
}

void PoisonSpec::validate() const {
  if (!(xi >= 0.0f) || !std::isfinite(xi)) throw ConfigError("xi must be a finite value >= 0");
  if (!(alpha > 0.0f && alpha <= 1.0f)) throw ConfigError("alpha must lie in (0, 1]");
  if (target_class < 0 || target_class > 255) throw ConfigError("target class out of range");
  if (adv_label < 0 || adv_label > 255) throw ConfigError("adversarial label out of range");
  if (kind == PoisonKind::triggered) {
    if (!rho) throw ConfigError("triggered poison needs a trigger");
    if (linf_norm(*rho) > xi) throw ConfigError("trigger exceeds the l-inf bound xi");
  }
}

namespace {

std::string fstr(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

const std::string& need(const KeyValues& kv, const char* key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError(std::string("poison spec is missing '") + key + "'");
  return it->second;
}

}  // namespace

KeyValues PoisonSpec::to_key_values() const {
  return {{"kind", to_string(kind)},
          {"xi", fstr(xi)},
          {"alpha", fstr(alpha)},
          {"target_class", std::to_string(target_class)},
          {"adv_label", std::to_string(adv_label)}};
}

PoisonSpec PoisonSpec::from_key_values(const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    if (k != "kind" && k != "xi" && k != "alpha" && k != "target_class" && k != "adv_label") {
      throw ConfigError("unknown poison spec key '" + k + "'");
    }
  }
  PoisonSpec s;
  try {
    s.kind = parse_poison_kind(need(kv, "kind"));
    s.xi = std::stof(need(kv, "xi"));
    s.alpha = std::stof(need(kv, "alpha"));
    s.target_class = std::stoi(need(kv, "target_class"));
    s.adv_label = std::stoi(need(kv, "adv_label"));
  } catch (const std::logic_error&) {
    throw ConfigError("malformed number in poison spec");
  }
  return s;
}

ImageTensor project_linf(const ImageTensor& t, float xi) {
  ImageTensor out = t;
  for (float& v : out.values()) v = std::min(std::max(v, -xi), xi);
  return out;
}

ImageTensor apply_trigger(const ImageTensor& x, const ImageTensor& rho) {
  require_same_shape(x.shape(), rho.shape(), "trigger");
  ImageTensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(std::max(x[i] + rho[i], 0.0f), 1.0f);
  }
  return out;
}

double trigger_loss(const NetworkSpec& spec, const NetworkParams& surrogate,
                    std::span<const ImageTensor> images, const ImageTensor& rho, int target) {
  if (images.empty()) throw ConfigError("trigger loss needs at least one image");
  const Network net(spec, surrogate);
  auto ws = net.make_workspace();
  double total = 0.0;
  for (const ImageTensor& x : images) {
    total += softmax_cross_entropy(net.forward(apply_trigger(x, rho), ws), target, {});
  }
  return total / static_cast<double>(images.size());
}

ImageTensor craft_trigger(const NetworkSpec& spec, const NetworkParams& surrogate,
                          std::span<const ImageTensor> dataset_pi, int target, float xi,
                          const TriggerConfig& cfg) {
  if (dataset_pi.empty()) throw ConfigError("trigger crafting needs class-pi images");
  if (cfg.iters < 0) throw ConfigError("trigger iterations must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("trigger batch size must be >= 1");
  if (!(xi >= 0.0f)) throw ConfigError("xi must be >= 0");
  const Shape shape = spec.input;
  for (const auto& x : dataset_pi) require_same_shape(shape, x.shape(), "class-pi image");
  ImageTensor rho(shape);
  if (cfg.iters == 0 || xi == 0.0f) return rho;

  const float lr = cfg.lr.value_or(xi / 10.0f);
  const Network net(spec, surrogate);
  if (target < 0 || static_cast<std::size_t>(target) >= net.output_size()) {
    throw ConfigError("trigger target class out of range");
  }
  auto ws = net.make_workspace();
  std::vector<float> dlogits(net.output_size());
  ImageTensor grad(shape), xgrad(shape), shifted(shape);
  const std::size_t batch = std::min<std::size_t>(dataset_pi.size(), static_cast<std::size_t>(cfg.batch_size));

  for (int it = 0; it < cfg.iters; ++it) {
    RngStream rng = RngStream::named(cfg.seed, "trigger", 0, static_cast<std::uint32_t>(it));
    const auto idx = sample_without_replacement(dataset_pi.size(), batch, rng);
    std::fill(grad.values().begin(), grad.values().end(), 0.0f);
    double loss = 0.0;
    for (std::size_t i : idx) {
      const ImageTensor& x = dataset_pi[i];
      for (std::size_t p = 0; p < shape.numel(); ++p) shifted[p] = std::min(std::max(x[p] + rho[p], 0.0f), 1.0f);
      loss += softmax_cross_entropy(net.forward(shifted, ws), target, dlogits);
      net.backward(dlogits, ws, &xgrad, nullptr);
      for (std::size_t p = 0; p < shape.numel(); ++p) {
        const float s = x[p] + rho[p];
        if (s > 0.0f && s < 1.0f) grad[p] += xgrad[p];
      }
    }
    if (!std::isfinite(loss)) throw NumericError("trigger crafting loss is not finite", it);
    for (std::size_t p = 0; p < shape.numel(); ++p) {
      const float g = grad[p];
      const float step = g > 0.0f ? lr : (g < 0.0f ? -lr : 0.0f);
      rho[p] = std::min(std::max(rho[p] - step, -xi), xi);
    }
  }
  return rho;
}

std::size_t poison_count(std::span<const int> labels, const PoisonSpec& spec) {
  std::size_t pool = labels.size();
  if (spec.kind == PoisonKind::triggered) {
    pool = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), spec.target_class));
  }
  return static_cast<std::size_t>(std::llround(static_cast<double>(spec.alpha) * static_cast<double>(pool)));
}

PoisonedDataset build_poisoned_dataset(std::span<const ImageTensor> clean,
                                       std::span<const int> labels, const PoisonSpec& spec,
                                       std::uint64_t seed) {
  spec.validate();
  if (clean.size() != labels.size()) throw ConfigError("image and label counts differ");
  PoisonedDataset out;
  out.images.assign(clean.begin(), clean.end());
  out.labels.assign(labels.begin(), labels.end());
  out.poison_mask.assign(clean.size(), 0);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (spec.kind == PoisonKind::triggerless_random || labels[i] == spec.target_class) pool.push_back(i);
  }
  if (pool.empty()) {
    throw ConfigError(spec.kind == PoisonKind::triggered
                          ? "no images of the target class to poison"
                          : "cannot poison an empty dataset");
  }
  const std::size_t count = poison_count(labels, spec);
  RngStream select = RngStream::named(seed, "poison-select");
  auto chosen = sample_without_replacement(pool.size(), count, select);
  std::sort(chosen.begin(), chosen.end());

  RngStream noise = RngStream::named(seed, "poison-noise");
  for (std::size_t c : chosen) {
    const std::size_t i = pool[c];
    require_same_shape(clean[i].shape(), clean.front().shape(), "dataset image");
    if (spec.kind == PoisonKind::triggered) {
      out.images[i] = apply_trigger(clean[i], *spec.rho);
    } else {
      ImageTensor delta(clean[i].shape());
      noise.seek(static_cast<std::uint32_t>(i));
      noise.fill_uniform(delta.values(), -spec.xi, spec.xi);
      out.images[i] = apply_trigger(clean[i], project_linf(delta, spec.xi));
    }
    out.poison_mask[i] = 1;
  }
  return out;
}

void save_trigger(const std::filesystem::path& path, const ImageTensor& rho) {
  const Shape s = rho.shape();
  std::vector<ParamEntry> entries{
      ParamEntry{"rho", {s.channels, s.height, s.width}, {rho.values().begin(), rho.values().end()}}};
  save_checkpoint(path, entries);
}

ImageTensor load_trigger(const std::filesystem::path& path) {
  const auto entries = load_checkpoint(path);
  if (entries.size() != 1 || entries[0].name != "rho" || entries[0].shape.size() != 3) {
    throw FormatError(path.string() + ": expected a single [C,H,W] entry named rho");
  }
  const auto& e = entries[0];
  return ImageTensor(Shape{e.shape[0], e.shape[1], e.shape[2]}, e.values);
}

void save_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask) {
  write_file_atomic(path, mask);
}

std::vector<std::uint8_t> load_mask(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  for (std::uint8_t b : bytes) {
    if (b > 1) throw FormatError(path.string() + ": mask bytes must be 0 or 1");
  }
  return bytes;
}

}  // namespace purekit

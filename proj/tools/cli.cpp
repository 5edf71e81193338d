#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "purekit/checkpoint.hpp"
#include "purekit/dataset.hpp"
#include "purekit/defense.hpp"
#include "purekit/ebm_train.hpp"
#include "purekit/error.hpp"
#include "purekit/io.hpp"
#include "purekit/langevin.hpp"
#include "purekit/poison.hpp"

namespace purekit::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage: bad flags, unknown config keys, invalid values\n"
    "  3  I/O: missing input or failed write\n"
    "  4  format: malformed or truncated file\n"
    "  5  shape: artifacts with incompatible shapes\n"
    "  6  numeric: NaN/Inf or a diverging run\n"
    "\n"
    "Every command writes <output>.cfg, a key=value echo of its settings with\n"
    "input/output hashes; `--config <file>` re-runs from it (later flags win).\n"
    "PUREKIT_THREADS bounds worker threads; results do not depend on it.";

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<int> parse_ints(const std::string& text, const char* what) {
  std::vector<int> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": expected comma-separated integers, got '" + text + "'");
    }
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": expected comma-separated numbers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + " is empty");
  return out;
}

std::vector<ImageTensor> images_of(const Dataset& d) { return d.images; }

int num_classes(std::span<const int> labels) {
  if (labels.empty()) throw ConfigError("dataset is empty");
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

// An EBM checkpoint or any scalar-output model file.
struct LoadedEbm {
  ModelFile model;
  std::unique_ptr<NetworkEnergy> energy;
};

LoadedEbm load_ebm(const std::string& path) {
  LoadedEbm e;
  e.model = load_model(path);
  const auto kind = e.model.meta.find("kind");
  if (kind != e.model.meta.end() && kind->second != "ebm") {
    throw ConfigError(path + " holds a '" + kind->second + "' model, not an EBM");
  }
  e.energy = std::make_unique<NetworkEnergy>(e.model.spec, e.model.params);
  return e;
}

ModelFile load_classifier(const std::string& path) {
  auto m = load_model(path);
  const auto kind = m.meta.find("kind");
  if (kind == m.meta.end() || kind->second != "classifier") {
    throw ConfigError(path + " is not a classifier model file");
  }
  return m;
}

// Shared plumbing: option bookkeeping for the config echo and hashes.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description)
      : app_(parent.add_subcommand(name, description)) {
    app_->add_option("--config", config_, "Read settings from a key=value file");
    app_->add_option("--seed", seed_, "Global seed")->capture_default_str();
  }
  virtual ~Command() = default;

  CLI::App* app() const { return app_; }

  // Returns the one-line summary.
  virtual std::string execute() = 0;

  // Path the config echo is written next to.
  virtual std::string primary_output() const = 0;

  std::string echo() const {
    std::ostringstream os;
    os << "# purekit " << app_->get_name() << '\n';
    for (const auto& [key, path] : inputs_) {
      if (!path->empty()) os << "# input " << key << ' ' << *path << " fnv1a64=" << file_hash(*path) << '\n';
    }
    for (const auto& [key, path] : outputs_) {
      if (!path->empty() && fs::exists(*path)) {
        os << "# output " << key << ' ' << *path << " fnv1a64=" << file_hash(*path) << '\n';
      }
    }
    for (const CLI::Option* opt : app_->get_options()) {
      const std::string key = opt->get_single_name();
      if (key == "help" || key == "config" || key.empty()) continue;
      std::string value;
      if (opt->count() > 0) {
        const auto& r = opt->results();
        for (std::size_t i = 0; i < r.size(); ++i) value += (i ? "," : "") + r[i];
      } else {
        value = opt->get_default_str();
      }
      if (value.empty()) continue;
      os << key << '=' << value << '\n';
    }
    return os.str();
  }

 protected:
  CLI::Option* input(const std::string& name, std::string& dest, const std::string& desc, bool required = true) {
    inputs_.emplace_back(name, &dest);
    auto* opt = app_->add_option("--" + name, dest, desc);
    if (required) opt->required();
    return opt;
  }

  CLI::Option* output(const std::string& name, std::string& dest, const std::string& desc, bool required = true) {
    outputs_.emplace_back(name, &dest);
    auto* opt = app_->add_option("--" + name, dest, desc);
    if (required) opt->required();
    return opt;
  }

  template <typename T>
  CLI::Option* setting(const std::string& name, T& dest, const std::string& desc) {
    return app_->add_option("--" + name, dest, desc)->capture_default_str();
  }

  std::uint64_t seed_ = 0;

 private:
  CLI::App* app_;
  std::string config_;
  std::vector<std::pair<std::string, std::string*>> inputs_;
  std::vector<std::pair<std::string, std::string*>> outputs_;
};

class GenData final : public Command {
 public:
  explicit GenData(CLI::App& parent) : Command(parent, "gen-data", "Generate the synthetic toy dataset") {
    output("train-out", train_out_, "Training split (PIMG)");
    output("test-out", test_out_, "Test split (PIMG)");
    setting("channels", cfg_.shape.channels, "Image channels");
    setting("height", cfg_.shape.height, "Image height");
    setting("width", cfg_.shape.width, "Image width");
    setting("classes", cfg_.classes, "Number of classes");
    setting("train-per-class", cfg_.train_per_class, "Training images per class");
    setting("test-per-class", cfg_.test_per_class, "Test images per class");
    setting("prototype-amplitude", cfg_.prototype_amplitude, "Class prototype amplitude");
    setting("strength-min", cfg_.strength_min, "Lowest per-image prototype strength");
    setting("strength-max", cfg_.strength_max, "Highest per-image prototype strength");
    setting("blank-fraction", cfg_.blank_fraction, "Share of images without a prototype");
    setting("modes", cfg_.modes, "Prototypes per class");
    setting("support", cfg_.support, "Sparse prototypes with this many pixels (0 = smooth)");
    setting("random-sign", cfg_.random_sign, "Prototype sign drawn per image");
    setting("faint-class", cfg_.faint_class, "Class whose prototype is scaled by --faint-scale");
    setting("faint-scale", cfg_.faint_scale, "Prototype scale of the faint class");
    setting("mixed-class", cfg_.mixed_class, "Class that borrows other prototypes");
    setting("mixed-fraction", cfg_.mixed_fraction, "Share of the mixed class using another prototype");
    setting("background-amplitude", cfg_.background_amplitude, "Shared smooth background amplitude");
    setting("pixel-noise", cfg_.pixel_noise, "Per-pixel noise std");
    setting("frequencies", cfg_.frequencies, "Cosines per channel");
  }

  std::string execute() override {
    const auto split = generate_toy(cfg_, seed_);
    save_dataset(train_out_, split.train);
    save_dataset(test_out_, split.test);
    return "gen-data: " + std::to_string(split.train.size()) + " train / " + std::to_string(split.test.size()) +
           " test images (" + cfg_.shape.str() + ", " + std::to_string(cfg_.classes) + " classes) -> " +
           train_out_ + ", " + test_out_;
  }
  std::string primary_output() const override { return train_out_; }

 private:
  ToyConfig cfg_;
  std::string train_out_, test_out_;
};

class ImportCifar final : public Command {
 public:
  explicit ImportCifar(CLI::App& parent)
      : Command(parent, "import-cifar", "Convert CIFAR-10 binary batches to a PIMG dataset") {
    app()->add_option("--inputs", inputs_, "CIFAR-10 .bin batch files")->required()->delimiter(',');
    output("out", out_, "Output dataset (PIMG)");
  }

  std::string execute() override {
    std::vector<fs::path> paths(inputs_.begin(), inputs_.end());
    const auto d = import_cifar(paths);
    save_dataset(out_, d);
    return "import-cifar: " + std::to_string(d.size()) + " records from " + std::to_string(paths.size()) +
           " batch file(s) -> " + out_;
  }
  std::string primary_output() const override { return out_; }

 private:
  std::vector<std::string> inputs_;
  std::string out_;
};

class TrainEbm final : public Command {
 public:
  explicit TrainEbm(CLI::App& parent) : Command(parent, "train-ebm", "Train an energy model by ML with SGD") {
    input("data", data_, "Training images (PIMG); labels are ignored");
    output("out", out_, "Checkpoint (PEBM), rewritten at every --checkpoint-every");
    input("resume", resume_, "Continue from this checkpoint", false);
    output("log", log_, "Per-step statistics (CSV)", false);
    setting("steps", cfg_.steps, "Training steps J");
    setting("batch-size", cfg_.batch_size, "Batch size m");
    setting("data-noise", cfg_.data_noise, "Positive-sample noise tau_data");
    setting("langevin-steps", cfg_.langevin_steps, "Langevin steps K per iteration");
    setting("step-size", cfg_.langevin_step_size, "Langevin step size dtau");
    setting("noise-scale", cfg_.noise_scale, "Langevin noise scale eta");
    setting("lr", cfg_.sgd_lr, "SGD learning rate");
    setting("init-std", cfg_.init_std, "Initial weight std");
    setting("divergence-limit", cfg_.divergence_limit, "Abort when |E+ - E-| exceeds this");
    setting("bank-size", bank_size_, "Persistent bank size (0 = dataset size)");
    setting("widths", widths_, "Conv widths w1,w2,w3");
    setting("slope", slope_, "Leaky-ReLU slope");
    setting("checkpoint-every", checkpoint_every_, "Checkpoint interval in steps (0 = end only)");
  }

  std::string execute() override {
    cfg_.seed = seed_;
    cfg_.validate();
    const auto data = load_dataset(data_);
    const auto images = images_of(data);
    EbmState state;
    if (!resume_.empty()) {
      state = state_from_model(load_model(resume_));
      require_same_shape(state.spec.input, data.shape, "resumed model input");
      if (static_cast<int>(state.step) > cfg_.steps) {
        throw ConfigError("checkpoint is at step " + std::to_string(state.step) + ", beyond --steps");
      }
    } else {
      const auto w = parse_ints(widths_, "widths");
      if (w.size() != 3) throw ConfigError("--widths needs three values");
      const auto spec = NetworkSpec::energy_net(data.shape, w[0], w[1], w[2], slope_);
      const int bank = bank_size_ > 0 ? bank_size_ : static_cast<int>(data.size());
      state = init_training(spec, bank, cfg_);
    }

    std::string log = "step,mean_pos_energy,mean_neg_energy,grad_norm\n";
    TrainStats last;
    TrainHooks hooks;
    hooks.on_stats = [&](const TrainStats& s) {
      last = s;
      log += std::to_string(s.step) + ',' + num(s.mean_pos_energy) + ',' + num(s.mean_neg_energy) + ',' +
             num(s.grad_norm) + '\n';
    };
    hooks.checkpoint_every = checkpoint_every_;
    hooks.on_checkpoint = [&](const EbmState& s) {
      save_model(out_, state_to_model(s, cfg_));
      if (!log_.empty()) write_text_atomic(log_, log);
    };
    train_until(state, images, cfg_, hooks);
    save_model(out_, state_to_model(state, cfg_));
    if (!log_.empty()) write_text_atomic(log_, log);
    return "train-ebm: step " + std::to_string(state.step) + ", E+ " + num(last.mean_pos_energy) + ", E- " +
           num(last.mean_neg_energy) + " -> " + out_;
  }
  std::string primary_output() const override { return out_; }

 private:
  TrainConfig cfg_;
  std::string data_, out_, resume_, log_;
  int bank_size_ = 0;
  std::string widths_ = "32,64,64";
  float slope_ = 0.05f;
  int checkpoint_every_ = 0;
};

// Classifier flags shared by train-classifier and the poison surrogate.
struct ClassifierFlags {
  ClassifierConfig cfg;
  std::string milestones = "15,25";
  std::string widths = "16,32";

  ClassifierConfig resolved() const {
    ClassifierConfig c = cfg;
    c.milestones = parse_ints(milestones, "milestones");
    c.validate();
    return c;
  }
  NetworkSpec spec(Shape input, int classes) const {
    const auto w = parse_ints(widths, "widths");
    if (w.size() != 2) throw ConfigError("classifier --widths needs two values");
    return NetworkSpec::classifier_net(input, classes, w[0], w[1]);
  }
};

ModelFile classifier_file(const NetworkSpec& spec, NetworkParams params, int classes) {
  return ModelFile{spec, std::move(params), {}, {{"kind", "classifier"}, {"classes", std::to_string(classes)}}};
}

class Poison final : public Command {
 public:
  explicit Poison(CLI::App& parent) : Command(parent, "poison", "Build a poisoned training set") {
    input("data", data_, "Clean training set (PIMG)");
    output("out", out_, "Poisoned set (PIMG); writes <out>.mask and <out>.poison alongside");
    input("trigger", trigger_, "Use this trigger instead of crafting one", false);
    output("trigger-out", trigger_out_, "Where to write the crafted trigger (default <out>.trigger)", false);
    input("surrogate", surrogate_path_, "Pre-trained classifier for crafting (default: train one)", false);
    setting("kind", kind_, "triggered | triggerless-random");
    setting("xi", spec_.xi, "l-inf bound");
    setting("alpha", spec_.alpha, "Poison fraction");
    setting("target-class", spec_.target_class, "Target class pi");
    setting("adv-label", adv_label_, "Adversarial label (-1 = target class)");
    setting("trigger-iters", trig_.iters, "Trigger optimization steps");
    setting("trigger-lr", trigger_lr_, "Signed-gradient step (0 = xi/10)");
    setting("trigger-batch", trig_.batch_size, "Class-pi images per trigger step");
    setting("surrogate-epochs", surrogate_flags_.cfg.epochs, "Surrogate training epochs");
    setting("surrogate-lr", surrogate_flags_.cfg.lr, "Surrogate learning rate");
    setting("surrogate-init-std", surrogate_flags_.cfg.init_std, "Surrogate initial weight std");
    setting("surrogate-milestones", surrogate_flags_.milestones, "Surrogate lr decay epochs");
  }

  std::string execute() override {
    const auto data = load_dataset(data_);
    spec_.kind = parse_poison_kind(kind_);
    spec_.adv_label = adv_label_ < 0 ? spec_.target_class : adv_label_;
    if (spec_.kind == PoisonKind::triggered) {
      if (!trigger_.empty()) {
        spec_.rho = load_trigger(trigger_);
      } else {
        spec_.rho = craft();
        save_trigger(trigger_out_.empty() ? out_ + ".trigger" : trigger_out_, *spec_.rho);
      }
    }
    const auto poisoned = build_poisoned_dataset(data.images, data.labels, spec_, seed_);
    save_dataset(out_, Dataset{data.shape, poisoned.images, poisoned.labels});
    save_mask(out_ + ".mask", poisoned.poison_mask);
    write_text_atomic(out_ + ".poison", format_key_values(spec_.to_key_values()));
    const auto count = std::count(poisoned.poison_mask.begin(), poisoned.poison_mask.end(), 1);
    return "poison: " + std::to_string(count) + " of " + std::to_string(poisoned.size()) + " images (" +
           to_string(spec_.kind) + ", xi=" + num(spec_.xi) + ") -> " + out_;
  }
  std::string primary_output() const override { return out_; }

 private:
  ImageTensor craft() {
    const auto data = load_dataset(data_);
    const int classes = num_classes(data.labels);
    NetworkSpec spec;
    NetworkParams params;
    if (!surrogate_path_.empty()) {
      auto m = load_classifier(surrogate_path_);
      spec = m.spec;
      params = std::move(m.params);
    } else {
      spec = surrogate_flags_.spec(data.shape, classes);
      params = train_classifier(spec, data.images, data.labels, surrogate_flags_.resolved(),
                                derive_key(seed_, "surrogate"));
    }
    std::vector<ImageTensor> pi;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] == spec_.target_class) pi.push_back(data.images[i]);
    }
    TriggerConfig t = trig_;
    t.seed = seed_;
    if (trigger_lr_ > 0.0f) t.lr = trigger_lr_;
    return craft_trigger(spec, params, pi, spec_.target_class, spec_.xi, t);
  }
  PoisonSpec spec_;
  TriggerConfig trig_;
  ClassifierFlags surrogate_flags_;
  std::string data_, out_, trigger_, trigger_out_, surrogate_path_;
  std::string kind_ = "triggered";
  int adv_label_ = -1;
  float trigger_lr_ = 0.0f;
};

LangevinConfig langevin_flags(int steps, float step_size, float noise, bool clamp) {
  LangevinConfig c;
  c.steps = steps;
  c.step_size = step_size;
  c.noise_scale = noise;
  if (!clamp) c.clamp.reset();
  c.validate();
  return c;
}

class Purify final : public Command {
 public:
  explicit Purify(CLI::App& parent) : Command(parent, "purify", "Apply T Langevin steps to every image") {
    input("data", data_, "Images to purify (PIMG)");
    input("ebm", ebm_, "Energy model checkpoint");
    output("out", out_, "Purified set (PIMG), labels unchanged");
    setting("steps", steps_, "Langevin steps T");
    setting("step-size", step_size_, "Step size dtau");
    setting("noise-scale", noise_, "Noise scale eta");
    setting("clamp", clamp_, "Clamp pixels to [0,1] after each step");
    setting("chain-ids", chain_ids_, "index | content: how each image picks its noise stream");
  }

  std::string execute() override {
    const auto data = load_dataset(data_);
    const auto ebm = load_ebm(ebm_);
    const auto cfg = langevin_flags(steps_, step_size_, noise_, clamp_);
    std::vector<std::uint64_t> ids;
    if (chain_ids_ == "content") {
      for (const auto& x : data.images) ids.push_back(content_chain_id(x));
    } else if (chain_ids_ != "index") {
      throw ConfigError("--chain-ids must be 'index' or 'content'");
    }
    auto out = purify(data.images, *ebm.energy, cfg, seed_, ids);
    save_dataset(out_, Dataset{data.shape, std::move(out), data.labels});
    return "purify: " + std::to_string(data.size()) + " images, T=" + std::to_string(steps_) + " -> " + out_;
  }
  std::string primary_output() const override { return out_; }

 private:
  std::string data_, ebm_, out_;
  int steps_ = 150;
  float step_size_ = 5e-5f;
  float noise_ = 1.0f;
  bool clamp_ = true;
  std::string chain_ids_ = "index";
};

class TrainClassifier final : public Command {
 public:
  explicit TrainClassifier(CLI::App& parent)
      : Command(parent, "train-classifier", "Train a classifier, optionally on EBM-purified data") {
    input("data", data_, "Training set (PIMG)");
    output("out", out_, "Classifier model file");
    output("log", log_, "Per-epoch loss (CSV)", false);
    input("ebm", ebm_, "Purify the training set with this EBM first", false);
    setting("epochs", flags_.cfg.epochs, "Epochs");
    setting("batch-size", flags_.cfg.batch_size, "Minibatch size");
    setting("lr", flags_.cfg.lr, "Initial learning rate");
    setting("momentum", flags_.cfg.momentum, "SGD momentum");
    setting("weight-decay", flags_.cfg.weight_decay, "L2 weight decay");
    setting("milestones", flags_.milestones, "Epochs at which lr is multiplied by --decay ('none' for no decay)");
    setting("decay", flags_.cfg.decay, "Learning-rate decay factor");
    setting("init-std", flags_.cfg.init_std, "Initial weight std");
    setting("widths", flags_.widths, "Conv widths w1,w2");
    setting("classes", classes_, "Number of classes (0 = max label + 1)");
    setting("purify-steps", steps_, "Langevin steps T when --ebm is given");
    setting("step-size", step_size_, "Langevin step size dtau");
    setting("noise-scale", noise_, "Langevin noise scale eta");
  }

  std::string execute() override {
    const auto data = load_dataset(data_);
    const int classes = classes_ > 0 ? classes_ : num_classes(data.labels);
    const auto spec = flags_.spec(data.shape, classes);
    const auto cfg = flags_.resolved();
    std::string log = "epoch,mean_loss,lr\n";
    double last_loss = 0.0;
    NetworkParams params;
    if (!ebm_.empty()) {
      const auto ebm = load_ebm(ebm_);
      const PoisonedDataset set{data.images, data.labels, std::vector<std::uint8_t>(data.size(), 0)};
      params = train_defended_classifier(spec, set, *ebm.energy, langevin_flags(steps_, step_size_, noise_, true),
                                         cfg, seed_);
    } else {
      params = train_classifier(spec, data.images, data.labels, cfg, seed_, [&](const EpochStats& e) {
        last_loss = e.mean_loss;
        log += std::to_string(e.epoch) + ',' + num(e.mean_loss) + ',' + num(e.lr) + '\n';
      });
    }
    save_model(out_, classifier_file(spec, std::move(params), classes));
    if (!log_.empty() && ebm_.empty()) write_text_atomic(log_, log);
    std::string summary = "train-classifier: " + std::to_string(cfg.epochs) + " epochs on " +
                          std::to_string(data.size()) + " images";
    if (!ebm_.empty()) summary += " (purified, T=" + std::to_string(steps_) + ")";
    else summary += ", final loss " + num(last_loss);
    return summary + " -> " + out_;
  }
  std::string primary_output() const override { return out_; }

 private:
  ClassifierFlags flags_;
  std::string data_, out_, log_, ebm_;
  int classes_ = 0;
  int steps_ = 150;
  float step_size_ = 5e-5f;
  float noise_ = 1.0f;
};

class Eval final : public Command {
 public:
  explicit Eval(CLI::App& parent) : Command(parent, "eval", "Poison success, accuracy and energy statistics") {
    input("model", model_, "Classifier model file");
    input("data", data_, "Test set (PIMG)");
    output("report", report_, "Metrics (CSV); a readable copy goes to <report>.txt");
    input("trigger", trigger_, "Trigger for the triggered poison success rate", false);
    setting("target-class", target_, "Target class pi for --trigger");
    setting("adv-label", adv_label_, "Triggerless: share of --data classified as this label (-1 = off)");
    input("ebm", ebm_, "Energy model for the energy-gap report", false);
    input("poisoned", poisoned_, "Poisoned images aligned with --data", false);
    input("purified", purified_, "Purified images aligned with --data", false);
    input("compare", compare_, "Second classifier for the parameter divergence", false);
    output("divergence-out", divergence_out_, "Divergence percentiles (CSV)", false);
    setting("percentiles", percentiles_, "Percentiles for --compare");
  }

  std::string execute() override {
    const auto model = load_classifier(model_);
    const auto data = load_dataset(data_);
    const auto predict = network_predictor(model.spec, model.params);
    EvalReport r;
    r.natural_accuracy = natural_accuracy(predict, data.images, data.labels);
    r.per_class = per_class_accuracy(predict, data.images, data.labels);
    if (!trigger_.empty() && adv_label_ >= 0) throw ConfigError("--trigger and --adv-label are exclusive");
    if (!trigger_.empty()) {
      r.psr = psr_triggered(predict, data.images, data.labels, load_trigger(trigger_), target_);
      r.psr_kind = "triggered";
    } else if (adv_label_ >= 0) {
      const std::vector<int> adv(data.size(), adv_label_);
      r.psr = psr_triggerless(predict, data.images, adv);
      r.psr_kind = "triggerless";
    }
    if (!ebm_.empty()) {
      if (poisoned_.empty() || purified_.empty()) throw ConfigError("--ebm needs --poisoned and --purified");
      const auto ebm = load_ebm(ebm_);
      const auto p = load_dataset(poisoned_), q = load_dataset(purified_);
      r.energy_gap = energy_gap_report(*ebm.energy, data.images, p.images, q.images, seed_);
    }
    if (!compare_.empty()) {
      if (divergence_out_.empty()) throw ConfigError("--compare needs --divergence-out");
      const auto other = load_classifier(compare_);
      const auto pct = parse_doubles(percentiles_, "percentiles");
      write_text_atomic(divergence_out_, divergence_csv(param_divergence(model.params, other.params, pct)));
    }
    write_text_atomic(report_, r.to_csv());
    write_text_atomic(report_ + ".txt", r.to_text());
    std::string summary = "eval: accuracy " + num(100.0 * r.natural_accuracy) + "%";
    if (r.psr) summary += ", psr (" + r.psr_kind + ") " + num(100.0 * *r.psr) + "%";
    return summary + " -> " + report_;
  }
  std::string primary_output() const override { return report_; }

 private:
  std::string model_, data_, report_, trigger_, ebm_, poisoned_, purified_, compare_, divergence_out_;
  int target_ = 0;
  int adv_label_ = -1;
  std::string percentiles_ = "1,5,10,25,50,75,100";
};

class Diagnose final : public Command {
 public:
  explicit Diagnose(CLI::App& parent)
      : Command(parent, "diagnose", "Trajectory distances and Lyapunov exponents of the Langevin map") {
    input("ebm", ebm_, "Energy model checkpoint");
    input("data", data_, "Clean images (PIMG); the first --images records are used");
    input("trigger", trigger_, "Perturbation source for the trajectory curves", false);
    output("traj-out", traj_out_, "Mean distance curves (CSV: step,d_cp,d_cpp,d_ppp)", false);
    output("lyap-out", lyap_out_, "Lyapunov exponents (CSV: eta,lambda)", false);
    setting("images", images_, "Images (trajectories) or chains (Lyapunov) to average over");
    setting("steps", steps_, "Trajectory length");
    setting("record-every", record_every_, "Trajectory sampling interval");
    setting("step-size", step_size_, "Step size dtau");
    setting("noise-scale", noise_, "Trajectory noise scale eta");
    setting("etas", etas_, "Noise scales for the Lyapunov sweep");
    setting("horizon", lcfg_.horizon, "Lyapunov horizon in steps");
    setting("renorm-every", lcfg_.renorm_every, "Renormalization interval");
    setting("d0", lcfg_.d0, "Perturbation size");
    setting("lyap-clamp", lyap_clamp_, "Clamp pixels in the Lyapunov chains");
  }

  std::string execute() override {
    if (traj_out_.empty() && lyap_out_.empty()) throw ConfigError("nothing to do: give --traj-out and/or --lyap-out");
    const auto ebm = load_ebm(ebm_);
    const auto data = load_dataset(data_);
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(images_, 1)), data.size());
    if (n == 0) throw ConfigError("dataset is empty");
    std::string summary = "diagnose:";
    if (!traj_out_.empty()) {
      if (trigger_.empty()) throw ConfigError("--traj-out needs --trigger");
      const auto rho = load_trigger(trigger_);
      const auto cfg = langevin_flags(steps_, step_size_, noise_, true);
      std::vector<TrajectoryRecord> recs;
      for (std::size_t i = 0; i < n; ++i) {
        const auto delta = subtract(apply_trigger(data.images[i], rho), data.images[i]);
        recs.push_back(trajectory_distances(data.images[i], delta, *ebm.energy, cfg, record_every_, seed_, i));
      }
      const auto mean = mean_trajectory(recs);
      std::string csv = "step,d_cp,d_cpp,d_ppp\n";
      for (std::size_t k = 0; k < mean.steps.size(); ++k) {
        csv += std::to_string(mean.steps[k]) + ',' + num(mean.d_clean_pure[k]) + ',' +
               num(mean.d_clean_poisonpure[k]) + ',' + num(mean.d_poison_poisonpure[k]) + '\n';
      }
      write_text_atomic(traj_out_, csv);
      summary += mean.crossover ? " crossover at step " + std::to_string(*mean.crossover) : " no crossover";
    }
    if (!lyap_out_.empty()) {
      std::string csv = "eta,lambda\n";
      for (double eta : parse_doubles(etas_, "etas")) {
        LangevinConfig cfg = langevin_flags(0, step_size_, static_cast<float>(eta), lyap_clamp_);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += lyapunov_exponent(*ebm.energy, data.images[i], cfg, lcfg_, seed_, i);
        const double lambda = sum / static_cast<double>(n);
        csv += num(eta) + ',' + num(lambda) + '\n';
        summary += " lambda(" + num(eta) + ")=" + num(lambda);
      }
      write_text_atomic(lyap_out_, csv);
    }
    return summary;
  }
  std::string primary_output() const override { return traj_out_.empty() ? lyap_out_ : traj_out_; }

 private:
  std::string ebm_, data_, trigger_, traj_out_, lyap_out_;
  int images_ = 8;
  int steps_ = 600;
  int record_every_ = 5;
  float step_size_ = 5e-5f;
  float noise_ = 1.0f;
  std::string etas_ = "0.1,0.25,0.5,1,1.5,2";
  LyapunovConfig lcfg_;
  bool lyap_clamp_ = false;
};

// Expands `--config FILE` into flags placed before the command-line ones, so
// explicit flags override the file.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> head{args[0]}, tail;
  std::string config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      tail.push_back(args[i]);
    }
  }
  if (config.empty()) return args;
  const auto bytes = read_file(config);
  KeyValues kv;
  try {
    kv = parse_key_values(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw ConfigError(config + ": " + e.what());
  }
  for (const auto& [k, v] : kv) head.push_back("--" + k + "=" + v);
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"purekit: EBM poison purification at desk scale", "purekit"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(std::make_unique<GenData>(app));
  commands.push_back(std::make_unique<ImportCifar>(app));
  commands.push_back(std::make_unique<TrainEbm>(app));
  commands.push_back(std::make_unique<Poison>(app));
  commands.push_back(std::make_unique<Purify>(app));
  commands.push_back(std::make_unique<TrainClassifier>(app));
  commands.push_back(std::make_unique<Eval>(app));
  commands.push_back(std::make_unique<Diagnose>(app));

  try {
    auto args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kOk;
    }
    err << "purekit: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "purekit: " << e.what() << '\n';
    return kIo;
  } catch (const ConfigError& e) {
    err << "purekit: " << e.what() << '\n';
    return kUsage;
  }

  Command* cmd = nullptr;
  for (const auto& c : commands) {
    if (c->app()->parsed()) cmd = c.get();
  }
  try {
    const std::string summary = cmd->execute();
    const std::string primary = cmd->primary_output();
    if (!primary.empty()) write_text_atomic(primary + ".cfg", cmd->echo());
    out << summary << '\n';
    return kOk;
  } catch (const ConfigError& e) {
    err << "purekit " << cmd->app()->get_name() << ": " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "purekit " << cmd->app()->get_name() << ": " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "purekit " << cmd->app()->get_name() << ": " << e.what() << '\n';
    return kFormat;
  } catch (const ShapeError& e) {
    err << "purekit " << cmd->app()->get_name() << ": " << e.what() << '\n';
    return kShape;
  } catch (const NumericError& e) {
    err << "purekit " << cmd->app()->get_name() << ": " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    err << "purekit " << cmd->app()->get_name() << ": internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace purekit::cli
